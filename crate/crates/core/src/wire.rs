//! Framed JSON requests over a Noise-encrypted TCP channel.
//!
//! Each connection runs a `Noise_NK_25519_ChaChaPoly_SHA256` handshake: the
//! client must already know the service's static key, so the service is
//! authenticated by the channel and the caller by the signed challenge inside
//! each request. Every Noise message travels as `u16 length || bytes`. An
//! application frame is one Noise message holding a `u32` plaintext length,
//! followed by as many chunk messages as that length needs.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use snow::{Builder, TransportState};

use crate::auth::{AuthProof, Challenge};
use crate::codec::b64;
use crate::sdm::SecureDataManager;
use crate::service::{AccessResponse, DataManager, ErrorKind, KeyManager, KeyResponse, ServiceError, SliceRequest};
use crate::skm::SecureKeyManager;

const NOISE_PARAMS: &str = "Noise_NK_25519_ChaChaPoly_SHA256";
const MAX_NOISE_MSG: usize = 65535;
const TAG_LEN: usize = 16;
const MAX_CHUNK: usize = MAX_NOISE_MSG - TAG_LEN;
/// Upper bound on one request or response.
pub const MAX_FRAME: usize = 64 << 20;
const IO_TIMEOUT: Duration = Duration::from_secs(120);

fn builder() -> Builder<'static> {
    Builder::new(NOISE_PARAMS.parse().expect("valid Noise parameters"))
}

fn noise_err(e: snow::Error) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

/// A service's static Curve25519 key pair.
#[derive(Clone, Serialize, Deserialize)]
pub struct NoiseKeys {
    #[serde(with = "hex::serde")]
    pub private: Vec<u8>,
    #[serde(with = "hex::serde")]
    pub public: Vec<u8>,
}

impl std::fmt::Debug for NoiseKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "NoiseKeys(public={})", hex::encode(&self.public))
    }
}

impl NoiseKeys {
    pub fn generate() -> Self {
        let kp = builder().generate_keypair().expect("Curve25519 key generation");
        Self { private: kp.private, public: kp.public }
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        serde_json::from_slice(&std::fs::read(path)?).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self).expect("keys serialise"))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    Challenge,
    Cipher {
        proof: AuthProof,
        slices: Vec<SliceRequest>,
    },
    Key {
        proof: AuthProof,
        message_id: u64,
    },
    Access {
        proof: AuthProof,
        message_id: u64,
        #[serde(with = "b64")]
        sk: Vec<u8>,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Response {
    Challenge(Challenge),
    MessageId { message_id: u64 },
    Key(KeyResponse),
    Access(AccessResponse),
    Error { kind: ErrorKind, message: String },
}

impl From<ServiceError> for Response {
    fn from(e: ServiceError) -> Self {
        Response::Error { kind: e.kind(), message: e.to_string() }
    }
}

fn unsupported(op: &str) -> Response {
    Response::Error { kind: ErrorKind::Invalid, message: format!("{op} is not served here") }
}

/// Something that answers decoded requests.
pub trait Handler: Send + Sync + 'static {
    fn handle(&self, request: Request) -> Response;
}

impl Handler for SecureDataManager {
    fn handle(&self, request: Request) -> Response {
        match request {
            Request::Challenge => DataManager::challenge(self).map_or_else(Into::into, Response::Challenge),
            Request::Cipher { proof, slices } => match self.handle_cipher_request(&proof, &slices) {
                Ok(message_id) => Response::MessageId { message_id },
                Err(e) => e.into(),
            },
            Request::Key { .. } => unsupported("key"),
            Request::Access { .. } => unsupported("access"),
        }
    }
}

impl Handler for SecureKeyManager {
    fn handle(&self, request: Request) -> Response {
        match request {
            Request::Challenge => KeyManager::challenge(self).map_or_else(Into::into, Response::Challenge),
            Request::Key { proof, message_id } => self.handle_key_request(&proof, message_id).map_or_else(Into::into, Response::Key),
            Request::Access { proof, message_id, sk } => {
                self.handle_access_request(&proof, message_id, &sk).map_or_else(Into::into, Response::Access)
            }
            Request::Cipher { .. } => unsupported("cipher"),
        }
    }
}

fn write_noise(stream: &mut TcpStream, msg: &[u8]) -> io::Result<()> {
    let len = u16::try_from(msg.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "noise message too long"))?;
    stream.write_all(&len.to_be_bytes())?;
    stream.write_all(msg)
}

fn read_noise(stream: &mut TcpStream) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 2];
    stream.read_exact(&mut len)?;
    let mut msg = vec![0u8; u16::from_be_bytes(len) as usize];
    stream.read_exact(&mut msg)?;
    Ok(msg)
}

/// An established, encrypted connection.
pub struct Channel {
    stream: TcpStream,
    transport: TransportState,
    buf: Vec<u8>,
}

impl Channel {
    /// Client side: connect and authenticate the server's static key.
    pub fn connect(addr: impl ToSocketAddrs, server_public: &[u8]) -> io::Result<Self> {
        let mut stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(IO_TIMEOUT))?;
        stream.set_nodelay(true)?;
        let mut hs = builder().remote_public_key(server_public).build_initiator().map_err(noise_err)?;
        let mut buf = vec![0u8; MAX_NOISE_MSG];
        let n = hs.write_message(&[], &mut buf).map_err(noise_err)?;
        write_noise(&mut stream, &buf[..n])?;
        let reply = read_noise(&mut stream)?;
        hs.read_message(&reply, &mut buf).map_err(noise_err)?;
        let transport = hs.into_transport_mode().map_err(noise_err)?;
        Ok(Self { stream, transport, buf })
    }

    /// Server side: complete the handshake on an accepted stream.
    pub fn accept(mut stream: TcpStream, keys: &NoiseKeys) -> io::Result<Self> {
        stream.set_read_timeout(Some(IO_TIMEOUT))?;
        stream.set_nodelay(true)?;
        let mut hs = builder().local_private_key(&keys.private).build_responder().map_err(noise_err)?;
        let mut buf = vec![0u8; MAX_NOISE_MSG];
        let hello = read_noise(&mut stream)?;
        hs.read_message(&hello, &mut buf).map_err(noise_err)?;
        let n = hs.write_message(&[], &mut buf).map_err(noise_err)?;
        write_noise(&mut stream, &buf[..n])?;
        let transport = hs.into_transport_mode().map_err(noise_err)?;
        Ok(Self { stream, transport, buf })
    }

    fn send_noise(&mut self, plain: &[u8]) -> io::Result<()> {
        let n = self.transport.write_message(plain, &mut self.buf).map_err(noise_err)?;
        write_noise(&mut self.stream, &self.buf[..n])
    }

    fn recv_noise(&mut self) -> io::Result<Vec<u8>> {
        let msg = read_noise(&mut self.stream)?;
        let n = self.transport.read_message(&msg, &mut self.buf).map_err(noise_err)?;
        Ok(self.buf[..n].to_vec())
    }

    pub fn send(&mut self, frame: &[u8]) -> io::Result<()> {
        if frame.len() > MAX_FRAME {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame too large"));
        }
        self.send_noise(&(frame.len() as u32).to_be_bytes())?;
        for chunk in frame.chunks(MAX_CHUNK) {
            self.send_noise(chunk)?;
        }
        self.stream.flush()
    }

    /// Next frame, or `None` on a clean close between frames.
    pub fn recv(&mut self) -> io::Result<Option<Vec<u8>>> {
        let header = match self.recv_noise() {
            Ok(h) => h,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e),
        };
        let len = <[u8; 4]>::try_from(header.as_slice())
            .map(u32::from_be_bytes)
            .map_err(|_| io::Error::new(io::ErrorKind::InvalidData, "bad frame header"))? as usize;
        if len > MAX_FRAME {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
        }
        let mut frame = Vec::with_capacity(len);
        while frame.len() < len {
            let chunk = self.recv_noise()?;
            if chunk.is_empty() || frame.len() + chunk.len() > len {
                return Err(io::Error::new(io::ErrorKind::InvalidData, "bad frame chunk"));
            }
            frame.extend_from_slice(&chunk);
        }
        Ok(Some(frame))
    }
}

/// A running TCP service. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<HashMap<u64, TcpStream>>>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and cuts every open connection, as if the process died.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    /// Blocks until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        for (_, c) in self.connections.lock().unwrap().drain() {
            let _ = c.shutdown(Shutdown::Both);
        }
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.acceptor.is_some() {
            self.stop_now();
        }
    }
}

/// Serves `handler` on `listener`, one thread per connection.
pub fn serve(listener: TcpListener, keys: NoiseKeys, handler: Arc<dyn Handler>) -> io::Result<ServerHandle> {
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    // Clones of live streams so shutdown can cut them. Each connection
    // removes its own entry when it ends, otherwise the clone would keep the
    // socket open after the handler gave up on it.
    let connections: Arc<Mutex<HashMap<u64, TcpStream>>> = Arc::default();
    let acceptor = {
        let (stop, connections) = (stop.clone(), connections.clone());
        std::thread::spawn(move || {
            for (id, stream) in (0u64..).zip(listener.incoming()) {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                if let Ok(clone) = stream.try_clone() {
                    connections.lock().unwrap().insert(id, clone);
                }
                let (keys, handler, connections) = (keys.clone(), handler.clone(), connections.clone());
                std::thread::spawn(move || {
                    let _ = handle_connection(stream, &keys, handler.as_ref());
                    connections.lock().unwrap().remove(&id);
                });
            }
        })
    };
    Ok(ServerHandle { addr, stop, connections, acceptor: Some(acceptor) })
}

fn handle_connection(stream: TcpStream, keys: &NoiseKeys, handler: &dyn Handler) -> io::Result<()> {
    let mut channel = Channel::accept(stream, keys)?;
    while let Some(frame) = channel.recv()? {
        let response = match serde_json::from_slice::<Request>(&frame) {
            Ok(request) => handler.handle(request),
            Err(e) => Response::Error { kind: ErrorKind::Invalid, message: format!("malformed request: {e}") },
        };
        channel.send(&serde_json::to_vec(&response).expect("responses serialise"))?;
    }
    Ok(())
}

/// Client for a remote data or key manager. Each call uses a fresh connection.
#[derive(Clone, Debug)]
pub struct RemoteService {
    addr: SocketAddr,
    server_public: Vec<u8>,
}

impl RemoteService {
    pub fn new(addr: SocketAddr, server_public: Vec<u8>) -> Self {
        Self { addr, server_public }
    }

    pub fn call(&self, request: &Request) -> Result<Response, ServiceError> {
        let transport = |e: io::Error| ServiceError::Transport(format!("{}: {e}", self.addr));
        let mut channel = Channel::connect(self.addr, &self.server_public).map_err(transport)?;
        channel.send(&serde_json::to_vec(request).expect("requests serialise")).map_err(transport)?;
        let frame = channel
            .recv()
            .map_err(transport)?
            .ok_or_else(|| ServiceError::Transport(format!("{}: connection closed", self.addr)))?;
        match serde_json::from_slice(&frame) {
            Ok(Response::Error { kind, message }) => Err(ServiceError::Remote { kind, message }),
            Ok(r) => Ok(r),
            Err(e) => Err(ServiceError::Transport(format!("malformed response: {e}"))),
        }
    }

    fn challenge(&self) -> Result<Challenge, ServiceError> {
        match self.call(&Request::Challenge)? {
            Response::Challenge(c) => Ok(c),
            other => Err(unexpected(other)),
        }
    }
}

fn unexpected(r: Response) -> ServiceError {
    ServiceError::Transport(format!("unexpected response {r:?}"))
}

impl DataManager for RemoteService {
    fn challenge(&self) -> Result<Challenge, ServiceError> {
        RemoteService::challenge(self)
    }

    fn cipher(&self, proof: &AuthProof, slices: &[SliceRequest]) -> Result<u64, ServiceError> {
        match self.call(&Request::Cipher { proof: proof.clone(), slices: slices.to_vec() })? {
            Response::MessageId { message_id } => Ok(message_id),
            other => Err(unexpected(other)),
        }
    }
}

impl KeyManager for RemoteService {
    fn challenge(&self) -> Result<Challenge, ServiceError> {
        RemoteService::challenge(self)
    }

    fn key(&self, proof: &AuthProof, message_id: u64) -> Result<KeyResponse, ServiceError> {
        match self.call(&Request::Key { proof: proof.clone(), message_id })? {
            Response::Key(k) => Ok(k),
            other => Err(unexpected(other)),
        }
    }

    fn access(&self, proof: &AuthProof, message_id: u64, sk: &[u8]) -> Result<AccessResponse, ServiceError> {
        match self.call(&Request::Access { proof: proof.clone(), message_id, sk: sk.to_vec() })? {
            Response::Access(a) => Ok(a),
            other => Err(unexpected(other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auth::Nonce;
    use crate::pkcrypto::AccountAddress;

    struct Echo;

    impl Handler for Echo {
        fn handle(&self, request: Request) -> Response {
            match request {
                Request::Challenge => Response::Challenge(Challenge { nonce: Nonce([1; 32]), audience: AccountAddress([2; 20]) }),
                Request::Access { sk, .. } => {
                    Response::Error { kind: ErrorKind::Denied, message: format!("{} bytes", sk.len()) }
                }
                _ => Response::MessageId { message_id: 42 },
            }
        }
    }

    fn start() -> (ServerHandle, NoiseKeys) {
        let keys = NoiseKeys::generate();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        (serve(listener, keys.clone(), Arc::new(Echo)).unwrap(), keys)
    }

    #[test]
    fn request_json_is_tagged_by_op() {
        let json = serde_json::to_string(&Request::Challenge).unwrap();
        assert_eq!(json, r#"{"op":"challenge"}"#);
        let r = Response::Error { kind: ErrorKind::Auth, message: "no".into() };
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"status":"error","kind":"auth","message":"no"}"#);
    }

    #[test]
    fn roundtrip_over_noise_including_multi_chunk_frames() {
        let (server, keys) = start();
        let client = RemoteService::new(server.local_addr(), keys.public.clone());
        assert_eq!(RemoteService::challenge(&client).unwrap().nonce, Nonce([1; 32]));
        let big = vec![7u8; 3 * MAX_CHUNK + 5];
        let request = Request::Access { proof: dummy_proof(), message_id: 1, sk: big.clone() };
        match client.call(&request) {
            Err(ServiceError::Remote { kind: ErrorKind::Denied, message }) => assert_eq!(message, format!("{} bytes", big.len())),
            other => panic!("unexpected {other:?}"),
        }
        server.shutdown();
    }

    fn dummy_proof() -> AuthProof {
        use rand::SeedableRng;
        let keys = crate::pkcrypto::KeyPair::generate_with_bits(&mut rand_chacha::ChaCha20Rng::seed_from_u64(1), 512);
        AuthProof::sign(&keys, &AccountAddress([0; 20]), Nonce([0; 32]))
    }

    #[test]
    fn wrong_server_key_fails_the_handshake() {
        let (server, _) = start();
        let impostor = NoiseKeys::generate();
        let client = RemoteService::new(server.local_addr(), impostor.public);
        assert!(matches!(RemoteService::challenge(&client), Err(ServiceError::Transport(_))));
    }

    #[test]
    fn shutdown_refuses_further_connections() {
        let (server, keys) = start();
        let addr = server.local_addr();
        server.shutdown();
        let client = RemoteService::new(addr, keys.public);
        assert!(RemoteService::challenge(&client).is_err());
    }
}
