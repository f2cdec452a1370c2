//! Ciphertext-policy attribute-based encryption over BLS12-381.
//!
//! This is the threshold access-tree construction: the encryptor shares a
//! random exponent `s` down the lowered policy with one polynomial of degree
//! `k - 1` per `k`-of-`n` gate, and a key holder recombines the shares of the
//! leaves it owns by Lagrange interpolation at zero.
//!
//! With generators `g1`, `g2`, master secrets `alpha`, `beta` and the attribute
//! hash `H: u64 -> G2`:
//!
//! ```text
//! mpk = (g1, g2, h = g1^beta, Y = e(g1, g2)^alpha)      mk = (beta, g2^alpha)
//! sk  = D = g2^((alpha + r) / beta),
//!       for each attribute j: D_j = g2^r * H(j)^r_j,  D'_j = g1^r_j
//! ct  = C~ = K * Y^s,  C = h^s,
//!       for each leaf y:     C_y = g1^q_y(0),         C'_y = H(attr(y))^q_y(0)
//! ```
//!
//! `K` is a random target-group element; the slice payload is sealed with
//! ChaCha20-Poly1305 under `SHA-256(label || mpk || K)` and the ciphertext header as
//! associated data. Decryption evaluates
//! `e(C, D) * prod e(C_y, D_j)^-coef * e(D'_j, C'_y)^coef = Y^s` as a single
//! multi-pairing.
//!
//! # Binary layouts
//!
//! See [`crate::codec`] for field encoding. Objects are:
//!
//! * master public key: `"CKP1" g1 g2 h Y`
//! * master key: `"CKM1" beta g2^alpha`
//! * secret key: `"CKS1" D u32:n { u64:attr D_j D'_j }*n` (attributes ascending)
//! * ciphertext: `"CKC1" tree C C~ u32:n { C_y C'_y }*n bytes:nonce bytes:payload`
//!
//! A tree is `0x00 u64:attr` for a leaf or `0x01 u32:k u32:n child*n` for a gate.

mod hash;

use std::collections::BTreeMap;
use std::sync::OnceLock;

use blstrs::{Bls12, Compress, G1Affine, G1Projective, G2Affine, G2Prepared, G2Projective, Gt, Scalar as Fr};
use ff::Field;
use group::prime::PrimeCurveAffine;
use group::{Curve, Group};
use pairing::{MillerLoopResult, MultiMillerLoop};
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::ChaCha20Poly1305;
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::policy::{lower_to_tree, AccessTree, AttributeId, AttributeSet, PolicyExpr};

use hash::{attribute_point, gt_bytes, payload_key};

/// Curve identifier recorded alongside ciphertexts.
pub const CURVE_ID: &str = "BLS12-381";
/// Version of the binary layouts above.
pub const FORMAT_VERSION: u32 = 1;

const MAX_TREE_DEPTH: usize = 64;
const NONCE_LEN: usize = 12;

#[derive(Debug, Error)]
pub enum AbeError {
    /// The key does not satisfy the policy, belongs to another master pair, or the ciphertext was altered.
    #[error("access denied")]
    AccessDenied,
    #[error("malformed encoding: {0}")]
    Malformed(#[from] CodecError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MasterPublicKey {
    g1: G1Affine,
    g2: G2Affine,
    h: G1Affine,
    y: Gt,
}

#[derive(Clone, PartialEq, Eq)]
pub struct MasterKey {
    beta: Fr,
    g2_alpha: G2Affine,
}

impl std::fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("MasterKey(..)")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbeMasterPair {
    pub mpk: MasterPublicKey,
    pub mk: MasterKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct AttributeKey {
    d: G2Affine,
    d_prime: G1Affine,
}

struct PreparedKey {
    d: G2Prepared,
    attributes: BTreeMap<AttributeId, G2Prepared>,
}

/// A reader's attribute-bound decryption key for one master pair.
pub struct AbeSecretKey {
    d: G2Affine,
    attributes: BTreeMap<AttributeId, AttributeKey>,
    prepared: OnceLock<PreparedKey>,
}

impl Clone for AbeSecretKey {
    fn clone(&self) -> Self {
        Self { d: self.d, attributes: self.attributes.clone(), prepared: OnceLock::new() }
    }
}

impl PartialEq for AbeSecretKey {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d && self.attributes == other.attributes
    }
}

impl Eq for AbeSecretKey {}

impl std::fmt::Debug for AbeSecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AbeSecretKey").field("attributes", &self.attributes.keys().collect::<Vec<_>>()).finish()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
struct LeafShare {
    c: G1Affine,
    c_prime: G2Affine,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AbeCiphertext {
    tree: AccessTree,
    c: G1Affine,
    c_tilde: Gt,
    leaves: Vec<LeafShare>,
    nonce: [u8; NONCE_LEN],
    payload: Vec<u8>,
}

/// Generates a fresh master pair.
pub fn setup<R: RngCore + CryptoRng>(rng: &mut R) -> AbeMasterPair {
    let g1 = (G1Projective::generator() * nonzero_scalar(rng)).to_affine();
    let g2 = (G2Projective::generator() * nonzero_scalar(rng)).to_affine();
    let alpha = Fr::random(&mut *rng);
    let beta = nonzero_scalar(rng);
    let mpk = MasterPublicKey {
        g1,
        g2,
        h: (G1Projective::from(g1) * beta).to_affine(),
        y: blstrs::pairing(&g1, &g2) * alpha,
    };
    let mk = MasterKey { beta, g2_alpha: (G2Projective::from(g2) * alpha).to_affine() };
    AbeMasterPair { mpk, mk }
}

/// Issues a key for `attrs` under `pair`. Keys are randomised: two calls give different keys.
///
/// A key for the empty set is valid but satisfies no monotone policy.
pub fn keygen<R: RngCore + CryptoRng>(pair: &AbeMasterPair, attrs: &AttributeSet, rng: &mut R) -> AbeSecretKey {
    let AbeMasterPair { mpk, mk } = pair;
    let r = Fr::random(&mut *rng);
    let g2_r = G2Projective::from(mpk.g2) * r;
    let beta_inv = Option::<Fr>::from(mk.beta.invert()).expect("beta is nonzero");
    let d = ((g2_r + mk.g2_alpha) * beta_inv).to_affine();

    let mut d_proj = Vec::with_capacity(attrs.len());
    let mut d_prime_proj = Vec::with_capacity(attrs.len());
    for id in attrs {
        let r_j = Fr::random(&mut *rng);
        d_proj.push(g2_r + G2Projective::from(attribute_point(*id)) * r_j);
        d_prime_proj.push(G1Projective::from(mpk.g1) * r_j);
    }
    let d_aff = normalize_g2(&d_proj);
    let d_prime_aff = normalize_g1(&d_prime_proj);
    let attributes = attrs
        .iter()
        .zip(d_aff.into_iter().zip(d_prime_aff))
        .map(|(id, (d, d_prime))| (*id, AttributeKey { d, d_prime }))
        .collect();
    AbeSecretKey { d, attributes, prepared: OnceLock::new() }
}

/// Encrypts `plaintext` so that only keys satisfying `policy` can recover it.
pub fn encrypt<R: RngCore + CryptoRng>(
    mpk: &MasterPublicKey,
    policy: &PolicyExpr,
    plaintext: &[u8],
    rng: &mut R,
) -> AbeCiphertext {
    let tree = lower_to_tree(policy);
    let s = Fr::random(&mut *rng);

    let mut shares = Vec::with_capacity(tree.leaf_count());
    share_secret(&tree, s, rng, &mut shares);

    let mut c_proj = Vec::with_capacity(shares.len());
    let mut c_prime_proj = Vec::with_capacity(shares.len());
    for (id, q) in &shares {
        c_proj.push(G1Projective::from(mpk.g1) * q);
        c_prime_proj.push(G2Projective::from(attribute_point(*id)) * q);
    }
    let leaves = normalize_g1(&c_proj)
        .into_iter()
        .zip(normalize_g2(&c_prime_proj))
        .map(|(c, c_prime)| LeafShare { c, c_prime })
        .collect();

    let session = Gt::random(&mut *rng);
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);

    let mut ct = AbeCiphertext {
        tree,
        c: (G1Projective::from(mpk.h) * s).to_affine(),
        c_tilde: session + mpk.y * s,
        leaves,
        nonce,
        payload: Vec::new(),
    };
    let aad = ct.header_bytes();
    let cipher = ChaCha20Poly1305::new(&payload_key(&mpk.to_bytes(), &session).into());
    ct.payload = cipher
        .encrypt(&nonce.into(), Payload { msg: plaintext, aad: &aad })
        .expect("payload within AEAD limits");
    ct
}

/// Recovers the plaintext, or [`AbeError::AccessDenied`] without saying why.
pub fn decrypt(mpk: &MasterPublicKey, sk: &AbeSecretKey, ct: &AbeCiphertext) -> Result<Vec<u8>, AbeError> {
    if ct.leaves.len() != ct.tree.leaf_count() || !ct.tree.is_well_formed() {
        return Err(AbeError::AccessDenied);
    }
    let mut offset = 0;
    let plan = plan(&ct.tree, &mut offset, &|id| sk.attributes.contains_key(&id)).ok_or(AbeError::AccessDenied)?;

    let prepared = sk.prepared();
    let leaf_ids = ct.tree.leaves();
    let mut g1_side: Vec<G1Projective> = Vec::with_capacity(1 + 2 * plan.len());
    let mut share_side: Vec<G2Prepared> = Vec::with_capacity(plan.len());
    let mut key_side: Vec<&G2Prepared> = Vec::with_capacity(plan.len());
    g1_side.push(ct.c.into());
    for (index, coef) in plan {
        let id = leaf_ids[index];
        let share = &ct.leaves[index];
        let key = &sk.attributes[&id];
        let (c, d_prime) = if coef == Fr::ONE {
            (G1Projective::from(share.c), G1Projective::from(key.d_prime))
        } else {
            (G1Projective::from(share.c) * coef, G1Projective::from(key.d_prime) * coef)
        };
        g1_side.push(-c);
        g1_side.push(d_prime);
        key_side.push(&prepared.attributes[&id]);
        share_side.push(share.c_prime.into());
    }
    let g1_side = normalize_g1(&g1_side);
    let mut terms: Vec<(&G1Affine, &G2Prepared)> = Vec::with_capacity(g1_side.len());
    terms.push((&g1_side[0], &prepared.d));
    for (i, (key, share)) in key_side.into_iter().zip(&share_side).enumerate() {
        terms.push((&g1_side[1 + 2 * i], key));
        terms.push((&g1_side[2 + 2 * i], share));
    }
    let blinding = Bls12::multi_miller_loop(&terms).final_exponentiation();
    let session = ct.c_tilde - blinding;

    let cipher = ChaCha20Poly1305::new(&payload_key(&mpk.to_bytes(), &session).into());
    cipher
        .decrypt(&ct.nonce.into(), Payload { msg: &ct.payload, aad: &ct.header_bytes() })
        .map_err(|_| AbeError::AccessDenied)
}

fn nonzero_scalar<R: RngCore + CryptoRng>(rng: &mut R) -> Fr {
    loop {
        let v = Fr::random(&mut *rng);
        if !bool::from(v.is_zero()) {
            return v;
        }
    }
}

fn normalize_g1(points: &[G1Projective]) -> Vec<G1Affine> {
    let mut out = vec![G1Affine::identity(); points.len()];
    G1Projective::batch_normalize(points, &mut out);
    out
}

fn normalize_g2(points: &[G2Projective]) -> Vec<G2Affine> {
    let mut out = vec![G2Affine::identity(); points.len()];
    G2Projective::batch_normalize(points, &mut out);
    out
}

/// Shares `secret` down the tree, appending `(attribute, share)` for each leaf in order.
fn share_secret<R: RngCore + CryptoRng>(
    node: &AccessTree,
    secret: Fr,
    rng: &mut R,
    out: &mut Vec<(AttributeId, Fr)>,
) {
    match node {
        AccessTree::Leaf(id) => out.push((*id, secret)),
        AccessTree::Gate { threshold, children } => {
            let mut coeffs = Vec::with_capacity(*threshold);
            coeffs.push(secret);
            coeffs.extend((1..*threshold).map(|_| Fr::random(&mut *rng)));
            for (i, child) in children.iter().enumerate() {
                let x = Fr::from(i as u64 + 1);
                let share = coeffs.iter().rev().fold(Fr::ZERO, |acc, c| acc * x + c);
                share_secret(child, share, rng, out);
            }
        }
    }
}

/// Chooses which leaves to combine and their Lagrange weights.
///
/// Returns `(leaf index, coefficient)` pairs, preferring the cheapest
/// satisfying children at each gate, or `None` if the tree is unsatisfied.
fn plan(node: &AccessTree, offset: &mut usize, has: &dyn Fn(AttributeId) -> bool) -> Option<Vec<(usize, Fr)>> {
    match node {
        AccessTree::Leaf(id) => {
            let index = *offset;
            *offset += 1;
            has(*id).then(|| vec![(index, Fr::ONE)])
        }
        AccessTree::Gate { threshold, children } => {
            let mut candidates: Vec<(u64, Vec<(usize, Fr)>)> = Vec::new();
            for (i, child) in children.iter().enumerate() {
                if let Some(p) = plan(child, offset, has) {
                    candidates.push((i as u64 + 1, p));
                }
            }
            if candidates.len() < *threshold {
                return None;
            }
            candidates.sort_by_key(|(_, p)| p.len());
            candidates.truncate(*threshold);
            let xs: Vec<u64> = candidates.iter().map(|(x, _)| *x).collect();
            let mut out = Vec::new();
            for (x, leaves) in candidates {
                let weight = lagrange_at_zero(x, &xs);
                out.extend(leaves.into_iter().map(|(idx, c)| (idx, c * weight)));
            }
            Some(out)
        }
    }
}

/// Lagrange basis polynomial for `x` over the points `xs`, evaluated at zero.
fn lagrange_at_zero(x: u64, xs: &[u64]) -> Fr {
    let mut num = Fr::ONE;
    let mut den = Fr::ONE;
    let xi = Fr::from(x);
    for &other in xs.iter().filter(|&&o| o != x) {
        let xj = Fr::from(other);
        num *= xj;
        den *= xj - xi;
    }
    num * Option::<Fr>::from(den.invert()).expect("distinct interpolation points")
}

impl AbeSecretKey {
    pub fn attributes(&self) -> AttributeSet {
        self.attributes.keys().copied().collect()
    }

    fn prepared(&self) -> &PreparedKey {
        self.prepared.get_or_init(|| PreparedKey {
            d: self.d.into(),
            attributes: self.attributes.iter().map(|(id, k)| (*id, k.d.into())).collect(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.tag(b"CKS1").element(&self.d).u32(self.attributes.len() as u32);
        for (id, k) in &self.attributes {
            w.u64(id.0).element(&k.d).element(&k.d_prime);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AbeError> {
        let mut r = Reader::new(bytes);
        r.expect_tag(b"CKS1", "secret key")?;
        let d = r.element()?;
        let n = r.u32()? as usize;
        let mut attributes = BTreeMap::new();
        for _ in 0..n {
            let id = AttributeId(r.u64()?);
            let key = AttributeKey { d: r.element()?, d_prime: r.element()? };
            if attributes.insert(id, key).is_some() {
                return Err(CodecError::Invalid("duplicate attribute in key").into());
            }
        }
        r.finish()?;
        Ok(Self { d, attributes, prepared: OnceLock::new() })
    }
}

impl MasterPublicKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new().tag(b"CKP1").element(&self.g1).element(&self.g2).element(&self.h).element(&self.y).finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AbeError> {
        let mut r = Reader::new(bytes);
        r.expect_tag(b"CKP1", "master public key")?;
        let mpk = Self { g1: r.element()?, g2: r.element()?, h: r.element()?, y: r.element()? };
        r.finish()?;
        Ok(mpk)
    }
}

impl MasterKey {
    pub fn to_bytes(&self) -> Vec<u8> {
        Writer::new().tag(b"CKM1").element(&self.beta).element(&self.g2_alpha).finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AbeError> {
        let mut r = Reader::new(bytes);
        r.expect_tag(b"CKM1", "master key")?;
        let mk = Self { beta: r.element()?, g2_alpha: r.element()? };
        r.finish()?;
        if bool::from(mk.beta.is_zero()) {
            return Err(CodecError::Invalid("zero master scalar").into());
        }
        Ok(mk)
    }
}

impl AbeCiphertext {
    pub fn tree(&self) -> &AccessTree {
        &self.tree
    }

    fn write_header(&self, w: &mut Writer) {
        w.tag(b"CKC1");
        write_tree(w, &self.tree);
        w.element(&self.c).element(&self.c_tilde).u32(self.leaves.len() as u32);
        for leaf in &self.leaves {
            w.element(&leaf.c).element(&leaf.c_prime);
        }
    }

    fn header_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write_header(&mut w);
        w.finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.write_header(&mut w);
        w.bytes(&self.nonce).bytes(&self.payload);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AbeError> {
        let mut r = Reader::new(bytes);
        r.expect_tag(b"CKC1", "ciphertext")?;
        let tree = read_tree(&mut r, 0)?;
        let c = r.element()?;
        let c_tilde = r.element()?;
        let n = r.u32()? as usize;
        if n != tree.leaf_count() {
            return Err(CodecError::Invalid("leaf share count does not match tree").into());
        }
        let mut leaves = Vec::with_capacity(n.min(r.remaining()));
        for _ in 0..n {
            leaves.push(LeafShare { c: r.element()?, c_prime: r.element()? });
        }
        let nonce = r.bytes()?.try_into().map_err(|_| CodecError::Invalid("nonce length"))?;
        let payload = r.bytes()?.to_vec();
        r.finish()?;
        Ok(Self { tree, c, c_tilde, leaves, nonce, payload })
    }
}

/// Compressed encodings of the group and scalar types used in the layouts above.
trait Element: Sized {
    fn encode(&self) -> Vec<u8>;
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError>;
}

fn checked<T>(v: impl Into<Option<T>>) -> Result<T, CodecError> {
    v.into().ok_or(CodecError::BadElement)
}

impl Element for G1Affine {
    fn encode(&self) -> Vec<u8> {
        self.to_compressed().to_vec()
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        checked(G1Affine::from_compressed(&r.array::<48>()?))
    }
}

impl Element for G2Affine {
    fn encode(&self) -> Vec<u8> {
        self.to_compressed().to_vec()
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        checked(G2Affine::from_compressed(&r.array::<96>()?))
    }
}

impl Element for Gt {
    fn encode(&self) -> Vec<u8> {
        gt_bytes(self)
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Gt::read_compressed(r.bytes()?).map_err(|_| CodecError::BadElement)
    }
}

impl Element for Fr {
    fn encode(&self) -> Vec<u8> {
        self.to_bytes_le().to_vec()
    }
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        checked(Fr::from_bytes_le(&r.array::<32>()?))
    }
}

trait ElementIo {
    fn element<T: Element>(&mut self, v: &T) -> &mut Self;
}

impl ElementIo for Writer {
    fn element<T: Element>(&mut self, v: &T) -> &mut Self {
        self.bytes(&v.encode())
    }
}

impl Reader<'_> {
    fn element<T: Element>(&mut self) -> Result<T, CodecError> {
        T::decode(self)
    }
}

fn write_tree(w: &mut Writer, node: &AccessTree) {
    match node {
        AccessTree::Leaf(id) => {
            w.u8(0).u64(id.0);
        }
        AccessTree::Gate { threshold, children } => {
            w.u8(1).u32(*threshold as u32).u32(children.len() as u32);
            children.iter().for_each(|c| write_tree(w, c));
        }
    }
}

fn read_tree(r: &mut Reader<'_>, depth: usize) -> Result<AccessTree, CodecError> {
    if depth > MAX_TREE_DEPTH {
        return Err(CodecError::Invalid("access tree too deep"));
    }
    match r.u8()? {
        0 => Ok(AccessTree::Leaf(AttributeId(r.u64()?))),
        1 => {
            let threshold = r.u32()? as usize;
            let n = r.u32()? as usize;
            if n == 0 || threshold == 0 || threshold > n || n > r.remaining() {
                return Err(CodecError::Invalid("bad gate"));
            }
            let children = (0..n).map(|_| read_tree(r, depth + 1)).collect::<Result<_, _>>()?;
            Ok(AccessTree::Gate { threshold, children })
        }
        _ => Err(CodecError::Invalid("unknown tree node")),
    }
}
