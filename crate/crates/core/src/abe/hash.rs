use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use blstrs::{Compress, G2Affine, G2Projective, Gt};
use group::Curve;
use sha2::{Digest, Sha256};

use crate::policy::AttributeId;

const ATTRIBUTE_DST: &[u8] = b"CAKE-ABE-V01-BLS12381G2_XMD:SHA-256_SSWU_RO_ATTR";
const KDF_LABEL: &[u8] = b"cake/abe/payload-key/v1";
const CACHE_LIMIT: usize = 4096;

/// Maps an attribute to G2 by hashing its decimal string.
///
/// Results are memoised in a bounded process-wide table; attribute universes
/// are small and every encryption and key issuance hashes each of its attributes.
pub(crate) fn attribute_point(id: AttributeId) -> G2Affine {
    static CACHE: OnceLock<Mutex<HashMap<AttributeId, G2Affine>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(p) = cache.lock().unwrap().get(&id) {
        return *p;
    }
    let point = G2Projective::hash_to_curve(id.0.to_string().as_bytes(), ATTRIBUTE_DST, &[]).to_affine();
    let mut guard = cache.lock().unwrap();
    if guard.len() >= CACHE_LIMIT {
        guard.clear();
    }
    guard.insert(id, point);
    point
}

pub(crate) fn gt_bytes(element: &Gt) -> Vec<u8> {
    let mut raw = Vec::with_capacity(288);
    element.write_compressed(&mut raw).expect("writing into a Vec cannot fail");
    raw
}

/// Symmetric payload key derived from the encoded master public key and the
/// encapsulated target-group element.
pub(crate) fn payload_key(mpk: &[u8], element: &Gt) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(KDF_LABEL);
    h.update((mpk.len() as u32).to_be_bytes());
    h.update(mpk);
    h.update(gt_bytes(element));
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use group::prime::PrimeCurveAffine;

    #[test]
    fn attribute_points_are_deterministic_and_distinct() {
        let a = attribute_point(AttributeId(16));
        assert_eq!(a, attribute_point(AttributeId(16)));
        assert_ne!(a, attribute_point(AttributeId(3)));
        assert!(!bool::from(a.is_identity()));
        assert!(bool::from(a.is_torsion_free()));
    }
}
