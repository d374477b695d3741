//! Ed25519 signatures, SHA-256 digests and the canonical byte encoding used
//! for everything that gets signed or hashed.

mod codec;

use std::fmt;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use codec::{decode_list, encode_list, CanonicalRecord, CodecError, TlvWriter};

pub const SEED_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("keypair seed must be {SEED_LEN} bytes, got {0}")]
    InvalidSeed(usize),
    #[error("malformed hex: {0}")]
    Hex(String),
}

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash32(pub [u8; 32]);

impl Hash32 {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, CryptoError> {
        let bytes = hex::decode(s).map_err(|e| CryptoError::Hex(e.to_string()))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| CryptoError::Hex(format!("expected 32 bytes in {s:?}")))?;
        Ok(Self(arr))
    }

    /// First `n` hex characters, for reports.
    pub fn prefix(&self, n: usize) -> String {
        let mut s = self.to_hex();
        s.truncate(n);
        s
    }
}

impl fmt::Display for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Hash32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash32({})", self.prefix(16))
    }
}

pub fn digest(bytes: &[u8]) -> Hash32 {
    Hash32(Sha256::digest(bytes).into())
}

/// Ed25519 verification key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    /// Digest of the raw key bytes; the identifier directories and
    /// advertisements carry instead of the key.
    pub fn key_hash(&self) -> Hash32 {
        digest(&self.0)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; 64]);

impl Signature {
    pub fn as_bytes(&self) -> &[u8; 64] {
        &self.0
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Self)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}..)", &self.to_hex()[..16])
    }
}

/// Ed25519 keypair. The 32-byte seed is the private key.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn private_key(&self) -> [u8; SEED_LEN] {
        self.signing.to_bytes()
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature(self.signing.sign(message).to_bytes())
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &self.public_key())
            .finish_non_exhaustive()
    }
}

impl PartialEq for KeyPair {
    fn eq(&self, other: &Self) -> bool {
        self.signing.to_bytes() == other.signing.to_bytes()
    }
}

impl Eq for KeyPair {}

pub fn generate_keypair(seed: &[u8]) -> Result<KeyPair, CryptoError> {
    let seed: [u8; SEED_LEN] = seed
        .try_into()
        .map_err(|_| CryptoError::InvalidSeed(seed.len()))?;
    Ok(KeyPair {
        signing: SigningKey::from_bytes(&seed),
    })
}

/// Keypair whose seed is the digest of `label`. Used to give simulated
/// actors stable keys.
pub fn derive_keypair(label: &[u8]) -> KeyPair {
    KeyPair {
        signing: SigningKey::from_bytes(&digest(label).0),
    }
}

pub fn sign(key: &KeyPair, message: &[u8]) -> Signature {
    key.sign(message)
}

pub fn verify(public_key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(&public_key.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&signature.0);
    key.verify_strict(message, &sig).is_ok()
}

/// Verification over untyped input. Wrong lengths and invalid points are
/// simply `false`.
pub fn verify_bytes(public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
    let (Ok(pk), Some(sig)) = (
        <[u8; 32]>::try_from(public_key),
        Signature::from_slice(signature),
    ) else {
        return false;
    };
    verify(&PublicKey(pk), message, &sig)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seed_length_is_checked() {
        assert_eq!(generate_keypair(&[0u8; 31]).unwrap_err(), CryptoError::InvalidSeed(31));
        assert_eq!(generate_keypair(&[0u8; 33]).unwrap_err(), CryptoError::InvalidSeed(33));
    }

    #[test]
    fn keypairs_are_deterministic() {
        let a = generate_keypair(&[7u8; 32]).unwrap();
        let b = generate_keypair(&[7u8; 32]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.public_key(), b.public_key());
        assert_eq!(a.sign(b"m"), b.sign(b"m"));
    }

    #[test]
    fn distinct_seeds_give_distinct_keys() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let s1: [u8; 32] = rng.random();
            let s2: [u8; 32] = rng.random();
            assert_ne!(s1, s2);
            let k1 = generate_keypair(&s1).unwrap().public_key();
            let k2 = generate_keypair(&s2).unwrap().public_key();
            assert_ne!(k1, k2);
        }
    }

    #[test]
    fn sign_verify_and_wrong_key() {
        let k = generate_keypair(&[1u8; 32]).unwrap();
        let other = generate_keypair(&[2u8; 32]).unwrap();
        let sig = sign(&k, b"hello");
        assert!(verify(&k.public_key(), b"hello", &sig));
        assert!(!verify(&other.public_key(), b"hello", &sig));
    }

    #[test]
    fn single_bit_flips_break_signatures() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = generate_keypair(&[3u8; 32]).unwrap();
        let msg: Vec<u8> = (0..48).map(|_| rng.random()).collect();
        let sig = sign(&k, &msg);
        for _ in 0..64 {
            let mut m = msg.clone();
            let bit = rng.random_range(0..m.len() * 8);
            m[bit / 8] ^= 1 << (bit % 8);
            assert!(!verify(&k.public_key(), &m, &sig));
        }
    }

    #[test]
    fn malformed_inputs_verify_false() {
        let k = generate_keypair(&[4u8; 32]).unwrap();
        let sig = sign(&k, b"x");
        let pk = k.public_key();
        assert!(verify_bytes(&pk.0, b"x", &sig.0));
        assert!(!verify_bytes(&pk.0, b"x", &sig.0[..63]));
        assert!(!verify_bytes(&pk.0[..31], b"x", &sig.0));
        assert!(!verify_bytes(&[0xffu8; 32], b"x", &sig.0));
    }

    #[test]
    fn one_bit_change_changes_digest() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let len = rng.random_range(1..64);
            let data: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            let mut flipped = data.clone();
            let bit = rng.random_range(0..len * 8);
            flipped[bit / 8] ^= 1 << (bit % 8);
            assert_ne!(digest(&data), digest(&flipped));
            assert_eq!(digest(&data), digest(&data));
        }
    }

    #[test]
    fn hash_hex_round_trip() {
        let h = digest(b"abc");
        assert_eq!(Hash32::from_hex(&h.to_hex()).unwrap(), h);
        assert!(Hash32::from_hex("abcd").is_err());
    }
}
