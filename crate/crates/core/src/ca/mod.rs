//! Certificate authority services: registration, issuance, revocation,
//! full and delta revocation lists, status responses and lookup by public
//! key.

mod authority;
mod revocation;
mod validation;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{digest, encode_list, verify, Hash32, KeyPair, PublicKey, Signature, TlvWriter};
use crate::Tick;

pub use authority::{self_sign_root, CertificateAuthority, ClassTable, IssuedCertificate, LookupResponse};
pub use revocation::{Crl, DeltaCrl, MergeSummary, RevocationError, RevocationList, RevocationView, ViewUpdate};
pub use validation::{validate_certificate, TrustAnchors, UsagePolicy, ValidationResult, Validator};

pub const CERTIFICATE_VERSION: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CaError {
    #[error("validity window {not_before}..{not_after} is empty")]
    InvalidValidity { not_before: Tick, not_after: Tick },
    #[error("registration rejected: {0}")]
    RegistrationRejected(String),
    #[error("public key already bound to live subject {0}")]
    KeyAlreadyBound(String),
    #[error("profile requires {required:?}, registration holds {assigned:?}")]
    ClassTooLow { required: CertClass, assigned: CertClass },
    #[error("unknown serial {0}")]
    UnknownSerial(Serial),
    #[error("serial {0} already revoked")]
    AlreadyRevoked(Serial),
    #[error("no revocation list numbered {0}")]
    UnknownBase(u64),
}

/// 16-byte certificate serial, rendered as lowercase hex.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Serial(pub [u8; 16]);

impl Serial {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for Serial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Serial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Serial({})", self.to_hex())
    }
}

/// Assurance grade of the identity checks behind a certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CertClass {
    Class1,
    Class2,
    Class3,
}

impl CertClass {
    pub const ALL: [CertClass; 3] = [CertClass::Class1, CertClass::Class2, CertClass::Class3];

    pub fn code(self) -> u8 {
        match self {
            CertClass::Class1 => 1,
            CertClass::Class2 => 2,
            CertClass::Class3 => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SignatureAlgorithm {
    Ed25519Sha256,
}

/// The only usage ever granted. Encryption usage does not exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KeyUsage {
    SignatureOnly,
}

/// Mechanical form of the practice statement a certificate is issued under.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CertificateProfile {
    pub profile_id: String,
    pub permitted_usage: BTreeSet<KeyUsage>,
    /// Chain labels the key may transact on. Empty means unrestricted.
    pub permitted_chains: BTreeSet<String>,
    pub minimum_class: CertClass,
}

impl CertificateProfile {
    pub fn new(profile_id: impl Into<String>, minimum_class: CertClass) -> Self {
        Self {
            profile_id: profile_id.into(),
            permitted_usage: BTreeSet::from([KeyUsage::SignatureOnly]),
            permitted_chains: BTreeSet::new(),
            minimum_class,
        }
    }

    pub fn with_chains<I, S>(mut self, chains: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.permitted_chains = chains.into_iter().map(Into::into).collect();
        self
    }

    fn encode(&self) -> Vec<u8> {
        TlvWriter::new()
            .str(1, &self.profile_id)
            .list(2, self.permitted_usage.iter().map(|_| b"signature-only".to_vec()))
            .list(3, self.permitted_chains.iter().map(|c| c.as_bytes().to_vec()))
            .u8(4, self.minimum_class.code())
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Validity {
    pub not_before: Tick,
    pub not_after: Tick,
}

impl Validity {
    pub fn new(not_before: Tick, not_after: Tick) -> Result<Self, CaError> {
        if not_before >= not_after {
            return Err(CaError::InvalidValidity { not_before, not_after });
        }
        Ok(Self { not_before, not_after })
    }

    pub fn contains(&self, now: Tick) -> bool {
        self.not_before <= now && now <= self.not_after
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Extensions {
    pub profile: CertificateProfile,
    pub class: CertClass,
}

/// X.509-shaped binding of a subject to a public key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Certificate {
    pub version: u8,
    pub serial: Serial,
    pub signature_algorithm: SignatureAlgorithm,
    pub issuer_id: String,
    pub validity: Validity,
    pub subject_id: String,
    pub subject_public_key: PublicKey,
    pub extensions: Extensions,
    pub issuer_signature: Signature,
}

/// Everything a certificate carries except the signature.
#[derive(Debug, Clone)]
pub(crate) struct CertificateBody<'a> {
    pub serial: Serial,
    pub issuer_id: &'a str,
    pub validity: Validity,
    pub subject_id: &'a str,
    pub subject_public_key: PublicKey,
    pub extensions: &'a Extensions,
}

impl CertificateBody<'_> {
    pub(crate) fn tbs_bytes(&self) -> Vec<u8> {
        TlvWriter::new()
            .u8(1, CERTIFICATE_VERSION)
            .bytes(2, &self.serial.0)
            .str(3, "ed25519-sha256")
            .str(4, self.issuer_id)
            .u64(5, self.validity.not_before)
            .u64(6, self.validity.not_after)
            .str(7, self.subject_id)
            .bytes(8, &self.subject_public_key.0)
            .bytes(9, &self.extensions.profile.encode())
            .u8(10, self.extensions.class.code())
            .finish()
    }

    pub(crate) fn sign(self, issuer_key: &KeyPair) -> Certificate {
        let issuer_signature = issuer_key.sign(&self.tbs_bytes());
        Certificate {
            version: CERTIFICATE_VERSION,
            serial: self.serial,
            signature_algorithm: SignatureAlgorithm::Ed25519Sha256,
            issuer_id: self.issuer_id.to_string(),
            validity: self.validity,
            subject_id: self.subject_id.to_string(),
            subject_public_key: self.subject_public_key,
            extensions: self.extensions.clone(),
            issuer_signature,
        }
    }
}

impl Certificate {
    /// The canonical bytes covered by `issuer_signature`.
    pub fn tbs_bytes(&self) -> Vec<u8> {
        CertificateBody {
            serial: self.serial,
            issuer_id: &self.issuer_id,
            validity: self.validity,
            subject_id: &self.subject_id,
            subject_public_key: self.subject_public_key,
            extensions: &self.extensions,
        }
        .tbs_bytes()
    }

    /// Full certificate bytes: to-be-signed record followed by the signature.
    pub fn to_bytes(&self) -> Vec<u8> {
        TlvWriter::new()
            .bytes(1, &self.tbs_bytes())
            .bytes(2, &self.issuer_signature.0)
            .finish()
    }

    pub fn digest(&self) -> Hash32 {
        digest(&self.to_bytes())
    }

    pub fn key_hash(&self) -> Hash32 {
        self.subject_public_key.key_hash()
    }

    pub fn verify_signature(&self, issuer_key: &PublicKey) -> bool {
        verify(issuer_key, &self.tbs_bytes(), &self.issuer_signature)
    }

    pub fn is_self_issued(&self) -> bool {
        self.issuer_id == self.subject_id
    }
}

pub type Attributes = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistrationRecord {
    pub subject_id: String,
    pub submitted_attributes: Attributes,
    pub assigned_class: CertClass,
    pub verification_log: Vec<(String, bool)>,
    pub timestamp: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RevocationReason {
    KeyCompromise,
    AffiliationChanged,
    Superseded,
    CessationOfOperation,
    Unspecified,
}

impl RevocationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RevocationReason::KeyCompromise => "keyCompromise",
            RevocationReason::AffiliationChanged => "affiliationChanged",
            RevocationReason::Superseded => "superseded",
            RevocationReason::CessationOfOperation => "cessationOfOperation",
            RevocationReason::Unspecified => "unspecified",
        }
    }
}

impl fmt::Display for RevocationReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RevocationEntry {
    pub serial: Serial,
    pub reason: RevocationReason,
    pub revoked_at: Tick,
}

impl RevocationEntry {
    pub fn encode(&self) -> Vec<u8> {
        TlvWriter::new()
            .bytes(1, &self.serial.0)
            .str(2, self.reason.as_str())
            .u64(3, self.revoked_at)
            .finish()
    }

    /// `serial,reason,revoked_at`
    pub fn report_line(&self) -> String {
        format!("{},{},{}", self.serial, self.reason, self.revoked_at)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateStatus {
    Good,
    Revoked { reason: RevocationReason, at: Tick },
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CertificateStatusResponse {
    pub serial: Serial,
    pub status: CertificateStatus,
    pub produced_at: Tick,
    pub responder_id: String,
    pub responder_signature: Signature,
}

impl CertificateStatusResponse {
    pub(crate) fn payload(
        serial: &Serial,
        status: &CertificateStatus,
        produced_at: Tick,
        responder_id: &str,
    ) -> Vec<u8> {
        let (code, reason, at) = match status {
            CertificateStatus::Good => (0u8, "", 0),
            CertificateStatus::Revoked { reason, at } => (1, reason.as_str(), *at),
            CertificateStatus::Unknown => (2, "", 0),
        };
        TlvWriter::new()
            .bytes(1, &serial.0)
            .u8(2, code)
            .str(3, reason)
            .u64(4, at)
            .u64(5, produced_at)
            .str(6, responder_id)
            .finish()
    }

    pub fn to_be_signed(&self) -> Vec<u8> {
        Self::payload(&self.serial, &self.status, self.produced_at, &self.responder_id)
    }

    pub fn verify(&self, responder_key: &PublicKey) -> bool {
        verify(responder_key, &self.to_be_signed(), &self.responder_signature)
    }
}

pub(crate) fn encode_attributes(attrs: &Attributes) -> Vec<u8> {
    encode_list(attrs.iter().map(|(k, v)| {
        TlvWriter::new().str(1, k).str(2, v).finish()
    }))
}
