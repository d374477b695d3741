//! VASP-signed customer attribute assertions, linked to the customer's
//! certificate by digest, and disclosure filtering.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::ca::{encode_attributes, Attributes, Certificate, ValidationResult, Validator};
use crate::crypto::{verify, Hash32, KeyPair, Signature, TlvWriter};
use crate::Tick;

/// Attribute names exchanged for a transfer.
pub const TRAVEL_RULE_ATTRIBUTES: [&str; 6] = [
    "name",
    "account_id",
    "address",
    "vasp_id",
    "public_key_hash",
    "custody_model",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AssertionError {
    #[error("subject certificate invalid: {0}")]
    SubjectCertInvalid(ValidationResult),
    #[error("attribute {0} is not registered for the subject")]
    AttributeNotRegistered(String),
    #[error("no attribute survives the disclosure policy")]
    EmptyDisclosure,
    #[error("disclosure policy allows nothing")]
    EmptyPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisclosurePolicy {
    allowed: BTreeSet<String>,
}

impl DisclosurePolicy {
    pub fn new<I, S>(names: I) -> Result<Self, AssertionError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let allowed: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        if allowed.is_empty() {
            return Err(AssertionError::EmptyPolicy);
        }
        Ok(Self { allowed })
    }

    pub fn travel_rule() -> Self {
        Self::new(TRAVEL_RULE_ATTRIBUTES).expect("non-empty")
    }

    pub fn allowed_attributes(&self) -> &BTreeSet<String> {
        &self.allowed
    }

    pub fn allows(&self, name: &str) -> bool {
        self.allowed.contains(name)
    }
}

/// Identity of the VASP putting its signature on an assertion.
#[derive(Debug, Clone, Copy)]
pub struct AssertionSigner<'a> {
    pub vasp_id: &'a str,
    pub key: &'a KeyPair,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeAssertion {
    pub assertion_id: [u8; 16],
    pub issuer_vasp_id: String,
    pub subject_id: String,
    pub linked_certificate_hash: Hash32,
    pub attributes: Attributes,
    pub issued_at: Tick,
    pub vasp_signature: Signature,
}

impl AttributeAssertion {
    fn signed(
        signer: AssertionSigner<'_>,
        assertion_id: [u8; 16],
        subject_id: &str,
        linked_certificate_hash: Hash32,
        attributes: Attributes,
        issued_at: Tick,
    ) -> Self {
        let mut a = Self {
            assertion_id,
            issuer_vasp_id: signer.vasp_id.to_string(),
            subject_id: subject_id.to_string(),
            linked_certificate_hash,
            attributes,
            issued_at,
            vasp_signature: Signature([0; 64]),
        };
        a.vasp_signature = signer.key.sign(&a.to_be_signed());
        a
    }

    pub fn to_be_signed(&self) -> Vec<u8> {
        TlvWriter::new()
            .bytes(1, &self.assertion_id)
            .str(2, &self.issuer_vasp_id)
            .str(3, &self.subject_id)
            .bytes(4, &self.linked_certificate_hash.0)
            .bytes(5, &encode_attributes(&self.attributes))
            .u64(6, self.issued_at)
            .finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        TlvWriter::new()
            .bytes(1, &self.to_be_signed())
            .bytes(2, &self.vasp_signature.0)
            .finish()
    }

    /// `field=value` lines.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("assertion_id={}\n", hex::encode(self.assertion_id)));
        out.push_str(&format!("issuer_vasp_id={}\n", self.issuer_vasp_id));
        out.push_str(&format!("subject_id={}\n", self.subject_id));
        out.push_str(&format!("linked_certificate_hash={}\n", self.linked_certificate_hash));
        for (k, v) in &self.attributes {
            out.push_str(&format!("attribute.{k}={v}\n"));
        }
        out.push_str(&format!("issued_at={}\n", self.issued_at));
        out.push_str(&format!("vasp_signature={}\n", self.vasp_signature.to_hex()));
        out
    }
}

/// Signs `attributes` about the holder of `subject_certificate`. Every
/// attribute must match what the subject registered. `subject_id` is given
/// separately because commingled customers are linked to the VASP's own
/// certificate.
#[allow(clippy::too_many_arguments)]
pub fn issue_assertion(
    signer: AssertionSigner<'_>,
    subject_id: &str,
    subject_certificate: &Certificate,
    attributes: &Attributes,
    registered: &Attributes,
    validator: &Validator<'_>,
    assertion_id: [u8; 16],
    now: Tick,
) -> Result<AttributeAssertion, AssertionError> {
    let check = validator.validate(subject_certificate);
    if !check.is_valid() {
        return Err(AssertionError::SubjectCertInvalid(check));
    }
    if let Some((name, _)) = attributes
        .iter()
        .find(|(k, v)| registered.get(*k) != Some(*v))
    {
        return Err(AssertionError::AttributeNotRegistered(name.clone()));
    }
    Ok(AttributeAssertion::signed(
        signer,
        assertion_id,
        subject_id,
        subject_certificate.digest(),
        attributes.clone(),
        now,
    ))
}

/// True iff the issuing VASP's certificate validates, names the issuer, and
/// verifies the signature, and the assertion links to exactly
/// `subject_certificate`.
pub fn verify_assertion(
    assertion: &AttributeAssertion,
    issuer_vasp_certificate: &Certificate,
    subject_certificate: &Certificate,
    validator: &Validator<'_>,
) -> bool {
    issuer_vasp_certificate.subject_id == assertion.issuer_vasp_id
        && assertion.linked_certificate_hash == subject_certificate.digest()
        && verify(
            &issuer_vasp_certificate.subject_public_key,
            &assertion.to_be_signed(),
            &assertion.vasp_signature,
        )
        && validator.validate(issuer_vasp_certificate).is_valid()
}

/// New assertion holding only the attributes `policy` allows, re-signed by
/// the disclosing VASP. The input is left untouched; the caller is expected
/// to have verified it.
pub fn filter_attributes(
    assertion: &AttributeAssertion,
    policy: &DisclosurePolicy,
    signer: AssertionSigner<'_>,
    assertion_id: [u8; 16],
    now: Tick,
) -> Result<AttributeAssertion, AssertionError> {
    let kept: Attributes = assertion
        .attributes
        .iter()
        .filter(|(k, _)| policy.allows(k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    if kept.is_empty() {
        return Err(AssertionError::EmptyDisclosure);
    }
    Ok(AttributeAssertion::signed(
        signer,
        assertion_id,
        &assertion.subject_id,
        assertion.linked_certificate_hash,
        kept,
        now,
    ))
}
