use std::collections::BTreeMap;
use std::fmt;

use super::{CertClass, Certificate, KeyUsage};
use super::revocation::RevocationView;
use crate::Tick;

/// Root certificates a relying party accepts, keyed by CA id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrustAnchors {
    roots: BTreeMap<String, Certificate>,
}

impl TrustAnchors {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a root. Returns false (and ignores it) when the certificate is
    /// not a correctly self-signed root.
    pub fn add(&mut self, root: Certificate) -> bool {
        if !root.is_self_issued() || !root.verify_signature(&root.subject_public_key) {
            return false;
        }
        self.roots.insert(root.subject_id.clone(), root);
        true
    }

    pub fn get(&self, ca_id: &str) -> Option<&Certificate> {
        self.roots.get(ca_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.roots.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.roots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roots.is_empty()
    }
}

impl FromIterator<Certificate> for TrustAnchors {
    fn from_iter<T: IntoIterator<Item = Certificate>>(iter: T) -> Self {
        let mut anchors = Self::new();
        for root in iter {
            anchors.add(root);
        }
        anchors
    }
}

/// Constraints the relying party adds on top of the certificate's own
/// profile.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UsagePolicy {
    /// Chain the key is about to be used on.
    pub chain: Option<String>,
    pub minimum_class: Option<CertClass>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationResult {
    Valid,
    Expired,
    Revoked,
    BadSignature,
    UnknownIssuer,
    ProfileViolation(String),
}

impl ValidationResult {
    pub fn is_valid(&self) -> bool {
        matches!(self, ValidationResult::Valid)
    }
}

impl fmt::Display for ValidationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationResult::Valid => f.write_str("valid"),
            ValidationResult::Expired => f.write_str("expired"),
            ValidationResult::Revoked => f.write_str("revoked"),
            ValidationResult::BadSignature => f.write_str("bad-signature"),
            ValidationResult::UnknownIssuer => f.write_str("unknown-issuer"),
            ValidationResult::ProfileViolation(d) => write!(f, "profile-violation({d})"),
        }
    }
}

/// Checks, in order: issuer anchored, issuer signature, validity window (of
/// the certificate and of its anchor), revocation, profile. The first
/// failure is returned.
pub fn validate_certificate(
    cert: &Certificate,
    anchors: &TrustAnchors,
    revocations: &RevocationView,
    now: Tick,
    policy: &UsagePolicy,
) -> ValidationResult {
    let Some(anchor) = anchors.get(&cert.issuer_id) else {
        return ValidationResult::UnknownIssuer;
    };
    if !cert.verify_signature(&anchor.subject_public_key) {
        return ValidationResult::BadSignature;
    }
    if !cert.validity.contains(now) || !anchor.validity.contains(now) {
        return ValidationResult::Expired;
    }
    if revocations.is_revoked(&cert.issuer_id, &cert.serial).is_some() {
        return ValidationResult::Revoked;
    }
    let profile = &cert.extensions.profile;
    if !profile.permitted_usage.contains(&KeyUsage::SignatureOnly) {
        return ValidationResult::ProfileViolation("signature usage not granted".into());
    }
    if cert.extensions.class < profile.minimum_class {
        return ValidationResult::ProfileViolation(format!(
            "class {:?} below profile minimum {:?}",
            cert.extensions.class, profile.minimum_class
        ));
    }
    if let Some(min) = policy.minimum_class {
        if cert.extensions.class < min {
            return ValidationResult::ProfileViolation(format!(
                "class {:?} below required {:?}",
                cert.extensions.class, min
            ));
        }
    }
    if let Some(chain) = &policy.chain {
        if !profile.permitted_chains.is_empty() && !profile.permitted_chains.contains(chain) {
            return ValidationResult::ProfileViolation(format!("key not permitted on chain {chain}"));
        }
    }
    ValidationResult::Valid
}

/// Bundles a relying party's anchors, revocation view and policy at a tick.
#[derive(Debug, Clone, Copy)]
pub struct Validator<'a> {
    pub anchors: &'a TrustAnchors,
    pub revocations: &'a RevocationView,
    pub policy: &'a UsagePolicy,
    pub now: Tick,
}

impl Validator<'_> {
    pub fn validate(&self, cert: &Certificate) -> ValidationResult {
        validate_certificate(cert, self.anchors, self.revocations, self.now, self.policy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ca::{CertificateAuthority, CertificateProfile, RevocationReason, Validity};
    use crate::crypto::derive_keypair;

    struct Fixture {
        ca: CertificateAuthority,
        cert: Certificate,
        anchors: TrustAnchors,
    }

    fn fixture(profile: CertificateProfile) -> Fixture {
        let mut ca = CertificateAuthority::new(
            "ca-v",
            derive_keypair(b"ca-v"),
            Validity::new(0, 1_000).unwrap(),
            4,
        )
        .unwrap();
        let attrs = [("name", "n"), ("email", "e")]
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        let reg = ca.register_subject("sub", &attrs, crate::ca::CertClass::Class1, 0).unwrap();
        let cert = ca
            .issue_certificate(&reg, derive_keypair(b"sub").public_key(), profile, Validity::new(10, 100).unwrap(), 0)
            .unwrap();
        let anchors = TrustAnchors::from_iter([ca.root().clone()]);
        Fixture { ca, cert, anchors }
    }

    fn check(f: &Fixture, view: &RevocationView, now: Tick, policy: &UsagePolicy) -> ValidationResult {
        validate_certificate(&f.cert, &f.anchors, view, now, policy)
    }

    #[test]
    fn root_is_self_anchored() {
        let f = fixture(CertificateProfile::new("p", CertClass::Class1));
        let anchors = TrustAnchors::from_iter([f.ca.root().clone()]);
        assert_eq!(
            validate_certificate(f.ca.root(), &anchors, &RevocationView::new(), 5, &UsagePolicy::default()),
            ValidationResult::Valid
        );
    }

    #[test]
    fn validity_window_boundaries() {
        let f = fixture(CertificateProfile::new("p", CertClass::Class1));
        let none = RevocationView::new();
        let p = UsagePolicy::default();
        assert_eq!(check(&f, &none, 10, &p), ValidationResult::Valid);
        assert_eq!(check(&f, &none, 100, &p), ValidationResult::Valid);
        assert_eq!(check(&f, &none, 101, &p), ValidationResult::Expired);
        assert_eq!(check(&f, &none, 9, &p), ValidationResult::Expired);
    }

    #[test]
    fn failure_order() {
        let mut f = fixture(CertificateProfile::new("p", CertClass::Class1));
        f.ca.revoke(&f.cert.serial, RevocationReason::KeyCompromise, 20).unwrap();
        let mut view = RevocationView::new();
        let crl = f.ca.generate_crl(21);
        view.apply_crl(&crl, &f.anchors).unwrap();
        let p = UsagePolicy::default();
        assert_eq!(check(&f, &view, 50, &p), ValidationResult::Revoked);
        // expired wins over revoked
        assert_eq!(check(&f, &view, 500, &p), ValidationResult::Expired);
        // bad signature wins over expired
        let mut forged = f.cert.clone();
        forged.subject_id = "mallory".into();
        assert_eq!(
            validate_certificate(&forged, &f.anchors, &view, 500, &p),
            ValidationResult::BadSignature
        );
        // unknown issuer wins over everything
        assert_eq!(
            validate_certificate(&forged, &TrustAnchors::new(), &view, 500, &p),
            ValidationResult::UnknownIssuer
        );
    }

    #[test]
    fn profile_constraints() {
        let f = fixture(CertificateProfile::new("p", CertClass::Class1).with_chains(["simchain"]));
        let none = RevocationView::new();
        let ok = UsagePolicy { chain: Some("simchain".into()), minimum_class: None };
        assert_eq!(check(&f, &none, 20, &ok), ValidationResult::Valid);
        let other_chain = UsagePolicy { chain: Some("otherchain".into()), minimum_class: None };
        assert!(matches!(check(&f, &none, 20, &other_chain), ValidationResult::ProfileViolation(_)));
        let strict = UsagePolicy { chain: None, minimum_class: Some(CertClass::Class2) };
        assert!(matches!(check(&f, &none, 20, &strict), ValidationResult::ProfileViolation(_)));
    }

    #[test]
    fn revocation_is_monotone_over_time() {
        let mut f = fixture(CertificateProfile::new("p", CertClass::Class1));
        f.ca.revoke(&f.cert.serial, RevocationReason::Superseded, 30).unwrap();
        let mut view = RevocationView::new();
        view.apply_crl(&f.ca.generate_crl(31), &f.anchors).unwrap();
        let p = UsagePolicy::default();
        for t in 31..=1_000 {
            assert_ne!(check(&f, &view, t, &p), ValidationResult::Valid);
        }
    }
}
