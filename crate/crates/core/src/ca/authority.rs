use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::revocation::{Crl, DeltaCrl, RevocationList};
use super::{
    encode_attributes, Attributes, CaError, CertClass, Certificate, CertificateBody,
    CertificateProfile, CertificateStatus, CertificateStatusResponse, Extensions,
    RegistrationRecord, RevocationEntry, RevocationReason, Serial, Validity,
};
use crate::crypto::{digest, verify, KeyPair, PublicKey, Signature, TlvWriter};
use crate::Tick;

/// Cumulative attribute requirements per certificate class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTable {
    added: BTreeMap<CertClass, BTreeSet<String>>,
}

impl Default for ClassTable {
    fn default() -> Self {
        let set = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        Self {
            added: BTreeMap::from([
                (CertClass::Class1, set(&["name", "email"])),
                (CertClass::Class2, set(&["government_id", "address"])),
                (CertClass::Class3, set(&["organization_vetting_ref"])),
            ]),
        }
    }
}

impl ClassTable {
    /// `added[c]` lists the attributes class `c` requires beyond the classes
    /// below it.
    pub fn new(added: BTreeMap<CertClass, BTreeSet<String>>) -> Self {
        Self { added }
    }

    pub fn added(&self, class: CertClass) -> impl Iterator<Item = &String> {
        self.added.get(&class).into_iter().flatten()
    }

    /// Full attribute set required for `class`.
    pub fn required(&self, class: CertClass) -> BTreeSet<String> {
        self.added
            .range(..=class)
            .flat_map(|(_, names)| names.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssuedCertificate {
    pub certificate: Certificate,
    pub registration: RegistrationRecord,
}

/// Answer to a lookup by public key, signed by the CA.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupResponse {
    pub certificate: Certificate,
    pub attributes: Attributes,
    pub revocation: Option<RevocationEntry>,
    pub responder_id: String,
    pub produced_at: Tick,
    pub signature: Signature,
}

impl LookupResponse {
    pub fn to_be_signed(&self) -> Vec<u8> {
        TlvWriter::new()
            .bytes(1, &self.certificate.to_bytes())
            .bytes(2, &encode_attributes(&self.attributes))
            .opt(3, self.revocation.map(|r| r.encode()).as_deref())
            .str(4, &self.responder_id)
            .u64(5, self.produced_at)
            .finish()
    }

    pub fn verify(&self, responder_key: &PublicKey) -> bool {
        verify(responder_key, &self.to_be_signed(), &self.signature)
    }
}

/// Root certificate signed by its own key.
pub fn self_sign_root(
    ca_identity: &str,
    keypair: &KeyPair,
    validity: Validity,
) -> Result<Certificate, CaError> {
    let validity = Validity::new(validity.not_before, validity.not_after)?;
    let public_key = keypair.public_key();
    let seed = TlvWriter::new()
        .str(1, ca_identity)
        .bytes(2, &public_key.0)
        .u64(3, validity.not_before)
        .u64(4, validity.not_after)
        .finish();
    let mut serial = [0u8; 16];
    serial.copy_from_slice(&digest(&seed).0[..16]);
    let extensions = Extensions {
        profile: CertificateProfile::new("ca-root", CertClass::Class1),
        class: CertClass::Class3,
    };
    Ok(CertificateBody {
        serial: Serial(serial),
        issuer_id: ca_identity,
        validity,
        subject_id: ca_identity,
        subject_public_key: public_key,
        extensions: &extensions,
    }
    .sign(keypair))
}

/// One CA instance. Operations are serialized by `&mut self`.
#[derive(Debug, Clone)]
pub struct CertificateAuthority {
    id: String,
    keypair: KeyPair,
    root: Certificate,
    rng: ChaCha8Rng,
    class_table: ClassTable,
    disclosed_attributes: BTreeSet<String>,
    issued: BTreeMap<Serial, IssuedCertificate>,
    by_key: BTreeMap<PublicKey, Vec<Serial>>,
    revoked: BTreeMap<Serial, RevocationEntry>,
    // Revoked serials as of each published list number.
    list_sets: BTreeMap<u64, BTreeSet<Serial>>,
    last_list_number: u64,
}

impl CertificateAuthority {
    pub fn new(
        id: impl Into<String>,
        keypair: KeyPair,
        validity: Validity,
        rng_seed: u64,
    ) -> Result<Self, CaError> {
        let id = id.into();
        let root = self_sign_root(&id, &keypair, validity)?;
        Ok(Self {
            id,
            keypair,
            root,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            class_table: ClassTable::default(),
            disclosed_attributes: crate::assertion::DisclosurePolicy::travel_rule()
                .allowed_attributes()
                .clone(),
            issued: BTreeMap::new(),
            by_key: BTreeMap::new(),
            revoked: BTreeMap::new(),
            list_sets: BTreeMap::new(),
            last_list_number: 0,
        })
    }

    pub fn with_class_table(mut self, table: ClassTable) -> Self {
        self.class_table = table;
        self
    }

    /// Attribute names returned alongside lookup responses.
    pub fn with_disclosed_attributes(mut self, names: BTreeSet<String>) -> Self {
        self.disclosed_attributes = names;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn root(&self) -> &Certificate {
        &self.root
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public_key()
    }

    pub fn class_table(&self) -> &ClassTable {
        &self.class_table
    }

    pub fn issued(&self) -> impl Iterator<Item = &IssuedCertificate> {
        self.issued.values()
    }

    pub fn certificate(&self, serial: &Serial) -> Option<&Certificate> {
        self.issued.get(serial).map(|i| &i.certificate)
    }

    pub fn revocation(&self, serial: &Serial) -> Option<&RevocationEntry> {
        self.revoked.get(serial)
    }

    pub fn revoked_serials(&self) -> BTreeSet<Serial> {
        self.revoked.keys().copied().collect()
    }

    pub fn register_subject(
        &self,
        subject_id: &str,
        submitted_attributes: &Attributes,
        requested_class: CertClass,
        now: Tick,
    ) -> Result<RegistrationRecord, CaError> {
        if submitted_attributes.is_empty() {
            return Err(CaError::RegistrationRejected("no attributes submitted".into()));
        }
        let mut verification_log = Vec::new();
        let mut assigned = None;
        // Classes are cumulative, so the first failing class ends the climb.
        for class in CertClass::ALL.into_iter().filter(|c| *c <= requested_class) {
            let mut all_pass = true;
            for name in self.class_table.added(class) {
                let pass = submitted_attributes
                    .get(name)
                    .is_some_and(|v| !v.trim().is_empty());
                verification_log.push((format!("{class:?}:{name}"), pass));
                all_pass &= pass;
            }
            if !all_pass {
                break;
            }
            assigned = Some(class);
        }
        let Some(assigned_class) = assigned else {
            let missing: Vec<_> = verification_log
                .iter()
                .filter(|(_, pass)| !pass)
                .map(|(check, _)| check.as_str())
                .collect();
            return Err(CaError::RegistrationRejected(format!(
                "missing mandatory attributes: {}",
                missing.join(", ")
            )));
        };
        Ok(RegistrationRecord {
            subject_id: subject_id.to_string(),
            submitted_attributes: submitted_attributes.clone(),
            assigned_class,
            verification_log,
            timestamp: now,
        })
    }

    pub fn issue_certificate(
        &mut self,
        registration: &RegistrationRecord,
        subject_public_key: PublicKey,
        profile: CertificateProfile,
        validity: Validity,
        now: Tick,
    ) -> Result<Certificate, CaError> {
        let validity = Validity::new(validity.not_before, validity.not_after)?;
        if profile.minimum_class > registration.assigned_class {
            return Err(CaError::ClassTooLow {
                required: profile.minimum_class,
                assigned: registration.assigned_class,
            });
        }
        if let Some(bound) = self.live_binding(&subject_public_key, now) {
            if bound.subject_id != registration.subject_id {
                return Err(CaError::KeyAlreadyBound(bound.subject_id.clone()));
            }
        }
        let serial = loop {
            let candidate = Serial(self.rng.random());
            if !self.issued.contains_key(&candidate) && candidate != self.root.serial {
                break candidate;
            }
        };
        let extensions = Extensions {
            class: registration.assigned_class,
            profile,
        };
        let certificate = CertificateBody {
            serial,
            issuer_id: &self.id,
            validity,
            subject_id: &registration.subject_id,
            subject_public_key,
            extensions: &extensions,
        }
        .sign(&self.keypair);
        self.issued.insert(
            serial,
            IssuedCertificate {
                certificate: certificate.clone(),
                registration: registration.clone(),
            },
        );
        self.by_key.entry(subject_public_key).or_default().push(serial);
        Ok(certificate)
    }

    fn is_live(&self, cert: &Certificate, now: Tick) -> bool {
        cert.validity.contains(now) && !self.revoked.contains_key(&cert.serial)
    }

    fn live_binding(&self, key: &PublicKey, now: Tick) -> Option<&Certificate> {
        self.by_key
            .get(key)?
            .iter()
            .rev()
            .map(|s| &self.issued[s].certificate)
            .find(|c| self.is_live(c, now))
    }

    pub fn revoke(
        &mut self,
        serial: &Serial,
        reason: RevocationReason,
        now: Tick,
    ) -> Result<RevocationEntry, CaError> {
        if !self.issued.contains_key(serial) {
            return Err(CaError::UnknownSerial(*serial));
        }
        if self.revoked.contains_key(serial) {
            return Err(CaError::AlreadyRevoked(*serial));
        }
        let entry = RevocationEntry {
            serial: *serial,
            reason,
            revoked_at: now,
        };
        self.revoked.insert(*serial, entry);
        Ok(entry)
    }

    fn next_list_number(&mut self) -> u64 {
        self.last_list_number += 1;
        self.list_sets
            .insert(self.last_list_number, self.revoked.keys().copied().collect());
        self.last_list_number
    }

    pub fn generate_crl(&mut self, now: Tick) -> Crl {
        let number = self.next_list_number();
        let entries = self.revoked.values().copied().collect();
        Crl::signed(&self.id, number, entries, now, &self.keypair)
    }

    pub fn generate_delta_crl(&mut self, base_number: u64, now: Tick) -> Result<DeltaCrl, CaError> {
        let base = self
            .list_sets
            .get(&base_number)
            .ok_or(CaError::UnknownBase(base_number))?
            .clone();
        let number = self.next_list_number();
        let entries = self
            .revoked
            .values()
            .filter(|e| !base.contains(&e.serial))
            .copied()
            .collect();
        Ok(DeltaCrl::signed(&self.id, number, base_number, entries, now, &self.keypair))
    }

    /// A delta against `have` when that list is known, otherwise a full list.
    pub fn revocation_list_since(&mut self, have: Option<u64>, now: Tick) -> RevocationList {
        match have {
            Some(base) if self.list_sets.contains_key(&base) => RevocationList::Delta(
                self.generate_delta_crl(base, now).expect("base checked"),
            ),
            _ => RevocationList::Full(self.generate_crl(now)),
        }
    }

    pub fn check_status(&self, serial: &Serial, now: Tick) -> CertificateStatusResponse {
        let status = if !self.issued.contains_key(serial) {
            CertificateStatus::Unknown
        } else {
            match self.revoked.get(serial) {
                Some(e) if e.revoked_at <= now => CertificateStatus::Revoked {
                    reason: e.reason,
                    at: e.revoked_at,
                },
                _ => CertificateStatus::Good,
            }
        };
        let payload = CertificateStatusResponse::payload(serial, &status, now, &self.id);
        CertificateStatusResponse {
            serial: *serial,
            status,
            produced_at: now,
            responder_id: self.id.clone(),
            responder_signature: self.keypair.sign(&payload),
        }
    }

    /// Searches issued certificates for `public_key`. A live certificate is
    /// preferred; otherwise the most recent one is returned with its
    /// revocation entry attached.
    pub fn find_certificate_by_pubkey(
        &self,
        public_key: &PublicKey,
        now: Tick,
    ) -> Option<LookupResponse> {
        let serials = self.by_key.get(public_key)?;
        let issued = serials
            .iter()
            .rev()
            .map(|s| &self.issued[s])
            .find(|i| self.is_live(&i.certificate, now))
            .or_else(|| serials.last().map(|s| &self.issued[s]))?;
        let attributes = issued
            .registration
            .submitted_attributes
            .iter()
            .filter(|(k, _)| self.disclosed_attributes.contains(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let mut response = LookupResponse {
            certificate: issued.certificate.clone(),
            attributes,
            revocation: self.revoked.get(&issued.certificate.serial).copied(),
            responder_id: self.id.clone(),
            produced_at: now,
            signature: crate::crypto::Signature([0; 64]),
        };
        response.signature = self.keypair.sign(&response.to_be_signed());
        Some(response)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::derive_keypair;

    fn ca() -> CertificateAuthority {
        CertificateAuthority::new("ca-1", derive_keypair(b"ca-1"), Validity::new(0, 10_000).unwrap(), 1)
            .unwrap()
    }

    fn attrs(pairs: &[(&str, &str)]) -> Attributes {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn class1() -> Attributes {
        attrs(&[("name", "Alice"), ("email", "a@example.org")])
    }

    /// Table oracle: the highest class whose cumulative attribute set is
    /// present, capped at the requested class.
    fn expected_class(table: &ClassTable, a: &Attributes, requested: CertClass) -> Option<CertClass> {
        CertClass::ALL
            .into_iter()
            .filter(|c| *c <= requested)
            .take_while(|c| table.required(*c).iter().all(|n| a.get(n).is_some_and(|v| !v.is_empty())))
            .last()
    }

    #[test]
    fn root_is_self_signed_and_deterministic() {
        let a = ca();
        let b = ca();
        assert_eq!(a.root(), b.root());
        assert_eq!(a.root().to_bytes(), b.root().to_bytes());
        assert!(a.root().is_self_issued());
        assert!(a.root().verify_signature(&a.root().subject_public_key));
        let mut tampered = a.root().clone();
        tampered.subject_id.push('x');
        assert!(!tampered.verify_signature(&tampered.subject_public_key));
    }

    #[test]
    fn root_rejects_empty_validity() {
        let v = Validity { not_before: 5, not_after: 5 };
        assert!(matches!(
            self_sign_root("x", &derive_keypair(b"x"), v),
            Err(CaError::InvalidValidity { .. })
        ));
    }

    #[test]
    fn registration_follows_class_table() {
        let ca = ca();
        let table = ClassTable::default();
        let cases = [
            (class1(), CertClass::Class1),
            (class1(), CertClass::Class3),
            (
                attrs(&[("name", "A"), ("email", "e"), ("government_id", "g"), ("address", "x")]),
                CertClass::Class3,
            ),
            (
                attrs(&[("name", "A"), ("email", "e"), ("government_id", "g"), ("address", "x")]),
                CertClass::Class2,
            ),
            (
                attrs(&[
                    ("name", "A"),
                    ("email", "e"),
                    ("government_id", "g"),
                    ("address", "x"),
                    ("organization_vetting_ref", "o"),
                ]),
                CertClass::Class3,
            ),
            (attrs(&[("name", "A"), ("email", "e"), ("organization_vetting_ref", "o")]), CertClass::Class3),
            (attrs(&[("name", "A")]), CertClass::Class2),
        ];
        for (a, requested) in cases {
            let got = ca.register_subject("s", &a, requested, 3);
            match expected_class(&table, &a, requested) {
                Some(class) => {
                    let rec = got.unwrap();
                    assert_eq!(rec.assigned_class, class, "{a:?} requested {requested:?}");
                    assert!(rec.assigned_class <= requested);
                    assert!(!rec.verification_log.is_empty());
                }
                None => assert!(matches!(got, Err(CaError::RegistrationRejected(_)))),
            }
        }
        assert_eq!(
            ca.register_subject("s", &class1(), CertClass::Class3, 0).unwrap().assigned_class,
            CertClass::Class1
        );
        assert!(matches!(
            ca.register_subject("s", &Attributes::new(), CertClass::Class1, 0),
            Err(CaError::RegistrationRejected(_))
        ));
    }

    #[test]
    fn key_binding_and_class_checks() {
        let mut ca = ca();
        let key = derive_keypair(b"alice").public_key();
        let reg_a = ca.register_subject("alice", &class1(), CertClass::Class1, 1).unwrap();
        let reg_b = ca.register_subject("bob", &class1(), CertClass::Class1, 1).unwrap();
        let v = Validity::new(0, 100).unwrap();
        let cert = ca
            .issue_certificate(&reg_a, key, CertificateProfile::new("p", CertClass::Class1), v, 1)
            .unwrap();
        assert!(cert.verify_signature(&ca.public_key()));
        assert_eq!(cert.extensions.class, CertClass::Class1);
        assert_eq!(
            ca.issue_certificate(&reg_b, key, CertificateProfile::new("p", CertClass::Class1), v, 2),
            Err(CaError::KeyAlreadyBound("alice".into()))
        );
        // same subject may be re-issued
        let again = ca
            .issue_certificate(&reg_a, key, CertificateProfile::new("p", CertClass::Class1), v, 2)
            .unwrap();
        assert_ne!(again.serial, cert.serial);
        let other = derive_keypair(b"bob").public_key();
        assert_eq!(
            ca.issue_certificate(&reg_b, other, CertificateProfile::new("p", CertClass::Class2), v, 2),
            Err(CaError::ClassTooLow { required: CertClass::Class2, assigned: CertClass::Class1 })
        );
        // after revocation of both live certs the key can move
        ca.revoke(&cert.serial, RevocationReason::Superseded, 3).unwrap();
        ca.revoke(&again.serial, RevocationReason::Superseded, 3).unwrap();
        assert!(ca
            .issue_certificate(&reg_b, key, CertificateProfile::new("p", CertClass::Class1), v, 4)
            .is_ok());
    }

    #[test]
    fn revoke_and_status() {
        let mut ca = ca();
        let reg = ca.register_subject("a", &class1(), CertClass::Class1, 0).unwrap();
        let cert = ca
            .issue_certificate(
                &reg,
                derive_keypair(b"a").public_key(),
                CertificateProfile::new("p", CertClass::Class1),
                Validity::new(0, 50).unwrap(),
                0,
            )
            .unwrap();
        let good = ca.check_status(&cert.serial, 1);
        assert_eq!(good.status, CertificateStatus::Good);
        assert!(good.verify(&ca.public_key()));
        ca.revoke(&cert.serial, RevocationReason::KeyCompromise, 7).unwrap();
        let revoked = ca.check_status(&cert.serial, 8);
        assert_eq!(
            revoked.status,
            CertificateStatus::Revoked { reason: RevocationReason::KeyCompromise, at: 7 }
        );
        assert!(revoked.verify(&ca.public_key()));
        let unknown = ca.check_status(&Serial([9; 16]), 8);
        assert_eq!(unknown.status, CertificateStatus::Unknown);
        assert!(unknown.verify(&ca.public_key()));
        assert_eq!(
            ca.revoke(&Serial([9; 16]), RevocationReason::Unspecified, 9),
            Err(CaError::UnknownSerial(Serial([9; 16])))
        );
        assert_eq!(
            ca.revoke(&cert.serial, RevocationReason::Unspecified, 9),
            Err(CaError::AlreadyRevoked(cert.serial))
        );
    }

    #[test]
    fn crl_numbering_and_deltas() {
        let mut ca = ca();
        let empty = ca.generate_crl(0);
        assert_eq!(empty.crl_number, 1);
        assert!(empty.entries.is_empty());
        let mut serials = Vec::new();
        for i in 0..3u8 {
            let id = format!("s{i}");
            let reg = ca.register_subject(&id, &class1(), CertClass::Class1, 0).unwrap();
            let c = ca
                .issue_certificate(
                    &reg,
                    derive_keypair(id.as_bytes()).public_key(),
                    CertificateProfile::new("p", CertClass::Class1),
                    Validity::new(0, 50).unwrap(),
                    0,
                )
                .unwrap();
            serials.push(c.serial);
        }
        ca.revoke(&serials[0], RevocationReason::KeyCompromise, 2).unwrap();
        ca.revoke(&serials[2], RevocationReason::Superseded, 3).unwrap();
        let delta = ca.generate_delta_crl(1, 4).unwrap();
        assert_eq!(delta.base_crl_number, 1);
        assert!(delta.crl_number > delta.base_crl_number);
        let got: BTreeSet<_> = delta.entries.iter().map(|e| e.serial).collect();
        assert_eq!(got, BTreeSet::from([serials[0], serials[2]]));
        assert!(matches!(ca.generate_delta_crl(99, 4), Err(CaError::UnknownBase(99))));
        let full = ca.generate_crl(5);
        assert!(full.crl_number > delta.crl_number);
        let lines: Vec<_> = full.entries.iter().map(|e| e.report_line()).collect();
        assert_eq!(lines.len(), 2);
        assert!(lines.iter().all(|l| l.split(',').count() == 3));
    }

    #[test]
    fn lookup_by_public_key() {
        let mut ca = ca();
        let key = derive_keypair(b"k").public_key();
        let mut a = class1();
        a.insert("vasp_id".into(), "vasp-a".into());
        a.insert("government_id".into(), "secret".into());
        let reg = ca.register_subject("k", &a, CertClass::Class1, 0).unwrap();
        let cert = ca
            .issue_certificate(&reg, key, CertificateProfile::new("p", CertClass::Class1), Validity::new(0, 50).unwrap(), 0)
            .unwrap();
        let found = ca.find_certificate_by_pubkey(&key, 1).unwrap();
        assert_eq!(found.certificate, cert);
        assert!(found.verify(&ca.public_key()));
        assert_eq!(found.attributes.get("vasp_id").map(String::as_str), Some("vasp-a"));
        assert!(!found.attributes.contains_key("government_id"));
        assert!(!found.attributes.contains_key("email"));
        assert!(found.revocation.is_none());
        assert!(ca.find_certificate_by_pubkey(&derive_keypair(b"nobody").public_key(), 1).is_none());
        ca.revoke(&cert.serial, RevocationReason::KeyCompromise, 2).unwrap();
        let found = ca.find_certificate_by_pubkey(&key, 3).unwrap();
        assert_eq!(found.certificate.serial, cert.serial);
        assert_eq!(found.revocation.map(|r| r.reason), Some(RevocationReason::KeyCompromise));
    }
}
