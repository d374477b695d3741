use std::collections::BTreeMap;

use thiserror::Error;

use super::validation::TrustAnchors;
use super::{RevocationEntry, Serial};
use crate::crypto::{encode_list, verify, KeyPair, PublicKey, Signature, TlvWriter};
use crate::Tick;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Crl {
    pub issuer_id: String,
    pub crl_number: u64,
    /// Sorted by serial.
    pub entries: Vec<RevocationEntry>,
    pub issued_at: Tick,
    pub signature: Signature,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaCrl {
    pub issuer_id: String,
    pub crl_number: u64,
    pub base_crl_number: u64,
    /// Revocations added since `base_crl_number`, sorted by serial.
    pub entries: Vec<RevocationEntry>,
    pub issued_at: Tick,
    pub signature: Signature,
}

fn sorted(mut entries: Vec<RevocationEntry>) -> Vec<RevocationEntry> {
    entries.sort_by_key(|e| e.serial);
    entries
}

impl Crl {
    pub(crate) fn signed(
        issuer_id: &str,
        crl_number: u64,
        entries: Vec<RevocationEntry>,
        issued_at: Tick,
        key: &KeyPair,
    ) -> Self {
        let mut crl = Self {
            issuer_id: issuer_id.to_string(),
            crl_number,
            entries: sorted(entries),
            issued_at,
            signature: Signature([0; 64]),
        };
        crl.signature = key.sign(&crl.to_be_signed());
        crl
    }

    pub fn to_be_signed(&self) -> Vec<u8> {
        TlvWriter::new()
            .str(1, "crl")
            .str(2, &self.issuer_id)
            .u64(3, self.crl_number)
            .list(4, self.entries.iter().map(RevocationEntry::encode))
            .u64(5, self.issued_at)
            .finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        TlvWriter::new()
            .bytes(1, &self.to_be_signed())
            .bytes(2, &self.signature.0)
            .finish()
    }

    pub fn verify(&self, issuer_key: &PublicKey) -> bool {
        verify(issuer_key, &self.to_be_signed(), &self.signature)
    }

    /// `serial,reason,revoked_at` per entry.
    pub fn report_lines(&self) -> Vec<String> {
        self.entries.iter().map(RevocationEntry::report_line).collect()
    }
}

impl DeltaCrl {
    pub(crate) fn signed(
        issuer_id: &str,
        crl_number: u64,
        base_crl_number: u64,
        entries: Vec<RevocationEntry>,
        issued_at: Tick,
        key: &KeyPair,
    ) -> Self {
        let mut delta = Self {
            issuer_id: issuer_id.to_string(),
            crl_number,
            base_crl_number,
            entries: sorted(entries),
            issued_at,
            signature: Signature([0; 64]),
        };
        delta.signature = key.sign(&delta.to_be_signed());
        delta
    }

    pub fn to_be_signed(&self) -> Vec<u8> {
        TlvWriter::new()
            .str(1, "delta-crl")
            .str(2, &self.issuer_id)
            .u64(3, self.crl_number)
            .u64(4, self.base_crl_number)
            .list(5, self.entries.iter().map(RevocationEntry::encode))
            .u64(6, self.issued_at)
            .finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        TlvWriter::new()
            .bytes(1, &self.to_be_signed())
            .bytes(2, &self.signature.0)
            .finish()
    }

    pub fn verify(&self, issuer_key: &PublicKey) -> bool {
        verify(issuer_key, &self.to_be_signed(), &self.signature)
    }

    /// Entries of `base` plus this delta. `None` when `base` is not the list
    /// this delta was computed against.
    pub fn apply_to(&self, base: &Crl) -> Option<Vec<RevocationEntry>> {
        if base.issuer_id != self.issuer_id || base.crl_number != self.base_crl_number {
            return None;
        }
        let mut merged: BTreeMap<Serial, RevocationEntry> =
            base.entries.iter().map(|e| (e.serial, *e)).collect();
        merged.extend(self.entries.iter().map(|e| (e.serial, *e)));
        Some(merged.into_values().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RevocationList {
    Full(Crl),
    Delta(DeltaCrl),
}

impl RevocationList {
    pub fn issuer_id(&self) -> &str {
        match self {
            RevocationList::Full(c) => &c.issuer_id,
            RevocationList::Delta(d) => &d.issuer_id,
        }
    }

    pub fn crl_number(&self) -> u64 {
        match self {
            RevocationList::Full(c) => c.crl_number,
            RevocationList::Delta(d) => d.crl_number,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            RevocationList::Full(c) => TlvWriter::new().bytes(1, &c.to_bytes()).finish(),
            RevocationList::Delta(d) => TlvWriter::new().bytes(2, &d.to_bytes()).finish(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewUpdate {
    Applied,
    /// Not newer than what the view already holds.
    Stale,
    /// A delta whose base is newer than the view; a full list is needed.
    NeedsBase,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RevocationError {
    #[error("revocation list from unrecognized issuer {0}")]
    UnknownIssuer(String),
    #[error("revocation list signature does not verify for issuer {0}")]
    BadSignature(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct IssuerRevocations {
    crl_number: u64,
    entries: BTreeMap<Serial, RevocationEntry>,
    // Signed material backing the entries, kept for forwarding.
    base: Option<Crl>,
    deltas: Vec<DeltaCrl>,
}

/// A relying party's merged revocation knowledge, per issuer, at the highest
/// list number seen.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RevocationView {
    issuers: BTreeMap<String, IssuerRevocations>,
}

impl RevocationView {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn crl_number(&self, issuer_id: &str) -> Option<u64> {
        self.issuers.get(issuer_id).map(|i| i.crl_number)
    }

    pub fn is_revoked(&self, issuer_id: &str, serial: &Serial) -> Option<&RevocationEntry> {
        self.issuers.get(issuer_id)?.entries.get(serial)
    }

    pub fn entries(&self, issuer_id: &str) -> impl Iterator<Item = &RevocationEntry> {
        self.issuers.get(issuer_id).into_iter().flat_map(|i| i.entries.values())
    }

    fn issuer_key(anchors: &TrustAnchors, issuer_id: &str) -> Result<PublicKey, RevocationError> {
        anchors
            .get(issuer_id)
            .map(|root| root.subject_public_key)
            .ok_or_else(|| RevocationError::UnknownIssuer(issuer_id.to_string()))
    }

    pub fn apply(
        &mut self,
        list: &RevocationList,
        anchors: &TrustAnchors,
    ) -> Result<ViewUpdate, RevocationError> {
        match list {
            RevocationList::Full(crl) => self.apply_crl(crl, anchors),
            RevocationList::Delta(delta) => self.apply_delta(delta, anchors),
        }
    }

    pub fn apply_crl(&mut self, crl: &Crl, anchors: &TrustAnchors) -> Result<ViewUpdate, RevocationError> {
        let key = Self::issuer_key(anchors, &crl.issuer_id)?;
        if !crl.verify(&key) {
            return Err(RevocationError::BadSignature(crl.issuer_id.clone()));
        }
        let state = self.issuers.entry(crl.issuer_id.clone()).or_default();
        if state.base.is_some() && crl.crl_number <= state.crl_number {
            return Ok(ViewUpdate::Stale);
        }
        // Lists only ever grow, so a newer full list supersedes what we hold.
        state.crl_number = crl.crl_number;
        state.entries = crl.entries.iter().map(|e| (e.serial, *e)).collect();
        state.base = Some(crl.clone());
        state.deltas.clear();
        Ok(ViewUpdate::Applied)
    }

    pub fn apply_delta(
        &mut self,
        delta: &DeltaCrl,
        anchors: &TrustAnchors,
    ) -> Result<ViewUpdate, RevocationError> {
        let key = Self::issuer_key(anchors, &delta.issuer_id)?;
        if !delta.verify(&key) {
            return Err(RevocationError::BadSignature(delta.issuer_id.clone()));
        }
        let Some(state) = self.issuers.get_mut(&delta.issuer_id).filter(|s| s.base.is_some()) else {
            return Ok(ViewUpdate::NeedsBase);
        };
        if delta.crl_number <= state.crl_number {
            return Ok(ViewUpdate::Stale);
        }
        if delta.base_crl_number > state.crl_number {
            return Ok(ViewUpdate::NeedsBase);
        }
        state.crl_number = delta.crl_number;
        state.entries.extend(delta.entries.iter().map(|e| (e.serial, *e)));
        state.deltas.push(delta.clone());
        Ok(ViewUpdate::Applied)
    }

    /// Signed lists backing this view, in application order, for handing to
    /// a peer.
    pub fn export(&self) -> Vec<RevocationList> {
        self.issuers
            .values()
            .flat_map(|s| {
                s.base
                    .iter()
                    .cloned()
                    .map(RevocationList::Full)
                    .chain(s.deltas.iter().cloned().map(RevocationList::Delta))
            })
            .collect()
    }

    /// Applies every list a peer exported. Lists that fail verification are
    /// skipped and counted.
    pub fn merge_from(&mut self, lists: &[RevocationList], anchors: &TrustAnchors) -> MergeSummary {
        let mut summary = MergeSummary::default();
        for list in lists {
            match self.apply(list, anchors) {
                Ok(ViewUpdate::Applied) => summary.applied += 1,
                Ok(ViewUpdate::Stale) => summary.stale += 1,
                Ok(ViewUpdate::NeedsBase) => summary.needs_base += 1,
                Err(_) => summary.rejected += 1,
            }
        }
        summary
    }

    /// Canonical bytes of the revoked entry sets, per issuer. List numbers
    /// are left out so views built from different list sequences compare
    /// on content.
    pub fn entries_bytes(&self) -> Vec<u8> {
        encode_list(self.issuers.iter().map(|(issuer, s)| {
            TlvWriter::new()
                .str(1, issuer)
                .list(2, s.entries.values().map(RevocationEntry::encode))
                .finish()
        }))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MergeSummary {
    pub applied: usize,
    pub stale: usize,
    pub needs_base: usize,
    pub rejected: usize,
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::ca::{CertClass, CertificateAuthority, CertificateProfile, RevocationReason, Validity};
    use crate::crypto::derive_keypair;

    fn ca(id: &str) -> CertificateAuthority {
        CertificateAuthority::new(id, derive_keypair(id.as_bytes()), Validity::new(0, 10_000).unwrap(), 1).unwrap()
    }

    fn issue(ca: &mut CertificateAuthority, n: usize) -> Vec<Serial> {
        let attrs = [("name", "S"), ("email", "s@example.org")].map(|(k, v)| (k.to_string(), v.to_string()));
        (0..n)
            .map(|i| {
                let id = format!("{}-s{i}", ca.id());
                let reg = ca.register_subject(&id, &attrs.iter().cloned().collect(), CertClass::Class1, 0).unwrap();
                ca.issue_certificate(
                    &reg,
                    derive_keypair(id.as_bytes()).public_key(),
                    CertificateProfile::new("p", CertClass::Class1),
                    Validity::new(0, 1_000).unwrap(),
                    0,
                )
                .unwrap()
                .serial
            })
            .collect()
    }

    fn anchors(cas: &[&CertificateAuthority]) -> TrustAnchors {
        let mut a = TrustAnchors::new();
        for ca in cas {
            a.add(ca.root().clone());
        }
        a
    }

    #[test]
    fn delta_before_base_needs_base() {
        let mut ca = ca("ca");
        let serials = issue(&mut ca, 2);
        let base = ca.generate_crl(0);
        ca.revoke(&serials[0], RevocationReason::KeyCompromise, 1).unwrap();
        let delta = ca.generate_delta_crl(base.crl_number, 2).unwrap();
        let anchors = anchors(&[&ca]);
        let mut view = RevocationView::new();
        assert_eq!(view.apply_delta(&delta, &anchors), Ok(ViewUpdate::NeedsBase));
        assert_eq!(view.apply_crl(&base, &anchors), Ok(ViewUpdate::Applied));
        assert_eq!(view.apply_delta(&delta, &anchors), Ok(ViewUpdate::Applied));
        assert_eq!(view.apply_delta(&delta, &anchors), Ok(ViewUpdate::Stale));
        assert_eq!(view.apply_crl(&base, &anchors), Ok(ViewUpdate::Stale));
        assert!(view.is_revoked("ca", &serials[0]).is_some());
        assert!(view.is_revoked("ca", &serials[1]).is_none());
        assert_eq!(view.crl_number("ca"), Some(delta.crl_number));
    }

    #[test]
    fn delta_against_unseen_base_is_deferred() {
        let mut ca = ca("ca");
        let serials = issue(&mut ca, 2);
        let first = ca.generate_crl(0);
        ca.revoke(&serials[0], RevocationReason::KeyCompromise, 1).unwrap();
        let second = ca.generate_crl(1);
        ca.revoke(&serials[1], RevocationReason::Superseded, 2).unwrap();
        let delta = ca.generate_delta_crl(second.crl_number, 3).unwrap();
        let anchors = anchors(&[&ca]);
        let mut view = RevocationView::new();
        view.apply_crl(&first, &anchors).unwrap();
        assert_eq!(view.apply_delta(&delta, &anchors), Ok(ViewUpdate::NeedsBase));
        assert!(delta.apply_to(&first).is_none());
        assert_eq!(delta.apply_to(&second).map(|e| e.len()), Some(2));
    }

    #[test]
    fn forged_and_foreign_lists_are_rejected() {
        let mut ca_a = ca("ca-a");
        let mut ca_b = ca("ca-b");
        let anchors_a = anchors(&[&ca_a]);
        let mut view = RevocationView::new();
        let foreign = ca_b.generate_crl(0);
        assert!(matches!(view.apply_crl(&foreign, &anchors_a), Err(RevocationError::UnknownIssuer(_))));
        let mut forged = ca_a.generate_crl(0);
        forged.crl_number += 1;
        assert!(matches!(view.apply_crl(&forged, &anchors_a), Err(RevocationError::BadSignature(_))));
        assert_eq!(view, RevocationView::new());
    }

    #[test]
    fn export_and_merge_reproduce_the_view() {
        let mut ca_a = ca("ca-a");
        let mut ca_b = ca("ca-b");
        let sa = issue(&mut ca_a, 3);
        let sb = issue(&mut ca_b, 2);
        let anchors = anchors(&[&ca_a, &ca_b]);
        let mut source = RevocationView::new();
        source.apply(&ca_a.revocation_list_since(None, 0), &anchors).unwrap();
        source.apply(&ca_b.revocation_list_since(None, 0), &anchors).unwrap();
        ca_a.revoke(&sa[1], RevocationReason::KeyCompromise, 1).unwrap();
        ca_b.revoke(&sb[0], RevocationReason::CessationOfOperation, 1).unwrap();
        for ca in [&mut ca_a, &mut ca_b] {
            let have = source.crl_number(ca.id());
            let list = ca.revocation_list_since(have, 2);
            assert!(matches!(list, RevocationList::Delta(_)));
            assert_eq!(source.apply(&list, &anchors), Ok(ViewUpdate::Applied));
        }
        let mut peer = RevocationView::new();
        let summary = peer.merge_from(&source.export(), &anchors);
        assert_eq!(summary, MergeSummary { applied: 4, ..Default::default() });
        assert_eq!(peer.entries_bytes(), source.entries_bytes());
        assert_eq!(peer.merge_from(&source.export(), &anchors).stale, 4);
        assert_eq!(peer.entries("ca-a").count(), 1);
    }

    proptest! {
        #[test]
        fn delta_chain_matches_full_list(batches in prop::collection::vec(prop::collection::vec(0usize..8, 0..4), 1..6)) {
            let mut ca = ca("ca");
            let serials = issue(&mut ca, 8);
            let anchors = anchors(&[&ca]);
            let mut incremental = RevocationView::new();
            incremental.apply(&ca.revocation_list_since(None, 0), &anchors).unwrap();
            for (tick, batch) in batches.iter().enumerate() {
                for &i in batch {
                    let _ = ca.revoke(&serials[i], RevocationReason::KeyCompromise, tick as Tick);
                }
                let list = ca.revocation_list_since(incremental.crl_number("ca"), tick as Tick);
                prop_assert_eq!(incremental.apply(&list, &anchors), Ok(ViewUpdate::Applied));
            }
            let mut full = RevocationView::new();
            full.apply_crl(&ca.generate_crl(99), &anchors).unwrap();
            prop_assert_eq!(incremental.entries_bytes(), full.entries_bytes());
            prop_assert_eq!(full.entries("ca").count(), ca.revoked_serials().len());
        }
    }
}
