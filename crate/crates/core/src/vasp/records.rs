//! Travel-rule records, their status machine, reconciliation against the
//! ledger and the audit of confirmed records.

use std::collections::BTreeSet;
use std::fmt;

use super::account::{Account, CustodyModel};
use super::messages::{PartyEvidence, RejectReason, TransferAck, TransferNotice};
use crate::chain::Ledger;
use crate::crypto::{Hash32, PublicKey};
use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    OriginatorSide,
    BeneficiarySide,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::OriginatorSide => "originator",
            Role::BeneficiarySide => "beneficiary",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CertRole {
    OriginatorCustomer,
    OriginatorVasp,
    BeneficiaryVasp,
    Beneficiary,
}

impl CertRole {
    pub fn as_str(self) -> &'static str {
        match self {
            CertRole::OriginatorCustomer => "originator_customer",
            CertRole::OriginatorVasp => "originator_vasp",
            CertRole::BeneficiaryVasp => "beneficiary_vasp",
            CertRole::Beneficiary => "beneficiary",
        }
    }
}

/// Why a transfer did not go ahead or a record failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DenyReason {
    NoOriginatorCert,
    BeneficiaryUnresolved,
    CertInvalid(CertRole),
    SuspectParty,
    AckRejected(RejectReason),
    ChannelTimeout,
    AckInvalid,
    KeyUnavailable,
    MixedDestination,
    InvalidAmount,
    UnknownAccount,
    ChainRejected,
    BindingMismatch,
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenyReason::NoOriginatorCert => f.write_str("no_originator_cert"),
            DenyReason::BeneficiaryUnresolved => f.write_str("beneficiary_unresolved"),
            DenyReason::CertInvalid(r) => write!(f, "cert_invalid({})", r.as_str()),
            DenyReason::SuspectParty => f.write_str("suspect_party"),
            DenyReason::AckRejected(r) => write!(f, "ack_rejected({r})"),
            DenyReason::ChannelTimeout => f.write_str("channel_timeout"),
            DenyReason::AckInvalid => f.write_str("ack_invalid"),
            DenyReason::KeyUnavailable => f.write_str("key_unavailable"),
            DenyReason::MixedDestination => f.write_str("mixed_destination"),
            DenyReason::InvalidAmount => f.write_str("invalid_amount"),
            DenyReason::UnknownAccount => f.write_str("unknown_account"),
            DenyReason::ChainRejected => f.write_str("chain_rejected"),
            DenyReason::BindingMismatch => f.write_str("binding_mismatch"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordStatus {
    PendingAck,
    PendingChain,
    Confirmed,
    Failed(DenyReason),
}

impl RecordStatus {
    pub fn is_open(self) -> bool {
        matches!(self, RecordStatus::PendingAck | RecordStatus::PendingChain)
    }

    /// Forward moves only: PendingAck, PendingChain, Confirmed, with Failed
    /// reachable from either pending state.
    pub fn can_move_to(self, next: RecordStatus) -> bool {
        matches!(
            (self, next),
            (RecordStatus::PendingAck, RecordStatus::PendingChain)
                | (RecordStatus::PendingChain, RecordStatus::Confirmed)
                | (RecordStatus::PendingAck | RecordStatus::PendingChain, RecordStatus::Failed(_))
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TravelRuleRecord {
    pub record_id: [u8; 16],
    pub role: Role,
    pub notice: TransferNotice,
    pub ack: Option<TransferAck>,
    pub chain_tx_id: Option<Hash32>,
    pub status: RecordStatus,
    pub created_at: Tick,
    pub updated_at: Tick,
}

impl TravelRuleRecord {
    /// Moves to `next` if the transition is allowed. Returns whether it
    /// moved.
    pub fn transition(&mut self, next: RecordStatus, now: Tick) -> bool {
        if !self.status.can_move_to(next) {
            return false;
        }
        self.status = next;
        self.updated_at = now;
        true
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReconciliationReport {
    pub matched: usize,
    pub orphan_chain_txs: Vec<Hash32>,
    pub unconfirmed_records: Vec<[u8; 16]>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Violation {
    /// Notice id, or the account id for custody violations.
    pub subject: String,
    pub field: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub records_checked: usize,
    pub violations: Vec<Violation>,
}

/// Cross-joins ledger transactions touching `known_keys` with records.
pub fn reconcile<'a>(
    records: impl Iterator<Item = &'a TravelRuleRecord> + Clone,
    known_keys: &BTreeSet<PublicKey>,
    ledger: &Ledger,
) -> ReconciliationReport {
    let confirmed: BTreeSet<Hash32> = records
        .clone()
        .filter(|r| r.status == RecordStatus::Confirmed)
        .filter_map(|r| r.chain_tx_id)
        .collect();
    let mut report = ReconciliationReport::default();
    for (_, tx) in ledger.transactions() {
        if !known_keys.contains(&tx.from_public_key()) && !known_keys.contains(&tx.to_public_key()) {
            continue;
        }
        if confirmed.contains(&tx.tx_id()) {
            report.matched += 1;
        } else {
            report.orphan_chain_txs.push(tx.tx_id());
        }
    }
    report.unconfirmed_records = records.filter(|r| r.status.is_open()).map(|r| r.record_id).collect();
    report
}

fn check_evidence(fields: &mut Vec<String>, side: &str, evidence: Option<&PartyEvidence>) {
    let Some(e) = evidence else {
        fields.push(format!("{side}.evidence"));
        return;
    };
    if e.key_ownership.is_none() {
        fields.push(format!("{side}.key_ownership_evidence"));
    }
    if e.custody_model == CustodyModel::KeyCustody && e.key_operator.is_none() {
        fields.push(format!("{side}.key_operator_evidence"));
    }
}

/// Fields a confirmed record is missing.
pub fn record_gaps(record: &TravelRuleRecord) -> Vec<String> {
    let mut fields = Vec::new();
    let n = &record.notice;
    if n.originator_vasp_id.is_empty() {
        fields.push("originator_vasp_id".to_string());
    }
    if n.beneficiary_vasp_id.is_empty() {
        fields.push("beneficiary_vasp_id".to_string());
    }
    if n.amount == 0 || !n.sum_holds() {
        fields.push("amount".to_string());
    }
    if n.execution_tick > record.updated_at {
        fields.push("execution_tick".to_string());
    }
    if record.chain_tx_id != Some(n.intended_chain_tx_binding) {
        fields.push("chain_tx_binding".to_string());
    }
    let parties = n.parties();
    let beneficiaries = record.ack.as_ref().map(|a| a.beneficiaries.as_slice()).unwrap_or_default();
    if beneficiaries.len() != parties.len() {
        fields.push("beneficiary_assertion".to_string());
    }
    for (i, party) in parties.iter().enumerate() {
        if party.originator_assertion.is_none() {
            fields.push("originator_assertion".to_string());
        }
        check_evidence(&mut fields, "originator", party.originator_evidence);
        if let Some(b) = beneficiaries.get(i) {
            check_evidence(&mut fields, "beneficiary", Some(&b.evidence));
        }
    }
    fields
}

/// Confirms each confirmed record carries everything a regulator would ask
/// for, and that accounts keep their custody invariants.
pub fn audit<'a>(
    records: impl Iterator<Item = &'a TravelRuleRecord>,
    accounts: impl Iterator<Item = &'a Account>,
) -> AuditReport {
    let mut report = AuditReport::default();
    for record in records.filter(|r| r.status == RecordStatus::Confirmed) {
        report.records_checked += 1;
        let subject = hex::encode(record.notice_id());
        report
            .violations
            .extend(record_gaps(record).into_iter().map(|field| Violation { subject: subject.clone(), field }));
    }
    for account in accounts {
        for field in account.custody_violations() {
            report.violations.push(Violation { subject: account.account_id.clone(), field: field.to_string() });
        }
    }
    report.violations.sort();
    report
}

impl TravelRuleRecord {
    pub fn notice_id(&self) -> [u8; 16] {
        self.notice.notice_id
    }
}
