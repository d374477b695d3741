//! A VASP node: customer accounts under three custody models, beneficiary
//! resolution, the notice/ack exchange that precedes every on-chain
//! transfer, and the records kept for reconciliation and audit.

mod account;
mod messages;
mod node;
mod records;

use thiserror::Error;

use crate::ca::CaError;

pub use account::{Account, CustodyModel, KeyOperatorEvidence, PartyRef, SuspectList};
pub use messages::{
    AckDecision, AckEnvelope, BatchEntry, BeneficiaryEvidence, BeneficiaryRef, NoticeEnvelope, NoticeParty,
    PartyEvidence, RejectReason, TransferAck, TransferNotice, TransferTarget,
};
pub use node::{
    NodeConfig, NodeContext, QueryAnswer, ResolutionSource, ResolvedBeneficiary, TransferOutcome, TransferRequest,
    Unresolved, VaspNode, DEFAULT_CHAIN_LABEL,
};
pub use records::{
    audit, reconcile, record_gaps, AuditReport, CertRole, DenyReason, ReconciliationReport, RecordStatus, Role,
    TravelRuleRecord, Violation,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VaspError {
    #[error("key material does not fit custody model {0}")]
    ModelKeyMismatch(CustodyModel),
    #[error("commingled accounts have no customer key to certify")]
    NoCustomerKey,
    #[error("account {0} already exists")]
    DuplicateAccount(String),
    #[error("unknown account {0}")]
    UnknownAccount(String),
    #[error("key does not match the account or certificate")]
    WalletMismatch,
    #[error(transparent)]
    Ca(#[from] CaError),
}
