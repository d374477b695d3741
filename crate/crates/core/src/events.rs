//! Everything that happens during a run, as typed records with a canonical
//! encoding for the log digest.

use crate::ca::{RevocationReason, Serial};
use crate::crypto::{Hash32, PublicKey, TlvWriter};
use crate::vasp::{CustodyModel, DenyReason, RejectReason, Role};

pub type TransferId = [u8; 16];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    VaspRegistered { vasp: String, public_key: PublicKey },
    MemberJoined { network: String, vasp: String },
    AccountOpened { account: String, custody: CustodyModel, public_key: Option<PublicKey> },
    CertificateEnrolled { account: String, serial: Serial },
    CertificateRevoked { ca: String, serial: Serial, reason: RevocationReason },
    TransferRequested { transfer_id: TransferId, entries: usize, amount: u64 },
    BeneficiaryResolved { transfer_id: TransferId, home_vasp: String, source: String, path: Vec<String> },
    ResolutionFailed { transfer_id: TransferId, partial_path: Vec<String> },
    DirectoryInconsistency { publisher: String, key_hash: Hash32 },
    TransferDenied { transfer_id: TransferId, reason: DenyReason },
    NoticeSent { transfer_id: TransferId, to: String, binding: Hash32 },
    NoticeDropped { from: String, why: String },
    AckSent { transfer_id: TransferId, to: String, reject: Option<RejectReason> },
    AckAccepted { transfer_id: TransferId, binding: Hash32 },
    AckIgnored { transfer_id: TransferId },
    ChainSubmitted { transfer_id: TransferId, tx_id: Hash32, from_key: PublicKey },
    RecordConfirmed { transfer_id: TransferId, role: Role },
    RecordFailed { transfer_id: TransferId, role: Role, reason: DenyReason },
    TransferConfirmed { transfer_id: TransferId },
    UnmatchedConfirmation { tx_id: Hash32 },
    P2pSubmitted { tx_id: Hash32 },
    BlockSealed { height: u64, block_hash: Hash32, txs: usize },
    DirectoryPublished { network: String, version: u64, entries: usize },
    GossipApplied { network: String, publisher: String, version: u64 },
    ResyncRequested { network: String, publisher: String },
    CrlMerged { applied: usize, stale: usize, needs_base: usize, rejected: usize, purged: usize },
    AdvertisementOriginated { network: String, seq: u64, hashes: usize },
    AdvertisementAccepted { network: String, origin: String, path: Vec<String> },
    AdvertisementDropped { network: String, reason: String },
    LinkDown { link: usize },
    LinkUp { link: usize },
    MessageDropped { to: String, kind: String },
    MessageRejected { from: String, kind: String },
}

fn id(t: &TransferId) -> String {
    hex::encode(t)
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::VaspRegistered { .. } => "vasp_registered",
            Event::MemberJoined { .. } => "member_joined",
            Event::AccountOpened { .. } => "account_opened",
            Event::CertificateEnrolled { .. } => "certificate_enrolled",
            Event::CertificateRevoked { .. } => "certificate_revoked",
            Event::TransferRequested { .. } => "transfer_requested",
            Event::BeneficiaryResolved { .. } => "beneficiary_resolved",
            Event::ResolutionFailed { .. } => "resolution_failed",
            Event::DirectoryInconsistency { .. } => "directory_inconsistency",
            Event::TransferDenied { .. } => "transfer_denied",
            Event::NoticeSent { .. } => "notice_sent",
            Event::NoticeDropped { .. } => "notice_dropped",
            Event::AckSent { .. } => "ack_sent",
            Event::AckAccepted { .. } => "ack_accepted",
            Event::AckIgnored { .. } => "ack_ignored",
            Event::ChainSubmitted { .. } => "chain_submitted",
            Event::RecordConfirmed { .. } => "record_confirmed",
            Event::RecordFailed { .. } => "record_failed",
            Event::TransferConfirmed { .. } => "transfer_confirmed",
            Event::UnmatchedConfirmation { .. } => "unmatched_confirmation",
            Event::P2pSubmitted { .. } => "p2p_submitted",
            Event::BlockSealed { .. } => "block_sealed",
            Event::DirectoryPublished { .. } => "directory_published",
            Event::GossipApplied { .. } => "gossip_applied",
            Event::ResyncRequested { .. } => "resync_requested",
            Event::CrlMerged { .. } => "crl_merged",
            Event::AdvertisementOriginated { .. } => "advertisement_originated",
            Event::AdvertisementAccepted { .. } => "advertisement_accepted",
            Event::AdvertisementDropped { .. } => "advertisement_dropped",
            Event::LinkDown { .. } => "link_down",
            Event::LinkUp { .. } => "link_up",
            Event::MessageDropped { .. } => "message_dropped",
            Event::MessageRejected { .. } => "message_rejected",
        }
    }

    /// Field values in declaration order, rendered as text.
    pub fn fields(&self) -> Vec<String> {
        match self {
            Event::VaspRegistered { vasp, public_key } => vec![vasp.clone(), public_key.to_hex()],
            Event::MemberJoined { network, vasp } => vec![network.clone(), vasp.clone()],
            Event::AccountOpened { account, custody, public_key } => vec![
                account.clone(),
                custody.to_string(),
                public_key.map(|k| k.to_hex()).unwrap_or_default(),
            ],
            Event::CertificateEnrolled { account, serial } => vec![account.clone(), serial.to_hex()],
            Event::CertificateRevoked { ca, serial, reason } => {
                vec![ca.clone(), serial.to_hex(), reason.to_string()]
            }
            Event::TransferRequested { transfer_id, entries, amount } => {
                vec![id(transfer_id), entries.to_string(), amount.to_string()]
            }
            Event::BeneficiaryResolved { transfer_id, home_vasp, source, path } => {
                vec![id(transfer_id), home_vasp.clone(), source.clone(), path.join(">")]
            }
            Event::ResolutionFailed { transfer_id, partial_path } => vec![id(transfer_id), partial_path.join(">")],
            Event::DirectoryInconsistency { publisher, key_hash } => vec![publisher.clone(), key_hash.to_hex()],
            Event::TransferDenied { transfer_id, reason } => vec![id(transfer_id), reason.to_string()],
            Event::NoticeSent { transfer_id, to, binding } => vec![id(transfer_id), to.clone(), binding.to_hex()],
            Event::NoticeDropped { from, why } => vec![from.clone(), why.clone()],
            Event::AckSent { transfer_id, to, reject } => vec![
                id(transfer_id),
                to.clone(),
                reject.map(|r| r.to_string()).unwrap_or_else(|| "accept".into()),
            ],
            Event::AckAccepted { transfer_id, binding } => vec![id(transfer_id), binding.to_hex()],
            Event::AckIgnored { transfer_id } => vec![id(transfer_id)],
            Event::ChainSubmitted { transfer_id, tx_id, from_key } => {
                vec![id(transfer_id), tx_id.to_hex(), from_key.to_hex()]
            }
            Event::RecordConfirmed { transfer_id, role } => vec![id(transfer_id), role.as_str().into()],
            Event::RecordFailed { transfer_id, role, reason } => {
                vec![id(transfer_id), role.as_str().into(), reason.to_string()]
            }
            Event::TransferConfirmed { transfer_id } => vec![id(transfer_id)],
            Event::UnmatchedConfirmation { tx_id } => vec![tx_id.to_hex()],
            Event::P2pSubmitted { tx_id } => vec![tx_id.to_hex()],
            Event::BlockSealed { height, block_hash, txs } => {
                vec![height.to_string(), block_hash.to_hex(), txs.to_string()]
            }
            Event::DirectoryPublished { network, version, entries } => {
                vec![network.clone(), version.to_string(), entries.to_string()]
            }
            Event::GossipApplied { network, publisher, version } => {
                vec![network.clone(), publisher.clone(), version.to_string()]
            }
            Event::ResyncRequested { network, publisher } => vec![network.clone(), publisher.clone()],
            Event::CrlMerged { applied, stale, needs_base, rejected, purged } => vec![
                applied.to_string(),
                stale.to_string(),
                needs_base.to_string(),
                rejected.to_string(),
                purged.to_string(),
            ],
            Event::AdvertisementOriginated { network, seq, hashes } => {
                vec![network.clone(), seq.to_string(), hashes.to_string()]
            }
            Event::AdvertisementAccepted { network, origin, path } => {
                vec![network.clone(), origin.clone(), path.join(">")]
            }
            Event::AdvertisementDropped { network, reason } => vec![network.clone(), reason.clone()],
            Event::LinkDown { link } | Event::LinkUp { link } => vec![link.to_string()],
            Event::MessageDropped { to, kind } => vec![to.clone(), kind.clone()],
            Event::MessageRejected { from, kind } => vec![from.clone(), kind.clone()],
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        TlvWriter::new()
            .str(1, self.kind())
            .list(2, self.fields().iter().map(|f| f.as_bytes()))
            .finish()
    }
}
