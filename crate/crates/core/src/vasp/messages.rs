//! Off-chain travel-rule messages between originator and beneficiary VASPs.

use std::fmt;

use super::account::{CustodyModel, KeyOperatorEvidence};
use crate::assertion::AttributeAssertion;
use crate::ca::Certificate;
use crate::crypto::{verify, Hash32, KeyPair, PublicKey, Signature, TlvWriter};
use crate::Tick;

/// What the originator knows about where the funds should go.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransferTarget {
    PublicKey(PublicKey),
    KeyHash(Hash32),
    Account { vasp_id: String, account_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeneficiaryRef {
    pub public_key_hash: Hash32,
    pub account_id: Option<String>,
}

impl BeneficiaryRef {
    pub fn encode(&self) -> Vec<u8> {
        TlvWriter::new()
            .bytes(1, &self.public_key_hash.0)
            .opt(2, self.account_id.as_deref().map(str::as_bytes))
            .finish()
    }
}

/// Key ownership facts about one party, backed by `certificate`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartyEvidence {
    pub custody_model: CustodyModel,
    pub certificate: Certificate,
    pub key_ownership: Option<Hash32>,
    pub key_operator: Option<KeyOperatorEvidence>,
}

impl PartyEvidence {
    pub fn encode(&self) -> Vec<u8> {
        TlvWriter::new()
            .str(1, self.custody_model.as_str())
            .bytes(2, &self.certificate.to_bytes())
            .opt(3, self.key_ownership.as_ref().map(|h| h.0.as_slice()))
            .opt(4, self.key_operator.as_ref().map(KeyOperatorEvidence::encode).as_deref())
            .finish()
    }
}

/// One customer transfer folded into a commingled transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchEntry {
    pub beneficiary_ref: BeneficiaryRef,
    pub amount: u64,
    pub originator_assertion: AttributeAssertion,
    pub originator_evidence: PartyEvidence,
}

impl BatchEntry {
    pub fn encode(&self) -> Vec<u8> {
        TlvWriter::new()
            .bytes(1, &self.beneficiary_ref.encode())
            .u64(2, self.amount)
            .bytes(3, &self.originator_assertion.to_bytes())
            .bytes(4, &self.originator_evidence.encode())
            .finish()
    }
}

/// A party's slice of a notice, whether plain or batched.
#[derive(Debug, Clone, Copy)]
pub struct NoticeParty<'a> {
    pub beneficiary_ref: &'a BeneficiaryRef,
    pub amount: u64,
    pub originator_assertion: Option<&'a AttributeAssertion>,
    pub originator_evidence: Option<&'a PartyEvidence>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferNotice {
    pub notice_id: [u8; 16],
    pub originator_vasp_id: String,
    pub beneficiary_vasp_id: String,
    /// Absent for batches, whose entries each carry their own.
    pub originator_assertion: Option<AttributeAssertion>,
    pub originator_evidence: Option<PartyEvidence>,
    /// The on-chain recipient.
    pub beneficiary_ref: BeneficiaryRef,
    pub asset_type: String,
    pub amount: u64,
    pub execution_tick: Tick,
    pub intended_chain_tx_binding: Hash32,
    pub batch_entries: Option<Vec<BatchEntry>>,
    pub originator_vasp_signature: Signature,
}

impl TransferNotice {
    pub fn to_be_signed(&self) -> Vec<u8> {
        let batch = self
            .batch_entries
            .as_ref()
            .map(|entries| crate::crypto::encode_list(entries.iter().map(BatchEntry::encode)));
        TlvWriter::new()
            .bytes(1, &self.notice_id)
            .str(2, &self.originator_vasp_id)
            .str(3, &self.beneficiary_vasp_id)
            .opt(4, self.originator_assertion.as_ref().map(AttributeAssertion::to_bytes).as_deref())
            .opt(5, self.originator_evidence.as_ref().map(PartyEvidence::encode).as_deref())
            .bytes(6, &self.beneficiary_ref.encode())
            .str(7, &self.asset_type)
            .u64(8, self.amount)
            .u64(9, self.execution_tick)
            .bytes(10, &self.intended_chain_tx_binding.0)
            .opt(11, batch.as_deref())
            .finish()
    }

    pub fn sign(&mut self, key: &KeyPair) {
        self.originator_vasp_signature = key.sign(&self.to_be_signed());
    }

    pub fn verify(&self, originator_vasp_key: &PublicKey) -> bool {
        verify(originator_vasp_key, &self.to_be_signed(), &self.originator_vasp_signature)
    }

    /// True unless batch entries are present and do not add up to `amount`.
    pub fn sum_holds(&self) -> bool {
        match &self.batch_entries {
            None => true,
            Some(entries) => {
                entries.iter().try_fold(0u64, |acc, e| acc.checked_add(e.amount)) == Some(self.amount)
            }
        }
    }

    pub fn parties(&self) -> Vec<NoticeParty<'_>> {
        match &self.batch_entries {
            Some(entries) => entries
                .iter()
                .map(|e| NoticeParty {
                    beneficiary_ref: &e.beneficiary_ref,
                    amount: e.amount,
                    originator_assertion: Some(&e.originator_assertion),
                    originator_evidence: Some(&e.originator_evidence),
                })
                .collect(),
            None => vec![NoticeParty {
                beneficiary_ref: &self.beneficiary_ref,
                amount: self.amount,
                originator_assertion: self.originator_assertion.as_ref(),
                originator_evidence: self.originator_evidence.as_ref(),
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoticeEnvelope {
    pub notice: TransferNotice,
    pub originator_vasp_certificate: Certificate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RejectReason {
    UnknownBeneficiary,
    SuspectParty,
    CertInvalid,
    PolicyRefusal,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::UnknownBeneficiary => "unknown_beneficiary",
            RejectReason::SuspectParty => "suspect_party",
            RejectReason::CertInvalid => "cert_invalid",
            RejectReason::PolicyRefusal => "policy_refusal",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckDecision {
    Accept,
    Reject(RejectReason),
}

/// What the beneficiary VASP discloses about each beneficiary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeneficiaryEvidence {
    pub assertion: AttributeAssertion,
    pub evidence: PartyEvidence,
}

impl BeneficiaryEvidence {
    pub fn encode(&self) -> Vec<u8> {
        TlvWriter::new()
            .bytes(1, &self.assertion.to_bytes())
            .bytes(2, &self.evidence.encode())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferAck {
    pub notice_id: [u8; 16],
    pub decision: AckDecision,
    /// One per notice party, in notice order. Empty on reject.
    pub beneficiaries: Vec<BeneficiaryEvidence>,
    pub beneficiary_vasp_id: String,
    pub beneficiary_vasp_signature: Signature,
}

impl TransferAck {
    pub fn to_be_signed(&self) -> Vec<u8> {
        let decision = match self.decision {
            AckDecision::Accept => "accept",
            AckDecision::Reject(r) => r.as_str(),
        };
        TlvWriter::new()
            .bytes(1, &self.notice_id)
            .str(2, decision)
            .list(3, self.beneficiaries.iter().map(BeneficiaryEvidence::encode))
            .str(4, &self.beneficiary_vasp_id)
            .finish()
    }

    pub fn sign(&mut self, key: &KeyPair) {
        self.beneficiary_vasp_signature = key.sign(&self.to_be_signed());
    }

    pub fn verify(&self, beneficiary_vasp_key: &PublicKey) -> bool {
        verify(beneficiary_vasp_key, &self.to_be_signed(), &self.beneficiary_vasp_signature)
    }

    pub fn is_accept(&self) -> bool {
        self.decision == AckDecision::Accept
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AckEnvelope {
    pub ack: TransferAck,
    pub beneficiary_vasp_certificate: Certificate,
}
