//! Payloads exchanged between VASP nodes and the signed envelope they
//! travel in.

use crate::ca::RevocationList;
use crate::crypto::{verify, KeyPair, PublicKey, Signature, TlvWriter};
use crate::network::{DirectorySnapshot, GossipItem, ReachabilityAdvertisement};
use crate::vasp::{AckEnvelope, NoticeEnvelope};
use crate::Tick;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Notice(Box<NoticeEnvelope>),
    Ack(Box<AckEnvelope>),
    Gossip { network: String, items: Vec<GossipItem> },
    ResyncRequest { network: String, publisher: String },
    ResyncResponse { network: String, snapshot: DirectorySnapshot },
    CrlExchange { lists: Vec<RevocationList> },
    Advertisement { link_index: usize, advertisement: ReachabilityAdvertisement },
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Notice(_) => "notice",
            Payload::Ack(_) => "ack",
            Payload::Gossip { .. } => "gossip",
            Payload::ResyncRequest { .. } => "resync_request",
            Payload::ResyncResponse { .. } => "resync_response",
            Payload::CrlExchange { .. } => "crl_exchange",
            Payload::Advertisement { .. } => "advertisement",
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let w = TlvWriter::new().str(1, self.kind());
        match self {
            Payload::Notice(env) => w
                .bytes(2, &env.notice.to_be_signed())
                .bytes(3, &env.notice.originator_vasp_signature.0)
                .bytes(4, &env.originator_vasp_certificate.to_bytes()),
            Payload::Ack(env) => w
                .bytes(2, &env.ack.to_be_signed())
                .bytes(3, &env.ack.beneficiary_vasp_signature.0)
                .bytes(4, &env.beneficiary_vasp_certificate.to_bytes()),
            Payload::Gossip { network, items } => {
                w.str(2, network).list(3, items.iter().map(GossipItem::to_bytes))
            }
            Payload::ResyncRequest { network, publisher } => w.str(2, network).str(3, publisher),
            Payload::ResyncResponse { network, snapshot } => w.str(2, network).bytes(3, &snapshot.to_bytes()),
            Payload::CrlExchange { lists } => w.list(2, lists.iter().map(RevocationList::to_bytes)),
            Payload::Advertisement { link_index, advertisement } => {
                w.u64(2, *link_index as u64).bytes(3, &advertisement.to_bytes())
            }
        }
        .finish()
    }
}

/// A payload signed by its sender for one recipient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub from: String,
    pub to: String,
    pub sent_at: Tick,
    pub payload: Payload,
    pub signature: Signature,
}

impl Message {
    fn signing_bytes(from: &str, to: &str, sent_at: Tick, payload: &Payload) -> Vec<u8> {
        TlvWriter::new()
            .str(1, from)
            .str(2, to)
            .u64(3, sent_at)
            .bytes(4, &payload.to_bytes())
            .finish()
    }

    pub fn signed(from: &str, to: &str, sent_at: Tick, payload: Payload, key: &KeyPair) -> Self {
        let signature = key.sign(&Self::signing_bytes(from, to, sent_at, &payload));
        Self { from: from.to_string(), to: to.to_string(), sent_at, payload, signature }
    }

    pub fn verify(&self, sender_key: &PublicKey) -> bool {
        verify(
            sender_key,
            &Self::signing_bytes(&self.from, &self.to, self.sent_at, &self.payload),
            &self.signature,
        )
    }
}
