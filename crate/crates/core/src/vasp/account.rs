use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ca::{Attributes, Certificate, Serial};
use crate::crypto::{Hash32, KeyPair, PublicKey, TlvWriter};
use crate::Tick;

/// Who holds the keys behind an account.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CustodyModel {
    /// The customer holds the key; the VASP relays signing requests to the
    /// customer's wallet.
    Mediated,
    /// The VASP holds the customer's key and signs on their behalf.
    KeyCustody,
    /// Customer funds sit under the VASP's own key.
    Commingled,
}

impl CustodyModel {
    pub fn as_str(self) -> &'static str {
        match self {
            CustodyModel::Mediated => "mediated",
            CustodyModel::KeyCustody => "key_custody",
            CustodyModel::Commingled => "commingled",
        }
    }
}

impl fmt::Display for CustodyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyOperatorEvidence {
    pub operator_vasp_id: String,
    pub custody_agreement_id: String,
    pub since_tick: Tick,
}

impl KeyOperatorEvidence {
    pub fn encode(&self) -> Vec<u8> {
        TlvWriter::new()
            .str(1, &self.operator_vasp_id)
            .str(2, &self.custody_agreement_id)
            .u64(3, self.since_tick)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct Account {
    pub account_id: String,
    pub subject_id: String,
    pub attributes: Attributes,
    pub custody_model: CustodyModel,
    pub customer_public_key: Option<PublicKey>,
    pub custodied_private_key: Option<KeyPair>,
    pub certificate: Option<Certificate>,
    pub key_ownership_evidence: Option<Hash32>,
    pub key_operator_evidence: Option<KeyOperatorEvidence>,
}

impl Account {
    pub fn certificate_serial(&self) -> Option<Serial> {
        self.certificate.as_ref().map(|c| c.serial)
    }

    /// Names of custody invariants the account breaks.
    pub fn custody_violations(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        match self.custody_model {
            CustodyModel::Mediated => {
                if self.customer_public_key.is_none() {
                    out.push("customer_public_key");
                }
                if self.custodied_private_key.is_some() {
                    out.push("custodied_private_key");
                }
            }
            CustodyModel::KeyCustody => {
                if self.customer_public_key.is_none() {
                    out.push("customer_public_key");
                }
                match (&self.custodied_private_key, self.customer_public_key) {
                    (None, _) => out.push("custodied_private_key"),
                    (Some(k), Some(pk)) if k.public_key() != pk => out.push("custodied_private_key"),
                    _ => {}
                }
                if self.key_operator_evidence.is_none() {
                    out.push("key_operator_evidence");
                }
            }
            CustodyModel::Commingled => {
                if self.customer_public_key.is_some() {
                    out.push("customer_public_key");
                }
                if self.custodied_private_key.is_some() {
                    out.push("custodied_private_key");
                }
            }
        }
        out
    }
}

/// Designated parties nobody may transact with.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SuspectList {
    key_hashes: BTreeSet<Hash32>,
    account_ids: BTreeSet<String>,
    version: u64,
}

impl SuspectList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn block_key_hash(&mut self, hash: Hash32) {
        if self.key_hashes.insert(hash) {
            self.version += 1;
        }
    }

    pub fn block_account(&mut self, account_id: impl Into<String>) {
        if self.account_ids.insert(account_id.into()) {
            self.version += 1;
        }
    }

    pub fn is_listed(&self, party: &PartyRef) -> bool {
        match party {
            PartyRef::KeyHash(h) => self.key_hashes.contains(h),
            PartyRef::Account(a) => self.account_ids.contains(a),
        }
    }

    /// True iff none of `parties` is listed.
    pub fn screen(&self, parties: &[PartyRef]) -> bool {
        !parties.iter().any(|p| self.is_listed(p))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartyRef {
    KeyHash(Hash32),
    Account(String),
}
