//! Scenario files: the TOML schema and its validation.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ca::{CertClass, RevocationReason};
use crate::vasp::CustodyModel;
use crate::Tick;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("cannot read scenario: {0}")]
    Io(String),
    #[error("scenario does not parse: {0}")]
    Parse(String),
    #[error("{context} refers to unknown {kind} `{id}`")]
    UnknownReference { kind: &'static str, id: String, context: String },
    #[error("script entry {index} at tick {tick} comes after tick {previous}")]
    DecreasingTick { index: usize, tick: Tick, previous: Tick },
    #[error("duplicate {kind} id `{id}`")]
    Duplicate { kind: &'static str, id: String },
    #[error("{0}")]
    Invalid(String),
}

fn default_max_latency() -> Tick {
    3
}

fn default_confirmation_delay() -> Tick {
    crate::chain::DEFAULT_CONFIRMATION_DELAY
}

fn default_asset() -> String {
    "SIM".to_string()
}

fn default_rules_version() -> u64 {
    1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RulesOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules_version: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimum_certificate_class: Option<CertClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub directory_sync_period: Option<Tick>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crl_exchange_period: Option<Tick>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ack_timeout: Option<Tick>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub id: String,
    pub recognized_cas: Vec<String>,
    #[serde(default)]
    pub rules: RulesOverride,
    /// Undirected gossip edges; every member pair when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gossip_edges: Option<Vec<(String, String)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaSpec {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaspSpec {
    pub id: String,
    pub ca: String,
    pub networks: Vec<String>,
    #[serde(default = "default_custody")]
    pub default_custody: CustodyModel,
    #[serde(default = "default_rules_version")]
    pub acked_rules_version: u64,
}

fn default_custody() -> CustodyModel {
    CustodyModel::Mediated
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeeringSpec {
    pub gateway_a: String,
    pub network_a: String,
    pub gateway_b: String,
    pub network_b: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CustomerSetup {
    /// Account opened and certificate issued before the first tick.
    #[default]
    Enrolled,
    /// Account opened, no certificate.
    Opened,
    /// Nothing yet; the script opens the account.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomerSpec {
    pub id: String,
    pub vasp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custody: Option<CustodyModel>,
    #[serde(default = "default_class")]
    pub class: CertClass,
    #[serde(default)]
    pub setup: CustomerSetup,
    pub attributes: BTreeMap<String, String>,
}

fn default_class() -> CertClass {
    CertClass::Class1
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// The beneficiary's public key; commingled beneficiaries fall back to
    /// their account.
    #[default]
    PublicKey,
    KeyHash,
    Account,
    /// A key nobody has certified.
    UnknownKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchLeg {
    pub from: String,
    pub to: String,
    pub amount: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    OpenAccount {
        customer: String,
    },
    Enroll {
        customer: String,
    },
    Transfer {
        from: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        to: Option<String>,
        amount: u64,
        #[serde(default)]
        target: TargetKind,
        #[serde(default = "default_asset")]
        asset: String,
    },
    Batch {
        legs: Vec<BatchLeg>,
        #[serde(default = "default_asset")]
        asset: String,
    },
    P2pTransfer {
        from: String,
        to: String,
        amount: u64,
    },
    RevokeCert {
        customer: String,
        #[serde(default = "default_reason")]
        reason: RevocationReason,
    },
    /// Drops messages from `a` to `b` (and back unless `one_way`) for
    /// `duration` ticks. A peering link between them goes down too.
    DropLink {
        a: String,
        b: String,
        duration: Tick,
        #[serde(default)]
        one_way: bool,
    },
    /// Keeps the run going for at least `ticks` more ticks.
    Advance {
        ticks: Tick,
    },
}

fn default_reason() -> RevocationReason {
    RevocationReason::KeyCompromise
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub tick: Tick,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default = "default_max_latency")]
    pub max_latency: Tick,
    #[serde(default)]
    pub drop_probability: f64,
    #[serde(default = "default_confirmation_delay")]
    pub confirmation_delay: Tick,
    #[serde(default)]
    pub cas: Vec<CaSpec>,
    #[serde(default)]
    pub networks: Vec<NetworkSpec>,
    #[serde(default)]
    pub vasps: Vec<VaspSpec>,
    #[serde(default)]
    pub peering_links: Vec<PeeringSpec>,
    #[serde(default)]
    pub customers: Vec<CustomerSpec>,
    /// Customers whose accounts and keys are designated.
    #[serde(default)]
    pub suspects: Vec<String>,
    /// Key holders outside every VASP.
    #[serde(default)]
    pub p2p_actors: Vec<String>,
    #[serde(default)]
    pub script: Vec<ScriptEntry>,
}

fn unique<'a>(kind: &'static str, ids: impl Iterator<Item = &'a String>) -> Result<BTreeSet<&'a str>, SchemaError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(SchemaError::Duplicate { kind, id: id.clone() });
        }
    }
    Ok(seen)
}

fn need(set: &BTreeSet<&str>, kind: &'static str, id: &str, context: impl Into<String>) -> Result<(), SchemaError> {
    if set.contains(id) {
        Ok(())
    } else {
        Err(SchemaError::UnknownReference { kind, id: id.to_string(), context: context.into() })
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SchemaError> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| SchemaError::Parse(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.max_latency == 0 {
            return Err(SchemaError::Invalid("max_latency must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(SchemaError::Invalid("drop_probability must lie in [0, 1]".into()));
        }
        let cas = unique("ca", self.cas.iter().map(|c| &c.id))?;
        let networks = unique("network", self.networks.iter().map(|n| &n.id))?;
        let vasps = unique("vasp", self.vasps.iter().map(|v| &v.id))?;
        let customers = unique("customer", self.customers.iter().map(|c| &c.id))?;
        let actors = unique("p2p actor", self.p2p_actors.iter())?;
        for n in &self.networks {
            for ca in &n.recognized_cas {
                need(&cas, "ca", ca, format!("network {}", n.id))?;
            }
            for (a, b) in n.gossip_edges.iter().flatten() {
                need(&vasps, "vasp", a, format!("gossip edge of {}", n.id))?;
                need(&vasps, "vasp", b, format!("gossip edge of {}", n.id))?;
            }
        }
        let mut member_of: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for v in &self.vasps {
            need(&cas, "ca", &v.ca, format!("vasp {}", v.id))?;
            for n in &v.networks {
                need(&networks, "network", n, format!("vasp {}", v.id))?;
                member_of.entry(v.id.as_str()).or_default().insert(n.as_str());
            }
        }
        for (i, l) in self.peering_links.iter().enumerate() {
            let ctx = format!("peering link {i}");
            need(&vasps, "vasp", &l.gateway_a, ctx.clone())?;
            need(&vasps, "vasp", &l.gateway_b, ctx.clone())?;
            need(&networks, "network", &l.network_a, ctx.clone())?;
            need(&networks, "network", &l.network_b, ctx.clone())?;
            if l.network_a == l.network_b {
                return Err(SchemaError::Invalid(format!("{ctx} joins {} to itself", l.network_a)));
            }
            let in_net = |g: &str, n: &str| member_of.get(g).is_some_and(|s| s.contains(n));
            if !in_net(&l.gateway_a, &l.network_a) || !in_net(&l.gateway_b, &l.network_b) {
                return Err(SchemaError::Invalid(format!("{ctx}: gateway is not a member of its network")));
            }
        }
        for c in &self.customers {
            need(&vasps, "vasp", &c.vasp, format!("customer {}", c.id))?;
        }
        for s in &self.suspects {
            need(&customers, "customer", s, "suspects")?;
        }
        let mut previous = 0;
        for (index, entry) in self.script.iter().enumerate() {
            if entry.tick < previous {
                return Err(SchemaError::DecreasingTick { index, tick: entry.tick, previous });
            }
            previous = entry.tick;
            let ctx = format!("script entry {index}");
            match &entry.action {
                Action::OpenAccount { customer } | Action::Enroll { customer } | Action::RevokeCert { customer, .. } => {
                    need(&customers, "customer", customer, ctx)?
                }
                Action::Transfer { from, to, target, .. } => {
                    need(&customers, "customer", from, ctx.clone())?;
                    match (to, target) {
                        (Some(to), _) => need(&customers, "customer", to, ctx)?,
                        (None, TargetKind::UnknownKey) => {}
                        (None, _) => return Err(SchemaError::Invalid(format!("{ctx}: transfer needs `to`"))),
                    }
                }
                Action::Batch { legs, .. } => {
                    if legs.is_empty() {
                        return Err(SchemaError::Invalid(format!("{ctx}: empty batch")));
                    }
                    for leg in legs {
                        need(&customers, "customer", &leg.from, ctx.clone())?;
                        need(&customers, "customer", &leg.to, ctx.clone())?;
                    }
                }
                Action::P2pTransfer { from, to, .. } => {
                    need(&actors, "p2p actor", from, ctx.clone())?;
                    need(&actors, "p2p actor", to, ctx)?;
                }
                Action::DropLink { a, b, .. } => {
                    need(&vasps, "vasp", a, ctx.clone())?;
                    need(&vasps, "vasp", b, ctx)?;
                }
                Action::Advance { .. } => {}
            }
        }
        Ok(())
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario, SchemaError> {
    let text = std::fs::read_to_string(path).map_err(|e| SchemaError::Io(format!("{}: {e}", path.display())))?;
    Scenario::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 1

[[cas]]
id = "ca"

[[networks]]
id = "n"
recognized_cas = ["ca"]

[[vasps]]
id = "v1"
ca = "ca"
networks = ["n"]

[[vasps]]
id = "v2"
ca = "ca"
networks = ["n"]

[[customers]]
id = "alice"
vasp = "v1"
attributes = { name = "Alice", email = "alice@example.org" }

[[customers]]
id = "bob"
vasp = "v2"
custody = "key_custody"
attributes = { name = "Bob", email = "bob@example.org" }

[[script]]
tick = 20
action = "transfer"
from = "alice"
to = "bob"
amount = 5
"#;

    #[test]
    fn minimal_file_loads() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.vasps.len(), 2);
        assert_eq!(s.max_latency, 3);
        assert_eq!(s.customers[1].custody, Some(CustodyModel::KeyCustody));
        let again = Scenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn dangling_reference_is_named() {
        let text = MINIMAL.replace("from = \"alice\"", "from = \"carol\"");
        match Scenario::from_toml(&text) {
            Err(SchemaError::UnknownReference { kind, id, .. }) => {
                assert_eq!(kind, "customer");
                assert_eq!(id, "carol");
            }
            other => panic!("{other:?}"),
        }
        let text = MINIMAL.replace("vasp = \"v2\"", "vasp = \"v9\"");
        assert!(matches!(Scenario::from_toml(&text), Err(SchemaError::UnknownReference { kind: "vasp", .. })));
    }

    #[test]
    fn decreasing_ticks_rejected() {
        let text = format!("{MINIMAL}\n[[script]]\ntick = 3\naction = \"advance\"\nticks = 1\n");
        assert!(matches!(
            Scenario::from_toml(&text),
            Err(SchemaError::DecreasingTick { index: 1, tick: 3, previous: 20 })
        ));
    }
}
