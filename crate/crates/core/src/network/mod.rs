//! Trust networks: membership under operating rules, known-good-key
//! directories, revocation exchange and cross-network reachability.

mod directory;
mod routing;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::assertion::DisclosurePolicy;
use crate::ca::{validate_certificate, CertClass, Certificate, RevocationView, TrustAnchors, UsagePolicy, ValidationResult};
use crate::Tick;

pub use directory::{
    DeltaOutcome, DirectoryDelta, DirectoryEntry, DirectoryReplica, DirectorySnapshot, GossipItem, DELTA_LOG_LEN,
};
pub use routing::{
    has_repeat, route_query, AdvertisementOutcome, DropReason, InstalledRoute, PeeringLink,
    ReachabilityAdvertisement, RouteTable, RoutedPath,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NetworkError {
    #[error("rules version {acked} acknowledged, network is at {current}")]
    RulesVersionMismatch { current: u64, acked: u64 },
    #[error("membership denied: {0}")]
    MembershipDenied(ValidationResult),
    #[error("invalid operating rules: {0}")]
    InvalidRules(&'static str),
    #[error("peering link joins network {0} to itself")]
    SameNetwork(String),
    #[error("delta adds and removes the same entry")]
    OverlappingDelta,
    #[error("{0} is not a member")]
    NotMember(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperatingRules {
    pub rules_version: u64,
    pub minimum_certificate_class: CertClass,
    pub required_disclosure_policy: DisclosurePolicy,
    pub directory_sync_period: Tick,
    pub crl_exchange_period: Tick,
    pub ack_timeout: Tick,
}

impl Default for OperatingRules {
    fn default() -> Self {
        Self {
            rules_version: 1,
            minimum_certificate_class: CertClass::Class1,
            required_disclosure_policy: DisclosurePolicy::travel_rule(),
            directory_sync_period: 10,
            crl_exchange_period: 20,
            ack_timeout: 10,
        }
    }
}

impl OperatingRules {
    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.directory_sync_period == 0 {
            return Err(NetworkError::InvalidRules("directory_sync_period must be at least 1"));
        }
        if self.crl_exchange_period == 0 {
            return Err(NetworkError::InvalidRules("crl_exchange_period must be at least 1"));
        }
        if self.ack_timeout == 0 {
            return Err(NetworkError::InvalidRules("ack_timeout must be at least 1"));
        }
        Ok(())
    }

    pub fn usage_policy(&self) -> UsagePolicy {
        UsagePolicy { chain: None, minimum_class: Some(self.minimum_certificate_class) }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemberRecord {
    pub vasp_id: String,
    pub vasp_certificate: Certificate,
    pub network_id: String,
    pub joined_at: Tick,
    pub acked_rules_version: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrustNetwork {
    id: String,
    rules: OperatingRules,
    recognized_cas: TrustAnchors,
    members: BTreeMap<String, MemberRecord>,
    // `None` means every member gossips with every other.
    gossip_edges: Option<BTreeSet<(String, String)>>,
    routes: RouteTable,
}

impl TrustNetwork {
    pub fn new(id: impl Into<String>, rules: OperatingRules, recognized_cas: TrustAnchors) -> Result<Self, NetworkError> {
        rules.validate()?;
        let id = id.into();
        Ok(Self {
            routes: RouteTable::new(id.clone()),
            id,
            rules,
            recognized_cas,
            members: BTreeMap::new(),
            gossip_edges: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn rules(&self) -> &OperatingRules {
        &self.rules
    }

    pub fn recognized_cas(&self) -> &TrustAnchors {
        &self.recognized_cas
    }

    pub fn routes(&self) -> &RouteTable {
        &self.routes
    }

    pub fn routes_mut(&mut self) -> &mut RouteTable {
        &mut self.routes
    }

    pub fn join_network(
        &mut self,
        vasp_certificate: &Certificate,
        rules_version_ack: u64,
        revocations: &RevocationView,
        now: Tick,
    ) -> Result<MemberRecord, NetworkError> {
        if rules_version_ack != self.rules.rules_version {
            return Err(NetworkError::RulesVersionMismatch {
                current: self.rules.rules_version,
                acked: rules_version_ack,
            });
        }
        let check =
            validate_certificate(vasp_certificate, &self.recognized_cas, revocations, now, &self.rules.usage_policy());
        if !check.is_valid() {
            return Err(NetworkError::MembershipDenied(check));
        }
        let record = MemberRecord {
            vasp_id: vasp_certificate.subject_id.clone(),
            vasp_certificate: vasp_certificate.clone(),
            network_id: self.id.clone(),
            joined_at: now,
            acked_rules_version: rules_version_ack,
        };
        self.members.insert(record.vasp_id.clone(), record.clone());
        Ok(record)
    }

    pub fn is_member(&self, vasp_id: &str) -> bool {
        self.members.contains_key(vasp_id)
    }

    pub fn member(&self, vasp_id: &str) -> Option<&MemberRecord> {
        self.members.get(vasp_id)
    }

    pub fn member_ids(&self) -> impl Iterator<Item = &str> {
        self.members.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Restricts gossip to the given undirected edges.
    pub fn set_gossip_edges<I: IntoIterator<Item = (String, String)>>(&mut self, edges: I) {
        self.gossip_edges = Some(
            edges
                .into_iter()
                .map(|(a, b)| if a <= b { (a, b) } else { (b, a) })
                .collect(),
        );
    }

    pub fn neighbors(&self, vasp_id: &str) -> Vec<String> {
        if !self.is_member(vasp_id) {
            return Vec::new();
        }
        match &self.gossip_edges {
            None => self.members.keys().filter(|m| *m != vasp_id).cloned().collect(),
            Some(edges) => {
                let mut out: Vec<String> = edges
                    .iter()
                    .filter_map(|(a, b)| {
                        if a == vasp_id {
                            Some(b.clone())
                        } else if b == vasp_id {
                            Some(a.clone())
                        } else {
                            None
                        }
                    })
                    .filter(|n| self.is_member(n))
                    .collect();
                out.sort();
                out.dedup();
                out
            }
        }
    }

    /// Longest shortest-path over the gossip graph, or `None` if it is
    /// disconnected.
    pub fn gossip_diameter(&self) -> Option<usize> {
        let ids: Vec<&str> = self.member_ids().collect();
        let mut diameter = 0;
        for start in &ids {
            let mut dist = BTreeMap::from([(start.to_string(), 0usize)]);
            let mut frontier = vec![start.to_string()];
            while let Some(next) = (!frontier.is_empty()).then(|| std::mem::take(&mut frontier)) {
                for node in next {
                    let d = dist[&node];
                    for n in self.neighbors(&node) {
                        if !dist.contains_key(&n) {
                            dist.insert(n.clone(), d + 1);
                            frontier.push(n);
                        }
                    }
                }
            }
            if dist.len() != ids.len() {
                return None;
            }
            diameter = diameter.max(dist.values().copied().max().unwrap_or(0));
        }
        Some(diameter)
    }
}
