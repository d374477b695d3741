//! Cross-network reachability: gateway peering links, path-vector
//! advertisements of public-key hashes, and per-network route tables.

use std::collections::{BTreeMap, BTreeSet};

use super::NetworkError;
use crate::crypto::{encode_list, verify, Hash32, KeyPair, PublicKey, Signature, TlvWriter};
use crate::Tick;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeeringLink {
    pub gateway_a: String,
    pub network_a: String,
    pub gateway_b: String,
    pub network_b: String,
    pub established_at: Tick,
}

impl PeeringLink {
    pub fn new(
        gateway_a: impl Into<String>,
        network_a: impl Into<String>,
        gateway_b: impl Into<String>,
        network_b: impl Into<String>,
        established_at: Tick,
    ) -> Result<Self, NetworkError> {
        let (network_a, network_b) = (network_a.into(), network_b.into());
        if network_a == network_b {
            return Err(NetworkError::SameNetwork(network_a));
        }
        Ok(Self {
            gateway_a: gateway_a.into(),
            network_a,
            gateway_b: gateway_b.into(),
            network_b,
            established_at,
        })
    }

    /// The (gateway, network) across the link from `network`.
    pub fn far_end(&self, network: &str) -> Option<(&str, &str)> {
        if network == self.network_a {
            Some((&self.gateway_b, &self.network_b))
        } else if network == self.network_b {
            Some((&self.gateway_a, &self.network_a))
        } else {
            None
        }
    }

    /// This link's gateway on `network`'s side.
    pub fn near_gateway(&self, network: &str) -> Option<&str> {
        if network == self.network_a {
            Some(&self.gateway_a)
        } else if network == self.network_b {
            Some(&self.gateway_b)
        } else {
            None
        }
    }

    pub fn label(&self) -> String {
        format!("{}/{}<->{}/{}", self.network_a, self.gateway_a, self.network_b, self.gateway_b)
    }
}

/// A claim that the hashes are resolvable in `origin_network_id`, passed
/// from gateway to gateway. The path starts at the origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReachabilityAdvertisement {
    pub advertised_hashes: BTreeSet<Hash32>,
    pub home_vasp_id: String,
    pub origin_network_id: String,
    /// Bumped by the origin whenever the hash set changes.
    pub origin_seq: u64,
    pub network_path: Vec<String>,
    pub advertising_gateway_id: String,
    pub advertising_gateway_signature: Signature,
}

impl ReachabilityAdvertisement {
    pub fn signed(
        advertised_hashes: BTreeSet<Hash32>,
        home_vasp_id: &str,
        origin_network_id: &str,
        origin_seq: u64,
        network_path: Vec<String>,
        advertising_gateway_id: &str,
        key: &KeyPair,
    ) -> Self {
        let mut adv = Self {
            advertised_hashes,
            home_vasp_id: home_vasp_id.to_string(),
            origin_network_id: origin_network_id.to_string(),
            origin_seq,
            network_path,
            advertising_gateway_id: advertising_gateway_id.to_string(),
            advertising_gateway_signature: Signature([0; 64]),
        };
        adv.advertising_gateway_signature = key.sign(&adv.to_be_signed());
        adv
    }

    pub fn to_be_signed(&self) -> Vec<u8> {
        TlvWriter::new()
            .bytes(1, &encode_list(self.advertised_hashes.iter().map(|h| h.0)))
            .str(2, &self.home_vasp_id)
            .str(3, &self.origin_network_id)
            .u64(4, self.origin_seq)
            .list(5, self.network_path.iter().map(|n| n.as_bytes()))
            .str(6, &self.advertising_gateway_id)
            .finish()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        TlvWriter::new()
            .bytes(1, &self.to_be_signed())
            .bytes(2, &self.advertising_gateway_signature.0)
            .finish()
    }

    pub fn verify(&self, gateway_key: &PublicKey) -> bool {
        verify(gateway_key, &self.to_be_signed(), &self.advertising_gateway_signature)
    }
}

pub fn has_repeat(path: &[String]) -> bool {
    let mut seen = BTreeSet::new();
    !path.iter().all(|n| seen.insert(n))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstalledRoute {
    pub origin_network_id: String,
    pub home_vasp_id: String,
    pub hashes: BTreeSet<Hash32>,
    pub origin_seq: u64,
    /// Origin first, the holding network last.
    pub network_path: Vec<String>,
    pub link_index: usize,
    pub local_gateway: String,
    pub next_hop_gateway: String,
}

impl InstalledRoute {
    fn rank(&self) -> (usize, &[String], usize) {
        (self.network_path.len(), &self.network_path, self.link_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    /// The receiving network already appears in the path.
    Loop,
    BadSignature,
    /// Sender or receiver is not the gateway on this link.
    NotOnLink,
    /// Older than what this link already delivered for the origin.
    Stale,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdvertisementOutcome {
    Accept(InstalledRoute),
    Drop(DropReason),
}

/// Routes a network holds towards other networks, shared by all its members.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RouteTable {
    network_id: String,
    candidates: BTreeMap<(String, usize), InstalledRoute>,
}

impl RouteTable {
    pub fn new(network_id: impl Into<String>) -> Self {
        Self { network_id: network_id.into(), candidates: BTreeMap::new() }
    }

    pub fn network_id(&self) -> &str {
        &self.network_id
    }

    /// Checks and installs an advertisement that arrived over `links[link_index]`
    /// at `receiving_gateway`. `sender_key` is the key of the gateway the
    /// message came from.
    pub fn process_advertisement(
        &mut self,
        link_index: usize,
        link: &PeeringLink,
        receiving_gateway: &str,
        adv: &ReachabilityAdvertisement,
        sender_key: &PublicKey,
    ) -> AdvertisementOutcome {
        let on_link = link.near_gateway(&self.network_id) == Some(receiving_gateway)
            && link
                .far_end(&self.network_id)
                .is_some_and(|(gw, net)| gw == adv.advertising_gateway_id && adv.network_path.last().map(String::as_str) == Some(net));
        if !on_link {
            return AdvertisementOutcome::Drop(DropReason::NotOnLink);
        }
        if !adv.verify(sender_key) {
            return AdvertisementOutcome::Drop(DropReason::BadSignature);
        }
        if adv.network_path.contains(&self.network_id) || has_repeat(&adv.network_path) {
            return AdvertisementOutcome::Drop(DropReason::Loop);
        }
        let key = (adv.origin_network_id.clone(), link_index);
        if self.candidates.get(&key).is_some_and(|r| r.origin_seq > adv.origin_seq) {
            return AdvertisementOutcome::Drop(DropReason::Stale);
        }
        let mut network_path = adv.network_path.clone();
        network_path.push(self.network_id.clone());
        assert!(!has_repeat(&network_path), "accepted a looping path");
        let route = InstalledRoute {
            origin_network_id: adv.origin_network_id.clone(),
            home_vasp_id: adv.home_vasp_id.clone(),
            hashes: adv.advertised_hashes.clone(),
            origin_seq: adv.origin_seq,
            network_path,
            link_index,
            local_gateway: receiving_gateway.to_string(),
            next_hop_gateway: adv.advertising_gateway_id.clone(),
        };
        self.candidates.insert(key, route.clone());
        AdvertisementOutcome::Accept(route)
    }

    /// Drops every route learned over `link_index`.
    pub fn withdraw_link(&mut self, link_index: usize) -> Vec<String> {
        let origins: Vec<String> = self
            .candidates
            .keys()
            .filter(|(_, l)| *l == link_index)
            .map(|(o, _)| o.clone())
            .collect();
        for o in &origins {
            self.candidates.remove(&(o.clone(), link_index));
        }
        origins
    }

    /// Shortest path wins; equal lengths fall back to the path itself and
    /// then the link index.
    pub fn best_for_origin(&self, origin: &str) -> Option<&InstalledRoute> {
        self.candidates
            .range((origin.to_string(), 0)..=(origin.to_string(), usize::MAX))
            .map(|(_, r)| r)
            .min_by(|a, b| a.rank().cmp(&b.rank()))
    }

    pub fn origins(&self) -> BTreeSet<&str> {
        self.candidates.keys().map(|(o, _)| o.as_str()).collect()
    }

    /// Best per-origin routes in origin order.
    pub fn best_routes(&self) -> Vec<&InstalledRoute> {
        self.origins().into_iter().filter_map(|o| self.best_for_origin(o)).collect()
    }

    /// Shortest route whose origin advertises `hash`; ties go to the
    /// lexicographically smaller origin.
    pub fn best_for_hash(&self, hash: &Hash32) -> Option<&InstalledRoute> {
        self.best_routes()
            .into_iter()
            .filter(|r| r.hashes.contains(hash))
            .min_by(|a, b| (a.network_path.len(), &a.origin_network_id).cmp(&(b.network_path.len(), &b.origin_network_id)))
    }

    /// Every route ever accepted and still held, for loop-freedom checks.
    pub fn all_candidates(&self) -> impl Iterator<Item = &InstalledRoute> {
        self.candidates.values()
    }

    /// `hash_prefix,home_vasp,path` lines, one per reachable hash through
    /// its chosen route.
    pub fn dump_lines(&self) -> Vec<String> {
        let hashes: BTreeSet<&Hash32> = self.best_routes().iter().flat_map(|r| r.hashes.iter()).collect();
        hashes
            .into_iter()
            .filter_map(|h| {
                self.best_for_hash(h)
                    .map(|r| format!("{},{},{}", h.prefix(8), r.home_vasp_id, r.network_path.join(">")))
            })
            .collect()
    }
}

/// A query walked through route tables from network to network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutedPath {
    /// Vasp ids visited, requester first, the entry gateway of the origin
    /// network last.
    pub hops: Vec<String>,
    /// Networks visited, requester's first.
    pub network_path: Vec<String>,
}

/// Follows installed routes from `start_network` toward whichever network
/// advertises `hash`. `link_up` and `node_up` report fault state.
pub fn route_query<'t>(
    table_of: impl Fn(&str) -> Option<&'t RouteTable>,
    links: &[PeeringLink],
    start_network: &str,
    requester: &str,
    hash: &Hash32,
    link_up: &dyn Fn(usize) -> bool,
    node_up: &dyn Fn(&str) -> bool,
) -> Result<RoutedPath, RoutedPath> {
    let mut path = RoutedPath { hops: vec![requester.to_string()], network_path: vec![start_network.to_string()] };
    let mut network = start_network.to_string();
    let mut at = requester.to_string();
    let Some(origin) = table_of(&network).and_then(|t| t.best_for_hash(hash)).map(|r| r.origin_network_id.clone())
    else {
        return Err(path);
    };
    while network != origin {
        let Some(route) = table_of(&network).and_then(|t| t.best_for_origin(&origin)) else {
            return Err(path);
        };
        if route.local_gateway != at {
            if !node_up(&route.local_gateway) {
                return Err(path);
            }
            at = route.local_gateway.clone();
            path.hops.push(at.clone());
        }
        let Some(link) = links.get(route.link_index) else {
            return Err(path);
        };
        let Some((_, next_network)) = link.far_end(&network) else {
            return Err(path);
        };
        if !link_up(route.link_index) || !node_up(&route.next_hop_gateway) {
            return Err(path);
        }
        let next_network = next_network.to_string();
        if path.network_path.contains(&next_network) {
            return Err(path);
        }
        at = route.next_hop_gateway.clone();
        network = next_network;
        path.hops.push(at.clone());
        path.network_path.push(network.clone());
    }
    Ok(path)
}
