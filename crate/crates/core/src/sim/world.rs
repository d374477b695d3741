//! The simulated world: CAs, VASP nodes, networks, peering links, the
//! ledger and the message queue, advanced one tick at a time.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::log::EventLog;
use super::scenario::{Action, CustomerSetup, Scenario, TargetKind};
use crate::ca::{
    Attributes, CaError, CertClass, CertificateAuthority, CertificateProfile, RevocationList, RevocationView,
    TrustAnchors, Validity,
};
use crate::chain::{Ledger, UnsignedTransaction};
use crate::crypto::{derive_keypair, digest, generate_keypair, Hash32, KeyPair, PublicKey};
use crate::events::{Event, TransferId};
use crate::message::{Message, Payload};
use crate::network::{
    has_repeat, AdvertisementOutcome, InstalledRoute, NetworkError, OperatingRules, PeeringLink,
    ReachabilityAdvertisement, TrustNetwork,
};
use crate::vasp::{
    CustodyModel, NodeConfig, NodeContext, RecordStatus, Role, SuspectList, TransferRequest, TransferTarget,
    VaspError, VaspNode, DEFAULT_CHAIN_LABEL,
};
use crate::Tick;

/// Every certificate in a run is valid from tick 0 to here.
pub const VALIDITY_END: Tick = 1_000_000;
/// A run that has not gone quiet this long after its script ends is cut off.
pub const QUIESCENCE_LIMIT: Tick = 10_000;
const WORLD: &str = "world";
const CHAIN: &str = "chain";

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Ca(#[from] CaError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Vasp(#[from] VaspError),
}

/// Derives an independent 64-bit seed for `label` from the run seed.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let mut input = seed.to_be_bytes().to_vec();
    input.extend_from_slice(label.as_bytes());
    let d = digest(&input);
    u64::from_be_bytes(d.0[..8].try_into().expect("8 bytes"))
}

fn key_for(seed: u64, role: &str, id: &str) -> KeyPair {
    derive_keypair(format!("{seed}:{role}:{id}").as_bytes())
}

#[derive(Debug, Clone)]
struct Customer {
    vasp: String,
    custody: CustodyModel,
    class: CertClass,
    attributes: Attributes,
}

#[derive(Debug, Clone)]
struct Publication {
    network: String,
    publisher: String,
    version: u64,
    at: Tick,
}

#[derive(Debug, Clone, Default)]
struct Origination {
    seq: u64,
    hashes: BTreeSet<Hash32>,
}

pub struct World {
    scenario: Scenario,
    now: Tick,
    rng: ChaCha8Rng,
    cas: BTreeMap<String, CertificateAuthority>,
    vasp_ca: BTreeMap<String, String>,
    nodes: BTreeMap<String, VaspNode>,
    networks: BTreeMap<String, TrustNetwork>,
    links: Vec<PeeringLink>,
    link_down_until: Vec<Option<Tick>>,
    channel_down_until: BTreeMap<(String, String), Tick>,
    suspects: SuspectList,
    ledger: Ledger,
    queue: BTreeMap<(Tick, String, u64), Message>,
    seq: u64,
    log: EventLog,
    customers: BTreeMap<String, Customer>,
    p2p: BTreeMap<String, (KeyPair, u64)>,
    cursor: usize,
    horizon: Tick,
    originations: BTreeMap<String, Origination>,
    publications: Vec<Publication>,
    max_convergence_delay: Option<Tick>,
    join_failures: Vec<(String, String, NetworkError)>,
    messages_sent: u64,
    finished: bool,
}

impl World {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        let seed = scenario.seed;
        let validity = Validity::new(0, VALIDITY_END)?;
        let mut world = World {
            rng: ChaCha8Rng::seed_from_u64(sub_seed(seed, WORLD)),
            now: 0,
            cas: BTreeMap::new(),
            vasp_ca: BTreeMap::new(),
            nodes: BTreeMap::new(),
            networks: BTreeMap::new(),
            links: Vec::new(),
            link_down_until: Vec::new(),
            channel_down_until: BTreeMap::new(),
            suspects: SuspectList::new(),
            ledger: Ledger::new(scenario.confirmation_delay),
            queue: BTreeMap::new(),
            seq: 0,
            log: EventLog::new(),
            customers: BTreeMap::new(),
            p2p: BTreeMap::new(),
            cursor: 0,
            horizon: scenario.script.last().map_or(0, |e| e.tick),
            originations: BTreeMap::new(),
            publications: Vec::new(),
            max_convergence_delay: None,
            join_failures: Vec::new(),
            messages_sent: 0,
            finished: false,
            scenario,
        };
        world.setup(validity)?;
        Ok(world)
    }

    fn setup(&mut self, validity: Validity) -> Result<(), SimError> {
        let seed = self.scenario.seed;
        let spec = self.scenario.clone();
        for ca in &spec.cas {
            let authority =
                CertificateAuthority::new(&ca.id, key_for(seed, "ca", &ca.id), validity, sub_seed(seed, &ca.id))?;
            self.cas.insert(ca.id.clone(), authority);
        }
        for n in &spec.networks {
            let mut rules = OperatingRules::default();
            let o = &n.rules;
            rules.rules_version = o.rules_version.unwrap_or(rules.rules_version);
            rules.minimum_certificate_class = o.minimum_certificate_class.unwrap_or(rules.minimum_certificate_class);
            rules.directory_sync_period = o.directory_sync_period.unwrap_or(rules.directory_sync_period);
            rules.crl_exchange_period = o.crl_exchange_period.unwrap_or(rules.crl_exchange_period);
            rules.ack_timeout = o.ack_timeout.unwrap_or(rules.ack_timeout);
            let anchors: TrustAnchors = n.recognized_cas.iter().map(|id| self.cas[id].root().clone()).collect();
            let network = TrustNetwork::new(&n.id, rules, anchors)?;
            self.networks.insert(n.id.clone(), network);
        }
        for v in &spec.vasps {
            let keypair = key_for(seed, "vasp", &v.id);
            let ca = self.cas.get_mut(&v.ca).expect("validated");
            let attributes: Attributes = [
                ("name", v.id.clone()),
                ("email", format!("compliance@{}.example", v.id)),
                ("government_id", format!("lei-{}", v.id)),
                ("address", format!("{} head office", v.id)),
                ("organization_vetting_ref", format!("vet-{}", v.id)),
            ]
            .into_iter()
            .map(|(k, val)| (k.to_string(), val))
            .collect();
            let registration = ca.register_subject(&v.id, &attributes, CertClass::Class3, 0)?;
            let profile = CertificateProfile::new("vasp", CertClass::Class3).with_chains([DEFAULT_CHAIN_LABEL]);
            let certificate = ca.issue_certificate(&registration, keypair.public_key(), profile, validity, 0)?;
            let ack_timeout = v
                .networks
                .first()
                .and_then(|n| self.networks.get(n))
                .map_or(NodeConfig::default().ack_timeout, |n| n.rules().ack_timeout);
            let config = NodeConfig { ack_timeout, ..NodeConfig::default() };
            let root = ca.root().clone();
            let mut node = VaspNode::new(keypair, certificate.clone(), root, config, sub_seed(seed, &v.id))?;
            self.log.push(0, &v.id, Event::VaspRegistered { vasp: v.id.clone(), public_key: node.public_key() });
            for n in &v.networks {
                let network = self.networks.get_mut(n).expect("validated");
                match network.join_network(&certificate, v.acked_rules_version, &RevocationView::new(), 0) {
                    Ok(_) => {
                        node.joined(network);
                        self.log.push(0, &v.id, Event::MemberJoined { network: n.clone(), vasp: v.id.clone() });
                    }
                    Err(e) => self.join_failures.push((v.id.clone(), n.clone(), e)),
                }
            }
            self.vasp_ca.insert(v.id.clone(), v.ca.clone());
            self.nodes.insert(v.id.clone(), node);
        }
        for n in &spec.networks {
            if let Some(edges) = &n.gossip_edges {
                self.networks.get_mut(&n.id).expect("validated").set_gossip_edges(edges.clone());
            }
        }
        for l in &spec.peering_links {
            self.links.push(PeeringLink::new(&l.gateway_a, &l.network_a, &l.gateway_b, &l.network_b, 0)?);
            self.link_down_until.push(None);
        }
        for c in &spec.customers {
            let vasp_default = spec.vasps.iter().find(|v| v.id == c.vasp).map(|v| v.default_custody);
            self.customers.insert(
                c.id.clone(),
                Customer {
                    vasp: c.vasp.clone(),
                    custody: c.custody.or(vasp_default).unwrap_or(CustodyModel::Mediated),
                    class: c.class,
                    attributes: c.attributes.clone(),
                },
            );
        }
        for c in &spec.customers {
            match c.setup {
                CustomerSetup::Enrolled => {
                    self.open_account(&c.id)?;
                    self.enroll(&c.id)?;
                }
                CustomerSetup::Opened => self.open_account(&c.id)?,
                CustomerSetup::None => {}
            }
        }
        for id in &spec.p2p_actors {
            self.p2p.insert(id.clone(), (key_for(seed, "p2p", id), 0));
        }
        Ok(())
    }

    // ---- accessors ------------------------------------------------------

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn nodes(&self) -> &BTreeMap<String, VaspNode> {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&VaspNode> {
        self.nodes.get(id)
    }

    pub fn cas(&self) -> &BTreeMap<String, CertificateAuthority> {
        &self.cas
    }

    pub fn networks(&self) -> &BTreeMap<String, TrustNetwork> {
        &self.networks
    }

    pub fn links(&self) -> &[PeeringLink] {
        &self.links
    }

    pub fn link_is_up(&self, index: usize) -> bool {
        self.link_down_until.get(index).is_some_and(|d| d.is_none())
    }

    pub fn join_failures(&self) -> &[(String, String, NetworkError)] {
        &self.join_failures
    }

    pub fn messages_sent(&self) -> u64 {
        self.messages_sent
    }

    /// Slowest time any publication took to reach every member.
    pub fn max_convergence_delay(&self) -> Option<Tick> {
        self.max_convergence_delay
    }

    /// Publications still travelling.
    pub fn unconverged(&self) -> usize {
        self.publications.len()
    }

    /// The on-chain key of a customer: their own, or their VASP's when
    /// commingled.
    pub fn customer_key(&self, customer: &str) -> Option<PublicKey> {
        let c = self.customers.get(customer)?;
        let node = self.nodes.get(&c.vasp)?;
        let account = node.account(customer)?;
        Some(account.customer_public_key.unwrap_or_else(|| node.public_key()))
    }

    pub fn customer_vasp(&self, customer: &str) -> Option<&str> {
        self.customers.get(customer).map(|c| c.vasp.as_str())
    }

    pub fn p2p_key(&self, actor: &str) -> Option<PublicKey> {
        self.p2p.get(actor).map(|(k, _)| k.public_key())
    }

    // ---- node stepping -------------------------------------------------

    /// Lends `id` its view of the rest of the world for one call, then
    /// logs its events and queues its messages.
    fn with_node<R>(&mut self, id: &str, f: impl FnOnce(&mut VaspNode, &mut NodeContext<'_>) -> R) -> Option<R> {
        let mut node = self.nodes.remove(id)?;
        let mut outbox = Vec::new();
        let mut events = Vec::new();
        let down = &self.link_down_until;
        let link_up = |i: usize| down.get(i).is_some_and(|d| d.is_none());
        let node_up = |_: &str| true;
        let result = {
            let mut ctx = NodeContext {
                now: self.now,
                cas: &self.cas,
                peers: &self.nodes,
                networks: &self.networks,
                links: &self.links,
                link_up: &link_up,
                node_up: &node_up,
                suspects: &self.suspects,
                ledger: &mut self.ledger,
                outbox: &mut outbox,
                events: &mut events,
            };
            f(&mut node, &mut ctx)
        };
        for e in events {
            self.log.push(self.now, id, e);
        }
        for (to, payload) in outbox {
            self.send(&node, &to, payload);
        }
        self.nodes.insert(id.to_string(), node);
        Some(result)
    }

    fn send(&mut self, from: &VaspNode, to: &str, payload: Payload) {
        let latency = self.rng.random_range(1..=self.scenario.max_latency);
        let lost = self.scenario.drop_probability > 0.0 && self.rng.random_bool(self.scenario.drop_probability);
        self.messages_sent += 1;
        if lost {
            self.log.push(self.now, from.id(), Event::MessageDropped { to: to.to_string(), kind: payload.kind().into() });
            return;
        }
        let message = Message::signed(from.id(), to, self.now, payload, from.keypair());
        self.seq += 1;
        self.queue.insert((self.now + latency, to.to_string(), self.seq), message);
    }

    // ---- accounts and certificates ---------------------------------------

    fn open_account(&mut self, customer: &str) -> Result<(), SimError> {
        let c = self.customers[customer].clone();
        let wallet = (c.custody == CustodyModel::Mediated).then(|| {
            let seed: [u8; 32] = self.rng.random();
            generate_keypair(&seed).expect("32-byte seed")
        });
        let node = self.nodes.get_mut(&c.vasp).expect("validated");
        let account = node.open_account(
            customer,
            customer,
            c.attributes.clone(),
            c.custody,
            wallet.as_ref().map(KeyPair::public_key),
            self.now,
        )?;
        let public_key = account.customer_public_key;
        if let Some(w) = wallet {
            node.pair_wallet(customer, w)?;
        }
        if self.scenario.suspects.iter().any(|s| s == customer) {
            self.suspects.block_account(customer);
            if let Some(pk) = public_key {
                self.suspects.block_key_hash(pk.key_hash());
            }
        }
        self.log.push(
            self.now,
            &c.vasp,
            Event::AccountOpened { account: customer.to_string(), custody: c.custody, public_key },
        );
        Ok(())
    }

    fn enroll(&mut self, customer: &str) -> Result<(), SimError> {
        let c = &self.customers[customer];
        if c.custody == CustodyModel::Commingled {
            return Ok(());
        }
        let ca = self.cas.get_mut(&self.vasp_ca[&c.vasp]).expect("validated");
        let node = self.nodes.get_mut(&c.vasp).expect("validated");
        let profile = CertificateProfile::new("customer", CertClass::Class1).with_chains([DEFAULT_CHAIN_LABEL]);
        let validity = Validity::new(0, VALIDITY_END)?;
        let cert = node.enroll_customer_certificate(customer, ca, c.class, profile, validity, self.now)?;
        self.log.push(
            self.now,
            &c.vasp,
            Event::CertificateEnrolled { account: customer.to_string(), serial: cert.serial },
        );
        Ok(())
    }

    fn target_for(&mut self, to: Option<&str>, kind: TargetKind) -> TransferTarget {
        let account = to.and_then(|t| {
            let c = self.customers.get(t)?;
            let a = self.nodes.get(&c.vasp)?.account(t)?;
            Some((c.vasp.clone(), a.account_id.clone(), a.customer_public_key))
        });
        match (kind, account) {
            (TargetKind::PublicKey, Some((_, _, Some(pk)))) => TransferTarget::PublicKey(pk),
            (TargetKind::KeyHash, Some((_, _, Some(pk)))) => TransferTarget::KeyHash(pk.key_hash()),
            (TargetKind::UnknownKey, _) | (_, None) => {
                let seed: [u8; 32] = self.rng.random();
                TransferTarget::PublicKey(generate_keypair(&seed).expect("32-byte seed").public_key())
            }
            (_, Some((vasp_id, account_id, _))) => TransferTarget::Account { vasp_id, account_id },
        }
    }

    // ---- script ------------------------------------------------------------

    fn apply_action(&mut self, action: Action) -> Result<(), SimError> {
        match action {
            Action::OpenAccount { customer } => self.open_account(&customer)?,
            Action::Enroll { customer } => self.enroll(&customer)?,
            Action::Transfer { from, to, amount, target, asset } => {
                let target = self.target_for(to.as_deref(), target);
                let vasp = self.customers[&from].vasp.clone();
                let request = TransferRequest { originator_account: from, target, amount, asset_type: asset };
                self.with_node(&vasp, |n, ctx| n.initiate_transfer(request, ctx));
            }
            Action::Batch { legs, asset } => {
                let vasp = self.customers[&legs[0].from].vasp.clone();
                let mut requests = Vec::new();
                for leg in legs {
                    let target = self.target_for(Some(&leg.to), TargetKind::Account);
                    requests.push(TransferRequest {
                        originator_account: leg.from,
                        target,
                        amount: leg.amount,
                        asset_type: asset.clone(),
                    });
                }
                self.with_node(&vasp, |n, ctx| n.initiate_batch(requests, ctx));
            }
            Action::P2pTransfer { from, to, amount } => {
                let to_key = self.p2p[&to].0.public_key();
                let (key, nonce) = self.p2p.get_mut(&from).expect("validated");
                *nonce += 1;
                let tx = UnsignedTransaction {
                    from_public_key: key.public_key(),
                    to_public_key: to_key,
                    amount,
                    asset_type: "SIM".into(),
                    nonce: nonce.to_be_bytes(),
                }
                .sign(key);
                if let Ok(tx_id) = self.ledger.submit_transaction(tx, self.now) {
                    self.log.push(self.now, &from, Event::P2pSubmitted { tx_id });
                }
            }
            Action::RevokeCert { customer, reason } => {
                let c = &self.customers[&customer];
                let serial = self.nodes[&c.vasp].account(&customer).and_then(|a| a.certificate_serial());
                let ca_id = self.vasp_ca[&c.vasp].clone();
                if let Some(serial) = serial {
                    let ca = self.cas.get_mut(&ca_id).expect("validated");
                    if ca.revoke(&serial, reason, self.now).is_ok() {
                        self.log.push(self.now, &ca_id, Event::CertificateRevoked { ca: ca_id.clone(), serial, reason });
                    }
                }
            }
            Action::DropLink { a, b, duration, one_way } => {
                let until = self.now + duration;
                self.channel_down_until.insert((a.clone(), b.clone()), until);
                if !one_way {
                    self.channel_down_until.insert((b.clone(), a.clone()), until);
                    let hit: Vec<usize> = self
                        .links
                        .iter()
                        .enumerate()
                        .filter(|(_, l)| (l.gateway_a == a && l.gateway_b == b) || (l.gateway_a == b && l.gateway_b == a))
                        .map(|(i, _)| i)
                        .collect();
                    for i in hit {
                        self.take_link_down(i, until);
                    }
                }
            }
            Action::Advance { ticks } => self.horizon = self.horizon.max(self.now + ticks),
        }
        Ok(())
    }

    fn take_link_down(&mut self, index: usize, until: Tick) {
        self.link_down_until[index] = Some(until);
        self.log.push(self.now, WORLD, Event::LinkDown { link: index });
        let link = self.links[index].clone();
        for net in [&link.network_a, &link.network_b] {
            let Some(network) = self.networks.get_mut(net) else { continue };
            let before: BTreeMap<String, InstalledRoute> =
                network.routes().best_routes().into_iter().map(|r| (r.origin_network_id.clone(), r.clone())).collect();
            let origins = network.routes_mut().withdraw_link(index);
            for origin in origins {
                self.propagate_if_changed(net, &origin, before.get(&origin));
            }
        }
    }

    fn restore_links(&mut self) {
        for i in 0..self.links.len() {
            if self.link_down_until[i].is_some_and(|until| until <= self.now) {
                self.link_down_until[i] = None;
                self.log.push(self.now, WORLD, Event::LinkUp { link: i });
                let link = self.links[i].clone();
                for net in [link.network_a.clone(), link.network_b.clone()] {
                    self.advertise_all_over(&net, i);
                }
            }
        }
        self.channel_down_until.retain(|_, until| *until > self.now);
    }

    // ---- routing -------------------------------------------------------------

    fn advertise(&mut self, network: &str, link_index: usize, route: AdvertisedRoute) {
        if !self.link_is_up(link_index) {
            return;
        }
        let link = &self.links[link_index];
        let (Some(gateway), Some((far_gateway, _))) = (link.near_gateway(network), link.far_end(network)) else {
            return;
        };
        let (gateway, far_gateway) = (gateway.to_string(), far_gateway.to_string());
        let Some(node) = self.nodes.remove(&gateway) else { return };
        let advertisement = ReachabilityAdvertisement::signed(
            route.hashes,
            &route.home,
            &route.origin,
            route.seq,
            route.path,
            &gateway,
            node.keypair(),
        );
        self.send(&node, &far_gateway, Payload::Advertisement { link_index, advertisement });
        self.nodes.insert(gateway, node);
    }

    fn links_of(&self, network: &str) -> Vec<usize> {
        (0..self.links.len()).filter(|i| self.links[*i].near_gateway(network).is_some()).collect()
    }

    fn own_route(&self, network: &str, link_index: usize) -> Option<AdvertisedRoute> {
        let origination = self.originations.get(network)?;
        let home = self.links[link_index].near_gateway(network)?.to_string();
        Some(AdvertisedRoute {
            hashes: origination.hashes.clone(),
            home,
            origin: network.to_string(),
            seq: origination.seq,
            path: vec![network.to_string()],
        })
    }

    /// Our own summary and every best route not learned over `link_index`.
    fn advertise_all_over(&mut self, network: &str, link_index: usize) {
        if let Some(own) = self.own_route(network, link_index) {
            self.advertise(network, link_index, own);
        }
        let Some(net) = self.networks.get(network) else { return };
        let learned: Vec<AdvertisedRoute> = net
            .routes()
            .best_routes()
            .into_iter()
            .filter(|r| r.link_index != link_index)
            .map(AdvertisedRoute::from)
            .collect();
        for route in learned {
            self.advertise(network, link_index, route);
        }
    }

    fn originate(&mut self, network: &str) {
        let Some(net) = self.networks.get(network) else { return };
        let hashes: BTreeSet<Hash32> = net
            .member_ids()
            .filter_map(|m| self.nodes.get(m)?.replica(network))
            .flat_map(|r| r.own_snapshot().entries.iter().map(|e| e.public_key_hash))
            .collect();
        let entry = self.originations.entry(network.to_string()).or_default();
        if entry.seq > 0 && entry.hashes == hashes {
            return;
        }
        entry.seq += 1;
        entry.hashes = hashes;
        let (seq, count) = (entry.seq, entry.hashes.len());
        let links = self.links_of(network);
        if links.is_empty() {
            return;
        }
        self.log.push(self.now, network, Event::AdvertisementOriginated { network: network.to_string(), seq, hashes: count });
        for i in links {
            if let Some(own) = self.own_route(network, i) {
                self.advertise(network, i, own);
            }
        }
    }

    fn propagate_if_changed(&mut self, network: &str, origin: &str, before: Option<&InstalledRoute>) {
        let Some(net) = self.networks.get(network) else { return };
        let after = net.routes().best_for_origin(origin).cloned();
        let changed = match (&after, before) {
            (Some(a), Some(b)) => a.network_path != b.network_path || a.origin_seq != b.origin_seq || a.hashes != b.hashes,
            (Some(_), None) => true,
            _ => false,
        };
        let Some(best) = after.filter(|_| changed) else { return };
        for i in self.links_of(network) {
            if i != best.link_index {
                self.advertise(network, i, AdvertisedRoute::from(&best));
            }
        }
    }

    fn on_advertisement(&mut self, from: &str, to: &str, link_index: usize, adv: ReachabilityAdvertisement) {
        let Some(link) = self.links.get(link_index).cloned() else { return };
        let network = if link.gateway_a == to { link.network_a.clone() } else { link.network_b.clone() };
        let Some(sender_key) = self.nodes.get(from).map(VaspNode::public_key) else { return };
        let Some(net) = self.networks.get_mut(&network) else { return };
        let before = net.routes().best_for_origin(&adv.origin_network_id).cloned();
        match net.routes_mut().process_advertisement(link_index, &link, to, &adv, &sender_key) {
            AdvertisementOutcome::Accept(route) => {
                self.log.push(
                    self.now,
                    to,
                    Event::AdvertisementAccepted {
                        network: network.clone(),
                        origin: route.origin_network_id.clone(),
                        path: route.network_path.clone(),
                    },
                );
                self.propagate_if_changed(&network, &route.origin_network_id, before.as_ref());
            }
            AdvertisementOutcome::Drop(reason) => {
                self.log.push(
                    self.now,
                    to,
                    Event::AdvertisementDropped { network: network.clone(), reason: format!("{reason:?}") },
                );
            }
        }
    }

    // ---- periodic work -----------------------------------------------------

    fn periodic(&mut self) {
        let now = self.now;
        let network_ids: Vec<String> = self.networks.keys().cloned().collect();
        let mut crl_due: BTreeSet<String> = BTreeSet::new();
        let mut crl_networks = Vec::new();
        for n in &network_ids {
            let rules = self.networks[n].rules();
            if now.is_multiple_of(rules.crl_exchange_period) {
                crl_networks.push(n.clone());
                crl_due.extend(self.networks[n].member_ids().map(str::to_string));
            }
        }
        let mut cache: BTreeMap<(String, Option<u64>), RevocationList> = BTreeMap::new();
        for vasp in &crl_due {
            let Some(node) = self.nodes.get(vasp) else { continue };
            let wanted: Vec<(String, Option<u64>)> = node
                .anchors()
                .ids()
                .filter(|id| self.cas.contains_key(*id))
                .map(|id| (id.to_string(), node.revocations().crl_number(id)))
                .collect();
            let mut lists = Vec::new();
            for key in wanted {
                let list = cache
                    .entry(key.clone())
                    .or_insert_with(|| self.cas.get_mut(&key.0).expect("checked").revocation_list_since(key.1, now));
                lists.push(list.clone());
            }
            let node = self.nodes.get_mut(vasp).expect("checked");
            let summary = node.ingest_revocations(&lists);
            let purged = node.purge_directories();
            self.log.push(
                now,
                vasp,
                Event::CrlMerged {
                    applied: summary.applied,
                    stale: summary.stale,
                    needs_base: summary.needs_base,
                    rejected: summary.rejected,
                    purged,
                },
            );
        }
        for n in &crl_networks {
            let members: Vec<String> = self.networks[n].member_ids().map(str::to_string).collect();
            for m in members {
                let neighbors = self.networks[n].neighbors(&m);
                let Some(node) = self.nodes.remove(&m) else { continue };
                let lists = node.export_revocations();
                for to in neighbors {
                    self.send(&node, &to, Payload::CrlExchange { lists: lists.clone() });
                }
                self.nodes.insert(m, node);
            }
        }
        for n in &network_ids {
            if !now.is_multiple_of(self.networks[n].rules().directory_sync_period) {
                continue;
            }
            let members: Vec<String> = self.networks[n].member_ids().map(str::to_string).collect();
            for m in members {
                let published = self.with_node(&m, |node, ctx| node.publish_directory(n, ctx)).flatten();
                if let Some((snapshot, _)) = published {
                    self.publications.push(Publication {
                        network: n.clone(),
                        publisher: m.clone(),
                        version: snapshot.version,
                        at: now,
                    });
                }
            }
            self.originate(n);
        }
    }

    fn deliver(&mut self) {
        while let Some(entry) = self.queue.first_entry() {
            if entry.key().0 > self.now {
                break;
            }
            let message = entry.remove();
            let kind = message.payload.kind().to_string();
            let Some(sender_key) = self.nodes.get(&message.from).map(VaspNode::public_key) else { continue };
            if !message.verify(&sender_key) {
                self.log.push(self.now, &message.to, Event::MessageRejected { from: message.from, kind });
                continue;
            }
            let down = self
                .channel_down_until
                .get(&(message.from.clone(), message.to.clone()))
                .is_some_and(|until| *until > self.now);
            if down {
                self.log.push(self.now, &message.from, Event::MessageDropped { to: message.to, kind });
                continue;
            }
            let Message { from, to, payload, .. } = message;
            match payload {
                Payload::Advertisement { link_index, advertisement } => {
                    self.on_advertisement(&from, &to, link_index, advertisement)
                }
                payload => {
                    self.with_node(&to, |node, ctx| node.handle_message(&from, payload, ctx));
                }
            }
        }
    }

    fn check_convergence(&mut self) {
        let now = self.now;
        let nodes = &self.nodes;
        let networks = &self.networks;
        let mut slowest = self.max_convergence_delay;
        self.publications.retain(|p| {
            let Some(net) = networks.get(&p.network) else { return false };
            let done = net.member_ids().filter(|m| *m != p.publisher).all(|m| {
                nodes
                    .get(m)
                    .and_then(|n| n.replica(&p.network))
                    .and_then(|r| r.view(&p.publisher))
                    .is_some_and(|s| s.version >= p.version)
            });
            if done {
                slowest = Some(slowest.map_or(now - p.at, |s| s.max(now - p.at)));
            }
            !done
        });
        self.max_convergence_delay = slowest;
    }

    /// Runs one tick: script, periodic work, delivery, timeouts, chain.
    pub fn step(&mut self) -> Result<(), SimError> {
        self.restore_links();
        while let Some(entry) = self.scenario.script.get(self.cursor) {
            if entry.tick > self.now {
                break;
            }
            let action = entry.action.clone();
            self.cursor += 1;
            self.apply_action(action)?;
        }
        if !self.draining() {
            self.periodic();
        }
        self.deliver();
        let ids: Vec<String> = self.nodes.keys().cloned().collect();
        for id in &ids {
            self.with_node(id, |n, ctx| n.check_timeouts(ctx));
        }
        let height_before = self.ledger.blocks().len();
        let confirmations = self.ledger.tick(self.now);
        for block in &self.ledger.blocks()[height_before..] {
            self.log.push(
                self.now,
                CHAIN,
                Event::BlockSealed { height: block.height, block_hash: block.block_hash, txs: block.txs.len() },
            );
        }
        for event in &confirmations {
            for id in &ids {
                self.with_node(id, |n, ctx| n.on_chain_confirmation(event, ctx));
            }
        }
        self.check_convergence();
        Ok(())
    }

    /// Steps every tick before `tick`, leaving the world at `tick` with
    /// that tick not yet run.
    pub fn run_until(&mut self, tick: Tick) -> Result<(), SimError> {
        while self.now < tick {
            self.step()?;
            self.now += 1;
        }
        Ok(())
    }

    /// Past the script horizon periodic work stops and in-flight traffic
    /// drains.
    fn draining(&self) -> bool {
        self.cursor >= self.scenario.script.len() && self.now > self.horizon
    }

    fn quiescent(&self) -> bool {
        self.cursor >= self.scenario.script.len()
            && self.now >= self.horizon
            && self.queue.is_empty()
            && self.ledger.pending_len() == 0
            && self.nodes.values().all(|n| {
                n.records().all(|r| !(r.role == Role::OriginatorSide && r.status == RecordStatus::PendingAck))
            })
    }

    /// Steps until the script is done and nothing is in flight. Returns
    /// false when the run had to be cut off.
    pub fn run(&mut self) -> Result<bool, SimError> {
        if self.finished {
            return Ok(true);
        }
        loop {
            self.step()?;
            if self.quiescent() {
                self.finished = true;
                return Ok(true);
            }
            if self.now >= self.horizon + QUIESCENCE_LIMIT {
                return Ok(false);
            }
            self.now += 1;
        }
    }

    /// Test hook: ids of originator-side transfers in request order.
    pub fn transfer_ids(&self) -> Vec<TransferId> {
        self.log
            .entries()
            .iter()
            .filter_map(|e| match e.event {
                Event::TransferRequested { transfer_id, .. } => Some(transfer_id),
                _ => None,
            })
            .collect()
    }

    /// Loop-free check over every candidate route in every network.
    pub fn routes_loop_free(&self) -> bool {
        self.networks.values().all(|n| n.routes().all_candidates().all(|r| !has_repeat(&r.network_path)))
    }
}

#[derive(Debug, Clone)]
struct AdvertisedRoute {
    hashes: BTreeSet<Hash32>,
    home: String,
    origin: String,
    seq: u64,
    path: Vec<String>,
}

impl From<&InstalledRoute> for AdvertisedRoute {
    fn from(r: &InstalledRoute) -> Self {
        Self {
            hashes: r.hashes.clone(),
            home: r.home_vasp_id.clone(),
            origin: r.origin_network_id.clone(),
            seq: r.origin_seq,
            path: r.network_path.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use sha2::{Digest, Sha256};

    use super::*;
    use crate::sim::reference::{customer, empty, network, peering, reference_scenario, vasp};
    use crate::sim::scenario::{CaSpec, ScriptEntry, TargetKind};
    use crate::sim::{run_scenario, Action};

    fn pair(seed: u64) -> Scenario {
        let mut s = empty(seed);
        s.cas = vec![CaSpec { id: "ca".into() }];
        s.networks = vec![network("net", &["ca"])];
        s.vasps = vec![vasp("v1", "ca", &["net"]), vasp("v2", "ca", &["net"])];
        s.customers = vec![customer("alice", "v1", CustodyModel::Mediated), customer("bob", "v2", CustodyModel::Mediated)];
        s
    }

    fn transfer(tick: Tick) -> ScriptEntry {
        ScriptEntry {
            tick,
            action: Action::Transfer {
                from: "alice".into(),
                to: Some("bob".into()),
                amount: 9,
                target: TargetKind::PublicKey,
                asset: "SIM".into(),
            },
        }
    }

    #[test]
    fn sub_seed_is_a_sha256_prefix() {
        let mut h = Sha256::new();
        h.update(42u64.to_be_bytes());
        h.update(b"ca-a");
        let expected = u64::from_be_bytes(h.finalize()[..8].try_into().unwrap());
        assert_eq!(sub_seed(42, "ca-a"), expected);
        assert_ne!(sub_seed(42, "ca-a"), sub_seed(42, "ca-b"));
        assert_ne!(sub_seed(42, "ca-a"), sub_seed(43, "ca-a"));
    }

    #[test]
    fn setup_is_deterministic_per_seed() {
        let a = World::new(reference_scenario(5)).unwrap();
        let b = World::new(reference_scenario(5)).unwrap();
        let c = World::new(reference_scenario(6)).unwrap();
        assert_eq!(a.log().digest(), b.log().digest());
        assert_ne!(a.log().digest(), c.log().digest());
        assert_eq!(a.customer_key("cust-1-0"), b.customer_key("cust-1-0"));
        assert_eq!(a.customer_vasp("cust-4-2"), Some("vasp-4"));
    }

    #[test]
    fn stale_rules_acknowledgement_blocks_joining() {
        let mut s = pair(1);
        s.vasps[1].acked_rules_version = 0;
        let world = World::new(s).unwrap();
        let failures = world.join_failures();
        assert_eq!(failures.len(), 1);
        assert_eq!(failures[0].0, "v2");
        assert!(world.networks()["net"].member("v2").is_none());
        assert!(world.networks()["net"].member("v1").is_some());
    }

    #[test]
    fn dropped_link_comes_back_after_its_duration() {
        let mut s = pair(1);
        s.networks.push(network("other", &["ca"]));
        s.vasps.push(vasp("v3", "ca", &["other"]));
        s.peering_links = vec![peering("v2", "net", "v3", "other")];
        s.script = vec![ScriptEntry {
            tick: 5,
            action: Action::DropLink { a: "v2".into(), b: "v3".into(), duration: 4, one_way: false },
        }];
        let mut world = World::new(s).unwrap();
        world.run_until(6).unwrap();
        assert!(!world.link_is_up(0));
        world.run_until(10).unwrap();
        assert!(world.link_is_up(0));
        assert!(world.run().unwrap());
        assert!(world.routes_loop_free());
    }

    #[test]
    fn lossy_channel_denies_instead_of_broadcasting() {
        let mut s = pair(2);
        s.drop_probability = 1.0;
        s.script = vec![transfer(20)];
        let (world, report) = run_scenario(s).unwrap();
        assert_eq!(world.ledger().transactions().count(), 0);
        assert_eq!(report.metrics.transfers_confirmed, 0);
        assert_eq!(report.metrics.transfers_attempted, 1);
        assert!(report.metrics.messages_dropped > 0);
        assert!(!report.has_breach(), "{:?}", report.breaches);
    }

    #[test]
    fn p2p_transfers_reach_the_ledger_without_records() {
        let mut s = pair(3);
        s.p2p_actors = vec!["p".into(), "q".into()];
        s.script = vec![ScriptEntry { tick: 1, action: Action::P2pTransfer { from: "p".into(), to: "q".into(), amount: 3 } }];
        let (world, report) = run_scenario(s).unwrap();
        let txs: Vec<_> = world.ledger().transactions().collect();
        assert_eq!(txs.len(), 1);
        assert_eq!(txs[0].1.body.from_public_key, world.p2p_key("p").unwrap());
        assert!(world.nodes().values().all(|n| n.records().next().is_none()));
        assert_eq!(report.metrics.p2p_txs, 1);
        assert!(!report.has_breach(), "{:?}", report.breaches);
    }
}
