//! Generated scenarios: the reference deployment and the fixtures the
//! acceptance suite runs.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{
    Action, BatchLeg, CaSpec, CustomerSetup, CustomerSpec, NetworkSpec, PeeringSpec, RulesOverride, Scenario,
    ScriptEntry, TargetKind, VaspSpec,
};
use crate::ca::{CertClass, RevocationReason};
use crate::vasp::CustodyModel;
use crate::Tick;

pub const REFERENCE_TRANSFERS: usize = 200;
pub const REFERENCE_CUSTOMERS_PER_VASP: usize = 10;
/// Directories and routes have settled by this tick.
pub const SETTLE_TICK: Tick = 20;

fn attributes(id: &str) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("name".to_string(), format!("Customer {id}")),
        ("email".to_string(), format!("{id}@example.org")),
    ])
}

pub fn customer(id: &str, vasp: &str, custody: CustodyModel) -> CustomerSpec {
    CustomerSpec {
        id: id.to_string(),
        vasp: vasp.to_string(),
        custody: Some(custody),
        class: CertClass::Class1,
        setup: CustomerSetup::Enrolled,
        attributes: attributes(id),
    }
}

pub fn vasp(id: &str, ca: &str, networks: &[&str]) -> VaspSpec {
    VaspSpec {
        id: id.to_string(),
        ca: ca.to_string(),
        networks: networks.iter().map(|n| n.to_string()).collect(),
        default_custody: CustodyModel::Mediated,
        acked_rules_version: 1,
    }
}

pub fn network(id: &str, cas: &[&str]) -> NetworkSpec {
    NetworkSpec {
        id: id.to_string(),
        recognized_cas: cas.iter().map(|c| c.to_string()).collect(),
        rules: RulesOverride::default(),
        gossip_edges: None,
    }
}

pub fn peering(gateway_a: &str, network_a: &str, gateway_b: &str, network_b: &str) -> PeeringSpec {
    PeeringSpec {
        gateway_a: gateway_a.into(),
        network_a: network_a.into(),
        gateway_b: gateway_b.into(),
        network_b: network_b.into(),
    }
}

pub fn empty(seed: u64) -> Scenario {
    Scenario {
        seed,
        max_latency: 3,
        drop_probability: 0.0,
        confirmation_delay: crate::chain::DEFAULT_CONFIRMATION_DELAY,
        cas: Vec::new(),
        networks: Vec::new(),
        vasps: Vec::new(),
        peering_links: Vec::new(),
        customers: Vec::new(),
        suspects: Vec::new(),
        p2p_actors: Vec::new(),
        script: Vec::new(),
    }
}

fn custody_for(index: usize) -> CustodyModel {
    match index % 10 {
        0..=3 => CustodyModel::Mediated,
        4..=6 => CustodyModel::KeyCustody,
        _ => CustodyModel::Commingled,
    }
}

/// Two networks of three VASPs joined by one peering link, two CAs both
/// networks recognize, and 200 transfers between 60 customers.
pub fn reference_scenario(seed: u64) -> Scenario {
    let mut s = empty(seed);
    s.cas = vec![CaSpec { id: "ca-a".into() }, CaSpec { id: "ca-b".into() }];
    s.networks = vec![network("net-a", &["ca-a", "ca-b"]), network("net-b", &["ca-a", "ca-b"])];
    for i in 1..=6 {
        let (ca, net) = if i <= 3 { ("ca-a", "net-a") } else { ("ca-b", "net-b") };
        s.vasps.push(vasp(&format!("vasp-{i}"), ca, &[net]));
    }
    s.peering_links = vec![peering("vasp-3", "net-a", "vasp-4", "net-b")];
    for v in 1..=6 {
        for c in 0..REFERENCE_CUSTOMERS_PER_VASP {
            let id = format!("cust-{v}-{c}");
            s.customers.push(customer(&id, &format!("vasp-{v}"), custody_for(c)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed);
    let ids: Vec<(String, String)> = s.customers.iter().map(|c| (c.id.clone(), c.vasp.clone())).collect();
    let kinds = [TargetKind::PublicKey, TargetKind::KeyHash, TargetKind::Account];
    for i in 0..REFERENCE_TRANSFERS {
        let (from, from_vasp) = ids.choose(&mut rng).expect("customers").clone();
        let to = loop {
            let (to, to_vasp) = ids.choose(&mut rng).expect("customers");
            if *to_vasp != from_vasp {
                break to.clone();
            }
        };
        s.script.push(ScriptEntry {
            tick: SETTLE_TICK + (i as Tick) * 2,
            action: Action::Transfer {
                from,
                to: Some(to),
                amount: rng.random_range(1..=1_000),
                target: *kinds.choose(&mut rng).expect("kinds"),
                asset: "SIM".into(),
            },
        });
    }
    s
}

/// One network of two VASPs and one denial case per transfer: an
/// uncertified originator, a revoked beneficiary, a designated beneficiary
/// and a key nobody certified.
pub fn denial_scenario(seed: u64) -> Scenario {
    let mut s = empty(seed);
    s.cas = vec![CaSpec { id: "ca".into() }];
    s.networks = vec![network("net", &["ca"])];
    s.vasps = vec![vasp("vasp-o", "ca", &["net"]), vasp("vasp-b", "ca", &["net"])];
    let mut uncertified = customer("no-cert", "vasp-o", CustodyModel::Mediated);
    uncertified.setup = CustomerSetup::Opened;
    s.customers = vec![
        customer("alice", "vasp-o", CustodyModel::Mediated),
        uncertified,
        customer("bob", "vasp-b", CustodyModel::Mediated),
        customer("revoked", "vasp-b", CustodyModel::KeyCustody),
        customer("suspect", "vasp-b", CustodyModel::Mediated),
    ];
    s.suspects = vec!["suspect".into()];
    let transfer = |from: &str, to: Option<&str>, target| Action::Transfer {
        from: from.into(),
        to: to.map(str::to_string),
        amount: 10,
        target,
        asset: "SIM".into(),
    };
    s.script = vec![
        ScriptEntry { tick: SETTLE_TICK, action: transfer("no-cert", Some("bob"), TargetKind::PublicKey) },
        ScriptEntry {
            tick: SETTLE_TICK,
            action: Action::RevokeCert { customer: "revoked".into(), reason: RevocationReason::KeyCompromise },
        },
        ScriptEntry { tick: SETTLE_TICK + 1, action: transfer("alice", Some("revoked"), TargetKind::PublicKey) },
        ScriptEntry { tick: SETTLE_TICK + 2, action: transfer("alice", Some("suspect"), TargetKind::PublicKey) },
        ScriptEntry { tick: SETTLE_TICK + 3, action: transfer("alice", None, TargetKind::UnknownKey) },
    ];
    s
}

/// `batches` commingled batches from one VASP to customers at another.
pub fn commingled_scenario(seed: u64, batches: usize) -> Scenario {
    let mut s = empty(seed);
    s.cas = vec![CaSpec { id: "ca".into() }];
    s.networks = vec![network("net", &["ca"])];
    s.vasps = vec![vasp("pool-o", "ca", &["net"]), vasp("pool-b", "ca", &["net"])];
    for i in 0..6 {
        s.customers.push(customer(&format!("o-{i}"), "pool-o", CustodyModel::Commingled));
        let custody = if i % 2 == 0 { CustodyModel::Commingled } else { CustodyModel::Mediated };
        s.customers.push(customer(&format!("b-{i}"), "pool-b", custody));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xba7c);
    for i in 0..batches {
        let legs = (0..rng.random_range(1..=4))
            .map(|_| BatchLeg {
                from: format!("o-{}", rng.random_range(0..6)),
                to: format!("b-{}", rng.random_range(0..6)),
                amount: rng.random_range(1..=500),
            })
            .collect();
        s.script.push(ScriptEntry { tick: SETTLE_TICK + i as Tick, action: Action::Batch { legs, asset: "SIM".into() } });
    }
    s
}

/// One network of `members` VASPs gossiping over a random connected graph.
pub fn gossip_scenario(seed: u64, members: usize, extra_edges: usize, periods: Tick) -> Scenario {
    let mut s = empty(seed);
    s.cas = vec![CaSpec { id: "ca".into() }];
    let mut net = network("net", &["ca"]);
    let ids: Vec<String> = (0..members).map(|i| format!("g-{i:02}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6055);
    let mut edges = Vec::new();
    for i in 1..members {
        let j = rng.random_range(0..i);
        edges.push((ids[j].clone(), ids[i].clone()));
    }
    for _ in 0..extra_edges {
        let a = rng.random_range(0..members);
        let b = rng.random_range(0..members);
        if a != b {
            edges.push((ids[a].clone(), ids[b].clone()));
        }
    }
    net.gossip_edges = Some(edges);
    s.networks = vec![net];
    for (i, id) in ids.iter().enumerate() {
        s.vasps.push(vasp(id, "ca", &["net"]));
        for c in 0..rng.random_range(1..=3) {
            s.customers.push(customer(&format!("{id}-c{c}"), id, custody_for(i + c)));
        }
    }
    let period = crate::network::OperatingRules::default().directory_sync_period;
    s.script.push(ScriptEntry { tick: 0, action: Action::Advance { ticks: periods * period } });
    s
}

/// Networks a, b, c, d peered a-b, a-c, b-d, c-d, one gateway VASP per
/// side and a customer in each network.
pub fn diamond_scenario(seed: u64) -> Scenario {
    let mut s = empty(seed);
    s.cas = vec![CaSpec { id: "ca".into() }];
    for n in ["a", "b", "c", "d"] {
        s.networks.push(network(&format!("net-{n}"), &["ca"]));
    }
    let vasps = [
        ("a1", "net-a"),
        ("a2", "net-a"),
        ("b1", "net-b"),
        ("b2", "net-b"),
        ("c1", "net-c"),
        ("c2", "net-c"),
        ("d1", "net-d"),
        ("d2", "net-d"),
    ];
    for (id, net) in vasps {
        s.vasps.push(vasp(id, "ca", &[net]));
    }
    s.peering_links = vec![
        peering("a1", "net-a", "b1", "net-b"),
        peering("a2", "net-a", "c1", "net-c"),
        peering("b2", "net-b", "d1", "net-d"),
        peering("c2", "net-c", "d2", "net-d"),
    ];
    for (id, _) in vasps {
        s.customers.push(customer(&format!("{id}-cust"), id, CustodyModel::Mediated));
    }
    s.script = vec![ScriptEntry {
        tick: SETTLE_TICK + 10,
        action: Action::Transfer {
            from: "a1-cust".into(),
            to: Some("d2-cust".into()),
            amount: 42,
            target: TargetKind::KeyHash,
            asset: "SIM".into(),
        },
    }];
    s
}
