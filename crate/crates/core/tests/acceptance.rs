//! The ten acceptance criteria. Each prints one PASS/FAIL line; the test
//! fails if any criterion does.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vaspnet_core::ca::{
    Attributes, CertClass, CertificateAuthority, CertificateProfile, RevocationReason, RevocationView, Serial,
    TrustAnchors, Validity,
};
use vaspnet_core::chain::verify_blocks;
use vaspnet_core::crypto::{derive_keypair, digest, generate_keypair, sign, verify, Hash32, Signature};
use vaspnet_core::events::Event;
use vaspnet_core::network::{
    has_repeat, route_query, DeltaOutcome, DirectoryEntry, DirectoryReplica, DirectorySnapshot,
};
use vaspnet_core::sim::{blind_broadcasts, reference, run_scenario, Report, World};
use vaspnet_core::vasp::{DenyReason, CertRole, Role};

const RUNTIME_LIMIT: Duration = Duration::from_secs(5);
const SAFETY_SEEDS: u64 = 25;
const DIGEST_SEEDS: u64 = 20;
const EQUIVALENCE_SEQUENCES: u64 = 100;
const MAX_SEQUENCE_EVENTS: usize = 50;
const GOSSIP_TOPOLOGIES: u64 = 20;
const COMMINGLED_BATCHES: usize = 100;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

struct SeedRun {
    world: World,
    report: Report,
    elapsed: Duration,
}

fn run_reference(seed: u64) -> SeedRun {
    let start = Instant::now();
    let (world, report) = run_scenario(reference::reference_scenario(seed)).expect("reference scenario runs");
    SeedRun { world, report, elapsed: start.elapsed() }
}

fn travel_rule_completeness(run: &SeedRun) -> Verdict {
    let m = &run.report.metrics;
    let shape = run.world.networks().len() == 2
        && run.world.nodes().len() == 6
        && run.world.cas().len() == 2
        && run.world.scenario().customers.len() == 60
        && m.transfers_attempted == 200;
    let pass = shape
        && m.audit_violations == 0
        && m.orphan_chain_txs == 0
        && m.unconfirmed_records == 0
        && run.elapsed < RUNTIME_LIMIT;
    verdict(
        pass,
        format!(
            "violations={} orphans={} unconfirmed={} confirmed={}/{} runtime={:.2?} (limit {:?})",
            m.audit_violations,
            m.orphan_chain_txs,
            m.unconfirmed_records,
            m.transfers_confirmed,
            m.transfers_attempted,
            run.elapsed,
            RUNTIME_LIMIT
        ),
    )
}

fn no_blind_broadcast(runs: &[SeedRun]) -> Verdict {
    let mut exceptions = 0;
    let mut vasp_txs = 0;
    for run in runs {
        exceptions += blind_broadcasts(&run.world).len();
        vasp_txs += run
            .world
            .log()
            .entries()
            .iter()
            .filter(|e| matches!(e.event, Event::ChainSubmitted { .. }))
            .count();
    }
    verdict(
        exceptions == 0 && runs.len() as u64 == SAFETY_SEEDS,
        format!("{} seeds, {vasp_txs} VASP-originated txs, {exceptions} exceptions", runs.len()),
    )
}

fn denial_correctness() -> Verdict {
    let (world, _) = run_scenario(reference::denial_scenario(3)).expect("denial scenario runs");
    let expected = [
        DenyReason::NoOriginatorCert,
        DenyReason::CertInvalid(CertRole::Beneficiary),
        DenyReason::SuspectParty,
        DenyReason::BeneficiaryUnresolved,
    ];
    let denied: Vec<DenyReason> = world
        .log()
        .entries()
        .iter()
        .filter_map(|e| match e.event {
            Event::TransferDenied { reason, .. } => Some(reason),
            _ => None,
        })
        .collect();
    let exact = expected.iter().zip(&denied).filter(|(a, b)| a == b).count();
    let writes = world.ledger().transactions().count();
    let pending = world.ledger().pending_len();
    verdict(
        exact == 4 && denied.len() == 4 && writes == 0 && pending == 0,
        format!("{exact}/4 exact, got {denied:?}, ledger writes {writes}"),
    )
}

fn issue(ca: &mut CertificateAuthority, i: usize) -> (Serial, Hash32) {
    let attrs: Attributes =
        [("name".to_string(), format!("s{i}")), ("email".to_string(), format!("s{i}@x.org"))].into_iter().collect();
    let reg = ca.register_subject(&format!("s{i}"), &attrs, CertClass::Class1, 0).expect("registers");
    let key = derive_keypair(format!("subject-{i}").as_bytes()).public_key();
    let cert = ca
        .issue_certificate(&reg, key, CertificateProfile::new("p", CertClass::Class1), Validity::new(0, 1_000).unwrap(), 0)
        .expect("issues");
    (cert.serial, cert.key_hash())
}

/// One random sequence of revocations, list publications and directory
/// publications. Returns false on the first mismatch.
fn equivalence_sequence(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ca = CertificateAuthority::new("ca-eq", derive_keypair(b"ca-eq"), Validity::new(0, 10_000).unwrap(), seed)
        .expect("ca");
    let anchors = TrustAnchors::from_iter([ca.root().clone()]);
    let subjects: Vec<(Serial, Hash32)> = (0..12).map(|i| issue(&mut ca, i)).collect();
    let mut revoked = BTreeSet::new();
    let mut folded_view = RevocationView::new();
    let mut publisher = DirectoryReplica::new("pub");
    let mut follower = DirectoryReplica::new("fol");
    let mut folded_dir = DirectorySnapshot::empty("pub");
    let events = rng.random_range(1..=MAX_SEQUENCE_EVENTS);
    for now in 1..=events as u64 {
        match rng.random_range(0..3) {
            0 => {
                let (serial, _) = subjects.choose(&mut rng).expect("subjects");
                if revoked.insert(*serial) {
                    ca.revoke(serial, RevocationReason::KeyCompromise, now).expect("revokes");
                }
            }
            1 => {
                // Lagging holders skip some lists and catch up by delta later.
                if rng.random_bool(0.7) {
                    let list = ca.revocation_list_since(folded_view.crl_number("ca-eq"), now);
                    folded_view.apply(&list, &anchors).expect("list applies");
                    let mut full_view = RevocationView::new();
                    full_view.apply_crl(&ca.generate_crl(now), &anchors).expect("full list applies");
                    if folded_view.entries_bytes() != full_view.entries_bytes() {
                        return false;
                    }
                }
            }
            _ => {
                let entries: BTreeSet<DirectoryEntry> = subjects
                    .iter()
                    .filter(|(s, _)| !revoked.contains(s) && rng.random_bool(0.6))
                    .map(|(s, h)| DirectoryEntry {
                        certificate_serial: *s,
                        public_key_hash: *h,
                        issuer_ca_id: "ca-eq".into(),
                    })
                    .collect();
                let (snapshot, delta) = publisher.publish(entries);
                let Some(next) = delta.apply_to(&folded_dir) else { return false };
                folded_dir = next;
                if follower.apply_delta(&delta) != DeltaOutcome::Applied {
                    return false;
                }
                let seen = follower.view("pub").map(DirectorySnapshot::to_bytes);
                if folded_dir.to_bytes() != snapshot.to_bytes() || seen != Some(snapshot.to_bytes()) {
                    return false;
                }
            }
        }
    }
    let mut full_view = RevocationView::new();
    full_view.apply_crl(&ca.generate_crl(events as u64 + 1), &anchors).expect("full list applies");
    let list = ca.revocation_list_since(folded_view.crl_number("ca-eq"), events as u64 + 1);
    folded_view.apply(&list, &anchors).expect("list applies");
    folded_view.entries_bytes() == full_view.entries_bytes()
}

fn delta_equivalence() -> Verdict {
    let ok = (0..EQUIVALENCE_SEQUENCES).filter(|s| equivalence_sequence(*s)).count();
    verdict(ok as u64 == EQUIVALENCE_SEQUENCES, format!("{ok}/{EQUIVALENCE_SEQUENCES} sequences equal"))
}

fn gossip_convergence() -> Verdict {
    let mut failures = Vec::new();
    let mut worst = (0.0f64, String::new());
    for seed in 0..GOSSIP_TOPOLOGIES {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + seed);
        let members = rng.random_range(3..=12);
        let extra = rng.random_range(0..members);
        let (world, _) = run_scenario(reference::gossip_scenario(seed, members, extra, 6)).expect("gossip runs");
        let net = &world.networks()["net"];
        let diameter = net.gossip_diameter().expect("connected") as u64;
        let period = net.rules().directory_sync_period;
        let bound = diameter * period + world.scenario().max_latency;
        let measured = world.max_convergence_delay().unwrap_or(0);
        let identical = net.member_ids().all(|publisher| {
            let own = world.node(publisher).and_then(|n| n.replica("net")).map(|r| r.own_snapshot().to_bytes());
            net.member_ids().filter(|m| *m != publisher).all(|m| {
                world.node(m).and_then(|n| n.replica("net")).and_then(|r| r.view(publisher)).map(|s| s.to_bytes())
                    == own
            })
        });
        if !identical || measured > bound || world.unconverged() > 0 {
            failures.push(format!("seed {seed}: identical={identical} measured={measured} bound={bound}"));
        }
        let ratio = measured as f64 / bound as f64;
        if worst.1.is_empty() || ratio > worst.0 {
            worst = (ratio, format!("members={members} diameter={diameter} measured={measured} bound={bound}"));
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{GOSSIP_TOPOLOGIES} topologies (3-12 members) converged; tightest {}", worst.1)
        } else {
            failures.join("; ")
        },
    )
}

fn path_vector() -> Verdict {
    let (world, _) = run_scenario(reference::diamond_scenario(5)).expect("diamond runs");
    let looping = world
        .log()
        .entries()
        .iter()
        .filter(|e| matches!(&e.event, Event::AdvertisementAccepted { path, .. } if has_repeat(path)))
        .count();
    let accepted = world
        .log()
        .entries()
        .iter()
        .filter(|e| matches!(e.event, Event::AdvertisementAccepted { .. }))
        .count();
    let table_of = |id: &str| world.networks().get(id).map(|n| n.routes());
    let up = |_: usize| true;
    let node_up = |_: &str| true;
    let mut missing = 0;
    let mut checked = 0;
    for (net_id, net) in world.networks() {
        for member in net.member_ids() {
            let own = world.node(member).and_then(|n| n.replica(net_id)).expect("replica").own_snapshot();
            for entry in &own.entries {
                for from in world.networks().keys().filter(|n| *n != net_id) {
                    checked += 1;
                    let requester = world.networks()[from].member_ids().next().expect("member");
                    match route_query(table_of, world.links(), from, requester, &entry.public_key_hash, &up, &node_up) {
                        Ok(p) if p.network_path.last() == Some(net_id) => {}
                        _ => missing += 1,
                    }
                }
            }
        }
    }
    let target = world.customer_key("d2-cust").expect("customer").key_hash();
    let installed: Vec<String> = table_of("net-a")
        .and_then(|t| t.best_for_hash(&target))
        .map(|r| r.network_path.iter().rev().cloned().collect())
        .unwrap_or_default();
    let queried = route_query(table_of, world.links(), "net-a", "a1", &target, &up, &node_up)
        .map(|p| p.network_path)
        .unwrap_or_default();
    let transfer_hops = world.log().entries().iter().find_map(|e| match &e.event {
        Event::BeneficiaryResolved { path, source, .. } if source == "cross_network" => Some(path.clone()),
        _ => None,
    });
    let expected = ["net-a", "net-b", "net-d"].map(String::from).to_vec();
    let hops_follow = transfer_hops.as_ref().is_some_and(|h| {
        let nets: Vec<String> = h
            .iter()
            .filter_map(|v| world.nodes().get(v)?.networks().first().cloned())
            .fold(Vec::new(), |mut acc, n| {
                if acc.last() != Some(&n) {
                    acc.push(n);
                }
                acc
            });
        nets == expected
    });
    let confirmed = world.log().entries().iter().any(|e| matches!(e.event, Event::TransferConfirmed { .. }));
    verdict(
        looping == 0 && missing == 0 && installed == expected && queried == expected && hops_follow && confirmed,
        format!(
            "{accepted} accepted adverts, {looping} looping; {}/{checked} hashes routable; a->d path {:?} via hops {:?}",
            checked - missing,
            queried,
            transfer_hops.unwrap_or_default()
        ),
    )
}

fn commingled_arithmetic() -> Verdict {
    let (world, _) = run_scenario(reference::commingled_scenario(11, COMMINGLED_BATCHES)).expect("batches run");
    let origin = world.node("pool-o").expect("pool-o");
    let mut submissions: BTreeMap<[u8; 16], usize> = BTreeMap::new();
    for e in world.log().entries() {
        if let Event::ChainSubmitted { transfer_id, .. } = e.event {
            *submissions.entry(transfer_id).or_default() += 1;
        }
    }
    let mut good = 0;
    for record in origin.records().filter(|r| r.role == Role::OriginatorSide) {
        let Some(entries) = &record.notice.batch_entries else { continue };
        let sum: u64 = entries.iter().map(|e| e.amount).sum();
        let on_chain = record.chain_tx_id.and_then(|id| world.ledger().find(&id)).map(|(_, tx)| tx.amount());
        if on_chain == Some(sum) && submissions.get(&record.record_id) == Some(&1) {
            good += 1;
        }
    }
    let txs = world.ledger().transactions().count();
    verdict(
        good == COMMINGLED_BATCHES && txs == COMMINGLED_BATCHES,
        format!("{good}/{COMMINGLED_BATCHES} batches match, {txs} ledger txs"),
    )
}

fn determinism(runs: &[SeedRun]) -> Verdict {
    let first = &runs[0];
    let again = run_reference(first.report.seed);
    let repeat = again.world.log().digest() == first.world.log().digest()
        && again.world.log().to_text() == first.world.log().to_text();
    let distinct: BTreeSet<Hash32> =
        runs.iter().take(DIGEST_SEEDS as usize).map(|r| r.world.log().digest()).collect();
    verdict(
        repeat && distinct.len() as u64 == DIGEST_SEEDS,
        format!("repeat run identical={repeat}; {} distinct digests over {DIGEST_SEEDS} seeds", distinct.len()),
    )
}

fn immutability(runs: &[SeedRun]) -> Verdict {
    let all_verify = runs.iter().all(|r| r.world.ledger().verify_chain());
    let blocks = runs[0].world.ledger().blocks().to_vec();
    let mut tampered = blocks.clone();
    let target = tampered.iter_mut().find(|b| !b.txs.is_empty()).expect("a confirmed tx");
    target.txs[0].body.amount += 1;
    let detected = !verify_blocks(&tampered);
    verdict(
        all_verify && verify_blocks(&blocks) && detected,
        format!("{} completed runs verify={all_verify}; mutated fixture rejected={detected}", runs.len()),
    )
}

struct Vector {
    seed: &'static str,
    message: &'static str,
    public_key: &'static str,
    signature: &'static str,
}

const ED25519_VECTORS: [Vector; 5] = [
    Vector {
        seed: "0000000000000000000000000000000000000000000000000000000000000000",
        message: "",
        public_key: "3b6a27bcceb6a42d62a3a8d02a6f0d73653215771de243a63ac048a18b59da29",
        signature: "8f895b3cafe2c9506039d0e2a66382568004674fe8d237785092e40d6aaf483e4fc60168705f31f101596138ce21aa357c0d32a064f423dc3ee4aa3abf53f803",
    },
    Vector {
        seed: "9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60",
        message: "",
        public_key: "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a",
        signature: "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e065224901555fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b",
    },
    Vector {
        seed: "4ccd089b28ff96da9db6c346ec114e0f5b8a319f35aba624da8cf6ed4fb8a6fb",
        message: "72",
        public_key: "3d4017c3e843895a92b70aa74d1b7ebc9c982ccf2ec4968cc0cd55f12af4660c",
        signature: "92a009a9f0d4cab8720e820b5f642540a2b27b5416503f8fb3762223ebdb69da085ac1e43e15996e458f3613d0f11d8c387b2eaeb4302aeeb00d291612bb0c00",
    },
    Vector {
        seed: "c5aa8df43f9f837bedb7442f31dcb7b166d38535076f094b85ce3a2e0b4458f7",
        message: "af82",
        public_key: "fc51cd8e6218a1a38da47ed00230f0580816ed13ba3303ac5deb911548908025",
        signature: "6291d657deec24024827e69c3abe01a30ce548a284743a445e3680d7db5ac3ac18ff9b538d16f290ae67f760984dc6594a7c15e9716ed28dc027beceea1ec40a",
    },
    Vector {
        seed: "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f",
        message: "74726176656c2072756c65",
        public_key: "03a107bff3ce10be1d70dd18e74bc09967e4d6309ba50d5f1ddc8664125531b8",
        signature: "2156d6472500561253951480445beaaa92d2ea602114f6e6cdf2755a70c5b7a82c3593da04ab0393744e787803af928ef97f78c1ba8a1733a18f653db798e20d",
    },
];

const SHA256_VECTORS: [(&str, &str); 3] = [
    ("", "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"),
    ("abc", "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"),
    (
        "abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq",
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1",
    ),
];

fn crypto_conformance() -> Verdict {
    let mut ok = 0;
    for v in &ED25519_VECTORS {
        let key = generate_keypair(&hex::decode(v.seed).unwrap()).expect("seed");
        let message = hex::decode(v.message).unwrap();
        let sig = sign(&key, &message);
        let mut flipped = sig.0;
        flipped[0] ^= 1;
        if key.public_key().to_hex() == v.public_key
            && sig.to_hex() == v.signature
            && verify(&key.public_key(), &message, &sig)
            && !verify(&key.public_key(), &message, &Signature(flipped))
        {
            ok += 1;
        }
    }
    for (input, expected) in SHA256_VECTORS {
        if digest(input.as_bytes()).to_hex() == expected {
            ok += 1;
        }
    }
    let total = ED25519_VECTORS.len() + SHA256_VECTORS.len();
    verdict(ok == total, format!("{ok}/{total} vectors"))
}

#[test]
fn acceptance_criteria() {
    let runs: Vec<SeedRun> = (1..=SAFETY_SEEDS).map(run_reference).collect();
    let results = [
        ("travel-rule completeness", travel_rule_completeness(&runs[0])),
        ("no blind broadcast", no_blind_broadcast(&runs)),
        ("denial correctness", denial_correctness()),
        ("delta/CRL equivalence", delta_equivalence()),
        ("gossip convergence", gossip_convergence()),
        ("path-vector properties", path_vector()),
        ("commingled arithmetic", commingled_arithmetic()),
        ("determinism", determinism(&runs)),
        ("immutability", immutability(&runs)),
        ("crypto conformance", crypto_conformance()),
    ];
    for (i, (name, v)) in results.iter().enumerate() {
        println!("criterion {:>2} {:<26} {} {}", i + 1, name, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed: Vec<&str> = results.iter().filter(|(_, v)| !v.pass).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
