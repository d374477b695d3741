use std::path::PathBuf;

use vaspnet_core::events::Event;
use vaspnet_core::sim::{load_scenario, reference, replay, run_scenario, Scenario};

fn fixture(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    load_scenario(&path).unwrap()
}

#[test]
fn reference_run_is_clean() {
    let (world, report) = run_scenario(reference::reference_scenario(7)).unwrap();
    let m = &report.metrics;
    assert!(report.breaches.is_empty(), "{:?}", report.breaches);
    assert_eq!(m.transfers_attempted, reference::REFERENCE_TRANSFERS as u64);
    assert_eq!(m.transfers_confirmed, m.transfers_attempted, "{:?}", m.denied_by_reason);
    assert_eq!(m.audit_violations + m.orphan_chain_txs + m.unconfirmed_records, 0);
    assert!(world.ledger().verify_chain());
}

#[test]
fn checked_in_fixtures_match_generators() {
    assert_eq!(fixture("reference.toml"), reference::reference_scenario(7));
    assert_eq!(fixture("denials.toml"), reference::denial_scenario(7));
    assert_eq!(fixture("diamond.toml"), reference::diamond_scenario(7));
}

#[test]
fn scenario_round_trips_through_toml() {
    for s in [reference::commingled_scenario(3, 5), reference::gossip_scenario(3, 6, 2, 2)] {
        assert_eq!(Scenario::from_toml(&s.to_toml()).unwrap(), s);
    }
}

#[test]
fn dropped_acks_time_out_with_one_unconfirmed_beneficiary_record() {
    let (world, report) = run_scenario(fixture("ack_timeout.toml")).unwrap();
    let m = &report.metrics;
    assert_eq!(m.denied_by_reason.get("channel_timeout"), Some(&1));
    assert_eq!(m.transfers_denied, 1);
    assert_eq!(m.unconfirmed_records, 1);
    assert_eq!(world.ledger().transactions().count(), 0);
    assert!(!report.has_breach(), "{:?}", report.breaches);
}

#[test]
fn repeated_runs_are_byte_identical() {
    for s in [fixture("minimal.toml"), reference::commingled_scenario(9, 10), reference::gossip_scenario(9, 5, 1, 2)] {
        let (wa, a) = run_scenario(s.clone()).unwrap();
        let (wb, b) = run_scenario(s).unwrap();
        assert_eq!(a.to_canonical(), b.to_canonical());
        assert_eq!(a.to_text(), b.to_text());
        assert_eq!(wa.log().to_text(), wb.log().to_text());
    }
}

#[test]
fn event_log_replays_to_the_report_digest() {
    let (world, report) = run_scenario(reference::diamond_scenario(11)).unwrap();
    let summary = replay(&world.log().to_text()).unwrap();
    assert_eq!(summary.digest, report.digest);
    assert_eq!(summary.events, world.log().len());
    assert_eq!(summary.last_tick, world.log().entries().last().unwrap().tick);
}

#[test]
fn commingled_batches_balance() {
    let (world, report) = run_scenario(reference::commingled_scenario(5, 15)).unwrap();
    assert!(!report.has_breach(), "{:?}", report.breaches);
    assert_eq!(report.metrics.transfers_confirmed, 15);
    let batch_legs: usize = world
        .nodes()
        .values()
        .flat_map(|n| n.records())
        .filter_map(|r| r.notice.batch_entries.as_ref().map(Vec::len))
        .sum();
    assert!(batch_legs >= 2 * 15, "both sides hold every leg");
}

#[test]
fn gossip_fixture_converges_everywhere() {
    let (world, report) = run_scenario(reference::gossip_scenario(2, 8, 3, 5)).unwrap();
    assert!(!report.has_breach(), "{:?}", report.breaches);
    assert_eq!(world.unconverged(), 0);
    assert!(world.max_convergence_delay().is_some());
    let merged = world.log().entries().iter().filter(|e| matches!(e.event, Event::CrlMerged { .. })).count();
    assert!(merged > 0);
}
