//! Run metrics, invariant checks and the text and canonical reports.

use std::collections::{BTreeMap, BTreeSet};

use crate::crypto::{Hash32, TlvWriter};
use crate::events::{Event, TransferId};
use crate::vasp::{RecordStatus, Role, Violation};
use crate::Tick;

use super::world::World;

pub const REPORT_HEADER: &str = "vaspnet run report";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metrics {
    pub ticks: Tick,
    pub events: u64,
    pub messages_sent: u64,
    pub transfers_attempted: u64,
    pub transfers_confirmed: u64,
    pub transfers_denied: u64,
    pub transfers_in_flight: u64,
    pub denied_by_reason: BTreeMap<String, u64>,
    pub resolutions_ok: u64,
    pub resolutions_failed: u64,
    pub resolution_hops: u64,
    pub resolved_by_source: BTreeMap<String, u64>,
    pub audit_violations: u64,
    pub orphan_chain_txs: u64,
    pub unconfirmed_records: u64,
    pub matched_records: u64,
    pub blocks: u64,
    pub chain_txs: u64,
    pub p2p_txs: u64,
    pub messages_dropped: u64,
    pub max_convergence_delay: Option<Tick>,
}

impl Metrics {
    pub fn resolution_success_rate(&self) -> Option<f64> {
        let total = self.resolutions_ok + self.resolutions_failed;
        (total > 0).then(|| self.resolutions_ok as f64 / total as f64)
    }

    pub fn mean_resolution_hops(&self) -> Option<f64> {
        (self.resolutions_ok > 0).then(|| self.resolution_hops as f64 / self.resolutions_ok as f64)
    }

    /// Name/value pairs in a fixed order.
    pub fn lines(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("ticks".into(), self.ticks.to_string()),
            ("events".into(), self.events.to_string()),
            ("messages_sent".into(), self.messages_sent.to_string()),
            ("messages_dropped".into(), self.messages_dropped.to_string()),
            ("transfers_attempted".into(), self.transfers_attempted.to_string()),
            ("transfers_confirmed".into(), self.transfers_confirmed.to_string()),
            ("transfers_denied".into(), self.transfers_denied.to_string()),
            ("transfers_in_flight".into(), self.transfers_in_flight.to_string()),
            ("resolutions_ok".into(), self.resolutions_ok.to_string()),
            ("resolutions_failed".into(), self.resolutions_failed.to_string()),
        ];
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        out.push(("resolution_success_rate".into(), fmt(self.resolution_success_rate())));
        out.push(("mean_resolution_hops".into(), fmt(self.mean_resolution_hops())));
        for (source, n) in &self.resolved_by_source {
            out.push((format!("resolved_via_{source}"), n.to_string()));
        }
        out.extend([
            ("audit_violations".into(), self.audit_violations.to_string()),
            ("orphan_chain_txs".into(), self.orphan_chain_txs.to_string()),
            ("unconfirmed_records".into(), self.unconfirmed_records.to_string()),
            ("matched_records".into(), self.matched_records.to_string()),
            ("blocks".into(), self.blocks.to_string()),
            ("chain_txs".into(), self.chain_txs.to_string()),
            ("p2p_txs".into(), self.p2p_txs.to_string()),
            (
                "max_convergence_delay".into(),
                self.max_convergence_delay.map_or("n/a".to_string(), |d| d.to_string()),
            ),
        ]);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransferStatus {
    Confirmed,
    Denied(String),
    InFlight,
}

impl TransferStatus {
    pub fn label(&self) -> String {
        match self {
            TransferStatus::Confirmed => "confirmed".into(),
            TransferStatus::Denied(reason) => format!("denied:{reason}"),
            TransferStatus::InFlight => "in_flight".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VaspSummary {
    pub vasp: String,
    pub matched: usize,
    pub orphans: Vec<Hash32>,
    pub unconfirmed: Vec<TransferId>,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Report {
    pub seed: u64,
    pub digest: Hash32,
    pub empty: bool,
    pub metrics: Metrics,
    pub transfers: Vec<(TransferId, TransferStatus)>,
    pub vasps: Vec<VaspSummary>,
    pub breaches: Vec<String>,
}

/// Transfer outcomes in request order.
pub fn transfer_outcomes(world: &World) -> Vec<(TransferId, TransferStatus)> {
    let mut order = Vec::new();
    let mut status: BTreeMap<TransferId, TransferStatus> = BTreeMap::new();
    for e in world.log().entries() {
        match &e.event {
            Event::TransferRequested { transfer_id, .. } => {
                order.push(*transfer_id);
                status.insert(*transfer_id, TransferStatus::InFlight);
            }
            Event::TransferDenied { transfer_id, reason } => {
                status.insert(*transfer_id, TransferStatus::Denied(reason.to_string()));
            }
            Event::TransferConfirmed { transfer_id } => {
                status.insert(*transfer_id, TransferStatus::Confirmed);
            }
            _ => {}
        }
    }
    order.into_iter().map(|id| (id, status[&id].clone())).collect()
}

pub fn collect_metrics(world: &World, vasps: &[VaspSummary], transfers: &[(TransferId, TransferStatus)]) -> Metrics {
    let mut m = Metrics {
        ticks: world.now(),
        events: world.log().len() as u64,
        messages_sent: world.messages_sent(),
        max_convergence_delay: world.max_convergence_delay(),
        ..Metrics::default()
    };
    for (_, s) in transfers {
        m.transfers_attempted += 1;
        match s {
            TransferStatus::Confirmed => m.transfers_confirmed += 1,
            TransferStatus::Denied(reason) => {
                m.transfers_denied += 1;
                *m.denied_by_reason.entry(reason.clone()).or_default() += 1;
            }
            TransferStatus::InFlight => m.transfers_in_flight += 1,
        }
    }
    for e in world.log().entries() {
        match &e.event {
            Event::BeneficiaryResolved { source, path, .. } => {
                m.resolutions_ok += 1;
                m.resolution_hops += path.len().saturating_sub(1) as u64;
                *m.resolved_by_source.entry(source.clone()).or_default() += 1;
            }
            Event::ResolutionFailed { .. } => m.resolutions_failed += 1,
            Event::P2pSubmitted { .. } => m.p2p_txs += 1,
            Event::MessageDropped { .. } => m.messages_dropped += 1,
            _ => {}
        }
    }
    for v in vasps {
        m.audit_violations += v.violations.len() as u64;
        m.orphan_chain_txs += v.orphans.len() as u64;
        m.unconfirmed_records += v.unconfirmed.len() as u64;
        m.matched_records += v.matched as u64;
    }
    m.blocks = world.ledger().blocks().len() as u64;
    m.chain_txs = world.ledger().transactions().count() as u64;
    m
}

pub fn vasp_summaries(world: &World) -> Vec<VaspSummary> {
    world
        .nodes()
        .values()
        .map(|node| {
            let rec = node.reconcile(world.ledger());
            let audit = node.audit_travel_rule();
            VaspSummary {
                vasp: node.id().to_string(),
                matched: rec.matched,
                orphans: rec.orphan_chain_txs,
                unconfirmed: rec.unconfirmed_records,
                violations: audit.violations,
            }
        })
        .collect()
}

/// Every broadcast by a VASP followed an accepted ack binding that exact
/// transaction.
pub fn blind_broadcasts(world: &World) -> Vec<String> {
    let mut accepted: BTreeSet<(String, TransferId, Hash32)> = BTreeSet::new();
    let mut out = Vec::new();
    for e in world.log().entries() {
        match &e.event {
            Event::AckAccepted { transfer_id, binding } => {
                accepted.insert((e.actor.clone(), *transfer_id, *binding));
            }
            Event::ChainSubmitted { transfer_id, tx_id, .. }
                if !accepted.contains(&(e.actor.clone(), *transfer_id, *tx_id)) => {
                    out.push(format!("{} broadcast {} without an accepted ack", e.actor, tx_id.prefix(8)));
                }
            _ => {}
        }
    }
    let submitted: BTreeSet<Hash32> = world
        .log()
        .entries()
        .iter()
        .filter_map(|e| match &e.event {
            Event::ChainSubmitted { tx_id, .. } | Event::P2pSubmitted { tx_id } => Some(*tx_id),
            _ => None,
        })
        .collect();
    for (_, tx) in world.ledger().transactions() {
        if !submitted.contains(&tx.tx_id()) {
            out.push(format!("ledger holds {} with no recorded submission", tx.tx_id().prefix(8)));
        }
    }
    out
}

/// Checks that should hold in every run regardless of faults.
pub fn invariant_breaches(world: &World, vasps: &[VaspSummary]) -> Vec<String> {
    let mut out = Vec::new();
    if !world.ledger().verify_chain() {
        out.push("ledger hash chain does not verify".to_string());
    }
    out.extend(blind_broadcasts(world));
    for node in world.nodes().values() {
        for r in node.records() {
            if r.role != Role::OriginatorSide || r.status != RecordStatus::Confirmed {
                continue;
            }
            match r.chain_tx_id.and_then(|id| world.ledger().find(&id)) {
                Some((_, tx)) if tx.amount() == r.notice.amount && r.notice.sum_holds() => {}
                _ => out.push(format!("{} record {} amount does not match the chain", node.id(), hex::encode(r.record_id))),
            }
            let mirrored = world
                .node(&r.notice.beneficiary_vasp_id)
                .and_then(|b| b.record(Role::BeneficiarySide, &r.notice.notice_id))
                .is_some_and(|b| b.status == RecordStatus::Confirmed);
            if !mirrored {
                out.push(format!("{} record {} has no confirmed counterpart", node.id(), hex::encode(r.record_id)));
            }
        }
        for network in node.networks() {
            if let Some(replica) = node.replica(network) {
                for (publisher, entry) in replica.live_entries() {
                    if node.revocations().is_revoked(&entry.issuer_ca_id, &entry.certificate_serial).is_some() {
                        out.push(format!("{} still lists revoked {} from {publisher}", node.id(), entry.certificate_serial.to_hex()));
                    }
                }
            }
        }
    }
    for v in vasps {
        for violation in &v.violations {
            out.push(format!("{} audit: {} missing {}", v.vasp, violation.subject, violation.field));
        }
        for orphan in &v.orphans {
            out.push(format!("{} orphan chain tx {}", v.vasp, orphan.prefix(8)));
        }
    }
    if !world.routes_loop_free() {
        out.push("a route table holds a looping path".to_string());
    }
    out
}

impl Report {
    pub fn build(world: &World) -> Self {
        let vasps = vasp_summaries(world);
        let transfers = transfer_outcomes(world);
        let metrics = collect_metrics(world, &vasps, &transfers);
        let breaches = invariant_breaches(world, &vasps);
        Self {
            seed: world.scenario().seed,
            digest: world.log().digest(),
            empty: world.log().is_empty(),
            metrics,
            transfers,
            vasps,
            breaches,
        }
    }

    pub fn has_breach(&self) -> bool {
        !self.breaches.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\nseed {}\ndigest {}\n", self.seed, self.digest.to_hex());
        if self.empty {
            return out;
        }
        out.push_str("[metrics]\n");
        for (name, value) in self.metrics.lines() {
            out.push_str(&format!("{name} {value}\n"));
        }
        out.push_str("[denials]\n");
        for (reason, n) in &self.metrics.denied_by_reason {
            out.push_str(&format!("{reason} {n}\n"));
        }
        out.push_str("[transfers]\n");
        for (id, status) in &self.transfers {
            out.push_str(&format!("{} {}\n", hex::encode(id), status.label()));
        }
        out.push_str("[reconciliation]\n");
        for v in &self.vasps {
            out.push_str(&format!(
                "{} matched={} orphans={} unconfirmed={}\n",
                v.vasp,
                v.matched,
                v.orphans.len(),
                v.unconfirmed.len()
            ));
        }
        out.push_str("[audit]\n");
        for v in &self.vasps {
            for violation in &v.violations {
                out.push_str(&format!("{} {} {}\n", v.vasp, violation.subject, violation.field));
            }
        }
        out.push_str("[invariants]\n");
        if self.breaches.is_empty() {
            out.push_str("ok\n");
        }
        for b in &self.breaches {
            out.push_str(&format!("breach {b}\n"));
        }
        out
    }

    /// Byte-stable encoding of everything in the text report.
    pub fn to_canonical(&self) -> Vec<u8> {
        let metrics = TlvWriter::new()
            .list(1, self.metrics.lines().into_iter().map(|(k, v)| TlvWriter::new().str(1, &k).str(2, &v).finish()))
            .list(
                2,
                self.metrics
                    .denied_by_reason
                    .iter()
                    .map(|(k, n)| TlvWriter::new().str(1, k).u64(2, *n).finish()),
            )
            .finish();
        let transfers = self
            .transfers
            .iter()
            .map(|(id, s)| TlvWriter::new().bytes(1, id).str(2, &s.label()).finish());
        let vasps = self.vasps.iter().map(|v| {
            TlvWriter::new()
                .str(1, &v.vasp)
                .u64(2, v.matched as u64)
                .list(3, v.orphans.iter().map(|h| h.0))
                .list(4, v.unconfirmed.iter().copied())
                .list(
                    5,
                    v.violations.iter().map(|x| TlvWriter::new().str(1, &x.subject).str(2, &x.field).finish()),
                )
                .finish()
        });
        TlvWriter::new()
            .str(1, REPORT_HEADER)
            .u64(2, self.seed)
            .bytes(3, &self.digest.0)
            .u8(4, u8::from(self.empty))
            .bytes(5, &metrics)
            .list(6, transfers)
            .list(7, vasps)
            .list(8, self.breaches.iter().map(|b| b.as_bytes()))
            .finish()
    }
}
