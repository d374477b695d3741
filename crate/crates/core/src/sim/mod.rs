//! Deterministic discrete-event simulation of VASPs, their networks and a
//! shared ledger, driven by a scenario file.

mod log;
pub mod reference;
mod report;
mod scenario;
mod world;

pub use log::{replay, EventLog, LogEntry, ReplayError, ReplaySummary, LOG_HEADER};
pub use report::{
    blind_broadcasts, collect_metrics, invariant_breaches, transfer_outcomes, vasp_summaries, Metrics, Report,
    TransferStatus, VaspSummary, REPORT_HEADER,
};
pub use scenario::{
    load_scenario, Action, BatchLeg, CaSpec, CustomerSetup, CustomerSpec, NetworkSpec, PeeringSpec, RulesOverride,
    Scenario, SchemaError, ScriptEntry, TargetKind, VaspSpec,
};
pub use world::{sub_seed, SimError, World, QUIESCENCE_LIMIT, VALIDITY_END};

/// Builds and runs `scenario` to quiescence.
pub fn run_scenario(scenario: Scenario) -> Result<(World, Report), SimError> {
    let mut world = World::new(scenario)?;
    let quiet = world.run()?;
    let mut report = Report::build(&world);
    if !quiet {
        report.breaches.push("run did not quiesce".to_string());
    }
    Ok((world, report))
}
