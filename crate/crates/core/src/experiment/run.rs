use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ScenarioConfig, StaticSource};
use super::stats::{percentile, read_durations};
use super::ExperimentError;
use crate::collective::FinalizedBy;
use crate::fabric::inject_background;
use crate::sim::{FlowSpec, PortStats, RingSpec, World};
use crate::simkernel::{RngStream, SimTime};
use crate::timeoutctl::{
    static_timeout_from_baseline, DeadlineController, TimeoutPolicy, TimeoutTraceRow,
};
use crate::transport::TransportKind;

/// Baseline scenarios may themselves use a baseline, but not endlessly.
const MAX_BASELINE_DEPTH: usize = 4;

/// One row of `steps.csv`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRow {
    pub run_id: String,
    pub group_id: u32,
    pub step_id: u64,
    pub node: usize,
    pub start_ns: u64,
    pub duration_ns: u64,
    pub bytes_expected: u64,
    pub bytes_received: u64,
    pub finalized_by: FinalizedBy,
}

impl StepRow {
    pub fn loss_fraction(&self) -> f64 {
        if self.bytes_expected == 0 {
            0.0
        } else {
            1.0 - self.bytes_received as f64 / self.bytes_expected as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub run_id: String,
    pub transport: TransportKind,
    pub seed: u64,
    /// Every step of every round finished before the duration cap.
    pub completed: bool,
    pub steps: usize,
    pub median_ns: u64,
    pub p95_ns: u64,
    pub p99_ns: u64,
    pub p99_over_median: f64,
    pub mean_loss_fraction: f64,
    pub deadline_steps: usize,
    pub late_packets: u64,
    pub static_timeout_ns: Option<u64>,
    pub drops: u64,
    pub data_drops: u64,
    pub ecn_marks: u64,
    pub pause_ns: u64,
    pub sim_end_ns: u64,
    pub events: u64,
}

/// Provenance sidecar written next to the CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub config: ScenarioConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub config: ScenarioConfig,
    pub summary: Summary,
    pub steps: Vec<StepRow>,
    pub ports: Vec<PortStats>,
    pub timeout_trace: Vec<TimeoutTraceRow>,
}

/// Summary statistics that depend only on the step rows.
pub fn summarize(steps: &[StepRow]) -> (u64, u64, u64, f64) {
    let mut d: Vec<u64> = steps.iter().map(|s| s.duration_ns).collect();
    d.sort_unstable();
    let median = percentile(&d, 50.0).unwrap_or(0);
    let p95 = percentile(&d, 95.0).unwrap_or(0);
    let p99 = percentile(&d, 99.0).unwrap_or(0);
    let loss = if steps.is_empty() {
        0.0
    } else {
        steps.iter().map(StepRow::loss_fraction).sum::<f64>() / steps.len() as f64
    };
    (median, p95, p99, loss)
}

/// Runs one scenario to completion or to its duration cap.
pub fn simulate(config: &ScenarioConfig) -> Result<RunReport, ExperimentError> {
    simulate_at_depth(config, 0)
}

fn simulate_at_depth(config: &ScenarioConfig, depth: usize) -> Result<RunReport, ExperimentError> {
    config.validate()?;
    let static_timeout = match (&config.timeout.policy, &config.timeout.static_source) {
        (TimeoutPolicy::Static, Some(src)) => Some(resolve_static(src, config.seed, depth)?),
        _ => None,
    };
    let cap = SimTime(config.duration_cap_ns);
    let mut world = World::new(&config.topology, &config.transport_config, config.seed)?;
    world.set_flow_congestion_control(config.background.congestion_controlled);
    let mut rng = RngStream::new(config.seed, "background-traffic");
    for f in inject_background(&config.background, config.topology.hosts, cap, &mut rng) {
        world.add_flow(FlowSpec {
            start: f.start,
            src: f.src,
            dst: f.dst,
            bytes: f.bytes,
        });
    }
    let group = config.group();
    let members = group.members.clone();
    let latency = SimTime(config.timeout.coordination_latency_ns);
    let deadlines = match config.timeout.policy {
        TimeoutPolicy::None => DeadlineController::none(members),
        TimeoutPolicy::Static => {
            DeadlineController::fixed(members, static_timeout.expect("resolved above"))
        }
        TimeoutPolicy::Adaptive => {
            DeadlineController::adaptive(group.group_id, members, &config.timeout.adaptive)
        }
    }
    .with_coordination_latency(latency);
    let ring = world.add_ring(RingSpec {
        group,
        kind: config.transport,
        rounds: config.collective.rounds,
        deadlines,
        deadlines_for_reliable: config.timeout.apply_to_reliable,
    })?;
    let outcome = world.run(cap);

    let mut steps: Vec<StepRow> = world
        .step_results(ring)
        .iter()
        .map(|s| StepRow {
            run_id: config.name.clone(),
            group_id: config.collective.group_id,
            step_id: s.step_id,
            node: s.node,
            start_ns: s.start.0,
            duration_ns: s.duration.0,
            bytes_expected: s.bytes_expected,
            bytes_received: s.bytes_received,
            finalized_by: s.finalized_by,
        })
        .collect();
    steps.sort_by_key(|s| (s.step_id, s.node));
    let ports = world.port_stats();
    let (median, p95, p99, loss) = summarize(&steps);
    let summary = Summary {
        run_id: config.name.clone(),
        transport: config.transport,
        seed: config.seed,
        completed: outcome.rings_done,
        steps: steps.len(),
        median_ns: median,
        p95_ns: p95,
        p99_ns: p99,
        p99_over_median: if median == 0 {
            0.0
        } else {
            p99 as f64 / median as f64
        },
        mean_loss_fraction: loss,
        deadline_steps: steps
            .iter()
            .filter(|s| s.finalized_by == FinalizedBy::Deadline)
            .count(),
        late_packets: world.late_packets(ring),
        static_timeout_ns: static_timeout.map(|t| t.0),
        drops: ports.iter().map(|p| p.drops).sum(),
        data_drops: ports.iter().map(|p| p.data_drops).sum(),
        ecn_marks: ports.iter().map(|p| p.ecn_marks).sum(),
        pause_ns: ports.iter().map(|p| p.pause_ns).sum(),
        sim_end_ns: outcome.clock.0,
        events: outcome.events,
    };
    Ok(RunReport {
        config: config.clone(),
        summary,
        steps,
        ports,
        timeout_trace: world.timeout_trace(ring).to_vec(),
    })
}

fn resolve_static(src: &StaticSource, seed: u64, depth: usize) -> Result<SimTime, ExperimentError> {
    let durations: Vec<SimTime> = match src {
        StaticSource::TimeoutNs(t) => return Ok(SimTime(*t)),
        StaticSource::BaselineStepsCsv(p) => read_durations(p)?.into_iter().map(SimTime).collect(),
        StaticSource::BaselineConfig(p) => {
            if depth >= MAX_BASELINE_DEPTH {
                return Err(ExperimentError::invalid(
                    "timeout.static_source.baseline_config",
                    "baseline scenarios are nested too deeply",
                ));
            }
            let mut base = ScenarioConfig::load(p)?;
            base.seed = seed;
            simulate_at_depth(&base, depth + 1)?
                .steps
                .iter()
                .map(|s| SimTime(s.duration_ns))
                .collect()
        }
    };
    Ok(static_timeout_from_baseline(&durations)?)
}

impl RunReport {
    pub fn meta(&self) -> Meta {
        let canonical = serde_json::to_vec(&self.config).expect("configs serialize");
        let hash = Sha256::digest(&canonical);
        Meta {
            config_sha256: hash.iter().map(|b| format!("{b:02x}")).collect(),
            seed: self.config.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config.clone(),
        }
    }

    /// Writes `steps.csv`, `ports.csv`, `timeout_trace.csv`, `summary.json`
    /// and `meta.json` into `dir`. Returns the steps CSV path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, ExperimentError> {
        super::create_dir(dir)?;
        let steps = dir.join("steps.csv");
        super::write_csv(&steps, &self.steps)?;
        super::write_csv(&dir.join("ports.csv"), &self.ports)?;
        super::write_csv(&dir.join("timeout_trace.csv"), &self.timeout_trace)?;
        super::write_json(&dir.join("summary.json"), &self.summary)?;
        super::write_json(&dir.join("meta.json"), &self.meta())?;
        Ok(steps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::ClosConfig;

    fn small(kind: TransportKind) -> ScenarioConfig {
        let mut c = ScenarioConfig::new("small", kind);
        c.topology = ClosConfig::with_shape(2, 2, 2);
        c.collective.payload_bytes = 4_000_000;
        c.collective.rounds = 2;
        c
    }

    #[test]
    fn uncontended_runs_lose_nothing() {
        for kind in TransportKind::ALL {
            let r = simulate(&small(kind)).unwrap();
            assert!(r.summary.completed, "{kind}");
            assert_eq!(r.summary.steps, 4 * 6 * 2);
            assert_eq!(r.summary.mean_loss_fraction, 0.0);
            assert!(r.summary.p99_over_median < 1.1, "{kind}: {}", r.summary.p99_over_median);
        }
    }

    #[test]
    fn summary_is_ordered() {
        let r = simulate(&small(TransportKind::Irn)).unwrap();
        let s = &r.summary;
        assert!(s.median_ns <= s.p95_ns && s.p95_ns <= s.p99_ns);
    }

    #[test]
    fn fixed_static_timeout_is_reported() {
        let mut c = small(TransportKind::Celeris);
        c.timeout.policy = TimeoutPolicy::Static;
        c.timeout.static_source = Some(StaticSource::TimeoutNs(1_000_000));
        let r = simulate(&c).unwrap();
        assert_eq!(r.summary.static_timeout_ns, Some(1_000_000));
        assert_eq!(r.summary.deadline_steps, 0);
    }

    #[test]
    fn duration_cap_stops_early() {
        let mut c = small(TransportKind::RoceGbn);
        c.duration_cap_ns = 20_000;
        let r = simulate(&c).unwrap();
        assert!(!r.summary.completed);
        assert!(r.summary.sim_end_ns <= 20_000);
    }

    #[test]
    fn meta_hash_tracks_config() {
        let a = simulate(&small(TransportKind::Celeris)).unwrap();
        let mut c = small(TransportKind::Celeris);
        c.seed = 9;
        let b = simulate(&c).unwrap();
        assert_ne!(a.meta().config_sha256, b.meta().config_sha256);
        assert_eq!(a.meta().config_sha256.len(), 64);
    }
}
