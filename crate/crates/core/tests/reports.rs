use std::path::{Path, PathBuf};

use celeris_sim::experiment::{simulate, sweep, ScenarioConfig, SeedPolicy};
use celeris_sim::fabric::BurstSize;
use celeris_sim::transport::TransportKind;
use serde_json::{json, Value};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Nearest rank, written out independently of the library.
fn nearest_rank(sorted: &[u64], p: f64) -> u64 {
    let rank = (p / 100.0 * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[test]
fn summary_matches_a_recomputation_from_steps_csv() {
    let mut cfg = ScenarioConfig::load(&configs().join("incast_celeris.json")).unwrap();
    cfg.collective.rounds = 10;
    cfg.timeout.static_source = Some(celeris_sim::experiment::StaticSource::TimeoutNs(25_000));
    let dir = tempfile::tempdir().unwrap();
    simulate(&cfg).unwrap().write(dir.path()).unwrap();

    let mut reader = csv::Reader::from_path(dir.path().join("steps.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (d, e, r, f) = (col("duration_ns"), col("bytes_expected"), col("bytes_received"), col("finalized_by"));
    let mut durations = Vec::new();
    let mut loss_sum = 0.0;
    let mut deadline = 0;
    for rec in reader.records() {
        let rec = rec.unwrap();
        durations.push(rec[d].parse::<u64>().unwrap());
        let (exp, got): (f64, f64) = (rec[e].parse().unwrap(), rec[r].parse().unwrap());
        loss_sum += if exp == 0.0 { 0.0 } else { 1.0 - got / exp };
        deadline += usize::from(&rec[f] == "DEADLINE");
    }
    let n = durations.len();
    durations.sort_unstable();
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], n);
    assert_eq!(summary["median_ns"], nearest_rank(&durations, 50.0));
    assert_eq!(summary["p95_ns"], nearest_rank(&durations, 95.0));
    assert_eq!(summary["p99_ns"], nearest_rank(&durations, 99.0));
    assert_eq!(summary["mean_loss_fraction"].as_f64().unwrap(), loss_sum / n as f64);
    assert_eq!(summary["deadline_steps"], deadline);
    let (p99, med) = (nearest_rank(&durations, 99.0), nearest_rank(&durations, 50.0));
    assert_eq!(summary["p99_over_median"].as_f64().unwrap(), p99 as f64 / med as f64);
    assert!(deadline > 0, "the tight deadline should cut some steps");
}

#[test]
fn shipped_configs_round_trip() {
    for name in ["incast_roce.json", "incast_celeris.json", "uncontended.json", "adaptive.json"] {
        let cfg = ScenarioConfig::load(&configs().join(name)).unwrap();
        let text = cfg.to_json();
        let again = ScenarioConfig::from_json(&text).unwrap();
        assert_eq!(cfg, again, "{name}");
        assert_eq!(again.to_json(), text, "{name}");
    }
}

#[test]
fn uncontended_fabric_has_flat_step_times() {
    let base = ScenarioConfig::load(&configs().join("uncontended.json")).unwrap();
    for kind in TransportKind::ALL {
        let mut cfg = base.clone();
        cfg.transport = kind;
        let s = simulate(&cfg).unwrap().summary;
        assert!(s.completed, "{kind}");
        assert_eq!(s.mean_loss_fraction, 0.0, "{kind}");
        assert_eq!(s.data_drops, 0, "{kind}");
        assert!(s.p99_over_median < 1.1, "{kind}: {}", s.p99_over_median);
    }
}

#[test]
fn more_background_traffic_never_shortens_the_tail() {
    let mut base = ScenarioConfig::new("background", TransportKind::RoceGbn);
    base.topology.pfc_enabled = true;
    base.collective.rounds = 20;
    base.background.burst = BurstSize::Fixed { bytes: 500_000 };
    base.background.fan_in = 8;
    let values = [json!(0.0), json!(300.0), json!(3000.0)];
    let points = sweep(&base, "background.flow_arrival_rate", &values, SeedPolicy::Same).unwrap();
    let p99: Vec<u64> = points.iter().map(|p| p.report.summary.p99_ns).collect();
    assert!(p99.windows(2).all(|w| w[0] <= w[1]), "{p99:?}");
    assert!(p99[2] > p99[0]);
}

#[test]
fn adaptive_config_converges_and_records_a_trace() {
    let mut cfg = ScenarioConfig::load(&configs().join("adaptive.json")).unwrap();
    cfg.collective.rounds = 5;
    let r = simulate(&cfg).unwrap();
    assert!(r.summary.completed);
    assert!(!r.timeout_trace.is_empty());
    assert!(r.summary.mean_loss_fraction < 0.05, "{}", r.summary.mean_loss_fraction);
}
