use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::config::ScenarioConfig;
use super::run::{simulate, RunReport, StepRow};
use super::ExperimentError;
use crate::transport::TransportKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Every point uses the base seed.
    Same,
    /// Point `i` uses base seed + `i`.
    Offset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: Value,
    pub report: RunReport,
}

/// One row of `sweep_summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub axis: String,
    pub value: String,
    pub run_id: String,
    pub transport: TransportKind,
    pub seed: u64,
    pub completed: bool,
    pub steps: usize,
    pub median_ns: u64,
    pub p95_ns: u64,
    pub p99_ns: u64,
    pub p99_over_median: f64,
    pub mean_loss_fraction: f64,
    pub deadline_steps: usize,
    pub late_packets: u64,
    pub data_drops: u64,
}

/// Sets the config field at a dotted `axis` path, e.g.
/// `background.flow_arrival_rate`.
fn with_axis(base: &Value, axis: &str, value: &Value) -> Result<Value, ExperimentError> {
    let mut root = base.clone();
    let mut node = &mut root;
    for part in axis.split('.') {
        node = node
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| ExperimentError::UnknownAxis(axis.to_string()))?;
    }
    *node = value.clone();
    Ok(root)
}

fn compact(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// One run per value of `axis`. Points may run in parallel; the result keeps
/// the order of `values`.
pub fn sweep(
    base: &ScenarioConfig,
    axis: &str,
    values: &[Value],
    seeds: SeedPolicy,
) -> Result<Vec<SweepPoint>, ExperimentError> {
    if values.is_empty() {
        return Err(ExperimentError::EmptyInput("a sweep needs at least one value"));
    }
    let base_json = serde_json::to_value(base).expect("configs serialize");
    let configs = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let json = with_axis(&base_json, axis, v)?;
            let mut cfg: ScenarioConfig = serde_json::from_value(json).map_err(|e| {
                ExperimentError::invalid(axis, format!("value {}: {e}", compact(v)))
            })?;
            cfg.name = format!("{}[{}={}]", base.name, axis, compact(v));
            if seeds == SeedPolicy::Offset {
                cfg.seed = base.seed.wrapping_add(i as u64);
            }
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    configs
        .par_iter()
        .zip(values.par_iter())
        .map(|(cfg, v)| {
            Ok(SweepPoint {
                value: v.clone(),
                report: simulate(cfg)?,
            })
        })
        .collect()
}

/// Writes each point under `point-NNN/` plus `sweep_summary.csv` and a merged
/// `sweep_steps.csv`.
pub fn write_sweep(points: &[SweepPoint], axis: &str, dir: &Path) -> Result<Vec<SweepRow>, ExperimentError> {
    super::create_dir(dir)?;
    let mut rows = Vec::with_capacity(points.len());
    let mut merged: Vec<StepRow> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        p.report.write(&dir.join(format!("point-{i:03}")))?;
        let s = &p.report.summary;
        rows.push(SweepRow {
            index: i,
            axis: axis.to_string(),
            value: compact(&p.value),
            run_id: s.run_id.clone(),
            transport: s.transport,
            seed: s.seed,
            completed: s.completed,
            steps: s.steps,
            median_ns: s.median_ns,
            p95_ns: s.p95_ns,
            p99_ns: s.p99_ns,
            p99_over_median: s.p99_over_median,
            mean_loss_fraction: s.mean_loss_fraction,
            deadline_steps: s.deadline_steps,
            late_packets: s.late_packets,
            data_drops: s.data_drops,
        });
        merged.extend(p.report.steps.iter().cloned());
    }
    super::write_csv(&dir.join("sweep_summary.csv"), &rows)?;
    super::write_csv(&dir.join("sweep_steps.csv"), &merged)?;
    Ok(rows)
}
