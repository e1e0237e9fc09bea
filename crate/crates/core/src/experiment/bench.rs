use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::losstolerance::{
    decode, encode, fwht, train_with_drops, xor_decode, xor_encode, DropMask, ModelKind,
    RecoveryMode, TrainConfig,
};
use crate::resmodel::{capacity_table, mtbf_table, reference_calibration, REFERENCE_QP_COUNT};
use crate::simkernel::RngStream;
use crate::transport::TransportKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TablesConfig {
    /// On-chip budget shared by every design for the capacity column.
    pub sram_budget_bytes: u64,
    pub srnic_context_bytes: u64,
    /// QP count at which MTBF is evaluated.
    pub qp_count: u64,
}

impl Default for TablesConfig {
    fn default() -> Self {
        Self {
            sram_budget_bytes: 4_160_000,
            srnic_context_bytes: 210,
            qp_count: REFERENCE_QP_COUNT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub transport: TransportKind,
    pub context_bytes: u64,
    pub sram_budget_bytes: u64,
    pub qp_capacity: u64,
    pub qp_count: u64,
    pub mtbf_hours: f64,
}

/// Context size, QP capacity and modeled MTBF for every design.
pub fn tables(cfg: &TablesConfig) -> Result<Vec<TableRow>, ExperimentError> {
    if cfg.srnic_context_bytes == 0 {
        return Err(ExperimentError::invalid("srnic_context_bytes", "must be positive"));
    }
    if cfg.qp_count == 0 {
        return Err(ExperimentError::invalid("qp_count", "must be positive"));
    }
    let cal = reference_calibration();
    let cap = capacity_table(cfg.sram_budget_bytes, cfg.srnic_context_bytes);
    let mtbf = mtbf_table(&cal, cfg.qp_count, cfg.srnic_context_bytes);
    Ok(cap
        .into_iter()
        .zip(mtbf)
        .map(|(c, m)| TableRow {
            transport: c.transport,
            context_bytes: c.context_bytes,
            sram_budget_bytes: c.sram_budget_bytes,
            qp_capacity: c.qp_capacity,
            qp_count: m.qp_count,
            mtbf_hours: m.mtbf_hours,
        })
        .collect())
}

pub fn write_tables(rows: &[TableRow], dir: &Path) -> Result<(), ExperimentError> {
    super::create_dir(dir)?;
    super::write_csv(&dir.join("tables.csv"), rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodingBenchConfig {
    /// Gradient lengths to time.
    pub sizes: Vec<usize>,
    pub fragment_size: usize,
    pub drop_fraction: f64,
    pub xor_group: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for CodingBenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![1 << 10, 1 << 14, 1 << 16],
            fragment_size: 64,
            drop_fraction: 0.05,
            xor_group: 4,
            iterations: 20,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodingBenchRow {
    pub op: &'static str,
    pub elements: usize,
    pub iterations: usize,
    pub elements_per_sec: f64,
    /// Largest reconstruction error seen with nothing dropped.
    pub max_abs_error: f64,
}

fn time_it(iterations: usize, mut f: impl FnMut()) -> f64 {
    let t = Instant::now();
    for _ in 0..iterations {
        f();
    }
    t.elapsed().as_secs_f64().max(1e-12)
}

/// Throughput of the transform, the codecs and XOR parity. Wall-clock
/// timings vary between runs; the error columns do not.
pub fn coding_bench(cfg: &CodingBenchConfig) -> Result<Vec<CodingBenchRow>, ExperimentError> {
    if cfg.sizes.is_empty() {
        return Err(ExperimentError::EmptyInput("coding bench needs at least one size"));
    }
    if cfg.iterations == 0 {
        return Err(ExperimentError::invalid("iterations", "must be positive"));
    }
    let mut rows = Vec::new();
    let mut rng = RngStream::new(cfg.seed, "coding-bench");
    for &n in &cfg.sizes {
        if n == 0 || !n.is_power_of_two() {
            return Err(ExperimentError::invalid("sizes", format!("{n} is not a power of two")));
        }
        let g: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0).expect("valid range")).collect();
        let row = |op, secs: f64, err| CodingBenchRow {
            op,
            elements: n,
            iterations: cfg.iterations,
            elements_per_sec: (n * cfg.iterations) as f64 / secs,
            max_abs_error: err,
        };

        let mut v = g.clone();
        let secs = time_it(cfg.iterations, || fwht(black_box(&mut v)).expect("power of two"));
        let mut twice = g.clone();
        fwht(&mut twice)?;
        fwht(&mut twice)?;
        rows.push(row("fwht", secs, max_err(&g, &twice)));

        let secs = time_it(cfg.iterations, || {
            black_box(encode(black_box(&g), cfg.seed, cfg.fragment_size).expect("valid input"));
        });
        let payload = encode(&g, cfg.seed, cfg.fragment_size)?;
        let full = decode(&payload, &DropMask::full(payload.fragment_count()))?;
        rows.push(row("hadamard_encode", secs, max_err(&g, &full.values)));

        let mask = DropMask::random(payload.fragment_count(), cfg.drop_fraction, &mut rng);
        let secs = time_it(cfg.iterations, || {
            black_box(decode(black_box(&payload), &mask).expect("matching mask"));
        });
        rows.push(row("hadamard_decode", secs, max_err(&g, &full.values)));

        let bytes: Vec<u8> = g.iter().flat_map(|x| x.to_le_bytes()).collect();
        let frags: Vec<Vec<u8>> = bytes.chunks(cfg.fragment_size * 8).map(<[u8]>::to_vec).collect();
        let secs = time_it(cfg.iterations, || {
            black_box(xor_encode(black_box(&frags), cfg.xor_group).expect("positive group"));
        });
        let coded = xor_encode(&frags, cfg.xor_group)?;
        // One erasure per group, always recoverable.
        let data_ok: Vec<bool> = (0..frags.len()).map(|i| i % cfg.xor_group != 0).collect();
        let parity_ok = vec![true; coded.parity.len()];
        let rec = xor_decode(&coded, &data_ok, &parity_ok)?;
        let exact = rec
            .fragments
            .iter()
            .zip(&frags)
            .all(|(r, f)| r.as_ref() == Some(f));
        rows.push(row("xor_encode", secs, if exact { 0.0 } else { f64::INFINITY }));
        let secs = time_it(cfg.iterations, || {
            black_box(xor_decode(black_box(&coded), &data_ok, &parity_ok).expect("matching masks"));
        });
        rows.push(row("xor_decode", secs, if exact { 0.0 } else { f64::INFINITY }));
    }
    Ok(rows)
}

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn write_coding_bench(rows: &[CodingBenchRow], dir: &Path) -> Result<(), ExperimentError> {
    super::create_dir(dir)?;
    super::write_csv(&dir.join("coding_bench.csv"), rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlDropConfig {
    pub models: Vec<ModelKind>,
    pub modes: Vec<RecoveryMode>,
    pub drop_fractions: Vec<f64>,
    /// Settings shared by every run; model, mode and drop fraction are
    /// overridden per run.
    pub train: TrainConfig,
}

impl Default for MlDropConfig {
    fn default() -> Self {
        Self {
            models: vec![ModelKind::Logistic, ModelKind::Mlp],
            modes: vec![RecoveryMode::ZeroFill, RecoveryMode::Hadamard],
            drop_fractions: vec![0.0, 0.01, 0.05],
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlAccuracyRow {
    pub model: ModelKind,
    pub mode: RecoveryMode,
    pub drop_fraction: f64,
    pub epoch: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MlSummaryRow {
    pub model: ModelKind,
    pub mode: RecoveryMode,
    pub drop_fraction: f64,
    pub final_accuracy: f64,
    /// Final accuracy minus that of the same model and mode without drops.
    pub accuracy_delta: f64,
    pub steps: usize,
    pub mse_zero_fill: f64,
    pub mse_hadamard: f64,
    pub mse_xor: f64,
    pub fragments_sent: u64,
    pub fragments_lost: u64,
    pub residual_lost: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlDropReport {
    pub accuracy: Vec<MlAccuracyRow>,
    pub summary: Vec<MlSummaryRow>,
}

/// Trains every (model, mode, drop fraction) combination. A drop-free run of
/// each model and mode is added when missing so deltas have a reference.
pub fn ml_drop(cfg: &MlDropConfig) -> Result<MlDropReport, ExperimentError> {
    if cfg.models.is_empty() || cfg.modes.is_empty() || cfg.drop_fractions.is_empty() {
        return Err(ExperimentError::EmptyInput(
            "ml-drop needs at least one model, mode and drop fraction",
        ));
    }
    let mut fractions = cfg.drop_fractions.clone();
    if !fractions.contains(&0.0) {
        fractions.insert(0, 0.0);
    }
    let mut jobs = Vec::new();
    for &model in &cfg.models {
        for &mode in &cfg.modes {
            for &p in &fractions {
                let t = TrainConfig {
                    model,
                    mode,
                    drop_fraction: p,
                    ..cfg.train.clone()
                };
                t.validate()?;
                jobs.push(t);
            }
        }
    }
    let reports = jobs
        .par_iter()
        .map(train_with_drops)
        .collect::<Result<Vec<_>, _>>()?;
    let baseline = |model, mode| {
        jobs.iter()
            .zip(&reports)
            .find(|(j, _)| j.model == model && j.mode == mode && j.drop_fraction == 0.0)
            .map(|(_, r)| r.final_accuracy())
            .expect("drop-free run is always scheduled")
    };
    let mut out = MlDropReport {
        accuracy: Vec::new(),
        summary: Vec::new(),
    };
    for (j, r) in jobs.iter().zip(&reports) {
        for (e, &a) in r.epoch_accuracy.iter().enumerate() {
            out.accuracy.push(MlAccuracyRow {
                model: j.model,
                mode: j.mode,
                drop_fraction: j.drop_fraction,
                epoch: e + 1,
                accuracy: a,
            });
        }
        let mse = r.mean_paired_mse();
        out.summary.push(MlSummaryRow {
            model: j.model,
            mode: j.mode,
            drop_fraction: j.drop_fraction,
            final_accuracy: r.final_accuracy(),
            accuracy_delta: r.final_accuracy() - baseline(j.model, j.mode),
            steps: r.paired_mse.len(),
            mse_zero_fill: mse.zero_fill,
            mse_hadamard: mse.hadamard,
            mse_xor: mse.xor,
            fragments_sent: r.fragments_sent,
            fragments_lost: r.fragments_lost,
            residual_lost: r.residual_lost,
        });
    }
    Ok(out)
}

pub fn write_ml_drop(report: &MlDropReport, dir: &Path) -> Result<(), ExperimentError> {
    super::create_dir(dir)?;
    super::write_csv(&dir.join("ml_accuracy.csv"), &report.accuracy)?;
    super::write_csv(&dir.join("ml_summary.csv"), &report.summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_match_the_reference_rows() {
        let rows = tables(&TablesConfig::default()).unwrap();
        let get = |k| rows.iter().find(|r| r.transport == k).unwrap();
        let c = get(TransportKind::Celeris);
        assert_eq!((c.context_bytes, c.qp_capacity), (52, 80_000));
        assert!((c.mtbf_hours - 80.5).abs() / 80.5 < 0.01);
        let r = get(TransportKind::RoceGbn);
        assert_eq!((r.context_bytes, r.qp_capacity), (407, 10_221));
        assert!((r.mtbf_hours - 42.8).abs() / 42.8 < 0.01);
    }

    #[test]
    fn tables_are_deterministic() {
        let cfg = TablesConfig::default();
        assert_eq!(tables(&cfg).unwrap(), tables(&cfg).unwrap());
    }

    #[test]
    fn coding_bench_reports_exact_reconstruction() {
        let cfg = CodingBenchConfig {
            sizes: vec![256],
            iterations: 2,
            ..CodingBenchConfig::default()
        };
        let rows = coding_bench(&cfg).unwrap();
        assert_eq!(rows.len(), 5);
        for r in &rows {
            assert!(r.max_abs_error < 1e-9, "{}: {}", r.op, r.max_abs_error);
            assert!(r.elements_per_sec > 0.0);
        }
    }

    #[test]
    fn coding_bench_rejects_odd_sizes() {
        let cfg = CodingBenchConfig {
            sizes: vec![100],
            ..CodingBenchConfig::default()
        };
        assert_eq!(coding_bench(&cfg).unwrap_err().field(), Some("sizes"));
    }

    #[test]
    fn ml_drop_adds_a_reference_run() {
        let mut cfg = MlDropConfig {
            models: vec![ModelKind::Logistic],
            modes: vec![RecoveryMode::Hadamard],
            drop_fractions: vec![0.05],
            ..MlDropConfig::default()
        };
        cfg.train.epochs = 1;
        cfg.train.dataset.train_samples = 512;
        cfg.train.dataset.test_samples = 128;
        let r = ml_drop(&cfg).unwrap();
        assert_eq!(r.summary.len(), 2);
        assert_eq!(r.summary[0].drop_fraction, 0.0);
        assert_eq!(r.summary[0].accuracy_delta, 0.0);
        assert!(r.summary[1].fragments_lost > 0);
    }
}
