//! Data-parallel SGD on synthetic Gaussian blobs with per-fragment gradient
//! drops.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::hadamard::{decode, encode, zero_fill, DropMask};
use super::xor::{xor_decode, xor_encode};
use super::LossError;
use crate::simkernel::{splitmix64, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RecoveryMode {
    ZeroFill,
    Hadamard,
    Xor,
}

impl RecoveryMode {
    pub const ALL: [RecoveryMode; 3] = [RecoveryMode::ZeroFill, RecoveryMode::Hadamard, RecoveryMode::Xor];

    pub fn name(self) -> &'static str {
        match self {
            RecoveryMode::ZeroFill => "ZERO_FILL",
            RecoveryMode::Hadamard => "HADAMARD",
            RecoveryMode::Xor => "XOR",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlobsConfig {
    pub classes: usize,
    pub features: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Standard deviation of the class centres.
    pub center_scale: f64,
    /// Within-class standard deviation.
    pub spread: f64,
}

impl Default for BlobsConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            features: 32,
            train_samples: 4096,
            test_samples: 2048,
            center_scale: 0.45,
            spread: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub workers: usize,
    pub drop_fraction: f64,
    pub mode: RecoveryMode,
    pub epochs: usize,
    pub model: ModelKind,
    pub hidden: usize,
    pub batch_per_worker: usize,
    pub learning_rate: f64,
    /// Gradient elements per fragment (one fragment per packet).
    pub fragment_size: usize,
    /// Data fragments per XOR parity fragment.
    pub xor_group: usize,
    pub seed: u64,
    pub dataset: BlobsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            workers: 8,
            drop_fraction: 0.0,
            mode: RecoveryMode::ZeroFill,
            epochs: 10,
            model: ModelKind::Logistic,
            hidden: 64,
            batch_per_worker: 32,
            learning_rate: 0.1,
            fragment_size: 32,
            xor_group: 4,
            seed: 1,
            dataset: BlobsConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        let bad = |field: &'static str, reason: &str| {
            Err(LossError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if !(0.0..=0.5).contains(&self.drop_fraction) {
            return bad("drop_fraction", "must lie in [0, 0.5]");
        }
        if self.workers == 0 {
            return bad("workers", "must be positive");
        }
        if self.batch_per_worker == 0 {
            return bad("batch_per_worker", "must be positive");
        }
        if self.fragment_size == 0 || !self.fragment_size.is_power_of_two() {
            return bad("fragment_size", "must be a power of two");
        }
        if self.xor_group == 0 {
            return bad("xor_group", "must be positive");
        }
        let d = &self.dataset;
        if d.classes < 2 || d.features == 0 {
            return bad("dataset", "need at least two classes and one feature");
        }
        if d.train_samples < self.workers * self.batch_per_worker || d.test_samples == 0 {
            return bad("dataset.train_samples", "too small for one step");
        }
        Ok(())
    }
}

/// Mean squared error of the averaged gradient, per recovery mode, on the
/// same worker gradients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct PairedMse {
    pub zero_fill: f64,
    pub hadamard: f64,
    pub xor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Test accuracy after each epoch.
    pub epoch_accuracy: Vec<f64>,
    /// Per step, error of the applied averaged gradient.
    pub step_mse: Vec<f64>,
    /// Per step, errors all modes would have produced on the same gradients.
    pub paired_mse: Vec<PairedMse>,
    pub fragments_sent: u64,
    pub fragments_lost: u64,
    /// Fragments the chosen mode could not restore.
    pub residual_lost: u64,
}

impl TrainReport {
    pub fn final_accuracy(&self) -> f64 {
        self.epoch_accuracy.last().copied().unwrap_or(0.0)
    }

    pub fn mean_paired_mse(&self) -> PairedMse {
        let n = self.paired_mse.len().max(1) as f64;
        self.paired_mse.iter().fold(PairedMse::default(), |a, m| PairedMse {
            zero_fill: a.zero_fill + m.zero_fill / n,
            hadamard: a.hadamard + m.hadamard / n,
            xor: a.xor + m.xor / n,
        })
    }
}

struct Dataset {
    x: Vec<f64>,
    y: Vec<usize>,
    features: usize,
}

impl Dataset {
    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.features..(i + 1) * self.features]
    }

    fn len(&self) -> usize {
        self.y.len()
    }
}

fn make_blobs(cfg: &BlobsConfig, seed: u64) -> (Dataset, Dataset) {
    let mut rng = RngStream::new(seed, "blob-centres");
    let centre = Normal::new(0.0, cfg.center_scale).expect("finite scale");
    let centres: Vec<f64> = (0..cfg.classes * cfg.features)
        .map(|_| centre.sample(rng.rng()))
        .collect();
    let noise = Normal::new(0.0, cfg.spread).expect("finite spread");
    let sample = |n: usize, label: &str| {
        let mut rng = RngStream::new(seed, label);
        let mut x = Vec::with_capacity(n * cfg.features);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let c = rng.below(cfg.classes as u64) as usize;
            y.push(c);
            for f in 0..cfg.features {
                x.push(centres[c * cfg.features + f] + noise.sample(rng.rng()));
            }
        }
        Dataset {
            x,
            y,
            features: cfg.features,
        }
    };
    (sample(cfg.train_samples, "blob-train"), sample(cfg.test_samples, "blob-test"))
}

/// Softmax classifier with an optional ReLU hidden layer; parameters live in
/// one flat vector.
struct Model {
    kind: ModelKind,
    d: usize,
    h: usize,
    c: usize,
}

impl Model {
    fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::Logistic => self.c * self.d + self.c,
            ModelKind::Mlp => self.h * self.d + self.h + self.c * self.h + self.c,
        }
    }

    fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = RngStream::new(seed, "model-init");
        let mut p = vec![0.0; self.param_count()];
        if self.kind == ModelKind::Mlp {
            let s1 = (2.0 / self.d as f64).sqrt();
            let s2 = (1.0 / self.h as f64).sqrt();
            let (w1, rest) = p.split_at_mut(self.h * self.d);
            let w2 = &mut rest[self.h..self.h + self.c * self.h];
            let n1 = Normal::new(0.0, s1).expect("finite");
            let n2 = Normal::new(0.0, s2).expect("finite");
            w1.iter_mut().for_each(|w| *w = n1.sample(rng.rng()));
            w2.iter_mut().for_each(|w| *w = n2.sample(rng.rng()));
        }
        p
    }

    /// Class scores for `x`; fills `hidden` with post-activation values.
    fn logits(&self, p: &[f64], x: &[f64], hidden: &mut Vec<f64>, out: &mut Vec<f64>) {
        let (d, h, c) = (self.d, self.h, self.c);
        out.clear();
        match self.kind {
            ModelKind::Logistic => {
                let (w, b) = p.split_at(c * d);
                for k in 0..c {
                    out.push(b[k] + dot(&w[k * d..(k + 1) * d], x));
                }
            }
            ModelKind::Mlp => {
                let (w1, rest) = p.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                hidden.clear();
                for j in 0..h {
                    hidden.push((b1[j] + dot(&w1[j * d..(j + 1) * d], x)).max(0.0));
                }
                for k in 0..c {
                    out.push(b2[k] + dot(&w2[k * h..(k + 1) * h], hidden));
                }
            }
        }
    }

    /// Mean cross-entropy gradient over `batch`.
    fn gradient(&self, p: &[f64], data: &Dataset, batch: &[usize]) -> Vec<f64> {
        let (d, h, c) = (self.d, self.h, self.c);
        let mut g = vec![0.0; p.len()];
        let mut hidden = Vec::new();
        let mut z = Vec::new();
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let x = data.row(i);
            self.logits(p, x, &mut hidden, &mut z);
            softmax(&mut z);
            z[data.y[i]] -= 1.0;
            match self.kind {
                ModelKind::Logistic => {
                    let (gw, gb) = g.split_at_mut(c * d);
                    for k in 0..c {
                        let e = z[k] * scale;
                        gb[k] += e;
                        axpy(&mut gw[k * d..(k + 1) * d], e, x);
                    }
                }
                ModelKind::Mlp => {
                    let w2 = &p[h * d + h..h * d + h + c * h];
                    let (gw1, rest) = g.split_at_mut(h * d);
                    let (gb1, rest) = rest.split_at_mut(h);
                    let (gw2, gb2) = rest.split_at_mut(c * h);
                    let mut back = vec![0.0; h];
                    for k in 0..c {
                        let e = z[k] * scale;
                        gb2[k] += e;
                        axpy(&mut gw2[k * h..(k + 1) * h], e, &hidden);
                        axpy(&mut back, e, &w2[k * h..(k + 1) * h]);
                    }
                    for j in 0..h {
                        if hidden[j] > 0.0 {
                            gb1[j] += back[j];
                            axpy(&mut gw1[j * d..(j + 1) * d], back[j], x);
                        }
                    }
                }
            }
        }
        g
    }

    fn accuracy(&self, p: &[f64], data: &Dataset) -> f64 {
        let mut hidden = Vec::new();
        let mut z = Vec::new();
        let correct = (0..data.len())
            .filter(|&i| {
                self.logits(p, data.row(i), &mut hidden, &mut z);
                argmax(&z) == data.y[i]
            })
            .count();
        correct as f64 / data.len() as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

fn softmax(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

fn argmax(z: &[f64]) -> usize {
    z.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Outcome of sending one gradient through a lossy channel.
struct Transfer {
    values: Vec<f64>,
    sent: u64,
    lost: u64,
    residual: u64,
}

fn transmit(
    g: &[f64],
    mode: RecoveryMode,
    cfg: &TrainConfig,
    sign_seed: u64,
    rng: &mut RngStream,
) -> Result<Transfer, LossError> {
    let p = cfg.drop_fraction;
    let fs = cfg.fragment_size;
    match mode {
        RecoveryMode::ZeroFill => {
            let frags = g.len().div_ceil(fs);
            let mask = DropMask::random(frags, p, rng);
            let lost = (frags - mask.received_count()) as u64;
            Ok(Transfer {
                values: zero_fill(g, fs, &mask),
                sent: frags as u64,
                lost,
                residual: lost,
            })
        }
        RecoveryMode::Hadamard => {
            let enc = encode(g, sign_seed, fs.min(g.len().next_power_of_two()))?;
            let frags = enc.fragment_count();
            let mask = DropMask::random(frags, p, rng);
            let lost = (frags - mask.received_count()) as u64;
            Ok(Transfer {
                values: decode(&enc, &mask)?.values,
                sent: frags as u64,
                lost,
                residual: lost,
            })
        }
        RecoveryMode::Xor => {
            let data: Vec<Vec<u8>> = g
                .chunks(fs)
                .map(|c| c.iter().flat_map(|v| v.to_le_bytes()).collect())
                .collect();
            let coded = xor_encode(&data, cfg.xor_group)?;
            let dmask = DropMask::random(coded.data.len(), p, rng);
            let pmask = DropMask::random(coded.parity.len(), p, rng);
            let rec = xor_decode(&coded, &dmask.received, &pmask.received)?;
            let mut values = vec![0.0; g.len()];
            for (chunk, frag) in values.chunks_mut(fs).zip(&rec.fragments) {
                if let Some(bytes) = frag {
                    for (v, b) in chunk.iter_mut().zip(bytes.chunks_exact(8)) {
                        *v = f64::from_le_bytes(b.try_into().expect("8 bytes"));
                    }
                }
            }
            let sent = (coded.data.len() + coded.parity.len()) as u64;
            let lost = (dmask.len() - dmask.received_count() + pmask.len() - pmask.received_count()) as u64;
            Ok(Transfer {
                values,
                sent,
                lost,
                residual: rec.residual_lost as u64,
            })
        }
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

fn average(vs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; vs[0].len()];
    for v in vs {
        axpy(&mut out, 1.0 / vs.len() as f64, v);
    }
    out
}

/// Trains with `cfg.workers` workers; every worker gradient crosses a
/// channel that drops each fragment with probability `cfg.drop_fraction`
/// and is recovered by `cfg.mode` before averaging.
pub fn train_with_drops(cfg: &TrainConfig) -> Result<TrainReport, LossError> {
    cfg.validate()?;
    let (train, test) = make_blobs(&cfg.dataset, cfg.seed);
    let model = Model {
        kind: cfg.model,
        d: cfg.dataset.features,
        h: cfg.hidden,
        c: cfg.dataset.classes,
    };
    let mut params = model.init(cfg.seed);
    let w = cfg.workers;
    let shards: Vec<Vec<usize>> = (0..w).map(|k| (k..train.len()).step_by(w).collect()).collect();
    let steps_per_epoch = (train.len() / (w * cfg.batch_per_worker)).max(1);
    let mut batch_rng = RngStream::new(cfg.seed, "minibatch");
    let mut drop_rng = RngStream::new(cfg.seed, "fragment-drops");
    let mut shadow_rng = RngStream::new(cfg.seed, "paired-drops");
    let mut report = TrainReport {
        epoch_accuracy: Vec::with_capacity(cfg.epochs),
        step_mse: Vec::new(),
        paired_mse: Vec::new(),
        fragments_sent: 0,
        fragments_lost: 0,
        residual_lost: 0,
    };
    let mut step = 0u64;
    for _ in 0..cfg.epochs {
        for _ in 0..steps_per_epoch {
            let grads: Vec<Vec<f64>> = shards
                .iter()
                .map(|shard| {
                    let batch: Vec<usize> = (0..cfg.batch_per_worker)
                        .map(|_| shard[batch_rng.below(shard.len() as u64) as usize])
                        .collect();
                    model.gradient(&params, &train, &batch)
                })
                .collect();
            let truth = average(&grads);
            let sign_seed = |worker: usize| splitmix64(cfg.seed ^ (step << 16) ^ worker as u64);
            let mut received = Vec::with_capacity(w);
            for (k, g) in grads.iter().enumerate() {
                let t = transmit(g, cfg.mode, cfg, sign_seed(k), &mut drop_rng)?;
                report.fragments_sent += t.sent;
                report.fragments_lost += t.lost;
                report.residual_lost += t.residual;
                received.push(t.values);
            }
            let applied = average(&received);
            report.step_mse.push(mse(&applied, &truth));
            let mut paired = [0.0; 3];
            for (slot, mode) in paired.iter_mut().zip(RecoveryMode::ALL) {
                let outs = grads
                    .iter()
                    .enumerate()
                    .map(|(k, g)| transmit(g, mode, cfg, sign_seed(k), &mut shadow_rng).map(|t| t.values))
                    .collect::<Result<Vec<_>, _>>()?;
                *slot = mse(&average(&outs), &truth);
            }
            report.paired_mse.push(PairedMse {
                zero_fill: paired[0],
                hadamard: paired[1],
                xor: paired[2],
            });
            axpy(&mut params, -cfg.learning_rate, &applied);
            step += 1;
        }
        report.epoch_accuracy.push(model.accuracy(&params, &test));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(mode: RecoveryMode, p: f64, model: ModelKind) -> TrainConfig {
        TrainConfig {
            mode,
            drop_fraction: p,
            model,
            epochs: 4,
            ..Default::default()
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (train, _) = make_blobs(&BlobsConfig::default(), 3);
        for kind in [ModelKind::Logistic, ModelKind::Mlp] {
            let model = Model {
                kind,
                d: 32,
                h: 8,
                c: 8,
            };
            let mut p = model.init(3);
            let mut rng = RngStream::new(4, "perturb");
            p.iter_mut().for_each(|v| *v += rng.uniform(-0.1, 0.1).unwrap());
            let batch = [0, 1, 2, 3];
            let g = model.gradient(&p, &train, &batch);
            let loss = |p: &[f64]| {
                let (mut h, mut z) = (Vec::new(), Vec::new());
                batch
                    .iter()
                    .map(|&i| {
                        model.logits(p, train.row(i), &mut h, &mut z);
                        softmax(&mut z);
                        -z[train.y[i]].ln()
                    })
                    .sum::<f64>()
                    / batch.len() as f64
            };
            for idx in (0..p.len()).step_by(17) {
                let eps = 1e-6;
                let mut hi = p.clone();
                hi[idx] += eps;
                let mut lo = p.clone();
                lo[idx] -= eps;
                let fd = (loss(&hi) - loss(&lo)) / (2.0 * eps);
                assert!((fd - g[idx]).abs() < 1e-5, "{kind:?} param {idx}: {fd} vs {}", g[idx]);
            }
        }
    }

    #[test]
    fn zero_drop_matches_lossless_for_every_mode() {
        let base = train_with_drops(&quick(RecoveryMode::ZeroFill, 0.0, ModelKind::Logistic)).unwrap();
        for mode in RecoveryMode::ALL {
            let r = train_with_drops(&quick(mode, 0.0, ModelKind::Logistic)).unwrap();
            assert_eq!(r.epoch_accuracy, base.epoch_accuracy, "{mode:?}");
            assert_eq!(r.fragments_lost, 0);
        }
    }

    #[test]
    fn learns_the_blobs() {
        let r = train_with_drops(&quick(RecoveryMode::ZeroFill, 0.0, ModelKind::Mlp)).unwrap();
        assert!(r.final_accuracy() > 0.6, "{:?}", r.epoch_accuracy);
    }

    #[test]
    fn drop_fraction_is_bounded() {
        let cfg = quick(RecoveryMode::Xor, 0.6, ModelKind::Logistic);
        assert!(matches!(train_with_drops(&cfg), Err(LossError::InvalidConfig { .. })));
    }

    #[test]
    fn observed_drop_rate_tracks_configuration() {
        let r = train_with_drops(&quick(RecoveryMode::ZeroFill, 0.2, ModelKind::Logistic)).unwrap();
        let rate = r.fragments_lost as f64 / r.fragments_sent as f64;
        assert!((rate - 0.2).abs() < 0.03, "{rate}");
    }
}
