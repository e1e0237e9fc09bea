use rand::seq::SliceRandom;
use rand::Rng;

use super::LossError;
use crate::simkernel::RngStream;

/// In-place orthonormal fast Walsh-Hadamard transform. Applying it twice
/// restores the input.
pub fn fwht(v: &mut [f64]) -> Result<(), LossError> {
    let n = v.len();
    if !n.is_power_of_two() {
        return Err(LossError::NotPowerOfTwo(n));
    }
    let mut h = 1;
    while h < n {
        for block in v.chunks_exact_mut(2 * h) {
            let (a, b) = block.split_at_mut(h);
            for (x, y) in a.iter_mut().zip(b.iter_mut()) {
                let (s, d) = (*x + *y, *x - *y);
                *x = s;
                *y = d;
            }
        }
        h *= 2;
    }
    let scale = 1.0 / (n as f64).sqrt();
    v.iter_mut().for_each(|x| *x *= scale);
    Ok(())
}

/// Which fragments of a payload arrived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropMask {
    pub received: Vec<bool>,
}

impl DropMask {
    pub fn full(fragments: usize) -> Self {
        Self {
            received: vec![true; fragments],
        }
    }

    pub fn empty(fragments: usize) -> Self {
        Self {
            received: vec![false; fragments],
        }
    }

    /// Each fragment is lost independently with probability `p`.
    pub fn random(fragments: usize, p: f64, rng: &mut RngStream) -> Self {
        Self {
            received: (0..fragments).map(|_| !rng.bernoulli(p)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.received.len()
    }

    pub fn is_empty(&self) -> bool {
        self.received.is_empty()
    }

    pub fn received_count(&self) -> usize {
        self.received.iter().filter(|r| **r).count()
    }

    pub fn drop_fraction(&self) -> f64 {
        if self.received.is_empty() {
            0.0
        } else {
            1.0 - self.received_count() as f64 / self.received.len() as f64
        }
    }
}

/// A gradient after sign randomization and the transform, cut into
/// equal fragments.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPayload {
    pub values: Vec<f64>,
    /// Length before padding.
    pub original_len: usize,
    pub sign_seed: u64,
    pub fragment_size: usize,
}

impl EncodedPayload {
    pub fn padded_len(&self) -> usize {
        self.values.len()
    }

    pub fn fragment_count(&self) -> usize {
        self.values.len() / self.fragment_size
    }

    pub fn fragment(&self, i: usize) -> &[f64] {
        &self.values[i * self.fragment_size..(i + 1) * self.fragment_size]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub values: Vec<f64>,
    /// Every fragment was lost; `values` is all zeros.
    pub total_loss: bool,
}

fn signs(seed: u64, n: usize) -> impl Iterator<Item = f64> {
    let mut rng = RngStream::new(seed, "hadamard-signs");
    let mut word = 0u64;
    (0..n).map(move |i| {
        if i % 64 == 0 {
            word = rng.rng().random();
        }
        if (word >> (i % 64)) & 1 == 1 {
            -1.0
        } else {
            1.0
        }
    })
}

/// Seeded order in which transform coefficients are dealt into fragments.
/// Without it a lost fragment's error stays on a few coordinates, because
/// aligned coefficient blocks invert to aligned coordinate blocks.
fn interleave(seed: u64, n: usize) -> Vec<usize> {
    let mut rng = RngStream::new(seed, "hadamard-interleave");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng.rng());
    order
}

pub fn encode(g: &[f64], sign_seed: u64, fragment_size: usize) -> Result<EncodedPayload, LossError> {
    let n = g.len().max(1).next_power_of_two();
    if fragment_size == 0 || !n.is_multiple_of(fragment_size) {
        return Err(LossError::FragmentSize {
            fragment_size,
            padded: n,
        });
    }
    let mut spread = vec![0.0; n];
    for ((v, x), s) in spread.iter_mut().zip(g).zip(signs(sign_seed, n)) {
        *v = x * s;
    }
    fwht(&mut spread)?;
    let values = interleave(sign_seed, n).iter().map(|&k| spread[k]).collect();
    Ok(EncodedPayload {
        values,
        original_len: g.len(),
        sign_seed,
        fragment_size,
    })
}

/// Zero-fills lost fragments, rescales the survivors by
/// `n / received elements` so the estimate is unbiased, and inverts.
pub fn decode(p: &EncodedPayload, mask: &DropMask) -> Result<Decoded, LossError> {
    let frags = p.fragment_count();
    if mask.len() != frags {
        return Err(LossError::MaskLength {
            mask: mask.len(),
            fragments: frags,
        });
    }
    let received = mask.received_count();
    if received == 0 {
        return Ok(Decoded {
            values: vec![0.0; p.original_len],
            total_loss: true,
        });
    }
    let scale = frags as f64 / received as f64;
    let mut masked = p.values.clone();
    for (chunk, ok) in masked.chunks_exact_mut(p.fragment_size).zip(&mask.received) {
        if *ok {
            if received != frags {
                chunk.iter_mut().for_each(|x| *x *= scale);
            }
        } else {
            chunk.fill(0.0);
        }
    }
    let mut v = vec![0.0; masked.len()];
    for (x, k) in masked.iter().zip(interleave(p.sign_seed, masked.len())) {
        v[k] = *x;
    }
    fwht(&mut v)?;
    for (x, s) in v.iter_mut().zip(signs(p.sign_seed, p.padded_len())) {
        *x *= s;
    }
    v.truncate(p.original_len);
    Ok(Decoded {
        values: v,
        total_loss: false,
    })
}

/// Plain fragmenting without a transform: lost fragments become zeros.
pub fn zero_fill(g: &[f64], fragment_size: usize, mask: &DropMask) -> Vec<f64> {
    let mut v = g.to_vec();
    for (chunk, ok) in v.chunks_mut(fragment_size).zip(&mask.received) {
        if !ok {
            chunk.fill(0.0);
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    /// Oracle: explicit Sylvester-Hadamard matrix product.
    fn hadamard_matrix_apply(v: &[f64]) -> Vec<f64> {
        let n = v.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let sign = if (i & j).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                        sign * v[j]
                    })
                    .sum::<f64>()
                    / (n as f64).sqrt()
            })
            .collect()
    }

    #[test]
    fn transform_examples() {
        let mut a = [1.0, 1.0, 1.0, 1.0];
        fwht(&mut a).unwrap();
        assert!(close(&a, &[2.0, 0.0, 0.0, 0.0], 1e-12));
        let mut b = [1.0, -1.0, 0.0, 2.0];
        fwht(&mut b).unwrap();
        assert!(close(&b, &[1.0, 0.0, -1.0, 2.0], 1e-12));
    }

    #[test]
    fn matches_matrix_oracle() {
        let mut rng = RngStream::new(1, "fwht-oracle");
        let v: Vec<f64> = (0..64).map(|_| rng.uniform(-1.0, 1.0).unwrap()).collect();
        let mut fast = v.clone();
        fwht(&mut fast).unwrap();
        assert!(close(&fast, &hadamard_matrix_apply(&v), 1e-12));
    }

    #[test]
    fn non_power_of_two_rejected() {
        assert_eq!(fwht(&mut [0.0; 6]), Err(LossError::NotPowerOfTwo(6)));
    }

    #[test]
    fn involution_and_norm_up_to_2_pow_16() {
        let mut rng = RngStream::new(2, "fwht-large");
        let v: Vec<f64> = (0..1 << 16).map(|_| rng.uniform(-1.0, 1.0).unwrap()).collect();
        let mut w = v.clone();
        fwht(&mut w).unwrap();
        let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!((norm(&w) - norm(&v)).abs() < 1e-9);
        fwht(&mut w).unwrap();
        assert!(close(&w, &v, 1e-9));
    }

    #[test]
    fn padding_and_fragments() {
        let g = vec![0.5; 1000];
        let p = encode(&g, 7, 128).unwrap();
        assert_eq!(p.padded_len(), 1024);
        assert_eq!(p.fragment_count(), 8);
    }

    #[test]
    fn zero_vector_encodes_to_zeros() {
        let p = encode(&[0.0; 100], 7, 16).unwrap();
        assert!(p.values.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn energy_is_preserved() {
        let g: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let p = encode(&g, 3, 128).unwrap();
        let e = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>();
        assert!((e(&p.values) - e(&g)).abs() < 1e-9);
    }

    #[test]
    fn full_mask_round_trip() {
        let g: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).cos()).collect();
        let p = encode(&g, 11, 128).unwrap();
        let d = decode(&p, &DropMask::full(8)).unwrap();
        assert!(!d.total_loss);
        assert!(close(&d.values, &g, 1e-9));
    }

    #[test]
    fn empty_mask_is_total_loss() {
        let p = encode(&[1.0; 10], 1, 16).unwrap();
        let d = decode(&p, &DropMask::empty(1)).unwrap();
        assert!(d.total_loss);
        assert!(d.values.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn mask_length_must_match() {
        let p = encode(&[1.0; 64], 1, 16).unwrap();
        assert!(matches!(decode(&p, &DropMask::full(3)), Err(LossError::MaskLength { .. })));
    }

    fn mean_estimate(g: &[f64], fragments: usize, trials: usize, seed: u64) -> Vec<f64> {
        let p = encode(g, 9, g.len().next_power_of_two() / fragments).unwrap();
        let mut mrng = RngStream::new(seed, "mask");
        let mut mean = vec![0.0; g.len()];
        for _ in 0..trials {
            let d = decode(&p, &DropMask::random(fragments, 0.1, &mut mrng)).unwrap();
            for (m, x) in mean.iter_mut().zip(&d.values) {
                *m += x / trials as f64;
            }
        }
        mean
    }

    #[test]
    fn unbiased_under_random_drops() {
        // With the estimator's per-coordinate relative spread of about
        // sqrt(p / (1 - p)), 10^4 trials put 1% at roughly three standard
        // errors for a flat gradient.
        let g = vec![1.5; 64];
        let mean = mean_estimate(&g, 8, 10_000, 6);
        for (m, x) in mean.iter().zip(&g) {
            assert!((m - x).abs() / x.abs() < 0.01, "{m} vs {x}");
        }
    }

    #[test]
    fn standard_error_shrinks_with_trials() {
        let mut grng = RngStream::new(5, "gradient");
        let g: Vec<f64> = (0..64).map(|_| grng.uniform(-2.0, 2.0).unwrap()).collect();
        let rms_err = |trials: usize| {
            let runs = 20;
            let mut acc = 0.0;
            for r in 0..runs {
                let mean = mean_estimate(&g, 8, trials, 100 + r);
                acc += mean.iter().zip(&g).map(|(m, x)| (m - x).powi(2)).sum::<f64>() / 64.0;
            }
            (acc / runs as f64).sqrt()
        };
        let ratio = rms_err(100) / rms_err(1600);
        // sqrt(1600 / 100) = 4.
        assert!((3.0..5.3).contains(&ratio), "{ratio}");
    }

    #[test]
    fn single_fragment_loss_spreads_error() {
        // A 1-sparse input loses its coordinate entirely under zero-fill,
        // but only a bounded share of it under the transform.
        let n = 64;
        let frag = 8;
        let mut g = vec![0.0; n];
        g[5] = 1.0;
        let p = encode(&g, 4, frag).unwrap();
        let max_coeff = p.values.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for lost in 0..n / frag {
            let mut mask = DropMask::full(n / frag);
            mask.received[lost] = false;
            let d = decode(&p, &mask).unwrap();
            let bound = n as f64 * (frag as f64 / n as f64) * max_coeff;
            assert!(d.values.iter().zip(&g).all(|(a, b)| (a - b).abs() <= bound + 1e-12));
            let touched = d.values.iter().zip(&g).filter(|(a, b)| (*a - *b).abs() > 1e-12).count();
            assert!(touched > frag, "error confined to {touched} coordinates");
            assert!((d.values[5] - 1.0).abs() < 1e-9);
            let zf = zero_fill(&g, frag, &mask);
            if lost == 0 {
                assert_eq!(zf[5], 0.0);
            }
        }
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(g in prop::collection::vec(-1e3f64..1e3, 1..300), seed in any::<u64>()) {
            let p = encode(&g, seed, 1).unwrap();
            let d = decode(&p, &DropMask::full(p.fragment_count())).unwrap();
            prop_assert!(close(&d.values, &g, 1e-9));
        }

        #[test]
        fn transform_is_orthonormal_involution(k in 0u32..10, seed in any::<u64>()) {
            let mut rng = RngStream::new(seed, "fwht-prop");
            let v: Vec<f64> = (0..1usize << k).map(|_| rng.uniform(-10.0, 10.0).unwrap()).collect();
            let mut w = v.clone();
            fwht(&mut w).unwrap();
            let e = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>();
            prop_assert!((e(&w) - e(&v)).abs() < 1e-9 * e(&v).max(1.0));
            fwht(&mut w).unwrap();
            prop_assert!(close(&w, &v, 1e-9));
        }
    }
}
