//! NIC state footprint, QP capacity under an SRAM budget, and a soft-error
//! MTBF model.
//!
//! The failure rate is proportional to exposed state bits: a fixed
//! design-wide term plus the per-QP contexts. Its two constants are fitted
//! by least squares to reference MTBF points; a literal per-bit FIT formula
//! is available as well.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transport::{context_bytes, TransportKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResError {
    #[error("per-QP context size must be positive")]
    ZeroContext,
    #[error("a fit needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("all points have the same context size; the fit is singular")]
    Singular,
    #[error("the points imply a non-positive per-bit rate; no consistent fit exists")]
    Inconsistent,
    #[error("MTBF values must be positive and finite")]
    BadMtbf,
}

pub fn qp_capacity(sram_budget_bytes: u64, per_qp_bytes: u64) -> Result<u64, ResError> {
    if per_qp_bytes == 0 {
        return Err(ResError::ZeroContext);
    }
    Ok(sram_budget_bytes / per_qp_bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NicDesign {
    pub kind: TransportKind,
    pub per_qp_bytes: u64,
    pub qp_count: u64,
    /// Design-wide state bits exposed to upsets, independent of QP count.
    pub fixed_essential_bits: f64,
}

impl NicDesign {
    pub fn new(kind: TransportKind, qp_count: u64, fixed_essential_bits: f64) -> Self {
        Self {
            kind,
            per_qp_bytes: context_bytes(kind) as u64,
            qp_count,
            fixed_essential_bits,
        }
    }

    pub fn qp_state_bits(&self) -> f64 {
        self.per_qp_bytes as f64 * 8.0 * self.qp_count as f64
    }

    pub fn essential_bits(&self) -> f64 {
        self.fixed_essential_bits + self.qp_state_bits()
    }
}

/// Fitted constants of `1 / MTBF = k * (F + s * 8 * Q)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    /// `F`, fixed essential bits.
    pub fixed_bits: f64,
    /// `k`, failures per bit-hour.
    pub per_bit_hour: f64,
    pub qp_count: u64,
    /// Per point, `(predicted - observed) / observed` MTBF.
    pub residuals: Vec<f64>,
}

impl Calibration {
    pub fn failure_rate(&self, per_qp_bytes: u64, qp_count: u64) -> f64 {
        self.per_bit_hour * (self.fixed_bits + per_qp_bytes as f64 * 8.0 * qp_count as f64)
    }

    pub fn mtbf_hours(&self, per_qp_bytes: u64, qp_count: u64) -> f64 {
        1.0 / self.failure_rate(per_qp_bytes, qp_count)
    }

    /// Rate for a design, replacing its fixed bits with the fitted value.
    pub fn design_rate(&self, design: &NicDesign) -> f64 {
        self.failure_rate(design.per_qp_bytes, design.qp_count)
    }
}

/// Least-squares fit of `1 / MTBF_i = a + b * x_i` with
/// `x_i = s_i * 8 * qp_count`; then `k = b` and `F = a / b`.
pub fn fit_calibration(points: &[(u64, f64)], qp_count: u64) -> Result<Calibration, ResError> {
    if points.len() < 2 {
        return Err(ResError::TooFewPoints(points.len()));
    }
    if points.iter().any(|&(_, m)| !(m.is_finite() && m > 0.0)) {
        return Err(ResError::BadMtbf);
    }
    let xs: Vec<f64> = points.iter().map(|&(s, _)| s as f64 * 8.0 * qp_count as f64).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, m)| 1.0 / m).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) {
        return Err(ResError::Singular);
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    if !(b > 0.0) {
        return Err(ResError::Inconsistent);
    }
    let mut cal = Calibration {
        fixed_bits: a / b,
        per_bit_hour: b,
        qp_count,
        residuals: Vec::new(),
    };
    cal.residuals = points
        .iter()
        .map(|&(s, m)| (cal.mtbf_hours(s, qp_count) - m) / m)
        .collect();
    Ok(cal)
}

/// Reference MTBF points (hours) at 10,000 QPs.
pub const REFERENCE_MTBF_HOURS: [(TransportKind, f64); 4] = [
    (TransportKind::RoceGbn, 42.8),
    (TransportKind::Irn, 34.3),
    (TransportKind::Srnic, 57.8),
    (TransportKind::Celeris, 80.5),
];

pub const REFERENCE_QP_COUNT: u64 = 10_000;

/// Calibration against [`REFERENCE_MTBF_HOURS`].
pub fn reference_calibration() -> Calibration {
    let points: Vec<(u64, f64)> = REFERENCE_MTBF_HOURS
        .iter()
        .map(|&(k, m)| (context_bytes(k) as u64, m))
        .collect();
    fit_calibration(&points, REFERENCE_QP_COUNT).expect("reference points are consistent")
}

/// Literal upset model: every node contributes
/// `fit_per_bit * essential_ratio * bits` failures per hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetModel {
    pub nodes: u64,
    /// Failures per bit-hour.
    pub fit_per_bit: f64,
    /// Share of bits whose upset causes a failure.
    pub essential_ratio: f64,
}

impl Default for FleetModel {
    fn default() -> Self {
        Self {
            nodes: 15_000,
            fit_per_bit: 1e-11,
            essential_ratio: 0.1,
        }
    }
}

pub fn failure_rate_literal(design: &NicDesign, fleet: &FleetModel) -> f64 {
    fleet.nodes as f64 * fleet.fit_per_bit * fleet.essential_ratio * design.essential_bits()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityRow {
    pub transport: TransportKind,
    pub context_bytes: u64,
    pub sram_budget_bytes: u64,
    pub qp_capacity: u64,
}

pub fn capacity_table(sram_budget_bytes: u64, srnic_bytes: u64) -> Vec<CapacityRow> {
    TransportKind::ALL
        .iter()
        .map(|&k| {
            let s = if k == TransportKind::Srnic {
                srnic_bytes
            } else {
                context_bytes(k) as u64
            };
            CapacityRow {
                transport: k,
                context_bytes: s,
                sram_budget_bytes,
                qp_capacity: qp_capacity(sram_budget_bytes, s).expect("positive context"),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MtbfRow {
    pub transport: TransportKind,
    pub context_bytes: u64,
    pub qp_count: u64,
    pub essential_bits: f64,
    pub mtbf_hours: f64,
}

pub fn mtbf_table(cal: &Calibration, qp_count: u64, srnic_bytes: u64) -> Vec<MtbfRow> {
    TransportKind::ALL
        .iter()
        .map(|&k| {
            let s = if k == TransportKind::Srnic {
                srnic_bytes
            } else {
                context_bytes(k) as u64
            };
            MtbfRow {
                transport: k,
                context_bytes: s,
                qp_count,
                essential_bits: cal.fixed_bits + s as f64 * 8.0 * qp_count as f64,
                mtbf_hours: cal.mtbf_hours(s, qp_count),
            }
        })
        .collect()
}
