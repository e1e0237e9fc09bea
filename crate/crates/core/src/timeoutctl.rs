//! Step deadlines for best-effort collectives.
//!
//! Each group keeps a [`TimeoutProfile`]: after every step the observed
//! duration (extrapolated to full delivery when data is missing) is smoothed
//! into the next timeout and clamped. Members then agree on the median of
//! their local values. A static alternative derives one deadline from a
//! recorded baseline distribution.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collective::{FinalizedBy, StepResult};
use crate::fabric::HostId;
use crate::simkernel::SimTime;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TimeoutError {
    #[error("cannot take the median of an empty list")]
    Empty,
    #[error("a static timeout needs at least two baseline samples, got {0}")]
    TooFewSamples(usize),
    #[error("invalid timeout field `{field}`: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TimeoutPolicy {
    /// Wait for every byte.
    None,
    /// One fixed deadline for all steps.
    Static,
    /// Per-step smoothed and coordinated deadline.
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveConfig {
    pub beta: f64,
    /// Clamp bounds as multiples of the running median of complete steps.
    pub clamp_min_factor: f64,
    pub clamp_max_factor: f64,
    /// Timeout before any step has been observed.
    pub initial_timeout_ns: u64,
    /// Absolute bounds in force until a complete step has been seen.
    pub initial_clamp_min_ns: u64,
    pub initial_clamp_max_ns: u64,
    /// Complete-step durations kept for the running median.
    pub median_window: usize,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            beta: 0.2,
            clamp_min_factor: 0.5,
            clamp_max_factor: 3.0,
            initial_timeout_ns: 1_000_000,
            initial_clamp_min_ns: 1_000,
            initial_clamp_max_ns: 1_000_000_000,
            median_window: 64,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<(), TimeoutError> {
        let bad = |field: &'static str, reason: &str| {
            Err(TimeoutError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("timeout.adaptive.beta", "must lie in (0, 1]");
        }
        if !(self.clamp_min_factor > 0.0 && self.clamp_min_factor <= self.clamp_max_factor) {
            return bad(
                "timeout.adaptive.clamp_min_factor",
                "factors must satisfy 0 < min <= max",
            );
        }
        if self.initial_clamp_min_ns > self.initial_clamp_max_ns {
            return bad("timeout.adaptive.initial_clamp_min_ns", "exceeds the maximum");
        }
        if self.median_window == 0 {
            return bad("timeout.adaptive.median_window", "must be positive");
        }
        Ok(())
    }
}

const HISTORY: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeoutProfile {
    pub group_id: u32,
    pub current_timeout: SimTime,
    pub ewma_beta: f64,
    pub clamp_min: SimTime,
    pub clamp_max: SimTime,
    /// Recent `(duration, fraction received)` pairs.
    pub history: VecDeque<(SimTime, f64)>,
    relative: Option<(f64, f64)>,
    complete: VecDeque<SimTime>,
    median_window: usize,
}

impl TimeoutProfile {
    /// A profile with fixed clamp bounds.
    pub fn new(
        group_id: u32,
        initial: SimTime,
        beta: f64,
        clamp_min: SimTime,
        clamp_max: SimTime,
    ) -> Self {
        Self {
            group_id,
            current_timeout: initial.clamp(clamp_min, clamp_max),
            ewma_beta: beta,
            clamp_min,
            clamp_max,
            history: VecDeque::new(),
            relative: None,
            complete: VecDeque::new(),
            median_window: 64,
        }
    }

    /// A profile whose bounds follow the running median of complete steps.
    pub fn adaptive(group_id: u32, cfg: &AdaptiveConfig) -> Self {
        let mut p = Self::new(
            group_id,
            SimTime(cfg.initial_timeout_ns),
            cfg.beta,
            SimTime(cfg.initial_clamp_min_ns),
            SimTime(cfg.initial_clamp_max_ns),
        );
        p.relative = Some((cfg.clamp_min_factor, cfg.clamp_max_factor));
        p.median_window = cfg.median_window;
        p
    }

    fn refresh_clamps(&mut self) {
        let Some((lo, hi)) = self.relative else {
            return;
        };
        let mut v: Vec<SimTime> = self.complete.iter().copied().collect();
        let Ok(m) = lower_median(&mut v) else {
            return;
        };
        self.clamp_min = SimTime((m.0 as f64 * lo) as u64);
        self.clamp_max = SimTime((m.0 as f64 * hi) as u64);
    }

    /// Folds one step result into the profile and returns the new timeout.
    pub fn update_timeout(&mut self, result: &StepResult) -> SimTime {
        let frac = if result.bytes_expected == 0 {
            1.0
        } else {
            result.bytes_received as f64 / result.bytes_expected as f64
        };
        if self.history.len() == HISTORY {
            self.history.pop_front();
        }
        self.history.push_back((result.duration, frac));
        let complete = result.bytes_received >= result.bytes_expected;
        if complete && result.finalized_by == FinalizedBy::Complete {
            if self.complete.len() == self.median_window {
                self.complete.pop_front();
            }
            self.complete.push_back(result.duration);
            self.refresh_clamps();
        }
        let estimate = if complete {
            result.duration.0 as f64
        } else if result.bytes_received == 0 {
            self.clamp_max.0 as f64
        } else {
            result.duration.0 as f64 * result.bytes_expected as f64 / result.bytes_received as f64
        };
        self.current_timeout = smooth(
            self.current_timeout,
            estimate,
            self.ewma_beta,
            self.clamp_min,
            self.clamp_max,
        );
        self.current_timeout
    }

    /// Adopts a cluster-agreed value, kept within this profile's bounds.
    pub fn adopt(&mut self, coordinated: SimTime) {
        self.current_timeout = coordinated.clamp(self.clamp_min, self.clamp_max);
    }
}

/// `clamp((1 - beta) * prev + beta * estimate, lo, hi)`.
pub fn smooth(prev: SimTime, estimate: f64, beta: f64, lo: SimTime, hi: SimTime) -> SimTime {
    let v = (1.0 - beta) * prev.0 as f64 + beta * estimate;
    SimTime(v.round().clamp(lo.0 as f64, hi.0 as f64) as u64)
}

fn lower_median(v: &mut [SimTime]) -> Result<SimTime, TimeoutError> {
    if v.is_empty() {
        return Err(TimeoutError::Empty);
    }
    let k = (v.len() - 1) / 2;
    Ok(*v.select_nth_unstable(k).1)
}

/// Cluster timeout: the lower median of the members' local values.
pub fn coordinate(local_timeouts: &[SimTime]) -> Result<SimTime, TimeoutError> {
    lower_median(&mut local_timeouts.to_vec())
}

/// Median plus one population standard deviation of `step_durations`.
pub fn static_timeout_from_baseline(step_durations: &[SimTime]) -> Result<SimTime, TimeoutError> {
    let n = step_durations.len();
    if n < 2 {
        return Err(TimeoutError::TooFewSamples(n));
    }
    let mut v: Vec<f64> = step_durations.iter().map(|d| d.0 as f64).collect();
    v.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    Ok(SimTime((median + var.sqrt()).round() as u64))
}

/// One row of the timeout trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TimeoutTraceRow {
    pub step_id: u64,
    pub node: HostId,
    pub local_estimate_ns: u64,
    pub coordinated_timeout_ns: u64,
}

/// Deadlines for one collective group under a chosen policy.
#[derive(Debug, Clone)]
pub struct DeadlineController {
    policy: TimeoutPolicy,
    static_timeout: SimTime,
    members: Vec<HostId>,
    profiles: Vec<TimeoutProfile>,
    /// Local estimates reported for steps not yet coordinated.
    reports: std::collections::BTreeMap<u64, Vec<Option<SimTime>>>,
    trace: Vec<TimeoutTraceRow>,
    coordination_latency: SimTime,
}

impl DeadlineController {
    pub fn none(members: Vec<HostId>) -> Self {
        Self::build(TimeoutPolicy::None, SimTime::MAX, members, None)
    }

    pub fn fixed(members: Vec<HostId>, timeout: SimTime) -> Self {
        Self::build(TimeoutPolicy::Static, timeout, members, None)
    }

    pub fn adaptive(group_id: u32, members: Vec<HostId>, cfg: &AdaptiveConfig) -> Self {
        Self::build(
            TimeoutPolicy::Adaptive,
            SimTime::MAX,
            members,
            Some(TimeoutProfile::adaptive(group_id, cfg)),
        )
    }

    fn build(
        policy: TimeoutPolicy,
        static_timeout: SimTime,
        members: Vec<HostId>,
        profile: Option<TimeoutProfile>,
    ) -> Self {
        let profiles = match profile {
            Some(p) => vec![p; members.len()],
            None => Vec::new(),
        };
        Self {
            policy,
            static_timeout,
            members,
            profiles,
            reports: Default::default(),
            trace: Vec::new(),
            coordination_latency: SimTime::ZERO,
        }
    }

    /// Fixed per-step cost of exchanging estimates.
    pub fn with_coordination_latency(mut self, latency: SimTime) -> Self {
        self.coordination_latency = latency;
        self
    }

    pub fn policy(&self) -> TimeoutPolicy {
        self.policy
    }

    pub fn coordination_latency(&self) -> SimTime {
        self.coordination_latency
    }

    /// Timeout for the next step at ring position `pos`, if deadlines apply.
    pub fn timeout_for(&self, pos: usize) -> Option<SimTime> {
        match self.policy {
            TimeoutPolicy::None => None,
            TimeoutPolicy::Static => Some(self.static_timeout),
            TimeoutPolicy::Adaptive => Some(self.profiles[pos].current_timeout),
        }
    }

    pub fn profile(&self, pos: usize) -> Option<&TimeoutProfile> {
        self.profiles.get(pos)
    }

    /// Records the result of a finalized step at ring position `pos`. Once
    /// every member has reported a step, all adopt the median.
    pub fn on_step_finalized(&mut self, pos: usize, result: &StepResult) {
        if self.policy != TimeoutPolicy::Adaptive {
            return;
        }
        let local = self.profiles[pos].update_timeout(result);
        let n = self.members.len();
        let slot = self.reports.entry(result.step_id).or_insert_with(|| vec![None; n]);
        slot[pos] = Some(local);
        if slot.iter().all(Option::is_some) {
            let locals: Vec<SimTime> = slot.iter().map(|x| x.expect("all reported")).collect();
            self.reports.remove(&result.step_id);
            let agreed = coordinate(&locals).expect("non-empty group");
            for (p, (profile, local)) in self.profiles.iter_mut().zip(&locals).enumerate() {
                profile.adopt(agreed);
                self.trace.push(TimeoutTraceRow {
                    step_id: result.step_id,
                    node: self.members[p],
                    local_estimate_ns: local.0,
                    coordinated_timeout_ns: agreed.0,
                });
            }
        }
    }

    pub fn trace(&self) -> &[TimeoutTraceRow] {
        &self.trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MS: u64 = 1_000_000;

    fn result(duration_ms: f64, expected: u64, received: u64) -> StepResult {
        StepResult {
            step_id: 0,
            node: 0,
            bytes_expected: expected,
            bytes_received: received,
            start: SimTime::ZERO,
            duration: SimTime((duration_ms * MS as f64) as u64),
            finalized_by: if received == expected {
                FinalizedBy::Complete
            } else {
                FinalizedBy::Deadline
            },
        }
    }

    fn fixed_profile(prev_ms: u64, max_ms: u64) -> TimeoutProfile {
        TimeoutProfile::new(0, SimTime(prev_ms * MS), 0.2, SimTime(1), SimTime(max_ms * MS))
    }

    #[test]
    fn complete_step_smooths_toward_duration() {
        let mut p = fixed_profile(11, 100);
        assert_eq!(p.update_timeout(&result(10.0, 100, 100)), SimTime(10_800_000));
    }

    #[test]
    fn partial_step_extrapolates() {
        let mut p = fixed_profile(11, 100);
        let t = p.update_timeout(&result(10.0, 25_000_000, 20_000_000));
        assert_eq!(t, SimTime(11_300_000));
    }

    #[test]
    fn estimate_is_clamped() {
        let mut p = TimeoutProfile::new(0, SimTime(30 * MS), 1.0, SimTime(1), SimTime(30 * MS));
        assert_eq!(p.update_timeout(&result(50.0, 10, 10)), SimTime(30 * MS));
    }

    #[test]
    fn nothing_received_escalates_to_max() {
        let mut p = TimeoutProfile::new(0, SimTime(10 * MS), 1.0, SimTime(1), SimTime(30 * MS));
        assert_eq!(p.update_timeout(&result(5.0, 10, 0)), SimTime(30 * MS));
    }

    #[test]
    fn median_examples() {
        let ms = |v: &[u64]| v.iter().map(|x| SimTime(x * MS)).collect::<Vec<_>>();
        assert_eq!(coordinate(&ms(&[3, 5, 9])), Ok(SimTime(5 * MS)));
        assert_eq!(coordinate(&ms(&[8, 4])), Ok(SimTime(4 * MS)));
        assert_eq!(coordinate(&ms(&[7, 7, 7])), Ok(SimTime(7 * MS)));
        assert_eq!(coordinate(&[]), Err(TimeoutError::Empty));
    }

    #[test]
    fn static_rule_examples() {
        let ms = |v: &[u64]| v.iter().map(|x| SimTime(x * MS)).collect::<Vec<_>>();
        assert_eq!(static_timeout_from_baseline(&ms(&[10, 10, 10])), Ok(SimTime(10 * MS)));
        // Oracle: population sigma of {8, 10, 12} is sqrt(8/3).
        let expect = 10.0 + (8.0f64 / 3.0).sqrt();
        let got = static_timeout_from_baseline(&ms(&[8, 10, 12])).unwrap();
        assert!((got.0 as f64 / MS as f64 - expect).abs() < 1e-6);
        assert!((got.0 as f64 / MS as f64 - 11.633).abs() < 1e-3);
        assert_eq!(
            static_timeout_from_baseline(&ms(&[1])),
            Err(TimeoutError::TooFewSamples(1))
        );
    }

    #[test]
    fn relative_clamps_follow_complete_steps() {
        let cfg = AdaptiveConfig {
            initial_timeout_ns: 10 * MS,
            ..Default::default()
        };
        let mut p = TimeoutProfile::adaptive(0, &cfg);
        p.update_timeout(&result(2.0, 10, 10));
        assert_eq!(p.clamp_max, SimTime(6 * MS));
        assert_eq!(p.clamp_min, SimTime(MS));
        assert!(p.current_timeout <= SimTime(6 * MS));
    }

    #[test]
    fn ewma_converges_on_iid_durations() {
        use crate::simkernel::RngStream;
        let beta: f64 = 0.2;
        let steps = (5.0 / beta).ceil() as usize;
        for seed in 0..20 {
            let mut rng = RngStream::new(seed, "timeout-convergence");
            let mut p = TimeoutProfile::new(0, SimTime(20 * MS), beta, SimTime(1), SimTime(u64::MAX));
            for _ in 0..steps {
                let d = rng.uniform(9.5, 10.5).unwrap();
                p.update_timeout(&result(d, 1, 1));
            }
            let got = p.current_timeout.0 as f64 / MS as f64;
            assert!((got - 10.0).abs() / 10.0 < 0.05, "seed {seed}: {got}");
        }
    }

    #[test]
    fn controller_coordinates_after_all_report() {
        let cfg = AdaptiveConfig {
            beta: 1.0,
            initial_clamp_max_ns: 100 * MS,
            ..Default::default()
        };
        let mut c = DeadlineController::adaptive(0, vec![10, 11, 12], &cfg);
        for (pos, d) in [(0, 3.0), (1, 9.0)] {
            c.on_step_finalized(pos, &result(d, 10, 5));
        }
        assert!(c.trace().is_empty());
        c.on_step_finalized(2, &result(2.5, 10, 5));
        // Locals are 6, 18 and 5 ms; the lower median is 6 ms.
        assert_eq!(c.trace().len(), 3);
        assert!(c.trace().iter().all(|r| r.coordinated_timeout_ns == 6 * MS));
        assert_eq!(c.timeout_for(1), Some(SimTime(6 * MS)));
    }

    proptest! {
        #[test]
        fn timeout_stays_within_bounds(
            durations in prop::collection::vec((1u64..100_000_000, 0u64..=100), 1..50),
            lo in 1u64..10_000_000,
            span in 0u64..50_000_000,
        ) {
            let hi = lo + span;
            let mut p = TimeoutProfile::new(0, SimTime(lo), 0.3, SimTime(lo), SimTime(hi));
            for (d, pct) in durations {
                let r = StepResult {
                    step_id: 0, node: 0, bytes_expected: 100, bytes_received: pct,
                    start: SimTime::ZERO, duration: SimTime(d),
                    finalized_by: FinalizedBy::Deadline,
                };
                let t = p.update_timeout(&r);
                prop_assert!(SimTime(lo) <= t && t <= SimTime(hi));
            }
        }

        #[test]
        fn larger_estimate_never_lowers_timeout(prev in 1u64..1_000_000_000, a in 0f64..1e9, b in 0f64..1e9) {
            let (lo, hi) = (SimTime(1), SimTime(2_000_000_000));
            let (small, large) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(smooth(SimTime(prev), small, 0.2, lo, hi) <= smooth(SimTime(prev), large, 0.2, lo, hi));
        }

        #[test]
        fn median_is_permutation_invariant_and_outlier_robust(
            mut v in prop::collection::vec(0u64..1_000_000, 3..20),
            idx in any::<prop::sample::Index>(),
        ) {
            let t: Vec<SimTime> = v.iter().map(|x| SimTime(*x)).collect();
            let m = coordinate(&t).unwrap();
            let mut rev = t.clone();
            rev.reverse();
            prop_assert_eq!(coordinate(&rev).unwrap(), m);
            // Replacing one value by an outlier moves the median by at most
            // one order statistic.
            v.sort_unstable();
            let k = (v.len() - 1) / 2;
            let i = idx.index(t.len());
            let mut bad = t.clone();
            bad[i] = SimTime(u64::MAX);
            let m2 = coordinate(&bad).unwrap();
            prop_assert!(m2 >= SimTime(v[k.saturating_sub(1)]) && m2 <= SimTime(v[k + 1]));
        }
    }
}
