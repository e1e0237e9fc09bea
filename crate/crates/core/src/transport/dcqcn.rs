//! DCQCN rate control.
//!
//! The reaction point cuts its rate on every CNP and recovers in three
//! stages: fast recovery (move halfway back to the target), additive increase
//! and hyper increase (raise the target, then move halfway). Stages advance on
//! a periodic timer and on a byte counter.

use serde::{Deserialize, Serialize};

use crate::simkernel::SimTime;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DcqcnConfig {
    pub enabled: bool,
    pub g: f64,
    pub cnp_interval_ns: u64,
    pub timer_ns: u64,
    pub byte_counter: u64,
    pub fast_recovery_stages: u32,
    pub rai_bps: f64,
    pub rhai_bps: f64,
    pub min_rate_bps: f64,
}

impl Default for DcqcnConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            g: 1.0 / 256.0,
            cnp_interval_ns: 50_000,
            timer_ns: 55_000,
            byte_counter: 10_000_000,
            fast_recovery_stages: 5,
            rai_bps: 40e6,
            rhai_bps: 400e6,
            min_rate_bps: 10e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TickSource {
    Timer,
    Bytes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IncreaseStage {
    FastRecovery,
    Additive,
    Hyper,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcqcnState {
    pub line_rate: f64,
    pub current_rate: f64,
    pub target_rate: f64,
    pub alpha: f64,
    /// Bytes sent since the last byte-counter stage.
    pub byte_counter: u64,
    /// Start of the current timer period.
    pub rate_timer_epoch: SimTime,
    pub timer_stage: u32,
    pub byte_stage: u32,
    pub last_cnp_time: Option<SimTime>,
}

impl DcqcnState {
    pub fn new(line_rate: f64) -> Self {
        Self {
            line_rate,
            current_rate: line_rate,
            target_rate: line_rate,
            alpha: 1.0,
            byte_counter: 0,
            rate_timer_epoch: SimTime::ZERO,
            timer_stage: 0,
            byte_stage: 0,
            last_cnp_time: None,
        }
    }

    pub fn stage(&self, cfg: &DcqcnConfig) -> IncreaseStage {
        let f = cfg.fast_recovery_stages;
        if self.timer_stage.max(self.byte_stage) < f {
            IncreaseStage::FastRecovery
        } else if self.timer_stage.min(self.byte_stage) >= f {
            IncreaseStage::Hyper
        } else {
            IncreaseStage::Additive
        }
    }

    fn at_line_rate(&self) -> bool {
        self.current_rate >= self.line_rate && self.target_rate >= self.line_rate
    }

    /// Applies all timer periods that elapsed before `now`. Equivalent to
    /// firing the periodic timer event by event.
    pub fn advance_to(&mut self, now: SimTime, cfg: &DcqcnConfig) {
        if !cfg.enabled || cfg.timer_ns == 0 {
            return;
        }
        let period = cfg.timer_ns;
        while self.rate_timer_epoch.0 + period <= now.0 {
            if self.at_line_rate() {
                // Only alpha decays and counters advance; apply in bulk.
                let k = (now.0 - self.rate_timer_epoch.0) / period;
                self.alpha *= (1.0 - cfg.g).powf(k as f64);
                self.timer_stage = self.timer_stage.saturating_add(k.min(u32::MAX as u64) as u32);
                self.rate_timer_epoch.0 += k * period;
                break;
            }
            self.rate_timer_epoch.0 += period;
            dcqcn_increase_tick(self, cfg, TickSource::Timer);
        }
    }

    /// Time of the next timer period boundary, when the rate can still rise.
    pub fn next_tick(&self, cfg: &DcqcnConfig) -> Option<SimTime> {
        (cfg.enabled && cfg.timer_ns > 0 && !self.at_line_rate())
            .then(|| SimTime(self.rate_timer_epoch.0 + cfg.timer_ns))
    }

    /// Accounts transmitted bytes toward the byte-counter stage.
    pub fn on_bytes_sent(&mut self, bytes: u64, cfg: &DcqcnConfig) {
        if !cfg.enabled || cfg.byte_counter == 0 {
            return;
        }
        self.byte_counter += bytes;
        while self.byte_counter >= cfg.byte_counter {
            self.byte_counter -= cfg.byte_counter;
            dcqcn_increase_tick(self, cfg, TickSource::Bytes);
        }
    }
}

/// Rate cut on congestion notification.
pub fn dcqcn_on_cnp(state: &mut DcqcnState, cfg: &DcqcnConfig, now: SimTime) {
    if !cfg.enabled {
        return;
    }
    state.target_rate = state.current_rate;
    state.current_rate = (state.current_rate * (1.0 - state.alpha / 2.0)).max(cfg.min_rate_bps);
    state.alpha = (1.0 - cfg.g) * state.alpha + cfg.g;
    state.timer_stage = 0;
    state.byte_stage = 0;
    state.byte_counter = 0;
    state.rate_timer_epoch = now;
    state.last_cnp_time = Some(now);
}

/// One recovery stage. The stage is chosen from the counters before this
/// tick is counted, so exactly `F` fast-recovery ticks precede additive
/// increase.
pub fn dcqcn_increase_tick(state: &mut DcqcnState, cfg: &DcqcnConfig, source: TickSource) {
    match state.stage(cfg) {
        IncreaseStage::FastRecovery => {}
        IncreaseStage::Additive => state.target_rate += cfg.rai_bps,
        IncreaseStage::Hyper => state.target_rate += cfg.rhai_bps,
    }
    state.target_rate = state.target_rate.min(state.line_rate);
    state.current_rate = ((state.current_rate + state.target_rate) / 2.0).min(state.line_rate);
    if source == TickSource::Timer {
        state.alpha *= 1.0 - cfg.g;
    }
    match source {
        TickSource::Timer => state.timer_stage = state.timer_stage.saturating_add(1),
        TickSource::Bytes => state.byte_stage = state.byte_stage.saturating_add(1),
    }
}
