use rand::seq::index;
use rand_distr::{Distribution, Exp, Pareto};
use serde::{Deserialize, Serialize};

use super::{FabricError, HostId};
use crate::simkernel::{RngStream, SimTime};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BurstSize {
    Pareto { shape: f64, mean_bytes: f64 },
    Fixed { bytes: u64 },
}

/// Exponentially distributed on/off modulation of the arrival process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnOff {
    pub mean_on_ns: f64,
    pub mean_off_ns: f64,
}

/// Poisson flow arrivals between uniformly chosen host pairs. Each flow is
/// sent as back-to-back MTU packets. With `fan_in > 1` every arrival is an
/// incast: that many distinct sources each send one burst to one destination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundTrafficConfig {
    pub flow_arrival_rate: f64,
    pub burst: BurstSize,
    pub on_off: Option<OnOff>,
    /// Upper bound on a single heavy-tailed burst.
    pub max_burst_bytes: u64,
    /// Background flows react to CNPs like any other DCQCN sender.
    pub congestion_controlled: bool,
    pub fan_in: usize,
}

impl Default for BackgroundTrafficConfig {
    fn default() -> Self {
        Self {
            flow_arrival_rate: 0.0,
            burst: BurstSize::Pareto {
                shape: 1.5,
                mean_bytes: 1e6,
            },
            on_off: None,
            max_burst_bytes: 100_000_000,
            congestion_controlled: true,
            fan_in: 1,
        }
    }
}

impl BackgroundTrafficConfig {
    pub fn validate(&self, mtu: u64) -> Result<(), FabricError> {
        if !(self.flow_arrival_rate.is_finite() && self.flow_arrival_rate >= 0.0) {
            return Err(FabricError::invalid(
                "background.flow_arrival_rate",
                "must be finite and non-negative",
            ));
        }
        match self.burst {
            BurstSize::Pareto { shape, mean_bytes } => {
                if !(shape > 1.0) {
                    return Err(FabricError::invalid(
                        "background.burst.shape",
                        "Pareto shape must exceed 1 for a finite mean",
                    ));
                }
                if !(mean_bytes >= mtu as f64) {
                    return Err(FabricError::invalid(
                        "background.burst.mean_bytes",
                        "mean burst must be at least one MTU",
                    ));
                }
            }
            BurstSize::Fixed { bytes } => {
                if bytes < mtu {
                    return Err(FabricError::invalid(
                        "background.burst.bytes",
                        "burst must be at least one MTU",
                    ));
                }
            }
        }
        if self.fan_in == 0 {
            return Err(FabricError::invalid("background.fan_in", "must be at least 1"));
        }
        if let Some(oo) = &self.on_off {
            if !(oo.mean_on_ns > 0.0 && oo.mean_off_ns > 0.0) {
                return Err(FabricError::invalid("background.on_off", "durations must be positive"));
            }
        }
        Ok(())
    }

    pub fn mean_burst_bytes(&self) -> f64 {
        match self.burst {
            BurstSize::Pareto { mean_bytes, .. } => mean_bytes,
            BurstSize::Fixed { bytes } => bytes as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackgroundFlow {
    pub start: SimTime,
    pub src: HostId,
    pub dst: HostId,
    pub bytes: u64,
}

/// Draws the full burst schedule up to `horizon`.
pub fn inject_background(
    config: &BackgroundTrafficConfig,
    hosts: usize,
    horizon: SimTime,
    rng: &mut RngStream,
) -> Vec<BackgroundFlow> {
    let mut flows = Vec::new();
    if config.flow_arrival_rate <= 0.0 || hosts < 2 {
        return flows;
    }
    let gap = Exp::new(config.flow_arrival_rate).expect("positive rate");
    let horizon_s = horizon.as_secs_f64();
    let mut t = 0.0_f64;
    // End of the current on-period (infinite when unmodulated).
    let mut on_until = match &config.on_off {
        Some(oo) => sample_exp(rng, oo.mean_on_ns) * 1e-9,
        None => f64::INFINITY,
    };
    loop {
        let next = t + gap.sample(rng.rng());
        if next > on_until {
            // Memoryless: restart the arrival clock after the off-period.
            let oo = config.on_off.as_ref().expect("finite on-period implies on/off");
            t = on_until + sample_exp(rng, oo.mean_off_ns) * 1e-9;
            on_until = t + sample_exp(rng, oo.mean_on_ns) * 1e-9;
            if t >= horizon_s {
                break;
            }
            continue;
        }
        t = next;
        if t >= horizon_s {
            break;
        }
        let start = SimTime::from_secs_f64(t);
        if config.fan_in <= 1 {
            let src = rng.below(hosts as u64) as usize;
            let mut dst = rng.below(hosts as u64 - 1) as usize;
            if dst >= src {
                dst += 1;
            }
            let bytes = burst_bytes(config, rng);
            flows.push(BackgroundFlow {
                start,
                src,
                dst,
                bytes,
            });
        } else {
            let dst = rng.below(hosts as u64) as usize;
            let k = config.fan_in.min(hosts - 1);
            let bytes = burst_bytes(config, rng);
            let mut srcs: Vec<usize> = index::sample(rng.rng(), hosts - 1, k)
                .into_iter()
                .map(|i| if i >= dst { i + 1 } else { i })
                .collect();
            srcs.sort_unstable();
            flows.extend(srcs.into_iter().map(|src| BackgroundFlow {
                start,
                src,
                dst,
                bytes,
            }));
        }
    }
    flows
}

fn sample_exp(rng: &mut RngStream, mean: f64) -> f64 {
    Exp::new(1.0 / mean).expect("positive mean").sample(rng.rng())
}

fn burst_bytes(config: &BackgroundTrafficConfig, rng: &mut RngStream) -> u64 {
    let raw = match config.burst {
        BurstSize::Fixed { bytes } => bytes as f64,
        BurstSize::Pareto { shape, mean_bytes } => {
            let scale = mean_bytes * (shape - 1.0) / shape;
            Pareto::new(scale, shape).expect("valid Pareto").sample(rng.rng())
        }
    };
    (raw.round() as u64).clamp(1, config.max_burst_bytes.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(rate: f64) -> BackgroundTrafficConfig {
        BackgroundTrafficConfig {
            flow_arrival_rate: rate,
            ..Default::default()
        }
    }

    #[test]
    fn zero_rate_schedules_nothing() {
        let mut rng = RngStream::new(1, "background-traffic");
        assert!(inject_background(&cfg(0.0), 16, SimTime::from_secs(10), &mut rng).is_empty());
    }

    #[test]
    fn poisson_count_within_three_sigma() {
        for seed in 0..20 {
            let mut rng = RngStream::new(seed, "background-traffic");
            let flows = inject_background(&cfg(10.0), 16, SimTime::from_secs(10), &mut rng);
            assert!((70..=130).contains(&flows.len()), "seed {seed}: {}", flows.len());
        }
    }

    #[test]
    fn schedule_is_reproducible() {
        let run = || {
            let mut rng = RngStream::new(5, "background-traffic");
            inject_background(&cfg(1e4), 8, SimTime::from_millis(50), &mut rng)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn flows_are_sorted_with_distinct_endpoints() {
        let mut rng = RngStream::new(2, "background-traffic");
        let flows = inject_background(&cfg(1e5), 4, SimTime::from_millis(10), &mut rng);
        assert!(flows.windows(2).all(|w| w[0].start <= w[1].start));
        assert!(flows.iter().all(|f| f.src != f.dst && f.src < 4 && f.dst < 4 && f.bytes >= 1));
    }

    #[test]
    fn pareto_mean_is_close() {
        let mut c = cfg(1e6);
        c.max_burst_bytes = u64::MAX;
        let mut rng = RngStream::new(3, "background-traffic");
        let flows = inject_background(&c, 16, SimTime::from_millis(200), &mut rng);
        let mean = flows.iter().map(|f| f.bytes as f64).sum::<f64>() / flows.len() as f64;
        // Shape 1.5 has infinite variance; accept a loose band.
        assert!((0.8e6..1.3e6).contains(&mean), "mean {mean}");
    }

    #[test]
    fn on_off_thins_arrivals() {
        let mut c = cfg(1e4);
        c.on_off = Some(OnOff {
            mean_on_ns: 1e6,
            mean_off_ns: 3e6,
        });
        let mut rng = RngStream::new(4, "background-traffic");
        let n = inject_background(&c, 16, SimTime::from_secs(1), &mut rng).len() as f64;
        // Expected duty cycle 25%.
        assert!((1500.0..3500.0).contains(&n), "{n}");
    }

    #[test]
    fn incast_arrivals_share_destination_and_size() {
        let mut c = cfg(1e4);
        c.fan_in = 5;
        let mut rng = RngStream::new(6, "background-traffic");
        let flows = inject_background(&c, 8, SimTime::from_millis(10), &mut rng);
        assert_eq!(flows.len() % 5, 0);
        for group in flows.chunks(5) {
            assert!(group.iter().all(|f| f.start == group[0].start && f.dst == group[0].dst));
            assert!(group.iter().all(|f| f.bytes == group[0].bytes && f.src != f.dst));
            assert!(group.windows(2).all(|w| w[0].src < w[1].src));
        }
    }

    #[test]
    fn validation_names_fields() {
        let mut c = cfg(-1.0);
        assert_eq!(c.validate(1500).unwrap_err().field(), "background.flow_arrival_rate");
        c.flow_arrival_rate = 1.0;
        c.burst = BurstSize::Fixed { bytes: 10 };
        assert_eq!(c.validate(1500).unwrap_err().field(), "background.burst.bytes");
    }
}
