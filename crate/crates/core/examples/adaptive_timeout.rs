//! The adaptive step deadline tracks a shift in step times, and members
//! agree on the median of their local values.
//!
//! ```bash
//! cargo run --release --example adaptive_timeout
//! ```

use celeris_sim::collective::{FinalizedBy, StepResult};
use celeris_sim::simkernel::{RngStream, SimTime};
use celeris_sim::timeoutctl::{coordinate, AdaptiveConfig, TimeoutProfile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = AdaptiveConfig { beta: 0.2, initial_timeout_ns: 200_000, ..AdaptiveConfig::default() };
    let mut rng = RngStream::new(7, "adaptive-example");
    let mut members: Vec<TimeoutProfile> = (0..8).map(|_| TimeoutProfile::adaptive(0, &cfg)).collect();
    for step in 0..60u64 {
        // Steps take about 40 us, then 80 us from step 30 on.
        let mean = if step < 30 { 40_000.0 } else { 80_000.0 };
        for (node, p) in members.iter_mut().enumerate() {
            let d = (mean * rng.uniform(0.9, 1.1)?) as u64;
            p.update_timeout(&StepResult {
                step_id: step,
                node,
                bytes_expected: 1000,
                bytes_received: 1000,
                start: SimTime::ZERO,
                duration: SimTime(d),
                finalized_by: FinalizedBy::Complete,
            });
        }
        let local: Vec<SimTime> = members.iter().map(|p| p.current_timeout).collect();
        let agreed = coordinate(&local)?;
        for p in &mut members {
            p.adopt(agreed);
        }
        if step % 5 == 4 {
            println!("step {step:>2}: true mean {:>6.0} ns, agreed deadline {:>6} ns", mean, agreed.0);
        }
    }
    Ok(())
}
