//! Sweeps the background flow arrival rate and reports step-time tails.
//!
//! ```bash
//! cargo run --release --example sweep_background
//! ```

use celeris_sim::experiment::{sweep, ScenarioConfig, SeedPolicy};
use celeris_sim::fabric::BurstSize;
use celeris_sim::transport::TransportKind;
use serde_json::json;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut base = ScenarioConfig::new("background", TransportKind::RoceGbn);
    base.topology.pfc_enabled = true;
    base.collective.rounds = 20;
    base.background.burst = BurstSize::Fixed { bytes: 500_000 };
    base.background.fan_in = 8;
    let values = [json!(0.0), json!(300.0), json!(1000.0), json!(3000.0)];
    let points = sweep(&base, "background.flow_arrival_rate", &values, SeedPolicy::Same)?;
    for p in points {
        let s = &p.report.summary;
        println!(
            "rate {:>5}/s: median {:>6} ns  p99 {:>7} ns  p99/median {:.2}",
            p.value, s.median_ns, s.p99_ns, s.p99_over_median
        );
    }
    Ok(())
}
