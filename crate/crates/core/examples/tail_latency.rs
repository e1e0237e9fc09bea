//! Tail latency of ring AllReduce under bursty incast: a reliable RoCE
//! baseline against the best-effort transport with a static step deadline
//! of baseline median + one standard deviation.
//!
//! ```bash
//! cargo run --release --example tail_latency -- [rounds]
//! ```

use std::path::Path;

use celeris_sim::experiment::{simulate, ScenarioConfig, StaticSource, Summary};
use celeris_sim::simkernel::SimTime;
use celeris_sim::timeoutctl::static_timeout_from_baseline;

fn print(s: &Summary) {
    println!(
        "{:<10} median {:>7} ns  p95 {:>7} ns  p99 {:>7} ns  p99/median {:>5.2}  loss {:.3}%  deadline steps {}",
        s.transport.name(),
        s.median_ns,
        s.p95_ns,
        s.p99_ns,
        s.p99_over_median,
        s.mean_loss_fraction * 100.0,
        s.deadline_steps
    );
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let rounds: Option<u32> = std::env::args().nth(1).map(|a| a.parse()).transpose()?;
    let mut roce = ScenarioConfig::load(&configs.join("incast_roce.json"))?;
    let mut celeris = ScenarioConfig::load(&configs.join("incast_celeris.json"))?;
    if let Some(r) = rounds {
        roce.collective.rounds = r;
        celeris.collective.rounds = r;
    }

    let base = simulate(&roce)?;
    print(&base.summary);
    let durations: Vec<SimTime> = base.steps.iter().map(|s| SimTime(s.duration_ns)).collect();
    let deadline = static_timeout_from_baseline(&durations)?;
    println!("static deadline (median + sigma): {} ns", deadline.0);

    celeris.timeout.static_source = Some(StaticSource::TimeoutNs(deadline.0));
    let run = simulate(&celeris)?;
    print(&run.summary);
    println!(
        "p99 reduction {:.2}x, median shift {:+.1}%",
        base.summary.p99_ns as f64 / run.summary.p99_ns as f64,
        (run.summary.median_ns as f64 / base.summary.median_ns as f64 - 1.0) * 100.0
    );
    Ok(())
}
