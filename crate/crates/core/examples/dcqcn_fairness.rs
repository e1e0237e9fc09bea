//! k long flows converge on one 100 Gb/s host link. DCQCN shares it and
//! PFC keeps the fabric lossless.
//!
//! ```bash
//! cargo run --release --example dcqcn_fairness
//! ```

use celeris_sim::fabric::ClosConfig;
use celeris_sim::sim::{FlowSpec, World};
use celeris_sim::simkernel::SimTime;
use celeris_sim::transport::TransportConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let warmup = SimTime::from_millis(20);
    let end = SimTime::from_millis(60);
    for k in [2usize, 4, 8] {
        let topo = ClosConfig { pfc_enabled: true, ..ClosConfig::default() };
        let mut w = World::new(&topo, &TransportConfig::default(), 1)?;
        for i in 0..k {
            w.add_flow(FlowSpec { start: SimTime::ZERO, src: 4 + i, dst: 0, bytes: u64::MAX / 2 });
        }
        w.run_until(warmup);
        let before: Vec<u64> = w.flows().iter().map(|f| f.delivered).collect();
        w.run_until(end);
        let secs = (end - warmup).as_secs_f64();
        let gbps: Vec<String> = w
            .flows()
            .iter()
            .zip(before)
            .map(|(f, b)| format!("{:.1}", (f.delivered - b) as f64 * 8.0 / secs / 1e9))
            .collect();
        let ports = w.port_stats();
        println!(
            "k={k}: fair share {:.1} Gb/s, measured [{}] Gb/s, data drops {}, pause {} us",
            topo.link_bandwidth_bps / k as f64 / 1e9,
            gbps.join(", "),
            ports.iter().map(|p| p.data_drops).sum::<u64>(),
            ports.iter().map(|p| p.pause_ns).sum::<u64>() / 1000
        );
    }
    Ok(())
}
