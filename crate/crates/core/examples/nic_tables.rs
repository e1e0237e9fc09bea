//! Per-QP context size, how many QPs fit in on-chip SRAM, and the soft-error
//! MTBF each design implies.
//!
//! ```bash
//! cargo run --release --example nic_tables
//! ```

use celeris_sim::experiment::{tables, TablesConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = TablesConfig::default();
    println!("SRAM budget {} B, {} QPs for MTBF", cfg.sram_budget_bytes, cfg.qp_count);
    for r in tables(&cfg)? {
        println!(
            "{:<10} context {:>3} B  capacity {:>6} QPs  MTBF {:>6.2} h",
            r.transport.name(),
            r.context_bytes,
            r.qp_capacity,
            r.mtbf_hours
        );
    }
    Ok(())
}
