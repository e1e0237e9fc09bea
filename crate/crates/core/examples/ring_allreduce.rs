//! Ring AllReduce of real values through queue pairs of every design, with
//! packets of each transfer arriving in reverse order.
//!
//! ```bash
//! cargo run --release --example ring_allreduce
//! ```

use celeris_sim::collective::ring_allreduce_values;
use celeris_sim::transport::{TransportConfig, TransportKind};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let inputs: Vec<Vec<f64>> = (0..4).map(|m| (0..5000).map(|i| (m * 5000 + i) as f64).collect()).collect();
    let expected: Vec<f64> = (0..5000).map(|i| inputs.iter().map(|v| v[i]).sum()).collect();
    for kind in TransportKind::ALL {
        let out = ring_allreduce_values(&inputs, kind, &TransportConfig::default(), true)?;
        let exact = out.iter().all(|v| *v == expected);
        println!("{:<10} 4 members, 5000 values, reversed wire: every member exact = {exact}", kind.name());
    }
    Ok(())
}
