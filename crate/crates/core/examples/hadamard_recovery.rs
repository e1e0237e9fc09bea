//! Dropping gradient fragments: plain zero-fill loses whole coordinates,
//! randomized Hadamard encoding spreads the loss over all of them, XOR
//! parity restores one lost fragment per group exactly.
//!
//! ```bash
//! cargo run --release --example hadamard_recovery
//! ```

use celeris_sim::losstolerance::{decode, encode, xor_decode, xor_encode, zero_fill, DropMask};
use celeris_sim::simkernel::RngStream;

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = RngStream::new(3, "hadamard-example");
    let g: Vec<f64> = (0..4096).map(|_| rng.uniform(-1.0, 1.0).unwrap()).collect();
    let fragment = 64;
    let encoded = encode(&g, 99, fragment)?;
    for p in [0.0, 0.01, 0.05, 0.2] {
        let mask = DropMask::random(encoded.fragment_count(), p, &mut rng);
        let had = decode(&encoded, &mask)?;
        let zf = zero_fill(&g, fragment, &mask);
        println!(
            "drop {:>4.1}% ({:>2} of {} fragments): mse zero-fill {:.3e}, hadamard {:.3e}, worst coordinate zero-fill {:.2}, hadamard {:.2}",
            p * 100.0,
            mask.len() - mask.received_count(),
            mask.len(),
            mse(&g, &zf),
            mse(&g, &had.values),
            g.iter().zip(&zf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
            g.iter().zip(&had.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
        );
    }

    let frags: Vec<Vec<u8>> = (0..16).map(|i| vec![i as u8; 32]).collect();
    let coded = xor_encode(&frags, 4)?;
    let mut data_ok = vec![true; frags.len()];
    data_ok[1] = false;
    data_ok[6] = false;
    data_ok[7] = false;
    let rec = xor_decode(&coded, &data_ok, &vec![true; coded.parity.len()])?;
    println!(
        "xor group 4: lost 3 fragments, recovered {}, still missing {}",
        rec.recovered, rec.residual_lost
    );
    Ok(())
}
