//! Data-parallel training where each worker's gradient fragments may be
//! dropped on the way to the average.
//!
//! ```bash
//! cargo run --release --example ml_drop
//! ```

use celeris_sim::losstolerance::{train_with_drops, ModelKind, RecoveryMode, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for model in [ModelKind::Logistic, ModelKind::Mlp] {
        for mode in RecoveryMode::ALL {
            for p in [0.0, 0.05, 0.2] {
                let cfg = TrainConfig { model, mode, drop_fraction: p, ..TrainConfig::default() };
                let r = train_with_drops(&cfg)?;
                let m = r.mean_paired_mse();
                println!(
                    "{model:?} {:<9} drop {:>4.1}%: accuracy {:.3}, gradient mse zero-fill {:.2e} hadamard {:.2e} xor {:.2e}, unrecovered {}/{}",
                    mode.name(),
                    p * 100.0,
                    r.final_accuracy(),
                    m.zero_fill,
                    m.hadamard,
                    m.xor,
                    r.residual_lost,
                    r.fragments_sent
                );
            }
        }
    }
    Ok(())
}
