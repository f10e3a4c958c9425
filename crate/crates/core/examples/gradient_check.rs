//! Compare backpropagated gradients of encoder + loss with central
//! finite differences.
//!
//! cargo run --example gradient_check

use crossview::trainer::{gradcheck, TrainConfig};

fn main() -> crossview::Result<()> {
    for shared in [true, false] {
        for eps in [0.0, 0.1] {
            let mut cfg = TrainConfig {
                shared_weights: shared,
                ..TrainConfig::default()
            };
            cfg.loss.label_smoothing = eps;
            let rep = gradcheck(&cfg, 8, 16, 32, 8)?;
            println!("shared {shared:<5} label smoothing {eps}: max relative error {:.2e}", rep.max_rel_error);
            for (name, err) in &rep.per_param {
                println!("    {name:<14} {err:.2e}");
            }
        }
    }
    Ok(())
}
