//! Train the two-view encoder on synthetic data and evaluate the held-out
//! pairs.
//!
//! cargo run --release --example train_encoder

use crossview::datasets::{generate_synthetic, SynthConfig};
use crossview::sampler::Strategy;
use crossview::trainer::{evaluate_holdout, train, TrainConfig};

fn main() -> crossview::Result<()> {
    let data = generate_synthetic(&SynthConfig::default())?;
    let mut cfg = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    cfg.sampler.strategy = Strategy::GpsThenDss;

    let run = train(&data.manifest, &data.query_features, &data.reference_features, &cfg)?;
    for h in run.history.iter().step_by(4) {
        println!("epoch {:>2}  loss {:.4}  lr {:.2e}  held-out R@1 {:.3}", h.epoch, h.loss, h.lr, h.r1);
    }
    println!("learned temperature {:.4}", (-run.logit_scale).exp());

    let report = evaluate_holdout(&run, &data.manifest, &data.query_features, &data.reference_features)?;
    println!("{}", report.to_json());
    Ok(())
}
