//! Symmetric InfoNCE and the triplet baselines on a small batch.
//!
//! cargo run --example contrastive_loss

use ndarray::array;

use crossview::losses::{info_nce, soft_margin_triplet_loss, triplet_loss, Direction, LossConfig, DEFAULT_TRIPLET_MARGIN};

fn main() -> crossview::Result<()> {
    let q = array![[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]];
    let r = array![[0.8, 0.6], [0.0, 1.0], [0.6, 0.8]];

    for direction in [Direction::QueryToRef, Direction::RefToQuery, Direction::Symmetric] {
        let cfg = LossConfig {
            direction,
            ..LossConfig::default()
        };
        let out = info_nce(q.view(), r.view(), &cfg)?;
        println!("{direction:?}: loss {:.6}, dL/dlogit_scale {:+.6}", out.loss, out.grad_logit_scale);
    }

    let cfg = LossConfig::default();
    println!("temperature {:.4} (logit scale {:.4})", cfg.temperature(), cfg.logit_scale);

    let uniform = ndarray::Array2::from_elem((8, 3), 0.5);
    let out = info_nce(uniform.view(), uniform.view(), &cfg)?;
    println!("uniform logits, N=8: {:.12} = ln 8 = {:.12}", out.loss, 8f64.ln());

    let negatives = array![[0.0, 1.0], [1.0, 0.0], [0.8, 0.6]];
    let hinge = triplet_loss(q.view(), r.view(), negatives.view(), DEFAULT_TRIPLET_MARGIN)?;
    let soft = soft_margin_triplet_loss(q.view(), r.view(), negatives.view())?;
    println!("triplet (m = {DEFAULT_TRIPLET_MARGIN}): {:.6}, soft-margin: {:.6}", hinge.loss, soft.loss);
    Ok(())
}
