//! Exact cosine top-K search over unit-normalised embeddings.
//!
//! cargo run --example similarity_search

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crossview::simsearch::{cosine_rows, normalize_rows, visual_topk_rows};

fn main() -> crossview::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let raw: Array2<f64> = Array2::from_shape_simple_fn((1000, 32), || rng.sample(StandardNormal));
    let q = normalize_rows(raw.view())?;
    let noisy = &raw + &Array2::from_shape_simple_fn((1000, 32), || 0.3 * rng.sample::<f64, _>(StandardNormal));
    let r = normalize_rows(noisy.view())?;

    let sim = cosine_rows(q.view(), r.view())?;
    println!("own-positive similarity of query 0: {:.3}", sim[[0, 0]]);

    let pools = visual_topk_rows(q.view(), r.view(), 5)?;
    let p = &pools[0];
    println!("hardest negatives of query 0: {:?}", p.neighbor_indices);
    println!("their similarities: {:?}", p.scores.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>());
    Ok(())
}
