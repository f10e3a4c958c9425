//! Recall@k, recall@1%, hit rate, and average precision on a hand-built
//! similarity matrix.
//!
//! cargo run --example retrieval_metrics

use ndarray::array;

use crossview::eval::{average_precision, hit_rate, mean_average_precision, recall_at_k, report_from_similarity};

fn main() -> crossview::Result<()> {
    // three queries, five references; query i's positive is reference i
    let sim = array![
        [0.9, 0.1, 0.2, 0.3, 0.0],
        [0.7, 0.6, 0.1, 0.8, 0.2],
        [0.5, 0.4, 0.3, 0.2, 0.9],
    ];
    let positives = vec![vec![0], vec![1], vec![2]];
    // reference 3 partly shows query 1's scene
    let semi = vec![vec![], vec![3], vec![]];

    println!("R@1 {:.3}", recall_at_k(sim.view(), &positives, 1)?);
    println!("R@3 {:.3}", recall_at_k(sim.view(), &positives, 3)?);
    println!("hit rate {:.3}", hit_rate(sim.view(), &positives, &semi)?);
    println!("mAP {:.3}", mean_average_precision(sim.view(), &positives)?);
    println!("AP of ranking [a, x, b] with positives a, b: {:.4}", average_precision(&[0, 9, 1], &[0, 1])?);
    println!("{}", report_from_similarity(sim.view(), &positives, &semi)?.to_json());
    Ok(())
}
