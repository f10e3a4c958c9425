//! Row normalisation, cosine similarity, and exact top-K visual neighbour
//! search. All similarity arithmetic is done in f64.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::EmbeddingTable;
use crate::error::{Error, Result};
use crate::geo::select_top;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    /// scores are distances in metres, ascending
    Geographic,
    /// scores are cosine similarities, descending
    Visual,
}

/// Ordered hard-negative candidates for one anchor pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborPool {
    pub anchor_index: usize,
    pub neighbor_indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub kind: PoolKind,
}

impl NeighborPool {
    pub fn len(&self) -> usize {
        self.neighbor_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbor_indices.is_empty()
    }
}

/// Scales every row of `rows` to unit L2 norm.
pub fn normalize_rows(rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let mut out = rows.to_owned();
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("embedding row"));
        }
        if norm == 0.0 {
            return Err(Error::ZeroNorm { row: i });
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(out)
}

pub fn l2_normalize(table: &EmbeddingTable) -> Result<EmbeddingTable> {
    let rows = normalize_rows(table.to_f64().view())?;
    EmbeddingTable::from_rows(rows.view(), table.row_ids().to_vec())
}

/// `n_q x n_r` matrix of dot products between unit rows.
pub fn cosine_rows(queries: ArrayView2<'_, f64>, references: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if queries.ncols() != references.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "query dim {} vs reference dim {}",
            queries.ncols(),
            references.ncols()
        )));
    }
    let n_r = references.nrows();
    let rows: Vec<Vec<f64>> = (0..queries.nrows())
        .into_par_iter()
        .map(|i| {
            let q = queries.row(i);
            references.axis_iter(Axis(0)).map(|r| q.dot(&r)).collect()
        })
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(Array2::from_shape_vec((queries.nrows(), n_r), flat).expect("row lengths equal n_r"))
}

pub fn cosine_matrix(queries: &EmbeddingTable, references: &EmbeddingTable) -> Result<Array2<f64>> {
    cosine_rows(queries.to_f64().view(), references.to_f64().view())
}

/// For query `i`, the `k` most similar references other than reference `i`
/// (its own positive), descending, ties broken by lower index.
pub fn visual_topk_rows(
    queries: ArrayView2<'_, f64>,
    references: ArrayView2<'_, f64>,
    k: usize,
) -> Result<Vec<NeighborPool>> {
    let max = references.nrows().saturating_sub(1);
    if k == 0 || k > max {
        return Err(Error::KOutOfRange { k, max });
    }
    if queries.ncols() != references.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "query dim {} vs reference dim {}",
            queries.ncols(),
            references.ncols()
        )));
    }
    let pools = (0..queries.nrows())
        .into_par_iter()
        .map(|i| {
            let q = queries.row(i);
            let scored: Vec<(f64, usize)> = references
                .axis_iter(Axis(0))
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, r)| (q.dot(&r), j))
                .collect();
            let top = select_top(scored, k, |x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
            NeighborPool {
                anchor_index: i,
                neighbor_indices: top.iter().map(|t| t.1).collect(),
                scores: top.iter().map(|t| t.0).collect(),
                kind: PoolKind::Visual,
            }
        })
        .collect();
    Ok(pools)
}

pub fn visual_topk(
    queries: &EmbeddingTable,
    references: &EmbeddingTable,
    k: usize,
) -> Result<Vec<NeighborPool>> {
    visual_topk_rows(queries.to_f64().view(), references.to_f64().view(), k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn table(rows: Array2<f64>) -> EmbeddingTable {
        let ids = (0..rows.nrows()).map(|i| i.to_string()).collect();
        EmbeddingTable::from_rows(rows.view(), ids).unwrap()
    }

    fn random_unit(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng));
        normalize_rows(raw.view()).unwrap()
    }

    #[test]
    fn three_four_five() {
        let t = l2_normalize(&table(array![[3.0, 4.0]])).unwrap();
        assert_eq!(t.row(0), &[0.6f32, 0.8f32]);
    }

    #[test]
    fn unit_rows_unchanged() {
        let rows = random_unit(10, 6, 1);
        let t = table(rows);
        let n = l2_normalize(&t).unwrap();
        for (a, b) in t.data().iter().zip(n.data()) {
            assert!((a - b).abs() <= 1e-7);
        }
    }

    #[test]
    fn zero_row_reports_index() {
        let t = table(array![[1.0, 0.0], [0.0, 0.0]]);
        assert!(matches!(l2_normalize(&t), Err(Error::ZeroNorm { row: 1 })));
    }

    #[test]
    fn analytic_cosines() {
        let s = 0.5f64.sqrt();
        let q = array![[1.0, 0.0]];
        let r = array![[1.0, 0.0], [0.0, 1.0], [s, s]];
        let m = cosine_rows(q.view(), r.view()).unwrap();
        assert_eq!(m[[0, 0]], 1.0);
        assert_eq!(m[[0, 1]], 0.0);
        assert!((m[[0, 2]] - 0.7071068).abs() < 1e-7);
    }

    #[test]
    fn dim_mismatch() {
        let q = array![[1.0, 0.0]];
        let r = array![[1.0, 0.0, 0.0]];
        assert!(matches!(cosine_rows(q.view(), r.view()), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn self_is_excluded() {
        let rows = random_unit(12, 5, 2);
        let pools = visual_topk_rows(rows.view(), rows.view(), 1).unwrap();
        let sims = cosine_rows(rows.view(), rows.view()).unwrap();
        for (i, p) in pools.iter().enumerate() {
            assert_ne!(p.neighbor_indices[0], i);
            let best = (0..12)
                .filter(|&j| j != i)
                .max_by(|&a, &b| sims[[i, a]].total_cmp(&sims[[i, b]]).then(b.cmp(&a)))
                .unwrap();
            assert_eq!(p.neighbor_indices[0], best);
        }
    }

    #[test]
    fn duplicate_rows_tie_by_index() {
        let r = array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]];
        let q = array![[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
        let pools = visual_topk_rows(q.view(), r.view(), 2).unwrap();
        assert_eq!(pools[0].neighbor_indices, vec![1, 2]);
        assert_eq!(pools[1].neighbor_indices, vec![0, 2]);
    }

    #[test]
    fn k_out_of_range() {
        let rows = random_unit(4, 3, 0);
        assert!(visual_topk_rows(rows.view(), rows.view(), 4).is_err());
        assert!(visual_topk_rows(rows.view(), rows.view(), 0).is_err());
    }

    #[test]
    fn symmetric_with_unit_diagonal() {
        let a = random_unit(30, 8, 9);
        let m = cosine_rows(a.view(), a.view()).unwrap();
        for i in 0..30 {
            assert!((m[[i, i]] - 1.0).abs() < 1e-6);
            for j in 0..30 {
                assert!((m[[i, j]] - m[[j, i]]).abs() < 1e-6);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn topk_matches_full_sort(n in 2usize..512, d in 1usize..8, seed in any::<u64>(), frac in 0.0f64..1.0) {
                let q = random_unit(n, d, seed);
                let r = random_unit(n, d, seed ^ 0x9e37);
                let k = 1 + ((n - 2) as f64 * frac) as usize;
                let pools = visual_topk_rows(q.view(), r.view(), k).unwrap();
                for (i, pool) in pools.iter().enumerate() {
                    let mut all: Vec<(f64, usize)> = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| (q.row(i).iter().zip(r.row(j)).map(|(a, b)| a * b).sum::<f64>(), j))
                        .collect();
                    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                    let expected: Vec<usize> = all[..k].iter().map(|x| x.1).collect();
                    prop_assert_eq!(&pool.neighbor_indices, &expected);
                    prop_assert!(pool.scores.windows(2).all(|w| w[0] >= w[1]));
                }
            }
        }
    }
}
