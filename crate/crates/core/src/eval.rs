//! Retrieval metrics over a query x reference similarity matrix.
//!
//! References are ranked by descending similarity; equal similarities rank
//! the lower reference index first.

use std::collections::{BTreeMap, HashMap, HashSet};

use ndarray::{ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{EmbeddingTable, SampleRecord};
use crate::error::{Error, Result};
use crate::simsearch::{cosine_rows, normalize_rows};

pub const RECALL_CUTOFFS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub recall_at: BTreeMap<usize, f64>,
    pub recall_at_1pct: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hit_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_ap: Option<f64>,
    pub n_queries: usize,
    pub n_references: usize,
}

impl RetrievalReport {
    pub fn r1(&self) -> f64 {
        self.recall_at[&1]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialises")
    }
}

/// True when reference `j` (score `s_j`) ranks ahead of reference `p`.
#[inline]
fn ranks_ahead(s_j: f64, j: usize, s_p: f64, p: usize) -> bool {
    s_j > s_p || (s_j == s_p && j < p)
}

/// 0-based rank of the best-placed positive, skipping `masked` references.
fn best_positive_rank(row: ArrayView1<'_, f64>, positives: &[usize], masked: &HashSet<usize>) -> usize {
    positives
        .iter()
        .map(|&p| {
            let s_p = row[p];
            row.iter()
                .enumerate()
                .filter(|&(j, &s_j)| !masked.contains(&j) && ranks_ahead(s_j, j, s_p, p))
                .count()
        })
        .min()
        .expect("positives checked non-empty")
}

fn check_inputs(sim: &ArrayView2<'_, f64>, positives: &[Vec<usize>]) -> Result<()> {
    if positives.len() != sim.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} positive sets for {} queries",
            positives.len(),
            sim.nrows()
        )));
    }
    for (q, set) in positives.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::Invalid(format!("query {q} has no positives")));
        }
        if let Some(&p) = set.iter().find(|&&p| p >= sim.ncols()) {
            return Err(Error::Invalid(format!(
                "query {q}: positive {p} outside {} references",
                sim.ncols()
            )));
        }
    }
    Ok(())
}

fn positive_ranks(
    sim: ArrayView2<'_, f64>,
    positives: &[Vec<usize>],
    masks: Option<&[HashSet<usize>]>,
) -> Vec<usize> {
    let empty = HashSet::new();
    (0..sim.nrows())
        .into_par_iter()
        .map(|q| {
            let mask = masks.map_or(&empty, |m| &m[q]);
            best_positive_rank(sim.row(q), &positives[q], mask)
        })
        .collect()
}

fn fraction_below(ranks: &[usize], k: usize) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    ranks.iter().filter(|&&r| r < k).count() as f64 / ranks.len() as f64
}

/// Fraction of queries with a positive among the top `k` references.
pub fn recall_at_k(sim: ArrayView2<'_, f64>, positives: &[Vec<usize>], k: usize) -> Result<f64> {
    check_inputs(&sim, positives)?;
    if k == 0 || k > sim.ncols() {
        return Err(Error::KOutOfRange { k, max: sim.ncols() });
    }
    Ok(fraction_below(&positive_ranks(sim, positives, None), k))
}

/// Cut-off used for recall at `pct` percent of `n_references`.
pub fn percent_cutoff(n_references: usize, pct: f64) -> Result<usize> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::Invalid(format!("percentage {pct} outside (0, 100]")));
    }
    // whole percentages in integer arithmetic: 1% of 8884 is 89
    let k = if pct.fract() == 0.0 {
        (n_references * pct as usize).div_ceil(100)
    } else {
        (pct / 100.0 * n_references as f64).ceil() as usize
    };
    Ok(k.clamp(1, n_references.max(1)))
}

pub fn recall_at_percent(sim: ArrayView2<'_, f64>, positives: &[Vec<usize>], pct: f64) -> Result<f64> {
    recall_at_k(sim, positives, percent_cutoff(sim.ncols(), pct)?)
}

/// Recall@1 after removing each query's semi-positives from its ranking.
pub fn hit_rate(
    sim: ArrayView2<'_, f64>,
    positives: &[Vec<usize>],
    semi_positives: &[Vec<usize>],
) -> Result<f64> {
    check_inputs(&sim, positives)?;
    if semi_positives.len() != positives.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} semi-positive sets for {} queries",
            semi_positives.len(),
            positives.len()
        )));
    }
    let masks: Vec<HashSet<usize>> = semi_positives
        .iter()
        .map(|s| s.iter().copied().collect())
        .collect();
    for (q, (mask, pos)) in masks.iter().zip(positives).enumerate() {
        if let Some(p) = pos.iter().find(|p| mask.contains(p)) {
            return Err(Error::Invalid(format!(
                "query {q}: reference {p} is both positive and semi-positive"
            )));
        }
    }
    Ok(fraction_below(&positive_ranks(sim, positives, Some(&masks)), 1))
}

/// Un-interpolated average precision of a ranked list.
pub fn average_precision(ranking: &[usize], positives: &[usize]) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::Invalid("average precision needs positives".into()));
    }
    let pos: HashSet<usize> = positives.iter().copied().collect();
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, item) in ranking.iter().enumerate() {
        if pos.contains(item) {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Ok(sum / pos.len() as f64)
}

/// Reference indices of one similarity row, best first.
pub fn rank_references(row: ArrayView1<'_, f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_unstable_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx
}

pub fn mean_average_precision(sim: ArrayView2<'_, f64>, positives: &[Vec<usize>]) -> Result<f64> {
    check_inputs(&sim, positives)?;
    let aps: Vec<f64> = (0..sim.nrows())
        .into_par_iter()
        .map(|q| average_precision(&rank_references(sim.row(q)), &positives[q]))
        .collect::<Result<_>>()?;
    Ok(aps.iter().sum::<f64>() / aps.len().max(1) as f64)
}

/// Positive and semi-positive reference rows per query row, resolved through
/// the manifest by id. Links to ids absent from the reference table are
/// dropped.
pub fn resolve_targets(
    queries: &EmbeddingTable,
    references: &EmbeddingTable,
    manifest: &[SampleRecord],
) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    let by_id: HashMap<&str, &SampleRecord> = manifest.iter().map(|r| (r.id.as_str(), r)).collect();
    let ref_row: HashMap<&str, usize> = references
        .row_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let lookup = |ids: &[String]| -> Vec<usize> {
        ids.iter().filter_map(|id| ref_row.get(id.as_str()).copied()).collect()
    };
    let mut positives = Vec::with_capacity(queries.count());
    let mut semis = Vec::with_capacity(queries.count());
    for id in queries.row_ids() {
        let rec = by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Invalid(format!("query row `{id}` not in manifest")))?;
        let pos = lookup(&rec.positives);
        if pos.is_empty() {
            return Err(Error::Invalid(format!(
                "query `{id}` has no positive among the references"
            )));
        }
        positives.push(pos);
        semis.push(lookup(&rec.semi_positives));
    }
    Ok((positives, semis))
}

/// Every applicable metric for a retrieval split.
///
/// Hit rate is reported when any query has semi-positives; mean AP when any
/// query has several positives or some references are nobody's positive.
pub fn evaluate(
    queries: &EmbeddingTable,
    references: &EmbeddingTable,
    manifest: &[SampleRecord],
) -> Result<RetrievalReport> {
    let (positives, semis) = resolve_targets(queries, references, manifest)?;
    let q = normalize_rows(queries.to_f64().view())?;
    let r = normalize_rows(references.to_f64().view())?;
    let sim = cosine_rows(q.view(), r.view())?;
    report_from_similarity(sim.view(), &positives, &semis)
}

pub fn report_from_similarity(
    sim: ArrayView2<'_, f64>,
    positives: &[Vec<usize>],
    semi_positives: &[Vec<usize>],
) -> Result<RetrievalReport> {
    check_inputs(&sim, positives)?;
    let n_r = sim.ncols();
    let ranks = positive_ranks(sim, positives, None);
    let recall_at = RECALL_CUTOFFS
        .iter()
        .map(|&k| (k, fraction_below(&ranks, k.min(n_r))))
        .collect();
    let recall_at_1pct = fraction_below(&ranks, percent_cutoff(n_r, 1.0)?);

    let hit_rate = if semi_positives.iter().any(|s| !s.is_empty()) {
        Some(self::hit_rate(sim, positives, semi_positives)?)
    } else {
        None
    };
    let mut covered = vec![false; n_r];
    for &p in positives.iter().flatten() {
        covered[p] = true;
    }
    let mean_ap = if positives.iter().any(|p| p.len() > 1) || covered.iter().any(|c| !c) {
        Some(mean_average_precision(sim, positives)?)
    } else {
        None
    };
    Ok(RetrievalReport {
        recall_at,
        recall_at_1pct,
        hit_rate,
        mean_ap,
        n_queries: sim.nrows(),
        n_references: n_r,
    })
}
