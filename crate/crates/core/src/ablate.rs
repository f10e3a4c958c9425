//! Strategy ablation: every sampling strategy trained on the same data over
//! several seeds, summarised by the median of each retrieval metric.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::datasets::{encode_emb1, generate_synthetic, manifest_jsonl, SynthData};
use crate::error::Result;
use crate::eval::RetrievalReport;
use crate::sampler::Strategy;
use crate::trainer::{evaluate_holdout, train, Objective, TrainConfig};

/// One trained run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub strategy: Strategy,
    pub objective: Objective,
    pub seed: u64,
    pub report: RetrievalReport,
}

/// Medians over seeds for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub strategy: Strategy,
    pub objective: Objective,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub r1pct: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hit_rate: Option<f64>,
    pub per_seed_r1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub dataset_hash: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, strategy: Strategy) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.strategy == strategy)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,objective,r1,r5,r10,r1pct,hit_rate,seeds,dataset_hash\n");
        for r in &self.rows {
            let hit = r.hit_rate.map(|h| format!("{h:.6}")).unwrap_or_default();
            out += &format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{},{},{}\n",
                r.strategy,
                r.objective.name(),
                r.r1,
                r.r5,
                r.r10,
                r.r1pct,
                hit,
                self.seeds.len(),
                self.dataset_hash
            );
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serialises")
    }
}

/// Median of a non-empty slice; mean of the middle two for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// SHA-256 over the manifest lines and both feature tables.
pub fn dataset_hash(data: &SynthData) -> String {
    let mut h = Sha256::new();
    h.update(manifest_jsonl(&data.manifest));
    h.update(encode_emb1(&data.query_features));
    h.update(encode_emb1(&data.reference_features));
    hex::encode(h.finalize())
}

/// Train config for one ablation cell: the seed offsets both the
/// initialisation and the sampler streams.
pub fn cell_config(base: &TrainConfig, strategy: Strategy, objective: Objective, seed: u64) -> TrainConfig {
    let mut c = base.clone();
    c.sampler.strategy = strategy;
    c.objective = objective;
    c.seed = base.seed.wrapping_add(seed);
    c.sampler.seed = base.sampler.seed.wrapping_add(seed);
    c
}

/// Trains and evaluates every `(strategy, objective, seed)` cell on `data`.
pub fn run_cells(
    data: &SynthData,
    base: &TrainConfig,
    strategies: &[Strategy],
    objectives: &[Objective],
    seeds: &[u64],
) -> Result<Vec<SeedResult>> {
    let cells: Vec<(Strategy, Objective, u64)> = strategies
        .iter()
        .flat_map(|&s| objectives.iter().flat_map(move |&o| seeds.iter().map(move |&seed| (s, o, seed))))
        .collect();
    cells
        .into_par_iter()
        .map(|(strategy, objective, seed)| {
            let cfg = cell_config(base, strategy, objective, seed);
            let run = train(&data.manifest, &data.query_features, &data.reference_features, &cfg)?;
            let report = evaluate_holdout(&run, &data.manifest, &data.query_features, &data.reference_features)?;
            Ok(SeedResult {
                strategy,
                objective,
                seed,
                report,
            })
        })
        .collect()
}

/// Groups results by `(strategy, objective)` in first-seen order.
pub fn summarise(results: &[SeedResult]) -> Vec<AblationRow> {
    let mut keys: Vec<(Strategy, Objective)> = Vec::new();
    for r in results {
        if !keys.contains(&(r.strategy, r.objective)) {
            keys.push((r.strategy, r.objective));
        }
    }
    keys.into_iter()
        .map(|(strategy, objective)| {
            let group: Vec<&RetrievalReport> = results
                .iter()
                .filter(|r| r.strategy == strategy && r.objective == objective)
                .map(|r| &r.report)
                .collect();
            let med = |f: &dyn Fn(&RetrievalReport) -> f64| median(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            let hits: Option<Vec<f64>> = group.iter().map(|r| r.hit_rate).collect();
            AblationRow {
                strategy,
                objective,
                r1: med(&|r| r.recall_at[&1]),
                r5: med(&|r| r.recall_at[&5]),
                r10: med(&|r| r.recall_at[&10]),
                r1pct: med(&|r| r.recall_at_1pct),
                hit_rate: hits.map(|h| median(&h)),
                per_seed_r1: group.iter().map(|r| r.r1()).collect(),
            }
        })
        .collect()
}

/// Generates the synthetic dataset once and trains all four strategies on
/// it with seeds `0..n_seeds`.
pub fn run_ablate(cfg: &Config, n_seeds: usize) -> Result<AblationTable> {
    cfg.validate()?;
    let data = generate_synthetic(&cfg.synth)?;
    let seeds: Vec<u64> = (0..n_seeds as u64).collect();
    let results = run_cells(&data, &cfg.train, &Strategy::ALL, &[cfg.train.objective], &seeds)?;
    Ok(AblationTable {
        dataset_hash: dataset_hash(&data),
        config_hash: cfg.hash(),
        seeds,
        rows: summarise(&results),
    })
}
