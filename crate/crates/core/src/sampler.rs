//! Epoch batch planning with hard-negative pools.
//!
//! Four strategies are supported: plain shuffling, geographic neighbour
//! pools (GPS), visual-similarity pools (DSS), and GPS for the first
//! `gps_epochs` epochs followed by DSS. Pooled batches are built greedily:
//! take the next unused anchor in a seeded shuffle, add the picks from its
//! pool (the `k/2` nearest plus `k/2` drawn at random from the rest of the
//! pool), and repeat with further anchors until the batch is full. A pair
//! already placed this epoch is never placed again, and a batch never holds
//! two pairs of the same class.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{EmbeddingTable, SampleRecord};
use crate::error::{Error, Result};
use crate::geo::{geo_topk, GeoConfig};
use crate::simsearch::{visual_topk, NeighborPool, PoolKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Gps,
    Dss,
    GpsThenDss,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Random,
        Strategy::Gps,
        Strategy::Dss,
        Strategy::GpsThenDss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Gps => "gps",
            Strategy::Dss => "dss",
            Strategy::GpsThenDss => "gps_then_dss",
        }
    }

    /// The single-phase strategy in effect at `epoch`.
    pub fn resolve(self, epoch: usize, gps_epochs: usize) -> Strategy {
        match self {
            Strategy::GpsThenDss if epoch < gps_epochs => Strategy::Gps,
            Strategy::GpsThenDss => Strategy::Dss,
            s => s,
        }
    }

    pub fn pool_kind(self) -> Option<PoolKind> {
        match self {
            Strategy::Random => None,
            Strategy::Gps => Some(PoolKind::Geographic),
            Strategy::Dss | Strategy::GpsThenDss => Some(PoolKind::Visual),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub batch_size: usize,
    /// K: neighbours kept per anchor.
    pub pool_size: usize,
    /// k: neighbours placed per anchor; half nearest, half random.
    pub picks_per_anchor: usize,
    /// e: epochs between visual pool refreshes.
    pub refresh_every: usize,
    pub gps_epochs: usize,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            batch_size: 128,
            pool_size: 128,
            picks_per_anchor: 64,
            refresh_every: 4,
            gps_epochs: 4,
            strategy: Strategy::GpsThenDss,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.picks_per_anchor;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("sampler.batch_size must be >= 1".into()));
        }
        if k < 2 || k % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "sampler.picks_per_anchor must be even and >= 2, got {k}"
            )));
        }
        if self.pool_size < k {
            return Err(Error::InvalidConfig(format!(
                "sampler.pool_size ({}) must be >= picks_per_anchor ({k})",
                self.pool_size
            )));
        }
        if self.refresh_every == 0 {
            return Err(Error::InvalidConfig("sampler.refresh_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Also checks `pool_size <= n_references - 1`.
    pub fn validate_for(&self, n_references: usize) -> Result<()> {
        self.validate()?;
        if self.strategy != Strategy::Random && self.pool_size + 1 > n_references {
            return Err(Error::InvalidConfig(format!(
                "sampler.pool_size ({}) needs at least {} references, have {n_references}",
                self.pool_size,
                self.pool_size + 1
            )));
        }
        Ok(())
    }
}

/// One epoch's batches of pair indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub epoch: usize,
    pub batches: Vec<Vec<usize>>,
    pub strategy_used: Strategy,
}

impl BatchPlan {
    /// One JSON array of pair indices per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for b in &self.batches {
            out.push_str(&serde_json::to_string(b).expect("indices serialise"));
            out.push('\n');
        }
        out
    }

    pub fn num_pairs(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

/// Generator for the plan of `epoch`: ChaCha8 seeded with `seed`, stream
/// `epoch`.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

pub fn build_geo_pools(
    records: &[SampleRecord],
    cfg: &SamplerConfig,
    geo: &GeoConfig,
) -> Result<Vec<NeighborPool>> {
    let coords: Vec<_> = records.iter().map(|r| r.coord).collect();
    geo_topk(&coords, &coords, cfg.pool_size, geo)
}

pub fn build_sim_pools(
    queries: &EmbeddingTable,
    references: &EmbeddingTable,
    cfg: &SamplerConfig,
) -> Result<Vec<NeighborPool>> {
    visual_topk(queries, references, cfg.pool_size)
}

/// The first `k/2` pool entries in order, then `k/2` drawn uniformly without
/// replacement from the remaining entries.
pub fn pick_from_pool(
    pool: &NeighborPool,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let k = cfg.picks_per_anchor;
    let pool_len = pool.len();
    if pool_len < k {
        return Err(Error::Invalid(format!(
            "pool of anchor {} has {pool_len} entries, need {k}",
            pool.anchor_index
        )));
    }
    let half = k / 2;
    let mut picks = Vec::with_capacity(k);
    picks.extend_from_slice(&pool.neighbor_indices[..half]);
    let tail = &pool.neighbor_indices[half..];
    picks.extend(
        rand::seq::index::sample(rng, tail.len(), k - half)
            .into_iter()
            .map(|i| tail[i]),
    );
    Ok(picks)
}

/// Whether visual pools are recomputed at the start of `epoch`.
pub fn should_refresh(epoch: usize, cfg: &SamplerConfig) -> bool {
    let e = cfg.refresh_every.max(1);
    match cfg.strategy {
        Strategy::GpsThenDss => epoch >= cfg.gps_epochs && (epoch - cfg.gps_epochs) % e == 0,
        Strategy::Dss => epoch % e == 0,
        Strategy::Random | Strategy::Gps => false,
    }
}

fn class_ids(records: &[SampleRecord]) -> (Vec<usize>, Vec<&str>, Vec<usize>) {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut names = Vec::new();
    let mut counts = Vec::new();
    let ids = records
        .iter()
        .map(|r| {
            *index.entry(r.class_id.as_str()).or_insert_with(|| {
                names.push(r.class_id.as_str());
                counts.push(0);
                names.len() - 1
            })
        })
        .collect::<Vec<_>>();
    for &c in &ids {
        counts[c] += 1;
    }
    (ids, names, counts)
}

struct Builder<'a> {
    class_of: Vec<usize>,
    used: Vec<bool>,
    /// batch number (1-based) that last took each class
    class_stamp: Vec<usize>,
    stamp: usize,
    batch: Vec<usize>,
    capacity: usize,
    pools: Option<&'a [NeighborPool]>,
}

impl Builder<'_> {
    fn fits(&self, i: usize) -> bool {
        !self.used[i] && self.class_stamp[self.class_of[i]] != self.stamp
    }

    fn push(&mut self, i: usize) {
        self.used[i] = true;
        self.class_stamp[self.class_of[i]] = self.stamp;
        self.batch.push(i);
    }

    fn full(&self) -> bool {
        self.batch.len() >= self.capacity
    }

    fn add_anchor(&mut self, anchor: usize, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<()> {
        self.push(anchor);
        if let Some(pools) = self.pools {
            for p in pick_from_pool(&pools[anchor], cfg, rng)? {
                if self.full() {
                    break;
                }
                if self.fits(p) {
                    self.push(p);
                }
            }
        }
        Ok(())
    }
}

/// Plans one epoch over `records` (pair indices `0..records.len()`).
///
/// `pools[i]` must be the pool of pair `i`, of the kind the strategy in
/// effect at `epoch` expects; pools are ignored under random sampling.
pub fn plan_epoch(
    records: &[SampleRecord],
    pools: Option<&[NeighborPool]>,
    cfg: &SamplerConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<BatchPlan> {
    cfg.validate()?;
    let n = records.len();
    let used_strategy = cfg.strategy.resolve(epoch, cfg.gps_epochs);
    let pools = match used_strategy.pool_kind() {
        None => None,
        Some(kind) => {
            let pools = pools.ok_or_else(|| {
                Error::Invalid(format!("strategy {used_strategy} needs neighbour pools"))
            })?;
            if pools.len() != n {
                return Err(Error::Invalid(format!(
                    "{} pools for {n} records",
                    pools.len()
                )));
            }
            if let Some(p) = pools.iter().find(|p| p.kind != kind) {
                return Err(Error::Invalid(format!(
                    "strategy {used_strategy} expects {kind:?} pools, anchor {} has {:?}",
                    p.anchor_index, p.kind
                )));
            }
            Some(pools)
        }
    };

    let (class_of, names, counts) = class_ids(records);
    let n_batches = n.div_ceil(cfg.batch_size);
    if let Some((c, &members)) = counts.iter().enumerate().find(|(_, &m)| m > n_batches) {
        return Err(Error::UnsatisfiableClass {
            class: names[c].to_owned(),
            members,
            batches: n_batches,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);

    let mut b = Builder {
        class_stamp: vec![0; names.len()],
        class_of,
        used: vec![false; n],
        stamp: 0,
        batch: Vec::new(),
        capacity: cfg.batch_size,
        pools,
    };
    let mut batches = Vec::with_capacity(n_batches);
    let mut cursor = 0;
    loop {
        while cursor < n && b.used[order[cursor]] {
            cursor += 1;
        }
        if cursor == n {
            break;
        }
        b.stamp += 1;
        b.batch = Vec::with_capacity(cfg.batch_size);
        b.add_anchor(order[cursor], cfg, rng)?;
        let mut scan = cursor + 1;
        while !b.full() {
            while scan < n && !b.fits(order[scan]) {
                scan += 1;
            }
            if scan == n {
                break;
            }
            b.add_anchor(order[scan], cfg, rng)?;
        }
        batches.push(std::mem::take(&mut b.batch));
    }

    Ok(BatchPlan {
        epoch,
        batches,
        strategy_used: used_strategy,
    })
}
