//! Contrastive training of the two-view encoder.
//!
//! Each epoch resolves the sampling strategy, refreshes visual pools when
//! due (re-encoding the whole training split with the current weights),
//! plans the batches, and takes one AdamW step per batch on the chosen
//! objective. The final 10% of pairs by `pair_index` are held out and
//! scored with Recall@1 after every epoch.

mod encoder;
mod gradcheck;
mod optim;

pub use encoder::{
    backward, encode, encode_rows, forward, gelu, gelu_grad, EncoderParams, ForwardCache, Mlp, View,
};
pub use gradcheck::{check_gradients, gradcheck, GradCheckReport};
pub use optim::{adamw_step, lr_schedule, AdamWConfig, AdamWState, ParamSlot};

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{EmbeddingTable, SampleRecord};
use crate::error::{Error, Result};
use crate::eval::{evaluate, recall_at_k, RetrievalReport};
use crate::geo::GeoConfig;
use crate::losses::{info_nce, soft_margin_triplet_loss, triplet_loss, LossConfig, DEFAULT_TRIPLET_MARGIN};
use crate::sampler::{build_geo_pools, epoch_rng, plan_epoch, should_refresh, BatchPlan, SamplerConfig, Strategy};
use crate::simsearch::{cosine_rows, visual_topk_rows, NeighborPool};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    InfoNce,
    /// Hinge triplet with the hardest in-batch negative per query.
    Triplet,
    /// Soft-margin triplet with the hardest in-batch negative per query.
    SoftMarginTriplet,
}

impl std::str::FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "info_nce" => Ok(Objective::InfoNce),
            "triplet" => Ok(Objective::Triplet),
            "soft_margin_triplet" => Ok(Objective::SoftMarginTriplet),
            _ => Err(format!("unknown objective `{s}`")),
        }
    }
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::InfoNce => "info_nce",
            Objective::Triplet => "triplet",
            Objective::SoftMarginTriplet => "soft_margin_triplet",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_max: f64,
    pub warmup_epochs: usize,
    pub adam: AdamWConfig,
    pub loss: LossConfig,
    pub sampler: SamplerConfig,
    pub geo: GeoConfig,
    pub objective: Objective,
    pub triplet_margin: f64,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub shared_weights: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            lr_max: 1e-3,
            warmup_epochs: 1,
            adam: AdamWConfig::default(),
            loss: LossConfig::default(),
            sampler: SamplerConfig::default(),
            geo: GeoConfig::default(),
            objective: Objective::InfoNce,
            triplet_margin: DEFAULT_TRIPLET_MARGIN,
            hidden_dim: 128,
            embed_dim: 32,
            shared_weights: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("train.epochs must be >= 1".into()));
        }
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return Err(Error::InvalidConfig("train.lr_max must be > 0".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::InvalidConfig(
                "train.warmup_epochs must be < train.epochs".into(),
            ));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::InvalidConfig("adam betas must lie in [0,1), eps > 0".into()));
        }
        if !(a.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("train.weight_decay must be >= 0".into()));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidConfig("encoder dims must be >= 1".into()));
        }
        self.loss.validate()?;
        self.sampler.validate()?;
        self.geo.validate()
    }

    /// Learning rate at optimizer step `step`.
    pub fn lr_at(&self, step: usize, steps_per_epoch: usize) -> f64 {
        lr_schedule(step, steps_per_epoch, self.epochs, self.warmup_epochs, self.lr_max)
    }
}

/// `lr_at(step, steps_per_epoch, cfg)`.
pub fn lr_at(step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr_at(step, steps_per_epoch)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub r1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub params: EncoderParams,
    pub logit_scale: f64,
    pub history: Vec<EpochRecord>,
    pub plans: Vec<BatchPlan>,
    pub n_train: usize,
}

impl TrainRun {
    pub fn history_jsonl(&self) -> String {
        self.history
            .iter()
            .map(|h| serde_json::to_string(h).expect("history serialises") + "\n")
            .collect()
    }
}

/// Number of held-out pairs for `n` pairs.
pub fn holdout_size(n: usize) -> usize {
    (n / 10).max(1)
}

fn check_features(manifest: &[SampleRecord], q: &EmbeddingTable, r: &EmbeddingTable) -> Result<()> {
    if q.count() != manifest.len() || r.count() != manifest.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} records, {} query rows, {} reference rows",
            manifest.len(),
            q.count(),
            r.count()
        )));
    }
    if q.dim() != r.dim() {
        return Err(Error::ShapeMismatch(format!(
            "query dim {} vs reference dim {}",
            q.dim(),
            r.dim()
        )));
    }
    Ok(())
}

fn holdout_r1(params: &EncoderParams, xq: ArrayView2<'_, f64>, xr: ArrayView2<'_, f64>) -> Result<f64> {
    let q = encode_rows(params, xq, View::Query)?;
    let r = encode_rows(params, xr, View::Reference)?;
    let sim = cosine_rows(q.view(), r.view())?;
    let positives: Vec<Vec<usize>> = (0..q.nrows()).map(|i| vec![i]).collect();
    recall_at_k(sim.view(), &positives, 1)
}

/// Hardest negative reference per query row: the most similar reference
/// other than its own, lower index on ties.
fn hardest_negatives(q: &Array2<f64>, r: &Array2<f64>) -> Vec<usize> {
    let sim = q.dot(&r.t());
    sim.axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| {
            let mut best = usize::MAX;
            let mut best_s = f64::NEG_INFINITY;
            for (j, &s) in row.iter().enumerate() {
                if j != i && s > best_s {
                    best = j;
                    best_s = s;
                }
            }
            best
        })
        .collect()
}

/// Loss and embedding gradients of one batch under `objective`.
fn batch_objective(
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    q: &Array2<f64>,
    r: &Array2<f64>,
) -> Result<(f64, Array2<f64>, Array2<f64>, f64)> {
    match cfg.objective {
        Objective::InfoNce => {
            let out = info_nce(q.view(), r.view(), loss_cfg)?;
            Ok((out.loss, out.grad_queries, out.grad_references, out.grad_logit_scale))
        }
        Objective::Triplet | Objective::SoftMarginTriplet => {
            if q.nrows() < 2 {
                return Ok((0.0, Array2::zeros(q.dim()), Array2::zeros(r.dim()), 0.0));
            }
            let neg_idx = hardest_negatives(q, r);
            let neg = r.select(Axis(0), &neg_idx);
            let out = if cfg.objective == Objective::Triplet {
                triplet_loss(q.view(), r.view(), neg.view(), cfg.triplet_margin)?
            } else {
                soft_margin_triplet_loss(q.view(), r.view(), neg.view())?
            };
            let mut grad_r = out.grad_positive;
            for (i, &j) in neg_idx.iter().enumerate() {
                let mut row = grad_r.row_mut(j);
                row += &out.grad_negative.row(i);
            }
            Ok((out.loss, out.grad_anchor, grad_r, 0.0))
        }
    }
}

/// Objective value and gradients w.r.t. every encoder tensor and the
/// logit scale for one batch of raw features.
pub fn objective_and_gradients(
    cfg: &TrainConfig,
    params: &EncoderParams,
    logit_scale: f64,
    xq: ArrayView2<'_, f64>,
    xr: ArrayView2<'_, f64>,
) -> Result<(f64, EncoderParams, f64)> {
    let fq = forward(params.mlp(View::Query), xq)?;
    let fr = forward(params.mlp(View::Reference), xr)?;
    let loss_cfg = LossConfig {
        logit_scale,
        ..cfg.loss
    };
    let (loss, gq, gr, g_scale) = batch_objective(cfg, &loss_cfg, &fq.output, &fr.output)?;
    let mut grads = params.zeros_like();
    backward(params.mlp(View::Query), &fq, gq.view(), grads.mlp_mut(View::Query));
    backward(params.mlp(View::Reference), &fr, gr.view(), grads.mlp_mut(View::Reference));
    Ok((loss, grads, g_scale))
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    cfg: &TrainConfig,
    params: &mut EncoderParams,
    logit_scale: &mut f64,
    state: &mut AdamWState,
    xq: ArrayView2<'_, f64>,
    xr: ArrayView2<'_, f64>,
    rows: &[usize],
    lr: f64,
) -> Result<f64> {
    let bq = xq.select(Axis(0), rows);
    let br = xr.select(Axis(0), rows);
    let (loss, grads, g_scale) = objective_and_gradients(cfg, params, *logit_scale, bq.view(), br.view())?;

    let scale_grad = [g_scale];
    let mut scale_val = [*logit_scale];
    {
        let grad_tensors = grads.tensors();
        let mut slots: Vec<ParamSlot<'_>> = params
            .tensors_mut()
            .into_iter()
            .zip(&grad_tensors)
            .map(|((_, values, decay), (_, g))| ParamSlot { values, grads: g, decay })
            .collect();
        if cfg.objective == Objective::InfoNce {
            slots.push(ParamSlot {
                values: &mut scale_val,
                grads: &scale_grad,
                decay: false,
            });
        }
        adamw_step(&mut slots, state, lr, &cfg.adam)?;
    }
    *logit_scale = scale_val[0].min(cfg.loss.logit_scale_max);
    Ok(loss)
}

/// Initial encoder weights for `cfg` and input dimension `d_in`.
pub fn init_params(cfg: &TrainConfig, d_in: usize) -> EncoderParams {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0x5eed);
    EncoderParams::random(d_in, cfg.hidden_dim, cfg.embed_dim, cfg.shared_weights, &mut rng)
}

/// Trains on the first 90% of pairs; see the module docs.
pub fn train(
    manifest: &[SampleRecord],
    query_features: &EmbeddingTable,
    reference_features: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<TrainRun> {
    cfg.validate()?;
    check_features(manifest, query_features, reference_features)?;
    let n = manifest.len();
    let n_hold = holdout_size(n);
    if n_hold >= n {
        return Err(Error::InvalidConfig(format!("{n} pairs leave no training split")));
    }
    let n_train = n - n_hold;
    cfg.sampler.validate_for(n_train)?;

    let xq_all = query_features.to_f64();
    let xr_all = reference_features.to_f64();
    let (xq, xq_hold) = xq_all.view().split_at(Axis(0), n_train);
    let (xr, xr_hold) = xr_all.view().split_at(Axis(0), n_train);
    let train_records = &manifest[..n_train];

    let mut params = init_params(cfg, query_features.dim());
    let mut logit_scale = cfg.loss.logit_scale.min(cfg.loss.logit_scale_max);
    let mut state = AdamWState::default();

    let geo_pools = match cfg.sampler.strategy {
        Strategy::Gps | Strategy::GpsThenDss => Some(build_geo_pools(train_records, &cfg.sampler, &cfg.geo)?),
        _ => None,
    };
    let mut visual_pools: Option<Vec<NeighborPool>> = None;

    let steps_per_epoch = n_train.div_ceil(cfg.sampler.batch_size);
    let mut step = 0usize;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut plans = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if should_refresh(epoch, &cfg.sampler) {
            let q = encode_rows(&params, xq, View::Query)?;
            let r = encode_rows(&params, xr, View::Reference)?;
            visual_pools = Some(visual_topk_rows(q.view(), r.view(), cfg.sampler.pool_size)?);
        }
        let pools = match cfg.sampler.strategy.resolve(epoch, cfg.sampler.gps_epochs) {
            Strategy::Gps => geo_pools.as_deref(),
            Strategy::Dss => visual_pools.as_deref(),
            _ => None,
        };
        let mut rng = epoch_rng(cfg.sampler.seed, epoch);
        let plan = plan_epoch(train_records, pools, &cfg.sampler, epoch, &mut rng)?;

        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for batch in &plan.batches {
            lr = cfg.lr_at(step, steps_per_epoch);
            loss_sum += train_step(cfg, &mut params, &mut logit_scale, &mut state, xq, xr, batch, lr)?;
            step += 1;
        }
        let loss = loss_sum / plan.batches.len().max(1) as f64;
        if !loss.is_finite() || !params.is_finite() {
            return Err(Error::NonFinite("training state"));
        }
        let r1 = holdout_r1(&params, xq_hold, xr_hold)?;
        history.push(EpochRecord { epoch, loss, lr, r1 });
        plans.push(plan);
    }

    Ok(TrainRun {
        params,
        logit_scale,
        history,
        plans,
        n_train,
    })
}

/// Full retrieval report of a trained encoder on the held-out pairs.
pub fn evaluate_holdout(
    run: &TrainRun,
    manifest: &[SampleRecord],
    query_features: &EmbeddingTable,
    reference_features: &EmbeddingTable,
) -> Result<RetrievalReport> {
    check_features(manifest, query_features, reference_features)?;
    let rows: Vec<usize> = (run.n_train..manifest.len()).collect();
    let q = encode(&run.params, &query_features.select(&rows)?, View::Query)?;
    let r = encode(&run.params, &reference_features.select(&rows)?, View::Reference)?;
    evaluate(&q, &r, manifest)
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamsHeader {
    shared_weights: bool,
    logit_scale: f64,
    tensors: Vec<TensorHeader>,
}

fn tensor_shapes(mlp: &Mlp) -> [(usize, usize); 4] {
    let (i, h, o) = mlp.dims();
    [(i, h), (1, h), (h, o), (1, o)]
}

/// Writes `params.json` (shape header) and `params.bin` (every tensor's
/// values as little-endian f64, in header order) into `dir`.
pub fn write_params(params: &EncoderParams, logit_scale: f64, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let shapes = tensor_shapes(&params.query);
    let mut tensors = Vec::new();
    let mut bin = Vec::new();
    for (k, (name, values)) in params.tensors().into_iter().enumerate() {
        let (rows, cols) = shapes[k % 4];
        bin.extend(values.iter().flat_map(|v| v.to_le_bytes()));
        tensors.push(TensorHeader { name, rows, cols });
    }
    let header = ParamsHeader {
        shared_weights: params.shared_weights(),
        logit_scale,
        tensors,
    };
    let json = serde_json::to_string_pretty(&header).map_err(|e| Error::Invalid(e.to_string()))?;
    let jp = dir.join("params.json");
    std::fs::write(&jp, json).map_err(|e| Error::io(&jp, e))?;
    let bp = dir.join("params.bin");
    std::fs::write(&bp, bin).map_err(|e| Error::io(&bp, e))
}

/// Reads what [`write_params`] wrote, bit for bit.
pub fn read_params(dir: impl AsRef<Path>) -> Result<(EncoderParams, f64)> {
    let dir = dir.as_ref();
    let jp = dir.join("params.json");
    let text = std::fs::read_to_string(&jp).map_err(|e| Error::io(&jp, e))?;
    let header: ParamsHeader = serde_json::from_str(&text).map_err(|e| Error::Invalid(e.to_string()))?;
    let bp = dir.join("params.bin");
    let bin = std::fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    let expected = if header.shared_weights { 4 } else { 8 };
    if header.tensors.len() != expected {
        return Err(Error::Invalid(format!(
            "{} tensors in header, expected {expected}",
            header.tensors.len()
        )));
    }
    let total: usize = header.tensors.iter().map(|t| 8 * t.rows * t.cols).sum();
    if bin.len() != total {
        return Err(Error::Truncated {
            expected: total,
            actual: bin.len(),
        });
    }
    let mut values = bin
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut arrays = Vec::new();
    for t in &header.tensors {
        let data: Vec<f64> = values.by_ref().take(t.rows * t.cols).collect();
        arrays.push(Array2::from_shape_vec((t.rows, t.cols), data).expect("length checked"));
    }
    let mut it = arrays.into_iter();
    let mut next_mlp = || -> Result<Mlp> {
        let w1 = it.next().expect("tensor count checked");
        let b1 = it.next().expect("tensor count checked");
        let w2 = it.next().expect("tensor count checked");
        let b2 = it.next().expect("tensor count checked");
        let (d_in, d_h) = w1.dim();
        let d_out = w2.ncols();
        if b1.dim() != (1, d_h) || w2.nrows() != d_h || b2.dim() != (1, d_out) || d_in == 0 {
            return Err(Error::ShapeMismatch("inconsistent tensor shapes in params.json".into()));
        }
        Ok(Mlp {
            w1,
            b1: b1.remove_axis(Axis(0)),
            w2,
            b2: b2.remove_axis(Axis(0)),
        })
    };
    let query = next_mlp()?;
    let reference = if header.shared_weights { None } else { Some(next_mlp()?) };
    Ok((EncoderParams { query, reference }, header.logit_scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_synthetic, SynthConfig};

    fn tiny() -> (crate::datasets::SynthData, TrainConfig) {
        let data = generate_synthetic(&SynthConfig {
            n_pairs: 60,
            latent_dim: 4,
            view_dim: 8,
            noise_sigma: 0.1,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            hidden_dim: 16,
            embed_dim: 8,
            sampler: SamplerConfig {
                batch_size: 16,
                pool_size: 8,
                picks_per_anchor: 4,
                refresh_every: 1,
                gps_epochs: 1,
                strategy: Strategy::Random,
                seed: 1,
            },
            ..TrainConfig::default()
        };
        (data, cfg)
    }

    #[test]
    fn smoke_single_epoch_random() {
        let (data, mut cfg) = tiny();
        cfg.epochs = 1;
        cfg.warmup_epochs = 0;
        let run = train(&data.manifest, &data.query_features, &data.reference_features, &cfg).unwrap();
        assert_eq!(run.history.len(), 1);
        assert!(run.history[0].loss.is_finite());
        assert_eq!(run.n_train, 54);
    }

    #[test]
    fn deterministic_for_every_strategy() {
        let (data, mut cfg) = tiny();
        cfg.epochs = 3;
        for s in Strategy::ALL {
            cfg.sampler.strategy = s;
            let a = train(&data.manifest, &data.query_features, &data.reference_features, &cfg).unwrap();
            let b = train(&data.manifest, &data.query_features, &data.reference_features, &cfg).unwrap();
            assert_eq!(a, b, "{s}");
        }
    }

    #[test]
    fn zero_epochs_rejected() {
        let (data, mut cfg) = tiny();
        cfg.epochs = 0;
        assert!(train(&data.manifest, &data.query_features, &data.reference_features, &cfg).is_err());
    }

    #[test]
    fn triplet_objectives_run() {
        let (data, mut cfg) = tiny();
        cfg.sampler.strategy = Strategy::Dss;
        for obj in [Objective::Triplet, Objective::SoftMarginTriplet] {
            cfg.objective = obj;
            let run = train(&data.manifest, &data.query_features, &data.reference_features, &cfg).unwrap();
            assert!(run.history.iter().all(|h| h.loss.is_finite()));
            assert_eq!(run.logit_scale, cfg.loss.logit_scale);
        }
    }

    #[test]
    fn params_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for shared in [true, false] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let p = EncoderParams::random(5, 6, 3, shared, &mut rng);
            let scale = std::f64::consts::LN_10 / 3.0;
            write_params(&p, scale, dir.path()).unwrap();
            let (back, back_scale) = read_params(dir.path()).unwrap();
            assert_eq!(back_scale.to_bits(), scale.to_bits());
            assert_eq!(back, p);
        }
    }

    #[test]
    fn truncated_params_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        write_params(&EncoderParams::random(3, 4, 2, true, &mut rng), 1.0, dir.path()).unwrap();
        let bp = dir.path().join("params.bin");
        let bytes = std::fs::read(&bp).unwrap();
        std::fs::write(&bp, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_params(dir.path()), Err(Error::Truncated { .. })));
    }

    #[test]
    fn lr_continuous_at_warmup_boundary() {
        let cfg = TrainConfig::default();
        let spe = 15;
        let boundary = cfg.warmup_epochs * spe;
        let right = cfg.lr_at(boundary, spe);
        let left = cfg.lr_at(boundary - 1, spe) + cfg.lr_max / spe as f64;
        assert!((right - cfg.lr_max).abs() < 1e-12);
        assert!((left - cfg.lr_max).abs() < 1e-12);
        assert!(cfg.lr_at(cfg.epochs * spe, spe).abs() < 1e-12);
        assert_eq!(cfg.lr_at(0, spe), 0.0);
    }
}
