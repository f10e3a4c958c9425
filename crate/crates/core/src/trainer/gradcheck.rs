//! Finite-difference check of the full encoder + loss gradient.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::encoder::{EncoderParams, Mlp};
use super::{objective_and_gradients, TrainConfig};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Relative error per parameter tensor:
/// `max_i |analytic_i - numeric_i| / max_i max(|analytic_i|, |numeric_i|)`.
/// When both gradients vanish (below 1e-12) the absolute difference is
/// reported instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub per_param: BTreeMap<String, f64>,
    pub max_rel_error: f64,
    pub loss: f64,
}

fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Compares backpropagated gradients against central differences.
/// `tamper` may alter the analytic gradients before comparison (used to
/// check that the harness notices broken gradients).
pub fn check_gradients(
    cfg: &TrainConfig,
    params: &EncoderParams,
    logit_scale: f64,
    xq: ArrayView2<'_, f64>,
    xr: ArrayView2<'_, f64>,
    tamper: impl FnOnce(&mut EncoderParams, &mut f64),
) -> Result<GradCheckReport> {
    let (loss, mut grads, mut g_scale) = objective_and_gradients(cfg, params, logit_scale, xq, xr)?;
    tamper(&mut grads, &mut g_scale);

    let eval = |p: &EncoderParams, s: f64| -> Result<f64> {
        Ok(objective_and_gradients(cfg, p, s, xq, xr)?.0)
    };

    let mut per_param = BTreeMap::new();
    let mut probe = params.clone();
    let names: Vec<String> = params.tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().into_iter().map(|(_, g)| g.to_vec()).collect();
    for (t, name) in names.iter().enumerate() {
        let len = analytic[t].len();
        let mut numeric = vec![0.0; len];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let original = probe.tensors()[t].1[i];
            probe.tensors_mut()[t].1[i] = original + FD_STEP;
            let up = eval(&probe, logit_scale)?;
            probe.tensors_mut()[t].1[i] = original - FD_STEP;
            let down = eval(&probe, logit_scale)?;
            probe.tensors_mut()[t].1[i] = original;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        per_param.insert(name.clone(), rel_error(&analytic[t], &numeric));
    }
    let up = eval(params, logit_scale + FD_STEP)?;
    let down = eval(params, logit_scale - FD_STEP)?;
    let numeric_scale = (up - down) / (2.0 * FD_STEP);
    per_param.insert("logit_scale".into(), rel_error(&[g_scale], &[numeric_scale]));

    let max_rel_error = per_param.values().fold(0.0f64, |m, &v| m.max(v));
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        loss,
    })
}

/// Gradient check on a random encoder (biases included) and random inputs,
/// using `cfg`'s loss settings, weight sharing, and seed.
pub fn gradcheck(cfg: &TrainConfig, n: usize, d_in: usize, d_h: usize, d_out: usize) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0x9c);
    let query = Mlp::random(d_in, d_h, d_out, 0.1, &mut rng);
    let reference = (!cfg.shared_weights).then(|| Mlp::random(d_in, d_h, d_out, 0.1, &mut rng));
    let params = EncoderParams { query, reference };
    let mut draw = |rows| Array2::from_shape_simple_fn((rows, d_in), || rng.sample::<f64, _>(StandardNormal));
    let xq = draw(n);
    let xr = draw(n);
    let logit_scale = cfg.loss.logit_scale.min(cfg.loss.logit_scale_max);
    check_gradients(cfg, &params, logit_scale, xq.view(), xr.view(), |_, _| {})
}
