//! Contrastive objectives with exact analytic gradients.
//!
//! [`info_nce`] is the in-batch softmax cross-entropy over the similarity
//! matrix `exp(logit_scale) * Q R^T`, where row `i` of `R` is the positive
//! for row `i` of `Q` and every other row is a negative. The query→reference
//! direction normalises over rows, reference→query over columns, and the
//! symmetric objective is their arithmetic mean. Targets are label-smoothed:
//! `(1 - eps) * onehot(i) + eps / N`.
//!
//! The triplet losses exist as baselines; they use squared Euclidean
//! distances.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    QueryToRef,
    RefToQuery,
    Symmetric,
}

impl Direction {
    fn weights(self) -> (f64, f64) {
        match self {
            Direction::QueryToRef => (1.0, 0.0),
            Direction::RefToQuery => (0.0, 1.0),
            Direction::Symmetric => (0.5, 0.5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub label_smoothing: f64,
    /// Log of the similarity multiplier; `exp(logit_scale) = 1 / tau`.
    pub logit_scale: f64,
    pub logit_scale_max: f64,
    pub direction: Direction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            label_smoothing: 0.1,
            logit_scale: (1.0f64 / 0.07).ln(),
            logit_scale_max: 100f64.ln(),
            direction: Direction::Symmetric,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::InvalidConfig(
                "loss.label_smoothing must lie in [0, 1)".into(),
            ));
        }
        if !self.logit_scale.is_finite() || !self.logit_scale_max.is_finite() {
            return Err(Error::InvalidConfig("loss.logit_scale must be finite".into()));
        }
        if self.logit_scale > self.logit_scale_max {
            return Err(Error::InvalidConfig(
                "loss.logit_scale exceeds loss.logit_scale_max".into(),
            ));
        }
        Ok(())
    }

    pub fn temperature(&self) -> f64 {
        (-self.logit_scale).exp()
    }
}

/// Caps the learnable log-scale at `logit_scale_max`.
pub fn clamp_logit_scale(cfg: &LossConfig) -> LossConfig {
    LossConfig {
        logit_scale: cfg.logit_scale.min(cfg.logit_scale_max),
        ..*cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Unweighted loss of each direction: `(query→ref, ref→query)`.
    pub direction_losses: (f64, f64),
    pub grad_queries: Array2<f64>,
    pub grad_references: Array2<f64>,
    pub grad_logit_scale: f64,
}

fn check_finite(m: &ArrayView2<'_, f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Smoothed cross-entropy of each row of `logits` against target row `i`.
/// Returns the mean loss and `d mean_loss / d logits`.
fn smoothed_row_xent(logits: ArrayView2<'_, f64>, eps: f64) -> (f64, Array2<f64>) {
    let n = logits.nrows();
    let nf = n as f64;
    let off = eps / nf;
    let on = 1.0 - eps + off;
    let mut grad = Array2::zeros((n, n));
    let mut total = 0.0;
    for (i, (row, mut g)) in logits
        .axis_iter(Axis(0))
        .zip(grad.axis_iter_mut(Axis(0)))
        .enumerate()
    {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        let mut row_loss = 0.0;
        for (j, (&l, gj)) in row.iter().zip(g.iter_mut()).enumerate() {
            let target = if i == j { on } else { off };
            row_loss -= target * (l - lse);
            *gj = ((l - lse).exp() - target) / nf;
        }
        total += row_loss;
    }
    (total / nf, grad)
}

pub fn info_nce(
    queries: ArrayView2<'_, f64>,
    references: ArrayView2<'_, f64>,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    if queries.dim() != references.dim() {
        return Err(Error::ShapeMismatch(format!(
            "queries {:?} vs references {:?}",
            queries.dim(),
            references.dim()
        )));
    }
    if queries.nrows() == 0 {
        return Err(Error::ShapeMismatch("info_nce needs at least one pair".into()));
    }
    check_finite(&queries, "queries")?;
    check_finite(&references, "references")?;
    if !cfg.logit_scale.is_finite() {
        return Err(Error::NonFinite("logit scale"));
    }

    let scale = cfg.logit_scale.exp();
    let sims = queries.dot(&references.t());
    let logits = &sims * scale;
    let eps = cfg.label_smoothing;

    let (loss_qr, grad_qr) = smoothed_row_xent(logits.view(), eps);
    let (loss_rq, grad_rq_t) = smoothed_row_xent(logits.t(), eps);
    let (w_qr, w_rq) = cfg.direction.weights();

    let mut grad_logits = grad_qr * w_qr;
    grad_logits.scaled_add(w_rq, &grad_rq_t.t());

    let grad_logit_scale = Zip::from(&grad_logits)
        .and(&logits)
        .fold(0.0, |acc, &g, &l| acc + g * l);
    let grad_sims = grad_logits * scale;
    let grad_queries = grad_sims.dot(&references);
    let grad_references = grad_sims.t().dot(&queries);

    let loss = match cfg.direction {
        Direction::QueryToRef => loss_qr,
        Direction::RefToQuery => loss_rq,
        Direction::Symmetric => 0.5 * (loss_qr + loss_rq),
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok(LossOutput {
        loss,
        direction_losses: (loss_qr, loss_rq),
        grad_queries,
        grad_references,
        grad_logit_scale,
    })
}

pub const DEFAULT_TRIPLET_MARGIN: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub struct TripletOutput {
    pub loss: f64,
    pub grad_anchor: Array2<f64>,
    pub grad_positive: Array2<f64>,
    pub grad_negative: Array2<f64>,
}

fn check_triplet_shapes(
    anchor: &ArrayView2<'_, f64>,
    positive: &ArrayView2<'_, f64>,
    negative: &ArrayView2<'_, f64>,
) -> Result<()> {
    if anchor.dim() != positive.dim() || anchor.dim() != negative.dim() {
        return Err(Error::ShapeMismatch(format!(
            "anchor {:?}, positive {:?}, negative {:?}",
            anchor.dim(),
            positive.dim(),
            negative.dim()
        )));
    }
    if anchor.nrows() == 0 {
        return Err(Error::ShapeMismatch("triplet loss needs at least one row".into()));
    }
    Ok(())
}

/// Per-row `d(a,p)^2 - d(a,n)^2` and the common gradient pieces.
fn triplet_terms<F>(
    anchor: ArrayView2<'_, f64>,
    positive: ArrayView2<'_, f64>,
    negative: ArrayView2<'_, f64>,
    outer: F,
) -> TripletOutput
where
    F: Fn(f64) -> (f64, f64),
{
    let n = anchor.nrows();
    let nf = n as f64;
    let mut grad_anchor = Array2::zeros(anchor.dim());
    let mut grad_positive = Array2::zeros(anchor.dim());
    let mut grad_negative = Array2::zeros(anchor.dim());
    let mut total = 0.0;
    for i in 0..n {
        let (a, p, ng) = (anchor.row(i), positive.row(i), negative.row(i));
        let d_ap = &a - &p;
        let d_an = &a - &ng;
        let x = d_ap.dot(&d_ap) - d_an.dot(&d_an);
        let (value, slope) = outer(x);
        total += value;
        if slope != 0.0 {
            let c = 2.0 * slope / nf;
            grad_anchor.row_mut(i).assign(&((&d_ap - &d_an) * c));
            grad_positive.row_mut(i).assign(&(&d_ap * -c));
            grad_negative.row_mut(i).assign(&(&d_an * c));
        }
    }
    TripletOutput {
        loss: total / nf,
        grad_anchor,
        grad_positive,
        grad_negative,
    }
}

/// Mean hinge `max(0, d(a,p)^2 - d(a,n)^2 + margin)`; the subgradient at
/// the kink is 0.
pub fn triplet_loss(
    anchor: ArrayView2<'_, f64>,
    positive: ArrayView2<'_, f64>,
    negative: ArrayView2<'_, f64>,
    margin: f64,
) -> Result<TripletOutput> {
    check_triplet_shapes(&anchor, &positive, &negative)?;
    Ok(triplet_terms(anchor, positive, negative, |x| {
        let h = x + margin;
        if h > 0.0 {
            (h, 1.0)
        } else {
            (0.0, 0.0)
        }
    }))
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean `ln(1 + exp(d(a,p)^2 - d(a,n)^2))`.
pub fn soft_margin_triplet_loss(
    anchor: ArrayView2<'_, f64>,
    positive: ArrayView2<'_, f64>,
    negative: ArrayView2<'_, f64>,
) -> Result<TripletOutput> {
    check_triplet_shapes(&anchor, &positive, &negative)?;
    Ok(triplet_terms(anchor, positive, negative, |x| {
        (softplus(x), sigmoid(x))
    }))
}
