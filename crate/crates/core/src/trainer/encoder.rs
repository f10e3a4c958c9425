//! Two-layer GELU MLP encoder with L2-normalised output, and its backward
//! pass.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datasets::EmbeddingTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Query,
    Reference,
}

/// `x -> W2^T gelu(W1^T x + b1) + b2`, with `w1: d_in x d_h` and
/// `w2: d_h x d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Mlp {
    pub fn zeros(d_in: usize, d_h: usize, d_out: usize) -> Self {
        Mlp {
            w1: Array2::zeros((d_in, d_h)),
            b1: Array1::zeros(d_h),
            w2: Array2::zeros((d_h, d_out)),
            b2: Array1::zeros(d_out),
        }
    }

    /// Gaussian weights with variance `1 / fan_in`, biases drawn with
    /// standard deviation `bias_std`.
    pub fn random<R: Rng>(d_in: usize, d_h: usize, d_out: usize, bias_std: f64, rng: &mut R) -> Self {
        let mut g = |shape: (usize, usize), std: f64| {
            Array2::from_shape_simple_fn(shape, || std * rng.sample::<f64, _>(StandardNormal))
        };
        let w1 = g((d_in, d_h), (1.0 / d_in as f64).sqrt());
        let w2 = g((d_h, d_out), (1.0 / d_h as f64).sqrt());
        let b1 = g((1, d_h), bias_std).remove_axis(Axis(0));
        let b2 = g((1, d_out), bias_std).remove_axis(Axis(0));
        Mlp { w1, b1, w2, b2 }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w1.nrows(), self.w1.ncols(), self.w2.ncols())
    }

    pub fn num_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn zeros_like(&self) -> Self {
        let (i, h, o) = self.dims();
        Mlp::zeros(i, h, o)
    }

    /// `(name, values, takes_weight_decay)` for each tensor.
    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [f64], bool); 4] {
        [
            ("w1", self.w1.as_slice_mut().expect("standard layout"), true),
            ("b1", self.b1.as_slice_mut().expect("standard layout"), false),
            ("w2", self.w2.as_slice_mut().expect("standard layout"), true),
            ("b2", self.b2.as_slice_mut().expect("standard layout"), false),
        ]
    }

    pub fn tensors(&self) -> [(&'static str, &[f64]); 4] {
        [
            ("w1", self.w1.as_slice().expect("standard layout")),
            ("b1", self.b1.as_slice().expect("standard layout")),
            ("w2", self.w2.as_slice().expect("standard layout")),
            ("b2", self.b2.as_slice().expect("standard layout")),
        ]
    }

    fn check(&self) -> Result<()> {
        let (_, h, o) = self.dims();
        if self.w2.nrows() != h || self.b1.len() != h || self.b2.len() != o {
            return Err(Error::ShapeMismatch(format!(
                "mlp tensors w1 {:?} b1 {} w2 {:?} b2 {}",
                self.w1.dim(),
                self.b1.len(),
                self.w2.dim(),
                self.b2.len()
            )));
        }
        Ok(())
    }
}

/// Encoder for both views: one MLP when weights are shared, otherwise a
/// second MLP for the reference view.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub query: Mlp,
    pub reference: Option<Mlp>,
}

impl EncoderParams {
    pub fn random<R: Rng>(d_in: usize, d_h: usize, d_out: usize, shared: bool, rng: &mut R) -> Self {
        let query = Mlp::random(d_in, d_h, d_out, 0.0, rng);
        let reference = (!shared).then(|| Mlp::random(d_in, d_h, d_out, 0.0, rng));
        EncoderParams { query, reference }
    }

    pub fn shared_weights(&self) -> bool {
        self.reference.is_none()
    }

    pub fn mlp(&self, view: View) -> &Mlp {
        match (view, &self.reference) {
            (View::Reference, Some(r)) => r,
            _ => &self.query,
        }
    }

    pub fn mlp_mut(&mut self, view: View) -> &mut Mlp {
        match (view, &mut self.reference) {
            (View::Reference, Some(r)) => r,
            _ => &mut self.query,
        }
    }

    pub fn num_params(&self) -> usize {
        self.query.num_params() + self.reference.as_ref().map_or(0, Mlp::num_params)
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            query: self.query.zeros_like(),
            reference: self.reference.as_ref().map(Mlp::zeros_like),
        }
    }

    /// Tensors in a fixed order, names prefixed by the view.
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64], bool)> {
        let mut out: Vec<_> = self
            .query
            .tensors_mut()
            .into_iter()
            .map(|(n, v, d)| (format!("query.{n}"), v, d))
            .collect();
        if let Some(r) = &mut self.reference {
            out.extend(
                r.tensors_mut()
                    .into_iter()
                    .map(|(n, v, d)| (format!("reference.{n}"), v, d)),
            );
        }
        out
    }

    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<_> = self
            .query
            .tensors()
            .into_iter()
            .map(|(n, v)| (format!("query.{n}"), v))
            .collect();
        if let Some(r) = &self.reference {
            out.extend(r.tensors().into_iter().map(|(n, v)| (format!("reference.{n}"), v)));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, v)| v.iter().all(|x| x.is_finite()))
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x * Phi(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Array2<f64>,
    pre_act: Array2<f64>,
    hidden: Array2<f64>,
    norms: Array1<f64>,
    pub output: Array2<f64>,
}

pub fn forward(mlp: &Mlp, inputs: ArrayView2<'_, f64>) -> Result<ForwardCache> {
    mlp.check()?;
    if inputs.ncols() != mlp.w1.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "input dim {} vs encoder input dim {}",
            inputs.ncols(),
            mlp.w1.nrows()
        )));
    }
    let pre_act = inputs.dot(&mlp.w1) + &mlp.b1;
    let hidden = pre_act.mapv(gelu);
    let mut output = hidden.dot(&mlp.w2) + &mlp.b2;
    let mut norms = Array1::zeros(output.nrows());
    for (i, mut row) in output.axis_iter_mut(Axis(0)).enumerate() {
        let norm = row.dot(&row).sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("encoder output"));
        }
        if norm == 0.0 {
            return Err(Error::ZeroNorm { row: i });
        }
        row.mapv_inplace(|v| v / norm);
        norms[i] = norm;
    }
    Ok(ForwardCache {
        inputs: inputs.to_owned(),
        pre_act,
        hidden,
        norms,
        output,
    })
}

/// Adds the parameter gradient for upstream `grad_output` (w.r.t. the
/// normalised rows) into `grads`.
pub fn backward(mlp: &Mlp, cache: &ForwardCache, grad_output: ArrayView2<'_, f64>, grads: &mut Mlp) {
    let u = &cache.output;
    // d/dy of y/|y| applied to g: (g - u (u.g)) / |y|
    let along = (u * &grad_output).sum_axis(Axis(1));
    let mut grad_y = grad_output.to_owned() - u * &along.insert_axis(Axis(1));
    grad_y /= &cache.norms.view().insert_axis(Axis(1));

    grads.w2 += &cache.hidden.t().dot(&grad_y);
    grads.b2 += &grad_y.sum_axis(Axis(0));
    let mut grad_pre = grad_y.dot(&mlp.w2.t());
    grad_pre.zip_mut_with(&cache.pre_act, |g, &x| *g *= gelu_grad(x));
    grads.w1 += &cache.inputs.t().dot(&grad_pre);
    grads.b1 += &grad_pre.sum_axis(Axis(0));
}

/// Unit-norm embeddings of `inputs` under the encoder for `view`.
pub fn encode_rows(params: &EncoderParams, inputs: ArrayView2<'_, f64>, view: View) -> Result<Array2<f64>> {
    Ok(forward(params.mlp(view), inputs)?.output)
}

pub fn encode(params: &EncoderParams, inputs: &EmbeddingTable, view: View) -> Result<EmbeddingTable> {
    let rows = encode_rows(params, inputs.to_f64().view(), view)?;
    EmbeddingTable::from_rows(rows.view(), inputs.row_ids().to_vec())
}
