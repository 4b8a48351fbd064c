//! Feed-forward classifier over a flat parameter vector.
//!
//! Parameters are packed layer by layer: the `n_in × n_out` weight matrix in
//! row-major order, then the `n_out` bias vector. Hidden layers apply the
//! configured activation; the last layer emits raw logits.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::usage(format!(
                "network needs at least input and output sizes, got {sizes:?}"
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::usage(format!(
                "layer sizes must be positive, got {sizes:?}"
            )));
        }
        Ok(Self { sizes, activation })
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.sizes.last().expect("validated non-empty")
    }

    fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// A network's parameters as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub flat: Array1<f64>,
}

impl NetParams {
    pub fn new(spec: &LayerSpec, flat: Array1<f64>) -> Result<Self> {
        check_params(spec, flat.view())?;
        Ok(Self { flat })
    }

    pub fn zeros(spec: &LayerSpec) -> Self {
        Self {
            flat: Array1::zeros(spec.num_params()),
        }
    }

    pub fn pack(layers: &[Layer]) -> Self {
        let mut flat = Vec::new();
        for layer in layers {
            flat.extend(layer.weights.as_standard_layout().iter().copied());
            flat.extend(layer.bias.iter().copied());
        }
        Self {
            flat: Array1::from(flat),
        }
    }

    pub fn unpack(&self, spec: &LayerSpec) -> Result<Vec<Layer>> {
        check_params(spec, self.flat.view())?;
        Ok(layer_views(spec, self.flat.view())
            .into_iter()
            .map(|(w, b)| Layer {
                weights: w.to_owned(),
                bias: b.to_owned(),
            })
            .collect())
    }
}

fn check_params(spec: &LayerSpec, params: ArrayView1<f64>) -> Result<()> {
    if params.len() != spec.num_params() {
        return Err(Error::usage(format!(
            "parameter vector has length {}, network {:?} needs {}",
            params.len(),
            spec.sizes,
            spec.num_params()
        )));
    }
    Ok(())
}

fn layer_views<'a>(
    spec: &LayerSpec,
    params: ArrayView1<'a, f64>,
) -> Vec<(ArrayView2<'a, f64>, ArrayView1<'a, f64>)> {
    let mut out = Vec::with_capacity(spec.num_layers());
    let mut rest = params;
    for w in spec.sizes.windows(2) {
        let (n_in, n_out) = (w[0], w[1]);
        let (wpart, tail) = rest.split_at(Axis(0), n_in * n_out);
        let (bpart, tail) = tail.split_at(Axis(0), n_out);
        let weights = wpart
            .into_shape_with_order((n_in, n_out))
            .expect("contiguous weight block");
        out.push((weights, bpart));
        rest = tail;
    }
    out
}

struct ForwardCache {
    /// Pre-activations per layer (the last entry holds the logits).
    pre: Vec<Array2<f64>>,
    /// Post-activations per hidden layer, plus the input at index 0.
    post: Vec<Array2<f64>>,
}

fn forward_cached(
    spec: &LayerSpec,
    params: ArrayView1<f64>,
    x: ArrayView2<f64>,
) -> Result<ForwardCache> {
    check_params(spec, params)?;
    if x.ncols() != spec.input_dim() {
        return Err(Error::usage(format!(
            "input has {} columns, network expects {}",
            x.ncols(),
            spec.input_dim()
        )));
    }
    let layers = layer_views(spec, params);
    let last = layers.len() - 1;
    let mut pre = Vec::with_capacity(layers.len());
    let mut post = Vec::with_capacity(layers.len());
    post.push(x.to_owned());
    for (l, (w, b)) in layers.iter().enumerate() {
        let z = post[l].dot(w) + b;
        if l < last {
            post.push(z.mapv(|v| spec.activation.apply(v)));
        }
        pre.push(z);
    }
    Ok(ForwardCache { pre, post })
}

/// Logits for each input row.
pub fn forward(
    spec: &LayerSpec,
    params: ArrayView1<f64>,
    x: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let mut cache = forward_cached(spec, params, x)?;
    Ok(cache.pre.pop().expect("at least one layer"))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Row-wise log-softmax.
pub fn log_softmax_rows(logits: ArrayView2<f64>) -> Array2<f64> {
    let mut out = logits.to_owned();
    for mut row in out.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::usage(format!(
            "{} labels for {} input rows",
            labels.len(),
            rows
        )));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::data(format!(
            "label {y} at index {i} is outside [0, {classes})"
        )));
    }
    Ok(())
}

/// Mean softmax cross-entropy over the rows of `x` and its gradient with
/// respect to the flat parameters.
pub fn backward_nll(
    spec: &LayerSpec,
    params: ArrayView1<f64>,
    x: ArrayView2<f64>,
    labels: &[usize],
) -> Result<(f64, Array1<f64>)> {
    let cache = forward_cached(spec, params, x)?;
    let batch = x.nrows();
    check_labels(labels, batch, spec.num_classes())?;
    if batch == 0 {
        return Err(Error::usage("backward_nll on an empty batch"));
    }
    let logits = cache.pre.last().expect("at least one layer");
    let logp = log_softmax_rows(logits.view());
    let inv_b = 1.0 / batch as f64;
    let nll = -labels
        .iter()
        .enumerate()
        .map(|(r, &y)| logp[[r, y]])
        .sum::<f64>()
        * inv_b;

    // d(mean NLL)/d(logits) = (softmax - onehot) / B
    let mut delta = logp.mapv(f64::exp);
    for (r, &y) in labels.iter().enumerate() {
        delta[[r, y]] -= 1.0;
    }
    delta.mapv_inplace(|v| v * inv_b);

    let layers = layer_views(spec, params);
    let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(layers.len());
    for l in (0..layers.len()).rev() {
        let input = &cache.post[l];
        let gw = input.t().dot(&delta);
        let gb = delta.sum_axis(Axis(0));
        grads.push((gw, gb));
        if l > 0 {
            let upstream = delta.dot(&layers[l].0.t());
            let z = &cache.pre[l - 1];
            let a = &cache.post[l];
            let mut next = upstream;
            ndarray::Zip::from(&mut next)
                .and(z)
                .and(a)
                .for_each(|g, &zv, &av| *g *= spec.activation.derivative(zv, av));
            delta = next;
        }
    }
    grads.reverse();
    let mut flat = Vec::with_capacity(spec.num_params());
    for (gw, gb) in grads {
        flat.extend(gw.iter().copied());
        flat.extend(gb.iter().copied());
    }
    Ok((nll, Array1::from(flat)))
}

/// Mean NLL only; cheaper than [`backward_nll`] when no gradient is needed.
pub fn mean_nll(
    spec: &LayerSpec,
    params: ArrayView1<f64>,
    x: ArrayView2<f64>,
    labels: &[usize],
) -> Result<f64> {
    let logits = forward(spec, params, x)?;
    check_labels(labels, x.nrows(), spec.num_classes())?;
    let logp = log_softmax_rows(logits.view());
    Ok(-labels
        .iter()
        .enumerate()
        .map(|(r, &y)| logp[[r, y]])
        .sum::<f64>()
        / x.nrows().max(1) as f64)
}
