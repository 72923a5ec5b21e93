//! Minimal dense-network core: layers, activations, Adam, and explicit
//! per-architecture backward passes.
//!
//! There is no general autodiff graph here. The two architectures in this
//! crate (bridge transition blocks and critic MLPs) are fixed, so each one
//! carries a hand-written backward that consumes the activations recorded
//! during its forward pass. Tapes are single-use: a second backward on the
//! same tape is a contract error.
//!
//! All arithmetic is `f64`. Shape mismatches panic; recoverable conditions
//! (non-finite gradients, tape reuse) surface as [`NnError`].

use crate::linalg::{add_row_bias, axpy, col_sums_into, dot, gemm_nn, gemm_nt, gemm_tn_acc, Mat};
use crate::rng::StreamRng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("non-finite gradient encountered; update rejected")]
    NonFiniteGrad,
    #[error("backward invoked twice on the same tape")]
    TapeConsumed,
}

// ── Scalar math ──────────────────────────────────────────────────────

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ELU with unit shape parameter.
#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Tanh,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Elu => elu(x),
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative as a function of the pre-activation input.
    #[inline]
    pub fn grad(self, x: f64) -> f64 {
        match self {
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Softplus => sigmoid(x),
        }
    }

    pub fn apply_vec(self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.eval(x)).collect()
    }
}

// ── Dense layer ──────────────────────────────────────────────────────

/// Affine map `y = W x + b` with `W: [out × in]` row-major.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    /// Weights uniform in `±sqrt(1/fan_in)`, biases zero.
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut StreamRng) -> Self {
        let limit = (1.0 / in_dim as f64).sqrt();
        let mut weight = Mat::zeros(out_dim, in_dim);
        for w in weight.data.iter_mut() {
            *w = rng.uniform(-limit, limit);
        }
        DenseLayer { weight, bias: vec![0.0; out_dim] }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        DenseLayer { weight: Mat::zeros(out_dim, in_dim), bias: vec![0.0; out_dim] }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.cols
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn forward_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim(), "dense layer input dim mismatch");
        (0..self.out_dim())
            .map(|o| dot(self.weight.row(o), x) + self.bias[o])
            .collect()
    }

    /// `out = X · Wᵀ + b` for a batch `X: [batch × in]`.
    pub fn forward_batch(&self, x: &Mat, out: &mut Mat) {
        assert_eq!(x.cols, self.in_dim(), "dense layer input dim mismatch");
        gemm_nt(out, x, &self.weight);
        add_row_bias(out, &self.bias);
    }

    /// Accumulates parameter gradients and returns nothing; the input
    /// gradient is produced separately by [`DenseLayer::input_grad`].
    pub fn accumulate_grads(&self, x: &Mat, delta: &Mat, grads: &mut DenseGrad) {
        gemm_tn_acc(&mut grads.weight, delta, x);
        col_sums_into(&mut grads.bias, delta);
    }

    /// `dX = δ · W`.
    pub fn input_grad(&self, delta: &Mat, dx: &mut Mat) {
        gemm_nn(dx, delta, &self.weight);
    }
}

#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl DenseGrad {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        DenseGrad {
            weight: Mat::zeros(layer.out_dim(), layer.in_dim()),
            bias: vec![0.0; layer.out_dim()],
        }
    }
}

// ── Layer normalization ──────────────────────────────────────────────

/// `y = gain ⊙ (x − mean) / sqrt(var + eps) + offset` over the feature dim.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub offset: Vec<f64>,
    pub eps: f64,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn identity(dim: usize) -> Self {
        assert!(dim >= 2, "layer norm requires dim >= 2");
        LayerNorm { gain: vec![1.0; dim], offset: vec![0.0; dim], eps: LAYER_NORM_EPS }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.gain.len()
    }

    pub fn forward_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim(), "layer norm dim mismatch");
        assert!(x.len() >= 2, "layer norm requires dim >= 2");
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv_std = 1.0 / (var + self.eps).sqrt();
        x.iter()
            .zip(self.gain.iter().zip(&self.offset))
            .map(|(&v, (&g, &b))| g * (v - mean) * inv_std + b)
            .collect()
    }

    /// Batch forward; caches the normalized rows and inverse stds.
    pub fn forward_batch(&self, x: &Mat, out: &mut Mat) -> LayerNormCache {
        assert_eq!(x.cols, self.dim(), "layer norm dim mismatch");
        assert!(x.cols >= 2, "layer norm requires dim >= 2");
        let n = x.cols as f64;
        let mut xhat = Mat::zeros(x.rows, x.cols);
        let mut inv_std = vec![0.0; x.rows];
        for i in 0..x.rows {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std[i] = istd;
            let xh = xhat.row_mut(i);
            let or = out.row_mut(i);
            for j in 0..x.cols {
                let h = (row[j] - mean) * istd;
                xh[j] = h;
                or[j] = self.gain[j] * h + self.offset[j];
            }
        }
        LayerNormCache { xhat, inv_std }
    }

    /// Standard layer-norm backward; returns `dx` and accumulates `dgain`,
    /// `doffset` into `grads`.
    pub fn backward_batch(
        &self,
        cache: &LayerNormCache,
        dy: &Mat,
        grads: &mut LayerNormGrad,
        dx: &mut Mat,
    ) {
        let n = dy.cols as f64;
        for i in 0..dy.rows {
            let dyr = dy.row(i);
            let xh = cache.xhat.row(i);
            let istd = cache.inv_std[i];
            let mut mean_dxhat = 0.0;
            let mut mean_dxhat_xhat = 0.0;
            for j in 0..dy.cols {
                grads.offset[j] += dyr[j];
                grads.gain[j] += dyr[j] * xh[j];
                let dxh = dyr[j] * self.gain[j];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xh[j];
            }
            mean_dxhat /= n;
            mean_dxhat_xhat /= n;
            let dxr = dx.row_mut(i);
            for j in 0..dy.cols {
                let dxh = dyr[j] * self.gain[j];
                dxr[j] = istd * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub xhat: Mat,
    pub inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerNormGrad {
    pub gain: Vec<f64>,
    pub offset: Vec<f64>,
}

impl LayerNormGrad {
    pub fn zeros(dim: usize) -> Self {
        LayerNormGrad { gain: vec![0.0; dim], offset: vec![0.0; dim] }
    }
}

// ── MLP (critic architecture) ────────────────────────────────────────

/// Plain MLP with a shared hidden activation and a linear output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

impl Mlp {
    pub fn init(dims: &[usize], activation: Activation, rng: &mut StreamRng) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .map(|w| DenseLayer::init(w[0], w[1], rng))
            .collect();
        Mlp { layers, activation }
    }

    pub fn forward_vec(&self, x: &[f64]) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            h = layer.forward_vec(&h);
            if l < last {
                h.iter_mut().for_each(|v| *v = self.activation.eval(*v));
            }
        }
        h
    }

    pub fn forward_batch(&self, x: &Mat) -> Mat {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Mat::zeros(h.rows, layer.out_dim());
            layer.forward_batch(&h, &mut out);
            if l < last {
                out.data.iter_mut().for_each(|v| *v = self.activation.eval(*v));
            }
            h = out;
        }
        h
    }

    /// Forward pass that records inputs and pre-activations for backward.
    pub fn forward_batch_tape(&self, x: &Mat) -> (Mat, MlpTape) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Mat::zeros(h.rows, layer.out_dim());
            layer.forward_batch(&h, &mut out);
            inputs.push(h);
            pre.push(out.clone());
            if l < last {
                out.data.iter_mut().for_each(|v| *v = self.activation.eval(*v));
            }
            h = out;
        }
        (h, MlpTape { inputs, pre, consumed: false })
    }

    /// Full backward: parameter gradients plus the input gradient.
    pub fn backward_batch(&self, tape: &mut MlpTape, dy: &Mat) -> Result<(MlpGrads, Mat), NnError> {
        self.backward_impl(tape, dy, true)
            .map(|(g, dx)| (g.expect("grads requested"), dx))
    }

    /// Input gradient only (parameters frozen) — used when differentiating a
    /// loss through the critic into the action.
    pub fn backward_input_only(&self, tape: &mut MlpTape, dy: &Mat) -> Result<Mat, NnError> {
        self.backward_impl(tape, dy, false).map(|(_, dx)| dx)
    }

    fn backward_impl(
        &self,
        tape: &mut MlpTape,
        dy: &Mat,
        want_grads: bool,
    ) -> Result<(Option<MlpGrads>, Mat), NnError> {
        if tape.consumed {
            return Err(NnError::TapeConsumed);
        }
        tape.consumed = true;
        let last = self.layers.len() - 1;
        let mut grads = want_grads.then(|| MlpGrads::zeros_like(self));
        let mut delta = dy.clone();
        for l in (0..self.layers.len()).rev() {
            if l < last {
                // Activation derivative at the recorded pre-activation.
                let pre = &tape.pre[l];
                for (d, &p) in delta.data.iter_mut().zip(&pre.data) {
                    *d *= self.activation.grad(p);
                }
            }
            if let Some(g) = grads.as_mut() {
                self.layers[l].accumulate_grads(&tape.inputs[l], &delta, &mut g.layers[l]);
            }
            let mut dx = Mat::zeros(delta.rows, self.layers[l].in_dim());
            self.layers[l].input_grad(&delta, &mut dx);
            delta = dx;
        }
        Ok((grads, delta))
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data.len() + l.bias.len())
            .sum()
    }
}

/// Recorded activations for one MLP forward pass. Single use.
#[derive(Debug)]
pub struct MlpTape {
    inputs: Vec<Mat>,
    pre: Vec<Mat>,
    consumed: bool,
}

#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<DenseGrad>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads { layers: mlp.layers.iter().map(DenseGrad::zeros_like).collect() }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weight.data.iter_mut().for_each(|v| *v *= s);
            l.bias.iter_mut().for_each(|v| *v *= s);
        }
    }
}

// ── Flat parameter views ─────────────────────────────────────────────

/// Serialize parameters into a flat `f64` buffer in a fixed order, so one
/// Adam state can drive a whole network.
pub trait FlatParams {
    fn flat_len(&self) -> usize;
    fn write_flat(&self, out: &mut Vec<f64>);
    fn read_flat(&mut self, src: &[f64], pos: &mut usize);

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        self.write_flat(&mut out);
        out
    }

    fn load_flat(&mut self, src: &[f64]) {
        let mut pos = 0;
        self.read_flat(src, &mut pos);
        assert_eq!(pos, src.len(), "flat parameter length mismatch");
    }
}

impl FlatParams for DenseLayer {
    fn flat_len(&self) -> usize {
        self.weight.data.len() + self.bias.len()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weight.data);
        out.extend_from_slice(&self.bias);
    }

    fn read_flat(&mut self, src: &[f64], pos: &mut usize) {
        let w = self.weight.data.len();
        self.weight.data.copy_from_slice(&src[*pos..*pos + w]);
        *pos += w;
        let b = self.bias.len();
        self.bias.copy_from_slice(&src[*pos..*pos + b]);
        *pos += b;
    }
}

impl FlatParams for LayerNorm {
    fn flat_len(&self) -> usize {
        self.gain.len() + self.offset.len()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.gain);
        out.extend_from_slice(&self.offset);
    }

    fn read_flat(&mut self, src: &[f64], pos: &mut usize) {
        let n = self.gain.len();
        self.gain.copy_from_slice(&src[*pos..*pos + n]);
        *pos += n;
        self.offset.copy_from_slice(&src[*pos..*pos + n]);
        *pos += n;
    }
}

impl FlatParams for Mlp {
    fn flat_len(&self) -> usize {
        self.param_count()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            l.write_flat(out);
        }
    }

    fn read_flat(&mut self, src: &[f64], pos: &mut usize) {
        for l in &mut self.layers {
            l.read_flat(src, pos);
        }
    }
}

impl MlpGrads {
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(&l.weight.data);
            out.extend_from_slice(&l.bias);
        }
    }
}

// ── Adam ─────────────────────────────────────────────────────────────

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, param_len: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: vec![0.0; param_len],
            second_moment: vec![0.0; param_len],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update in place. Rejects the whole step on any non-finite
    /// gradient so a diverging loss cannot poison the moments.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NnError> {
        assert_eq!(params.len(), self.first_moment.len(), "adam state shape mismatch");
        assert_eq!(params.len(), grads.len(), "gradient shape mismatch");
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGrad);
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            let m = &mut self.first_moment[i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            let v = &mut self.second_moment[i];
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}
