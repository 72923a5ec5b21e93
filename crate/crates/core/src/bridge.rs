//! Soft bridge policy: reference chain, residual Gaussian actor transitions,
//! path sampling, and the closed-form control energy.
//!
//! The actor is a finite Markov chain in pre-tanh latent space. A base latent
//! `z_0` is drawn from the logistic law whose tanh image is uniform on
//! `(-1, 1)`, then `K` transition blocks apply
//!
//! ```text
//! z_{k+1} = z_k + h·u_k(s, z_k) + sqrt(2h)·σ_k(s, z_k) ⊙ ε_{k+1},   h = 1/K,
//! ```
//!
//! i.e. a Gaussian kernel with mean `z_k + h·u_k` and covariance
//! `2h·diag(σ_k²)`. The reference chain uses the same discretization with the
//! score drift of the logistic base: mean `z_k − 2h·tanh(z_k)`, covariance
//! `2h·I`. The KL between actor and reference kernels at a step is available
//! in closed form (`local_control_cost`); summed along a sampled path it is
//! the path's control energy, whose expectation equals the actor-reference
//! path KL up to the fixed initial-base term.
//!
//! Action generation is one pass: exactly `K` block evaluations, then
//! `a = action_scale ⊙ tanh(z_K) + action_bias`.

use crate::linalg::Mat;
use crate::nn::{
    sigmoid, softplus, Activation, DenseGrad, DenseLayer, LayerNorm, LayerNormCache,
    LayerNormGrad, NnError,
};
use crate::rng::StreamRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Base uniform draws are clipped to `±(1 − clip)` before arctanh.
pub const DEFAULT_BASE_CLIP: f64 = 1e-6;

/// A scale-head output above this rejects the path as diverged.
pub const SCALE_DIVERGENCE_LIMIT: f64 = 1e3;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("non-finite value in bridge forward pass at block {block}")]
    NonFinite { block: usize },
    #[error("scale head diverged at block {block}: sigma = {sigma:.3e}")]
    ScaleDiverged { block: usize, sigma: f64 },
}

// ── Configuration ────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BridgeConfig {
    /// Number of transition blocks `K`.
    pub step_count: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub hidden_width: usize,
    pub action_scale: Vec<f64>,
    pub action_bias: Vec<f64>,
    pub base_clip: f64,
    /// Stored once as `1/K`; every formula reads this single value so the
    /// sampler and the cost computation cannot drift apart.
    pub step_size: f64,
}

impl BridgeConfig {
    pub fn new(obs_dim: usize, action_dim: usize) -> Self {
        Self::with_shape(obs_dim, action_dim, 6, 512)
    }

    pub fn with_shape(
        obs_dim: usize,
        action_dim: usize,
        step_count: usize,
        hidden_width: usize,
    ) -> Self {
        assert!(step_count >= 1, "bridge needs at least one step");
        assert!(action_dim >= 1);
        BridgeConfig {
            step_count,
            obs_dim,
            action_dim,
            hidden_width,
            action_scale: vec![1.0; action_dim],
            action_bias: vec![0.0; action_dim],
            base_clip: DEFAULT_BASE_CLIP,
            step_size: 1.0 / step_count as f64,
        }
    }

    pub fn scaled(mut self, scale: Vec<f64>, bias: Vec<f64>) -> Self {
        assert_eq!(scale.len(), self.action_dim);
        assert_eq!(bias.len(), self.action_dim);
        assert!(scale.iter().all(|s| *s > 0.0), "action scale must be positive");
        self.action_scale = scale;
        self.action_bias = bias;
        self
    }

    /// Input width of each block: `concat(obs, z)`.
    pub fn block_in_dim(&self) -> usize {
        self.obs_dim + self.action_dim
    }
}

// ── Base and reference laws ──────────────────────────────────────────

/// `ln cosh` computed via the large-`|x|` expansion to avoid overflow.
#[inline]
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Log density of the pre-tanh law whose tanh image is uniform on
/// `(-1,1)^d`: per dimension `sech²(z)/2`.
pub fn q_ref_log_density(z: &[f64]) -> f64 {
    z.iter()
        .map(|&zi| -std::f64::consts::LN_2 - 2.0 * log_cosh(zi))
        .sum()
}

/// Latent for a clipped uniform draw `u`.
#[inline]
pub fn base_from_uniform(u: f64, clip: f64) -> f64 {
    u.clamp(-(1.0 - clip), 1.0 - clip).atanh()
}

/// Sample the logistic base latent `z_0 = arctanh(u)`, `u ~ U(-1,1)^d`.
pub fn sample_base_logistic(action_dim: usize, clip: f64, rng: &mut StreamRng) -> Vec<f64> {
    (0..action_dim)
        .map(|_| base_from_uniform(rng.uniform(-1.0, 1.0), clip))
        .collect()
}

/// One Euler step of the reference chain: `z − 2h·tanh(z) + sqrt(2h)·ε`.
pub fn reference_step(z: &[f64], eps: &[f64], h: f64) -> Vec<f64> {
    assert_eq!(z.len(), eps.len());
    let s = (2.0 * h).sqrt();
    z.iter()
        .zip(eps)
        .map(|(&zi, &ei)| zi - 2.0 * h * zi.tanh() + s * ei)
        .collect()
}

/// Reference kernel mean at `z`.
pub fn reference_mean(z: &[f64], h: f64) -> Vec<f64> {
    z.iter().map(|&zi| zi - 2.0 * h * zi.tanh()).collect()
}

/// `a = scale ⊙ tanh(z) + bias`; strictly inside the box `bias ± scale`.
pub fn terminal_map(z: &[f64], scale: &[f64], bias: &[f64]) -> Vec<f64> {
    assert_eq!(z.len(), scale.len());
    assert_eq!(z.len(), bias.len());
    z.iter()
        .zip(scale.iter().zip(bias))
        .map(|(&zi, (&s, &b))| s * zi.tanh() + b)
        .collect()
}

/// Per-dimension closed-form KL between the actor kernel
/// `N(mu, 2h·sigma²)` and the reference kernel `N(z − 2h·tanh z, 2h)`.
#[inline]
pub fn local_control_cost_dim(mu: f64, sigma: f64, z: f64, h: f64) -> f64 {
    debug_assert!(sigma > 0.0);
    let delta = mu - (z - 2.0 * h * z.tanh());
    0.5 * (sigma * sigma + delta * delta / (2.0 * h) - 1.0 - 2.0 * sigma.ln())
}

/// Closed-form Gaussian KL of one actor transition against the reference
/// transition at latent `z`. Nonnegative; zero iff the kernels coincide.
pub fn local_control_cost(mu_actor: &[f64], sigma_actor: &[f64], z: &[f64], h: f64) -> f64 {
    assert_eq!(mu_actor.len(), sigma_actor.len());
    assert_eq!(mu_actor.len(), z.len());
    assert!(
        sigma_actor.iter().all(|s| *s > 0.0),
        "sigma must be strictly positive"
    );
    mu_actor
        .iter()
        .zip(sigma_actor.iter().zip(z))
        .map(|(&m, (&s, &zi))| local_control_cost_dim(m, s, zi, h))
        .sum()
}

/// Gaussian log density with variance `var`.
#[inline]
pub fn gauss_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}

// ── Sampled paths ────────────────────────────────────────────────────

/// One sampled latent trajectory with everything needed to audit it.
#[derive(Debug, Clone)]
pub struct BridgePath {
    /// `z_0 .. z_K`.
    pub latents: Vec<Vec<f64>>,
    /// `u_0 .. u_{K-1}`.
    pub drifts: Vec<Vec<f64>>,
    /// `σ_0 .. σ_{K-1}`, strictly positive.
    pub scales: Vec<Vec<f64>>,
    /// `ε_0 .. ε_K`; row 0 is the base latent itself.
    pub noises: Vec<Vec<f64>>,
    /// Closed-form per-step costs `C_0 .. C_{K-1}`.
    pub local_costs: Vec<f64>,
    pub action: Vec<f64>,
    pub step_size: f64,
    /// Transition-block evaluations spent producing this path (= K).
    pub block_evals: usize,
}

impl BridgePath {
    /// Total control energy `Σ_k C_k`.
    pub fn control_energy(&self) -> f64 {
        self.local_costs.iter().sum()
    }

    /// Sum over steps of the sampled transition log-likelihood ratio
    /// `log q_k(z_{k+1}|z_k) − log r_k(z_{k+1}|z_k)`. Its expectation equals
    /// the expected control energy; pathwise the two differ.
    pub fn transition_log_ratio(&self) -> f64 {
        let h = self.step_size;
        let var_ref = 2.0 * h;
        let mut total = 0.0;
        for k in 0..self.drifts.len() {
            let z = &self.latents[k];
            let znext = &self.latents[k + 1];
            for i in 0..z.len() {
                let mu_a = z[i] + h * self.drifts[k][i];
                let var_a = var_ref * self.scales[k][i] * self.scales[k][i];
                let mu_r = z[i] - 2.0 * h * z[i].tanh();
                total +=
                    gauss_log_pdf(znext[i], mu_a, var_a) - gauss_log_pdf(znext[i], mu_r, var_ref);
            }
        }
        total
    }

    /// Residual of the stored recursion
    /// `z_{k+1} − z_k − h·u_k − sqrt(2h)·σ_k ⊙ ε_{k+1}` (max abs entry).
    pub fn recursion_residual(&self) -> f64 {
        let h = self.step_size;
        let s = (2.0 * h).sqrt();
        let mut worst = 0.0f64;
        for k in 0..self.drifts.len() {
            for i in 0..self.action.len() {
                let pred = self.latents[k][i]
                    + h * self.drifts[k][i]
                    + s * self.scales[k][i] * self.noises[k + 1][i];
                worst = worst.max((self.latents[k + 1][i] - pred).abs());
            }
        }
        worst
    }
}

// ── Actor network ────────────────────────────────────────────────────

/// One transition block: pre-norm, dense trunk, post-norm, drift and scale
/// heads fed by the same features.
#[derive(Debug, Clone)]
pub struct BridgeBlock {
    pub pre_norm: LayerNorm,
    pub trunk: DenseLayer,
    pub post_norm: LayerNorm,
    pub drift_head: DenseLayer,
    pub scale_head: DenseLayer,
}

impl BridgeBlock {
    fn init(cfg: &BridgeConfig, rng: &mut StreamRng) -> Self {
        BridgeBlock {
            pre_norm: LayerNorm::identity(cfg.block_in_dim()),
            trunk: DenseLayer::init(cfg.block_in_dim(), cfg.hidden_width, rng),
            post_norm: LayerNorm::identity(cfg.hidden_width),
            drift_head: DenseLayer::init(cfg.hidden_width, cfg.action_dim, rng),
            scale_head: DenseLayer::init(cfg.hidden_width, cfg.action_dim, rng),
        }
    }

    fn param_count(&self) -> usize {
        2 * self.pre_norm.dim()
            + self.trunk.weight.data.len()
            + self.trunk.bias.len()
            + 2 * self.post_norm.dim()
            + self.drift_head.weight.data.len()
            + self.drift_head.bias.len()
            + self.scale_head.weight.data.len()
            + self.scale_head.bias.len()
    }
}

/// Bridge actor: `K` transition blocks with independent parameters.
#[derive(Debug, Clone)]
pub struct BridgeActor {
    pub cfg: BridgeConfig,
    pub blocks: Vec<BridgeBlock>,
}

impl BridgeActor {
    pub fn init(cfg: BridgeConfig, rng: &mut StreamRng) -> Self {
        let blocks = (0..cfg.step_count)
            .map(|_| BridgeBlock::init(&cfg, rng))
            .collect();
        BridgeActor { cfg, blocks }
    }

    /// Zero all drift/scale head parameters: `u ≡ 0`, `σ ≡ softplus(0)`.
    pub fn zero_heads(&mut self) {
        for b in &mut self.blocks {
            b.drift_head.weight.fill(0.0);
            b.drift_head.bias.iter_mut().for_each(|v| *v = 0.0);
            b.scale_head.weight.fill(0.0);
            b.scale_head.bias.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.param_count()).sum()
    }

    /// Draw the noise stack for one path: row 0 is the base latent,
    /// rows `1..=K` are standard normal.
    pub fn sample_noise_vec(&self, rng: &mut StreamRng) -> Vec<Vec<f64>> {
        let d = self.cfg.action_dim;
        let mut noise = Vec::with_capacity(self.cfg.step_count + 1);
        noise.push(sample_base_logistic(d, self.cfg.base_clip, rng));
        for _ in 0..self.cfg.step_count {
            let mut row = vec![0.0; d];
            rng.fill_normal(&mut row);
            noise.push(row);
        }
        noise
    }

    /// All-zero noise stack (base at the latent origin): the mean path.
    pub fn mean_noise_vec(&self) -> Vec<Vec<f64>> {
        vec![vec![0.0; self.cfg.action_dim]; self.cfg.step_count + 1]
    }

    /// Batched noise stack: `K+1` matrices of shape `[batch × d_a]`.
    pub fn sample_noise_batch(&self, batch: usize, rng: &mut StreamRng) -> Vec<Mat> {
        let d = self.cfg.action_dim;
        let mut noise = Vec::with_capacity(self.cfg.step_count + 1);
        let mut base = Mat::zeros(batch, d);
        for v in base.data.iter_mut() {
            *v = base_from_uniform(rng.uniform(-1.0, 1.0), self.cfg.base_clip);
        }
        noise.push(base);
        for _ in 0..self.cfg.step_count {
            let mut m = Mat::zeros(batch, d);
            rng.fill_normal(&mut m.data);
            noise.push(m);
        }
        noise
    }

    /// Evaluate one block on a single latent.
    fn block_forward_vec(&self, k: usize, obs: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let block = &self.blocks[k];
        let mut x0 = Vec::with_capacity(self.cfg.block_in_dim());
        x0.extend_from_slice(obs);
        x0.extend_from_slice(z);
        let x1 = block.pre_norm.forward_vec(&x0);
        let mut x2 = block.trunk.forward_vec(&x1);
        x2.iter_mut().for_each(|v| *v = Activation::Elu.eval(*v));
        let x4 = block.post_norm.forward_vec(&x2);
        let drift = block.drift_head.forward_vec(&x4);
        let scale: Vec<f64> = block
            .scale_head
            .forward_vec(&x4)
            .iter()
            .map(|&v| softplus(v))
            .collect();
        (drift, scale)
    }

    /// Sample one complete path given observation and noise stack.
    ///
    /// Exactly `K` block evaluations; the returned path records the count.
    pub fn sample_path(&self, obs: &[f64], noise: &[Vec<f64>]) -> Result<BridgePath, BridgeError> {
        assert_eq!(obs.len(), self.cfg.obs_dim, "observation dim mismatch");
        assert_eq!(
            noise.len(),
            self.cfg.step_count + 1,
            "noise stack must have K+1 rows"
        );
        let h = self.cfg.step_size;
        let sqrt2h = (2.0 * h).sqrt();
        let d = self.cfg.action_dim;

        let mut latents = Vec::with_capacity(self.cfg.step_count + 1);
        let mut drifts = Vec::with_capacity(self.cfg.step_count);
        let mut scales = Vec::with_capacity(self.cfg.step_count);
        let mut costs = Vec::with_capacity(self.cfg.step_count);
        let mut evals = 0usize;
        latents.push(noise[0].clone());

        for k in 0..self.cfg.step_count {
            let z = latents[k].clone();
            let (drift, scale) = self.block_forward_vec(k, obs, &z);
            evals += 1;
            let mut znext = vec![0.0; d];
            let mut cost = 0.0;
            for i in 0..d {
                let s = scale[i];
                if !s.is_finite() || !drift[i].is_finite() {
                    return Err(BridgeError::NonFinite { block: k });
                }
                if s > SCALE_DIVERGENCE_LIMIT {
                    return Err(BridgeError::ScaleDiverged { block: k, sigma: s });
                }
                let mu = z[i] + h * drift[i];
                znext[i] = mu + sqrt2h * s * noise[k + 1][i];
                cost += local_control_cost_dim(mu, s, z[i], h);
            }
            if !znext.iter().all(|v| v.is_finite()) {
                return Err(BridgeError::NonFinite { block: k });
            }
            latents.push(znext);
            drifts.push(drift);
            scales.push(scale);
            costs.push(cost);
        }

        let action = terminal_map(
            latents.last().unwrap(),
            &self.cfg.action_scale,
            &self.cfg.action_bias,
        );
        Ok(BridgePath {
            latents,
            drifts,
            scales,
            noises: noise.to_vec(),
            local_costs: costs,
            action,
            step_size: h,
            block_evals: evals,
        })
    }

    /// Convenience: draw noise and sample one action.
    pub fn act(&self, obs: &[f64], rng: &mut StreamRng) -> Result<BridgePath, BridgeError> {
        let noise = self.sample_noise_vec(rng);
        self.sample_path(obs, &noise)
    }

    /// Batched forward. `obs: [batch × obs_dim]`, `noise` as produced by
    /// [`BridgeActor::sample_noise_batch`].
    pub fn forward_batch(&self, obs: &Mat, noise: &[Mat]) -> Result<BridgeBatch, BridgeError> {
        self.forward_batch_impl(obs, noise, false).map(|(b, _)| b)
    }

    /// Batched forward recording activations for one backward pass.
    pub fn forward_batch_tape(
        &self,
        obs: &Mat,
        noise: &[Mat],
    ) -> Result<(BridgeBatch, BridgeTape), BridgeError> {
        self.forward_batch_impl(obs, noise, true)
            .map(|(b, t)| (b, t.expect("tape requested")))
    }

    fn forward_batch_impl(
        &self,
        obs: &Mat,
        noise: &[Mat],
        want_tape: bool,
    ) -> Result<(BridgeBatch, Option<BridgeTape>), BridgeError> {
        assert_eq!(obs.cols, self.cfg.obs_dim, "observation dim mismatch");
        assert_eq!(
            noise.len(),
            self.cfg.step_count + 1,
            "noise stack must have K+1 rows"
        );
        let batch = obs.rows;
        let d = self.cfg.action_dim;
        let h = self.cfg.step_size;
        let sqrt2h = (2.0 * h).sqrt();

        let mut latents = Vec::with_capacity(self.cfg.step_count + 1);
        let mut drifts = Vec::with_capacity(self.cfg.step_count);
        let mut scales = Vec::with_capacity(self.cfg.step_count);
        let mut costs = Mat::zeros(batch, self.cfg.step_count);
        let mut tapes = want_tape.then(Vec::new);
        latents.push(noise[0].clone());

        for k in 0..self.cfg.step_count {
            let block = &self.blocks[k];
            let z = &latents[k];
            let mut x0 = Mat::zeros(batch, self.cfg.block_in_dim());
            for b in 0..batch {
                let row = x0.row_mut(b);
                row[..self.cfg.obs_dim].copy_from_slice(obs.row(b));
                row[self.cfg.obs_dim..].copy_from_slice(z.row(b));
            }
            let mut x1 = Mat::zeros(batch, self.cfg.block_in_dim());
            let ln1_cache = block.pre_norm.forward_batch(&x0, &mut x1);
            let mut pre_trunk = Mat::zeros(batch, self.cfg.hidden_width);
            block.trunk.forward_batch(&x1, &mut pre_trunk);
            let mut x3 = pre_trunk.clone();
            x3.data.iter_mut().for_each(|v| *v = Activation::Elu.eval(*v));
            let mut x4 = Mat::zeros(batch, self.cfg.hidden_width);
            let ln2_cache = block.post_norm.forward_batch(&x3, &mut x4);
            let mut drift = Mat::zeros(batch, d);
            block.drift_head.forward_batch(&x4, &mut drift);
            let mut scale_raw = Mat::zeros(batch, d);
            block.scale_head.forward_batch(&x4, &mut scale_raw);
            let mut scale = scale_raw.clone();
            scale.data.iter_mut().for_each(|v| *v = softplus(*v));

            if !drift.is_finite() || !scale.is_finite() {
                return Err(BridgeError::NonFinite { block: k });
            }
            if let Some(&s) = scale.data.iter().find(|s| **s > SCALE_DIVERGENCE_LIMIT) {
                return Err(BridgeError::ScaleDiverged { block: k, sigma: s });
            }

            let mut znext = Mat::zeros(batch, d);
            for b in 0..batch {
                let zr = z.row(b);
                let dr = drift.row(b);
                let sr = scale.row(b);
                let er = noise[k + 1].row(b);
                let zn = znext.row_mut(b);
                let mut cost = 0.0;
                for i in 0..d {
                    let mu = zr[i] + h * dr[i];
                    zn[i] = mu + sqrt2h * sr[i] * er[i];
                    cost += local_control_cost_dim(mu, sr[i], zr[i], h);
                }
                costs.row_mut(b)[k] = cost;
            }
            if !znext.is_finite() {
                return Err(BridgeError::NonFinite { block: k });
            }

            if let Some(t) = tapes.as_mut() {
                t.push(BlockTape {
                    ln1_cache,
                    x1,
                    pre_trunk,
                    ln2_cache,
                    x4,
                    scale_raw,
                });
            }
            latents.push(znext);
            drifts.push(drift);
            scales.push(scale);
        }

        let zk = latents.last().unwrap();
        let mut actions = Mat::zeros(batch, d);
        for b in 0..batch {
            let zr = zk.row(b);
            let ar = actions.row_mut(b);
            for i in 0..d {
                ar[i] = self.cfg.action_scale[i] * zr[i].tanh() + self.cfg.action_bias[i];
            }
        }
        let energies = (0..batch).map(|b| costs.row(b).iter().sum()).collect();

        let batch_out = BridgeBatch {
            latents,
            drifts,
            scales,
            noises: noise.to_vec(),
            costs,
            actions,
            energies,
            block_evals_per_sample: self.cfg.step_count,
        };
        let tape = tapes.map(|blocks| BridgeTape {
            blocks,
            consumed: false,
        });
        Ok((batch_out, tape))
    }

    /// Reverse pass through the sampled paths.
    ///
    /// The scalar loss is `Σ_b [ d_action_b · a_b + cost_coeff · C(τ_b) ]`:
    /// `d_action` carries the per-sample gradient of the loss with respect to
    /// the emitted action, `cost_coeff` the (shared) gradient with respect to
    /// each path's control energy.
    pub fn backward_batch(
        &self,
        tape: &mut BridgeTape,
        batch: &BridgeBatch,
        d_action: &Mat,
        cost_coeff: f64,
    ) -> Result<BridgeGrads, NnError> {
        if tape.consumed {
            return Err(NnError::TapeConsumed);
        }
        tape.consumed = true;
        let k_steps = self.cfg.step_count;
        let d = self.cfg.action_dim;
        let h = self.cfg.step_size;
        let sqrt2h = (2.0 * h).sqrt();
        let rows = d_action.rows;
        assert_eq!(d_action.cols, d);

        let mut grads = BridgeGrads::zeros_like(self);

        // Gradient into z_K through the terminal map.
        let zk = batch.latents.last().unwrap();
        let mut gz = Mat::zeros(rows, d);
        for b in 0..rows {
            let zr = zk.row(b);
            let da = d_action.row(b);
            let g = gz.row_mut(b);
            for i in 0..d {
                let t = zr[i].tanh();
                g[i] = da[i] * self.cfg.action_scale[i] * (1.0 - t * t);
            }
        }

        for k in (0..k_steps).rev() {
            let block = &self.blocks[k];
            let bt = &tape.blocks[k];
            let z = &batch.latents[k];
            let drift = &batch.drifts[k];
            let scale = &batch.scales[k];
            let eps = &batch.noises[k + 1];

            // Head-output gradients from the recursion and the local cost.
            let mut du = Mat::zeros(rows, d);
            let mut dscale_raw = Mat::zeros(rows, d);
            let mut gz_cost = Mat::zeros(rows, d);
            for b in 0..rows {
                let gzr = gz.row(b);
                let zr = z.row(b);
                let ur = drift.row(b);
                let sr = scale.row(b);
                let er = eps.row(b);
                let rawr = bt.scale_raw.row(b);
                let dur = du.row_mut(b);
                let dsr = dscale_raw.row_mut(b);
                let gcr = gz_cost.row_mut(b);
                for i in 0..d {
                    let t = zr[i].tanh();
                    // delta = mu_actor − mu_ref = h·u + 2h·tanh(z).
                    let delta = h * ur[i] + 2.0 * h * t;
                    dur[i] = h * gzr[i] + cost_coeff * 0.5 * delta;
                    let dsigma = sqrt2h * er[i] * gzr[i] + cost_coeff * (sr[i] - 1.0 / sr[i]);
                    dsr[i] = dsigma * sigmoid(rawr[i]);
                    // Cost's explicit dependence on z_k via the reference mean.
                    gcr[i] = cost_coeff * delta * (1.0 - t * t);
                }
            }

            let g = &mut grads.blocks[k];
            block.drift_head.accumulate_grads(&bt.x4, &du, &mut g.drift_head);
            block
                .scale_head
                .accumulate_grads(&bt.x4, &dscale_raw, &mut g.scale_head);
            let mut dx4 = Mat::zeros(rows, self.cfg.hidden_width);
            block.drift_head.input_grad(&du, &mut dx4);
            let mut dx4b = Mat::zeros(rows, self.cfg.hidden_width);
            block.scale_head.input_grad(&dscale_raw, &mut dx4b);
            for (a, b2) in dx4.data.iter_mut().zip(&dx4b.data) {
                *a += b2;
            }

            let mut dx3 = Mat::zeros(rows, self.cfg.hidden_width);
            block
                .post_norm
                .backward_batch(&bt.ln2_cache, &dx4, &mut g.post_norm, &mut dx3);
            for (v, &p) in dx3.data.iter_mut().zip(&bt.pre_trunk.data) {
                *v *= Activation::Elu.grad(p);
            }
            block.trunk.accumulate_grads(&bt.x1, &dx3, &mut g.trunk);
            let mut dx1 = Mat::zeros(rows, self.cfg.block_in_dim());
            block.trunk.input_grad(&dx3, &mut dx1);
            let mut dx0 = Mat::zeros(rows, self.cfg.block_in_dim());
            block
                .pre_norm
                .backward_batch(&bt.ln1_cache, &dx1, &mut g.pre_norm, &mut dx0);

            // Assemble the gradient into z_k: identity path through the
            // recursion, the cost term, and the block-input slice.
            let mut gz_prev = gz_cost;
            for b in 0..rows {
                let gzr = gz.row(b);
                let x0r = dx0.row(b);
                let g = gz_prev.row_mut(b);
                for i in 0..d {
                    g[i] += gzr[i] + x0r[self.cfg.obs_dim + i];
                }
            }
            gz = gz_prev;
        }

        Ok(grads)
    }
}

/// Batched sampled paths.
#[derive(Debug, Clone)]
pub struct BridgeBatch {
    pub latents: Vec<Mat>,
    pub drifts: Vec<Mat>,
    pub scales: Vec<Mat>,
    pub noises: Vec<Mat>,
    /// `[batch × K]` per-step costs.
    pub costs: Mat,
    pub actions: Mat,
    /// Per-sample control energy.
    pub energies: Vec<f64>,
    pub block_evals_per_sample: usize,
}

impl BridgeBatch {
    pub fn mean_energy(&self) -> f64 {
        self.energies.iter().sum::<f64>() / self.energies.len() as f64
    }
}

/// Recorded activations for one batched bridge forward. Single use.
#[derive(Debug)]
pub struct BridgeTape {
    blocks: Vec<BlockTape>,
    consumed: bool,
}

#[derive(Debug)]
struct BlockTape {
    ln1_cache: LayerNormCache,
    x1: Mat,
    pre_trunk: Mat,
    ln2_cache: LayerNormCache,
    x4: Mat,
    scale_raw: Mat,
}

#[derive(Debug, Clone)]
pub struct BlockGrads {
    pub pre_norm: LayerNormGrad,
    pub trunk: DenseGrad,
    pub post_norm: LayerNormGrad,
    pub drift_head: DenseGrad,
    pub scale_head: DenseGrad,
}

#[derive(Debug, Clone)]
pub struct BridgeGrads {
    pub blocks: Vec<BlockGrads>,
}

impl BridgeGrads {
    pub fn zeros_like(actor: &BridgeActor) -> Self {
        BridgeGrads {
            blocks: actor
                .blocks
                .iter()
                .map(|b| BlockGrads {
                    pre_norm: LayerNormGrad::zeros(b.pre_norm.dim()),
                    trunk: DenseGrad::zeros_like(&b.trunk),
                    post_norm: LayerNormGrad::zeros(b.post_norm.dim()),
                    drift_head: DenseGrad::zeros_like(&b.drift_head),
                    scale_head: DenseGrad::zeros_like(&b.scale_head),
                })
                .collect(),
        }
    }

    pub fn write_flat(&self, out: &mut Vec<f64>) {
        for b in &self.blocks {
            out.extend_from_slice(&b.pre_norm.gain);
            out.extend_from_slice(&b.pre_norm.offset);
            out.extend_from_slice(&b.trunk.weight.data);
            out.extend_from_slice(&b.trunk.bias);
            out.extend_from_slice(&b.post_norm.gain);
            out.extend_from_slice(&b.post_norm.offset);
            out.extend_from_slice(&b.drift_head.weight.data);
            out.extend_from_slice(&b.drift_head.bias);
            out.extend_from_slice(&b.scale_head.weight.data);
            out.extend_from_slice(&b.scale_head.bias);
        }
    }
}

impl crate::nn::FlatParams for BridgeActor {
    fn flat_len(&self) -> usize {
        self.param_count()
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        for b in &self.blocks {
            b.pre_norm.write_flat(out);
            b.trunk.write_flat(out);
            b.post_norm.write_flat(out);
            b.drift_head.write_flat(out);
            b.scale_head.write_flat(out);
        }
    }

    fn read_flat(&mut self, src: &[f64], pos: &mut usize) {
        for b in &mut self.blocks {
            b.pre_norm.read_flat(src, pos);
            b.trunk.read_flat(src, pos);
            b.post_norm.read_flat(src, pos);
            b.drift_head.read_flat(src, pos);
            b.scale_head.read_flat(src, pos);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::FlatParams;

    fn cfg_small(obs: usize, act: usize, k: usize, width: usize) -> BridgeConfig {
        BridgeConfig::with_shape(obs, act, k, width)
    }

    #[test]
    fn q_ref_analytic_values() {
        assert!((q_ref_log_density(&[0.0]) + std::f64::consts::LN_2).abs() < 1e-15);
        assert!((q_ref_log_density(&[0.0; 3]) + 3.0 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn q_ref_integrates_to_one() {
        // Trapezoid over [-8, 8] with 4001 points.
        let n = 4001;
        let (lo, hi) = (-8.0, 8.0);
        let dx = (hi - lo) / (n - 1) as f64;
        let mut total = 0.0;
        for i in 0..n {
            let z = lo + i as f64 * dx;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            total += w * q_ref_log_density(&[z]).exp();
        }
        total *= dx;
        assert!((total - 1.0).abs() < 1e-6, "integral {total}");
    }

    #[test]
    fn base_transform_values() {
        assert_eq!(base_from_uniform(0.0, 1e-6), 0.0);
        assert!((base_from_uniform(0.5, 1e-6) - 0.5f64.atanh()).abs() < 1e-15);
        assert!((0.5f64.atanh() - 0.5493061443340549).abs() < 1e-12);
        // Clip keeps the latent finite at the boundary.
        assert!(base_from_uniform(1.0, 1e-6).is_finite());
    }

    #[test]
    fn base_tanh_image_is_uniform_chi_square() {
        let mut rng = StreamRng::new(5, 21);
        let bins = 50usize;
        let n = 1_000_000usize;
        let mut counts = vec![0u64; bins];
        for _ in 0..n {
            let z = sample_base_logistic(1, DEFAULT_BASE_CLIP, &mut rng)[0];
            let u = z.tanh();
            let b = (((u + 1.0) / 2.0) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let expected = n as f64 / bins as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 49.0 + 5.0 * (2.0 * 49.0f64).sqrt(), "chi2 {chi2}");
    }

    #[test]
    fn reference_step_values() {
        assert_eq!(reference_step(&[0.0], &[0.0], 1.0 / 6.0), vec![0.0]);
        let z = reference_step(&[1.0], &[0.0], 1.0 / 6.0)[0];
        assert!((z - (1.0 - 1.0f64.tanh() / 3.0)).abs() < 1e-15);
        assert!((z - 0.7461352813480784).abs() < 1e-10);
        // Zero-noise drift contracts toward the origin.
        for &big in &[3.0, -5.0, 10.0] {
            let out = reference_step(&[big], &[0.0], 0.1)[0];
            assert!(out.abs() < big.abs());
            assert!(out.signum() == big.signum());
        }
    }

    #[test]
    fn terminal_map_values() {
        assert_eq!(
            terminal_map(&[0.0, 0.0], &[1.0, 1.0], &[0.3, -0.1]),
            vec![0.3, -0.1]
        );
        // Saturation approaches bias ± scale from inside (tanh(15) is still
        // strictly below 1 in f64).
        let a = terminal_map(&[15.0], &[1.5], &[0.2])[0];
        assert!((a - 1.7).abs() < 1e-9 && a < 1.7);
        // Pendulum-style bounds [-2, 2].
        let a = terminal_map(&[0.5], &[2.0], &[0.0])[0];
        assert!((a - 2.0 * 0.5f64.tanh()).abs() < 1e-15);
        assert!((a - 0.9242343145).abs() < 1e-9);
    }

    /// Independent quadrature oracle: KL(N(m1,v1) || N(m2,v2)) by Simpson
    /// integration of p·ln(p/q).
    fn gauss_kl_quadrature(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
        let sd = v1.sqrt();
        let (lo, hi) = (m1 - 12.0 * sd, m1 + 12.0 * sd);
        let n = 20_001;
        let dx = (hi - lo) / (n - 1) as f64;
        let f = |x: f64| {
            let lp = gauss_log_pdf(x, m1, v1);
            let lq = gauss_log_pdf(x, m2, v2);
            lp.exp() * (lp - lq)
        };
        let mut s = 0.0;
        for i in 0..n {
            let w = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            s += w * f(lo + i as f64 * dx);
        }
        s * dx / 3.0
    }

    #[test]
    fn local_cost_zero_iff_reference() {
        let h = 1.0 / 6.0;
        for &z in &[-2.0f64, -0.3, 0.0, 0.7, 4.0] {
            let mu_ref = z - 2.0 * h * z.tanh();
            assert!(local_control_cost(&[mu_ref], &[1.0], &[z], h).abs() < 1e-15);
            assert!(local_control_cost(&[mu_ref + 0.1], &[1.0], &[z], h) > 0.0);
            assert!(local_control_cost(&[mu_ref], &[1.3], &[z], h) > 0.0);
        }
    }

    #[test]
    fn local_cost_matches_quadrature_oracle() {
        let h = 1.0 / 6.0;
        // Mean offset 0.2 at unit sigma: δ²/(4h) = 0.06 nats.
        let z = 0.9f64;
        let mu_ref = z - 2.0 * h * z.tanh();
        let c = local_control_cost(&[mu_ref + 0.2], &[1.0], &[z], h);
        assert!((c - 0.06).abs() < 1e-12, "{c}");
        let q = gauss_kl_quadrature(mu_ref + 0.2, 2.0 * h, mu_ref, 2.0 * h);
        assert!((c - q).abs() < 1e-9, "{c} vs quadrature {q}");

        // Sigma 2 at matched means: ½(σ² − 1 − ln σ²) ≈ 0.8069 nats.
        let c = local_control_cost(&[mu_ref], &[2.0], &[z], h);
        assert!((c - 0.5 * (4.0 - 1.0 - 4.0f64.ln())).abs() < 1e-12);
        let q = gauss_kl_quadrature(mu_ref, 2.0 * h * 4.0, mu_ref, 2.0 * h);
        assert!((c - q).abs() < 1e-8, "{c} vs quadrature {q}");

        // Random kernels against the oracle.
        let mut rng = StreamRng::new(8, 3);
        for _ in 0..10 {
            let z = rng.uniform(-2.0, 2.0);
            let mu = z + rng.uniform(-0.5, 0.5);
            let sigma = rng.uniform(0.4, 2.5);
            let c = local_control_cost(&[mu], &[sigma], &[z], h);
            let q = gauss_kl_quadrature(
                mu,
                2.0 * h * sigma * sigma,
                z - 2.0 * h * z.tanh(),
                2.0 * h,
            );
            assert!((c - q).abs() < 1e-7, "{c} vs {q}");
        }
    }

    #[test]
    #[should_panic(expected = "strictly positive")]
    fn local_cost_rejects_nonpositive_sigma() {
        let _ = local_control_cost(&[0.0], &[0.0], &[0.0], 0.5);
    }

    #[test]
    fn zero_head_actor_is_pure_diffusion() {
        let mut rng = StreamRng::new(3, 1);
        let mut actor = BridgeActor::init(cfg_small(2, 3, 4, 16), &mut rng);
        actor.zero_heads();
        let noise = actor.sample_noise_vec(&mut rng);
        let path = actor.sample_path(&[0.3, -0.8], &noise).unwrap();
        let sp0 = softplus(0.0);
        for k in 0..4 {
            assert!(path.drifts[k].iter().all(|u| *u == 0.0));
            assert!(path.scales[k].iter().all(|s| (*s - sp0).abs() < 1e-15));
        }
        assert_eq!(path.block_evals, 4);
        assert!(path.recursion_residual() < 1e-12);
    }

    #[test]
    fn one_step_hand_arithmetic() {
        // K=1 (h=1), d=1; force u = 1, sigma = 1 via head biases.
        let mut rng = StreamRng::new(4, 1);
        let mut actor = BridgeActor::init(cfg_small(1, 1, 1, 8), &mut rng);
        actor.zero_heads();
        actor.blocks[0].drift_head.bias[0] = 1.0;
        // softplus(x) = 1  ⇔  x = ln(e − 1).
        actor.blocks[0].scale_head.bias[0] = (std::f64::consts::E - 1.0).ln();
        let noise = vec![vec![0.0], vec![0.0]];
        let path = actor.sample_path(&[0.0], &noise).unwrap();
        assert!((path.latents[1][0] - 1.0).abs() < 1e-12);
        assert!((path.action[0] - 1.0f64.tanh()).abs() < 1e-12);
        assert!((path.scales[0][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stored_paths_satisfy_recursion() {
        let mut rng = StreamRng::new(6, 2);
        let actor = BridgeActor::init(cfg_small(3, 2, 6, 32), &mut rng);
        for _ in 0..20 {
            let obs: Vec<f64> = (0..3).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let path = actor.act(&obs, &mut rng).unwrap();
            assert!(path.recursion_residual() < 1e-12);
            assert_eq!(path.block_evals, 6);
            assert!(path.control_energy() >= 0.0);
            assert!(path.local_costs.iter().all(|c| *c >= 0.0));
            // Emitted action strictly inside bounds.
            assert!(path.action.iter().all(|a| a.abs() < 1.0));
        }
    }

    #[test]
    fn batch_forward_matches_vec_path() {
        let mut rng = StreamRng::new(7, 2);
        let actor = BridgeActor::init(cfg_small(2, 2, 3, 24), &mut rng);
        let batch = 5;
        let obs_rows: Vec<Vec<f64>> = (0..batch)
            .map(|_| (0..2).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        let obs = Mat::from_rows(obs_rows.clone());
        let noise = actor.sample_noise_batch(batch, &mut rng);
        let out = actor.forward_batch(&obs, &noise).unwrap();
        assert_eq!(out.block_evals_per_sample, 3);
        for b in 0..batch {
            let noise_vec: Vec<Vec<f64>> = noise.iter().map(|m| m.row(b).to_vec()).collect();
            let path = actor.sample_path(&obs_rows[b], &noise_vec).unwrap();
            for i in 0..2 {
                assert!((out.actions.row(b)[i] - path.action[i]).abs() < 1e-12);
            }
            assert!((out.energies[b] - path.control_energy()).abs() < 1e-10);
        }
    }

    #[test]
    fn hand_built_paths_energy() {
        // Zero-control path (actor kernel equals reference) has zero energy.
        let h = 0.5;
        let z0: Vec<f64> = vec![0.4];
        let mu_ref = z0[0] - 2.0 * h * z0[0].tanh();
        let path = BridgePath {
            latents: vec![z0.clone(), vec![mu_ref]],
            drifts: vec![vec![(mu_ref - z0[0]) / h]],
            scales: vec![vec![1.0]],
            noises: vec![z0.clone(), vec![0.0]],
            local_costs: vec![local_control_cost(&[mu_ref], &[1.0], &z0, h)],
            action: vec![mu_ref.tanh()],
            step_size: h,
            block_evals: 1,
        };
        assert_eq!(path.control_energy(), 0.0);

        // Two steps of constant mean offset δ at unit sigma: 2·δ²/(4h).
        let delta = 0.3;
        let mut latents: Vec<Vec<f64>> = vec![vec![0.2]];
        let mut costs = vec![];
        for _ in 0..2 {
            let z = latents.last().unwrap()[0];
            let mu = z - 2.0 * h * z.tanh() + delta;
            costs.push(local_control_cost(&[mu], &[1.0], &[z], h));
            latents.push(vec![mu]);
        }
        let total: f64 = costs.iter().sum();
        assert!((total - 2.0 * delta * delta / (4.0 * h)).abs() < 1e-12);
    }

    #[test]
    fn divergence_guard_rejects_huge_scale() {
        let mut rng = StreamRng::new(9, 1);
        let mut actor = BridgeActor::init(cfg_small(1, 1, 2, 8), &mut rng);
        actor.zero_heads();
        actor.blocks[0].scale_head.bias[0] = 5000.0;
        let noise = actor.sample_noise_vec(&mut rng);
        let err = actor.sample_path(&[0.1], &noise);
        assert!(matches!(err, Err(BridgeError::ScaleDiverged { block: 0, .. })));
    }

    /// Paired Monte-Carlo check: the analytic control energy and the raw
    /// transition log-likelihood ratio agree in expectation.
    #[test]
    fn control_energy_matches_log_ratio_in_expectation() {
        let mut rng = StreamRng::new(11, 7);
        let actor = BridgeActor::init(cfg_small(2, 2, 6, 32), &mut rng);
        let obs = [0.2, -0.5];
        let n = 20_000;
        let mut ce = Vec::with_capacity(n);
        let mut llr = Vec::with_capacity(n);
        for _ in 0..n {
            let path = actor.act(&obs, &mut rng).unwrap();
            ce.push(path.control_energy());
            llr.push(path.transition_log_ratio());
        }
        let mean_c = ce.iter().sum::<f64>() / n as f64;
        let mean_l = llr.iter().sum::<f64>() / n as f64;
        let diffs: Vec<f64> = ce.iter().zip(&llr).map(|(c, l)| c - l).collect();
        let mean_d = mean_c - mean_l;
        let var =
            diffs.iter().map(|d| (d - mean_d) * (d - mean_d)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(mean_d.abs() < 3.0 * se, "diff {mean_d}, se {se}");
    }

    /// Swapping the base law only adds the initial log-ratio term: the
    /// transition machinery never sees which base produced the latent, and
    /// the mean initial term equals KL(base || logistic) by quadrature.
    #[test]
    fn fixed_base_constant_decomposition() {
        let mut rng = StreamRng::new(13, 7);
        let actor = BridgeActor::init(cfg_small(1, 2, 4, 16), &mut rng);
        let obs = [0.0];

        // Quadrature KL(N(0,1) || q_ref) per dim.
        let n = 40_001;
        let (lo, hi) = (-10.0, 10.0);
        let dx = (hi - lo) / (n - 1) as f64;
        let mut kl = 0.0;
        for i in 0..n {
            let z = lo + i as f64 * dx;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            let lp = gauss_log_pdf(z, 0.0, 1.0);
            kl += w * lp.exp() * (lp - q_ref_log_density(&[z]));
        }
        kl *= dx;
        let kl_2d = 2.0 * kl;

        let m = 20_000;
        let mut terms = Vec::with_capacity(m);
        for _ in 0..m {
            // Normal base through the same transition machinery.
            let mut noise = actor.sample_noise_vec(&mut rng);
            noise[0] = vec![rng.normal(), rng.normal()];
            let path = actor.sample_path(&obs, &noise).unwrap();
            let z0 = &path.latents[0];
            let log_p0: f64 = z0.iter().map(|&z| gauss_log_pdf(z, 0.0, 1.0)).sum();
            terms.push(log_p0 - q_ref_log_density(z0));

            // Identical conditional draws ⇒ identical costs, whatever law
            // the base row came from.
            let path2 = actor.sample_path(&obs, &noise).unwrap();
            assert_eq!(path.control_energy(), path2.control_energy());
        }
        let mean = terms.iter().sum::<f64>() / m as f64;
        let var = terms.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (m - 1) as f64;
        let se = (var / m as f64).sqrt();
        assert!(
            (mean - kl_2d).abs() < 3.0 * se,
            "mc {mean} vs quadrature {kl_2d} (se {se})"
        );
    }

    /// Central finite differences through the full sampled loss
    /// `Σ_b [w·a_b + c·C_b]` with frozen noise.
    #[test]
    fn bridge_backward_matches_finite_differences() {
        let mut rng = StreamRng::new(15, 3);
        let cfg = cfg_small(2, 1, 2, 6);
        let mut actor = BridgeActor::init(cfg, &mut rng);
        let batch = 4;
        let obs = Mat::from_rows(
            (0..batch)
                .map(|_| (0..2).map(|_| rng.uniform(-1.0, 1.0)).collect())
                .collect(),
        );
        let noise = actor.sample_noise_batch(batch, &mut rng);
        let w = 0.7;
        let c = 0.9;

        let loss = |a: &BridgeActor| -> f64 {
            let out = a.forward_batch(&obs, &noise).unwrap();
            let mut l = 0.0;
            for b in 0..batch {
                l += w * out.actions.row(b)[0] + c * out.energies[b];
            }
            l
        };

        let (out, mut tape) = actor.forward_batch_tape(&obs, &noise).unwrap();
        let mut d_action = Mat::zeros(batch, 1);
        d_action.data.iter_mut().for_each(|v| *v = w);
        let grads = actor.backward_batch(&mut tape, &out, &d_action, c).unwrap();
        let mut flat_g = Vec::new();
        grads.write_flat(&mut flat_g);

        let mut flat = actor.to_flat();
        let h = 1e-5;
        let stride = (flat.len() / 40).max(1);
        for i in (0..flat.len()).step_by(stride) {
            let keep = flat[i];
            flat[i] = keep + h;
            actor.load_flat(&flat);
            let up = loss(&actor);
            flat[i] = keep - h;
            actor.load_flat(&flat);
            let down = loss(&actor);
            flat[i] = keep;
            actor.load_flat(&flat);
            let fd = (up - down) / (2.0 * h);
            let g = flat_g[i];
            let denom = fd.abs().max(g.abs()).max(1e-6);
            assert!(((fd - g) / denom).abs() < 1e-4, "param {i}: fd {fd} vs {g}");
        }
    }

    #[test]
    fn bridge_tape_single_use() {
        let mut rng = StreamRng::new(16, 1);
        let actor = BridgeActor::init(cfg_small(1, 1, 2, 4), &mut rng);
        let obs = Mat::from_rows(vec![vec![0.2]]);
        let noise = actor.sample_noise_batch(1, &mut rng);
        let (out, mut tape) = actor.forward_batch_tape(&obs, &noise).unwrap();
        let d_action = Mat::zeros(1, 1);
        assert!(actor.backward_batch(&mut tape, &out, &d_action, 0.0).is_ok());
        assert!(matches!(
            actor.backward_batch(&mut tape, &out, &d_action, 0.0),
            Err(NnError::TapeConsumed)
        ));
    }
}
