use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::nn::mlp::{backward_batch, forward_batch, Activation, ForwardCache, MlpSpec, ParamVector, SegmentKind};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Guard inside `log(1 − tanh² + c)`.
pub const TANH_GUARD: f64 = 1e-6;
pub const LOG_STD_BIAS_INIT: f64 = -1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Stochastic,
    Greedy,
}

/// Tanh-squashed diagonal Gaussian policy. The network emits
/// `[μ (action_dim) | log σ (action_dim)]`.
#[derive(Debug, Clone)]
pub struct GaussianPolicyHead {
    pub spec: MlpSpec,
    pub params: ParamVector,
    action_dim: usize,
}

/// Batched policy output, kept for the reparameterized backward pass.
#[derive(Debug, Clone)]
pub struct PolicyBatch {
    pub actions: Array2<f64>,
    pub log_probs: Array1<f64>,
    cache: ForwardCache,
    noise: Array2<f64>,
    sigma: Array2<f64>,
    /// Raw log-std inside the clamp range (gradient passes).
    in_range: Array2<bool>,
}

fn half_log_two_pi() -> f64 {
    0.5 * (2.0 * PI).ln()
}

impl GaussianPolicyHead {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, action_dim: usize, hidden: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_dim);
        let spec = MlpSpec::new(sizes, activation)?;
        let params = Self::init_params(&spec, action_dim, rng);
        Ok(Self { spec, params, action_dim })
    }

    pub fn from_parts(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        if spec.output_dim() % 2 != 0 || params.len() != spec.n_params() {
            return Err(param_err("policy head needs an even output width and matching parameters"));
        }
        let action_dim = spec.output_dim() / 2;
        Ok(Self { spec, params, action_dim })
    }

    pub fn init_params<R: Rng + ?Sized>(spec: &MlpSpec, action_dim: usize, rng: &mut R) -> ParamVector {
        let mut params = spec.init(rng);
        let last_bias = spec
            .manifest()
            .into_iter()
            .filter(|s| s.kind == SegmentKind::Bias)
            .last()
            .expect("at least one layer");
        let v = params.values_mut();
        for b in &mut v[last_bias.offset + action_dim..last_bias.offset + 2 * action_dim] {
            *b = LOG_STD_BIAS_INIT;
        }
        params
    }

    pub fn reinit<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.params = Self::init_params(&self.spec, self.action_dim, rng);
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.spec.input_dim()
    }

    /// Draws noise (zero for greedy) and evaluates the policy on a batch.
    pub fn sample_batch<R: Rng + ?Sized>(&self, obs: ArrayView2<'_, f64>, rng: &mut R, mode: SampleMode) -> Result<PolicyBatch> {
        let shape = (obs.nrows(), self.action_dim);
        let noise = match mode {
            SampleMode::Stochastic => Array2::from_shape_simple_fn(shape, || rng.sample::<f64, _>(StandardNormal)),
            SampleMode::Greedy => Array2::zeros(shape),
        };
        self.evaluate(obs, noise)
    }

    /// Deterministic evaluation for given standard-normal noise.
    pub fn evaluate(&self, obs: ArrayView2<'_, f64>, noise: Array2<f64>) -> Result<PolicyBatch> {
        let d = self.action_dim;
        if noise.dim() != (obs.nrows(), d) {
            return Err(param_err("noise shape does not match batch"));
        }
        let (out, cache) = forward_batch(&self.params, &self.spec, obs)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("policy head produced a non-finite output".into()));
        }
        let mu = out.slice(s![.., ..d]);
        let raw_ls = out.slice(s![.., d..]);
        let in_range = raw_ls.mapv(|v| (LOG_STD_MIN..=LOG_STD_MAX).contains(&v));
        let log_std = raw_ls.mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        let sigma = log_std.mapv(f64::exp);
        let pre = &mu + &(&sigma * &noise);
        let actions = pre.mapv(f64::tanh);
        let c = half_log_two_pi();
        let mut log_probs = Array1::zeros(obs.nrows());
        for (i, lp) in log_probs.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..d {
                let a = actions[[i, j]];
                let e = noise[[i, j]];
                acc += -0.5 * e * e - log_std[[i, j]] - c - (1.0 - a * a + TANH_GUARD).ln();
            }
            *lp = acc;
        }
        Ok(PolicyBatch {
            actions,
            log_probs,
            cache,
            noise,
            sigma,
            in_range,
        })
    }

    /// Accumulates into `grad` the parameter gradient of
    /// `Σ_i d_action_i · a_i + d_logp_i · log π(a_i)` along the
    /// reparameterized path (noise held fixed).
    pub fn backward(
        &self,
        batch: &PolicyBatch,
        d_action: ArrayView2<'_, f64>,
        d_logp: ArrayView1<'_, f64>,
        grad: &mut ParamVector,
    ) -> Result<()> {
        let d = self.action_dim;
        let n = batch.actions.nrows();
        if d_action.dim() != (n, d) || d_logp.len() != n {
            return Err(param_err("upstream shapes do not match the policy batch"));
        }
        let mut upstream = Array2::zeros((n, 2 * d));
        for i in 0..n {
            for j in 0..d {
                let a = batch.actions[[i, j]];
                let sech2 = 1.0 - a * a;
                let sig_eps = batch.sigma[[i, j]] * batch.noise[[i, j]];
                // ∂logπ/∂pre through the tanh correction term.
                let dlp_dpre = 2.0 * a * sech2 / (sech2 + TANH_GUARD);
                let g_mu = d_action[[i, j]] * sech2 + d_logp[i] * dlp_dpre;
                let g_ls = d_action[[i, j]] * sech2 * sig_eps + d_logp[i] * (-1.0 + dlp_dpre * sig_eps);
                upstream[[i, j]] = g_mu;
                upstream[[i, d + j]] = if batch.in_range[[i, j]] { g_ls } else { 0.0 };
            }
        }
        backward_batch(&self.params, &self.spec, &batch.cache, upstream.view(), grad)?;
        Ok(())
    }
}

/// Single-state action and log-probability.
pub fn policy_sample<R: Rng + ?Sized>(head: &GaussianPolicyHead, state: &[f64], rng: &mut R, mode: SampleMode) -> Result<(Vec<f64>, f64)> {
    let obs = ArrayView2::from_shape((1, state.len()), state).map_err(|_| param_err("state shape"))?;
    let batch = head.sample_batch(obs, rng, mode)?;
    Ok((batch.actions.row(0).to_vec(), batch.log_probs[0]))
}
