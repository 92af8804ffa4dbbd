//! Online pessimism adjustment: fixed β, VPL, GPL, OPL, TOP and the
//! loss × data-source ablation grid, all acting on one scalar β.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdjusterKind {
    #[default]
    Fixed,
    Vpl,
    Gpl,
    Opl,
    Top,
    Ablation,
}

/// Form of the β gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PessimismLoss {
    /// Detached residual (GPL/OPL family).
    Dual,
    /// Squared validation TD error with gradient through V^lb.
    Vpl,
}

/// Where the adjuster's transitions come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Replay,
    Validation,
    /// Recent on-policy window; the action value is a truncated λ-return.
    Online,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PessimismConfig {
    pub adjuster: AdjusterKind,
    pub initial_beta: f64,
    pub lr: f64,
    pub allow_negative_beta: bool,
    /// Ablation only.
    pub loss: Option<PessimismLoss>,
    /// Ablation only.
    pub source: Option<DataSource>,
    pub opl_lambda: f64,
    pub opl_window: usize,
    pub bandit_lr: f64,
    pub bandit_temperature: f64,
}

impl Default for PessimismConfig {
    fn default() -> Self {
        Self {
            adjuster: AdjusterKind::Fixed,
            initial_beta: 1.0,
            lr: 5e-5,
            allow_negative_beta: false,
            loss: None,
            source: None,
            opl_lambda: 0.95,
            opl_window: 8,
            bandit_lr: 0.1,
            bandit_temperature: 0.1,
        }
    }
}

/// A gradient-based adjuster after resolving the named presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradientAdjuster {
    pub loss: PessimismLoss,
    pub source: DataSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResolvedAdjuster {
    Fixed,
    Gradient(GradientAdjuster),
    Top,
}

impl PessimismConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.initial_beta.is_finite() || (self.initial_beta < 0.0 && !self.allow_negative_beta) {
            return Err(param_err(format!("initial_beta {} outside the allowed domain", self.initial_beta)));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(param_err("pessimism lr must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.opl_lambda) || self.opl_window == 0 {
            return Err(param_err("opl_lambda must lie in [0, 1] and opl_window be positive"));
        }
        if !(self.bandit_lr > 0.0 && self.bandit_lr <= 1.0) || !(self.bandit_temperature > 0.0 && self.bandit_temperature.is_finite()) {
            return Err(param_err("bandit_lr must lie in (0, 1] and bandit_temperature be positive"));
        }
        let has_ablation_keys = self.loss.is_some() || self.source.is_some();
        match self.adjuster {
            AdjusterKind::Ablation if self.loss.is_none() || self.source.is_none() => {
                Err(Error::Config("the ablation adjuster requires both `loss` and `source`".into()))
            }
            AdjusterKind::Ablation => Ok(()),
            _ if has_ablation_keys => Err(Error::Config(
                "`loss` and `source` are only valid with the ablation adjuster".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn resolve(&self) -> Result<ResolvedAdjuster> {
        self.validate()?;
        let grad = |loss, source| ResolvedAdjuster::Gradient(GradientAdjuster { loss, source });
        Ok(match self.adjuster {
            AdjusterKind::Fixed => ResolvedAdjuster::Fixed,
            AdjusterKind::Top => ResolvedAdjuster::Top,
            AdjusterKind::Vpl => grad(PessimismLoss::Vpl, DataSource::Validation),
            AdjusterKind::Gpl => grad(PessimismLoss::Dual, DataSource::Replay),
            AdjusterKind::Opl => grad(PessimismLoss::Dual, DataSource::Online),
            AdjusterKind::Ablation => grad(self.loss.expect("validated"), self.source.expect("validated")),
        })
    }
}

/// Shared β seen by the critic target, the actor and the adjuster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PessimismState {
    pub beta: f64,
    pub pessimism_lr: f64,
    pub allow_negative_beta: bool,
}

impl PessimismState {
    pub fn new(beta: f64, pessimism_lr: f64) -> Self {
        Self {
            beta,
            pessimism_lr,
            allow_negative_beta: false,
        }
    }

    /// `β ← max(0, β − lr·g)` (no clamp when negative β is allowed).
    pub fn descend(&mut self, gradient: f64) -> Result<f64> {
        if !gradient.is_finite() {
            return Err(Error::Numeric(format!("non-finite pessimism gradient {gradient}")));
        }
        let next = self.beta - self.pessimism_lr * gradient;
        self.beta = if self.allow_negative_beta { next } else { next.max(0.0) };
        Ok(self.beta)
    }
}

/// Frozen per-transition quantities that every β gradient is built from.
/// `q_estimate` is the critic mean `Q^μ(s,a)` or a λ-return standing in for it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrozenBatch {
    pub q_estimate: Vec<f64>,
    pub reward: Vec<f64>,
    pub next_mean: Vec<f64>,
    pub next_std: Vec<f64>,
    /// `α·log π(a'|s')`.
    pub next_alpha_logp: Vec<f64>,
    /// 1 for non-terminal transitions, 0 otherwise.
    pub bootstrap: Vec<f64>,
}

impl FrozenBatch {
    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.reward.len();
        let lens = [
            self.q_estimate.len(),
            self.next_mean.len(),
            self.next_std.len(),
            self.next_alpha_logp.len(),
            self.bootstrap.len(),
        ];
        if lens.iter().any(|&l| l != n) {
            return Err(param_err("frozen batch columns differ in length"));
        }
        Ok(())
    }

    pub fn next_v_lb(&self, i: usize, beta: f64) -> f64 {
        self.next_mean[i] - beta * self.next_std[i] - self.next_alpha_logp[i]
    }

    /// `δ_i = q_i − r_i − γ·V^lb(s'_i)`.
    pub fn residuals(&self, beta: f64, gamma: f64) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.q_estimate[i] - self.reward[i] - gamma * self.bootstrap[i] * self.next_v_lb(i, beta))
            .collect()
    }

    /// Mean squared residual, the objective VPL descends.
    pub fn vpl_loss(&self, beta: f64, gamma: f64) -> f64 {
        let d = self.residuals(beta, gamma);
        d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64
    }

    /// `mean(2·δ·γ·Q^σ')`, the β-derivative of [`Self::vpl_loss`].
    pub fn vpl_gradient(&self, beta: f64, gamma: f64) -> f64 {
        let d = self.residuals(beta, gamma);
        let n = d.len() as f64;
        d.iter()
            .enumerate()
            .map(|(i, di)| 2.0 * di * gamma * self.bootstrap[i] * self.next_std[i])
            .sum::<f64>()
            / n
    }

    /// `mean(δ̄)` with δ̄ detached.
    pub fn dual_gradient(&self, beta: f64, gamma: f64) -> f64 {
        let d = self.residuals(beta, gamma);
        d.iter().sum::<f64>() / d.len() as f64
    }

    pub fn gradient(&self, loss: PessimismLoss, beta: f64, gamma: f64) -> f64 {
        match loss {
            PessimismLoss::Vpl => self.vpl_gradient(beta, gamma),
            PessimismLoss::Dual => self.dual_gradient(beta, gamma),
        }
    }
}

/// What an adjuster did on one call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdjustOutcome {
    Updated { gradient: f64, beta: f64 },
    Skipped,
}

fn gradient_update(state: &mut PessimismState, batch: &FrozenBatch, gamma: f64, loss: PessimismLoss) -> Result<AdjustOutcome> {
    batch.check()?;
    if batch.is_empty() {
        return Ok(AdjustOutcome::Skipped);
    }
    let gradient = batch.gradient(loss, state.beta, gamma);
    let beta = state.descend(gradient)?;
    Ok(AdjustOutcome::Updated { gradient, beta })
}

/// VPL step on a batch drawn from the validation buffer.
pub fn vpl_update(state: &mut PessimismState, validation: &FrozenBatch, gamma: f64) -> Result<AdjustOutcome> {
    gradient_update(state, validation, gamma, PessimismLoss::Vpl)
}

/// GPL step on a replay batch; the residual carries no gradient.
pub fn gpl_update(state: &mut PessimismState, replay: &FrozenBatch, gamma: f64) -> Result<AdjustOutcome> {
    gradient_update(state, replay, gamma, PessimismLoss::Dual)
}

/// Step of an arbitrary loss × source combination on a prepared batch.
pub fn ablation_update(adjuster: GradientAdjuster, state: &mut PessimismState, batch: &FrozenBatch, gamma: f64) -> Result<AdjustOutcome> {
    gradient_update(state, batch, gamma, adjuster.loss)
}

/// One transition of the on-policy window.
#[derive(Debug, Clone, PartialEq)]
pub struct OplRecord {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

/// The most recent `capacity` transitions of the current episode.
#[derive(Debug, Clone)]
pub struct OplState {
    pub window: VecDeque<OplRecord>,
    pub capacity: usize,
    pub lambda: f64,
}

impl OplState {
    pub fn new(capacity: usize, lambda: f64) -> Result<Self> {
        if capacity == 0 || !(0.0..=1.0).contains(&lambda) {
            return Err(param_err("OPL window must be positive and λ in [0, 1]"));
        }
        Ok(Self {
            window: VecDeque::with_capacity(capacity),
            capacity,
            lambda,
        })
    }

    pub fn push(&mut self, record: OplRecord) {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(record);
    }

    pub fn clear(&mut self) {
        self.window.clear();
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }
}

/// Truncated λ-returns over a window in arrival order.
///
/// `next_v[t]` is the bootstrap value at `s_{t+1}`; the last entry bootstraps
/// fully, earlier entries mix `(1−λ)·V(s_{t+1}) + λ·G_{t+1}`.
pub fn opl_lambda_return(rewards: &[f64], next_v: &[f64], bootstrap: &[f64], lambda: f64, gamma: f64) -> Result<Vec<f64>> {
    let n = rewards.len();
    if n == 0 {
        return Err(param_err("λ-return of an empty window"));
    }
    if next_v.len() != n || bootstrap.len() != n {
        return Err(param_err("λ-return inputs differ in length"));
    }
    let mut out = vec![0.0; n];
    out[n - 1] = rewards[n - 1] + gamma * bootstrap[n - 1] * next_v[n - 1];
    for t in (0..n - 1).rev() {
        let tail = (1.0 - lambda) * next_v[t] + lambda * out[t + 1];
        out[t] = rewards[t] + gamma * bootstrap[t] * tail;
    }
    Ok(out)
}

/// OPL dual step. `batch.q_estimate` must hold the λ-returns of the window.
pub fn opl_update(state: &mut PessimismState, window_batch: &FrozenBatch, gamma: f64) -> Result<AdjustOutcome> {
    gradient_update(state, window_batch, gamma, PessimismLoss::Dual)
}

/// Softmax two-armed bandit over β ∈ {0, 1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopBanditState {
    pub arm_values: [f64; 2],
    pub bandit_lr: f64,
    pub temperature: f64,
    pub current_arm: Option<usize>,
    pub return_min: Option<f64>,
    pub return_max: Option<f64>,
}

pub const TOP_ARMS: [f64; 2] = [0.0, 1.0];

impl TopBanditState {
    pub fn new(bandit_lr: f64, temperature: f64) -> Self {
        Self {
            arm_values: [0.0, 0.0],
            bandit_lr,
            temperature,
            current_arm: None,
            return_min: None,
            return_max: None,
        }
    }

    pub fn arm_probabilities(&self) -> [f64; 2] {
        let z = [self.arm_values[0] / self.temperature, self.arm_values[1] / self.temperature];
        let m = z[0].max(z[1]);
        let e = [(z[0] - m).exp(), (z[1] - m).exp()];
        let s = e[0] + e[1];
        [e[0] / s, e[1] / s]
    }

    fn normalize(&mut self, ret: f64) -> f64 {
        let lo = self.return_min.map_or(ret, |m| m.min(ret));
        let hi = self.return_max.map_or(ret, |m| m.max(ret));
        self.return_min = Some(lo);
        self.return_max = Some(hi);
        if hi > lo {
            (ret - lo) / (hi - lo)
        } else {
            0.5
        }
    }
}

/// Samples an arm for the coming episode and returns its β.
pub fn top_select<R: Rng + ?Sized>(bandit: &mut TopBanditState, rng: &mut R) -> f64 {
    let p = bandit.arm_probabilities();
    let arm = usize::from(rng.gen::<f64>() >= p[0]);
    bandit.current_arm = Some(arm);
    TOP_ARMS[arm]
}

/// EMA update of the selected arm with the min-max normalized return.
pub fn top_update(bandit: &mut TopBanditState, episode_return: f64) -> Result<()> {
    let arm = bandit
        .current_arm
        .take()
        .ok_or_else(|| Error::Usage("bandit update without a selected arm".into()))?;
    if !episode_return.is_finite() {
        return Err(Error::Numeric(format!("non-finite episode return {episode_return}")));
    }
    let x = bandit.normalize(episode_return);
    let lr = bandit.bandit_lr;
    bandit.arm_values[arm] = (1.0 - lr) * bandit.arm_values[arm] + lr * x;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_batch(next_std: f64) -> FrozenBatch {
        FrozenBatch {
            q_estimate: vec![2.0],
            reward: vec![0.5],
            next_mean: vec![2.0],
            next_std: vec![next_std],
            next_alpha_logp: vec![0.0],
            bootstrap: vec![1.0],
        }
    }

    #[test]
    fn vpl_scalar_example() {
        let b = scalar_batch(0.5);
        let d = b.residuals(1.0, 0.99)[0];
        assert!((d - 0.015).abs() < 1e-12);
        assert!((b.vpl_gradient(1.0, 0.99) - 0.01485).abs() < 1e-12);
    }

    #[test]
    fn zero_disagreement_freezes_vpl() {
        let mut st = PessimismState::new(0.7, 0.1);
        let out = vpl_update(&mut st, &scalar_batch(0.0), 0.99).unwrap();
        assert_eq!(out, AdjustOutcome::Updated { gradient: 0.0, beta: 0.7 });
    }

    #[test]
    fn gpl_step_ignores_disagreement_scale() {
        // δ̄ held at 0.015 while Q^σ' changes: shift Q^μ' to compensate.
        let mut a = scalar_batch(0.5);
        let mut b = scalar_batch(1.0);
        b.next_mean[0] += 0.5;
        let ga = a.dual_gradient(1.0, 0.99);
        let gb = b.dual_gradient(1.0, 0.99);
        assert!((ga - gb).abs() < 1e-12);
        a.next_std[0] = 0.0;
        assert!(a.dual_gradient(1.0, 0.99) < ga);
    }

    #[test]
    fn beta_stays_nonnegative() {
        let mut st = PessimismState::new(0.01, 10.0);
        st.descend(5.0).unwrap();
        assert_eq!(st.beta, 0.0);
        st.allow_negative_beta = true;
        st.descend(5.0).unwrap();
        assert!(st.beta < 0.0);
        assert!(st.descend(f64::NAN).is_err());
    }

    #[test]
    fn lambda_return_cases() {
        let g = opl_lambda_return(&[1.0, 1.0], &[0.0, 0.0], &[1.0, 1.0], 0.5, 0.9).unwrap();
        assert!((g[0] - 1.45).abs() < 1e-12);
        let one = opl_lambda_return(&[1.0, 2.0], &[3.0, 4.0], &[1.0, 1.0], 0.0, 0.9).unwrap();
        assert!((one[0] - (1.0 + 0.9 * 3.0)).abs() < 1e-12);
        let mc = opl_lambda_return(&[1.0, 2.0], &[3.0, 4.0], &[1.0, 1.0], 1.0, 0.9).unwrap();
        assert!((mc[0] - (1.0 + 0.9 * 2.0 + 0.81 * 4.0)).abs() < 1e-12);
        assert!(opl_lambda_return(&[], &[], &[], 0.5, 0.9).is_err());
    }

    #[test]
    fn opl_numeric_example() {
        let window = FrozenBatch {
            q_estimate: vec![1.45],
            reward: vec![1.0],
            next_mean: vec![1.0],
            next_std: vec![0.0],
            next_alpha_logp: vec![0.0],
            bootstrap: vec![1.0],
        };
        let mut st = PessimismState::new(1.0, 0.1);
        opl_update(&mut st, &window, 0.9).unwrap();
        assert!((st.beta - (1.0 + 0.1 * 0.45)).abs() < 1e-12);
    }

    #[test]
    fn window_keeps_last_entries() {
        let mut w = OplState::new(3, 0.9).unwrap();
        for i in 0..5 {
            w.push(OplRecord {
                obs: vec![i as f64],
                action: vec![0.0],
                reward: i as f64,
                next_obs: vec![0.0],
                terminal: false,
            });
        }
        let r: Vec<_> = w.window.iter().map(|x| x.reward).collect();
        assert_eq!(r, vec![2.0, 3.0, 4.0]);
        w.clear();
        assert!(w.is_empty());
    }

    #[test]
    fn bandit_selection_and_update() {
        let mut b = TopBanditState::new(0.1, 1.0);
        assert_eq!(b.arm_probabilities(), [0.5, 0.5]);
        assert!(matches!(top_update(&mut b, 1.0), Err(Error::Usage(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        top_select(&mut b, &mut rng);
        let arm = b.current_arm.unwrap();
        top_update(&mut b, -3.0).unwrap();
        assert!((b.arm_values[arm] - 0.05).abs() < 1e-15);
        b.arm_values = [0.0, 10.0];
        assert!(b.arm_probabilities()[1] > 0.99);
    }

    #[test]
    fn config_validation() {
        let mut c = PessimismConfig {
            adjuster: AdjusterKind::Ablation,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.loss = Some(PessimismLoss::Vpl);
        c.source = Some(DataSource::Replay);
        assert_eq!(
            c.resolve().unwrap(),
            ResolvedAdjuster::Gradient(GradientAdjuster {
                loss: PessimismLoss::Vpl,
                source: DataSource::Replay
            })
        );
        c.adjuster = AdjusterKind::Gpl;
        assert!(c.validate().is_err());
        let json: PessimismConfig = serde_json::from_str(r#"{"adjuster":"vpl","lr":0.005}"#).unwrap();
        assert_eq!(json.lr, 0.005);
        assert!(serde_json::from_str::<PessimismConfig>(r#"{"adjuster":"vpl","bogus":1}"#).is_err());
    }
}
