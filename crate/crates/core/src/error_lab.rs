//! Exact approximation-error calculus for critic ensembles on tabular MDPs.
//!
//! For a fixed policy π and an ensemble of tabular critics `Q^1 … Q^k`:
//!
//! * `U^μ = Q − Q^μ` and `U^lb = Q − Q^lb` are the mean and lower-bound
//!   approximation errors against the true soft Q-values;
//! * `u^μ`, `u^lb` are the one-step temporal errors against the mean and
//!   lower-bound targets, evaluated here in expectation over `s' ~ P(·|s,a)`;
//! * the error operators `U^μ(f) = u^μ + γ P_π f` and
//!   `U^lb(f) = u^lb + β Q^σ + γ P_π f` are γ-contractions whose fixed points
//!   are exactly `U^μ` and `U^lb`.

use rand::Rng;
use serde::Serialize;

use crate::error::{param_err, Error, Result};
use crate::mdp::{exact_soft_q, solve_policy_system, MdpSpec, TabularPolicy};
use crate::table::SaTable;

/// Default iteration tolerance for [`fixed_point_iterate`].
pub const FIXED_POINT_TOL: f64 = 1e-10;
/// Default iteration cap for [`fixed_point_iterate`].
pub const FIXED_POINT_MAX_ITERS: usize = 100_000;
/// Slack allowed on `‖U f₁ − U f₂‖∞ ≤ γ‖f₁ − f₂‖∞`.
pub const CONTRACTION_SLACK: f64 = 1e-9;
/// Threshold used by [`zero_error_check`].
pub const ZERO_ERROR_TOL: f64 = 1e-9;
const MAX_WITNESSES: usize = 10;

/// `k` tabular critics sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleTable {
    members: Vec<SaTable>,
}

impl EnsembleTable {
    pub fn new(members: Vec<SaTable>) -> Result<Self> {
        let first = members.first().ok_or_else(|| param_err("ensemble needs at least one member"))?;
        let shape = first.shape();
        if members.iter().any(|m| m.shape() != shape) {
            return Err(param_err("ensemble members differ in shape"));
        }
        Ok(Self { members })
    }

    /// `k` copies of the same table.
    pub fn replicated(q: &SaTable, k: usize) -> Result<Self> {
        Self::new(vec![q.clone(); k])
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[SaTable] {
        &self.members
    }

    pub fn shape(&self) -> (usize, usize) {
        self.members[0].shape()
    }
}

/// Mean, population standard deviation and lower bound `mean − β·std`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub mean: SaTable,
    pub std: SaTable,
    pub lower_bound: SaTable,
    pub beta: f64,
}

/// Population (divide-by-k) mean and std of a slice, two-pass. Agreeing
/// values give exactly `(x, 0)`, which a rounded sum does not guarantee.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if let Some(&first) = values.first() {
        if values.iter().all(|&v| v == first) {
            return (first, 0.0);
        }
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k;
    (mean, var.sqrt())
}

/// `mean − β·std` of one ensemble readout. Two members use the equivalent
/// `lo + (1−β)·(hi − lo)/2`, which is exact at β = 1 (the member minimum) and
/// when the members agree.
pub fn lower_bound_of(values: &[f64], mean: f64, std: f64, beta: f64) -> f64 {
    match *values {
        [a, b] if beta != 0.0 => {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            lo + (1.0 - beta) * ((hi - lo) / 2.0)
        }
        _ => mean - beta * std,
    }
}

pub fn ensemble_stats(ensemble: &EnsembleTable, beta: f64) -> Result<EnsembleStats> {
    if !(beta >= 0.0) {
        return Err(param_err(format!("beta must be non-negative, got {beta}")));
    }
    let (ns, na) = ensemble.shape();
    let mut mean = SaTable::zeros(ns, na);
    let mut std = SaTable::zeros(ns, na);
    let mut lower_bound = SaTable::zeros(ns, na);
    let mut scratch = vec![0.0; ensemble.k()];
    for s in 0..ns {
        for a in 0..na {
            for (x, m) in scratch.iter_mut().zip(ensemble.members()) {
                *x = m.get(s, a);
            }
            let (mu, sigma) = mean_std(&scratch);
            mean.set(s, a, mu);
            std.set(s, a, sigma);
            lower_bound.set(s, a, lower_bound_of(&scratch, mu, sigma, beta));
        }
    }
    Ok(EnsembleStats {
        mean,
        std,
        lower_bound,
        beta,
    })
}

/// An error-field estimate `f : S × A → ℝ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorField(pub SaTable);

impl ErrorField {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self(SaTable::zeros(n_states, n_actions))
    }

    pub fn constant(n_states: usize, n_actions: usize, c: f64) -> Self {
        Self(SaTable::constant(n_states, n_actions, c))
    }

    /// Entries uniform in `[−bound, bound]`.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, bound: f64, rng: &mut R) -> Self {
        Self(SaTable::from_fn(n_states, n_actions, |_, _| rng.gen_range(-bound..=bound)))
    }

    pub fn values(&self) -> &SaTable {
        &self.0
    }

    pub fn sup_dist(&self, other: &Self) -> f64 {
        self.0.sup_dist(&other.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalErrorTable {
    pub u_mean: SaTable,
    pub u_lb: SaTable,
}

/// `V(s) = E_{a~π}[Q(s,a) − α log π(a|s)]` for every state.
pub fn soft_state_values(pi: &TabularPolicy, q: &SaTable, alpha: f64) -> Vec<f64> {
    (0..q.n_states()).map(|s| pi.expect(s, q) + alpha * pi.entropy(s)).collect()
}

fn check_context(mdp: &MdpSpec, pi: &TabularPolicy, shape: (usize, usize)) -> Result<()> {
    pi.check_against(mdp)?;
    if shape != (mdp.n_states, mdp.n_actions) {
        return Err(param_err(format!(
            "table shape {shape:?} does not match MDP ({}, {})",
            mdp.n_states, mdp.n_actions
        )));
    }
    Ok(())
}

/// Expectation-form temporal errors of the ensemble mean against the mean and
/// lower-bound soft targets.
pub fn temporal_errors(mdp: &MdpSpec, pi: &TabularPolicy, ensemble: &EnsembleTable, beta: f64, alpha: f64) -> Result<TemporalErrorTable> {
    check_context(mdp, pi, ensemble.shape())?;
    if !(alpha >= 0.0) {
        return Err(param_err("alpha must be non-negative"));
    }
    let stats = ensemble_stats(ensemble, beta)?;
    Ok(temporal_errors_from_stats(mdp, pi, &stats, alpha))
}

pub fn temporal_errors_from_stats(mdp: &MdpSpec, pi: &TabularPolicy, stats: &EnsembleStats, alpha: f64) -> TemporalErrorTable {
    let v_mean = soft_state_values(pi, &stats.mean, alpha);
    let v_lb = soft_state_values(pi, &stats.lower_bound, alpha);
    let g = mdp.gamma;
    let u_mean = SaTable::from_fn(mdp.n_states, mdp.n_actions, |s, a| {
        mdp.reward[s][a] + g * mdp.expect_next(s, a, &v_mean) - stats.mean.get(s, a)
    });
    let u_lb = SaTable::from_fn(mdp.n_states, mdp.n_actions, |s, a| {
        mdp.reward[s][a] + g * mdp.expect_next(s, a, &v_lb) - stats.mean.get(s, a)
    });
    TemporalErrorTable { u_mean, u_lb }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorVariant {
    Mean,
    LowerBound,
}

/// Affine error operator `f ↦ c + γ P_π f` with the immediate term `c` fixed
/// at construction.
#[derive(Debug, Clone)]
pub struct ErrorOperator {
    mdp: MdpSpec,
    pi: TabularPolicy,
    immediate: SaTable,
}

impl ErrorOperator {
    /// `U^μ` or `U^lb` built from temporal errors and ensemble statistics.
    pub fn new(
        mdp: &MdpSpec,
        pi: &TabularPolicy,
        temporal: &TemporalErrorTable,
        stats: &EnsembleStats,
        variant: OperatorVariant,
        beta: f64,
    ) -> Result<Self> {
        check_context(mdp, pi, temporal.u_mean.shape())?;
        check_context(mdp, pi, stats.std.shape())?;
        check_context(mdp, pi, temporal.u_lb.shape())?;
        let immediate = match variant {
            OperatorVariant::Mean => temporal.u_mean.clone(),
            OperatorVariant::LowerBound => {
                if !(beta >= 0.0) {
                    return Err(param_err("beta must be non-negative for the lower-bound operator"));
                }
                temporal.u_lb.zip_with(&stats.std, |u, sigma| u + beta * sigma)
            }
        };
        Ok(Self {
            mdp: mdp.clone(),
            pi: pi.clone(),
            immediate,
        })
    }

    /// Builds both operators straight from an ensemble.
    pub fn from_ensemble(
        mdp: &MdpSpec,
        pi: &TabularPolicy,
        ensemble: &EnsembleTable,
        beta: f64,
        alpha: f64,
        variant: OperatorVariant,
    ) -> Result<Self> {
        let stats = ensemble_stats(ensemble, beta)?;
        check_context(mdp, pi, ensemble.shape())?;
        let temporal = temporal_errors_from_stats(mdp, pi, &stats, alpha);
        Self::new(mdp, pi, &temporal, &stats, variant, beta)
    }

    /// Operator with an arbitrary immediate term.
    pub fn affine(mdp: &MdpSpec, pi: &TabularPolicy, immediate: SaTable) -> Result<Self> {
        check_context(mdp, pi, immediate.shape())?;
        Ok(Self {
            mdp: mdp.clone(),
            pi: pi.clone(),
            immediate,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.mdp.gamma
    }

    pub fn immediate(&self) -> &SaTable {
        &self.immediate
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.mdp.n_states, self.mdp.n_actions)
    }

    pub fn apply(&self, f: &ErrorField) -> Result<ErrorField> {
        f.0.check_shape(self.mdp.n_states, self.mdp.n_actions, "error field")?;
        let next: Vec<f64> = (0..self.mdp.n_states).map(|s| self.pi.expect(s, &f.0)).collect();
        let g = self.mdp.gamma;
        Ok(ErrorField(SaTable::from_fn(self.mdp.n_states, self.mdp.n_actions, |s, a| {
            self.immediate.get(s, a) + g * self.mdp.expect_next(s, a, &next)
        })))
    }

    /// Fixed point by direct linear solve of `(I − γ P_π) f = c`.
    pub fn solve(&self) -> Result<ErrorField> {
        Ok(ErrorField(solve_policy_system(&self.mdp, &self.pi, &self.immediate)?))
    }
}

/// One exact application of `U^μ` or `U^lb`.
pub fn apply_error_operator(
    field: &ErrorField,
    temporal: &TemporalErrorTable,
    stats: &EnsembleStats,
    mdp: &MdpSpec,
    pi: &TabularPolicy,
    variant: OperatorVariant,
    beta: f64,
) -> Result<ErrorField> {
    ErrorOperator::new(mdp, pi, temporal, stats, variant, beta)?.apply(field)
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub field: ErrorField,
    pub iterations: usize,
    pub residual: f64,
}

/// Iterates `f ← U(f)` until `‖f_{t+1} − f_t‖∞ ≤ tol`.
pub fn fixed_point_iterate(start: &ErrorField, op: &ErrorOperator, tol: f64, max_iters: usize) -> Result<FixedPoint> {
    if !(tol > 0.0) {
        return Err(param_err("tol must be positive"));
    }
    if max_iters == 0 {
        return Err(param_err("max_iters must be positive"));
    }
    let mut f = start.clone();
    let mut residual = f64::INFINITY;
    for it in 1..=max_iters {
        let next = op.apply(&f)?;
        residual = next.sup_dist(&f);
        f = next;
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            return Ok(FixedPoint {
                field: f,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::Convergence {
        iterations: max_iters,
        residual,
    })
}

/// Direct approximation errors `(Q − Q^μ, Q − Q^lb)` against exact soft Q.
pub fn direct_errors(mdp: &MdpSpec, pi: &TabularPolicy, ensemble: &EnsembleTable, beta: f64, alpha: f64) -> Result<(SaTable, SaTable)> {
    check_context(mdp, pi, ensemble.shape())?;
    let q = exact_soft_q(mdp, pi, alpha)?;
    let stats = ensemble_stats(ensemble, beta)?;
    let u_mean = q.zip_with(&stats.mean, |t, m| t - m);
    let u_lb = q.zip_with(&stats.lower_bound, |t, l| t - l);
    Ok((u_mean, u_lb))
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateReport {
    pub trials: usize,
    pub gamma: f64,
    pub max_ratio: f64,
    /// Trials with `f₁ ≤ f₂` pointwise, checked for `U(f₁) ≤ U(f₂)`.
    pub monotonicity_trials: usize,
    pub monotonicity_violations: usize,
}

/// Randomized check of `‖U f₁ − U f₂‖∞ ≤ γ‖f₁ − f₂‖∞` (entries of `f`
/// uniform in `[−10, 10]`). Monotonicity is tested on paired fields but
/// reported separately and never fails the certificate.
pub fn contraction_certificate<R: Rng + ?Sized>(op: &ErrorOperator, n_trials: usize, rng: &mut R) -> Result<CertificateReport> {
    if n_trials == 0 {
        return Err(param_err("n_trials must be positive"));
    }
    let (ns, na) = op.shape();
    let gamma = op.gamma();
    let mut max_ratio = 0.0_f64;
    let mut mono_violations = 0;
    for trial in 0..n_trials {
        let f1 = ErrorField::random(ns, na, 10.0, rng);
        let f2 = ErrorField::random(ns, na, 10.0, rng);
        let lhs = op.apply(&f1)?.sup_dist(&op.apply(&f2)?);
        let rhs = f1.sup_dist(&f2);
        if lhs > gamma * rhs + CONTRACTION_SLACK {
            return Err(Error::Certificate {
                trial,
                ratio: lhs / rhs,
                gamma,
            });
        }
        if rhs > 0.0 {
            max_ratio = max_ratio.max(lhs / rhs);
        }

        let shift = ErrorField::random(ns, na, 10.0, rng);
        let upper = ErrorField(f1.0.zip_with(&shift.0, |x, d| x + d.abs()));
        let lo = op.apply(&f1)?;
        let hi = op.apply(&upper)?;
        if lo.0.as_slice().iter().zip(hi.0.as_slice()).any(|(l, h)| l > h) {
            mono_violations += 1;
        }
    }
    Ok(CertificateReport {
        trials: n_trials,
        gamma,
        max_ratio,
        monotonicity_trials: n_trials,
        monotonicity_violations: mono_violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WitnessKind {
    /// `Q^μ(s,a) ≠ r + γ E V^μ(s')`.
    TemporalError,
    /// `β Q^σ(s,a) ≠ 0`.
    Disagreement,
    /// `U^μ > 0` but `|U^μ| > |U^lb|`.
    Underestimation,
}

#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub s: usize,
    pub a: usize,
    pub kind: WitnessKind,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ZeroErrorReport {
    /// Both zero-error conditions hold everywhere.
    pub holds: bool,
    pub witnesses: Vec<Witness>,
    /// `U^μ > 0 ⇒ |U^μ| ≤ |U^lb|` at every checked pair.
    pub underestimation_holds: bool,
    pub underestimation_checked: usize,
    pub underestimation_violations: Vec<Witness>,
}

/// Checks the zero-error conditions `u^μ ≡ 0 ∧ βQ^σ ≡ 0` and the
/// underestimation implication.
pub fn zero_error_check(mdp: &MdpSpec, pi: &TabularPolicy, ensemble: &EnsembleTable, beta: f64, alpha: f64) -> Result<ZeroErrorReport> {
    let stats = ensemble_stats(ensemble, beta)?;
    check_context(mdp, pi, ensemble.shape())?;
    let temporal = temporal_errors_from_stats(mdp, pi, &stats, alpha);

    let mut witnesses = Vec::new();
    let mut holds = true;
    for (s, a, u) in temporal.u_mean.iter() {
        let disagreement = beta * stats.std.get(s, a);
        for (kind, magnitude) in [(WitnessKind::TemporalError, u), (WitnessKind::Disagreement, disagreement)] {
            if magnitude.abs() > ZERO_ERROR_TOL {
                holds = false;
                if witnesses.len() < MAX_WITNESSES {
                    witnesses.push(Witness { s, a, kind, magnitude });
                }
            }
        }
    }

    let q = exact_soft_q(mdp, pi, alpha)?;
    let mut checked = 0;
    let mut violations = Vec::new();
    if beta > 0.0 {
        for (s, a, q_true) in q.iter() {
            let u_mean = q_true - stats.mean.get(s, a);
            let u_lb = q_true - stats.lower_bound.get(s, a);
            if u_mean > 0.0 {
                checked += 1;
                if u_mean.abs() > u_lb.abs() && violations.len() < MAX_WITNESSES {
                    violations.push(Witness {
                        s,
                        a,
                        kind: WitnessKind::Underestimation,
                        magnitude: u_mean.abs() - u_lb.abs(),
                    });
                }
            }
        }
    }
    Ok(ZeroErrorReport {
        holds,
        witnesses,
        underestimation_holds: violations.is_empty(),
        underestimation_checked: checked,
        underestimation_violations: violations,
    })
}

/// Derivative of the lower-bound fixed point with respect to β.
///
/// With `hold_temporal_fixed = false` the β-dependence of `u^lb` is included
/// and the result equals `Q^σ`. With `true`, `u^lb` is frozen and only the
/// explicit `βQ^σ` term moves, giving the fixed point of `g ↦ Q^σ + γ P_π g`.
pub fn beta_sensitivity(mdp: &MdpSpec, pi: &TabularPolicy, ensemble: &EnsembleTable, hold_temporal_fixed: bool) -> Result<ErrorField> {
    let stats = ensemble_stats(ensemble, 0.0)?;
    check_context(mdp, pi, ensemble.shape())?;
    let immediate = if hold_temporal_fixed {
        stats.std.clone()
    } else {
        let v_sigma: Vec<f64> = (0..mdp.n_states).map(|s| pi.expect(s, &stats.std)).collect();
        SaTable::from_fn(mdp.n_states, mdp.n_actions, |s, a| {
            stats.std.get(s, a) - mdp.gamma * mdp.expect_next(s, a, &v_sigma)
        })
    };
    ErrorOperator::affine(mdp, pi, immediate)?.solve()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::make_random_mdp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn self_loop_context() -> (MdpSpec, TabularPolicy, EnsembleTable) {
        let mdp = MdpSpec::self_loop(1.0, 0.9).unwrap();
        let pi = TabularPolicy::uniform(1, 1);
        let ens = EnsembleTable::replicated(&SaTable::zeros(1, 1), 2).unwrap();
        (mdp, pi, ens)
    }

    #[test]
    fn stats_of_two_members_reproduce_min() {
        let ens = EnsembleTable::new(vec![SaTable::constant(1, 1, 1.0), SaTable::constant(1, 1, 3.0)]).unwrap();
        let st = ensemble_stats(&ens, 1.0).unwrap();
        assert_eq!(st.mean.get(0, 0), 2.0);
        assert_eq!(st.std.get(0, 0), 1.0);
        assert_eq!(st.lower_bound.get(0, 0), 1.0);
    }

    #[test]
    fn beta_zero_and_identical_members() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = ErrorField::random(3, 2, 5.0, &mut rng).0;
        let b = ErrorField::random(3, 2, 5.0, &mut rng).0;
        let st = ensemble_stats(&EnsembleTable::new(vec![a.clone(), b]).unwrap(), 0.0).unwrap();
        assert_eq!(st.lower_bound, st.mean);
        let st = ensemble_stats(&EnsembleTable::replicated(&a, 4).unwrap(), 2.5).unwrap();
        assert!(st.std.sup_norm() == 0.0);
        assert_eq!(st.lower_bound, st.mean);
    }

    #[test]
    fn empty_ensemble_and_negative_beta_rejected() {
        assert!(EnsembleTable::new(vec![]).is_err());
        let ens = EnsembleTable::replicated(&SaTable::zeros(2, 2), 2).unwrap();
        assert!(ensemble_stats(&ens, -0.1).is_err());
        assert!(EnsembleTable::new(vec![SaTable::zeros(2, 2), SaTable::zeros(2, 3)]).is_err());
    }

    #[test]
    fn self_loop_temporal_error_is_reward() {
        let (mdp, pi, ens) = self_loop_context();
        let t = temporal_errors(&mdp, &pi, &ens, 1.0, 0.0).unwrap();
        assert_eq!(t.u_mean.get(0, 0), 1.0);
    }

    #[test]
    fn exact_critic_has_zero_mean_temporal_error() {
        let mdp = make_random_mdp(5, 3, 0.9, 1).unwrap();
        let pi = TabularPolicy::uniform(5, 3);
        let q = exact_soft_q(&mdp, &pi, 0.2).unwrap();
        let t = temporal_errors(&mdp, &pi, &EnsembleTable::replicated(&q, 3).unwrap(), 0.7, 0.2).unwrap();
        assert!(t.u_mean.sup_norm() < 1e-12);
    }

    #[test]
    fn operator_on_self_loop() {
        let (mdp, pi, ens) = self_loop_context();
        let op = ErrorOperator::from_ensemble(&mdp, &pi, &ens, 1.0, 0.0, OperatorVariant::Mean).unwrap();
        let out = op.apply(&ErrorField::zeros(1, 1)).unwrap();
        assert_eq!(out.0.get(0, 0), 1.0);
        let fp = fixed_point_iterate(&ErrorField::zeros(1, 1), &op, FIXED_POINT_TOL, FIXED_POINT_MAX_ITERS).unwrap();
        assert!((fp.field.0.get(0, 0) - 10.0).abs() < 10.0 * FIXED_POINT_TOL);
    }

    #[test]
    fn constant_fields_contract_by_exactly_gamma() {
        let mdp = make_random_mdp(4, 2, 0.8, 2).unwrap();
        let pi = TabularPolicy::uniform(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ens = EnsembleTable::new(vec![
            ErrorField::random(4, 2, 3.0, &mut rng).0,
            ErrorField::random(4, 2, 3.0, &mut rng).0,
        ])
        .unwrap();
        for variant in [OperatorVariant::Mean, OperatorVariant::LowerBound] {
            let op = ErrorOperator::from_ensemble(&mdp, &pi, &ens, 0.5, 0.1, variant).unwrap();
            let d = op
                .apply(&ErrorField::constant(4, 2, 3.0))
                .unwrap()
                .sup_dist(&op.apply(&ErrorField::constant(4, 2, -1.5)).unwrap());
            assert!((d - 0.8 * 4.5).abs() < 1e-12);
            let f = ErrorField::random(4, 2, 10.0, &mut rng);
            assert_eq!(op.apply(&f).unwrap().sup_dist(&op.apply(&f).unwrap()), 0.0);
        }
    }

    #[test]
    fn lower_bound_operator_at_beta_zero_matches_mean() {
        let mdp = make_random_mdp(3, 3, 0.9, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pi = TabularPolicy::random(3, 3, &mut rng);
        let ens = EnsembleTable::new((0..3).map(|_| ErrorField::random(3, 3, 2.0, &mut rng).0).collect()).unwrap();
        let stats = ensemble_stats(&ens, 0.0).unwrap();
        let t = temporal_errors(&mdp, &pi, &ens, 0.0, 0.3).unwrap();
        let f = ErrorField::random(3, 3, 10.0, &mut rng);
        let a = apply_error_operator(&f, &t, &stats, &mdp, &pi, OperatorVariant::Mean, 0.0).unwrap();
        let b = apply_error_operator(&f, &t, &stats, &mdp, &pi, OperatorVariant::LowerBound, 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_is_parameter_error() {
        let (mdp, pi, ens) = self_loop_context();
        let op = ErrorOperator::from_ensemble(&mdp, &pi, &ens, 1.0, 0.0, OperatorVariant::Mean).unwrap();
        assert!(matches!(op.apply(&ErrorField::zeros(2, 1)), Err(Error::Parameter(_))));
    }

    #[test]
    fn non_convergence_reports_residual() {
        let (mdp, pi, ens) = self_loop_context();
        let op = ErrorOperator::from_ensemble(&mdp, &pi, &ens, 1.0, 0.0, OperatorVariant::Mean).unwrap();
        match fixed_point_iterate(&ErrorField::zeros(1, 1), &op, 1e-12, 5) {
            Err(Error::Convergence { iterations, residual }) => {
                assert_eq!(iterations, 5);
                assert!(residual > 0.5);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn zero_error_holds_for_exact_replicated_critic() {
        let mdp = make_random_mdp(4, 2, 0.9, 4).unwrap();
        let pi = TabularPolicy::uniform(4, 2);
        let q = exact_soft_q(&mdp, &pi, 0.1).unwrap();
        let ens = EnsembleTable::replicated(&q, 2).unwrap();
        for beta in [0.0, 1.0] {
            let r = zero_error_check(&mdp, &pi, &ens, beta, 0.1).unwrap();
            assert!(r.holds, "{:?}", r.witnesses);
        }
        let shifted = EnsembleTable::new(vec![q.map(|v| v - 2.0), q.clone()]).unwrap();
        let r = zero_error_check(&mdp, &pi, &shifted, 0.0, 0.1).unwrap();
        assert!(!r.holds);
        assert!(!r.witnesses.is_empty() && r.witnesses.len() <= 10);
    }
}
