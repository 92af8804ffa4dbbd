//! Randomized certificate run over one MDP: the mean/lower-bound error
//! identity, fixed-point agreement, contraction and the zero-error case.

use rand::Rng;
use serde::Serialize;

use crate::error::{param_err, Result};
use crate::error_lab::{
    contraction_certificate, direct_errors, ensemble_stats, fixed_point_iterate, zero_error_check, EnsembleTable, ErrorField,
    ErrorOperator, OperatorVariant, Witness, FIXED_POINT_MAX_ITERS, FIXED_POINT_TOL,
};
use crate::mdp::{exact_soft_q, MdpSpec, TabularPolicy};
use crate::rng::stream;
use crate::table::SaTable;

pub const IDENTITY_TOL: f64 = 1e-10;
pub const FIXED_POINT_MATCH_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub trials: usize,
    pub pairs_per_operator: usize,
    pub gamma: f64,
    pub lemma1_max_gap: f64,
    pub fixedpoint_max_gap: f64,
    pub contraction_max_ratio: f64,
    /// Operator evaluations where `f₁ ≤ f₂` did not give `U f₁ ≤ U f₂`.
    /// Reported only; never fails the run.
    pub monotonicity_violations: usize,
    pub zero_error_cases: Vec<ZeroErrorCase>,
    /// Cases whose outcome differs from the expected one.
    pub zero_error_failures: usize,
    pub passed: bool,
}

/// One zero-error check: an exact replicated critic must pass, a scattered
/// ensemble must fail with witnesses.
#[derive(Debug, Clone, Serialize)]
pub struct ZeroErrorCase {
    pub trial: usize,
    pub ensemble: &'static str,
    pub beta: f64,
    pub expected: bool,
    pub holds: bool,
    pub witnesses: Vec<Witness>,
}

/// A random critic ensemble scattered around the exact soft Q.
pub fn random_ensemble<R: Rng + ?Sized>(q: &SaTable, k: usize, spread: f64, rng: &mut R) -> Result<EnsembleTable> {
    let members = (0..k)
        .map(|_| SaTable::from_fn(q.n_states(), q.n_actions(), |s, a| q.get(s, a) + rng.gen_range(-spread..spread)))
        .collect();
    EnsembleTable::new(members)
}

pub fn verify_mdp(mdp: &MdpSpec, trials: usize, pairs: usize, seed: u64) -> Result<VerifyReport> {
    mdp.validate()?;
    if trials == 0 || pairs == 0 {
        return Err(param_err("trials and pairs must be positive"));
    }
    let mut rng = stream(seed, 0);
    let mut identity_gap = 0.0_f64;
    let mut fp_gap = 0.0_f64;
    let mut max_ratio = 0.0_f64;
    let mut mono = 0;
    let mut cases = Vec::with_capacity(2 * trials);
    for trial in 0..trials {
        let pi = TabularPolicy::random(mdp.n_states, mdp.n_actions, &mut rng);
        let alpha = rng.gen_range(0.0..1.0);
        let beta = rng.gen_range(0.0..2.0);
        let k = if trial % 2 == 0 { 2 } else { 4 };
        let q = exact_soft_q(mdp, &pi, alpha)?;
        let ens = random_ensemble(&q, k, 5.0, &mut rng)?;
        let stats = ensemble_stats(&ens, beta)?;
        let (u_mean, u_lb) = direct_errors(mdp, &pi, &ens, beta, alpha)?;
        for (s, a, lb) in u_lb.iter() {
            let gap = (lb - u_mean.get(s, a) - beta * stats.std.get(s, a)).abs();
            identity_gap = identity_gap.max(gap);
        }
        for (variant, direct) in [(OperatorVariant::Mean, &u_mean), (OperatorVariant::LowerBound, &u_lb)] {
            let op = ErrorOperator::from_ensemble(mdp, &pi, &ens, beta, alpha, variant)?;
            let start = ErrorField::zeros(mdp.n_states, mdp.n_actions);
            let fp = fixed_point_iterate(&start, &op, FIXED_POINT_TOL, FIXED_POINT_MAX_ITERS)?;
            fp_gap = fp_gap.max(fp.field.0.sup_dist(direct));
            let cert = contraction_certificate(&op, pairs, &mut rng)?;
            max_ratio = max_ratio.max(cert.max_ratio);
            mono += cert.monotonicity_violations;
        }
        for (label, ensemble, expected) in [("exact", EnsembleTable::replicated(&q, k)?, true), ("scattered", ens, false)] {
            let r = zero_error_check(mdp, &pi, &ensemble, beta, alpha)?;
            cases.push(ZeroErrorCase {
                trial,
                ensemble: label,
                beta,
                expected,
                holds: r.holds,
                witnesses: r.witnesses,
            });
        }
    }
    let zero_fail = cases.iter().filter(|c| c.holds != c.expected).count();
    let passed = identity_gap <= IDENTITY_TOL && fp_gap <= FIXED_POINT_MATCH_TOL && max_ratio <= mdp.gamma + 1e-9 && zero_fail == 0;
    Ok(VerifyReport {
        trials,
        pairs_per_operator: pairs,
        gamma: mdp.gamma,
        lemma1_max_gap: identity_gap,
        fixedpoint_max_gap: fp_gap,
        contraction_max_ratio: max_ratio,
        monotonicity_violations: mono,
        zero_error_cases: cases,
        zero_error_failures: zero_fail,
        passed,
    })
}
