//! Finite MDPs with exact soft policy evaluation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::table::SaTable;

const PROB_TOL: f64 = 1e-12;

/// Residual bound enforced on every exact solve.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

/// Finite discounted MDP. JSON layout is row-major:
/// `transition[s][a][s']`, `reward[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub p0: Vec<f64>,
    pub reward: Vec<Vec<f64>>,
    pub transition: Vec<Vec<Vec<f64>>>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(param_err(format!("{what}: negative or non-finite probability")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(param_err(format!("{what}: sums to {sum}, not 1")));
    }
    Ok(())
}

impl MdpSpec {
    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(param_err("n_states and n_actions must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(param_err(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.p0.len() != ns {
            return Err(param_err("p0 length differs from n_states"));
        }
        check_distribution(&self.p0, "p0")?;
        if self.reward.len() != ns || self.reward.iter().any(|r| r.len() != na) {
            return Err(param_err("reward shape must be [n_states][n_actions]"));
        }
        if self.reward.iter().flatten().any(|r| !r.is_finite()) {
            return Err(param_err("reward contains non-finite entries"));
        }
        if self.transition.len() != ns {
            return Err(param_err("transition shape must be [n_states][n_actions][n_states]"));
        }
        for (s, rows) in self.transition.iter().enumerate() {
            if rows.len() != na {
                return Err(param_err("transition shape must be [n_states][n_actions][n_states]"));
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != ns {
                    return Err(param_err("transition shape must be [n_states][n_actions][n_states]"));
                }
                check_distribution(row, &format!("transition[{s}][{a}]"))?;
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mdp: Self = serde_json::from_str(text)?;
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn reward_table(&self) -> SaTable {
        SaTable::from_fn(self.n_states, self.n_actions, |s, a| self.reward[s][a])
    }

    /// `Σ_{s'} P[s][a][s'] · g(s')`.
    pub fn expect_next(&self, s: usize, a: usize, g: &[f64]) -> f64 {
        self.transition[s][a].iter().zip(g).map(|(p, v)| p * v).sum()
    }

    /// Single absorbing state with one action and constant reward.
    pub fn self_loop(reward: f64, gamma: f64) -> Result<Self> {
        let mdp = Self {
            n_states: 1,
            n_actions: 1,
            gamma,
            p0: vec![1.0],
            reward: vec![vec![reward]],
            transition: vec![vec![vec![1.0]]],
        };
        mdp.validate()?;
        Ok(mdp)
    }
}

/// Dirichlet(1, …, 1) draw via normalized unit exponentials.
fn flat_dirichlet<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    // Push the rounding residue into the largest entry so the row sums to 1 tightly.
    let residue = 1.0 - w.iter().sum::<f64>();
    if let Some(m) = w.iter_mut().max_by(|a, b| a.partial_cmp(b).expect("finite weights")) {
        *m += residue;
    }
    w
}

/// Random finite MDP: Dirichlet(1) transition rows, uniform `[0, 1]` rewards,
/// uniform initial distribution. Fully determined by the arguments.
pub fn make_random_mdp(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Result<MdpSpec> {
    if n_states == 0 || n_actions == 0 {
        return Err(param_err("n_states and n_actions must be positive"));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(param_err(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transition = (0..n_states)
        .map(|_| (0..n_actions).map(|_| flat_dirichlet(n_states, &mut rng)).collect())
        .collect();
    let reward = (0..n_states).map(|_| (0..n_actions).map(|_| rng.gen::<f64>()).collect()).collect();
    let mdp = MdpSpec {
        n_states,
        n_actions,
        gamma,
        p0: vec![1.0 / n_states as f64; n_states],
        reward,
        transition,
    };
    mdp.validate()?;
    Ok(mdp)
}

/// Stochastic policy over a finite action set, `probs[s][a] = π(a|s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    probs: SaTable,
}

impl TabularPolicy {
    pub fn new(probs: SaTable) -> Result<Self> {
        for s in 0..probs.n_states() {
            check_distribution(probs.row(s), &format!("policy row {s}"))?;
        }
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: SaTable::constant(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        if actions.iter().any(|&a| a >= n_actions) {
            return Err(param_err("deterministic policy action out of range"));
        }
        Ok(Self {
            probs: SaTable::from_fn(actions.len(), n_actions, |s, a| if actions[s] == a { 1.0 } else { 0.0 }),
        })
    }

    /// Full-support random policy (Dirichlet(1) rows).
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Self {
        let rows: Vec<Vec<f64>> = (0..n_states).map(|_| flat_dirichlet(n_actions, rng)).collect();
        Self {
            probs: SaTable::from_rows(&rows).expect("non-empty rows"),
        }
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs.get(s, a)
    }

    pub fn probs(&self) -> &SaTable {
        &self.probs
    }

    pub fn n_states(&self) -> usize {
        self.probs.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.n_actions()
    }

    /// `H(s) = −Σ_a π(a|s) log π(a|s)` with `0·log 0 := 0`.
    pub fn entropy(&self, s: usize) -> f64 {
        -self.probs.row(s).iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    }

    /// `E_{a~π(·|s)} g(s, a)`.
    pub fn expect(&self, s: usize, g: &SaTable) -> f64 {
        self.probs.row(s).iter().zip(g.row(s)).map(|(p, v)| p * v).sum()
    }

    pub(crate) fn check_against(&self, mdp: &MdpSpec) -> Result<()> {
        self.probs.check_shape(mdp.n_states, mdp.n_actions, "policy")
    }
}

/// One application of the soft Bellman evaluation operator with a per-state
/// additive bonus `h(s')` (for the MaxEnt case `h = α·H`).
pub fn soft_bellman_apply(mdp: &MdpSpec, pi: &TabularPolicy, bonus: &[f64], q: &SaTable) -> SaTable {
    let next_value: Vec<f64> = (0..mdp.n_states).map(|s| pi.expect(s, q) + bonus[s]).collect();
    SaTable::from_fn(mdp.n_states, mdp.n_actions, |s, a| {
        mdp.reward[s][a] + mdp.gamma * mdp.expect_next(s, a, &next_value)
    })
}

/// Exact soft Q-values of `pi`, i.e. the unique solution of
/// `Q(s,a) = r(s,a) + γ Σ_{s'} P(s'|s,a) E_{a'~π}[Q(s',a') − α log π(a'|s')]`.
pub fn exact_soft_q(mdp: &MdpSpec, pi: &TabularPolicy, alpha: f64) -> Result<SaTable> {
    if !(alpha >= 0.0) {
        return Err(param_err(format!("alpha must be non-negative, got {alpha}")));
    }
    pi.check_against(mdp)?;
    let bonus: Vec<f64> = (0..mdp.n_states).map(|s| alpha * pi.entropy(s)).collect();
    exact_soft_q_with_bonus(mdp, pi, &bonus)
}

/// Solves `(I − γ P_π) x = rhs` by LU with partial pivoting, where
/// `(P_π x)(s,a) = Σ_{s'} P(s'|s,a) Σ_{a'} π(a'|s') x(s',a')`.
pub fn solve_policy_system(mdp: &MdpSpec, pi: &TabularPolicy, rhs: &SaTable) -> Result<SaTable> {
    pi.check_against(mdp)?;
    rhs.check_shape(mdp.n_states, mdp.n_actions, "right-hand side")?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let n = ns * na;
    let g = mdp.gamma;
    let mut a_mat = DMatrix::<f64>::identity(n, n);
    for s in 0..ns {
        for a in 0..na {
            let row = s * na + a;
            for (s2, &p) in mdp.transition[s][a].iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                for a2 in 0..na {
                    a_mat[(row, s2 * na + a2)] -= g * p * pi.prob(s2, a2);
                }
            }
        }
    }
    let b = DVector::from_column_slice(rhs.as_slice());
    let x = a_mat
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Internal("singular policy evaluation system".into()))?;
    Ok(SaTable::from_fn(ns, na, |s, a| x[s * na + a]))
}

/// Exact soft Q-values with an arbitrary per-state bonus `h(s')` in place of
/// `α·H(s')`.
pub fn exact_soft_q_with_bonus(mdp: &MdpSpec, pi: &TabularPolicy, bonus: &[f64]) -> Result<SaTable> {
    mdp.validate()?;
    pi.check_against(mdp)?;
    if bonus.len() != mdp.n_states {
        return Err(param_err("bonus length differs from n_states"));
    }
    let rhs = SaTable::from_fn(mdp.n_states, mdp.n_actions, |s, a| {
        mdp.reward[s][a] + mdp.gamma * mdp.expect_next(s, a, bonus)
    });
    let q = solve_policy_system(mdp, pi, &rhs)?;
    let residual = soft_bellman_apply(mdp, pi, bonus, &q).sup_dist(&q);
    if !(residual <= SOLVE_RESIDUAL_TOL) {
        return Err(Error::Internal(format!(
            "soft Bellman residual {residual:e} exceeds {SOLVE_RESIDUAL_TOL:e}"
        )));
    }
    Ok(q)
}

/// A sampled tabular transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TabularTransition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    pub terminal: bool,
}

/// Draws `s' ~ P[s][a][·]` by inverse CDF. Never terminal.
pub fn sample_transition<R: Rng + ?Sized>(mdp: &MdpSpec, s: usize, a: usize, rng: &mut R) -> Result<TabularTransition> {
    if s >= mdp.n_states || a >= mdp.n_actions {
        return Err(param_err(format!("state {s} / action {a} out of range")));
    }
    let s_next = sample_index(&mdp.transition[s][a], rng);
    Ok(TabularTransition {
        s,
        a,
        r: mdp.reward[s][a],
        s_next,
        terminal: false,
    })
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}
