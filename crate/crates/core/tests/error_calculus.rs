use pessilab::error_lab::{
    beta_sensitivity, contraction_certificate, direct_errors, ensemble_stats, fixed_point_iterate, lower_bound_of, temporal_errors,
    EnsembleTable, ErrorField, ErrorOperator, OperatorVariant,
};
use pessilab::mdp::{exact_soft_q, make_random_mdp, MdpSpec, TabularPolicy};
use pessilab::rng::stream;
use pessilab::table::SaTable;
use pessilab::verify::random_ensemble;
use proptest::prelude::*;

#[derive(Debug)]
struct Case {
    mdp: MdpSpec,
    pi: TabularPolicy,
    ens: EnsembleTable,
    alpha: f64,
    beta: f64,
}

fn case(ns: usize, na: usize, gamma: f64, k: usize, alpha: f64, beta: f64, seed: u64) -> Case {
    let mdp = make_random_mdp(ns, na, gamma, seed).unwrap();
    let mut rng = stream(seed, 1);
    let pi = TabularPolicy::random(ns, na, &mut rng);
    let q = exact_soft_q(&mdp, &pi, alpha).unwrap();
    let ens = random_ensemble(&q, k, 3.0, &mut rng).unwrap();
    Case { mdp, pi, ens, alpha, beta }
}

/// Population std of the members at one pair, recomputed by hand.
fn member_std(ens: &EnsembleTable, s: usize, a: usize) -> f64 {
    let xs: Vec<f64> = ens.members().iter().map(|m| m.get(s, a)).collect();
    let k = xs.len() as f64;
    let mu = xs.iter().sum::<f64>() / k;
    (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / k).sqrt()
}

/// `Σ_{s'} P(s'|s,a) Σ_{a'} π(a'|s') g(s',a')`.
fn next_expectation(mdp: &MdpSpec, pi: &TabularPolicy, g: &SaTable, s: usize, a: usize) -> f64 {
    (0..mdp.n_states)
        .map(|t| mdp.transition[s][a][t] * (0..mdp.n_actions).map(|b| pi.prob(t, b) * g.get(t, b)).sum::<f64>())
        .sum()
}

fn case_strategy() -> impl Strategy<Value = Case> {
    (
        1usize..7,
        1usize..4,
        0.3f64..0.95,
        prop_oneof![Just(2usize), Just(3), Just(5)],
        0.0f64..1.0,
        0.0f64..2.0,
        any::<u64>(),
    )
        .prop_map(|(ns, na, g, k, alpha, beta, seed)| case(ns, na, g, k, alpha, beta, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn temporal_gap_is_discounted_next_disagreement(c in case_strategy()) {
        let t = temporal_errors(&c.mdp, &c.pi, &c.ens, c.beta, c.alpha).unwrap();
        let sigma = SaTable::from_fn(c.mdp.n_states, c.mdp.n_actions, |s, a| member_std(&c.ens, s, a));
        for (s, a, lb) in t.u_lb.iter() {
            let want = -c.mdp.gamma * c.beta * next_expectation(&c.mdp, &c.pi, &sigma, s, a);
            prop_assert!((lb - t.u_mean.get(s, a) - want).abs() <= 1e-10, "gap at ({s},{a})");
        }
    }

    #[test]
    fn direct_gap_is_beta_sigma(c in case_strategy()) {
        let (u_mean, u_lb) = direct_errors(&c.mdp, &c.pi, &c.ens, c.beta, c.alpha).unwrap();
        for (s, a, lb) in u_lb.iter() {
            prop_assert!((lb - u_mean.get(s, a) - c.beta * member_std(&c.ens, s, a)).abs() <= 1e-10);
        }
    }

    #[test]
    fn iteration_from_any_start_reaches_the_direct_errors(c in case_strategy(), start_seed in any::<u64>()) {
        let (u_mean, u_lb) = direct_errors(&c.mdp, &c.pi, &c.ens, c.beta, c.alpha).unwrap();
        let mut rng = stream(start_seed, 0);
        for (variant, direct) in [(OperatorVariant::Mean, &u_mean), (OperatorVariant::LowerBound, &u_lb)] {
            let op = ErrorOperator::from_ensemble(&c.mdp, &c.pi, &c.ens, c.beta, c.alpha, variant).unwrap();
            for _ in 0..2 {
                let start = ErrorField::random(c.mdp.n_states, c.mdp.n_actions, 50.0, &mut rng);
                let fp = fixed_point_iterate(&start, &op, 1e-12, 100_000).unwrap();
                prop_assert!(fp.field.values().sup_dist(direct) <= 1e-8);
            }
        }
    }

    #[test]
    fn operators_contract_by_gamma(c in case_strategy(), seed in any::<u64>()) {
        let mut rng = stream(seed, 0);
        for variant in [OperatorVariant::Mean, OperatorVariant::LowerBound] {
            let op = ErrorOperator::from_ensemble(&c.mdp, &c.pi, &c.ens, c.beta, c.alpha, variant).unwrap();
            for _ in 0..20 {
                let f1 = ErrorField::random(c.mdp.n_states, c.mdp.n_actions, 10.0, &mut rng);
                let f2 = ErrorField::random(c.mdp.n_states, c.mdp.n_actions, 10.0, &mut rng);
                let lhs = op.apply(&f1).unwrap().sup_dist(&op.apply(&f2).unwrap());
                prop_assert!(lhs <= c.mdp.gamma * f1.sup_dist(&f2) + 1e-12);
            }
            let cert = contraction_certificate(&op, 10, &mut rng).unwrap();
            prop_assert_eq!(cert.monotonicity_violations, 0);
        }
    }

    #[test]
    fn raising_beta_moves_the_lower_bound_errors_by_sigma(c in case_strategy(), delta in 0.01f64..1.0) {
        let (_, lo) = direct_errors(&c.mdp, &c.pi, &c.ens, c.beta, c.alpha).unwrap();
        let (_, hi) = direct_errors(&c.mdp, &c.pi, &c.ens, c.beta + delta, c.alpha).unwrap();
        let full = beta_sensitivity(&c.mdp, &c.pi, &c.ens, false).unwrap();
        for (s, a, h) in hi.iter() {
            prop_assert!((h - lo.get(s, a) - delta * full.values().get(s, a)).abs() <= 1e-8);
        }
    }

    #[test]
    fn frozen_temporal_sensitivity_is_the_discounted_sigma_sum(c in case_strategy()) {
        let sigma = SaTable::from_fn(c.mdp.n_states, c.mdp.n_actions, |s, a| member_std(&c.ens, s, a));
        // g = σ + γ P_π g by plain iteration.
        let mut g = SaTable::zeros(c.mdp.n_states, c.mdp.n_actions);
        for _ in 0..2000 {
            g = SaTable::from_fn(c.mdp.n_states, c.mdp.n_actions, |s, a| {
                sigma.get(s, a) + c.mdp.gamma * next_expectation(&c.mdp, &c.pi, &g, s, a)
            });
        }
        let frozen = beta_sensitivity(&c.mdp, &c.pi, &c.ens, true).unwrap();
        prop_assert!(frozen.values().sup_dist(&g) <= 1e-8);
    }

    #[test]
    fn two_member_unit_beta_is_the_minimum(a in -1e6f64..1e6, b in -1e6f64..1e6) {
        let ens = EnsembleTable::new(vec![SaTable::constant(1, 1, a), SaTable::constant(1, 1, b)]).unwrap();
        prop_assert_eq!(ensemble_stats(&ens, 1.0).unwrap().lower_bound.get(0, 0), a.min(b));
    }

    #[test]
    fn lower_bound_never_exceeds_the_mean(xs in prop::collection::vec(-100.0f64..100.0, 1..8), beta in 0.0f64..3.0) {
        let k = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / k;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / k).sqrt();
        let lb = lower_bound_of(&xs, mean, std, beta);
        prop_assert!(lb <= mean + 1e-12);
        prop_assert!((lb - (mean - beta * std)).abs() <= 1e-10 * (1.0 + mean.abs() + std));
    }

    #[test]
    fn agreeing_members_ignore_beta(x in -1e3f64..1e3, k in 1usize..6, beta in 0.0f64..5.0) {
        let ens = EnsembleTable::replicated(&SaTable::constant(2, 2, x), k).unwrap();
        let st = ensemble_stats(&ens, beta).unwrap();
        prop_assert_eq!(st.std.sup_norm(), 0.0);
        prop_assert_eq!(&st.lower_bound, &st.mean);
    }
}

#[test]
fn exact_replicated_critic_has_zero_error_everywhere() {
    let mdp = make_random_mdp(5, 3, 0.9, 77).unwrap();
    let pi = TabularPolicy::random(5, 3, &mut stream(77, 0));
    let q = exact_soft_q(&mdp, &pi, 0.3).unwrap();
    let ens = EnsembleTable::replicated(&q, 4).unwrap();
    for beta in [0.0, 0.5, 2.0] {
        let (u_mean, u_lb) = direct_errors(&mdp, &pi, &ens, beta, 0.3).unwrap();
        assert!(u_mean.sup_norm() <= 1e-10 && u_lb.sup_norm() <= 1e-10);
    }
}
