use approx::assert_abs_diff_eq;
use pessilab::env::{EnvConfig, PendulumSpec, PendulumState};
use pessilab::mdp::{exact_soft_q, make_random_mdp, sample_transition, MdpSpec, TabularPolicy};
use pessilab::rng::stream;
use pessilab::table::SaTable;
use proptest::prelude::*;

/// Plain soft value iteration for a fixed policy, written out without the
/// crate's helpers.
fn soft_q_by_iteration(mdp: &MdpSpec, pi: &[Vec<f64>], alpha: f64, iters: usize) -> Vec<Vec<f64>> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut q = vec![vec![0.0; na]; ns];
    for _ in 0..iters {
        let v: Vec<f64> = (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| {
                        let p = pi[s][a];
                        if p > 0.0 {
                            p * (q[s][a] - alpha * p.ln())
                        } else {
                            0.0
                        }
                    })
                    .sum()
            })
            .collect();
        q = (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| mdp.reward[s][a] + mdp.gamma * (0..ns).map(|t| mdp.transition[s][a][t] * v[t]).sum::<f64>())
                    .collect()
            })
            .collect();
    }
    q
}

fn random_policy_rows(ns: usize, na: usize, seed: u64) -> (TabularPolicy, Vec<Vec<f64>>) {
    let pi = TabularPolicy::random(ns, na, &mut stream(seed, 0));
    let rows = (0..ns).map(|s| (0..na).map(|a| pi.prob(s, a)).collect()).collect();
    (pi, rows)
}

#[test]
fn exact_soft_q_agrees_with_value_iteration() {
    let mdp = make_random_mdp(5, 3, 0.9, 11).unwrap();
    let pi = TabularPolicy::uniform(5, 3);
    let rows = vec![vec![1.0 / 3.0; 3]; 5];
    let q = exact_soft_q(&mdp, &pi, 0.1).unwrap();
    let oracle = soft_q_by_iteration(&mdp, &rows, 0.1, 10_000);
    for s in 0..5 {
        for a in 0..3 {
            assert_abs_diff_eq!(q.get(s, a), oracle[s][a], epsilon = 1e-8);
        }
    }
}

#[test]
fn deterministic_policy_without_entropy_is_classical_evaluation() {
    let mdp = make_random_mdp(6, 4, 0.8, 2).unwrap();
    let actions = [0, 3, 1, 1, 2, 0];
    let pi = TabularPolicy::deterministic(&actions, 4).unwrap();
    let rows: Vec<Vec<f64>> = actions
        .iter()
        .map(|&a| (0..4).map(|b| if a == b { 1.0 } else { 0.0 }).collect())
        .collect();
    let q = exact_soft_q(&mdp, &pi, 0.0).unwrap();
    let oracle = soft_q_by_iteration(&mdp, &rows, 0.0, 5_000);
    for s in 0..6 {
        for a in 0..4 {
            assert_abs_diff_eq!(q.get(s, a), oracle[s][a], epsilon = 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn soft_bellman_residual_is_tiny(
        ns in 1usize..8,
        na in 1usize..5,
        gamma in 0.05f64..0.98,
        alpha in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let mdp = make_random_mdp(ns, na, gamma, seed).unwrap();
        let (pi, rows) = random_policy_rows(ns, na, seed ^ 0x5eed);
        let q = exact_soft_q(&mdp, &pi, alpha).unwrap();
        let one_step = soft_q_by_iteration_from(&mdp, &rows, alpha, &q);
        for s in 0..ns {
            for a in 0..na {
                prop_assert!((one_step[s][a] - q.get(s, a)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn random_mdp_rows_are_distributions(ns in 1usize..10, na in 1usize..5, seed in any::<u64>()) {
        let mdp = make_random_mdp(ns, na, 0.9, seed).unwrap();
        for s in 0..ns {
            for a in 0..na {
                let row = &mdp.transition[s][a];
                prop_assert!(row.iter().all(|&p| p >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!((0.0..=1.0).contains(&mdp.reward[s][a]));
            }
        }
        prop_assert_eq!(&mdp, &make_random_mdp(ns, na, 0.9, seed).unwrap());
    }
}

/// One soft Bellman backup of `q`, independent of the crate's operator.
fn soft_q_by_iteration_from(mdp: &MdpSpec, pi: &[Vec<f64>], alpha: f64, q: &SaTable) -> Vec<Vec<f64>> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let v: Vec<f64> = (0..ns)
        .map(|s| {
            (0..na)
                .map(|a| {
                    let p = pi[s][a];
                    if p > 0.0 {
                        p * (q.get(s, a) - alpha * p.ln())
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect();
    (0..ns)
        .map(|s| {
            (0..na)
                .map(|a| mdp.reward[s][a] + mdp.gamma * (0..ns).map(|t| mdp.transition[s][a][t] * v[t]).sum::<f64>())
                .collect()
        })
        .collect()
}

#[test]
fn sampled_next_states_follow_the_row() {
    let mdp = MdpSpec {
        n_states: 2,
        n_actions: 1,
        gamma: 0.9,
        p0: vec![1.0, 0.0],
        reward: vec![vec![0.0], vec![0.0]],
        transition: vec![vec![vec![0.3, 0.7]], vec![vec![1.0, 0.0]]],
    };
    let mut rng = stream(4, 0);
    let n = 100_000;
    let hits = (0..n)
        .filter(|_| sample_transition(&mdp, 0, 0, &mut rng).unwrap().s_next == 1)
        .count();
    let se = (0.7 * 0.3 / n as f64).sqrt();
    assert!(
        (hits as f64 / n as f64 - 0.7).abs() < 4.0 * se,
        "frequency {}",
        hits as f64 / n as f64
    );
}

#[test]
fn pendulum_step_matches_hand_integration() {
    let spec = PendulumSpec::default();
    let mut rng = stream(9, 0);
    use rand::Rng;
    for _ in 0..200 {
        let state = PendulumState {
            theta: rng.gen_range(-4.0..4.0),
            theta_dot: rng.gen_range(-9.0..9.0),
        };
        let u: f64 = rng.gen_range(-3.0..3.0);
        let (next, reward) = spec.step(state, u).unwrap();

        let u_c = u.clamp(-2.0, 2.0);
        let th_norm = ((state.theta + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)) - std::f64::consts::PI;
        let want_r = -(th_norm.powi(2) + 0.1 * state.theta_dot.powi(2) + 0.001 * u_c.powi(2));
        let thdot = (state.theta_dot + 0.05 * (3.0 * 10.0 / 2.0 * state.theta.sin() + 3.0 * u_c)).clamp(-8.0, 8.0);
        let th = state.theta + 0.05 * thdot;
        assert_abs_diff_eq!(reward, want_r, epsilon = 1e-12);
        assert_abs_diff_eq!(next.theta, th, epsilon = 1e-12);
        assert_abs_diff_eq!(next.theta_dot, thdot, epsilon = 1e-12);
    }
}

#[test]
fn tabular_env_config_builds_the_seeded_mdp() {
    let cfg: EnvConfig = serde_json::from_str(r#"{"kind":"tabular","n_states":4,"n_actions":3,"gamma":0.9,"mdp_seed":5}"#).unwrap();
    match cfg.build().unwrap() {
        pessilab::env::Env::Tabular(t) => assert_eq!(t.mdp, make_random_mdp(4, 3, 0.9, 5).unwrap()),
        _ => panic!("expected a tabular environment"),
    }
}
