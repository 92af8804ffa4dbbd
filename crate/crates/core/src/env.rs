//! Environments for the learning experiments: a torque-limited pendulum and a
//! tabular MDP wrapped behind a one-dimensional continuous action.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::mdp::{make_random_mdp, sample_index, MdpSpec};
use crate::rng::RunRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PendulumSpec {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub dt: f64,
    pub max_torque: f64,
    pub max_speed: f64,
    pub episode_length: usize,
}

impl Default for PendulumSpec {
    fn default() -> Self {
        Self {
            gravity: 10.0,
            mass: 1.0,
            length: 1.0,
            dt: 0.05,
            max_torque: 2.0,
            max_speed: 8.0,
            episode_length: 200,
        }
    }
}

/// Pendulum state. `theta = 0` is upright; `theta = π` hangs down.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumState {
    pub theta: f64,
    pub theta_dot: f64,
}

/// Wraps an angle into `[−π, π)`.
pub fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl PendulumSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.gravity, self.mass, self.length, self.dt, self.max_torque, self.max_speed];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.episode_length == 0 {
            return Err(param_err("pendulum constants must be positive and finite"));
        }
        Ok(())
    }

    pub fn reward(&self, state: PendulumState, u: f64) -> f64 {
        let u = u.clamp(-self.max_torque, self.max_torque);
        let th = wrap_angle(state.theta);
        -(th * th + 0.1 * state.theta_dot * state.theta_dot + 0.001 * u * u)
    }

    /// Semi-implicit Euler step with torque and speed clamping.
    pub fn step(&self, state: PendulumState, u: f64) -> Result<(PendulumState, f64)> {
        if !state.theta.is_finite() || !state.theta_dot.is_finite() || u.is_nan() {
            return Err(Error::Numeric(format!("non-finite pendulum input {state:?}, u={u}")));
        }
        let u = u.clamp(-self.max_torque, self.max_torque);
        let reward = self.reward(state, u);
        let (g, m, l, dt) = (self.gravity, self.mass, self.length, self.dt);
        let accel = 3.0 * g / (2.0 * l) * state.theta.sin() + 3.0 / (m * l * l) * u;
        let theta_dot = (state.theta_dot + dt * accel).clamp(-self.max_speed, self.max_speed);
        let theta = state.theta + dt * theta_dot;
        Ok((PendulumState { theta, theta_dot }, reward))
    }

    pub fn observe(state: PendulumState) -> Vec<f64> {
        vec![state.theta.cos(), state.theta.sin(), state.theta_dot]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Pendulum {
        #[serde(default)]
        spec: PendulumSpec,
    },
    Tabular {
        n_states: usize,
        n_actions: usize,
        #[serde(default = "default_tabular_gamma")]
        gamma: f64,
        #[serde(default)]
        mdp_seed: u64,
        #[serde(default = "default_tabular_episode")]
        episode_length: usize,
    },
}

fn default_tabular_gamma() -> f64 {
    0.99
}

fn default_tabular_episode() -> usize {
    100
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Pendulum {
            spec: PendulumSpec::default(),
        }
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<Env> {
        match self {
            EnvConfig::Pendulum { spec } => {
                spec.validate()?;
                Ok(Env::Pendulum(PendulumEnv::new(*spec)))
            }
            EnvConfig::Tabular {
                n_states,
                n_actions,
                gamma,
                mdp_seed,
                episode_length,
            } => {
                let mdp = make_random_mdp(*n_states, *n_actions, *gamma, *mdp_seed)?;
                Ok(Env::Tabular(TabularEnv::new(mdp, *episode_length)?))
            }
        }
    }
}

/// Outcome of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub obs: Vec<f64>,
    pub reward: f64,
    /// True termination; never set by the built-in infinite-horizon tasks.
    pub terminal: bool,
    /// Episode time limit reached; bootstrapping still applies.
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct PendulumEnv {
    pub spec: PendulumSpec,
    pub state: PendulumState,
    t: usize,
}

impl PendulumEnv {
    pub fn new(spec: PendulumSpec) -> Self {
        Self {
            spec,
            state: PendulumState { theta: PI, theta_dot: 0.0 },
            t: 0,
        }
    }
}

/// Tabular MDP behind a scalar action in `[−1, 1]`, split into `n_actions`
/// equal-width bins. Observations are one-hot state vectors.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    pub mdp: MdpSpec,
    pub state: usize,
    episode_length: usize,
    t: usize,
}

impl TabularEnv {
    pub fn new(mdp: MdpSpec, episode_length: usize) -> Result<Self> {
        mdp.validate()?;
        if episode_length == 0 {
            return Err(param_err("episode_length must be positive"));
        }
        Ok(Self {
            mdp,
            state: 0,
            episode_length,
            t: 0,
        })
    }

    /// Bin index of a scalar action.
    pub fn action_index(&self, a: f64) -> usize {
        let n = self.mdp.n_actions;
        let x = ((a.clamp(-1.0, 1.0) + 1.0) * 0.5 * n as f64).floor();
        (x.max(0.0) as usize).min(n - 1)
    }

    /// Bin edges in action space, `n_actions + 1` points from −1 to 1.
    pub fn bin_edges(&self) -> Vec<f64> {
        let n = self.mdp.n_actions as f64;
        (0..=self.mdp.n_actions).map(|i| -1.0 + 2.0 * i as f64 / n).collect()
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.mdp.n_states];
        v[s] = 1.0;
        v
    }
}

#[derive(Debug, Clone)]
pub enum Env {
    Pendulum(PendulumEnv),
    Tabular(TabularEnv),
}

impl Env {
    pub fn obs_dim(&self) -> usize {
        match self {
            Env::Pendulum(_) => 3,
            Env::Tabular(e) => e.mdp.n_states,
        }
    }

    pub fn action_dim(&self) -> usize {
        1
    }

    pub fn episode_length(&self) -> usize {
        match self {
            Env::Pendulum(e) => e.spec.episode_length,
            Env::Tabular(e) => e.episode_length,
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        match self {
            Env::Pendulum(e) => PendulumSpec::observe(e.state),
            Env::Tabular(e) => e.one_hot(e.state),
        }
    }

    pub fn reset(&mut self, rng: &mut RunRng) -> Vec<f64> {
        match self {
            Env::Pendulum(e) => {
                e.state = PendulumState {
                    theta: rng.gen_range(-PI..PI),
                    theta_dot: rng.gen_range(-1.0..1.0),
                };
                e.t = 0;
            }
            Env::Tabular(e) => {
                e.state = sample_index(&e.mdp.p0, rng);
                e.t = 0;
            }
        }
        self.observe()
    }

    /// Steps with an action in `[−1, 1]^action_dim`.
    pub fn step(&mut self, action: &[f64], rng: &mut RunRng) -> Result<EnvStep> {
        if action.len() != self.action_dim() {
            return Err(param_err("action dimension mismatch"));
        }
        match self {
            Env::Pendulum(e) => {
                let u = action[0].clamp(-1.0, 1.0) * e.spec.max_torque;
                let (next, reward) = e.spec.step(e.state, u)?;
                e.state = next;
                e.t += 1;
                Ok(EnvStep {
                    obs: PendulumSpec::observe(next),
                    reward,
                    terminal: false,
                    truncated: e.t >= e.spec.episode_length,
                })
            }
            Env::Tabular(e) => {
                let a = e.action_index(action[0]);
                let s = e.state;
                let reward = e.mdp.reward[s][a];
                e.state = sample_index(&e.mdp.transition[s][a], rng);
                e.t += 1;
                Ok(EnvStep {
                    obs: e.one_hot(e.state),
                    reward,
                    terminal: false,
                    truncated: e.t >= e.episode_length,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upright_and_hanging_are_equilibria() {
        let spec = PendulumSpec::default();
        for theta in [0.0, PI] {
            let (next, _) = spec.step(PendulumState { theta, theta_dot: 0.0 }, 0.0).unwrap();
            assert!((next.theta - theta).abs() <= 1e-12);
            assert!(next.theta_dot.abs() <= 1e-12);
        }
    }

    #[test]
    fn torque_is_clamped() {
        let spec = PendulumSpec::default();
        let s = PendulumState {
            theta: 0.3,
            theta_dot: -0.2,
        };
        assert_eq!(spec.step(s, 50.0).unwrap(), spec.step(s, spec.max_torque).unwrap());
        assert_eq!(spec.step(s, -50.0).unwrap(), spec.step(s, -spec.max_torque).unwrap());
    }

    #[test]
    fn observation_on_unit_circle_and_reward_nonpositive() {
        let spec = PendulumSpec::default();
        let mut s = PendulumState {
            theta: 2.9,
            theta_dot: 0.5,
        };
        for i in 0..500 {
            let (next, r) = spec.step(s, ((i as f64) * 0.37).sin() * 3.0).unwrap();
            assert!(r <= 0.0);
            let o = PendulumSpec::observe(next);
            assert!((o[0] * o[0] + o[1] * o[1] - 1.0).abs() < 1e-9);
            assert!(o[2].abs() <= spec.max_speed);
            s = next;
        }
    }

    #[test]
    fn non_finite_state_is_a_numeric_error() {
        let spec = PendulumSpec::default();
        let s = PendulumState {
            theta: f64::NAN,
            theta_dot: 0.0,
        };
        assert!(matches!(spec.step(s, 0.0), Err(Error::Numeric(_))));
    }

    #[test]
    fn tabular_bins_cover_action_range() {
        let mdp = make_random_mdp(2, 4, 0.9, 0).unwrap();
        let env = TabularEnv::new(mdp, 10).unwrap();
        assert_eq!(env.action_index(-1.0), 0);
        assert_eq!(env.action_index(-0.51), 0);
        assert_eq!(env.action_index(-0.49), 1);
        assert_eq!(env.action_index(0.0), 2);
        assert_eq!(env.action_index(1.0), 3);
    }

    #[test]
    fn env_config_parses_both_kinds() {
        let p: EnvConfig = serde_json::from_str(r#"{"kind":"pendulum","spec":{"dt":0.02}}"#).unwrap();
        match p {
            EnvConfig::Pendulum { spec } => {
                assert_eq!(spec.dt, 0.02);
                assert_eq!(spec.max_torque, 2.0);
            }
            _ => panic!("wrong kind"),
        }
        let t: EnvConfig = serde_json::from_str(r#"{"kind":"tabular","n_states":3,"n_actions":2}"#).unwrap();
        assert_eq!(t.build().unwrap().obs_dim(), 3);
    }
}
