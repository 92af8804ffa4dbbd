use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{param_err, Result};
use crate::error_lab::{lower_bound_of, mean_std};
use crate::nn::mlp::{predict_batch, Activation, MlpSpec, ParamVector};

/// `k` critics over `state ⊕ action` with a target copy of each.
#[derive(Debug, Clone)]
pub struct CriticEnsembleNet {
    pub spec: MlpSpec,
    pub online: Vec<ParamVector>,
    pub target: Vec<ParamVector>,
}

/// Per-member values and their population statistics on a batch.
#[derive(Debug, Clone)]
pub struct EnsembleBatch {
    pub members: Vec<Array1<f64>>,
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl EnsembleBatch {
    pub fn from_members(members: Vec<Array1<f64>>) -> Self {
        let n = members[0].len();
        let mut mean = Array1::zeros(n);
        let mut std = Array1::zeros(n);
        let mut buf = vec![0.0; members.len()];
        for i in 0..n {
            for (b, m) in buf.iter_mut().zip(&members) {
                *b = m[i];
            }
            let (mu, sd) = mean_std(&buf);
            mean[i] = mu;
            std[i] = sd;
        }
        Self { members, mean, std }
    }

    pub fn lower_bound(&self, beta: f64) -> Array1<f64> {
        let mut buf = vec![0.0; self.members.len()];
        Array1::from_shape_fn(self.mean.len(), |i| {
            for (b, m) in buf.iter_mut().zip(&self.members) {
                *b = m[i];
            }
            lower_bound_of(&buf, self.mean[i], self.std[i], beta)
        })
    }
}

/// Single-input ensemble readout.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub lower_bound: f64,
}

pub fn critic_input(obs: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Array2<f64> {
    concatenate(Axis(1), &[obs.view(), actions.view()]).expect("equal batch sizes")
}

impl CriticEnsembleNet {
    pub fn new<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        k: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 {
            return Err(param_err("ensemble needs at least one member"));
        }
        let mut sizes = vec![obs_dim + action_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let spec = MlpSpec::new(sizes, activation)?;
        let online: Vec<_> = (0..k).map(|_| spec.init(rng)).collect();
        let target = online.clone();
        Ok(Self { spec, online, target })
    }

    pub fn k(&self) -> usize {
        self.online.len()
    }

    pub fn reinit<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for p in &mut self.online {
            *p = self.spec.init(rng);
        }
        self.hard_copy();
    }

    pub fn hard_copy(&mut self) {
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            t.copy_from(o);
        }
    }

    pub fn members_batch(&self, input: ArrayView2<'_, f64>, use_target: bool) -> Result<EnsembleBatch> {
        let nets = if use_target { &self.target } else { &self.online };
        let members = nets
            .iter()
            .map(|p| predict_batch(p, &self.spec, input).map(|y| y.column(0).to_owned()))
            .collect::<Result<Vec<_>>>()?;
        Ok(EnsembleBatch::from_members(members))
    }
}

pub fn ensemble_forward(nets: &CriticEnsembleNet, state: &[f64], action: &[f64], beta: f64, use_target: bool) -> Result<EnsembleOutput> {
    if beta.is_nan() {
        return Err(param_err("beta must be a number"));
    }
    let mut x = state.to_vec();
    x.extend_from_slice(action);
    let input = ArrayView2::from_shape((1, x.len()), &x).expect("row");
    let b = nets.members_batch(input, use_target)?;
    Ok(EnsembleOutput {
        values: b.members.iter().map(|m| m[0]).collect(),
        mean: b.mean[0],
        std: b.std[0],
        lower_bound: b.lower_bound(beta)[0],
    })
}
