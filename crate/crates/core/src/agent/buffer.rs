use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{param_err, Result};

/// One environment transition. `id` is unique within a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub id: u64,
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
}

/// Row-stacked transitions.
#[derive(Debug, Clone)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_obs: Array2<f64>,
    /// 1 for non-terminal transitions, 0 otherwise.
    pub bootstrap: Array1<f64>,
    pub ids: Vec<u64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn from_transitions(ts: &[Transition], obs_dim: usize, action_dim: usize) -> Result<Self> {
        let n = ts.len();
        let mut b = Self {
            obs: Array2::zeros((n, obs_dim)),
            actions: Array2::zeros((n, action_dim)),
            rewards: Array1::zeros(n),
            next_obs: Array2::zeros((n, obs_dim)),
            bootstrap: Array1::zeros(n),
            ids: Vec::with_capacity(n),
        };
        for (i, t) in ts.iter().enumerate() {
            if t.obs.len() != obs_dim || t.next_obs.len() != obs_dim || t.action.len() != action_dim {
                return Err(param_err("transition dimensions do not match the batch"));
            }
            b.obs.row_mut(i).assign(&Array1::from(t.obs.clone()));
            b.actions.row_mut(i).assign(&Array1::from(t.action.clone()));
            b.next_obs.row_mut(i).assign(&Array1::from(t.next_obs.clone()));
            b.rewards[i] = t.reward;
            b.bootstrap[i] = if t.terminal { 0.0 } else { 1.0 };
            b.ids.push(t.id);
        }
        Ok(b)
    }
}

/// Fixed-capacity ring of transitions stored column-wise.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    action_dim: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    terminals: Vec<bool>,
    ids: Vec<u64>,
    insertions: u64,
}

/// The validation buffer has the same layout; only routing distinguishes it.
pub type ValidationBuffer = ReplayBuffer;

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(param_err("buffer capacity must be positive"));
        }
        Ok(Self {
            capacity,
            obs_dim,
            action_dim,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            terminals: Vec::new(),
            ids: Vec::new(),
            insertions: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn insertions(&self) -> u64 {
        self.insertions
    }

    /// Ids of the stored records in slot order.
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim || t.action.len() != self.action_dim {
            return Err(param_err("transition dimensions do not match the buffer"));
        }
        let slot = (self.insertions % self.capacity as u64) as usize;
        if self.len() < self.capacity {
            self.obs.extend_from_slice(&t.obs);
            self.actions.extend_from_slice(&t.action);
            self.next_obs.extend_from_slice(&t.next_obs);
            self.rewards.push(t.reward);
            self.terminals.push(t.terminal);
            self.ids.push(t.id);
        } else {
            let (o, a) = (self.obs_dim, self.action_dim);
            self.obs[slot * o..(slot + 1) * o].copy_from_slice(&t.obs);
            self.actions[slot * a..(slot + 1) * a].copy_from_slice(&t.action);
            self.next_obs[slot * o..(slot + 1) * o].copy_from_slice(&t.next_obs);
            self.rewards[slot] = t.reward;
            self.terminals[slot] = t.terminal;
            self.ids[slot] = t.id;
        }
        self.insertions += 1;
        Ok(())
    }

    pub fn get(&self, i: usize) -> Transition {
        let (o, a) = (self.obs_dim, self.action_dim);
        Transition {
            id: self.ids[i],
            obs: self.obs[i * o..(i + 1) * o].to_vec(),
            action: self.actions[i * a..(i + 1) * a].to_vec(),
            reward: self.rewards[i],
            next_obs: self.next_obs[i * o..(i + 1) * o].to_vec(),
            terminal: self.terminals[i],
        }
    }

    pub fn gather(&self, indices: &[usize]) -> Batch {
        let (o, a, n) = (self.obs_dim, self.action_dim, indices.len());
        let mut obs = Array2::zeros((n, o));
        let mut actions = Array2::zeros((n, a));
        let mut next_obs = Array2::zeros((n, o));
        let mut rewards = Array1::zeros(n);
        let mut bootstrap = Array1::zeros(n);
        let mut ids = Vec::with_capacity(n);
        for (row, &i) in indices.iter().enumerate() {
            for j in 0..o {
                obs[[row, j]] = self.obs[i * o + j];
                next_obs[[row, j]] = self.next_obs[i * o + j];
            }
            for j in 0..a {
                actions[[row, j]] = self.actions[i * a + j];
            }
            rewards[row] = self.rewards[i];
            bootstrap[row] = if self.terminals[i] { 0.0 } else { 1.0 };
            ids.push(self.ids[i]);
        }
        Batch {
            obs,
            actions,
            rewards,
            next_obs,
            bootstrap,
            ids,
        }
    }

    /// Uniform sampling with replacement. Returns `None` when empty.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Batch> {
        if self.is_empty() {
            return None;
        }
        let len = self.len();
        let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..len)).collect();
        Some(self.gather(&idx))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Destination {
    Training,
    Validation,
}

/// Draws `p ~ U(0,1)` and sends the transition to validation when `p ≤ v`.
/// One draw is consumed for every call, including `v = 0`.
pub fn route_transition<R: Rng + ?Sized>(v: f64, rng: &mut R) -> Result<Destination> {
    if !(0.0..1.0).contains(&v) {
        return Err(param_err(format!("validation ratio {v} outside [0, 1)")));
    }
    let p: f64 = rng.gen();
    Ok(if v > 0.0 && p <= v {
        Destination::Validation
    } else {
        Destination::Training
    })
}

/// `⌈v·B⌉` with a floor of one; zero when `v = 0`.
pub fn validation_batch_size(v: f64, batch_size: usize) -> usize {
    if v <= 0.0 {
        0
    } else {
        ((v * batch_size as f64).ceil() as usize).max(1)
    }
}
