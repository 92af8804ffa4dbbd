use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::nn::mlp::ParamVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            step_count: 0,
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn reset(&mut self) {
        self.step_count = 0;
        self.first_moment.iter_mut().for_each(|m| *m = 0.0);
        self.second_moment.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// One bias-corrected Adam step on raw slices. Refuses non-finite gradients
/// without touching any state.
pub fn adam_step_slice(state: &mut AdamState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    if params.len() != grad.len() || state.first_moment.len() != grad.len() {
        return Err(param_err(format!(
            "adam shapes differ: params {}, grad {}, moments {}",
            params.len(),
            grad.len(),
            state.first_moment.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at coordinate {i}: {}", grad[i])));
    }
    state.step_count += 1;
    let t = state.step_count as f64;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powf(t);
    let c2 = 1.0 - b2.powf(t);
    let lr = state.learning_rate;
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grad)
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

pub fn adam_step(state: &mut AdamState, params: &mut ParamVector, grad: &ParamVector) -> Result<()> {
    if let Some(i) = grad.as_slice().iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at coordinate {i}")));
    }
    if params.len() != grad.len() {
        return Err(param_err("adam shapes differ"));
    }
    adam_step_slice(state, params.values_mut(), grad.as_slice())
}

/// `target ← (1−τ)·target + τ·online`.
pub fn polyak_update(target: &mut ParamVector, online: &ParamVector, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(param_err(format!("tau must lie in [0, 1], got {tau}")));
    }
    if target.len() != online.len() {
        return Err(param_err("polyak shapes differ"));
    }
    if tau == 0.0 {
        return Ok(());
    }
    if tau == 1.0 {
        target.copy_from(online);
        return Ok(());
    }
    for (t, o) in target.values_mut().iter_mut().zip(online.as_slice()) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut st = AdamState::new(3, 1e-3);
        let mut p = ParamVector::new(vec![1.0, -2.0, 0.0]);
        adam_step(&mut st, &mut p, &ParamVector::new(vec![0.7, 0.7, 0.7])).unwrap();
        for (after, before) in p.as_slice().iter().zip([1.0, -2.0, 0.0]) {
            let change = after - before;
            assert!(((change + 1e-3) / 1e-3).abs() < 1e-6, "change {change}");
        }
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut st = AdamState::new(2, 0.1);
        let mut p = ParamVector::new(vec![1.0, 2.0]);
        adam_step(&mut st, &mut p, &ParamVector::new(vec![1.0, 1.0])).unwrap();
        let m_before = st.first_moment.clone();
        let before = p.clone();
        adam_step(&mut st, &mut p, &ParamVector::zeros(2)).unwrap();
        assert!(st.first_moment.iter().zip(&m_before).all(|(a, b)| (a - 0.9 * b).abs() < 1e-15));
        let mut fresh = AdamState::new(2, 0.1);
        let mut q = before.clone();
        adam_step(&mut fresh, &mut q, &ParamVector::zeros(2)).unwrap();
        assert_eq!(q, before);
    }

    #[test]
    fn quadratic_converges() {
        let mut st = AdamState::new(1, 0.1);
        let mut w = ParamVector::new(vec![0.0]);
        for _ in 0..100 {
            let g = 2.0 * (w.as_slice()[0] - 3.0);
            adam_step(&mut st, &mut w, &ParamVector::new(vec![g])).unwrap();
        }
        assert!((w.as_slice()[0] - 3.0).abs() < 0.5);
    }

    #[test]
    fn non_finite_gradient_refused() {
        let mut st = AdamState::new(2, 0.1);
        let mut p = ParamVector::new(vec![1.0, 2.0]);
        let err = adam_step(&mut st, &mut p, &ParamVector::new(vec![0.0, f64::NAN]));
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert_eq!(st.step_count, 0);
        assert_eq!(p.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn polyak_cases() {
        let online = ParamVector::new(vec![1.0, 1.0]);
        let mut t = ParamVector::zeros(2);
        polyak_update(&mut t, &online, 0.0).unwrap();
        assert_eq!(t.as_slice(), &[0.0, 0.0]);
        polyak_update(&mut t, &online, 0.005).unwrap();
        assert_eq!(t.as_slice(), &[0.005, 0.005]);
        polyak_update(&mut t, &online, 1.0).unwrap();
        assert_eq!(t, online);
        assert!(polyak_update(&mut t, &online, 1.5).is_err());
    }
}
