use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Matrix> = store
            .iter()
            .map(|(_, _, p)| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of every tensor in `store`.
///
/// Nothing is modified if any gradient is non-finite.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Matrix],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::contract("learning rate must be positive"));
    }
    if grads.len() != store.len() || state.m.len() != store.len() {
        return Err(Error::contract("gradient list does not match the parameter store"));
    }
    for (id, name, p) in store.iter() {
        let g = &grads[id.index()];
        if g.shape() != p.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
        if !g.is_finite() {
            return Err(Error::Numeric(format!("non-finite gradient for parameter `{name}`")));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for id in store.ids().collect::<Vec<_>>() {
        let k = id.index();
        let g = grads[k].as_slice();
        let m = state.m[k].as_mut_slice();
        let v = state.v[k].as_mut_slice();
        let p = store.get_mut(id).as_mut_slice();
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("theta", Matrix::row(values));
        s
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = store_with(&[1.0, -2.0, 0.5]);
        let before = s.clone();
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[Matrix::zeros(1, 3)], &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(s, before);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn first_step_moves_each_coordinate_by_about_lr() {
        let mut s = store_with(&[0.0, 0.0, 0.0]);
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(&s);
        let g = [3.0, -0.02, 1e-3];
        adam_step(&mut s, &[Matrix::row(&g)], &mut st, &cfg).unwrap();
        for (i, gi) in g.iter().enumerate() {
            let delta = s.get(crate::numcore::ParamId(0)).get(0, i);
            // t = 1: m̂ = g, v̂ = g², so |Δ| = lr·|g| / (|g| + ε)
            let expect = -cfg.learning_rate * gi / (gi.abs() + cfg.eps);
            assert!((delta - expect).abs() < 1e-15, "{delta} vs {expect}");
            assert!((delta.abs() - cfg.learning_rate).abs() < 1e-7);
        }
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut s = store_with(&[0.0]);
        let cfg = AdamConfig {
            learning_rate: 0.05,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(&s);
        let id = crate::numcore::ParamId(0);
        for _ in 0..2000 {
            let theta = s.get(id).get(0, 0);
            let g = Matrix::scalar(2.0 * (theta - 2.0));
            adam_step(&mut s, &[g], &mut st, &cfg).unwrap();
        }
        assert!((s.get(id).get(0, 0) - 2.0).abs() < 1e-3);
    }

    #[test]
    fn matches_scalar_reference() {
        // straight-line transcription of the update rule
        let (b1, b2, eps, lr) = (0.9_f64, 0.999_f64, 1e-8, 0.01);
        let grads = [0.5, -1.0, 0.25, 2.0, -0.1];
        let (mut theta, mut m, mut v) = (1.0_f64, 0.0_f64, 0.0_f64);
        let mut s = store_with(&[1.0]);
        let mut st = AdamState::new(&s);
        let cfg = AdamConfig { learning_rate: lr, beta1: b1, beta2: b2, eps };
        for (t, g) in grads.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32 + 1));
            let vh = v / (1.0 - b2.powi(t as i32 + 1));
            theta -= lr * mh / (vh.sqrt() + eps);
            adam_step(&mut s, &[Matrix::scalar(*g)], &mut st, &cfg).unwrap();
        }
        assert!((s.get(crate::numcore::ParamId(0)).get(0, 0) - theta).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut s = store_with(&[1.0]);
        let mut st = AdamState::new(&s);
        let err = adam_step(&mut s, &[Matrix::scalar(f64::NAN)], &mut st, &AdamConfig::default())
            .unwrap_err();
        match err {
            Error::Numeric(msg) => assert!(msg.contains("theta")),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(st.step(), 0);
    }
}
