//! Adaptive-moment optimizer step with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gradient::Gradient;
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Per-parameter first/second moment accumulators plus hyperparameters.
/// Moments are shaped identically to their parameters and created lazily
/// on first touch; the step counter is strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64) -> Self {
        OptimizerState::with_hyper(learning_rate, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(learning_rate: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        OptimizerState {
            learning_rate,
            beta1,
            beta2,
            eps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

/// One update. Only keys present in the gradient are touched (their
/// moments decay even on zero gradient coordinates). A non-finite
/// gradient coordinate refuses the whole step, leaving parameters and
/// state untouched.
pub fn optimizer_step(
    params: &mut ParamSet,
    gradient: &Gradient,
    state: &mut OptimizerState,
) -> Result<()> {
    for (name, g) in gradient.iter() {
        let p = params.get(name).map_err(|_| {
            Error::invalid(format!("gradient key '{name}' is not a model parameter"))
        })?;
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "optimizer_step",
                format!("'{name}': param {:?} vs gradient {:?}", p.shape(), g.shape()),
            ));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite { context: format!("gradient for '{name}'") });
        }
    }

    let t = state.step + 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);

    for (name, g) in gradient.iter() {
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        for (mi, gi) in m.values_mut().iter_mut().zip(g.values()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
        }
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(g.shape().to_vec()));
        for (vi, gi) in v.values_mut().iter_mut().zip(g.values()) {
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
        }
        let (m, v) = (&state.m[name], &state.v[name]);
        let p = params.get_mut(name)?;
        for ((pi, mi), vi) in p.values_mut().iter_mut().zip(m.values()).zip(v.values()) {
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *pi -= state.learning_rate * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    state.step = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(vals: Vec<f64>) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::vector(vals)).unwrap();
        p
    }

    fn grad_of(vals: Vec<f64>) -> Gradient {
        let mut g = Gradient::new();
        g.insert("w", Tensor::vector(vals));
        g
    }

    #[test]
    fn zero_gradient_leaves_fresh_params_unchanged() {
        let mut params = one_param(vec![1.0, -2.0]);
        let mut state = OptimizerState::new(0.1);
        optimizer_step(&mut params, &grad_of(vec![0.0, 0.0]), &mut state).unwrap();
        assert_eq!(params.get("w").unwrap().values(), &[1.0, -2.0]);
        assert_eq!(state.step, 1);
        assert_eq!(state.m["w"].values(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_gradient_decays_existing_moments() {
        let mut params = one_param(vec![1.0]);
        let mut state = OptimizerState::new(0.0); // lr 0: observe moments only
        optimizer_step(&mut params, &grad_of(vec![2.0]), &mut state).unwrap();
        let m1 = state.m["w"].values()[0];
        optimizer_step(&mut params, &grad_of(vec![0.0]), &mut state).unwrap();
        assert!((state.m["w"].values()[0] - 0.9 * m1).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_sign_scaled_update() {
        // After bias correction the first update is lr * g / (|g| + eps).
        let g = vec![3.0, -0.25, 1e-3];
        let lr = 0.01;
        let mut params = one_param(vec![0.0, 0.0, 0.0]);
        let mut state = OptimizerState::new(lr);
        optimizer_step(&mut params, &grad_of(g.clone()), &mut state).unwrap();
        for (p, gi) in params.get("w").unwrap().values().iter().zip(&g) {
            let expect = -lr * gi / (gi.abs() + state.eps);
            assert!((p - expect).abs() < 1e-12, "{p} vs {expect}");
        }
    }

    #[test]
    fn non_finite_gradient_refuses_step() {
        let mut params = one_param(vec![1.0]);
        let mut state = OptimizerState::new(0.1);
        let err = optimizer_step(&mut params, &grad_of(vec![f64::NAN]), &mut state);
        assert!(matches!(err, Err(Error::NonFinite { .. })));
        assert_eq!(params.get("w").unwrap().values(), &[1.0], "params untouched");
        assert_eq!(state.step, 0, "step counter untouched");
    }

    #[test]
    fn unknown_gradient_key_rejected() {
        let mut params = one_param(vec![1.0]);
        let mut state = OptimizerState::new(0.1);
        let mut g = Gradient::new();
        g.insert("nope", Tensor::vector(vec![1.0]));
        assert!(optimizer_step(&mut params, &g, &mut state).is_err());
    }

    #[test]
    fn hundred_steps_are_bitwise_reproducible() {
        let run = || {
            let mut params = one_param(vec![0.5, -0.5, 2.0]);
            let mut state = OptimizerState::new(3e-3);
            for step in 0..100 {
                // Deterministic pseudo-gradient stream.
                let g: Vec<f64> =
                    (0..3).map(|i| ((step * 3 + i) as f64 * 0.37).sin()).collect();
                optimizer_step(&mut params, &grad_of(g), &mut state).unwrap();
            }
            params.get("w").unwrap().values().to_vec()
        };
        let (a, b) = (run(), run());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
