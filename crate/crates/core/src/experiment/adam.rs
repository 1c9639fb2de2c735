//! Optimizers: Adam with bias correction, and plain SGD.

use std::collections::BTreeMap;

use crate::model::ParamStore;
use crate::tensor::Tensor;

use super::ExperimentError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates per parameter, plus the step counter for
/// bias correction. Moments appear lazily on first update.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    t: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update over every gradient in `grads`.
/// Parameters without a gradient entry are untouched.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<(), ExperimentError> {
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (name, g) in grads {
        let theta = params.get_mut(name).ok_or_else(|| {
            ExperimentError::Invalid(format!("gradient for unknown parameter {name}"))
        })?;
        if g.shape() != theta.shape() {
            return Err(ExperimentError::Invalid(format!(
                "gradient shape {:?} does not match parameter {name} {:?}",
                g.shape(),
                theta.shape()
            )));
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
        for ((t, &gi), (mi, vi)) in theta
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()))
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *t -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Plain gradient descent.
pub fn sgd_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    lr: f64,
) -> Result<(), ExperimentError> {
    for (name, g) in grads {
        let theta = params.get_mut(name).ok_or_else(|| {
            ExperimentError::Invalid(format!("gradient for unknown parameter {name}"))
        })?;
        if g.shape() != theta.shape() {
            return Err(ExperimentError::Invalid(format!(
                "gradient shape {:?} does not match parameter {name} {:?}",
                g.shape(),
                theta.shape()
            )));
        }
        for (t, &gi) in theta.data_mut().iter_mut().zip(g.data()) {
            *t -= lr * gi;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(entries: &[(&str, &[f64])]) -> ParamStore {
        let mut s = ParamStore::new();
        for (name, data) in entries {
            s.insert(name, Tensor::from_vec(&[data.len()], data.to_vec()));
        }
        s
    }

    fn grads(entries: &[(&str, &[f64])]) -> BTreeMap<String, Tensor> {
        entries
            .iter()
            .map(|(n, d)| (n.to_string(), Tensor::from_vec(&[d.len()], d.to_vec())))
            .collect()
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // t=1, g=1: m̂ = 1, v̂ = 1, Δθ = −lr / (1 + eps)
        let mut params = store(&[("w", &[0.0])]);
        let mut state = AdamState::new();
        adam_step(
            &mut params,
            &grads(&[("w", &[1.0])]),
            &mut state,
            1e-3,
            ADAM_BETA1,
            ADAM_BETA2,
            ADAM_EPS,
        )
        .unwrap();
        let expected = -1e-3 / (1.0 + ADAM_EPS);
        let got = params.get("w").unwrap().data()[0];
        assert!((got - expected).abs() < 1e-18, "{got} vs {expected}");
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = store(&[("w", &[0.25, -0.5])]);
        let before = params.digest();
        let mut state = AdamState::new();
        for _ in 0..3 {
            adam_step(
                &mut params,
                &grads(&[("w", &[0.0, 0.0])]),
                &mut state,
                1e-3,
                ADAM_BETA1,
                ADAM_BETA2,
                ADAM_EPS,
            )
            .unwrap();
        }
        assert_eq!(params.digest(), before);
    }

    #[test]
    fn equal_gradients_give_equal_updates() {
        let mut params = store(&[("w", &[0.1, 0.1])]);
        let mut state = AdamState::new();
        adam_step(
            &mut params,
            &grads(&[("w", &[0.7, 0.7])]),
            &mut state,
            1e-2,
            ADAM_BETA1,
            ADAM_BETA2,
            ADAM_EPS,
        )
        .unwrap();
        let w = params.get("w").unwrap().data();
        assert_eq!(w[0], w[1]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = store(&[("w", &[0.0, 0.0])]);
        let mut state = AdamState::new();
        let err = adam_step(
            &mut params,
            &grads(&[("w", &[1.0])]),
            &mut state,
            1e-3,
            ADAM_BETA1,
            ADAM_BETA2,
            ADAM_EPS,
        );
        assert!(err.is_err());
    }

    #[test]
    fn sgd_is_plain_descent() {
        let mut params = store(&[("w", &[1.0])]);
        sgd_step(&mut params, &grads(&[("w", &[0.5])]), 0.1).unwrap();
        assert!((params.get("w").unwrap().data()[0] - 0.95).abs() < 1e-15);
    }
}
