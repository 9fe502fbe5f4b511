//! Adam with bias correction, plus global-norm gradient clipping.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimState {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        OptimState {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One Adam update. A non-finite gradient leaves both `params` and `state`
/// untouched and is reported as an error.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut OptimState, lr: f64) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != params.len() {
        return Err(Error::ShapeMismatch {
            what: "optimizer state length",
            expected: params.len(),
            found: if grads.len() != params.len() { grads.len() } else { state.m.len() },
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient("params"));
    }
    let AdamConfig { beta1, beta2, epsilon } = state.config;
    state.step += 1;
    let t = state.step.min(i32::MAX as u64) as i32;
    let bias1 = 1.0 - math::powi(beta1, t);
    let bias2 = 1.0 - math::powi(beta2, t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *p -= lr * m_hat / (math::sqrt(v_hat) + epsilon);
    }
    Ok(())
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = math::sqrt(grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum());
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = vec![1.0, -2.0, 0.5];
        let g = [3.0, -0.25, 1e-3];
        let mut st = OptimState::new(3, AdamConfig::default());
        adam_step(&mut p, &g, &mut st, 0.01).unwrap();
        // m_hat = g, v_hat = g², so the step is lr·g/(|g| + ε)
        for (i, (&before, &gi)) in [1.0, -2.0, 0.5].iter().zip(&g).enumerate() {
            let expected = before - 0.01 * gi / (gi.abs() + 1e-8);
            assert!((p[i] - expected).abs() < 1e-15);
            assert!(((before - p[i]) - 0.01 * gi.signum()).abs() < 1e-7);
        }
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut p = vec![1.0, 2.0];
        let mut st = OptimState::new(2, AdamConfig::default());
        adam_step(&mut p, &[1.0, -1.0], &mut st, 0.1).unwrap();
        let after_first = p.clone();
        let (m, v) = (st.m.clone(), st.v.clone());
        let mut zero_state = OptimState::new(2, AdamConfig::default());
        let mut q = vec![1.0, 2.0];
        adam_step(&mut q, &[0.0, 0.0], &mut zero_state, 0.1).unwrap();
        assert_eq!(q, vec![1.0, 2.0]);

        adam_step(&mut p, &[0.0, 0.0], &mut st, 0.0).unwrap();
        assert_eq!(p, after_first);
        for i in 0..2 {
            assert!((st.m[i] - 0.9 * m[i]).abs() < 1e-16);
            assert!((st.v[i] - 0.999 * v[i]).abs() < 1e-16);
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = vec![1.0, 2.0];
        let mut st = OptimState::new(2, AdamConfig::default());
        let err = adam_step(&mut p, &[f64::NAN, 0.0], &mut st, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(_)));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn quadratic_descends() {
        // f(p) = Σ a_i p_i², its own oracle
        let a = [1.0, 4.0, 0.5, 10.0];
        let f = |p: &[f64]| p.iter().zip(&a).map(|(x, ai)| ai * x * x).sum::<f64>();
        let mut p = vec![1.0, -1.0, 2.0, 0.5];
        let mut st = OptimState::new(4, AdamConfig::default());
        let mut losses = Vec::new();
        for _ in 0..100 {
            let g: Vec<f64> = p.iter().zip(&a).map(|(x, ai)| 2.0 * ai * x).collect();
            adam_step(&mut p, &g, &mut st, 0.01).unwrap();
            losses.push(f(&p));
        }
        for w in losses[5..].windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn clipping_caps_norm() {
        let mut a = vec![3.0, 0.0];
        let mut b = vec![4.0];
        let n = clip_global_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(n, 5.0);
        assert!((a[0] - 0.6).abs() < 1e-15 && (b[0] - 0.8).abs() < 1e-15);
    }
}
