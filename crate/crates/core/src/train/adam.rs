use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::NetParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per tensor plus the step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

/// One bias-corrected Adam update over matching tensor lists. A non-finite
/// gradient aborts the step before anything is modified.
pub fn adam_update(params: Vec<&mut [f64]>, grads: &[&[f64]], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.len() != g.len()) {
        return Err(Error::Dimension("parameter and gradient tensors disagree".into()));
    }
    if let Some(i) = grads.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
        log::error!("non-finite gradient in tensor {i}; step aborted");
        return Err(Error::Numeric(format!("non-finite gradient in tensor {i}")));
    }
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        state.v = state.m.clone();
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Adam on the network, followed by support-vector renormalisation.
pub fn adam_step(params: &mut NetParams, grads: &NetParams, state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<()> {
    let g: Vec<&[f64]> = grads.tensors().into_iter().map(|t| t.data).collect();
    adam_update(params.tensors_mut(), &g, state, lr, cfg)?;
    params.normalize_supports();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState::default();
        adam_update(vec![&mut p], &[&[0.0, 0.0]], &mut s, 0.1, &AdamConfig::default()).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![0.0];
        let mut s = AdamState::default();
        adam_update(vec![&mut p], &[&[1.0]], &mut s, 1e-5, &AdamConfig::default()).unwrap();
        assert!((p[0] + 1e-5).abs() < 1e-12);
    }

    #[test]
    fn quadratic_matches_reference_sequence() {
        // minimise (x − 3)²
        let cfg = AdamConfig::default();
        let mut x = vec![0.0];
        let mut s = AdamState::default();
        let (mut rx, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=10 {
            let g = 2.0 * (x[0] - 3.0);
            adam_update(vec![&mut x], &[&[g]], &mut s, 0.1, &cfg).unwrap();
            let rg = 2.0 * (rx - 3.0);
            m = 0.9 * m + 0.1 * rg;
            v = 0.999 * v + 0.001 * rg * rg;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            rx -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((x[0] - rx).abs() <= 1e-10);
        }
        assert!(x[0] > 0.5);
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = vec![1.0];
        let mut s = AdamState::default();
        let r = adam_update(vec![&mut p], &[&[f64::NAN]], &mut s, 0.1, &AdamConfig::default());
        assert!(matches!(r, Err(Error::Numeric(_))));
        assert_eq!(p, vec![1.0]);
        assert_eq!(s.t, 0);
    }
}
