//! Adam with bias correction, plus global-norm gradient clipping.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers, one per parameter, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn for_params(params: &ParamStore) -> Self {
        let zeros = || params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One Adam update. Increments `state.t` before applying the bias correction,
/// so the first call uses `t = 1`.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Training(format!(
            "adam: {} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    let ids: Vec<_> = params.ids().collect();
    for (&id, g) in ids.iter().zip(grads) {
        if g.numel() != params.get(id).numel() || state.m[id.index()].len() != g.numel() {
            return Err(Error::Training(format!(
                "adam: shape mismatch for parameter {}",
                params.name(id)
            )));
        }
        if !g.is_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient for parameter {}",
                params.name(id)
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (&id, g) in ids.iter().zip(grads) {
        let i = id.index();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let p = params.get_mut(id).data_mut();
        for (((pj, mj), vj), &gj) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = *mj / bc1;
            let v_hat = *vj / bc2;
            *pj -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clipping norm and whether clipping happened.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> (f64, bool) {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
        (norm, true)
    } else {
        (norm, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.add("x", Tensor::scalar(v));
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(1.5);
        let mut st = AdamState::for_params(&p);
        adam_step(&mut p, &[Tensor::scalar(0.0)], &mut st, &AdamConfig::with_lr(0.1)).unwrap();
        assert_eq!(p.get(p.id("x").unwrap()).item(), 1.5);
    }

    #[test]
    fn first_step_is_lr_sized() {
        // t=1: m̂ = g, v̂ = g², step = lr·g/(|g| + eps)
        let mut p = single(0.0);
        let mut st = AdamState::for_params(&p);
        adam_step(&mut p, &[Tensor::scalar(1.0)], &mut st, &AdamConfig::with_lr(0.1)).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.get(p.id("x").unwrap()).item() - expected).abs() < 1e-15);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn identical_params_move_identically() {
        let mut p = ParamStore::new();
        p.add("a", Tensor::row_vector(&[0.3, -0.2]));
        p.add("b", Tensor::row_vector(&[0.3, -0.2]));
        let mut st = AdamState::for_params(&p);
        let g = Tensor::row_vector(&[0.7, -1.1]);
        for _ in 0..5 {
            adam_step(&mut p, &[g.clone(), g.clone()], &mut st, &AdamConfig::with_lr(0.01)).unwrap();
        }
        assert_eq!(p.by_name("a"), p.by_name("b"));
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = single(0.0);
        let mut st = AdamState::for_params(&p);
        let err = adam_step(&mut p, &[Tensor::scalar(f64::NAN)], &mut st, &AdamConfig::default())
            .unwrap_err();
        assert!(matches!(&err, Error::Training(m) if m.contains('x')));
        assert_eq!(st.t, 0);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Tensor::row_vector(&[3.0, 4.0])];
        let (n, clipped) = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!(clipped);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15);
        let (_, clipped) = clip_global_norm(&mut g, 1.0 + 1e-9);
        assert!(!clipped);
    }
}
