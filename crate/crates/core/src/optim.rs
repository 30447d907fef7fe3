//! Adam with bias correction.

use alloc::string::ToString;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
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

/// First and second moment estimates per parameter, and the number of
/// updates applied so far.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape().clone())).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// Every gradient is checked before anything is written, so on error the
/// parameters and state are untouched. `names` labels parameters in the
/// error message.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
    names: &[&str],
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::contract("parameter, gradient and state counts differ"));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                lhs: p.shape().clone(),
                rhs: g.shape().clone(),
            });
        }
        if let Some((j, &v)) = g.data().iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFiniteGradient {
                param: names.get(i).map_or_else(|| alloc::format!("#{i}"), |n| n.to_string()),
                index: j,
                value: v,
            });
        }
    }

    state.t += 1;
    let t = state.t as f64;
    let c1 = 1.0 - libm::pow(cfg.beta1, t);
    let c2 = 1.0 - libm::pow(cfg.beta2, t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut());
        for (((p, &g), m), v) in it {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= cfg.lr * m_hat / (libm::sqrt(v_hat) + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn scalar_param(v: f64) -> Vec<Tensor> {
        vec![Tensor::vector(vec![v]).unwrap()]
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let cfg = AdamConfig::default();
        for g in [3.0, -0.2, 1e-3] {
            let mut p = scalar_param(1.0);
            let mut s = AdamState::new(&p);
            adam_step(&mut p, &scalar_param(g), &mut s, &cfg, &["w"]).unwrap();
            let delta = p[0].data()[0] - 1.0;
            let expected = -cfg.lr * g.signum();
            assert!((delta - expected).abs() < 1e-8, "g={g}: {delta}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let cfg = AdamConfig::default();
        let mut p = scalar_param(0.7);
        let mut s = AdamState::new(&p);
        for _ in 0..100 {
            adam_step(&mut p, &scalar_param(0.0), &mut s, &cfg, &["w"]).unwrap();
        }
        assert_eq!(p[0].data()[0], 0.7);
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut p = scalar_param(0.0);
        let mut s = AdamState::new(&p);
        for _ in 0..200 {
            let w = p[0].data()[0];
            adam_step(&mut p, &scalar_param(2.0 * (w - 3.0)), &mut s, &cfg, &["w"]).unwrap();
        }
        assert!((p[0].data()[0] - 3.0).abs() < 0.05, "{}", p[0].data()[0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter_and_changes_nothing() {
        let cfg = AdamConfig::default();
        let mut p = vec![Tensor::vector(vec![1.0]).unwrap(), Tensor::vector(vec![1.0, 2.0]).unwrap()];
        let before = p.clone();
        let mut s = AdamState::new(&p);
        let g = vec![Tensor::vector(vec![0.5]).unwrap(), Tensor::vector(vec![0.1, f64::NAN]).unwrap()];
        let err = adam_step(&mut p, &g, &mut s, &cfg, &["a", "b"]).unwrap_err();
        match err {
            Error::NonFiniteGradient { param, index, .. } => {
                assert_eq!(param, "b");
                assert_eq!(index, 1);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(p, before);
        assert_eq!(s.t, 0);
    }

    #[test]
    fn gradient_scale_keeps_update_signs() {
        let cfg = AdamConfig {
            eps: 1e-12,
            ..AdamConfig::default()
        };
        let g = vec![Tensor::vector(vec![0.3, -2.0, 1e-4, -5e-3]).unwrap()];
        let g10 = vec![g[0].map(|x| 10.0 * x)];
        let run = |g: &[Tensor]| {
            let mut p = vec![Tensor::zeros([4])];
            let mut s = AdamState::new(&p);
            for _ in 0..5 {
                adam_step(&mut p, g, &mut s, &cfg, &["w"]).unwrap();
            }
            p[0].clone()
        };
        let (a, b) = (run(&g), run(&g10));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.signum(), y.signum());
            assert!((x - y).abs() < 1e-9);
        }
    }
}
