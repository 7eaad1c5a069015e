//! Adam with bias correction.

use crate::error::{AcitError, Result};
use crate::params::ParamSet;
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments plus the step count.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One update of every parameter in `params` from `grads`.
pub fn adam_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, p) in params.iter() {
        let shapes = [grads.get(name), state.m.get(name), state.v.get(name)].map(|t| t.map(|t| t.shape()));
        if shapes.iter().any(|s| *s != Some(p.shape())) {
            return Err(AcitError::contract(format!(
                "adam: parameter '{name}' {:?} has gradient/state shapes {shapes:?}",
                p.shape()
            )));
        }
    }
    if grads.len() != params.len() {
        return Err(AcitError::contract(format!(
            "adam: {} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let AdamState { m, v, .. } = state;
    for ((name, p), ((_, m), (_, v))) in params.iter_mut().zip(m.iter_mut().zip(v.iter_mut())) {
        let g = grads.get(name).expect("checked above");
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            let g = g.as_f64();
            let mn = b1 * m.as_f64() + (1.0 - b1) * g;
            let vn = b2 * v.as_f64() + (1.0 - b2) * g * g;
            *m = T::of(mn);
            *v = T::of(vn);
            let update = cfg.lr * (mn / c1) / ((vn / c2).sqrt() + cfg.eps);
            *p = T::of(p.as_f64() - update);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut ps = ParamSet::<f64>::new();
        ps.insert("a", Tensor::from_f64(vec![2], &[1.0, -2.0]).unwrap());
        let before = ps.clone();
        let mut st = AdamState::new(&ps);
        let g = ps.zeros_like();
        adam_step(&mut ps, &g, &mut st, &AdamConfig::new(0.1)).unwrap();
        assert_eq!(ps.get("a"), before.get("a"));
        assert!(st.m.get("a").unwrap().data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let mut ps = ParamSet::<f64>::new();
        ps.insert("a", Tensor::zeros(&[2]));
        let mut g = ParamSet::new();
        g.insert("a", Tensor::zeros(&[3]));
        let mut st = AdamState::new(&ps);
        let err = adam_step(&mut ps, &g, &mut st, &AdamConfig::new(0.1)).unwrap_err();
        assert!(matches!(err, AcitError::Contract(_)));
    }
}
