//! Central finite-difference gradient checking.
//!
//! The numerical side only ever evaluates the forward pass, so it is an
//! independent route to the derivative the tape's backward rules compute.
//!
//! Error metric per input tensor: `max_i |a_i - n_i| / max(max_i |a_i|,
//! max_i |n_i|, 1e-12)`, i.e. the max-norm of the difference relative to the
//! max-norm of the gradient. It is strict for the dominant entries and does
//! not blow up on entries that are zero up to rounding.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Relative error for each input, in input order.
    pub errors: Vec<f64>,
    pub analytic: Vec<Tensor<f64>>,
    pub numeric: Vec<Tensor<f64>>,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

pub fn relative_error(a: &Tensor<f64>, n: &Tensor<f64>) -> f64 {
    let scale = a
        .data()
        .iter()
        .chain(n.data())
        .map(|v| v.abs())
        .fold(1e-12, f64::max);
    a.max_abs_diff(n) / scale
}

/// Compare tape gradients of the scalar `f(inputs)` with central differences.
pub fn check<F>(inputs: &[Tensor<f64>], h: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.shape()))
        .collect();

    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = Tensor::zeros(inputs[i].shape());
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let fp = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let fm = eval(&work)?;
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (fp - fm) / (2.0 * h);
        }
        numeric.push(g);
    }
    let errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .collect();
    Ok(GradCheck {
        errors,
        analytic,
        numeric,
    })
}
