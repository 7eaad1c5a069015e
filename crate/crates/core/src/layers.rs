//! Small building blocks shared by several modules.

use crate::attention::AttentionParams;
use crate::error::Result;
use crate::params::{Bound, Init, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

/// Two affine layers with an activation in between.
#[derive(Debug, Clone, Copy)]
pub struct Ffn {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl Ffn {
    pub fn declare<T: Scalar>(ps: &mut ParamSet<T>, seed: u64, prefix: &str, d: usize, hidden: usize) {
        ps.declare(seed, &format!("{prefix}.w1"), &[d, hidden], Init::Xavier);
        ps.declare(seed, &format!("{prefix}.b1"), &[hidden], Init::Zeros);
        ps.declare(seed, &format!("{prefix}.w2"), &[hidden, d], Init::Xavier);
        ps.declare(seed, &format!("{prefix}.b2"), &[d], Init::Zeros);
    }

    pub fn bind(b: &Bound, prefix: &str) -> Result<Self> {
        Ok(Ffn {
            w1: b.get(&format!("{prefix}.w1"))?,
            b1: b.get(&format!("{prefix}.b1"))?,
            w2: b.get(&format!("{prefix}.w2"))?,
            b2: b.get(&format!("{prefix}.b2"))?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, act: Activation) -> Result<Var> {
        let h = tape.linear(x, self.w1, Some(self.b1))?;
        let h = match act {
            Activation::Relu => tape.relu(h)?,
            Activation::Gelu => tape.gelu(h)?,
        };
        tape.linear(h, self.w2, Some(self.b2))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Norm {
    pub gain: Var,
    pub bias: Var,
}

impl Norm {
    pub fn declare<T: Scalar>(ps: &mut ParamSet<T>, seed: u64, prefix: &str, d: usize) {
        ps.declare(seed, &format!("{prefix}.gain"), &[d], Init::Ones);
        ps.declare(seed, &format!("{prefix}.bias"), &[d], Init::Zeros);
    }

    pub fn bind(b: &Bound, prefix: &str) -> Result<Self> {
        Ok(Norm {
            gain: b.get(&format!("{prefix}.gain"))?,
            bias: b.get(&format!("{prefix}.bias"))?,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, x: Var, eps: f64) -> Result<Var> {
        tape.layer_norm(x, self.gain, self.bias, eps)
    }
}

/// Declare `w_q`, `w_k`, `w_v`, `w_o`, all `d x d`.
pub fn declare_attention<T: Scalar>(ps: &mut ParamSet<T>, seed: u64, prefix: &str, d: usize) {
    for m in ["w_q", "w_k", "w_v", "w_o"] {
        ps.declare(seed, &format!("{prefix}.{m}"), &[d, d], Init::Xavier);
    }
}

pub fn bind_attention(b: &Bound, prefix: &str) -> Result<AttentionParams> {
    Ok(AttentionParams {
        w_q: b.get(&format!("{prefix}.w_q"))?,
        w_k: b.get(&format!("{prefix}.w_k"))?,
        w_v: b.get(&format!("{prefix}.w_v"))?,
        w_o: Some(b.get(&format!("{prefix}.w_o"))?),
    })
}
