//! Temporal aggregation: a CLS-prefixed post-norm Transformer encoder over
//! the fused sequence, the MLP classifier, and the weighted loss.

use crate::attention::{mha, positional_encoding, prepend_cls, AttentionParams};
use crate::error::{AcitError, Result};
use crate::layers::{bind_attention, declare_attention, Activation, Ffn, Norm};
use crate::params::{Bound, Init, ParamSet};
use crate::tape::{softplus, Tape, Var};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct EncoderLayer {
    pub attn: AttentionParams,
    pub norm1: Norm,
    pub ffn: Ffn,
    pub norm2: Norm,
}

impl EncoderLayer {
    pub fn declare<T: Scalar>(ps: &mut ParamSet<T>, seed: u64, prefix: &str, d: usize, ffn: usize) {
        declare_attention(ps, seed, &format!("{prefix}.attn"), d);
        Norm::declare(ps, seed, &format!("{prefix}.norm1"), d);
        Ffn::declare(ps, seed, &format!("{prefix}.ffn"), d, ffn);
        Norm::declare(ps, seed, &format!("{prefix}.norm2"), d);
    }

    pub fn bind(b: &Bound, prefix: &str) -> Result<Self> {
        Ok(EncoderLayer {
            attn: bind_attention(b, &format!("{prefix}.attn"))?,
            norm1: Norm::bind(b, &format!("{prefix}.norm1"))?,
            ffn: Ffn::bind(b, &format!("{prefix}.ffn"))?,
            norm2: Norm::bind(b, &format!("{prefix}.norm2"))?,
        })
    }
}

/// CLS vector plus a stack of encoder layers.
#[derive(Debug, Clone)]
pub struct TemporalEncoder {
    pub cls: Var,
    pub layers: Vec<EncoderLayer>,
}

impl TemporalEncoder {
    pub fn declare<T: Scalar>(
        ps: &mut ParamSet<T>,
        seed: u64,
        prefix: &str,
        d: usize,
        layers: usize,
        ffn: usize,
    ) {
        ps.declare(seed, &format!("{prefix}.cls"), &[d], Init::Normal(0.02));
        for l in 0..layers {
            EncoderLayer::declare(ps, seed, &format!("{prefix}.layer{l}"), d, ffn);
        }
    }

    pub fn bind(b: &Bound, prefix: &str) -> Result<Self> {
        let cls = b.get(&format!("{prefix}.cls"))?;
        let mut layers = Vec::new();
        while b.has(&format!("{prefix}.layer{}.attn.w_q", layers.len())) {
            layers.push(EncoderLayer::bind(b, &format!("{prefix}.layer{}", layers.len()))?);
        }
        if layers.is_empty() {
            return Err(AcitError::config(format!("encoder '{prefix}' has no layers")));
        }
        Ok(TemporalEncoder { cls, layers })
    }
}

/// `x1 = LN(x + MHSA(x))`, `out = LN(x1 + FFN(x1))`.
pub fn encoder_layer<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    p: &EncoderLayer,
    heads: usize,
    expected_len: usize,
    eps: f64,
) -> Result<Var> {
    let s = tape.shape(x);
    if s.len() != 2 || s[0] != expected_len {
        return Err(AcitError::contract(format!(
            "encoder layer expects {expected_len} rows, got shape {s:?}"
        )));
    }
    let a = mha(tape, x, x, &p.attn, heads)?;
    let r1 = tape.add(x, a)?;
    let x1 = p.norm1.forward(tape, r1, eps)?;
    let f = p.ffn.forward(tape, x1, Activation::Relu)?;
    let r2 = tape.add(x1, f)?;
    p.norm2.forward(tape, r2, eps)
}

/// `[N, d]` to the final CLS state `[d]`.
pub fn temporal_encode<T: Scalar>(
    tape: &mut Tape<T>,
    seq: Var,
    p: &TemporalEncoder,
    heads: usize,
    positional: bool,
    eps: f64,
) -> Result<Var> {
    let s = tape.shape(seq).to_vec();
    if s.len() != 2 {
        return Err(AcitError::dim(format!("temporal sequence must be [N, d], got {s:?}")));
    }
    let (n, d) = (s[0], s[1]);
    let mut x = prepend_cls(tape, seq, p.cls)?;
    if positional {
        let pe = tape.constant(positional_encoding(n + 1, d)?);
        x = tape.add(x, pe)?;
    }
    for layer in &p.layers {
        x = encoder_layer(tape, x, layer, heads, n + 1, eps)?;
    }
    let row = tape.slice(x, 0, 0, 1)?;
    tape.reshape(row, &[d])
}

/// `d -> hidden` (ReLU) -> dropout -> `1`.
#[derive(Debug, Clone, Copy)]
pub struct MlpHead {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Names of the head weight matrices, the only L2-penalized parameters.
pub const HEAD_WEIGHTS: [&str; 2] = ["head.w1", "head.w2"];

impl MlpHead {
    pub fn declare<T: Scalar>(ps: &mut ParamSet<T>, seed: u64, d: usize, hidden: usize) {
        ps.declare(seed, "head.w1", &[d, hidden], Init::Xavier);
        ps.declare(seed, "head.b1", &[hidden], Init::Zeros);
        ps.declare(seed, "head.w2", &[hidden, 1], Init::Xavier);
        ps.declare(seed, "head.b2", &[1], Init::Zeros);
    }

    pub fn bind(b: &Bound) -> Result<Self> {
        Ok(MlpHead {
            w1: b.get("head.w1")?,
            b1: b.get("head.b1")?,
            w2: b.get("head.w2")?,
            b2: b.get("head.b2")?,
        })
    }
}

/// `[d]` to a `[1]` logit.
pub fn mlp_head<T: Scalar>(tape: &mut Tape<T>, x: Var, p: &MlpHead, dropout: f64) -> Result<Var> {
    let d = tape.shape(x).iter().product::<usize>();
    let row = tape.reshape(x, &[1, d])?;
    let h = tape.linear(row, p.w1, Some(p.b1))?;
    let h = tape.relu(h)?;
    let h = tape.dropout(h, dropout)?;
    let z = tape.linear(h, p.w2, Some(p.b2))?;
    tape.reshape(z, &[1])
}

/// Fused `[N, D]` sequence to a `[1]` logit. Without an encoder the steps
/// are mean-pooled instead.
pub fn tfa_forward<T: Scalar>(
    tape: &mut Tape<T>,
    fused: Var,
    encoder: Option<&TemporalEncoder>,
    head: &MlpHead,
    heads: usize,
    positional: bool,
    dropout: f64,
    eps: f64,
) -> Result<Var> {
    let summary = match encoder {
        Some(enc) => temporal_encode(tape, fused, enc, heads, positional, eps)?,
        None => tape.mean(fused, 0)?,
    };
    mlp_head(tape, summary, head, dropout)
}

/// `w * (softplus(z) - y z)` with `w = w_pos` for `y = 1`, `w_neg` otherwise.
pub fn weighted_bce(logit: f64, label: f64, w_pos: f64, w_neg: f64) -> Result<f64> {
    if !(w_pos > 0.0 && w_neg > 0.0) {
        return Err(AcitError::config(format!(
            "class weights must be > 0, got ({w_pos}, {w_neg})"
        )));
    }
    let w = if label >= 0.5 { w_pos } else { w_neg };
    Ok(w * (softplus(logit) - label * logit))
}

/// `lambda * sum(w^2)` over the given weights.
pub fn l2_penalty<T: Scalar>(tape: &mut Tape<T>, weights: &[Var], lambda: f64) -> Result<Option<Var>> {
    let mut total: Option<Var> = None;
    for &w in weights {
        let sq = tape.mul(w, w)?;
        let s = tape.sum(sq)?;
        total = Some(match total {
            Some(t) => tape.add(t, s)?,
            None => s,
        });
    }
    match total {
        Some(t) if lambda != 0.0 => Ok(Some(tape.scale(t, T::of(lambda))?)),
        _ => Ok(None),
    }
}
