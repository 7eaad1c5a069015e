//! Motion-pair interaction: ego speed and pedestrian box are embedded,
//! attend to each other through two multi-head units, and are merged,
//! normalized, and refined by a feed-forward network.

use crate::attention::{mha, AttentionParams};
use crate::error::{AcitError, Result};
use crate::layers::{bind_attention, declare_attention, Activation, Ffn, Norm};
use crate::params::{Bound, Init, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Speed `[N, 1]` and box `[N, 4]` (x1, y1, x2, y2).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionInputs<T: Scalar> {
    speed: Tensor<T>,
    bbox: Tensor<T>,
}

impl<T: Scalar> MotionInputs<T> {
    pub fn new(speed: Tensor<T>, bbox: Tensor<T>, steps: usize) -> Result<Self> {
        if speed.shape() != [steps, 1] || bbox.shape() != [steps, 4] {
            return Err(AcitError::dim(format!(
                "motion inputs must be [{steps},1] and [{steps},4], got {:?} and {:?}",
                speed.shape(),
                bbox.shape()
            )));
        }
        for (i, b) in bbox.data().chunks(4).enumerate() {
            if b[0] > b[2] || b[1] > b[3] {
                return Err(AcitError::Validation(format!(
                    "bounding box at step {i} has x1>x2 or y1>y2: {b:?}"
                )));
            }
        }
        Ok(MotionInputs { speed, bbox })
    }

    pub fn speed(&self) -> &Tensor<T> {
        &self.speed
    }

    pub fn bbox(&self) -> &Tensor<T> {
        &self.bbox
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AmmiParams {
    pub embed_speed: (Var, Var),
    pub embed_bbox: (Var, Var),
    pub norm_speed: Norm,
    pub norm_bbox: Norm,
    /// Query from speed.
    pub attn_s: AttentionParams,
    /// Query from box.
    pub attn_b: AttentionParams,
    pub norm_merge: Norm,
    pub ffn: Ffn,
}

pub fn declare<T: Scalar>(ps: &mut ParamSet<T>, seed: u64, prefix: &str, d: usize, ffn: usize) {
    ps.declare(seed, &format!("{prefix}.embed_speed.w"), &[1, d], Init::Xavier);
    ps.declare(seed, &format!("{prefix}.embed_speed.b"), &[d], Init::Zeros);
    ps.declare(seed, &format!("{prefix}.embed_bbox.w"), &[4, d], Init::Xavier);
    ps.declare(seed, &format!("{prefix}.embed_bbox.b"), &[d], Init::Zeros);
    Norm::declare(ps, seed, &format!("{prefix}.norm_speed"), d);
    Norm::declare(ps, seed, &format!("{prefix}.norm_bbox"), d);
    declare_attention(ps, seed, &format!("{prefix}.attn_s"), d);
    declare_attention(ps, seed, &format!("{prefix}.attn_b"), d);
    Norm::declare(ps, seed, &format!("{prefix}.norm_merge"), d);
    Ffn::declare(ps, seed, &format!("{prefix}.ffn"), d, ffn);
}

impl AmmiParams {
    pub fn bind(b: &Bound, prefix: &str) -> Result<Self> {
        let get = |n: &str| b.get(&format!("{prefix}.{n}"));
        Ok(AmmiParams {
            embed_speed: (get("embed_speed.w")?, get("embed_speed.b")?),
            embed_bbox: (get("embed_bbox.w")?, get("embed_bbox.b")?),
            norm_speed: Norm::bind(b, &format!("{prefix}.norm_speed"))?,
            norm_bbox: Norm::bind(b, &format!("{prefix}.norm_bbox"))?,
            attn_s: bind_attention(b, &format!("{prefix}.attn_s"))?,
            attn_b: bind_attention(b, &format!("{prefix}.attn_b"))?,
            norm_merge: Norm::bind(b, &format!("{prefix}.norm_merge"))?,
            ffn: Ffn::bind(b, &format!("{prefix}.ffn"))?,
        })
    }
}

/// Per-modality embedding followed by layer normalization.
pub fn embed_motion<T: Scalar>(
    tape: &mut Tape<T>,
    speed: Var,
    bbox: Var,
    p: &AmmiParams,
    eps: f64,
) -> Result<(Var, Var)> {
    let xs = tape.linear(speed, p.embed_speed.0, Some(p.embed_speed.1))?;
    let xs = p.norm_speed.forward(tape, xs, eps)?;
    let xb = tape.linear(bbox, p.embed_bbox.0, Some(p.embed_bbox.1))?;
    let xb = p.norm_bbox.forward(tape, xb, eps)?;
    Ok((xs, xb))
}

/// The two residual attention branches before merging.
///
/// With `cross` each branch queries the other modality; without it (the
/// self-attention ablation) each branch attends only to itself.
pub fn motion_branches<T: Scalar>(
    tape: &mut Tape<T>,
    xs: Var,
    xb: Var,
    p: &AmmiParams,
    heads: usize,
    dropout: f64,
    cross: bool,
) -> Result<(Var, Var)> {
    let (kv_s, kv_b) = if cross { (xb, xs) } else { (xs, xb) };
    let a_s = mha(tape, xs, kv_s, &p.attn_s, heads)?;
    let a_s = tape.dropout(a_s, dropout)?;
    let sb = tape.add(xs, a_s)?;
    let a_b = mha(tape, xb, kv_b, &p.attn_b, heads)?;
    let a_b = tape.dropout(a_b, dropout)?;
    let bs = tape.add(xb, a_b)?;
    Ok((sb, bs))
}

/// `h = LN(SB + BS)`, `F_M = FFN(h) + h`.
#[allow(clippy::too_many_arguments)]
pub fn cross_modal_block<T: Scalar>(
    tape: &mut Tape<T>,
    xs: Var,
    xb: Var,
    p: &AmmiParams,
    heads: usize,
    dropout: f64,
    cross: bool,
    eps: f64,
) -> Result<Var> {
    let (sb, bs) = motion_branches(tape, xs, xb, p, heads, dropout, cross)?;
    let merged = tape.add(sb, bs)?;
    let h = p.norm_merge.forward(tape, merged, eps)?;
    let f = p.ffn.forward(tape, h, Activation::Gelu)?;
    tape.add(f, h)
}
