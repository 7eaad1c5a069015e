//! Per-step inter-modal attention over the three modality features
//! (local visual, global visual, motion) and their concatenation.

use crate::error::{AcitError, Result};
use crate::params::{Bound, Init, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;

pub const GROUPS: [&str; 3] = ["l", "g", "m"];

/// `W_i^Q`, `W_i^K`, `W_i^V` for i in (L, G, M).
#[derive(Debug, Clone, Copy)]
pub struct InterModalParams {
    pub w_q: [Var; 3],
    pub w_k: [Var; 3],
    pub w_v: [Var; 3],
}

#[derive(Debug, Clone, Copy)]
pub enum MmffParams {
    Attention(InterModalParams),
    /// Sum of the three features through an affine map to the fused width.
    Sum { w: Var, b: Var },
}

pub fn declare_attention<T: Scalar>(ps: &mut ParamSet<T>, seed: u64, prefix: &str, d: usize) {
    for g in GROUPS {
        for m in ["w_q", "w_k", "w_v"] {
            ps.declare(seed, &format!("{prefix}.{m}_{g}"), &[d, d], Init::Xavier);
        }
    }
}

pub fn declare_sum<T: Scalar>(ps: &mut ParamSet<T>, seed: u64, prefix: &str, d: usize) {
    ps.declare(seed, &format!("{prefix}.sum_proj.w"), &[d, 3 * d], Init::Xavier);
    ps.declare(seed, &format!("{prefix}.sum_proj.b"), &[3 * d], Init::Zeros);
}

impl InterModalParams {
    pub fn bind(b: &Bound, prefix: &str) -> Result<Self> {
        let get = |m: &str| -> Result<[Var; 3]> {
            Ok([
                b.get(&format!("{prefix}.{m}_l"))?,
                b.get(&format!("{prefix}.{m}_g"))?,
                b.get(&format!("{prefix}.{m}_m"))?,
            ])
        };
        Ok(InterModalParams {
            w_q: get("w_q")?,
            w_k: get("w_k")?,
            w_v: get("w_v")?,
        })
    }
}

impl MmffParams {
    pub fn bind(b: &Bound, prefix: &str) -> Result<Self> {
        if b.has(&format!("{prefix}.sum_proj.w")) {
            Ok(MmffParams::Sum {
                w: b.get(&format!("{prefix}.sum_proj.w"))?,
                b: b.get(&format!("{prefix}.sum_proj.b"))?,
            })
        } else {
            Ok(MmffParams::Attention(InterModalParams::bind(b, prefix)?))
        }
    }
}

/// `[.., d]` x3 to `[.., 3, d]`.
fn stack3<T: Scalar>(tape: &mut Tape<T>, xs: [Var; 3]) -> Result<Var> {
    let s = tape.shape(xs[0]).to_vec();
    for &x in &xs[1..] {
        if tape.shape(x) != s.as_slice() {
            return Err(AcitError::dim(format!(
                "modality features {s:?} and {:?} differ",
                tape.shape(x)
            )));
        }
    }
    if s.is_empty() {
        return Err(AcitError::dim("modality features must have a feature axis"));
    }
    let axis = s.len() - 1;
    let cat = tape.concat(&xs, axis)?;
    let mut shape = s.clone();
    shape.insert(axis, 3);
    tape.reshape(cat, &shape)
}

/// Row `i` of the result is `softmax_j(q_i . k_j / sqrt(d))`; shape `[.., 3, 3]`.
pub fn intermodal_weights<T: Scalar>(tape: &mut Tape<T>, q: [Var; 3], k: [Var; 3]) -> Result<Var> {
    let qs = stack3(tape, q)?;
    let ks = stack3(tape, k)?;
    if tape.shape(qs) != tape.shape(ks) {
        return Err(AcitError::dim(format!(
            "queries {:?} and keys {:?}",
            tape.shape(qs),
            tape.shape(ks)
        )));
    }
    let d = *tape.shape(qs).last().unwrap();
    let kt = tape.transpose(ks)?;
    let logits = tape.matmul(qs, kt)?;
    let logits = tape.scale(logits, T::of(1.0 / (d as f64).sqrt()))?;
    tape.softmax_last(logits)
}

/// Refined features `f~_i = sum_j alpha_ij V_j`, as `[.., 3, d]`, plus the
/// weights.
pub fn refine<T: Scalar>(
    tape: &mut Tape<T>,
    feats: [Var; 3],
    p: &InterModalParams,
) -> Result<(Var, Var)> {
    let mut q = feats;
    let mut k = feats;
    let mut v = feats;
    for i in 0..3 {
        q[i] = tape.linear(feats[i], p.w_q[i], None)?;
        k[i] = tape.linear(feats[i], p.w_k[i], None)?;
        v[i] = tape.linear(feats[i], p.w_v[i], None)?;
    }
    let w = intermodal_weights(tape, q, k)?;
    let vs = stack3(tape, v)?;
    let out = tape.matmul(w, vs)?;
    Ok((out, w))
}

/// One time step: three `[d]` features in, three refined `[d]` out.
pub fn refine_step<T: Scalar>(
    tape: &mut Tape<T>,
    feats: [Var; 3],
    p: &InterModalParams,
) -> Result<[Var; 3]> {
    let d = *tape
        .shape(feats[0])
        .first()
        .ok_or_else(|| AcitError::dim("refine_step needs vector features"))?;
    let mut rows = feats;
    for i in 0..3 {
        if tape.shape(feats[i]) != [d] {
            return Err(AcitError::dim(format!(
                "refine_step features must be [{d}], got {:?}",
                tape.shape(feats[i])
            )));
        }
        rows[i] = tape.reshape(feats[i], &[1, d])?;
    }
    let (out, _) = refine(tape, rows, p)?;
    let mut res = feats;
    for (i, r) in res.iter_mut().enumerate() {
        let s = tape.slice(out, 1, i, 1)?;
        *r = tape.reshape(s, &[d])?;
    }
    Ok(res)
}

/// `[N, d]` x3 to the fused `[N, 3d]` sequence.
pub fn mmff_forward<T: Scalar>(
    tape: &mut Tape<T>,
    f_l: Var,
    f_g: Var,
    f_m: Var,
    p: &MmffParams,
) -> Result<Var> {
    let s = tape.shape(f_l).to_vec();
    if s.len() != 2 || tape.shape(f_g) != s.as_slice() || tape.shape(f_m) != s.as_slice() {
        return Err(AcitError::contract(format!(
            "mmff inputs must share one [N, d] shape, got {s:?}, {:?}, {:?}",
            tape.shape(f_g),
            tape.shape(f_m)
        )));
    }
    let (n, d) = (s[0], s[1]);
    match p {
        MmffParams::Attention(ip) => {
            let (out, _) = refine(tape, [f_l, f_g, f_m], ip)?;
            tape.reshape(out, &[n, 3 * d])
        }
        MmffParams::Sum { w, b } => {
            let sum = tape.add(f_l, f_g)?;
            let sum = tape.add(sum, f_m)?;
            tape.linear(sum, *w, Some(*b))
        }
    }
}
