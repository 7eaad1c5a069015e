//! Attention primitives shared by every fusion block.

use crate::error::{AcitError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Projection weights of one (multi-head) attention unit, bound on a tape.
///
/// `w_q`, `w_k`, `w_v` are `d_in x (heads * d_head)`; column block `h`
/// is head `h`'s projection. `w_o` maps the concatenated heads back to
/// `d_model`; it is absent for the single-head dual-path attention.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Option<Var>,
}

/// Sinusoidal table: `pe[p, 2i] = sin(p / 10000^(2i/d))`,
/// `pe[p, 2i+1] = cos(p / 10000^(2i/d))`.
pub fn positional_encoding<T: Scalar>(len: usize, d: usize) -> Result<Tensor<T>> {
    if len == 0 || d == 0 || d % 2 != 0 {
        return Err(AcitError::config(format!(
            "positional encoding needs len >= 1 and even d, got len={len} d={d}"
        )));
    }
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for i in 0..d / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data.push(T::of(angle.sin()));
            data.push(T::of(angle.cos()));
        }
    }
    Tensor::new(vec![len, d], data)
}

/// `softmax(q k^T / sqrt(d)) v`, returning the output and the attention
/// weights.
pub fn sdpa_with_weights<T: Scalar>(
    tape: &mut Tape<T>,
    q: Var,
    k: Var,
    v: Var,
) -> Result<(Var, Var)> {
    let (sq, sk, sv) = (tape.shape(q), tape.shape(k), tape.shape(v));
    let r = sq.len();
    let ok = r >= 2
        && sk.len() == r
        && sv.len() == r
        && sq[..r - 2] == sk[..r - 2]
        && sk[..r - 2] == sv[..r - 2]
        && sq[r - 1] == sk[r - 1]
        && sk[r - 2] == sv[r - 2]
        && sq[r - 1] > 0;
    if !ok {
        return Err(AcitError::dim(format!(
            "sdpa with q {sq:?}, k {sk:?}, v {sv:?}"
        )));
    }
    let d = sq[r - 1];
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let logits = tape.scale(logits, T::of(1.0 / (d as f64).sqrt()))?;
    let weights = tape.softmax_last(logits)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

pub fn sdpa<T: Scalar>(tape: &mut Tape<T>, q: Var, k: Var, v: Var) -> Result<Var> {
    Ok(sdpa_with_weights(tape, q, k, v)?.0)
}

/// Multi-head attention: per-head `sdpa`, heads concatenated along the
/// feature axis, then projected by `w_o`.
pub fn mha<T: Scalar>(
    tape: &mut Tape<T>,
    x_q: Var,
    x_kv: Var,
    p: &AttentionParams,
    heads: usize,
) -> Result<Var> {
    let width = *tape
        .shape(p.w_q)
        .last()
        .ok_or_else(|| AcitError::dim("w_q has no columns"))?;
    if heads == 0 || width % heads != 0 {
        return Err(AcitError::config(format!(
            "{width} features cannot be split into {heads} heads"
        )));
    }
    let d_head = width / heads;
    let q = tape.linear(x_q, p.w_q, None)?;
    let k = tape.linear(x_kv, p.w_k, None)?;
    let v = tape.linear(x_kv, p.w_v, None)?;
    let axis = tape.shape(q).len() - 1;
    let concat = if heads == 1 {
        sdpa(tape, q, k, v)?
    } else {
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = tape.slice(q, axis, h * d_head, d_head)?;
            let kh = tape.slice(k, axis, h * d_head, d_head)?;
            let vh = tape.slice(v, axis, h * d_head, d_head)?;
            outs.push(sdpa(tape, qh, kh, vh)?);
        }
        tape.concat(&outs, axis)?
    };
    match p.w_o {
        Some(w_o) => tape.linear(concat, w_o, None),
        None => Ok(concat),
    }
}

/// Row 0 becomes `cls`, rows `1..=L` are `seq`.
pub fn prepend_cls<T: Scalar>(tape: &mut Tape<T>, seq: Var, cls: Var) -> Result<Var> {
    let (ss, sc) = (tape.shape(seq).to_vec(), tape.shape(cls).to_vec());
    if ss.len() != 2 || sc.len() != 1 || ss[1] != sc[0] {
        return Err(AcitError::dim(format!(
            "prepend_cls of cls {sc:?} onto sequence {ss:?}"
        )));
    }
    let row = tape.reshape(cls, &[1, sc[0]])?;
    tape.concat(&[row, seq], 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pe_position_zero_alternates() {
        let pe = positional_encoding::<f64>(3, 6).unwrap();
        assert_eq!(&pe.data()[..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((pe.at(&[1, 0]) - 1f64.sin()).abs() < 1e-15);
        assert!(positional_encoding::<f64>(3, 5).is_err());
        assert_eq!(
            positional_encoding::<f32>(17, 768).unwrap(),
            positional_encoding::<f32>(17, 768).unwrap()
        );
    }

    #[test]
    fn pe_small_table_entry() {
        let pe = positional_encoding::<f64>(2, 4).unwrap();
        assert!((pe.at(&[1, 0]) - 0.841471).abs() < 1e-6);
        // pair 1: angle 1/100
        assert!((pe.at(&[1, 2]) - 0.01f64.sin()).abs() < 1e-15);
    }

    #[test]
    fn prepend_cls_rows() {
        let mut tape = Tape::<f64>::new();
        let seq = tape.constant(Tensor::from_fn(&[3, 2], |i| i as f64));
        let cls = tape.constant(Tensor::from_f64(vec![2], &[9.0, 8.0]).unwrap());
        let out = prepend_cls(&mut tape, seq, cls).unwrap();
        assert_eq!(tape.shape(out), &[4, 2]);
        assert_eq!(&tape.value(out).data()[..2], &[9.0, 8.0]);
        assert_eq!(
            tape.value(out).slice_rows(1, 3).unwrap(),
            *tape.value(seq)
        );

        let empty = tape.constant(Tensor::zeros(&[0, 2]));
        let only = prepend_cls(&mut tape, empty, cls).unwrap();
        assert_eq!(tape.shape(only), &[1, 2]);

        let bad = tape.constant(Tensor::zeros(&[3]));
        assert!(prepend_cls(&mut tape, seq, bad).is_err());
    }

    #[test]
    fn mha_rejects_indivisible_heads() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[2, 6]));
        let w = tape.constant(Tensor::eye(6));
        let p = AttentionParams {
            w_q: w,
            w_k: w,
            w_v: w,
            w_o: Some(w),
        };
        assert!(matches!(
            mha(&mut tape, x, x, &p, 4),
            Err(AcitError::Config(_))
        ));
    }
}
