//! Visual-pair interaction: channel reduction, tokenization, dual-path
//! attention with a learnable gate, and spatial pooling.
//!
//! Two instances exist, one for (local RGB, local flow) and one for
//! (global semantics, global flow). Every time step is processed
//! independently; steps ride along as a leading batch axis.

use crate::attention::{positional_encoding, sdpa, AttentionParams};
use crate::error::{AcitError, Result};
use crate::params::{Bound, Init, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;

/// Dual-path attention weights. Both paths are single-head with no output
/// projection; `ga.w_q` reads the original primary tokens.
#[derive(Debug, Clone, Copy)]
pub struct DualPathParams {
    pub sa: AttentionParams,
    pub ga: AttentionParams,
    pub alpha: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct AvmiParams {
    pub reduce_primary: (Var, Var),
    pub reduce_aux: (Var, Var),
    /// `None` for the pooling-only ablation.
    pub dual: Option<DualPathParams>,
}

pub fn declare<T: Scalar>(
    ps: &mut ParamSet<T>,
    seed: u64,
    prefix: &str,
    channels: usize,
    d: usize,
    dual: bool,
) {
    for side in ["reduce_primary", "reduce_aux"] {
        ps.declare(seed, &format!("{prefix}.{side}.w"), &[channels, d], Init::Xavier);
        ps.declare(seed, &format!("{prefix}.{side}.b"), &[d], Init::Zeros);
    }
    if dual {
        for path in ["sa", "ga"] {
            for m in ["w_q", "w_k", "w_v"] {
                ps.declare(seed, &format!("{prefix}.{path}.{m}"), &[d, d], Init::Xavier);
            }
        }
        ps.declare(seed, &format!("{prefix}.alpha"), &[1], Init::Zeros);
    }
}

impl AvmiParams {
    pub fn bind(b: &Bound, prefix: &str) -> Result<Self> {
        let get = |n: &str| b.get(&format!("{prefix}.{n}"));
        let attn = |path: &str| -> Result<AttentionParams> {
            Ok(AttentionParams {
                w_q: get(&format!("{path}.w_q"))?,
                w_k: get(&format!("{path}.w_k"))?,
                w_v: get(&format!("{path}.w_v"))?,
                w_o: None,
            })
        };
        let dual = if b.has(&format!("{prefix}.alpha")) {
            Some(DualPathParams {
                sa: attn("sa")?,
                ga: attn("ga")?,
                alpha: get("alpha")?,
            })
        } else {
            None
        };
        Ok(AvmiParams {
            reduce_primary: (get("reduce_primary.w")?, get("reduce_primary.b")?),
            reduce_aux: (get("reduce_aux.w")?, get("reduce_aux.b")?),
            dual,
        })
    }
}

/// 1x1 convolution: the same affine map at every spatial position.
pub fn reduce_channels<T: Scalar>(tape: &mut Tape<T>, fmap: Var, w: Var, b: Option<Var>) -> Result<Var> {
    tape.linear(fmap, w, b)
}

/// `[.., g, g, d]` to `[.., g*g, d]` (cell `(r, c)` becomes token `g*r + c`)
/// plus the sinusoidal table.
pub fn tokenize<T: Scalar>(tape: &mut Tape<T>, fmap: Var) -> Result<Var> {
    let s = tape.shape(fmap).to_vec();
    let r = s.len();
    if r < 3 || s[r - 3] != s[r - 2] {
        return Err(AcitError::dim(format!("tokenize needs a square grid, got {s:?}")));
    }
    let (g, d) = (s[r - 2], s[r - 1]);
    let mut shape = s[..r - 3].to_vec();
    shape.extend_from_slice(&[g * g, d]);
    let flat = tape.reshape(fmap, &shape)?;
    let pe = tape.constant(positional_encoding(g * g, d)?);
    tape.add_trailing(flat, pe)
}

/// `X' = X + SA(X)`, `Y = X' + alpha * GA(X, A)`.
pub fn dual_path<T: Scalar>(
    tape: &mut Tape<T>,
    primary: Var,
    aux: Var,
    p: &DualPathParams,
) -> Result<Var> {
    if tape.shape(primary) != tape.shape(aux) {
        return Err(AcitError::dim(format!(
            "dual_path tokens {:?} vs {:?}",
            tape.shape(primary),
            tape.shape(aux)
        )));
    }
    let q = tape.linear(primary, p.sa.w_q, None)?;
    let k = tape.linear(primary, p.sa.w_k, None)?;
    let v = tape.linear(primary, p.sa.w_v, None)?;
    let self_attn = sdpa(tape, q, k, v)?;
    let enhanced = tape.add(primary, self_attn)?;

    let q2 = tape.linear(primary, p.ga.w_q, None)?;
    let k_of = tape.linear(aux, p.ga.w_k, None)?;
    let v_of = tape.linear(aux, p.ga.w_v, None)?;
    let guided = sdpa(tape, q2, k_of, v_of)?;
    let gated = tape.scale_by(guided, p.alpha)?;
    tape.add(enhanced, gated)
}

/// Global average pooling over the token axis: `[N, L, d]` to `[N, d]`.
pub fn pool_pair<T: Scalar>(tape: &mut Tape<T>, tokens: Var) -> Result<Var> {
    let r = tape.shape(tokens).len();
    if r < 2 {
        return Err(AcitError::dim(format!("pool_pair of {:?}", tape.shape(tokens))));
    }
    tape.mean(tokens, r - 2)
}

/// `[N, g, g, C]` primary and auxiliary maps to an `[N, d]` step feature.
pub fn avmi_forward<T: Scalar>(
    tape: &mut Tape<T>,
    primary: Var,
    aux: Var,
    p: &AvmiParams,
) -> Result<Var> {
    if tape.shape(primary) != tape.shape(aux) {
        return Err(AcitError::config(format!(
            "visual pair mismatch: primary {:?}, auxiliary {:?}",
            tape.shape(primary),
            tape.shape(aux)
        )));
    }
    let rp = reduce_channels(tape, primary, p.reduce_primary.0, Some(p.reduce_primary.1))?;
    let ra = reduce_channels(tape, aux, p.reduce_aux.0, Some(p.reduce_aux.1))?;
    match &p.dual {
        Some(dual) => {
            let tp = tokenize(tape, rp)?;
            let ta = tokenize(tape, ra)?;
            let fused = dual_path(tape, tp, ta, dual)?;
            pool_pair(tape, fused)
        }
        None => {
            let s = tape.shape(rp).to_vec();
            let r = s.len();
            let mut flat = s[..r - 3].to_vec();
            flat.extend_from_slice(&[s[r - 3] * s[r - 2], s[r - 1]]);
            let fp = tape.reshape(rp, &flat)?;
            let fa = tape.reshape(ra, &flat)?;
            let gp = pool_pair(tape, fp)?;
            let ga = pool_pair(tape, fa)?;
            tape.add(gp, ga)
        }
    }
}
