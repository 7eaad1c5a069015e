//! The full network and its ablation variants, assembled from the fusion
//! blocks.

use crate::ammi::{self, embed_motion, AmmiParams};
use crate::avmi::{self, avmi_forward, AvmiParams};
use crate::config::{ModelConfig, Variant, VisualInput};
use crate::encoder::{encode_clip, PATCH_DIM};
use crate::error::{AcitError, Result};
use crate::mmff::{self, mmff_forward, refine, InterModalParams, MmffParams};
use crate::params::{Bound, Init, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};
use crate::tfa::{mlp_head, temporal_encode, tfa_forward, MlpHead, TemporalEncoder};

/// One clip as the network consumes it.
///
/// `visual` follows [`crate::encoder::Modality::ALL`]: local RGB, local
/// flow, global semantics, global flow. Each entry is `[N, g, g, C]` in
/// feature mode or `[16, 256, 256, 3]` in frame mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipInput<T: Scalar> {
    pub visual: [Tensor<T>; 4],
    pub speed: Tensor<T>,
    pub bbox: Tensor<T>,
}

impl<T: Scalar> ClipInput<T> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let vshape = match cfg.visual_input {
            VisualInput::Features => vec![cfg.seq_len, cfg.grid, cfg.grid, cfg.channels],
            VisualInput::Frames => vec![cfg.seq_len, 256, 256, 3],
        };
        ClipInput {
            visual: std::array::from_fn(|_| Tensor::zeros(&vshape)),
            speed: Tensor::zeros(&[cfg.seq_len, 1]),
            bbox: Tensor::zeros(&[cfg.seq_len, 4]),
        }
    }

    pub fn cast<U: Scalar>(&self) -> ClipInput<U> {
        ClipInput {
            visual: std::array::from_fn(|i| self.visual[i].cast()),
            speed: self.speed.cast(),
            bbox: self.bbox.cast(),
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Trace {
    pub f_l: Var,
    pub f_g: Var,
    pub f_m: Var,
    /// `[N, 3d]` for every variant except v5, which fuses after time.
    pub fused: Option<Var>,
    pub logit: Var,
}

#[derive(Debug, Clone)]
pub struct AcitModel<T: Scalar> {
    cfg: ModelConfig,
    params: ParamSet<T>,
}

pub const LOCAL: &str = "avmi_local";
pub const GLOBAL: &str = "avmi_global";
pub const MOTION: &str = "ammi";
pub const FUSION: &str = "mmff";
pub const TEMPORAL: &str = "tfa";
pub const V5_TEMPORAL: [&str; 3] = ["tfa_l", "tfa_g", "tfa_m"];

impl<T: Scalar> AcitModel<T> {
    /// Fresh parameters for `cfg`, seeded by `cfg.seed`.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        let (c, d, df) = (cfg.channels, cfg.d_token, cfg.d_fused());
        let v = cfg.variant;
        let mut ps = ParamSet::new();
        if cfg.visual_input == VisualInput::Frames {
            ps.declare(seed, "encoder.w", &[PATCH_DIM, c], Init::Xavier);
            ps.declare(seed, "encoder.b", &[c], Init::Zeros);
        }
        let dual = v != Variant::V4;
        avmi::declare(&mut ps, seed, LOCAL, c, d, dual);
        avmi::declare(&mut ps, seed, GLOBAL, c, d, dual);
        ammi::declare(&mut ps, seed, MOTION, d, cfg.motion_ffn);
        match v {
            Variant::V2 => mmff::declare_sum(&mut ps, seed, FUSION, d),
            _ => mmff::declare_attention(&mut ps, seed, FUSION, d),
        }
        match v {
            Variant::V1 => {}
            Variant::V5 => {
                for p in V5_TEMPORAL {
                    TemporalEncoder::declare(&mut ps, seed, p, d, cfg.tfa_layers, cfg.v5_ffn());
                }
            }
            _ => TemporalEncoder::declare(&mut ps, seed, TEMPORAL, df, cfg.tfa_layers, cfg.tfa_ffn),
        }
        MlpHead::declare(&mut ps, seed, df, cfg.mlp_hidden);
        Ok(AcitModel { cfg, params: ps })
    }

    /// Wrap existing parameters, checking names and shapes against `cfg`.
    pub fn from_params(cfg: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        let reference = AcitModel::<T>::new(cfg.clone())?;
        let want: Vec<(&str, &[usize])> = reference.params.iter().map(|(n, t)| (n, t.shape())).collect();
        let got: Vec<(&str, &[usize])> = params.iter().map(|(n, t)| (n, t.shape())).collect();
        if want != got {
            for (n, s) in &want {
                match params.get(n) {
                    None => return Err(AcitError::config(format!("missing parameter '{n}'"))),
                    Some(t) if t.shape() != *s => {
                        return Err(AcitError::dim(format!(
                            "parameter '{n}' has shape {:?}, expected {s:?}",
                            t.shape()
                        )))
                    }
                    _ => {}
                }
            }
            let extra = params.names().find(|n| !reference.params.contains(n)).unwrap_or("?");
            return Err(AcitError::config(format!("unexpected parameter '{extra}'")));
        }
        Ok(AcitModel { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet<T> {
        self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn cast<U: Scalar>(&self) -> AcitModel<U> {
        AcitModel {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        self.params.bind(tape)
    }

    fn check_input(&self, x: &ClipInput<T>) -> Result<()> {
        let c = &self.cfg;
        let n = c.seq_len;
        let vshape: &[usize] = match c.visual_input {
            VisualInput::Features => &[n, c.grid, c.grid, c.channels],
            VisualInput::Frames => &[n, 256, 256, 3],
        };
        for v in &x.visual {
            if v.shape() != vshape {
                return Err(AcitError::dim(format!(
                    "visual input {:?}, expected {vshape:?}",
                    v.shape()
                )));
            }
        }
        if x.speed.shape() != [n, 1] || x.bbox.shape() != [n, 4] {
            return Err(AcitError::dim(format!(
                "motion inputs {:?} and {:?}, expected [{n}, 1] and [{n}, 4]",
                x.speed.shape(),
                x.bbox.shape()
            )));
        }
        Ok(())
    }

    /// Record one forward pass on `tape` using parameters bound as `b`.
    pub fn forward_bound(&self, tape: &mut Tape<T>, b: &Bound, x: &ClipInput<T>) -> Result<Trace> {
        self.check_input(x)?;
        let c = &self.cfg;
        let eps = c.ln_eps;
        let visual: Vec<Var> = match c.visual_input {
            VisualInput::Features => x.visual.iter().map(|t| tape.constant(t.clone())).collect(),
            VisualInput::Frames => {
                let (w, bias) = (b.get("encoder.w")?, b.get("encoder.b")?);
                let mut out = Vec::with_capacity(4);
                for frames in &x.visual {
                    out.push(encode_clip(tape, frames, w, Some(bias))?);
                }
                out
            }
        };
        let local = AvmiParams::bind(b, LOCAL)?;
        let global = AvmiParams::bind(b, GLOBAL)?;
        let f_l = avmi_forward(tape, visual[0], visual[1], &local)?;
        let f_g = avmi_forward(tape, visual[2], visual[3], &global)?;

        let motion = AmmiParams::bind(b, MOTION)?;
        let speed = tape.constant(x.speed.clone());
        let bbox = tape.constant(x.bbox.clone());
        let (xs, xb) = embed_motion(tape, speed, bbox, &motion, eps)?;
        let cross = c.variant != Variant::V3;
        let f_m = ammi::cross_modal_block(
            tape,
            xs,
            xb,
            &motion,
            c.motion_heads,
            c.motion_dropout,
            cross,
            eps,
        )?;

        let head = MlpHead::bind(b)?;
        if c.variant == Variant::V5 {
            let mut summaries = [f_l, f_g, f_m];
            for (i, prefix) in V5_TEMPORAL.iter().enumerate() {
                let enc = TemporalEncoder::bind(b, prefix)?;
                let s = temporal_encode(tape, summaries[i], &enc, c.motion_heads, c.tfa_positional, eps)?;
                summaries[i] = tape.reshape(s, &[1, c.d_token])?;
            }
            let ip = InterModalParams::bind(b, FUSION)?;
            let (refined, _) = refine(tape, summaries, &ip)?;
            let flat = tape.reshape(refined, &[c.d_fused()])?;
            let logit = mlp_head(tape, flat, &head, c.mlp_dropout)?;
            return Ok(Trace {
                f_l,
                f_g,
                f_m,
                fused: None,
                logit,
            });
        }

        let fusion = MmffParams::bind(b, FUSION)?;
        let fused = mmff_forward(tape, f_l, f_g, f_m, &fusion)?;
        let encoder = match c.variant {
            Variant::V1 => None,
            _ => Some(TemporalEncoder::bind(b, TEMPORAL)?),
        };
        let logit = tfa_forward(
            tape,
            fused,
            encoder.as_ref(),
            &head,
            c.tfa_heads,
            c.tfa_positional,
            c.mlp_dropout,
            eps,
        )?;
        Ok(Trace {
            f_l,
            f_g,
            f_m,
            fused: Some(fused),
            logit,
        })
    }

    /// Inference-mode logit.
    pub fn logit(&self, x: &ClipInput<T>) -> Result<f64> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let tr = self.forward_bound(&mut tape, &b, x)?;
        Ok(tape.value(tr.logit).item().as_f64())
    }

    /// Inference-mode crossing probability.
    pub fn predict(&self, x: &ClipInput<T>) -> Result<f64> {
        Ok(sigmoid(self.logit(x)?))
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Human-readable shape chain of one forward pass.
pub fn shape_chain(cfg: &ModelConfig) -> Vec<String> {
    let (n, g, c, d, df) = (cfg.seq_len, cfg.grid, cfg.channels, cfg.d_token, cfg.d_fused());
    let mut out = Vec::new();
    if cfg.visual_input == VisualInput::Frames {
        out.push(format!("frames {n}x256x256x3 x4"));
    }
    out.push(format!("visual maps {n}x{g}x{g}x{c} x4"));
    out.push(format!("motion speed {n}x1, bbox {n}x4"));
    if cfg.variant == Variant::V4 {
        out.push(format!("reduced maps {n}x{g}x{g}x{d}"));
    } else {
        out.push(format!("tokens {}x{d}", g * g));
    }
    out.push(format!("F_L {n}x{d}, F_G {n}x{d}, F_M {n}x{d}"));
    match cfg.variant {
        Variant::V5 => {
            out.push(format!("per-modality encoder input {}x{d} x3", n + 1));
            out.push(format!("temporal summaries 3x{d}"));
            out.push(format!("fused {df}"));
        }
        Variant::V1 => {
            out.push(format!("fused {n}x{df}"));
            out.push(format!("pooled {df}"));
        }
        _ => {
            out.push(format!("fused {n}x{df}"));
            out.push(format!("encoder input {}x{df}", n + 1));
        }
    }
    out.push(format!("head {df}->{}->1", cfg.mlp_hidden));
    out.push("logit 1".to_string());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_variant_runs_at_reduced_scale() {
        for v in Variant::ALL {
            let cfg = ModelConfig::reduced().with_variant(v);
            let m = AcitModel::<f64>::new(cfg.clone()).unwrap();
            let p = m.predict(&ClipInput::zeros(&cfg)).unwrap();
            assert!(p > 0.0 && p < 1.0, "{v}: {p}");
        }
    }

    #[test]
    fn v4_has_no_gate() {
        let m = AcitModel::<f32>::new(ModelConfig::reduced().with_variant(Variant::V4)).unwrap();
        assert!(m.params().names().all(|n| !n.contains("alpha") && !n.contains(".sa.") && !n.contains(".ga.")));
    }

    #[test]
    fn from_params_rejects_mismatch() {
        let cfg = ModelConfig::reduced();
        let m = AcitModel::<f32>::new(cfg.clone()).unwrap();
        let mut ps = m.into_params();
        ps.insert("head.w1", Tensor::zeros(&[1, 1]));
        assert!(AcitModel::from_params(cfg, ps).is_err());
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) >= 0.0 && sigmoid(1000.0) <= 1.0);
    }
}
