//! Architecture hyperparameters and the ablation-variant selector.

use std::fmt;
use std::str::FromStr;

use crate::error::{AcitError, Result};

/// Which architecture to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// The full model.
    Full,
    /// Temporal encoder replaced by mean pooling over time.
    V1,
    /// Inter-modal attention replaced by an elementwise sum.
    V2,
    /// Cross-modal motion attention replaced by per-modality self-attention.
    V3,
    /// Dual-path attention replaced by pooling each map and adding.
    V4,
    /// Temporal fusion per modality first, inter-modal attention second.
    V5,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::V1,
        Variant::V2,
        Variant::V3,
        Variant::V4,
        Variant::V5,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::V1 => "v1",
            Variant::V2 => "v2",
            Variant::V3 => "v3",
            Variant::V4 => "v4",
            Variant::V5 => "v5",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = AcitError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| AcitError::config(format!("unknown variant '{s}' (full|v1|v2|v3|v4|v5)")))
    }
}

/// How the visual modalities reach the fusion blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VisualInput {
    /// Precomputed `N x grid x grid x C` feature maps.
    Features,
    /// Raw `N x 256 x 256 x 3` frames through the trainable patch encoder.
    Frames,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub visual_input: VisualInput,
    /// Steps per clip (N).
    pub seq_len: usize,
    /// Spatial grid side of each feature map; tokens per map = grid^2.
    pub grid: usize,
    /// Channels of the incoming feature maps (C).
    pub channels: usize,
    /// Token / per-modality feature width after channel reduction.
    pub d_token: usize,
    pub motion_heads: usize,
    pub motion_ffn: usize,
    pub tfa_layers: usize,
    pub tfa_heads: usize,
    pub tfa_ffn: usize,
    pub mlp_hidden: usize,
    pub mlp_dropout: f64,
    pub motion_dropout: f64,
    /// Add the sinusoidal table to the CLS-prefixed temporal sequence.
    pub tfa_positional: bool,
    pub ln_eps: f64,
    pub seed: u64,
}

/// Side length of raw frames and of the patches cut from them.
pub const FRAME_SIZE: usize = 256;
pub const PATCH_SIZE: usize = 32;

impl ModelConfig {
    /// Full-size dimensions.
    pub fn paper() -> Self {
        ModelConfig {
            variant: Variant::Full,
            visual_input: VisualInput::Features,
            seq_len: 16,
            grid: 8,
            channels: 1024,
            d_token: 256,
            motion_heads: 4,
            motion_ffn: 512,
            tfa_layers: 2,
            tfa_heads: 6,
            tfa_ffn: 2048,
            mlp_hidden: 128,
            mlp_dropout: 0.3,
            motion_dropout: 0.1,
            tfa_positional: true,
            ln_eps: 1e-5,
            seed: 0,
        }
    }

    /// CPU-friendly defaults: same topology, narrower features.
    pub fn desk() -> Self {
        ModelConfig {
            channels: 64,
            d_token: 32,
            motion_ffn: 64,
            tfa_ffn: 256,
            ..ModelConfig::paper()
        }
    }

    /// Tiny dimensions for finite-difference checks of the whole graph.
    pub fn reduced() -> Self {
        ModelConfig {
            seq_len: 3,
            grid: 2,
            channels: 4,
            d_token: 4,
            motion_heads: 2,
            motion_ffn: 8,
            tfa_ffn: 32,
            mlp_hidden: 5,
            ..ModelConfig::paper()
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Width of the fused per-step feature: three modality groups.
    pub fn d_fused(&self) -> usize {
        3 * self.d_token
    }

    pub fn tokens(&self) -> usize {
        self.grid * self.grid
    }

    /// FFN width of the per-modality temporal encoders used by variant v5.
    pub fn v5_ffn(&self) -> usize {
        (self.d_token as f64 * 8.0 / 3.0).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(AcitError::config(m));
        if self.seq_len == 0 || self.grid == 0 || self.channels == 0 {
            return fail("seq_len, grid and channels must be positive".into());
        }
        if self.d_token < 2 || self.d_token % 2 != 0 {
            return fail(format!("d_token must be even and >= 2, got {}", self.d_token));
        }
        if self.motion_heads == 0 || self.d_token % self.motion_heads != 0 {
            return fail(format!(
                "motion_heads {} must divide d_token {}",
                self.motion_heads, self.d_token
            ));
        }
        if self.tfa_heads == 0 || self.d_fused() % self.tfa_heads != 0 {
            return fail(format!(
                "tfa_heads {} must divide fused width {}",
                self.tfa_heads,
                self.d_fused()
            ));
        }
        if self.tfa_layers == 0 || self.tfa_ffn == 0 || self.motion_ffn == 0 || self.mlp_hidden == 0 {
            return fail("layer counts and hidden widths must be positive".into());
        }
        for (name, p) in [("mlp_dropout", self.mlp_dropout), ("motion_dropout", self.motion_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{name} must be in [0,1), got {p}"));
            }
        }
        if self.ln_eps <= 0.0 {
            return fail(format!("ln_eps must be > 0, got {}", self.ln_eps));
        }
        if self.visual_input == VisualInput::Frames && self.seq_len != crate::encoder::CLIP_LEN {
            return fail(format!(
                "frame input needs {} frames per clip, got seq_len {}",
                crate::encoder::CLIP_LEN,
                self.seq_len
            ));
        }
        if self.visual_input == VisualInput::Frames && self.grid * PATCH_SIZE != FRAME_SIZE {
            return fail(format!(
                "frame input needs a {}x{} grid, got {}",
                FRAME_SIZE / PATCH_SIZE,
                FRAME_SIZE / PATCH_SIZE,
                self.grid
            ));
        }
        Ok(())
    }

    /// Set one field from its `key=value` spelling.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<V: FromStr>(key: &str, v: &str) -> Result<V> {
            v.trim()
                .parse()
                .map_err(|_| AcitError::config(format!("bad value '{v}' for {key}")))
        }
        match key {
            "variant" => self.variant = value.trim().parse()?,
            "visual_input" => {
                self.visual_input = match value.trim() {
                    "features" => VisualInput::Features,
                    "frames" => VisualInput::Frames,
                    other => return Err(AcitError::config(format!("bad visual_input '{other}'"))),
                }
            }
            "seq_len" => self.seq_len = num(key, value)?,
            "grid" => self.grid = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "d_token" => self.d_token = num(key, value)?,
            "motion_heads" => self.motion_heads = num(key, value)?,
            "motion_ffn" => self.motion_ffn = num(key, value)?,
            "tfa_layers" => self.tfa_layers = num(key, value)?,
            "tfa_heads" => self.tfa_heads = num(key, value)?,
            "tfa_ffn" => self.tfa_ffn = num(key, value)?,
            "mlp_hidden" => self.mlp_hidden = num(key, value)?,
            "mlp_dropout" => self.mlp_dropout = num(key, value)?,
            "motion_dropout" => self.motion_dropout = num(key, value)?,
            "tfa_positional" => self.tfa_positional = num(key, value)?,
            "ln_eps" => self.ln_eps = num(key, value)?,
            "model_seed" => self.seed = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("variant", self.variant.to_string()),
            (
                "visual_input",
                match self.visual_input {
                    VisualInput::Features => "features".into(),
                    VisualInput::Frames => "frames".into(),
                },
            ),
            ("seq_len", self.seq_len.to_string()),
            ("grid", self.grid.to_string()),
            ("channels", self.channels.to_string()),
            ("d_token", self.d_token.to_string()),
            ("motion_heads", self.motion_heads.to_string()),
            ("motion_ffn", self.motion_ffn.to_string()),
            ("tfa_layers", self.tfa_layers.to_string()),
            ("tfa_heads", self.tfa_heads.to_string()),
            ("tfa_ffn", self.tfa_ffn.to_string()),
            ("mlp_hidden", self.mlp_hidden.to_string()),
            ("mlp_dropout", self.mlp_dropout.to_string()),
            ("motion_dropout", self.motion_dropout.to_string()),
            ("tfa_positional", self.tfa_positional.to_string()),
            ("ln_eps", self.ln_eps.to_string()),
            ("model_seed", self.seed.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::paper().validate().unwrap();
        ModelConfig::desk().validate().unwrap();
        ModelConfig::reduced().validate().unwrap();
        assert_eq!(ModelConfig::paper().d_fused(), 768);
        assert_eq!(ModelConfig::paper().d_fused() / ModelConfig::paper().tfa_heads, 128);
    }

    #[test]
    fn ffn_widths_follow_eight_thirds_rule() {
        for cfg in [ModelConfig::paper(), ModelConfig::desk(), ModelConfig::reduced()] {
            let expect = (cfg.d_fused() as f64 * 8.0 / 3.0).round() as usize;
            assert_eq!(cfg.tfa_ffn, expect);
        }
    }

    #[test]
    fn rejects_bad_heads_and_odd_width() {
        let mut c = ModelConfig::desk();
        c.tfa_heads = 5;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk();
        c.d_token = 33;
        assert!(c.validate().is_err());
    }

    #[test]
    fn set_round_trips_pairs() {
        let mut c = ModelConfig::reduced().with_variant(Variant::V3);
        c.tfa_positional = false;
        let mut d = ModelConfig::paper();
        for (k, v) in c.to_pairs() {
            assert!(d.set(k, &v).unwrap());
        }
        assert_eq!(c, d);
        assert!(!d.set("no_such_key", "1").unwrap());
        assert!(d.set("variant", "v9").is_err());
    }
}
