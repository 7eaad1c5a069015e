//! Synthetic street scenarios: a pedestrian box track, an ego-speed track,
//! and rendered frames for the four visual modalities.
//!
//! Crossing pedestrians drift toward the road and grow in the image as the
//! vehicle approaches; non-crossing pedestrians walk roughly parallel to
//! the road with a stable box height. The ego vehicle slows down ahead of
//! a crossing in proportion to `coupling`.

use crate::encoder::{Modality, PatchEncoder, CLIP_LEN};
use crate::error::{AcitError, Result};
use crate::config::FRAME_SIZE;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Scene frame size in pixels.
pub const SCENE_W: f32 = 1920.0;
pub const SCENE_H: f32 = 1080.0;
/// Horizontal extent of the road in scene pixels.
pub const ROAD: (f32, f32) = (640.0, 1280.0);
/// Frames between clip starts.
pub const STRIDE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    /// Probability of a crossing scenario.
    pub balance: f64,
    /// Strength of the link between intent and ego deceleration.
    pub coupling: f64,
    /// Scales motion jitter and the overlap between the two behaviours.
    pub noise: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            balance: 0.5,
            coupling: 1.0,
            noise: 1.0,
            min_len: 16,
            max_len: 40,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.balance) {
            return Err(AcitError::config(format!("balance must be in [0,1], got {}", self.balance)));
        }
        if self.coupling < 0.0 || self.noise < 0.0 {
            return Err(AcitError::config("coupling and noise must be >= 0"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(AcitError::config(format!(
                "bad scenario length range {}..={}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

/// Appearance parameters that stay fixed over a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneStyle {
    pub phase: [f32; 2],
    pub freq: [f32; 2],
    pub ped_color: [f32; 3],
    /// Road texture shift per unit of ego speed.
    pub flow_gain: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    /// Latent intent in `[0, 1)`; the label is `intent < balance`.
    pub intent: f64,
    pub label: u8,
    /// Frames `0..event` are observable.
    pub event: usize,
    /// `[x1, y1, x2, y2]` per frame in scene pixels.
    pub bbox: Vec<[f32; 4]>,
    /// Ego speed per frame in m/s.
    pub speed: Vec<f32>,
    pub style: SceneStyle,
}

impl Scenario {
    pub fn len(&self) -> usize {
        self.bbox.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bbox.is_empty()
    }
}

pub fn generate_scenario(seed: u64, id: &str, p: &SynthParams) -> Scenario {
    let mut rng = Rng::named(seed, &format!("scenario/{id}"));
    let intent = rng.uniform();
    let crossing = intent < p.balance;
    let len = p.min_len + rng.below(p.max_len - p.min_len + 1);
    let nz = p.noise;

    let left = rng.bernoulli(0.5);
    let toward = if left { 1.0 } else { -1.0 };
    let x0 = if left {
        rng.range(250.0, 600.0)
    } else {
        rng.range(1320.0, 1670.0)
    };
    let h0 = rng.range(90.0, 220.0);
    let foot0 = 600.0 + (h0 - 90.0) * 1.5 + rng.normal() * 10.0;
    // Behaviour ranges overlap more as noise grows.
    let o = 1.5 * nz;
    let (lat, growth) = if crossing {
        (toward * rng.range(3.0 - o, 9.0), rng.range(0.004 - 0.002 * nz, 0.012))
    } else {
        (rng.range(-2.5, 2.5 + o) * toward, rng.range(-0.003, 0.003 + 0.002 * nz))
    };
    let s0 = rng.range(6.0, 14.0);
    let decel = if crossing {
        p.coupling * rng.range(0.05, 0.15)
    } else {
        p.coupling * rng.range(-0.03, 0.03)
    };

    let mut bbox = Vec::with_capacity(len);
    let mut speed = Vec::with_capacity(len);
    let (mut x, mut h, mut foot) = (x0, h0, foot0);
    for t in 0..len {
        if t > 0 {
            x += lat + rng.normal() * 4.0 * nz;
            h *= 1.0 + growth + rng.normal() * 0.004 * nz;
            foot += growth * h * 1.5;
        }
        h = h.clamp(20.0, 700.0);
        foot = foot.clamp(h, SCENE_H as f64);
        x = x.clamp(0.3 * h + 1.0, SCENE_W as f64 - 0.3 * h - 1.0);
        let w = 0.4 * h;
        bbox.push([
            (x - w / 2.0) as f32,
            (foot - h) as f32,
            (x + w / 2.0) as f32,
            foot as f32,
        ]);
        let s = (s0 - decel * t as f64).max(0.0) + rng.normal() * 0.1;
        speed.push(s.max(0.0) as f32);
    }

    let style = SceneStyle {
        phase: [rng.range(0.0, 6.28) as f32, rng.range(0.0, 6.28) as f32],
        freq: [rng.range(0.02, 0.06) as f32, rng.range(0.02, 0.06) as f32],
        ped_color: [
            rng.range(0.7, 1.0) as f32,
            rng.range(0.5, 0.9) as f32,
            rng.range(0.3, 0.7) as f32,
        ],
        flow_gain: rng.range(2.0, 4.0) as f32,
    };
    Scenario {
        id: id.to_string(),
        intent,
        label: crossing as u8,
        event: len,
        bbox,
        speed,
        style,
    }
}

/// Start frames of the 16-frame windows that end before the event.
pub fn clip_starts(len: usize, event: usize) -> Vec<usize> {
    let usable = len.min(event);
    if usable < CLIP_LEN {
        return Vec::new();
    }
    (0..=usable - CLIP_LEN).step_by(STRIDE).collect()
}

/// `floor((usable - 16) / 3) + 1`, or 0 when fewer than 16 frames are usable.
pub fn clip_count(len: usize, event: usize) -> usize {
    let usable = len.min(event);
    if usable < CLIP_LEN {
        0
    } else {
        (usable - CLIP_LEN) / STRIDE + 1
    }
}

/// Majority class weight 1, minority weight `majority / minority`.
pub fn class_weights(n_pos: usize, n_neg: usize) -> Result<(f64, f64)> {
    if n_pos == 0 || n_neg == 0 {
        return Err(AcitError::config(format!(
            "class weights need both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }
    let major = n_pos.max(n_neg) as f64;
    Ok((major / n_pos as f64, major / n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layer {
    Rgb,
    Semantic,
}

impl Scenario {
    /// Scene colour at `(x, y)` in frame `t`.
    fn shade(&self, layer: Layer, x: f32, y: f32, t: usize, travelled: f32, out: &mut [f32]) {
        let b = self.bbox[t];
        let horizon = 0.4 * SCENE_H;
        let on_road = x >= ROAD.0 && x <= ROAD.1 && y >= horizon;
        let in_box = x >= b[0] && x <= b[2] && y >= b[1] && y <= b[3];
        match layer {
            Layer::Semantic => {
                let c = if in_box {
                    [1.0, 0.0, 0.0]
                } else if y < horizon {
                    [0.1, 0.5, 0.1]
                } else if on_road {
                    [0.2, 0.2, 0.6]
                } else {
                    [0.6, 0.6, 0.2]
                };
                out.copy_from_slice(&c);
            }
            Layer::Rgb => {
                let st = &self.style;
                if in_box {
                    let cx = 0.5 * (b[0] + b[2]);
                    let cy = 0.5 * (b[1] + b[3]);
                    let rx = (x - cx) / (0.5 * (b[2] - b[0]).max(1.0));
                    let ry = (y - cy) / (0.5 * (b[3] - b[1]).max(1.0));
                    if rx * rx + ry * ry <= 1.0 {
                        out.copy_from_slice(&st.ped_color);
                        return;
                    }
                }
                if y < horizon {
                    let v = 0.55 + 0.1 * (st.freq[0] * x + st.phase[0]).sin();
                    out.copy_from_slice(&[0.4 * v, 0.6 * v, 0.9 * v]);
                    return;
                }
                let tex = 0.5
                    + 0.25
                        * (st.freq[0] * x + st.phase[0]).sin()
                        * (st.freq[1] * (y + travelled) + st.phase[1]).sin();
                if on_road {
                    let centre = 0.5 * (ROAD.0 + ROAD.1);
                    let dash = ((y + travelled) * 0.02).sin() > 0.3;
                    let v = if (x - centre).abs() < 8.0 && dash { 0.95 } else { 0.25 * tex };
                    out.copy_from_slice(&[v, v, v]);
                } else {
                    let v = 0.4 + 0.3 * tex;
                    out.copy_from_slice(&[v, 0.9 * v, 0.8 * v]);
                }
            }
        }
    }

    /// Square crop twice the box height, centred on the box.
    fn crop(&self, t: usize) -> (f32, f32, f32) {
        let b = self.bbox[t];
        let side = 2.0 * (b[3] - b[1]).max(16.0);
        (0.5 * (b[0] + b[2]) - side / 2.0, 0.5 * (b[1] + b[3]) - side / 2.0, side)
    }

    /// One `256 x 256 x 3` frame of `layer`, either the whole scene or the
    /// pedestrian crop.
    fn render(&self, layer: Layer, local: bool, t: usize) -> Vec<f32> {
        let n = FRAME_SIZE;
        let mut out = vec![0f32; n * n * 3];
        let (ox, oy, sx, sy) = if local {
            let (x, y, side) = self.crop(t);
            (x, y, side / n as f32, side / n as f32)
        } else {
            (0.0, 0.0, SCENE_W / n as f32, SCENE_H / n as f32)
        };
        let travelled = self.speed[..=t].iter().sum::<f32>() * self.style.flow_gain;
        for v in 0..n {
            let y = oy + (v as f32 + 0.5) * sy;
            for u in 0..n {
                let x = ox + (u as f32 + 0.5) * sx;
                let i = (v * n + u) * 3;
                self.shade(layer, x, y, t, travelled, &mut out[i..i + 3]);
            }
        }
        out
    }

    /// All frames of one modality, `[T, 256, 256, 3]`. Flow frames are the
    /// difference to the previous frame (zero for the first).
    pub fn frames(&self, modality: Modality) -> Tensor<f32> {
        let (layer, local, flow) = match modality {
            Modality::LocalRgb => (Layer::Rgb, true, false),
            Modality::LocalFlow => (Layer::Rgb, true, true),
            Modality::GlobalSemantic => (Layer::Semantic, false, false),
            Modality::GlobalFlow => (Layer::Rgb, false, true),
        };
        let per = FRAME_SIZE * FRAME_SIZE * 3;
        let mut data = Vec::with_capacity(self.len() * per);
        let mut prev: Option<Vec<f32>> = None;
        for t in 0..self.len() {
            let cur = self.render(layer, local, t);
            if flow {
                match &prev {
                    None => data.extend(std::iter::repeat(0.0).take(per)),
                    Some(p) => data.extend(cur.iter().zip(p).map(|(a, b)| a - b)),
                }
                prev = Some(cur);
            } else {
                data.extend_from_slice(&cur);
            }
        }
        Tensor::new(vec![self.len(), FRAME_SIZE, FRAME_SIZE, 3], data).expect("frame buffer size")
    }

    /// `[T, 8, 8, C]` feature maps for every modality.
    pub fn features(&self, encoder: &PatchEncoder) -> Result<[Tensor<f32>; 4]> {
        let mut out = Vec::with_capacity(4);
        for m in Modality::ALL {
            out.push(encoder.encode(&self.frames(m))?);
        }
        Ok(out.try_into().expect("four modalities"))
    }
}
