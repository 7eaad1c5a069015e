//! Visual feature encoding stand-in: a patch embedding from raw frames to
//! `grid x grid x C` maps, plus ingestion of precomputed feature files.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::config::{FRAME_SIZE, PATCH_SIZE};
use crate::error::{AcitError, Result};
use crate::params::{Init, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};
use crate::tsr;

/// Frames per clip.
pub const CLIP_LEN: usize = 16;
/// Side of the feature grid produced from a 256x256 frame.
pub const GRID: usize = FRAME_SIZE / PATCH_SIZE;
/// Flattened patch length, 32 * 32 * 3.
pub const PATCH_DIM: usize = PATCH_SIZE * PATCH_SIZE * 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    LocalRgb,
    LocalFlow,
    GlobalSemantic,
    GlobalFlow,
}

impl Modality {
    /// Order used for every four-modality array in the crate.
    pub const ALL: [Modality; 4] = [
        Modality::LocalRgb,
        Modality::LocalFlow,
        Modality::GlobalSemantic,
        Modality::GlobalFlow,
    ];

    /// File stem in a clip directory.
    pub fn stem(self) -> &'static str {
        match self {
            Modality::LocalRgb => "lrgb",
            Modality::LocalFlow => "lof",
            Modality::GlobalSemantic => "gs",
            Modality::GlobalFlow => "gof",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.stem())
    }
}

impl FromStr for Modality {
    type Err = AcitError;

    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.stem() == s)
            .ok_or_else(|| AcitError::config(format!("unknown modality '{s}'")))
    }
}

/// One modality's clip of feature maps, `16 x 8 x 8 x C`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapSeq {
    data: Tensor<f32>,
    modality: Modality,
}

impl FeatureMapSeq {
    pub fn new(data: Tensor<f32>, modality: Modality) -> Result<Self> {
        let s = data.shape();
        if s.len() != 4 || s[0] != CLIP_LEN || s[1] != GRID || s[2] != GRID {
            return Err(AcitError::dim(format!(
                "{modality} feature maps must be {CLIP_LEN}x{GRID}x{GRID}xC, got {s:?}"
            )));
        }
        Ok(FeatureMapSeq { data, modality })
    }

    pub fn data(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn into_data(self) -> Tensor<f32> {
        self.data
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[3]
    }
}

pub fn write_features(path: impl AsRef<Path>, seq: &FeatureMapSeq) -> Result<()> {
    tsr::write(path, &seq.data)
}

/// Read a `16 x 8 x 8 x C` TSR file. f64 payloads are narrowed to f32.
pub fn load_features(path: impl AsRef<Path>, modality: Modality) -> Result<FeatureMapSeq> {
    let t = tsr::read(path)?;
    if t.shape().len() != 4 {
        return Err(AcitError::Format {
            offset: 6,
            msg: format!("feature file must have rank 4, got {}", t.shape().len()),
        });
    }
    FeatureMapSeq::new(t.into_tensor(), modality)
}

/// Cut `[.., 256, 256, 3]` frames into `[.., 64, 3072]` patch rows.
///
/// Patch `(r, c)` lands at row `8r + c`; inside a patch the layout is
/// `(y, x, channel)` row-major.
pub fn patchify<T: Scalar>(frames: &Tensor<T>) -> Result<Tensor<T>> {
    let s = frames.shape();
    let r = s.len();
    if r < 3 || s[r - 3] != FRAME_SIZE || s[r - 2] != FRAME_SIZE || s[r - 1] != 3 {
        return Err(AcitError::dim(format!(
            "frames must end in {FRAME_SIZE}x{FRAME_SIZE}x3, got {s:?}"
        )));
    }
    let n: usize = s[..r - 3].iter().product();
    let src = frames.data();
    let frame_len = FRAME_SIZE * FRAME_SIZE * 3;
    let row_len = PATCH_SIZE * 3;
    let mut out = Vec::with_capacity(src.len());
    for f in 0..n {
        let frame = &src[f * frame_len..(f + 1) * frame_len];
        for pr in 0..GRID {
            for pc in 0..GRID {
                for y in 0..PATCH_SIZE {
                    let start = ((pr * PATCH_SIZE + y) * FRAME_SIZE + pc * PATCH_SIZE) * 3;
                    out.extend_from_slice(&frame[start..start + row_len]);
                }
            }
        }
    }
    let mut shape = s[..r - 3].to_vec();
    shape.extend_from_slice(&[GRID * GRID, PATCH_DIM]);
    Tensor::new(shape, out)
}

/// One 256x256x3 frame to an 8x8xC map through the projection `w` (3072 x C).
pub fn patch_embed<T: Scalar>(
    tape: &mut Tape<T>,
    frame: &Tensor<T>,
    w: Var,
    b: Option<Var>,
) -> Result<Var> {
    if frame.shape() != [FRAME_SIZE, FRAME_SIZE, 3] {
        return Err(AcitError::dim(format!(
            "patch_embed needs a {FRAME_SIZE}x{FRAME_SIZE}x3 frame, got {:?}",
            frame.shape()
        )));
    }
    let c = embed_width(tape, w)?;
    let patches = tape.constant(patchify(frame)?);
    let y = tape.linear(patches, w, b)?;
    tape.reshape(y, &[GRID, GRID, c])
}

/// Sixteen frames through one shared projection.
pub fn encode_clip<T: Scalar>(
    tape: &mut Tape<T>,
    frames: &Tensor<T>,
    w: Var,
    b: Option<Var>,
) -> Result<Var> {
    let s = frames.shape();
    if s.len() != 4 || s[0] != CLIP_LEN {
        return Err(AcitError::contract(format!(
            "encode_clip needs {CLIP_LEN} frames, got shape {s:?}"
        )));
    }
    let c = embed_width(tape, w)?;
    let patches = tape.constant(patchify(frames)?);
    let y = tape.linear(patches, w, b)?;
    tape.reshape(y, &[CLIP_LEN, GRID, GRID, c])
}

fn embed_width<T: Scalar>(tape: &Tape<T>, w: Var) -> Result<usize> {
    match tape.shape(w) {
        [PATCH_DIM, c] => Ok(*c),
        other => Err(AcitError::dim(format!(
            "patch projection must be {PATCH_DIM}xC, got {other:?}"
        ))),
    }
}

/// Fixed-weight patch encoder used to turn synthetic frames into feature
/// files.
#[derive(Debug, Clone)]
pub struct PatchEncoder {
    params: ParamSet<f32>,
    channels: usize,
}

impl PatchEncoder {
    pub fn new(seed: u64, channels: usize) -> Self {
        let mut params = ParamSet::new();
        params.declare(seed, "encoder.w", &[PATCH_DIM, channels], Init::Xavier);
        PatchEncoder { params, channels }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `[T, 256, 256, 3]` frames to `[T, 8, 8, C]` maps.
    pub fn encode(&self, frames: &Tensor<f32>) -> Result<Tensor<f32>> {
        let patches = patchify(frames)?;
        let rows = patches.numel() / PATCH_DIM;
        let w = self.params.get("encoder.w").expect("declared in new");
        let mut out = vec![0f32; rows * self.channels];
        f32::gemm(
            rows,
            PATCH_DIM,
            self.channels,
            patches.data(),
            false,
            w.data(),
            false,
            &mut out,
            false,
        );
        let t = frames.shape()[0];
        Tensor::new(vec![t, GRID, GRID, self.channels], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(f: impl Fn(usize, usize, usize) -> f64) -> Tensor<f64> {
        Tensor::from_fn(&[FRAME_SIZE, FRAME_SIZE, 3], |i| {
            f(i / (FRAME_SIZE * 3), (i / 3) % FRAME_SIZE, i % 3)
        })
    }

    #[test]
    fn zero_frame_embeds_to_zero() {
        let mut tape = Tape::<f64>::new();
        let w = tape.constant(Tensor::full(&[PATCH_DIM, 2], 0.3));
        let out = patch_embed(&mut tape, &Tensor::zeros(&[256, 256, 3]), w, None).unwrap();
        assert_eq!(tape.shape(out), &[8, 8, 2]);
        assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn summing_kernel_gives_patch_sums() {
        let img = frame(|y, x, c| ((y * 7 + x * 3 + c) % 11) as f64);
        let mut tape = Tape::<f64>::new();
        let w = tape.constant(Tensor::full(&[PATCH_DIM, 1], 1.0));
        let out = patch_embed(&mut tape, &img, w, None).unwrap();
        for r in 0..GRID {
            for c in 0..GRID {
                let mut sum = 0.0;
                for y in 0..PATCH_SIZE {
                    for x in 0..PATCH_SIZE {
                        for ch in 0..3 {
                            sum += img.at(&[r * PATCH_SIZE + y, c * PATCH_SIZE + x, ch]);
                        }
                    }
                }
                assert_eq!(tape.value(out).at(&[r, c, 0]), sum);
            }
        }
    }

    #[test]
    fn swapping_patches_swaps_cells() {
        let img = frame(|y, x, c| ((y * 13 + x * 5 + c * 3) % 17) as f64 / 17.0);
        let mut swapped = img.clone();
        // swap patch (0,1) with patch (5,3)
        for y in 0..PATCH_SIZE {
            for x in 0..PATCH_SIZE {
                for ch in 0..3 {
                    let a = [y, PATCH_SIZE + x, ch];
                    let b = [5 * PATCH_SIZE + y, 3 * PATCH_SIZE + x, ch];
                    let ia = (a[0] * FRAME_SIZE + a[1]) * 3 + ch;
                    let ib = (b[0] * FRAME_SIZE + b[1]) * 3 + ch;
                    swapped.data_mut().swap(ia, ib);
                }
            }
        }
        let mut rng = crate::rng::Rng::new(1);
        let wt = Tensor::<f64>::from_fn(&[PATCH_DIM, 3], |_| rng.normal());
        let mut tape = Tape::new();
        let w = tape.constant(wt);
        let o1 = patch_embed(&mut tape, &img, w, None).unwrap();
        let o2 = patch_embed(&mut tape, &swapped, w, None).unwrap();
        let (a, b) = (tape.value(o1).clone(), tape.value(o2).clone());
        for r in 0..GRID {
            for c in 0..GRID {
                let src = match (r, c) {
                    (0, 1) => (5, 3),
                    (5, 3) => (0, 1),
                    rc => rc,
                };
                for ch in 0..3 {
                    assert_eq!(b.at(&[r, c, ch]), a.at(&[src.0, src.1, ch]));
                }
            }
        }
    }

    #[test]
    fn wrong_frame_extents_rejected() {
        let mut tape = Tape::<f32>::new();
        let w = tape.constant(Tensor::zeros(&[PATCH_DIM, 2]));
        let bad = Tensor::<f32>::zeros(&[255, 256, 3]);
        assert!(matches!(
            patch_embed(&mut tape, &bad, w, None),
            Err(AcitError::Dimension(_))
        ));
        let few = Tensor::<f32>::zeros(&[15, 256, 256, 3]);
        assert!(matches!(
            encode_clip(&mut tape, &few, w, None),
            Err(AcitError::Contract(_))
        ));
    }

    #[test]
    fn encode_clip_is_framewise() {
        let mut rng = crate::rng::Rng::new(9);
        let mut clip = Tensor::<f32>::from_fn(&[16, 256, 256, 3], |_| rng.uniform() as f32);
        let w_t = Tensor::<f32>::from_fn(&[PATCH_DIM, 2], |_| (rng.normal() * 0.02) as f32);
        let run = |clip: &Tensor<f32>| {
            let mut tape = Tape::new();
            let w = tape.constant(w_t.clone());
            let v = encode_clip(&mut tape, clip, w, None).unwrap();
            tape.value(v).clone()
        };
        let before = run(&clip);
        let per = 256 * 256 * 3;
        for v in &mut clip.data_mut()[7 * per..8 * per] {
            *v += 0.5;
        }
        let after = run(&clip);
        let map = 8 * 8 * 2;
        for f in 0..16 {
            let same = before.data()[f * map..(f + 1) * map] == after.data()[f * map..(f + 1) * map];
            assert_eq!(same, f != 7, "frame {f}");
        }

        // sixteen copies of one frame give sixteen identical maps
        let one = Tensor::<f32>::from_fn(&[256, 256, 3], |i| ((i % 97) as f32) / 97.0);
        let mut dup = Vec::new();
        for _ in 0..16 {
            dup.extend_from_slice(one.data());
        }
        let out = run(&Tensor::new(vec![16, 256, 256, 3], dup).unwrap());
        for f in 1..16 {
            assert_eq!(out.data()[..map], out.data()[f * map..(f + 1) * map]);
        }
    }

    #[test]
    fn feature_files_round_trip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lrgb.tsr");
        let mut rng = crate::rng::Rng::new(4);
        let t = Tensor::<f32>::from_fn(&[16, 8, 8, 4], |_| rng.normal() as f32);
        let seq = FeatureMapSeq::new(t, Modality::LocalRgb).unwrap();
        write_features(&p, &seq).unwrap();
        assert_eq!(load_features(&p, Modality::LocalRgb).unwrap(), seq);

        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_features(&p, Modality::LocalRgb),
            Err(AcitError::Format { .. })
        ));

        tsr::write(&p, &Tensor::<f32>::zeros(&[16, 8, 8])).unwrap();
        assert!(matches!(
            load_features(&p, Modality::LocalRgb),
            Err(AcitError::Format { .. })
        ));
    }

    #[test]
    fn paper_scale_feature_file_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gs.tsr");
        tsr::write(&p, &Tensor::<f32>::zeros(&[16, 8, 8, 1024])).unwrap();
        let seq = load_features(&p, Modality::GlobalSemantic).unwrap();
        assert_eq!(seq.channels(), 1024);
    }

    #[test]
    fn frozen_encoder_matches_tape_path() {
        let enc = PatchEncoder::new(3, 5);
        let mut rng = crate::rng::Rng::new(2);
        let frames = Tensor::<f32>::from_fn(&[2, 256, 256, 3], |_| rng.uniform() as f32);
        let direct = enc.encode(&frames).unwrap();
        let mut tape = Tape::new();
        let w = tape.constant(enc.params.get("encoder.w").unwrap().clone());
        let f0 = frames.slice_rows(0, 1).unwrap().reshape(&[256, 256, 3]).unwrap();
        let v = patch_embed(&mut tape, &f0, w, None).unwrap();
        assert_eq!(&direct.data()[..8 * 8 * 5], tape.value(v).data());
    }
}
