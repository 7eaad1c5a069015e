//! Clip datasets: generation from synthetic scenarios, the on-disk layout,
//! the text manifest, and input normalization.
//!
//! Layout: `<root>/manifest.tsv` plus `<root>/<split>/<clip_id>/` holding
//! `lrgb.tsr`, `lof.tsr`, `gs.tsr`, `gof.tsr`, `speed.tsr` and `bbox.tsr`.
//!
//! Manifest lines are tab-separated `key=value` fields in this order:
//! `clip_id`, `split`, `scenario`, `start`, `label`, `dir`, `speed`
//! (16 comma-separated values), `bbox` (16 boxes separated by `;`, each
//! four comma-separated values). Lines starting with `#` are comments.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use crate::encoder::{load_features, write_features, FeatureMapSeq, Modality, PatchEncoder, CLIP_LEN};
use crate::error::{AcitError, Result};
use crate::model::ClipInput;
use crate::rng::Rng;
use crate::synth::{clip_starts, generate_scenario, Scenario, SynthParams, SCENE_H, SCENE_W};
use crate::tensor::Tensor;
use crate::tsr;

pub const MANIFEST: &str = "manifest.tsv";
const HEADER: &str = "# acit clip manifest v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = AcitError;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| AcitError::config(format!("unknown split '{s}'")))
    }
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub clip_id: String,
    pub split: Split,
    pub scenario: String,
    pub start: usize,
    pub label: u8,
    /// Clip directory relative to the dataset root.
    pub dir: String,
    pub speed: Vec<f32>,
    pub bbox: Vec<[f32; 4]>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub records: Vec<ClipRecord>,
}

impl Manifest {
    pub fn split(&self, s: Split) -> impl Iterator<Item = &ClipRecord> {
        self.records.iter().filter(move |r| r.split == s)
    }

    /// Unique clip ids and no scenario shared between splits.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        let mut owner: BTreeMap<&str, Split> = BTreeMap::new();
        for r in &self.records {
            if !ids.insert(r.clip_id.as_str()) {
                return Err(AcitError::Validation(format!("duplicate clip id '{}'", r.clip_id)));
            }
            match owner.get(r.scenario.as_str()) {
                Some(&s) if s != r.split => {
                    return Err(AcitError::Validation(format!(
                        "scenario '{}' appears in both {s} and {}",
                        r.scenario, r.split
                    )))
                }
                _ => {
                    owner.insert(&r.scenario, r.split);
                }
            }
        }
        for s in Split::ALL {
            if self.split(s).next().is_none() {
                log::warn!("split '{s}' is empty");
            }
        }
        Ok(())
    }
}

fn join<T: fmt::Display>(xs: &[T], sep: &str) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}

impl fmt::Display for ClipRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let boxes: Vec<String> = self.bbox.iter().map(|b| join(b, ",")).collect();
        write!(
            f,
            "clip_id={}\tsplit={}\tscenario={}\tstart={}\tlabel={}\tdir={}\tspeed={}\tbbox={}",
            self.clip_id,
            self.split,
            self.scenario,
            self.start,
            self.label,
            self.dir,
            join(&self.speed, ","),
            boxes.join(";")
        )
    }
}

pub fn format_manifest(m: &Manifest) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in &m.records {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    const KEYS: [&str; 8] = ["clip_id", "split", "scenario", "start", "label", "dir", "speed", "bbox"];
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |msg: String| AcitError::Parse { line: line_no, msg };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != KEYS.len() {
            return Err(err(format!("expected {} fields, found {}", KEYS.len(), fields.len())));
        }
        let mut vals = [""; 8];
        for (j, (field, key)) in fields.iter().zip(KEYS).enumerate() {
            match field.split_once('=') {
                Some((k, v)) if k == key => vals[j] = v,
                _ => return Err(err(format!("field {} should be '{key}=...', found '{field}'", j + 1))),
            }
        }
        let num = |key: &str, v: &str| -> Result<f32> {
            v.parse().map_err(|_| err(format!("bad number '{v}' in {key}")))
        };
        let speed = vals[6]
            .split(',')
            .map(|v| num("speed", v))
            .collect::<Result<Vec<f32>>>()?;
        let mut bbox = Vec::new();
        for b in vals[7].split(';') {
            let xs = b.split(',').map(|v| num("bbox", v)).collect::<Result<Vec<f32>>>()?;
            let arr: [f32; 4] = xs
                .try_into()
                .map_err(|_| err(format!("box '{b}' needs four values")))?;
            bbox.push(arr);
        }
        if speed.len() != CLIP_LEN || bbox.len() != CLIP_LEN {
            return Err(err(format!(
                "motion tracks must have {CLIP_LEN} steps, got {} speeds and {} boxes",
                speed.len(),
                bbox.len()
            )));
        }
        let label = match vals[4] {
            "0" => 0,
            "1" => 1,
            other => return Err(err(format!("label must be 0 or 1, got '{other}'"))),
        };
        if vals[0].is_empty() || vals[2].is_empty() {
            return Err(err("clip_id and scenario must be non-empty".into()));
        }
        records.push(ClipRecord {
            clip_id: vals[0].to_string(),
            split: vals[1].parse().map_err(|_| err(format!("unknown split '{}'", vals[1])))?,
            scenario: vals[2].to_string(),
            start: vals[3].parse().map_err(|_| err(format!("bad start '{}'", vals[3])))?,
            label,
            dir: vals[5].to_string(),
            speed,
            bbox,
        });
    }
    Ok(Manifest { records })
}

pub fn write_manifest(path: impl AsRef<Path>, m: &Manifest) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_manifest(m)).map_err(|e| AcitError::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| AcitError::io(path, e))?;
    let m = parse_manifest(&text)?;
    m.validate()?;
    Ok(m)
}

/// One labelled clip with its visual maps shared across overlapping clips.
#[derive(Debug, Clone)]
pub struct Sample {
    pub record: ClipRecord,
    /// `[T, g, g, C]` maps in modality order; the clip is rows
    /// `offset..offset + 16`.
    pub visual: [Arc<Tensor<f32>>; 4],
    pub offset: usize,
}

impl Sample {
    pub fn label(&self) -> u8 {
        self.record.label
    }

    pub fn input(&self, norm: &Normalizer) -> Result<ClipInput<f32>> {
        let mut visual = Vec::with_capacity(4);
        for v in &self.visual {
            visual.push(v.slice_rows(self.offset, CLIP_LEN)?);
        }
        Ok(ClipInput {
            visual: visual.try_into().expect("four modalities"),
            speed: norm.speed(&self.record.speed),
            bbox: norm.bbox(&self.record.bbox),
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[Sample] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, s: Split) -> &mut Vec<Sample> {
        match s {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            records: Split::ALL
                .iter()
                .flat_map(|&s| self.split(s).iter().map(|x| x.record.clone()))
                .collect(),
        }
    }

    pub fn channels(&self) -> Option<usize> {
        Split::ALL
            .iter()
            .flat_map(|&s| self.split(s).first())
            .next()
            .map(|x| *x.visual[0].shape().last().unwrap())
    }
}

/// Speed standardized with training statistics; boxes divided by the
/// scene size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub speed_mean: f64,
    pub speed_std: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer {
            speed_mean: 0.0,
            speed_std: 1.0,
        }
    }
}

impl Normalizer {
    pub fn fit(samples: &[Sample]) -> Self {
        let vals: Vec<f64> = samples
            .iter()
            .flat_map(|s| s.record.speed.iter().map(|&v| v as f64))
            .collect();
        if vals.is_empty() {
            return Normalizer::default();
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Normalizer {
            speed_mean: mean,
            speed_std: if var > 1e-12 { var.sqrt() } else { 1.0 },
        }
    }

    pub fn speed(&self, speed: &[f32]) -> Tensor<f32> {
        let data = speed
            .iter()
            .map(|&v| ((v as f64 - self.speed_mean) / self.speed_std) as f32)
            .collect();
        Tensor::new(vec![speed.len(), 1], data).expect("speed column")
    }

    pub fn bbox(&self, bbox: &[[f32; 4]]) -> Tensor<f32> {
        let data = bbox
            .iter()
            .flat_map(|b| [b[0] / SCENE_W, b[1] / SCENE_H, b[2] / SCENE_W, b[3] / SCENE_H])
            .collect();
        Tensor::new(vec![bbox.len(), 4], data).expect("box rows")
    }

    pub fn to_text(&self) -> String {
        format!("speed_mean={}\nspeed_std={}\n", self.speed_mean, self.speed_std)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut n = Normalizer::default();
        for (i, line) in text.lines().enumerate() {
            let err = |msg: String| AcitError::Parse { line: i + 1, msg };
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key=value, got '{line}'")))?;
            let v: f64 = v.trim().parse().map_err(|_| err(format!("bad number '{v}'")))?;
            match k.trim() {
                "speed_mean" => n.speed_mean = v,
                "speed_std" => n.speed_std = v,
                other => return Err(err(format!("unknown key '{other}'"))),
            }
        }
        Ok(n)
    }
}

/// How many items a split should contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitSize {
    Scenarios(usize),
    /// Scenarios are added until the clip target is met; the last one is
    /// truncated.
    Clips(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub channels: usize,
    pub synth: SynthParams,
    pub train: SplitSize,
    pub val: SplitSize,
    pub test: SplitSize,
}

impl GenConfig {
    /// `n` scenarios divided 70/15/15 by rounding, the remainder going to test.
    pub fn from_scenarios(seed: u64, channels: usize, n: usize) -> Self {
        let train = (0.7 * n as f64).round() as usize;
        let val = ((0.15 * n as f64).round() as usize).min(n - train);
        GenConfig {
            seed,
            channels,
            synth: SynthParams::default(),
            train: SplitSize::Scenarios(train),
            val: SplitSize::Scenarios(val),
            test: SplitSize::Scenarios(n - train - val),
        }
    }

    fn size(&self, s: Split) -> SplitSize {
        match s {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn encoder(&self) -> PatchEncoder {
        PatchEncoder::new(Rng::named(self.seed, "patch-encoder").next_u64(), self.channels)
    }
}

pub fn scenario_id(split: Split, index: usize) -> String {
    format!("{split}{index:05}")
}

/// Clip records of one scenario, in start order.
pub fn extract_clips(sc: &Scenario, split: Split) -> Vec<ClipRecord> {
    let starts = clip_starts(sc.len(), sc.event);
    if starts.is_empty() {
        log::warn!("scenario {} has {} frames, fewer than {CLIP_LEN}", sc.id, sc.len());
    }
    starts
        .into_iter()
        .map(|start| {
            let clip_id = format!("{}_{start:03}", sc.id);
            ClipRecord {
                dir: format!("{split}/{clip_id}"),
                clip_id,
                split,
                scenario: sc.id.clone(),
                start,
                label: sc.label,
                speed: sc.speed[start..start + CLIP_LEN].to_vec(),
                bbox: sc.bbox[start..start + CLIP_LEN].to_vec(),
            }
        })
        .collect()
}

/// Build every split in memory.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.synth.validate()?;
    if cfg.channels == 0 {
        return Err(AcitError::config("channels must be positive"));
    }
    let encoder = cfg.encoder();
    let mut ds = Dataset::default();
    for split in Split::ALL {
        let size = cfg.size(split);
        let out = ds.split_mut(split);
        let mut index = 0;
        loop {
            let done = match size {
                SplitSize::Scenarios(n) => index >= n,
                SplitSize::Clips(n) => out.len() >= n,
            };
            if done {
                break;
            }
            let sc = generate_scenario(cfg.seed, &scenario_id(split, index), &cfg.synth);
            index += 1;
            let mut clips = extract_clips(&sc, split);
            if let SplitSize::Clips(n) = size {
                clips.truncate(n - out.len());
            }
            if clips.is_empty() {
                continue;
            }
            let visual: [Arc<Tensor<f32>>; 4] = sc.features(&encoder)?.map(Arc::new);
            for r in clips {
                out.push(Sample {
                    offset: r.start,
                    visual: visual.clone(),
                    record: r,
                });
            }
        }
    }
    Ok(ds)
}

/// True when `dir` exists and has at least one entry.
pub fn dir_is_nonempty(dir: &Path) -> Result<bool> {
    match fs::read_dir(dir) {
        Ok(mut it) => Ok(it.next().is_some()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(AcitError::io(dir, e)),
    }
}

/// Write a clip directory: four feature files plus raw motion tracks.
pub fn write_clip(dir: &Path, visual: &[Tensor<f32>; 4], speed: &[f32], bbox: &[[f32; 4]]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AcitError::io(dir, e))?;
    for (m, v) in Modality::ALL.into_iter().zip(visual) {
        let seq = FeatureMapSeq::new(v.clone(), m)?;
        write_features(dir.join(format!("{}.tsr", m.stem())), &seq)?;
    }
    let sp = Tensor::new(vec![speed.len(), 1], speed.to_vec())?;
    tsr::write(dir.join("speed.tsr"), &sp)?;
    let bb = Tensor::new(vec![bbox.len(), 4], bbox.iter().flatten().copied().collect())?;
    tsr::write(dir.join("bbox.tsr"), &bb)
}

/// Raw clip contents read back from a clip directory.
pub struct ClipFiles {
    pub visual: [Tensor<f32>; 4],
    pub speed: Vec<f32>,
    pub bbox: Vec<[f32; 4]>,
}

pub fn read_clip(dir: &Path) -> Result<ClipFiles> {
    let mut visual = Vec::with_capacity(4);
    for m in Modality::ALL {
        visual.push(load_features(dir.join(format!("{}.tsr", m.stem())), m)?.into_data());
    }
    let speed: Tensor<f32> = tsr::read(dir.join("speed.tsr"))?.into_tensor();
    let bbox: Tensor<f32> = tsr::read(dir.join("bbox.tsr"))?.into_tensor();
    if speed.shape() != [CLIP_LEN, 1] || bbox.shape() != [CLIP_LEN, 4] {
        return Err(AcitError::dim(format!(
            "motion files in {} have shapes {:?} and {:?}",
            dir.display(),
            speed.shape(),
            bbox.shape()
        )));
    }
    Ok(ClipFiles {
        visual: visual.try_into().ok().expect("four modalities"),
        speed: speed.into_data(),
        bbox: bbox.data().chunks(4).map(|c| [c[0], c[1], c[2], c[3]]).collect(),
    })
}

/// Write `ds` under `root`. Refuses a non-empty directory unless `force`.
pub fn write_dataset(ds: &Dataset, root: &Path, force: bool) -> Result<Manifest> {
    if !force && dir_is_nonempty(root)? {
        return Err(AcitError::Usage(format!(
            "{} is not empty; pass --force to overwrite",
            root.display()
        )));
    }
    fs::create_dir_all(root).map_err(|e| AcitError::io(root, e))?;
    for split in Split::ALL {
        for s in ds.split(split) {
            let mut visual = Vec::with_capacity(4);
            for v in &s.visual {
                visual.push(v.slice_rows(s.offset, CLIP_LEN)?);
            }
            let visual: [Tensor<f32>; 4] = visual.try_into().expect("four modalities");
            write_clip(&root.join(&s.record.dir), &visual, &s.record.speed, &s.record.bbox)?;
        }
    }
    let m = ds.manifest();
    m.validate()?;
    write_manifest(root.join(MANIFEST), &m)?;
    Ok(m)
}

/// Load a dataset written by [`write_dataset`].
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let m = read_manifest(root.join(MANIFEST))?;
    let mut ds = Dataset::default();
    for r in m.records {
        let dir: PathBuf = root.join(&r.dir);
        let files = read_clip(&dir)?;
        let visual = files.visual.map(Arc::new);
        ds.split_mut(r.split).push(Sample {
            record: r,
            visual,
            offset: 0,
        });
    }
    Ok(ds)
}

/// Class counts `(positive, negative)`.
pub fn label_counts(samples: &[Sample]) -> (usize, usize) {
    let pos = samples.iter().filter(|s| s.label() == 1).count();
    (pos, samples.len() - pos)
}
