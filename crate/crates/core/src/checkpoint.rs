//! Checkpoint directories: one TSR file per parameter, a text index, the
//! model configuration and the input normalizer.
//!
//! ```text
//! <dir>/model.cfg        key=value lines
//! <dir>/normalizer.txt   key=value lines
//! <dir>/index.txt        name<TAB>file<TAB>shape, one parameter per line
//! <dir>/params/<name>.tsr
//! ```

use std::fs;
use std::path::Path;

use crate::config::ModelConfig;
use crate::dataset::Normalizer;
use crate::error::{AcitError, Result};
use crate::model::AcitModel;
use crate::params::ParamSet;
use crate::tensor::Scalar;
use crate::tsr;

pub fn config_to_text(cfg: &ModelConfig) -> String {
    cfg.to_pairs()
        .into_iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

/// Parse `key=value` lines onto `base`; unknown keys are errors.
pub fn config_from_text(text: &str, mut base: ModelConfig) -> Result<ModelConfig> {
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| AcitError::Parse { line: i + 1, msg };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got '{line}'")))?;
        if !base.set(k.trim(), v.trim())? {
            return Err(err(format!("unknown key '{}'", k.trim())));
        }
    }
    Ok(base)
}

pub fn save<T: Scalar>(dir: &Path, model: &AcitModel<T>, norm: &Normalizer) -> Result<()> {
    let pdir = dir.join("params");
    fs::create_dir_all(&pdir).map_err(|e| AcitError::io(&pdir, e))?;
    let write = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| AcitError::io(&p, e))
    };
    write("model.cfg", config_to_text(model.config()))?;
    write("normalizer.txt", norm.to_text())?;
    let mut index = String::new();
    for (name, t) in model.params().iter() {
        let file = format!("params/{name}.tsr");
        tsr::write(dir.join(&file), t)?;
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        index.push_str(&format!("{name}\t{file}\t{}\n", shape.join("x")));
    }
    write("index.txt", index)
}

pub fn load<T: Scalar>(dir: &Path) -> Result<(AcitModel<T>, Normalizer)> {
    if !dir.join("index.txt").is_file() {
        return Err(AcitError::Usage(format!(
            "no checkpoint found at {}",
            dir.display()
        )));
    }
    let read = |name: &str| -> Result<String> {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|e| AcitError::io(&p, e))
    };
    let cfg = config_from_text(&read("model.cfg")?, ModelConfig::paper())?;
    let norm = Normalizer::from_text(&read("normalizer.txt")?)?;
    let mut params = ParamSet::new();
    for (i, line) in read("index.txt")?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| AcitError::Parse { line: i + 1, msg };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected name, file and shape, got '{line}'")));
        }
        let t = tsr::read(dir.join(fields[1]))?;
        let shape: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        if shape.join("x") != fields[2] {
            return Err(err(format!(
                "'{}' is recorded as {} but the file holds {}",
                fields[0],
                fields[2],
                shape.join("x")
            )));
        }
        params.insert(fields[0], t.into_tensor());
    }
    Ok((AcitModel::from_params(cfg, params)?, norm))
}
