use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use acit_core::checkpoint;
use acit_core::dataset::{
    self, label_counts, read_clip, Dataset, GenConfig, Normalizer, Split, SplitSize,
};
use acit_core::model::{shape_chain, sigmoid};
use acit_core::train::{self, ablation_csv, epoch_csv, TrainConfig, PROFILE_CSV_HEADER};
use acit_core::{AcitError, AcitModel, ClipInput, ModelConfig, Result, Variant};

/// Pedestrian crossing-intention model: data generation, training,
/// evaluation, ablation and inference.
#[derive(Parser, Debug)]
#[command(name = "acit", version)]
struct Cli {
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic dataset.
    GenData(GenArgs),
    /// Train a model and write a checkpoint plus an epoch log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Train and evaluate every architecture variant.
    Ablate(AblateArgs),
    /// Predict one clip directory.
    Infer(InferArgs),
    /// Print the shape pipeline and parameter counts.
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Configuration file of key=value lines ('#' starts a comment).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value settings, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Model size preset: desk, paper or reduced.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of scenarios, split 70/15/15 into train/val/test.
    #[arg(long)]
    scenarios: Option<usize>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset root.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint and logs.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Also write the metrics as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated variants; all six by default.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<Variant>,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[command(flatten)]
    common: Common,
    /// Clip directory with lrgb/lof/gs/gof/speed/bbox TSR files.
    #[arg(long)]
    clip: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Use a freshly initialized model with this seed instead of a checkpoint.
    #[arg(long)]
    init_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Time this many forward passes on an all-zero clip.
    #[arg(long)]
    profile: Option<usize>,
    /// Write the profile as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Every tunable, filled from defaults, then a file, then flags.
#[derive(Debug, Clone)]
struct Settings {
    model: ModelConfig,
    train: TrainConfig,
    gen: GenConfig,
    scenarios: Option<usize>,
}

impl Settings {
    fn new() -> Self {
        let model = ModelConfig::desk();
        Settings {
            gen: GenConfig::from_scenarios(0, model.channels, 10),
            model,
            train: TrainConfig::default(),
            scenarios: None,
        }
    }

    fn preset(&mut self, name: &str) -> Result<()> {
        let base = match name {
            "desk" => ModelConfig::desk(),
            "paper" => ModelConfig::paper(),
            "reduced" => ModelConfig::reduced(),
            other => return Err(AcitError::config(format!("unknown preset '{other}'"))),
        };
        self.model = ModelConfig {
            variant: self.model.variant,
            seed: self.model.seed,
            ..base
        };
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        let num = |v: &str| -> Result<usize> {
            v.parse().map_err(|_| AcitError::config(format!("bad value '{v}' for {key}")))
        };
        let real = |v: &str| -> Result<f64> {
            v.parse().map_err(|_| AcitError::config(format!("bad value '{v}' for {key}")))
        };
        match key {
            "preset" => self.preset(v)?,
            "data_seed" => self.gen.seed = num(v)? as u64,
            "scenarios" => self.scenarios = Some(num(v)?),
            "train_clips" => self.gen.train = SplitSize::Clips(num(v)?),
            "val_clips" => self.gen.val = SplitSize::Clips(num(v)?),
            "test_clips" => self.gen.test = SplitSize::Clips(num(v)?),
            "balance" => self.gen.synth.balance = real(v)?,
            "coupling" => self.gen.synth.coupling = real(v)?,
            "noise" => self.gen.synth.noise = real(v)?,
            "min_len" => self.gen.synth.min_len = num(v)?,
            "max_len" => self.gen.synth.max_len = num(v)?,
            _ => return Ok(self.model.set(key, v)? || self.train.set(key, v)?),
        }
        Ok(true)
    }

    fn apply(&mut self, key: &str, value: &str, origin: &str) -> Result<()> {
        if self.set(key.trim(), value)? {
            Ok(())
        } else {
            Err(AcitError::config(format!("unknown key '{}' in {origin}", key.trim())))
        }
    }

    fn load(common: &Common) -> Result<Self> {
        let mut s = Settings::new();
        let mut pairs = Vec::new();
        if let Some(path) = &common.config {
            let text = fs::read_to_string(path).map_err(|e| AcitError::io(path, e))?;
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| AcitError::Parse {
                    line: i + 1,
                    msg: format!("expected key=value in {}, got '{line}'", path.display()),
                })?;
                pairs.push((k.trim().to_string(), v.trim().to_string(), format!("{}:{}", path.display(), i + 1)));
            }
        }
        for kv in &common.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| AcitError::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string(), "--set".to_string()));
        }
        // A preset replaces sizes wholesale, so it goes first.
        let preset = common
            .preset
            .clone()
            .or_else(|| pairs.iter().rev().find(|p| p.0 == "preset").map(|p| p.1.clone()));
        if let Some(p) = preset {
            s.preset(&p)?;
        }
        for (k, v, origin) in pairs.iter().filter(|p| p.0 != "preset") {
            s.apply(k, v, origin)?;
        }
        if let Some(v) = common.variant {
            s.model.variant = v;
        }
        if let Some(seed) = common.seed {
            s.model.seed = seed;
            s.train.seed = seed;
            s.gen.seed = seed;
        }
        s.gen.channels = s.model.channels;
        Ok(s)
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| AcitError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| AcitError::io(path, e))
}

fn check_channels(ds: &Dataset, cfg: &ModelConfig) -> Result<()> {
    match ds.channels() {
        Some(c) if c != cfg.channels => Err(AcitError::config(format!(
            "dataset has {c} feature channels but the model expects {}",
            cfg.channels
        ))),
        _ => Ok(()),
    }
}

fn gen_data(a: GenArgs) -> Result<()> {
    let s = Settings::load(&a.common)?;
    let mut gen = s.gen.clone();
    if let Some(n) = a.scenarios.or(s.scenarios) {
        let by_count = GenConfig::from_scenarios(gen.seed, gen.channels, n);
        gen.train = by_count.train;
        gen.val = by_count.val;
        gen.test = by_count.test;
    }
    if !a.force && dataset::dir_is_nonempty(&a.out)? {
        return Err(AcitError::Usage(format!(
            "{} is not empty; pass --force to overwrite",
            a.out.display()
        )));
    }
    if a.force && a.out.exists() {
        for split in Split::ALL {
            let d = a.out.join(split.name());
            if d.exists() {
                fs::remove_dir_all(&d).map_err(|e| AcitError::io(&d, e))?;
            }
        }
    }
    let ds = dataset::generate(&gen)?;
    dataset::write_dataset(&ds, &a.out, true)?;
    for split in Split::ALL {
        let samples = ds.split(split);
        let (pos, neg) = label_counts(samples);
        let scen: std::collections::BTreeSet<&str> = samples.iter().map(|x| x.record.scenario.as_str()).collect();
        println!(
            "{split}: {} clips from {} scenarios, {pos} crossing / {neg} not crossing",
            samples.len(),
            scen.len()
        );
    }
    println!("wrote {}", a.out.join(dataset::MANIFEST).display());
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut s = Settings::load(&a.common)?;
    if let Some(lr) = a.lr {
        s.train.lr = lr;
    }
    if let Some(e) = a.epochs {
        s.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        s.train.batch_size = b;
    }
    let ds = dataset::load_dataset(&a.data)?;
    check_channels(&ds, &s.model)?;
    let norm = Normalizer::fit(&ds.train);
    let mut model = AcitModel::<f32>::new(s.model.clone())?;
    println!("training {} ({} parameters)", s.model.variant, model.param_count());
    let report = train::train(&mut model, &ds, &norm, &s.train)?;
    fs::create_dir_all(&a.out).map_err(|e| AcitError::io(&a.out, e))?;
    checkpoint::save(&a.out.join("checkpoint"), &model, &norm)?;
    write_text(&a.out.join("epochs.csv"), &epoch_csv(&report.epochs))?;
    let best = &report.epochs[report.best_epoch - 1];
    println!("best epoch {}: val {}", report.best_epoch, best.val);
    println!("wrote {}", a.out.display());
    Ok(())
}

fn require_checkpoint(p: &Option<PathBuf>) -> Result<&PathBuf> {
    p.as_ref()
        .ok_or_else(|| AcitError::Usage("a --checkpoint directory is required".into()))
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let dir = require_checkpoint(&a.checkpoint)?;
    let (model, norm) = checkpoint::load::<f32>(dir)?;
    let ds = dataset::load_dataset(&a.data)?;
    check_channels(&ds, model.config())?;
    let samples = ds.split(a.split);
    if samples.is_empty() {
        return Err(AcitError::config(format!("split '{}' is empty", a.split)));
    }
    let (_, m) = train::evaluate(&model, samples, &norm)?;
    println!("{} clips from {}", samples.len(), a.split);
    println!("{m}");
    if let Some(path) = &a.csv {
        let text = format!(
            "split,n,{}\n{},{},{}\n",
            acit_core::metrics::Metrics::CSV_HEADER,
            a.split,
            m.n(),
            m.csv_row()
        );
        write_text(path, &text)?;
    }
    Ok(())
}

fn run_ablate(a: AblateArgs) -> Result<()> {
    let mut s = Settings::load(&a.common)?;
    if let Some(lr) = a.lr {
        s.train.lr = lr;
    }
    if let Some(e) = a.epochs {
        s.train.epochs = e;
    }
    let ds = dataset::load_dataset(&a.data)?;
    check_channels(&ds, &s.model)?;
    let variants = if a.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.variants.clone()
    };
    let eval = ds.split(a.split);
    if eval.is_empty() {
        return Err(AcitError::config(format!("split '{}' is empty", a.split)));
    }
    let rows = train::run_ablation(&ds, &s.model, &s.train, &variants, eval)?;
    let csv = ablation_csv(&rows);
    write_text(&a.out, &csv)?;
    print!("{csv}");
    Ok(())
}

fn run_infer(a: InferArgs) -> Result<()> {
    let (model, norm) = match (&a.checkpoint, a.init_seed) {
        (Some(dir), _) => checkpoint::load::<f32>(dir)?,
        (None, Some(seed)) => {
            let mut s = Settings::load(&a.common)?;
            s.model.seed = seed;
            (AcitModel::new(s.model)?, Normalizer::default())
        }
        (None, None) => {
            return Err(AcitError::Usage(
                "infer needs --checkpoint or --init-seed".into(),
            ))
        }
    };
    let files = read_clip(&a.clip)?;
    let input = ClipInput {
        visual: files.visual,
        speed: norm.speed(&files.speed),
        bbox: norm.bbox(&files.bbox),
    };
    let p = sigmoid(model.logit(&input)?);
    let decision = if p >= acit_core::metrics::THRESHOLD { "C" } else { "NC" };
    println!("probability={p:.6} decision={decision}");
    Ok(())
}

fn run_inspect(a: InspectArgs) -> Result<()> {
    let model: AcitModel<f32> = match &a.checkpoint {
        Some(dir) => checkpoint::load(dir)?.0,
        None => AcitModel::new(Settings::load(&a.common)?.model)?,
    };
    let cfg = model.config();
    println!("variant {}", cfg.variant);
    for line in shape_chain(cfg) {
        println!("  {line}");
    }
    let mut blocks: Vec<(String, usize)> = Vec::new();
    for (name, t) in model.params().iter() {
        let block = name.split('.').next().unwrap_or(name).to_string();
        match blocks.last_mut() {
            Some((b, n)) if *b == block => *n += t.numel(),
            _ => blocks.push((block, t.numel())),
        }
    }
    for (b, n) in &blocks {
        println!("  params {b}: {n}");
    }
    println!("parameters {}", model.param_count());
    if let Some(runs) = a.profile {
        let p = train::profile(&model, &ClipInput::zeros(cfg), runs)?;
        println!("median forward {:.3} ms over {} runs", p.median_ms, p.runs);
        if let Some(path) = &a.csv {
            let text = format!(
                "{PROFILE_CSV_HEADER}\n{},{},{},{:.4}\n",
                cfg.variant, p.params, p.runs, p.median_ms
            );
            write_text(path, &text)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    let result = match cli.cmd {
        Cmd::GenData(a) => gen_data(a),
        Cmd::Train(a) => run_train(a),
        Cmd::Eval(a) => run_eval(a),
        Cmd::Ablate(a) => run_ablate(a),
        Cmd::Infer(a) => run_infer(a),
        Cmd::Inspect(a) => run_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
