//! Training, evaluation, ablation runs and latency profiling.

use std::time::Instant;

use crate::config::{ModelConfig, Variant};
use crate::dataset::{label_counts, Dataset, Normalizer, Sample};
use crate::error::{AcitError, Result};
use crate::metrics::{compute_metrics, fmt_metric, Metrics};
use crate::model::{sigmoid, AcitModel, ClipInput};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::ParamSet;
use crate::rng::Rng;
use crate::synth::class_weights;
use crate::tape::Tape;
use crate::tensor::Scalar;
use crate::tfa::{l2_penalty, HEAD_WEIGHTS};

const ORDER_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Coefficient of `sum(w^2)` over the head weight matrices.
    pub l2: f64,
    /// Epochs without a validation AUC improvement before stopping; 0 never
    /// stops early.
    pub patience: usize,
    /// Weight classes by inverse frequency; otherwise both weigh 1.
    pub balanced: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-5,
            batch_size: 8,
            epochs: 20,
            seed: 0,
            l2: 0.001,
            patience: 5,
            balanced: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(AcitError::config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(AcitError::config("batch_size and epochs must be >= 1"));
        }
        if self.l2 < 0.0 {
            return Err(AcitError::config(format!("l2 must be >= 0, got {}", self.l2)));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
            v.trim()
                .parse()
                .map_err(|_| AcitError::config(format!("bad value '{v}' for {key}")))
        }
        match key {
            "lr" => self.lr = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "l2" => self.l2 = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "balanced" => self.balanced = num(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean weighted cross-entropy over the epoch's training clips.
    pub train_loss: f64,
    pub val: Metrics,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub class_weights: (f64, f64),
}

pub const EPOCH_CSV_HEADER: &str = "epoch,train_loss,val_acc,val_auc,val_f1,val_precision,val_recall";

pub fn epoch_csv(logs: &[EpochLog]) -> String {
    let mut out = format!("{EPOCH_CSV_HEADER}\n");
    for l in logs {
        out.push_str(&format!(
            "{},{:.9},{},{},{},{},{}\n",
            l.epoch,
            l.train_loss,
            fmt_metric(Some(l.val.acc)),
            fmt_metric(l.val.auc),
            fmt_metric(l.val.f1),
            fmt_metric(l.val.precision),
            fmt_metric(l.val.recall)
        ));
    }
    out
}

/// Value and gradient of the L2 penalty; only head weight matrices are
/// touched.
pub fn l2_gradients<T: Scalar>(params: &ParamSet<T>, lambda: f64) -> Result<(f64, ParamSet<T>)> {
    let mut grads = params.zeros_like();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let weights = HEAD_WEIGHTS
        .iter()
        .map(|n| bound.get(n))
        .collect::<Result<Vec<_>>>()?;
    match l2_penalty(&mut tape, &weights, lambda)? {
        Some(p) => {
            let g = tape.backward(p)?;
            grads.accumulate(&bound, &g, T::one());
            Ok((tape.value(p).item().as_f64(), grads))
        }
        None => Ok((0.0, grads)),
    }
}

/// Loss and parameter gradients of one clip.
pub fn sample_gradients<T: Scalar>(
    model: &AcitModel<T>,
    input: &ClipInput<T>,
    label: u8,
    weight: f64,
    dropout_rng: Option<Rng>,
) -> Result<(f64, ParamSet<T>)> {
    let mut tape = match dropout_rng {
        Some(r) => Tape::training(r),
        None => Tape::new(),
    };
    let bound = model.bind(&mut tape);
    let trace = model.forward_bound(&mut tape, &bound, input)?;
    let loss = tape.bce_with_logit(trace.logit, label as f64, weight)?;
    let g = tape.backward(loss)?;
    let mut grads = model.params().zeros_like();
    grads.accumulate(&bound, &g, T::one());
    Ok((tape.value(loss).item().as_f64(), grads))
}

fn add_scaled<T: Scalar>(acc: &mut ParamSet<T>, g: &ParamSet<T>, scale: f64) {
    let s = T::of(scale);
    for ((_, a), (_, b)) in acc.iter_mut().zip(g.iter()) {
        for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
            *x = *x + s * y;
        }
    }
}

/// Sigmoid scores of `samples` in inference mode.
pub fn predict_all(model: &AcitModel<f32>, samples: &[Sample], norm: &Normalizer) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| model.logit(&s.input(norm)?).map(sigmoid))
        .collect()
}

pub fn evaluate(model: &AcitModel<f32>, samples: &[Sample], norm: &Normalizer) -> Result<(Vec<f64>, Metrics)> {
    let scores = predict_all(model, samples, norm)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label()).collect();
    let m = compute_metrics(&scores, &labels)?;
    Ok((scores, m))
}

fn better(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => x > y,
        (Some(_), None) => true,
        _ => false,
    }
}

/// Train `model` in place on `ds.train`, keeping the parameters of the
/// epoch with the best validation AUC.
pub fn train(model: &mut AcitModel<f32>, ds: &Dataset, norm: &Normalizer, tc: &TrainConfig) -> Result<TrainReport> {
    tc.validate()?;
    if ds.train.is_empty() || ds.val.is_empty() {
        return Err(AcitError::config(format!(
            "training needs non-empty train and val splits, got {} and {}",
            ds.train.len(),
            ds.val.len()
        )));
    }
    let (pos, neg) = label_counts(&ds.train);
    let weights = if tc.balanced { class_weights(pos, neg)? } else { (1.0, 1.0) };
    let adam = AdamConfig::new(tc.lr);
    let mut state = AdamState::new(model.params());
    let mut best: Option<(Option<f64>, usize, ParamSet<f32>)> = None;
    let mut stale = 0;
    let mut logs = Vec::new();
    let inputs: Vec<ClipInput<f32>> = ds.train.iter().map(|s| s.input(norm)).collect::<Result<_>>()?;

    for epoch in 1..=tc.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..ds.train.len()).collect();
        Rng::keyed(tc.seed, &[ORDER_STREAM, epoch as u64]).shuffle(&mut order);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let mut grads = model.params().zeros_like();
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let label = ds.train[i].label();
                let w = if label == 1 { weights.0 } else { weights.1 };
                let rng = Rng::keyed(tc.seed, &[DROPOUT_STREAM, epoch as u64, i as u64]);
                let (loss, g) = sample_gradients(model, &inputs[i], label, w, Some(rng)).map_err(|e| match e {
                    AcitError::Numeric(m) => AcitError::Numeric(format!(
                        "epoch {epoch} batch {b} clip {}: {m}",
                        ds.train[i].record.clip_id
                    )),
                    other => other,
                })?;
                loss_sum += loss;
                add_scaled(&mut grads, &g, scale);
            }
            if tc.l2 > 0.0 {
                let (_, g) = l2_gradients(model.params(), tc.l2)?;
                add_scaled(&mut grads, &g, 1.0);
            }
            if !grads.all_finite() {
                return Err(AcitError::Numeric(format!("epoch {epoch} batch {b}: non-finite gradient")));
            }
            adam_step(model.params_mut(), &grads, &mut state, &adam)?;
            if !model.params().all_finite() {
                return Err(AcitError::Numeric(format!("epoch {epoch} batch {b}: non-finite parameters")));
            }
        }
        let train_loss = loss_sum / ds.train.len() as f64;
        if !train_loss.is_finite() {
            return Err(AcitError::Numeric(format!("epoch {epoch}: loss is {train_loss}")));
        }
        let (_, val) = evaluate(model, &ds.val, norm)?;
        log::info!(
            "epoch {epoch}: loss {train_loss:.5} val {val} ({:.1}s)",
            start.elapsed().as_secs_f64()
        );
        logs.push(EpochLog {
            epoch,
            train_loss,
            val,
        });
        let improved = match &best {
            None => true,
            Some((auc, _, _)) => better(val.auc, *auc),
        };
        if improved {
            best = Some((val.auc, epoch, model.params().clone()));
            stale = 0;
        } else {
            stale += 1;
            if tc.patience > 0 && stale >= tc.patience {
                log::info!("no validation improvement for {stale} epochs; stopping");
                break;
            }
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    *model.params_mut() = params;
    Ok(TrainReport {
        epochs: logs,
        best_epoch,
        class_weights: weights,
    })
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: Variant,
    pub params: usize,
    pub best_epoch: usize,
    pub metrics: Metrics,
}

pub const ABLATION_CSV_HEADER: &str = "variant,params,best_epoch,acc,auc,f1,precision,recall,tp,fp,tn,fn";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_CSV_HEADER}\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.variant, r.params, r.best_epoch, r.metrics.csv_row()));
    }
    out
}

/// Train and evaluate every variant in `variants` with one seed and one
/// data order; metrics come from `eval` (typically the test split).
pub fn run_ablation(
    ds: &Dataset,
    base: &ModelConfig,
    tc: &TrainConfig,
    variants: &[Variant],
    eval: &[Sample],
) -> Result<Vec<AblationRow>> {
    let norm = Normalizer::fit(&ds.train);
    let mut rows = Vec::new();
    for &v in variants {
        let cfg = base.clone().with_variant(v);
        let mut model = AcitModel::<f32>::new(cfg).map_err(|e| match e {
            AcitError::Config(m) => AcitError::config(format!("variant {v}: {m}")),
            other => other,
        })?;
        log::info!("ablation: training {v} ({} parameters)", model.param_count());
        let report = train(&mut model, ds, &norm, tc)?;
        let (_, metrics) = evaluate(&model, eval, &norm)?;
        rows.push(AblationRow {
            variant: v,
            params: model.param_count(),
            best_epoch: report.best_epoch,
            metrics,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Profile {
    pub median_ms: f64,
    pub runs: usize,
    pub params: usize,
}

pub const PROFILE_CSV_HEADER: &str = "variant,params,runs,median_ms";

/// Median inference time of one clip over `runs` runs after a short
/// warm-up.
pub fn profile<T: Scalar>(model: &AcitModel<T>, input: &ClipInput<T>, runs: usize) -> Result<Profile> {
    for _ in 0..3 {
        model.logit(input)?;
    }
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs.max(1) {
        let t = Instant::now();
        model.logit(input)?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let n = times.len();
    let median = if n % 2 == 1 {
        times[n / 2]
    } else {
        0.5 * (times[n / 2 - 1] + times[n / 2])
    };
    Ok(Profile {
        median_ms: median,
        runs: n,
        params: model.param_count(),
    })
}
