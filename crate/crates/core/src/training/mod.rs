//! Optimisation loop, data splitting and evaluation metrics.
//!
//! Each epoch shuffles the training set, draws a rotation per example (when
//! the input mode augments), takes AdamW steps on clipped gradients, and then
//! scores the validation set in eval mode. Validation loss drives both the
//! plateau schedule and early stopping; the parameters with the lowest
//! validation loss are restored at the end.

mod metrics;
mod optim;
mod split;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use metrics::{Confusion, MetricsReport};
pub use optim::{clip_grad_norm, AdamW, EarlyStopping, ReduceOnPlateau};
pub use split::{split, Split, MIN_CELL};

use crate::datastore::{Dataset, Record};
use crate::dsp::{rotate_iq, RotationAngle};
use crate::nn::{Mode, Session};
use crate::numerics::Tape;
use crate::stfgcn::{ops::argmax, Model, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss diverged to {loss} at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize, loss: f64 },
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("cell (label {label}, {snr_db} dB) has {count} records; splitting needs at least {MIN_CELL}")]
    CellTooSmall { label: u8, snr_db: i16, count: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// One labelled frame in working precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub i: Vec<f64>,
    pub q: Vec<f64>,
    pub label: usize,
    pub snr_db: i32,
}

impl From<&Record> for Example {
    fn from(r: &Record) -> Self {
        Self {
            i: r.i.iter().map(|&v| f64::from(v)).collect(),
            q: r.q.iter().map(|&v| f64::from(v)).collect(),
            label: usize::from(r.label),
            snr_db: i32::from(r.snr_db),
        }
    }
}

pub fn examples(dataset: &Dataset, indices: &[usize]) -> Vec<Example> {
    indices.iter().map(|&k| Example::from(&dataset.records[k])).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub early_stop_patience: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    pub bn_momentum: f64,
    pub seed: u64,
    pub split: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 256,
            epochs: 100,
            early_stop_patience: 20,
            plateau_factor: 0.5,
            plateau_patience: 5,
            min_lr: 1e-6,
            weight_decay: 0.01,
            clip_norm: 5.0,
            bn_momentum: 0.1,
            seed: 0,
            split: [0.6, 0.2, 0.2],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.batch == 0 || self.epochs == 0 {
            return bad("batch and epochs must be positive");
        }
        if !(self.lr > 0.0 && self.min_lr >= 0.0 && self.min_lr <= self.lr) {
            return bad("need 0 <= min_lr <= lr and lr > 0");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad("plateau_factor must lie in (0, 1)");
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return bad("patience values must be positive");
        }
        if !(self.clip_norm > 0.0 && self.weight_decay >= 0.0 && (0.0..=1.0).contains(&self.bn_momentum)) {
            return bad("clip_norm must be positive, weight_decay nonnegative, bn_momentum in [0, 1]");
        }
        if self.split.iter().any(|r| !(0.0..=1.0).contains(r)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("split ratios must lie in [0, 1] and sum to 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn frame_refs<'a>(batch: impl Iterator<Item = &'a (Vec<f64>, Vec<f64>)>) -> Vec<(&'a [f64], &'a [f64])> {
    batch.map(|(i, q)| (i.as_slice(), q.as_slice())).collect()
}

/// Trains `model` in place and leaves it holding the best-validation
/// parameters. `on_epoch` sees every history row as it is produced.
pub fn train(
    model: &mut Model,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    let augment = model.config().inputs.augments();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(model.store().values(), cfg.weight_decay);
    let mut sched = ReduceOnPlateau::new(cfg.lr, cfg.plateau_factor, cfg.plateau_patience, cfg.min_lr);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best = model.store().clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let lr = sched.lr();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let rotated: Vec<(Vec<f64>, Vec<f64>)> = chunk
                .iter()
                .map(|&k| {
                    let ex = &train_set[k];
                    let phi = if augment { RotationAngle::ALL[rng.random_range(0..4)] } else { RotationAngle::Deg0 };
                    rotate_iq(&ex.i, &ex.q, phi)
                })
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|&k| train_set[k].label).collect();
            let (iq, spec) = model.inputs(&frame_refs(rotated.iter()))?;
            let mut tape = Tape::new();
            let (loss, mut grads, bn) = {
                let mut s = Session::new(&mut tape, model.store(), Mode::Train);
                let (iq, spec) = (s.tape.constant(iq), s.tape.constant(spec));
                let (loss, _) = model.loss(&mut s, iq, spec, &labels)?;
                let value = s.tape.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(TrainError::Divergence { epoch, batch: b, loss: value });
                }
                let g = s.tape.backward(loss).map_err(ModelError::from)?;
                (value, s.param_grads(&g), s.take_bn_updates())
            };
            clip_grad_norm(&mut grads, cfg.clip_norm);
            let store = model.store_mut();
            store.apply_bn_stats(&bn, cfg.bn_momentum);
            opt.step(store.values_mut(), &grads, lr);
            loss_sum += loss * chunk.len() as f64;
        }
        let (val_loss, val_acc) = loss_and_accuracy(model, val_set, cfg.batch)?;
        if !val_loss.is_finite() {
            return Err(TrainError::Divergence { epoch, batch: usize::MAX, loss: val_loss });
        }
        let row = EpochRecord { epoch, train_loss: loss_sum / train_set.len() as f64, val_loss, val_acc, lr };
        on_epoch(&row);
        history.push(row);
        if stopper.observe(epoch, val_loss) {
            best = model.store().clone();
        }
        sched.observe(val_loss);
        if stopper.should_stop() {
            stopped_early = true;
            break;
        }
    }
    *model.store_mut() = best;
    Ok(TrainOutcome { history, best_epoch: stopper.best_epoch(), stopped_early })
}

/// Eval-mode logits for `set`, batch by batch, flattened `[len, ζ]`.
fn logits(model: &Model, set: &[Example], batch: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(set.len() * model.config().n_classes);
    for chunk in set.chunks(batch.max(1)) {
        let refs: Vec<(&[f64], &[f64])> = chunk.iter().map(|e| (e.i.as_slice(), e.q.as_slice())).collect();
        out.extend_from_slice(model.logits(&refs)?.data());
    }
    Ok(out)
}

/// Mean cross-entropy and accuracy without augmentation.
pub fn loss_and_accuracy(model: &Model, set: &[Example], batch: usize) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(TrainError::EmptySet("evaluation"));
    }
    let c = model.config().n_classes;
    let all = logits(model, set, batch)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (row, ex) in all.chunks(c).zip(set) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[ex.label];
        correct += usize::from(argmax(row) == ex.label);
    }
    Ok((loss / set.len() as f64, correct as f64 / set.len() as f64))
}

pub fn evaluate(model: &Model, set: &[Example], batch: usize) -> Result<MetricsReport> {
    if set.is_empty() {
        return Err(TrainError::EmptySet("test"));
    }
    let c = model.config().n_classes;
    let pred: Vec<usize> = logits(model, set, batch)?.chunks(c).map(argmax).collect();
    let truth: Vec<usize> = set.iter().map(|e| e.label).collect();
    let snr: Vec<i32> = set.iter().map(|e| e.snr_db).collect();
    Ok(MetricsReport::from_predictions(c, &truth, &pred, &snr))
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_acc,lr\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.val_acc, r.lr);
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| TrainError::Io { path: path.to_path_buf(), source })
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    write_file(path, &history_csv(history))
}

pub fn report_text(report: &MetricsReport, labels: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "samples: {}", report.confusion.total());
    let _ = writeln!(out, "overall_accuracy: {:.6}", report.overall_acc);
    let _ = writeln!(out, "macro_f1: {:.6}", report.macro_f1);
    let _ = writeln!(out, "kappa: {:.6}", report.kappa);
    if let Some((snr, acc)) = report.highest_acc() {
        let _ = writeln!(out, "highest_accuracy: {acc:.6} at {snr} dB");
    }
    let _ = writeln!(out, "per_snr_accuracy:");
    for (snr, acc) in report.per_snr_acc() {
        let _ = writeln!(out, "  {snr:>4} dB: {acc:.6}");
    }
    let _ = writeln!(out, "per_class_f1:");
    for k in 0..report.confusion.n_classes() {
        let name = labels.get(k).map_or_else(|| k.to_string(), String::clone);
        let _ = writeln!(out, "  {name}: {:.6}", report.confusion.f1(k));
    }
    out
}

pub fn per_snr_csv(report: &MetricsReport) -> String {
    let mut out = String::from("snr_db,accuracy,count\n");
    for (snr, c) in &report.per_snr {
        let _ = writeln!(out, "{snr},{},{}", c.accuracy(), c.total());
    }
    out
}

/// Writes `metrics.txt`, `per_snr.csv`, `confusion.csv` and one
/// `confusion_snr_<snr>.csv` per SNR into `dir`.
pub fn write_report(dir: &Path, report: &MetricsReport, labels: &[String]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| TrainError::Io { path: dir.to_path_buf(), source })?;
    write_file(&dir.join("metrics.txt"), &report_text(report, labels))?;
    write_file(&dir.join("per_snr.csv"), &per_snr_csv(report))?;
    write_file(&dir.join("confusion.csv"), &report.confusion.to_csv(labels))?;
    for (snr, c) in &report.per_snr {
        write_file(&dir.join(format!("confusion_snr_{snr}.csv")), &c.to_csv(labels))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stfgcn::ModelConfig;

    /// Two classes: a slow and a fast tone.
    fn toy(n: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|k| {
                let label = k % 2;
                let f = if label == 0 { 0.05 } else { 0.3 };
                let ph: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let w = std::f64::consts::TAU * f;
                let i = (0..16).map(|t| (w * t as f64 + ph).cos() + 0.1 * rng.random::<f64>()).collect();
                let q = (0..16).map(|t| (w * t as f64 + ph).sin()).collect();
                Example { i, q, label, snr_db: 10 }
            })
            .collect()
    }

    fn tiny_cfg() -> ModelConfig {
        ModelConfig { n_classes: 2, hidden: 8, ..ModelConfig::miniature() }
    }

    #[test]
    fn toy_task_loss_drops_below_ln2() {
        let mut model = Model::new(tiny_cfg(), 1).unwrap();
        let cfg = TrainConfig { batch: 16, epochs: 5, lr: 5e-3, seed: 2, ..TrainConfig::default() };
        let out = train(&mut model, &toy(64, 1), &toy(32, 2), &cfg, |_| {}).unwrap();
        let last = out.history.last().unwrap();
        assert!(last.train_loss < std::f64::consts::LN_2, "{:?}", out.history);
    }

    #[test]
    fn training_is_reproducible() {
        let cfg = TrainConfig { batch: 8, epochs: 2, seed: 7, ..TrainConfig::default() };
        let run = || {
            let mut model = Model::new(tiny_cfg(), 4).unwrap();
            let out = train(&mut model, &toy(24, 3), &toy(8, 4), &cfg, |_| {}).unwrap();
            (history_csv(&out.history), crate::stfgcn::encode_checkpoint(&model))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn report_files_are_written() {
        let r = MetricsReport::from_predictions(2, &[0, 1, 1], &[0, 1, 0], &[0, 0, 2]);
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &r, &["a".into(), "b".into()]).unwrap();
        let per_snr = fs::read_to_string(dir.path().join("per_snr.csv")).unwrap();
        assert_eq!(per_snr, "snr_db,accuracy,count\n0,1,2\n2,0,1\n");
        assert!(dir.path().join("confusion_snr_2.csv").exists());
    }

    #[test]
    fn bad_config_is_rejected_before_work() {
        let mut model = Model::new(tiny_cfg(), 1).unwrap();
        let cfg = TrainConfig { batch: 0, ..TrainConfig::default() };
        assert!(matches!(train(&mut model, &toy(4, 1), &toy(4, 1), &cfg, |_| {}), Err(TrainError::Config(_))));
    }
}
