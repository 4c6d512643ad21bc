//! The six commands, as library functions. Printing is left to the caller.

use std::fs;
use std::ops::ControlFlow;
use std::path::Path;
use std::time::Instant;

use tunet_core::data::{label_stats, make_target_masks, split_indices, synth_dataset, Dataset, LabelStats, SynthConfig};
use tunet_core::losses::dice;
use tunet_core::metrics::{f1_scores, F1Report, LabelMatrix};
use tunet_core::model::{ModelParams, TUNet};
use tunet_core::postprocess::{
    binarize, default_grid, denoise_masks, fit_thresholds, predict_labels, ThresholdVector,
};
use tunet_core::train::{
    for_each_batch, lr_find, predict_dataset, train, Clock, LrFindResult, StopReason, TUNetTask, TaskSettings,
};
use tunet_core::Tensor;

use crate::config::RunConfig;
use crate::error::{CliError, IoContext, Result};
use crate::formats::dataset::{write_label_file, LABELS_FILE};
use crate::formats::tables::{
    read_thresholds, write_dice, write_lr_curve, write_metrics, write_stats, write_thresholds, write_trainlog,
};
use crate::formats::{load_checkpoint, read_dataset, save_checkpoint, write_dataset, DatasetDir};

pub const BEST_CHECKPOINT: &str = "best.tunc";
pub const LAST_CHECKPOINT: &str = "last.tunc";
pub const TRAINLOG_FILE: &str = "trainlog.csv";
pub const THRESHOLDS_FILE: &str = "thresholds.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const VAL_PREDICTIONS_FILE: &str = "val_predictions.csv";
pub const LR_CURVE_FILE: &str = "lrcurve.csv";
pub const DICE_FILE: &str = "dice.csv";
pub const PREDICTION_HEADER: [&str; 2] = ["Id", "Predicted"];

/// Seconds since construction.
pub struct WallClock(Instant);

impl Default for WallClock {
    fn default() -> Self {
        WallClock(Instant::now())
    }
}

impl Clock for WallClock {
    fn seconds(&mut self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).at(dir)
}

fn labelled(d: DatasetDir, dir: &Path) -> Result<Dataset> {
    if !d.labelled {
        return Err(CliError::data(format!("{}: {LABELS_FILE} is missing", dir.display())));
    }
    Ok(d.dataset)
}

/// Generate a synthetic dataset into `out`.
pub fn synth(out: &Path, cfg: &SynthConfig) -> Result<Dataset> {
    let ds = synth_dataset(cfg)?;
    create_dir(out)?;
    write_dataset(out, &ds)?;
    Ok(ds)
}

/// Label statistics of the dataset in `data`, written to `out`.
pub fn stats(data: &Path, out: &Path) -> Result<LabelStats> {
    let ds = labelled(read_dataset(data)?, data)?;
    let s = label_stats(ds.samples.iter().map(|s| s.labels.as_slice()), ds.classes)?;
    create_dir(out)?;
    write_stats(out, &s)?;
    Ok(s)
}

/// The configuration with `side` and `classes` pinned to the dataset; a
/// configured value that disagrees is an error.
fn pin_shape(cfg: &RunConfig, ds: &Dataset) -> Result<RunConfig> {
    let mut pinned = cfg.clone();
    for (key, actual) in [("side", ds.side), ("classes", ds.classes)] {
        match cfg.opt_usize(key) {
            Some(v) if v != actual => {
                return Err(CliError::data(format!(
                    "config sets {key} = {v} but the dataset has {key} = {actual}"
                )))
            }
            _ => pinned.set(key, &actual.to_string())?,
        }
    }
    Ok(pinned)
}

fn split_dataset(cfg: &RunConfig, ds: &Dataset) -> Result<(Dataset, Dataset)> {
    let s = split_indices(ds.len(), cfg.f64("val_fraction"), cfg.u64("split_seed"))?;
    if s.val.is_empty() || s.train.is_empty() {
        return Err(CliError::config(format!(
            "val_fraction = {} splits {} samples into {} train / {} validation",
            cfg.f64("val_fraction"),
            ds.len(),
            s.train.len(),
            s.val.len()
        )));
    }
    Ok((ds.subset(&s.train), ds.subset(&s.val)))
}

fn truth(ds: &Dataset) -> Result<LabelMatrix> {
    Ok(LabelMatrix::from_label_sets(ds.samples.iter().map(|s| s.labels.as_slice()), ds.classes)?)
}

fn write_predictions(path: &Path, ds: &Dataset, pred: &LabelMatrix) -> Result<()> {
    let rows: Vec<(&str, Vec<usize>)> = ds
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), pred.row_indices(i)))
        .collect();
    write_label_file(path, PREDICTION_HEADER, rows.iter().map(|(id, l)| (*id, l.as_slice())))
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub epochs: usize,
    pub stop: StopReason,
    pub thresholds: ThresholdVector,
    /// Validation scores with the fitted thresholds.
    pub fitted: F1Report,
    /// Validation scores with every threshold at 0.5.
    pub fixed: F1Report,
    pub best: ModelParams<f32>,
}

/// Split, train, fit thresholds on the validation split and write
/// checkpoints, `trainlog.csv`, `thresholds.csv`, `metrics.csv` and
/// `val_predictions.csv` into `out`.
pub fn train_cmd<C: Clock>(data: &Path, out: &Path, cfg: &RunConfig, clock: &mut C) -> Result<TrainReport> {
    let ds = labelled(read_dataset(data)?, data)?;
    let cfg = pin_shape(cfg, &ds)?;
    let model = TUNet::new(cfg.model_config(ds.side, ds.classes))?;
    let tc = cfg.train_config();
    tc.validate()?;
    let (tr, va) = split_dataset(&cfg, &ds)?;
    create_dir(out)?;

    let outcome = train::<f32, _, _>(&model, &tr, &va, &tc, clock, |_, _| ControlFlow::Continue(()))?;
    save_checkpoint(&out.join(BEST_CHECKPOINT), &outcome.best, &cfg)?;
    save_checkpoint(&out.join(LAST_CHECKPOINT), &outcome.last, &cfg)?;
    write_trainlog(&out.join(TRAINLOG_FILE), &outcome.log)?;

    let preds = predict_dataset(
        &model,
        &outcome.best,
        &va,
        cfg.usize("eval_batch"),
        &tc.loss,
        tc.green_threshold,
    )?;
    let y = truth(&va)?;
    let thresholds = fit_thresholds(&preds.cls_probs, &y, &default_grid())?;
    let force = cfg.bool("force_argmax");
    let pred = predict_labels(&preds.cls_probs, &thresholds, force)?;
    let fitted = f1_scores(&pred, &y)?;
    let half = ThresholdVector::uniform(ds.classes, 0.5)?;
    let fixed = f1_scores(&predict_labels(&preds.cls_probs, &half, force)?, &y)?;
    write_thresholds(&out.join(THRESHOLDS_FILE), &thresholds)?;
    write_metrics(&out.join(METRICS_FILE), &fitted)?;
    write_predictions(&out.join(VAL_PREDICTIONS_FILE), &va, &pred)?;

    Ok(TrainReport {
        best_epoch: outcome.best_epoch,
        epochs: outcome.log.records.len(),
        stop: outcome.stop,
        thresholds,
        fitted,
        fixed,
        best: outcome.best,
    })
}

/// Learning-rate sweep on the training split; writes `lrcurve.csv` into `out`.
pub fn lr_find_cmd(data: &Path, out: &Path, cfg: &RunConfig) -> Result<LrFindResult> {
    let ds = labelled(read_dataset(data)?, data)?;
    let cfg = pin_shape(cfg, &ds)?;
    let model = TUNet::new(cfg.model_config(ds.side, ds.classes))?;
    let lc = cfg.lr_find_config();
    lc.validate()?;
    let (tr, va) = split_dataset(&cfg, &ds)?;
    create_dir(out)?;
    let settings = TaskSettings {
        loss: cfg.loss_config(),
        augment: cfg.augment_config(),
        green_threshold: cfg.f64("green_threshold"),
        seed: cfg.u64("seed"),
        eval_batch: cfg.usize("eval_batch"),
    };
    let mut task = TUNetTask::<f32>::new(&model, &tr, &va, settings)?;
    let res = lr_find(&mut task, model.init::<f32>(cfg.u64("init_seed")), &lc)?;
    write_lr_curve(&out.join(LR_CURVE_FILE), &res)?;
    Ok(res)
}

/// Everything inference needs, checked for mutual compatibility.
pub struct Inference {
    pub model: TUNet,
    pub params: ModelParams<f32>,
    pub cfg: RunConfig,
    pub data: DatasetDir,
    pub thresholds: ThresholdVector,
}

impl Inference {
    /// `overrides` are applied on top of the configuration stored with the
    /// checkpoint.
    pub fn load(checkpoint: &Path, data: &Path, thresholds: &Path, overrides: &RunConfig) -> Result<Self> {
        let (params, mut cfg) = load_checkpoint(checkpoint)?;
        cfg.merge(overrides);
        let shape = |key| {
            cfg.opt_usize(key).ok_or_else(|| {
                CliError::data(format!("{}: configuration does not record {key}", checkpoint.display()))
            })
        };
        let (side, classes) = (shape("side")?, shape("classes")?);
        let model = TUNet::new(cfg.model_config(side, classes))?;
        model
            .check_params(&params)
            .map_err(|e| CliError::data(format!("{}: {e}", checkpoint.display())))?;

        let mut data = read_dataset(data)?;
        let ds = &data.dataset;
        let largest = ds.samples.iter().filter_map(|s| s.labels.largest()).max();
        let classes_clash = if data.classes_declared {
            ds.classes != classes
        } else {
            largest.is_some_and(|m| m >= classes)
        };
        if ds.side != side || classes_clash {
            return Err(CliError::data(format!(
                "checkpoint expects classes = {classes}, side = {side} but the dataset has classes = {}, side = {}",
                if data.classes_declared { ds.classes.to_string() } else { format!(">= {}", ds.classes) },
                ds.side
            )));
        }
        data.dataset.classes = classes;

        let thresholds_path = thresholds;
        let thresholds = read_thresholds(thresholds_path)?;
        if thresholds.len() != classes {
            return Err(CliError::data(format!(
                "{} has {} thresholds but the checkpoint has classes = {classes}",
                thresholds_path.display(),
                thresholds.len()
            )));
        }
        Ok(Inference {
            model,
            params,
            cfg,
            data,
            thresholds,
        })
    }

    /// Classification probabilities `[N,C]`, in f64.
    pub fn class_probs(&self) -> Result<Tensor<f64>> {
        let ds = &self.data.dataset;
        let mut probs = Vec::with_capacity(ds.len() * ds.classes);
        for_each_batch(&self.model, &self.params, ds, self.cfg.usize("eval_batch"), |_, _, out| {
            probs.extend(out.cls_probs.data().iter().map(|&p| p as f64));
            Ok(())
        })?;
        Ok(Tensor::new(&[ds.len(), ds.classes], probs)?)
    }

    pub fn predict(&self) -> Result<LabelMatrix> {
        Ok(predict_labels(&self.class_probs()?, &self.thresholds, self.cfg.bool("force_argmax"))?)
    }
}

/// Write `Id,Predicted` rows for every manifest entry to `out`.
pub fn predict_cmd(inf: &Inference, out: &Path) -> Result<LabelMatrix> {
    let pred = inf.predict()?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_predictions(out, &inf.data.dataset, &pred)?;
    Ok(pred)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scores: F1Report,
    /// Mean over samples of the per-class dice between denoised binary masks
    /// and regenerated ground truth.
    pub dice_per_class: Vec<f64>,
    pub mean_dice: f64,
}

/// Classification metrics and mask dice against the labels of the dataset;
/// writes `metrics.csv` and `dice.csv` into `out`.
pub fn eval_cmd(inf: &Inference, out: &Path) -> Result<EvalReport> {
    if !inf.data.labelled {
        return Err(CliError::data(format!("evaluation needs {LABELS_FILE}")));
    }
    let ds = &inf.data.dataset;
    let c = ds.classes;
    let cfg = &inf.cfg;
    let (tau, min_area) = (cfg.f64("mask_threshold"), cfg.min_area(ds.side));
    let (green, eps) = (cfg.f64("green_threshold"), cfg.f64("dice_epsilon"));
    let mut probs = Vec::with_capacity(ds.len() * c);
    let mut dice_sum = vec![0.0; c];
    for_each_batch(&inf.model, &inf.params, ds, cfg.usize("eval_batch"), |_, chunk, out| {
        probs.extend(out.cls_probs.data().iter().map(|&p| p as f64));
        for (k, s) in chunk.iter().enumerate() {
            let masks = denoise_masks(&binarize(&out.seg_probs.outer(k)?, tau)?, min_area)?;
            let target = make_target_masks(s, c, green)?;
            for (ch, sum) in dice_sum.iter_mut().enumerate() {
                let d: f64 = dice(&masks.channel(ch).cast(), &target.channel(ch).cast(), eps)?;
                *sum += d;
            }
        }
        Ok(())
    })?;
    let probs = Tensor::new(&[ds.len(), c], probs)?;
    let pred = predict_labels(&probs, &inf.thresholds, cfg.bool("force_argmax"))?;
    let scores = f1_scores(&pred, &truth(ds)?)?;
    let dice_per_class: Vec<f64> = dice_sum.iter().map(|s| s / ds.len() as f64).collect();
    let mean_dice = dice_per_class.iter().sum::<f64>() / c as f64;
    create_dir(out)?;
    write_metrics(&out.join(METRICS_FILE), &scores)?;
    write_dice(&out.join(DICE_FILE), &dice_per_class, mean_dice)?;
    Ok(EvalReport {
        scores,
        dice_per_class,
        mean_dice,
    })
}
