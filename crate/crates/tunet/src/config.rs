//! Run configuration: flat `key = value` lines, `#` starts a comment.
//!
//! Every key is declared in [`SCHEMA`]; unknown keys and ill-typed or
//! out-of-range values are errors that name the key. Layers merge in the
//! order defaults, config file, command-line flags.

use std::collections::BTreeMap;

use tunet_core::data::AugmentConfig;
use tunet_core::losses::LossConfig;
use tunet_core::model::TUNetConfig;
use tunet_core::postprocess::default_min_area;
use tunet_core::train::{AdamConfig, LrFindConfig, LrSchedule, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Float,
    Int,
    Bool,
    Text,
}

#[derive(Debug, Clone, Copy)]
pub struct KeySpec {
    pub name: &'static str,
    pub kind: Kind,
    /// Empty means unset; the consumer derives a value.
    pub default: &'static str,
    /// Numeric range check and its description.
    pub check: Option<(fn(f64) -> bool, &'static str)>,
    pub doc: &'static str,
}

const fn key(name: &'static str, kind: Kind, default: &'static str, doc: &'static str) -> KeySpec {
    KeySpec {
        name,
        kind,
        default,
        check: None,
        doc,
    }
}

const fn ranged(
    name: &'static str,
    kind: Kind,
    default: &'static str,
    check: fn(f64) -> bool,
    range: &'static str,
    doc: &'static str,
) -> KeySpec {
    KeySpec {
        name,
        kind,
        default,
        check: Some((check, range)),
        doc,
    }
}

use Kind::{Bool, Float, Int, Text};

pub const SCHEMA: &[KeySpec] = &[
    key("data", Text, "", "dataset directory"),
    key("out", Text, "", "output directory"),
    // data
    ranged("val_fraction", Float, "0.1", |v| v > 0.0 && v < 1.0, "in (0, 1)", "validation share of the dataset"),
    key("split_seed", Int, "0", "seed of the train/validation split"),
    ranged("green_threshold", Float, "0.5", |v| v > 0.0 && v < 1.0, "in (0, 1)", "green level that counts as signal in target masks"),
    // model
    ranged("side", Int, "", |v| v >= 1.0, ">= 1", "image side; taken from the dataset when unset"),
    ranged("classes", Int, "", |v| v >= 1.0, ">= 1", "class count; taken from the dataset when unset"),
    ranged("levels", Int, "4", |v| v >= 2.0, ">= 2", "encoder depth"),
    ranged("base_width", Int, "16", |v| v >= 4.0, ">= 4", "channels of the first encoder level"),
    ranged("dropout", Float, "0.25", |v| (0.0..1.0).contains(&v), "in [0, 1)", "dropout rate"),
    // loss
    ranged("alpha", Float, "0.4", |v| (0.0..=1.0).contains(&v), "in [0, 1]", "weight of the segmentation loss"),
    ranged("gamma", Float, "2", |v| v >= 0.0, ">= 0", "focal loss focusing parameter"),
    ranged("dice_epsilon", Float, "1", |v| v >= 0.0, ">= 0", "dice smoothing term"),
    // optimisation
    ranged("batch_size", Int, "8", |v| v >= 1.0, ">= 1", "mini-batch size"),
    ranged("max_epochs", Int, "50", |v| v >= 1.0, ">= 1", "epoch budget"),
    ranged("patience", Int, "5", |v| v >= 1.0, ">= 1", "epochs without validation improvement before stopping"),
    ranged("lr", Float, "0.02", |v| v > 0.0, "> 0", "initial (peak) learning rate"),
    ranged("lr_min", Float, "", |v| v > 0.0, "> 0", "trough of the cosine schedule; lr / 100 when unset"),
    ranged("cycle_len", Int, "10", |v| v >= 1.0, ">= 1", "epochs per cosine cycle"),
    ranged("beta1", Float, "0.9", |v| (0.0..1.0).contains(&v), "in [0, 1)", "Adam first-moment decay"),
    ranged("beta2", Float, "0.999", |v| (0.0..1.0).contains(&v), "in [0, 1)", "Adam second-moment decay"),
    ranged("adam_eps", Float, "1e-8", |v| v > 0.0, "> 0", "Adam denominator offset"),
    key("seed", Int, "0", "seed of shuffling, augmentation and dropout"),
    key("init_seed", Int, "0", "seed of parameter initialisation"),
    // augmentation
    key("augment_geometric", Bool, "true", "random D4 symmetry"),
    key("augment_lighting", Bool, "true", "random intensity scale and shift"),
    ranged("lighting_scale_min", Float, "0.8", |v| v > 0.0, "> 0", "lower bound of the intensity scale"),
    ranged("lighting_scale_max", Float, "1.2", |v| v > 0.0, "> 0", "upper bound of the intensity scale"),
    key("lighting_shift_min", Float, "-0.05", "lower bound of the intensity shift"),
    key("lighting_shift_max", Float, "0.05", "upper bound of the intensity shift"),
    // learning-rate finder
    ranged("lr_find_min", Float, "1e-5", |v| v > 0.0, "> 0", "first learning rate of the sweep"),
    ranged("lr_find_max", Float, "1", |v| v > 0.0, "> 0", "last learning rate of the sweep"),
    ranged("lr_find_steps", Int, "100", |v| v >= 20.0, ">= 20", "sweep length"),
    ranged("lr_find_smoothing", Float, "0.98", |v| (0.0..1.0).contains(&v), "in [0, 1)", "EMA factor of the loss"),
    ranged("lr_find_divergence", Float, "4", |v| v > 1.0, "> 1", "stop when the smoothed loss exceeds this multiple of its minimum"),
    ranged("lr_find_divisor", Float, "10", |v| v > 1.0, "> 1", "suggested lr = loss-minimising lr / divisor"),
    // post-processing
    ranged("mask_threshold", Float, "0.5", |v| v > 0.0 && v < 1.0, "in (0, 1)", "segmentation binarisation level"),
    ranged("min_area", Int, "", |v| v >= 1.0, ">= 1", "smallest kept mask component; scaled from the side when unset"),
    key("force_argmax", Bool, "false", "predict the top class when no class clears its threshold"),
    ranged("eval_batch", Int, "16", |v| v >= 1.0, ">= 1", "batch size of inference passes"),
];

pub fn spec(name: &str) -> Option<&'static KeySpec> {
    SCHEMA.iter().find(|k| k.name == name)
}

/// `(line, key, value)` for every non-blank, non-comment line.
pub fn parse_key_values(text: &str, origin: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::config(format!("{origin} line {}: expected key = value", i + 1)));
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(CliError::config(format!("{origin} line {}: missing key", i + 1)));
        }
        out.push((i + 1, k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn check_value(spec: &KeySpec, value: &str) -> std::result::Result<(), String> {
    if value.is_empty() {
        return Err("empty value".into());
    }
    let number = match spec.kind {
        Kind::Text => return Ok(()),
        Kind::Bool => {
            return match value {
                "true" | "false" => Ok(()),
                _ => Err(format!("expected true or false, got {value:?}")),
            }
        }
        Kind::Int => value
            .parse::<u64>()
            .map(|v| v as f64)
            .map_err(|_| format!("expected a non-negative integer, got {value:?}"))?,
        Kind::Float => match value.parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => return Err(format!("expected a finite number, got {value:?}")),
        },
    };
    match spec.check {
        Some((ok, range)) if !ok(number) => Err(format!("{value} is not {range}")),
        _ => Ok(()),
    }
}

/// A set of explicit settings over the schema defaults.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl RunConfig {
    /// Set one key, validating name, type and range.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let spec = spec(key).ok_or_else(|| CliError::config(format!("unknown config key `{key}`")))?;
        let value = value.trim();
        check_value(spec, value).map_err(|m| CliError::config(format!("config key `{key}`: {m}")))?;
        self.values.insert(spec.name, value.to_string());
        Ok(())
    }

    /// Apply `key = value` text; `origin` prefixes error messages.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (line, k, v) in parse_key_values(text, origin)? {
            self.set(&k, &v)
                .map_err(|e| CliError::config(format!("{origin} line {line}: {e}")))?;
        }
        Ok(())
    }

    /// Apply a `key=value` assignment as given on the command line.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::config(format!("expected key=value, got {assignment:?}")))?;
        self.set(k.trim(), v)
    }

    /// Overlay every explicit setting of `other`.
    pub fn merge(&mut self, other: &RunConfig) {
        for (k, v) in &other.values {
            self.values.insert(k, v.clone());
        }
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    /// Effective value; `None` when unset without a default.
    pub fn get(&self, key: &str) -> Option<&str> {
        let spec = spec(key).unwrap_or_else(|| panic!("`{key}` is not a config key"));
        let v = self.values.get(spec.name).map_or(spec.default, String::as_str);
        (!v.is_empty()).then_some(v)
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str) -> Option<T> {
        self.get(key).map(|v| v.parse().ok().expect("values are validated on set"))
    }

    pub fn f64(&self, key: &str) -> f64 {
        self.opt_f64(key).unwrap_or_else(|| panic!("`{key}` has no default"))
    }

    pub fn opt_f64(&self, key: &str) -> Option<f64> {
        self.parsed(key)
    }

    pub fn u64(&self, key: &str) -> u64 {
        self.opt_usize(key).unwrap_or_else(|| panic!("`{key}` has no default")) as u64
    }

    pub fn usize(&self, key: &str) -> usize {
        self.opt_usize(key).unwrap_or_else(|| panic!("`{key}` has no default"))
    }

    pub fn opt_usize(&self, key: &str) -> Option<usize> {
        self.parsed(key)
    }

    pub fn bool(&self, key: &str) -> bool {
        self.get(key) == Some("true")
    }

    /// Every key with a value, in schema order.
    pub fn to_text(&self) -> String {
        SCHEMA
            .iter()
            .filter_map(|k| self.get(k.name).map(|v| format!("{} = {v}\n", k.name)))
            .collect()
    }

    pub fn model_config(&self, side: usize, classes: usize) -> TUNetConfig {
        TUNetConfig {
            side,
            classes,
            levels: self.usize("levels"),
            base_width: self.usize("base_width"),
            dropout: self.f64("dropout"),
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            alpha: self.f64("alpha"),
            gamma: self.f64("gamma"),
            dice_epsilon: self.f64("dice_epsilon"),
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.f64("beta1"),
            beta2: self.f64("beta2"),
            eps: self.f64("adam_eps"),
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            geometric: self.bool("augment_geometric"),
            lighting: self.bool("augment_lighting"),
            scale_range: (self.f64("lighting_scale_min"), self.f64("lighting_scale_max")),
            shift_range: (self.f64("lighting_shift_min"), self.f64("lighting_shift_max")),
        }
    }

    pub fn schedule(&self) -> LrSchedule {
        let lr = self.f64("lr");
        LrSchedule {
            lr_max: lr,
            lr_min: self.opt_f64("lr_min").unwrap_or(lr / 100.0),
            cycle_len: self.usize("cycle_len"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.usize("batch_size"),
            max_epochs: self.usize("max_epochs"),
            patience: self.usize("patience"),
            schedule: self.schedule(),
            adam: self.adam_config(),
            loss: self.loss_config(),
            augment: self.augment_config(),
            green_threshold: self.f64("green_threshold"),
            seed: self.u64("seed"),
            init_seed: self.u64("init_seed"),
        }
    }

    pub fn lr_find_config(&self) -> LrFindConfig {
        LrFindConfig {
            lr_min: self.f64("lr_find_min"),
            lr_max: self.f64("lr_find_max"),
            steps: self.usize("lr_find_steps"),
            batch_size: self.usize("batch_size"),
            smoothing: self.f64("lr_find_smoothing"),
            divergence_factor: self.f64("lr_find_divergence"),
            divisor: self.f64("lr_find_divisor"),
            adam: self.adam_config(),
            seed: self.u64("seed"),
        }
    }

    pub fn min_area(&self, side: usize) -> usize {
        self.opt_usize("min_area").unwrap_or_else(|| default_min_area(side))
    }
}
