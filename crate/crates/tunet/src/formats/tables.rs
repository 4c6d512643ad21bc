//! CSV reports. Floats use Rust's shortest round-trip formatting, so equal
//! values always produce equal bytes.

use std::fs;
use std::path::Path;

use tunet_core::data::LabelStats;
use tunet_core::metrics::{ClassScores, F1Report};
use tunet_core::postprocess::ThresholdVector;
use tunet_core::train::{LrFindResult, TrainLog};

use crate::error::{CliError, IoContext, Result};

pub fn write_csv(path: &Path, header: Option<&[&str]>, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(header.is_none()).from_writer(Vec::new());
    let m = |e: csv::Error| CliError::data(format!("{}: {e}", path.display()));
    if let Some(h) = header {
        w.write_record(h).map_err(m)?;
    }
    for r in rows {
        w.write_record(r).map_err(m)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    fs::write(path, bytes).at(path)
}

/// Header and rows of a CSV file with a header line.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).at(path)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let err = |e: csv::Error| {
        let line = e.position().map(|p| format!(" line {}", p.line())).unwrap_or_default();
        CliError::data(format!("{}{line}: {e}", path.display()))
    };
    let header = rdr.headers().map_err(err)?.iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|r| r.iter().map(String::from).collect()).map_err(err))
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

/// `freq.csv`, `hist.csv` and `cooc.csv` in `dir`.
pub fn write_stats(dir: &Path, stats: &LabelStats) -> Result<()> {
    let freq: Vec<Vec<String>> = stats
        .frequency
        .iter()
        .enumerate()
        .map(|(c, n)| vec![c.to_string(), n.to_string()])
        .collect();
    write_csv(&dir.join("freq.csv"), Some(&["class", "count"]), &freq)?;
    let hist: Vec<Vec<String>> = stats
        .histogram
        .iter()
        .enumerate()
        .map(|(k, n)| vec![k.to_string(), n.to_string()])
        .collect();
    write_csv(&dir.join("hist.csv"), Some(&["k", "count"]), &hist)?;
    let cooc: Vec<Vec<String>> = stats
        .cooccurrence
        .iter()
        .map(|row| row.iter().map(usize::to_string).collect())
        .collect();
    write_csv(&dir.join("cooc.csv"), None, &cooc)
}

pub fn write_thresholds(path: &Path, t: &ThresholdVector) -> Result<()> {
    let rows: Vec<Vec<String>> = t
        .as_slice()
        .iter()
        .enumerate()
        .map(|(c, v)| vec![c.to_string(), v.to_string()])
        .collect();
    write_csv(path, Some(&["class", "threshold"]), &rows)
}

/// Reads `class,threshold` rows; classes must be `0, 1, ...` in order.
pub fn read_thresholds(path: &Path) -> Result<ThresholdVector> {
    let (header, rows) = read_csv(path)?;
    if header != ["class", "threshold"] {
        return Err(CliError::data(format!(
            "{} line 1: expected header class,threshold",
            path.display()
        )));
    }
    let mut values = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let line = i + 2;
        let bad = || CliError::data(format!("{} line {line}: expected {i},<threshold>", path.display()));
        if r.len() != 2 || r[0].parse::<usize>().ok() != Some(i) {
            return Err(bad());
        }
        values.push(r[1].parse::<f64>().map_err(|_| bad())?);
    }
    ThresholdVector::new(values).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

/// Rows `0..C`, `macro`, `micro`; columns precision, recall, f1, support.
pub fn write_metrics(path: &Path, report: &F1Report) -> Result<()> {
    let row = |name: String, s: &ClassScores| {
        vec![
            name,
            s.precision.to_string(),
            s.recall.to_string(),
            s.f1.to_string(),
            s.support.to_string(),
        ]
    };
    let mut rows: Vec<Vec<String>> = report
        .per_class
        .iter()
        .enumerate()
        .map(|(c, s)| row(c.to_string(), s))
        .collect();
    rows.push(row("macro".into(), &report.macro_avg));
    rows.push(row("micro".into(), &report.micro_avg));
    write_csv(path, Some(&["class", "precision", "recall", "f1", "support"]), &rows)
}

pub fn write_trainlog(path: &Path, log: &TrainLog) -> Result<()> {
    let rows: Vec<Vec<String>> = log
        .records
        .iter()
        .map(|r| {
            vec![
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                r.val_f1_macro.to_string(),
                r.lr.to_string(),
                r.seconds.to_string(),
            ]
        })
        .collect();
    write_csv(
        path,
        Some(&["epoch", "train_loss", "val_loss", "val_f1_macro", "lr", "seconds"]),
        &rows,
    )
}

pub fn write_lr_curve(path: &Path, res: &LrFindResult) -> Result<()> {
    let rows: Vec<Vec<String>> = res
        .curve
        .iter()
        .map(|(lr, loss)| vec![lr.to_string(), loss.to_string()])
        .collect();
    write_csv(path, Some(&["lr", "smoothed_loss"]), &rows)
}

/// Per-class mean mask dice plus an overall `mean` row.
pub fn write_dice(path: &Path, per_class: &[f64], mean: f64) -> Result<()> {
    let mut rows: Vec<Vec<String>> = per_class
        .iter()
        .enumerate()
        .map(|(c, d)| vec![c.to_string(), d.to_string()])
        .collect();
    rows.push(vec!["mean".into(), mean.to_string()]);
    write_csv(path, Some(&["class", "dice"]), &rows)
}
