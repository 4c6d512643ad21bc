//! Dataset directories:
//!
//! ```text
//! DIR/labels.csv      Id,Target   (Target: space-separated class indices)
//! DIR/manifest.csv    Id,Path     (Path relative to DIR)
//! DIR/dataset.cfg     classes = C, side = S   (optional)
//! DIR/images/<Id>.tunt
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use tunet_core::data::{Dataset, LabelSet, Sample};

use super::image::{read_image, write_image};
use crate::config::parse_key_values;
use crate::error::{CliError, IoContext, Result};

pub const LABELS_FILE: &str = "labels.csv";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const INFO_FILE: &str = "dataset.cfg";
pub const IMAGE_DIR: &str = "images";

/// A dataset read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetDir {
    pub dataset: Dataset,
    /// `labels.csv` was present.
    pub labelled: bool,
    /// The class count came from `dataset.cfg` rather than the largest label.
    pub classes_declared: bool,
}

/// Space-separated class indices, as in `labels.csv` and prediction files.
pub fn format_labels(labels: &[usize]) -> String {
    labels.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_labels(field: &str) -> std::result::Result<LabelSet, String> {
    let labels = field
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| format!("bad class index {t:?}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let set = LabelSet::new(labels.clone());
    if set.len() != labels.len() {
        return Err(format!("repeated class index in {field:?}"));
    }
    Ok(set)
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    let line = e.position().map(|p| format!(" line {}", p.line())).unwrap_or_default();
    CliError::data(format!("{}{line}: {e}", path.display()))
}

/// Rows of a two-column CSV with the given header, with their line numbers.
fn read_pairs(path: &Path, header: [&str; 2]) -> Result<Vec<(u64, String, String)>> {
    let text = fs::read_to_string(path).at(path)?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(text.as_bytes());
    let head = rdr.headers().map_err(|e| csv_error(path, e))?;
    if head.iter().collect::<Vec<_>>() != header {
        return Err(CliError::data(format!(
            "{} line 1: expected header {}, got {}",
            path.display(),
            header.join(","),
            head.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 2 {
            return Err(CliError::data(format!(
                "{} line {line}: expected 2 fields, got {}",
                path.display(),
                rec.len()
            )));
        }
        rows.push((line, rec[0].to_string(), rec[1].to_string()));
    }
    Ok(rows)
}

/// Parse a two-column `Id,<labels>` file such as `labels.csv` or a
/// prediction file.
pub fn read_label_file(path: &Path, header: [&str; 2]) -> Result<Vec<(String, LabelSet)>> {
    let mut seen = std::collections::BTreeSet::new();
    read_pairs(path, header)?
        .into_iter()
        .map(|(line, id, target)| {
            if id.is_empty() {
                return Err(CliError::data(format!("{} line {line}: empty Id", path.display())));
            }
            if !seen.insert(id.clone()) {
                return Err(CliError::data(format!("{} line {line}: duplicate Id {id}", path.display())));
            }
            let labels = parse_labels(&target)
                .map_err(|m| CliError::data(format!("{} line {line}: {m}", path.display())))?;
            Ok((id, labels))
        })
        .collect()
}

/// Write an `Id,<labels>` file.
pub fn write_label_file<'a, I>(path: &Path, header: [&str; 2], rows: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a [usize])>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let write = || -> csv::Result<()> {
        w.write_record(header)?;
        for (id, labels) in rows {
            w.write_record([id, &format_labels(labels)])?;
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    fs::write(path, bytes).at(path)
}

fn read_info(path: &Path) -> Result<BTreeMap<String, usize>> {
    let text = fs::read_to_string(path).at(path)?;
    let mut out = BTreeMap::new();
    for (line, key, value) in parse_key_values(&text, &path.display().to_string())? {
        if key != "classes" && key != "side" {
            return Err(CliError::data(format!("{} line {line}: unknown key {key}", path.display())));
        }
        let v = value
            .parse::<usize>()
            .map_err(|_| CliError::data(format!("{} line {line}: {key} must be an integer", path.display())))?;
        out.insert(key, v);
    }
    Ok(out)
}

/// Write images, `labels.csv`, `manifest.csv` and `dataset.cfg` into `dir`.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    let images = dir.join(IMAGE_DIR);
    fs::create_dir_all(&images).at(&images)?;
    let mut manifest = csv::Writer::from_writer(Vec::new());
    let m = |e: csv::Error| CliError::data(e.to_string());
    manifest.write_record(["Id", "Path"]).map_err(m)?;
    for s in &ds.samples {
        let rel = format!("{IMAGE_DIR}/{}.tunt", s.id);
        write_image(&dir.join(&rel), s.image())?;
        manifest.write_record([s.id.as_str(), &rel]).map_err(m)?;
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.into_inner().map_err(|e| CliError::data(e.to_string()))?).at(&path)?;
    write_label_file(
        &dir.join(LABELS_FILE),
        ["Id", "Target"],
        ds.samples.iter().map(|s| (s.id.as_str(), s.labels.as_slice())),
    )?;
    let info = dir.join(INFO_FILE);
    fs::write(&info, format!("classes = {}\nside = {}\n", ds.classes, ds.side)).at(&info)
}

/// Read a dataset directory. `labels.csv` may be absent (unlabelled data).
pub fn read_dataset(dir: &Path) -> Result<DatasetDir> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = read_pairs(&manifest_path, ["Id", "Path"])?;
    if manifest.is_empty() {
        return Err(CliError::data(format!("{}: no samples", manifest_path.display())));
    }
    let labels_path = dir.join(LABELS_FILE);
    let labelled = labels_path.exists();
    let mut labels: BTreeMap<String, LabelSet> = if labelled {
        read_label_file(&labels_path, ["Id", "Target"])?.into_iter().collect()
    } else {
        BTreeMap::new()
    };
    let info_path = dir.join(INFO_FILE);
    let info = if info_path.exists() { read_info(&info_path)? } else { BTreeMap::new() };

    let mut samples = Vec::with_capacity(manifest.len());
    for (line, id, rel) in &manifest {
        let sample_labels = if labelled {
            labels.remove(id).ok_or_else(|| {
                CliError::data(format!(
                    "{} line {line}: sample {id} has no row in {LABELS_FILE}",
                    manifest_path.display()
                ))
            })?
        } else {
            LabelSet::new(Vec::new())
        };
        let image = read_image(&dir.join(rel))?;
        let sample = Sample::new(id.clone(), image, sample_labels)
            .map_err(|e| CliError::data(format!("sample {id}: {e}")))?;
        samples.push(sample);
    }
    if let Some(id) = labels.keys().next() {
        return Err(CliError::data(format!(
            "{}: sample {id} is not listed in {MANIFEST_FILE}",
            labels_path.display()
        )));
    }

    let side = samples[0].height();
    if let Some(&declared) = info.get("side") {
        if declared != side {
            return Err(CliError::data(format!(
                "{}: side = {declared} but images are {side}x{side}",
                info_path.display()
            )));
        }
    }
    let largest = samples.iter().filter_map(|s| s.labels.largest()).max();
    let classes_declared = info.contains_key("classes");
    let classes = info
        .get("classes")
        .copied()
        .unwrap_or_else(|| largest.map_or(0, |m| m + 1));
    let dataset = Dataset::new(classes, side, samples).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?;
    Ok(DatasetDir {
        dataset,
        labelled,
        classes_declared,
    })
}
