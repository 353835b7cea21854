//! Append-only JSON-lines reports.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// One condition/epoch result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub condition: String,
    pub seed: u64,
    pub epoch: usize,
    pub split: String,
    pub accuracy: f64,
    pub seconds: f64,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

/// Per-condition summary of a comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub condition: String,
    pub seeds: Vec<u64>,
    pub dataset_size: usize,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub seconds_per_epoch: f64,
    pub config_hash: String,
}

pub fn append_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<(), Error> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).expect("serialisable"));
        text.push('\n');
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

pub fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Input(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// `(x, y)` learning-curve points: for each epoch, the mean of `metric`
/// over the matching records. Epochs are reported 1-based.
pub fn curve(records: &[Record], condition: &str, split: &str, seed: Option<u64>, metric: Metric) -> Vec<(usize, f64)> {
    let mut sums: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
    for r in records {
        if r.condition != condition || r.split != split || seed.is_some_and(|s| s != r.seed) {
            continue;
        }
        let y = match metric {
            Metric::Accuracy => r.accuracy,
            Metric::Loss => match r.loss {
                Some(l) => l,
                None => continue,
            },
            Metric::Seconds => r.seconds,
        };
        let e = sums.entry(r.epoch + 1).or_default();
        e.0 += y;
        e.1 += 1;
    }
    sums.into_iter().map(|(x, (s, n))| (x, s / n as f64)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Metric {
    Accuracy,
    Loss,
    Seconds,
}
