//! Provenance log and artifact verification.
//!
//! Every stage appends one line to `runs.jsonl` in the working directory
//! naming its config hash and outputs. `verify` checks that each artifact
//! still embeds the hash its stage logged and, given a second working
//! directory that ran the same commands, that both hold identical bytes.
//! Wall-clock fields (keys starting with `seconds`) in JSON-lines reports
//! are masked before comparing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::formats::{embedded_hash, ConfigHash};
use crate::report::{append_lines, read_lines};

pub const RUN_LOG: &str = "runs.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Output {
    pub path: PathBuf,
    /// Absent for append-only outputs, whose content accumulates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub config_hash: String,
    pub outputs: Vec<Output>,
}

pub fn file_sha256(path: &Path) -> Result<String, Error> {
    let bytes = fs::read(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Builds and appends a run record. `written` are whole-file outputs,
/// `appended` are JSON-lines reports; both relative to `workdir`.
pub fn log_run(
    workdir: &Path,
    command: &str,
    hash: &ConfigHash,
    written: &[PathBuf],
    appended: &[PathBuf],
) -> Result<(), Error> {
    let mut outputs = Vec::new();
    for p in written {
        outputs.push(Output {
            path: p.clone(),
            sha256: Some(file_sha256(&workdir.join(p))?),
        });
    }
    outputs.extend(appended.iter().map(|p| Output {
        path: p.clone(),
        sha256: None,
    }));
    let record = RunRecord {
        command: command.into(),
        config_hash: hex::encode(hash),
        outputs,
    };
    append_lines(&workdir.join(RUN_LOG), &[record])
}

/// For every output path, the last record that wrote it, plus every hash
/// logged for the path.
fn latest_outputs(records: &[RunRecord]) -> BTreeMap<PathBuf, (RunRecord, Output, Vec<String>)> {
    let mut out: BTreeMap<PathBuf, (RunRecord, Output, Vec<String>)> = BTreeMap::new();
    for r in records {
        for o in &r.outputs {
            let entry = out
                .entry(o.path.clone())
                .or_insert_with(|| (r.clone(), o.clone(), Vec::new()));
            entry.0 = r.clone();
            entry.1 = o.clone();
            if !entry.2.contains(&r.config_hash) {
                entry.2.push(r.config_hash.clone());
            }
        }
    }
    out
}

fn masked_lines(path: &Path) -> Result<Vec<serde_json::Value>, Error> {
    let mut values: Vec<serde_json::Value> = read_lines(path)?;
    for v in &mut values {
        if let Some(obj) = v.as_object_mut() {
            obj.retain(|k, _| !k.starts_with("seconds"));
        }
    }
    Ok(values)
}

fn report_hashes(path: &Path) -> Result<Vec<String>, Error> {
    let values: Vec<serde_json::Value> = read_lines(path)?;
    Ok(values
        .iter()
        .filter_map(|v| v.get("config_hash").and_then(|h| h.as_str()).map(str::to_owned))
        .collect())
}

/// One line per checked artifact; `Err(Mismatch)` if any check failed.
pub fn verify(workdir: &Path, against: Option<&Path>) -> Result<Vec<String>, Error> {
    let records: Vec<RunRecord> = read_lines(&workdir.join(RUN_LOG))?;
    let latest = latest_outputs(&records);
    let other = match against {
        Some(dir) => Some(latest_outputs(&read_lines::<RunRecord>(&dir.join(RUN_LOG))?)),
        None => None,
    };
    let mut lines = Vec::new();
    let mut failures = 0;
    for (path, (record, output, hashes)) in &latest {
        let full = workdir.join(path);
        let mut problems = Vec::new();
        match &output.sha256 {
            Some(expected) => {
                if file_sha256(&full)? != *expected {
                    problems.push("content changed since it was written".to_string());
                }
                match embedded_hash(&full)? {
                    Some(h) if hex::encode(h) != record.config_hash => {
                        problems.push(format!("embeds config {} but was logged with {}", hex::encode(h), record.config_hash))
                    }
                    Some(_) => {}
                    None => problems.push("embeds no config hash".into()),
                }
            }
            None => {
                if let Some(h) = report_hashes(&full)?.iter().find(|h| !hashes.contains(h)) {
                    problems.push(format!("record with unlogged config {h}"));
                }
            }
        }
        if let (Some(other), Some(dir)) = (&other, against) {
            match other.get(path) {
                None => problems.push(format!("not produced in {}", dir.display())),
                Some((r2, _, _)) if r2.config_hash != record.config_hash => {
                    problems.push(format!("config {} here, {} in {}", record.config_hash, r2.config_hash, dir.display()))
                }
                Some(_) => {
                    let twin = dir.join(path);
                    let same = if output.sha256.is_some() {
                        fs::read(&full)? == fs::read(&twin)?
                    } else {
                        masked_lines(&full)? == masked_lines(&twin)?
                    };
                    if !same {
                        problems.push(format!("differs from {}", twin.display()));
                    }
                }
            }
        }
        if problems.is_empty() {
            lines.push(format!("ok\t{}", path.display()));
        } else {
            failures += 1;
            lines.push(format!("MISMATCH\t{}\t{}", path.display(), problems.join("; ")));
        }
    }
    if let (Some(other), Some(dir)) = (&other, against) {
        for path in other.keys().filter(|p| !latest.contains_key(*p)) {
            failures += 1;
            lines.push(format!("MISMATCH\t{}\tonly produced in {}", path.display(), dir.display()));
        }
    }
    if failures > 0 {
        return Err(Error::Mismatch(format!("{failures} artifact(s) failed verification:\n{}", lines.join("\n"))));
    }
    Ok(lines)
}
