//! Line-oriented text artifacts: selection manifests and loss traces.
//!
//! Both start with `# config <hex>`; manifests add `# classes <m>`. Data
//! lines are tab-separated.

use std::fmt::Write as _;
use std::path::Path;

use omnidistill_core::selection::Admission;

use super::{read_file, write_atomic, ConfigHash, FormatError};

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub config_hash: ConfigHash,
    pub num_classes: usize,
    pub admissions: Vec<Admission>,
}

impl Manifest {
    pub fn source_ids(&self) -> Vec<u32> {
        self.admissions.iter().map(|a| a.source_id).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.admissions.iter().map(|a| a.label).collect()
    }
}

fn text_err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Text {
        line,
        message: message.into(),
    }
}

fn parse_hash(hex_str: &str, line: usize) -> Result<ConfigHash, FormatError> {
    let mut h = [0u8; 32];
    hex::decode_to_slice(hex_str.trim(), &mut h).map_err(|e| text_err(line, format!("config hash: {e}")))?;
    Ok(h)
}

/// The hash in a `# config <hex>` first line, if present.
pub fn header_hash(text: &str) -> Result<Option<ConfigHash>, FormatError> {
    match text.lines().next().and_then(|l| l.strip_prefix("# config ")) {
        Some(h) => parse_hash(h, 1).map(Some),
        None => Ok(None),
    }
}

pub fn render_manifest(m: &Manifest) -> String {
    let mut out = format!("# config {}\n# classes {}\n", hex::encode(m.config_hash), m.num_classes);
    for a in &m.admissions {
        writeln!(out, "{}\t{}\t{:.8e}", a.source_id, a.label, a.distance).unwrap();
    }
    out
}

pub fn parse_manifest(text: &str) -> Result<Manifest, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let config_hash = match lines.next() {
        Some((n, l)) => parse_hash(l.strip_prefix("# config ").ok_or_else(|| text_err(n, "expected `# config <hex>`"))?, n)?,
        None => return Err(text_err(1, "empty manifest")),
    };
    let num_classes = match lines.next() {
        Some((n, l)) => l
            .strip_prefix("# classes ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| text_err(n, "expected `# classes <m>`"))?,
        None => return Err(text_err(2, "missing class count")),
    };
    let mut admissions = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut f = line.split('\t');
        let mut field = |what: &str| f.next().ok_or_else(|| text_err(n, format!("missing {what}")));
        let source_id: u32 = field("source id")?.parse().map_err(|e| text_err(n, format!("source id: {e}")))?;
        let label: usize = field("label")?.parse().map_err(|e| text_err(n, format!("label: {e}")))?;
        let distance: f64 = field("distance")?.parse().map_err(|e| text_err(n, format!("distance: {e}")))?;
        if label >= num_classes {
            return Err(FormatError::LabelOutOfRange {
                label,
                classes: num_classes,
            });
        }
        admissions.push(Admission {
            source_id,
            label,
            distance,
        });
    }
    Ok(Manifest {
        config_hash,
        num_classes,
        admissions,
    })
}

pub fn read_manifest(path: &Path) -> Result<Manifest, FormatError> {
    parse_manifest(&String::from_utf8_lossy(&read_file(path)?))
}

pub fn write_manifest(path: &Path, m: &Manifest) -> Result<(), FormatError> {
    write_atomic(path, render_manifest(m).as_bytes())
}

/// One `index<TAB>loss` row per entry.
pub fn render_trace(hash: &ConfigHash, losses: &[f64], first_index: usize) -> String {
    let mut out = format!("# config {}\n", hex::encode(hash));
    for (i, l) in losses.iter().enumerate() {
        writeln!(out, "{}\t{:.9e}", first_index + i, l).unwrap();
    }
    out
}

pub fn parse_trace(text: &str) -> Result<(ConfigHash, Vec<f64>), FormatError> {
    let hash = header_hash(text)?.ok_or_else(|| text_err(1, "expected `# config <hex>`"))?;
    let mut losses = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let v = line
            .split('\t')
            .nth(1)
            .ok_or_else(|| text_err(i + 1, "missing loss column"))?;
        losses.push(v.parse().map_err(|e| text_err(i + 1, format!("loss: {e}")))?);
    }
    Ok((hash, losses))
}

pub fn read_trace(path: &Path) -> Result<(ConfigHash, Vec<f64>), FormatError> {
    parse_trace(&String::from_utf8_lossy(&read_file(path)?))
}

pub fn write_trace(path: &Path, hash: &ConfigHash, losses: &[f64]) -> Result<(), FormatError> {
    write_atomic(path, render_trace(hash, losses, 0).as_bytes())
}
