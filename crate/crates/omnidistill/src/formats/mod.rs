//! On-disk formats. Binary formats are little-endian; every file a pipeline
//! stage writes carries the SHA-256 of the configuration that produced it.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

pub mod odds;
pub mod odim;
pub mod odmp;
pub mod text;

pub use odds::{read_distilled, write_distilled};
pub use odim::{read_dataset, read_labeled, read_pool, write_labeled, write_pool, Dataset, OdimFile};
pub use odmp::{read_checkpoint, write_checkpoint};
pub use text::{read_manifest, read_trace, write_manifest, write_trace, Manifest};

pub type ConfigHash = [u8; 32];

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },
    #[error("unsupported format version {0}")]
    Version(u16),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("truncated payload: header implies {expected} bytes, file has {actual}")]
    TruncatedPayload { expected: usize, actual: usize },
    #[error("header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("label {label} not below the declared class count {classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("line {line}: {message}")]
    Text { line: usize, message: String },
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    let io_err = |source| FormatError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

fn check_magic(bytes: &[u8], magic: &'static str) -> Result<(), FormatError> {
    if bytes.len() < 4 || &bytes[..4] != magic.as_bytes() {
        return Err(FormatError::BadMagic {
            expected: magic,
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    Ok(())
}

/// Fails unless `bytes` holds exactly `expected` bytes.
fn check_len(bytes: &[u8], expected: usize) -> Result<(), FormatError> {
    match bytes.len() {
        n if n < expected => Err(FormatError::TruncatedPayload { expected, actual: n }),
        n if n > expected => Err(FormatError::HeaderMismatch(format!(
            "{} bytes beyond the {expected} the header declares",
            n - expected
        ))),
        _ => Ok(()),
    }
}

fn short_header(e: io::Error) -> FormatError {
    FormatError::CorruptHeader(format!("header ends early: {e}"))
}

/// Config hash embedded in any artifact this crate writes, if it has one.
pub fn embedded_hash(path: &Path) -> Result<Option<ConfigHash>, FormatError> {
    let bytes = read_file(path)?;
    match bytes.get(..4) {
        Some(b"ODIM") => Ok(odim::parse(&bytes, "")?.config_hash),
        Some(b"ODMP") => Ok(Some(odmp::parse(&bytes)?.1)),
        Some(b"ODDS") => Ok(Some(odds::parse(&bytes)?.config_hash)),
        Some([b'{', ..]) => Ok(json_hash(&bytes)),
        _ => text::header_hash(&String::from_utf8_lossy(&bytes)),
    }
}

/// `config_hash` field of a JSON document.
fn json_hash(bytes: &[u8]) -> Option<ConfigHash> {
    let v: serde_json::Value = serde_json::from_slice(bytes).ok()?;
    let mut h = [0u8; 32];
    hex::decode_to_slice(v.get("config_hash")?.as_str()?, &mut h).ok()?;
    Some(h)
}
