//! ODIM image datasets.
//!
//! ```text
//! "ODIM" version:u16 flags:u16 m:u16 N:u32 H:u16 W:u16 C:u8
//! pixels:u8[N*H*W*C]  labels:u16[N] (if flags & 1)  hash:[u8; 32] (if flags & 2)
//! ```
//!
//! Pixels are stored as `round(255 v)` and loaded as `k / 255`, so data
//! already quantized to 1/255 steps round-trips exactly.

use std::io::Cursor;
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use omnidistill_core::data::{ImageShape, LabeledDataset, UnlabeledPool};

use super::{check_len, check_magic, read_file, short_header, write_atomic, ConfigHash, FormatError};

const VERSION: u16 = 1;
const LABELED: u16 = 1;
const HASHED: u16 = 2;
const HEADER: usize = 4 + 2 + 2 + 2 + 4 + 2 + 2 + 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Labeled(LabeledDataset),
    Unlabeled(UnlabeledPool),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdimFile {
    pub data: Dataset,
    pub config_hash: Option<ConfigHash>,
}

pub fn quantize(v: f32) -> u8 {
    (v as f64 * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn dequantize(k: u8) -> f32 {
    (k as f64 / 255.0) as f32
}

fn encode(
    shape: ImageShape,
    num_classes: usize,
    pixels: &[f32],
    labels: Option<&[usize]>,
    hash: Option<&ConfigHash>,
) -> Result<Vec<u8>, FormatError> {
    let n = pixels.len() / shape.len().max(1);
    let too_big = |what: &str| FormatError::CorruptHeader(format!("{what} does not fit the header field"));
    let mut flags = 0;
    if labels.is_some() {
        flags |= LABELED;
    }
    if hash.is_some() {
        flags |= HASHED;
    }
    let mut out = Vec::with_capacity(HEADER + pixels.len() + 2 * n + 32);
    out.extend_from_slice(b"ODIM");
    out.write_u16::<LE>(VERSION).unwrap();
    out.write_u16::<LE>(flags).unwrap();
    out.write_u16::<LE>(u16::try_from(num_classes).map_err(|_| too_big("class count"))?).unwrap();
    out.write_u32::<LE>(u32::try_from(n).map_err(|_| too_big("image count"))?).unwrap();
    out.write_u16::<LE>(u16::try_from(shape.height).map_err(|_| too_big("height"))?).unwrap();
    out.write_u16::<LE>(u16::try_from(shape.width).map_err(|_| too_big("width"))?).unwrap();
    out.write_u8(u8::try_from(shape.channels).map_err(|_| too_big("channels"))?).unwrap();
    out.extend(pixels.iter().map(|&v| quantize(v)));
    if let Some(labels) = labels {
        for &l in labels {
            out.write_u16::<LE>(l as u16).unwrap();
        }
    }
    if let Some(h) = hash {
        out.extend_from_slice(h);
    }
    Ok(out)
}

pub(crate) fn parse(bytes: &[u8], name: &str) -> Result<OdimFile, FormatError> {
    check_magic(bytes, "ODIM")?;
    let mut cur = Cursor::new(&bytes[4..]);
    let version = cur.read_u16::<LE>().map_err(short_header)?;
    if version != VERSION {
        return Err(FormatError::Version(version));
    }
    let flags = cur.read_u16::<LE>().map_err(short_header)?;
    if flags & !(LABELED | HASHED) != 0 {
        return Err(FormatError::CorruptHeader(format!("unknown flag bits {flags:#06x}")));
    }
    let m = cur.read_u16::<LE>().map_err(short_header)? as usize;
    let n = cur.read_u32::<LE>().map_err(short_header)? as usize;
    let h = cur.read_u16::<LE>().map_err(short_header)? as usize;
    let w = cur.read_u16::<LE>().map_err(short_header)? as usize;
    let c = cur.read_u8().map_err(short_header)? as usize;
    if h == 0 || w == 0 || c == 0 {
        return Err(FormatError::CorruptHeader(format!("empty image shape {h}x{w}x{c}")));
    }
    let labeled = flags & LABELED != 0;
    if labeled && m == 0 {
        return Err(FormatError::CorruptHeader("labeled file declares zero classes".into()));
    }
    let shape = ImageShape::new(h, w, c);
    let pixel_bytes = n * shape.len();
    let label_bytes = if labeled { 2 * n } else { 0 };
    let hash_bytes = if flags & HASHED != 0 { 32 } else { 0 };
    check_len(bytes, HEADER + pixel_bytes + label_bytes + hash_bytes)?;

    let pixels: Vec<f32> = bytes[HEADER..HEADER + pixel_bytes].iter().map(|&k| dequantize(k)).collect();
    let mut rest = Cursor::new(&bytes[HEADER + pixel_bytes..]);
    let data = if labeled {
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let l = rest.read_u16::<LE>().expect("length checked") as usize;
            if l >= m {
                return Err(FormatError::LabelOutOfRange { label: l, classes: m });
            }
            labels.push(l);
        }
        Dataset::Labeled(LabeledDataset::new(name, shape, m, pixels, labels).expect("validated labels"))
    } else {
        Dataset::Unlabeled(UnlabeledPool::new(name, shape, pixels).expect("validated shape"))
    };
    let config_hash = (hash_bytes > 0).then(|| {
        let mut hsh = [0u8; 32];
        hsh.copy_from_slice(&bytes[bytes.len() - 32..]);
        hsh
    });
    Ok(OdimFile { data, config_hash })
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn read_dataset(path: &Path) -> Result<OdimFile, FormatError> {
    parse(&read_file(path)?, &stem(path))
}

pub fn read_labeled(path: &Path) -> Result<LabeledDataset, FormatError> {
    match read_dataset(path)?.data {
        Dataset::Labeled(d) => Ok(d),
        Dataset::Unlabeled(_) => Err(FormatError::HeaderMismatch(format!(
            "{} holds no labels",
            path.display()
        ))),
    }
}

/// Reads a pool. A labeled file is accepted and its labels dropped.
pub fn read_pool(path: &Path) -> Result<UnlabeledPool, FormatError> {
    match read_dataset(path)?.data {
        Dataset::Unlabeled(p) => Ok(p),
        Dataset::Labeled(d) => Ok(UnlabeledPool::new(&d.name, d.shape(), d.pixels().to_vec()).expect("valid shape")),
    }
}

pub fn encode_labeled(data: &LabeledDataset, hash: Option<&ConfigHash>) -> Result<Vec<u8>, FormatError> {
    encode(data.shape(), data.num_classes(), data.pixels(), Some(data.labels()), hash)
}

pub fn encode_pool(pool: &UnlabeledPool, num_classes: usize, hash: Option<&ConfigHash>) -> Result<Vec<u8>, FormatError> {
    encode(pool.shape(), num_classes, pool.pixels(), None, hash)
}

pub fn write_labeled(path: &Path, data: &LabeledDataset, hash: Option<&ConfigHash>) -> Result<(), FormatError> {
    write_atomic(path, &encode_labeled(data, hash)?)
}

/// `num_classes` is informational for pools; it records the class count of
/// the generating process.
pub fn write_pool(
    path: &Path,
    pool: &UnlabeledPool,
    num_classes: usize,
    hash: Option<&ConfigHash>,
) -> Result<(), FormatError> {
    write_atomic(path, &encode_pool(pool, num_classes, hash)?)
}
