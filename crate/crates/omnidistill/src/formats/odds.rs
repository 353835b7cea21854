//! ODDS distilled sets.
//!
//! ```text
//! "ODDS" version:u16 n:u32 H:u16 W:u16 C:u8 m:u16
//! labels:u16[n] pixels:f32[n*H*W*C] log_eta:f64 hash:[u8; 32] iteration:u64
//! ```

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use omnidistill_core::distill::DistilledSet;
use omnidistill_core::Tensor;

use super::{check_len, check_magic, read_file, short_header, write_atomic, FormatError};

const VERSION: u16 = 1;
const HEADER: usize = 4 + 2 + 4 + 2 + 2 + 1 + 2;

pub fn encode(set: &DistilledSet<f32>) -> Result<Vec<u8>, FormatError> {
    let s = set.shape();
    let n = set.len();
    let bad = |what: &str| FormatError::CorruptHeader(format!("{what} does not fit the header field"));
    let mut out = Vec::with_capacity(HEADER + 2 * n + 4 * set.images.len() + 48);
    out.extend_from_slice(b"ODDS");
    out.write_u16::<LE>(VERSION).unwrap();
    out.write_u32::<LE>(u32::try_from(n).map_err(|_| bad("image count"))?).unwrap();
    out.write_u16::<LE>(u16::try_from(s.height).map_err(|_| bad("height"))?).unwrap();
    out.write_u16::<LE>(u16::try_from(s.width).map_err(|_| bad("width"))?).unwrap();
    out.write_u8(u8::try_from(s.channels).map_err(|_| bad("channels"))?).unwrap();
    out.write_u16::<LE>(u16::try_from(set.num_classes).map_err(|_| bad("class count"))?).unwrap();
    for &l in &set.labels {
        out.write_u16::<LE>(l as u16).unwrap();
    }
    for &v in set.images.data() {
        out.write_f32::<LE>(v).unwrap();
    }
    out.write_f64::<LE>(set.log_eta).unwrap();
    out.extend_from_slice(&set.config_hash);
    out.write_u64::<LE>(set.iteration).unwrap();
    Ok(out)
}

pub(crate) fn parse(bytes: &[u8]) -> Result<DistilledSet<f32>, FormatError> {
    check_magic(bytes, "ODDS")?;
    let mut cur = Cursor::new(&bytes[4..]);
    let version = cur.read_u16::<LE>().map_err(short_header)?;
    if version != VERSION {
        return Err(FormatError::Version(version));
    }
    let n = cur.read_u32::<LE>().map_err(short_header)? as usize;
    let h = cur.read_u16::<LE>().map_err(short_header)? as usize;
    let w = cur.read_u16::<LE>().map_err(short_header)? as usize;
    let c = cur.read_u8().map_err(short_header)? as usize;
    let m = cur.read_u16::<LE>().map_err(short_header)? as usize;
    if n == 0 || h == 0 || w == 0 || c == 0 || m == 0 {
        return Err(FormatError::CorruptHeader(format!("degenerate header n={n} shape={h}x{w}x{c} m={m}")));
    }
    let len = n * h * w * c;
    check_len(bytes, HEADER + 2 * n + 4 * len + 8 + 32 + 8)?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let l = cur.read_u16::<LE>().expect("length checked") as usize;
        if l >= m {
            return Err(FormatError::LabelOutOfRange { label: l, classes: m });
        }
        labels.push(l);
    }
    let mut data = vec![0f32; len];
    cur.read_f32_into::<LE>(&mut data).expect("length checked");
    let log_eta = cur.read_f64::<LE>().expect("length checked");
    let mut config_hash = [0u8; 32];
    cur.read_exact(&mut config_hash).expect("length checked");
    let iteration = cur.read_u64::<LE>().expect("length checked");
    Ok(DistilledSet {
        images: Tensor::new(&[n, h, w, c], data).expect("declared shape"),
        labels,
        num_classes: m,
        log_eta,
        config_hash,
        iteration,
    })
}

pub fn read_distilled(path: &Path) -> Result<DistilledSet<f32>, FormatError> {
    parse(&read_file(path)?)
}

pub fn write_distilled(path: &Path, set: &DistilledSet<f32>) -> Result<(), FormatError> {
    write_atomic(path, &encode(set)?)
}
