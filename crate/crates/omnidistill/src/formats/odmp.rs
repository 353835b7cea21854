//! ODMP checkpoints.
//!
//! ```text
//! "ODMP" version:u16
//! kind:u8 (0 mlp, 1 tiny-conv) H:u16 W:u16 C:u8 m:u16 D:u32
//! hidden_count:u16 hidden:u32[hidden_count] filters:u32 kernel:u16
//! params:f32[..] (every tensor in declaration order)  hash:[u8; 32]
//! ```

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use omnidistill_core::data::ImageShape;
use omnidistill_core::model::{ArchKind, Architecture, ModelParams};
use omnidistill_core::Tensor;

use super::{check_len, check_magic, read_file, short_header, write_atomic, ConfigHash, FormatError};

const VERSION: u16 = 1;

fn fits<T: TryFrom<usize>>(v: usize, what: &str) -> Result<T, FormatError> {
    T::try_from(v).map_err(|_| FormatError::CorruptHeader(format!("{what} {v} does not fit the header field")))
}

pub fn encode(params: &ModelParams<f32>, hash: &ConfigHash) -> Result<Vec<u8>, FormatError> {
    let arch = params.arch();
    let mut out = Vec::with_capacity(64 + 4 * arch.num_params());
    out.extend_from_slice(b"ODMP");
    out.write_u16::<LE>(VERSION).unwrap();
    let (kind, filters, kernel) = match arch.kind {
        ArchKind::Mlp => (0u8, 0, 0),
        ArchKind::TinyConv { filters, kernel } => (1u8, filters, kernel),
    };
    out.write_u8(kind).unwrap();
    out.write_u16::<LE>(fits(arch.input.height, "height")?).unwrap();
    out.write_u16::<LE>(fits(arch.input.width, "width")?).unwrap();
    out.write_u8(fits(arch.input.channels, "channels")?).unwrap();
    out.write_u16::<LE>(fits(arch.num_classes, "class count")?).unwrap();
    out.write_u32::<LE>(fits(arch.feature_dim, "feature dimension")?).unwrap();
    out.write_u16::<LE>(fits(arch.hidden_widths.len(), "hidden layer count")?).unwrap();
    for &w in &arch.hidden_widths {
        out.write_u32::<LE>(fits(w, "hidden width")?).unwrap();
    }
    out.write_u32::<LE>(fits(filters, "filter count")?).unwrap();
    out.write_u16::<LE>(fits(kernel, "kernel size")?).unwrap();
    for t in params.tensors() {
        for &v in t.data() {
            out.write_f32::<LE>(v).unwrap();
        }
    }
    out.extend_from_slice(hash);
    Ok(out)
}

pub(crate) fn parse(bytes: &[u8]) -> Result<(ModelParams<f32>, ConfigHash), FormatError> {
    check_magic(bytes, "ODMP")?;
    let mut cur = Cursor::new(&bytes[4..]);
    let version = cur.read_u16::<LE>().map_err(short_header)?;
    if version != VERSION {
        return Err(FormatError::Version(version));
    }
    let kind = cur.read_u8().map_err(short_header)?;
    let h = cur.read_u16::<LE>().map_err(short_header)? as usize;
    let w = cur.read_u16::<LE>().map_err(short_header)? as usize;
    let c = cur.read_u8().map_err(short_header)? as usize;
    let m = cur.read_u16::<LE>().map_err(short_header)? as usize;
    let d = cur.read_u32::<LE>().map_err(short_header)? as usize;
    let nh = cur.read_u16::<LE>().map_err(short_header)? as usize;
    let mut hidden = Vec::with_capacity(nh);
    for _ in 0..nh {
        hidden.push(cur.read_u32::<LE>().map_err(short_header)? as usize);
    }
    let filters = cur.read_u32::<LE>().map_err(short_header)? as usize;
    let kernel = cur.read_u16::<LE>().map_err(short_header)? as usize;
    let kind = match kind {
        0 => ArchKind::Mlp,
        1 => ArchKind::TinyConv { filters, kernel },
        k => return Err(FormatError::CorruptHeader(format!("unknown architecture kind {k}"))),
    };
    let arch = Architecture {
        kind,
        input: ImageShape::new(h, w, c),
        hidden_widths: hidden,
        feature_dim: d,
        num_classes: m,
    };
    arch.validate()
        .map_err(|e| FormatError::CorruptHeader(format!("architecture descriptor: {e}")))?;
    let header = 4 + cur.position() as usize;
    check_len(bytes, header + 4 * arch.num_params() + 32)?;

    let mut tensors = Vec::new();
    for shape in arch.param_shapes() {
        let len = shape.iter().product();
        let mut data = vec![0f32; len];
        cur.read_f32_into::<LE>(&mut data).expect("length checked");
        tensors.push(Tensor::new(&shape, data).expect("declared shape"));
    }
    let mut hash = [0u8; 32];
    cur.read_exact(&mut hash).expect("length checked");
    let params = ModelParams::new(arch, tensors).expect("shapes follow the architecture");
    Ok((params, hash))
}

pub fn read_checkpoint(path: &Path) -> Result<(ModelParams<f32>, ConfigHash), FormatError> {
    parse(&read_file(path)?)
}

pub fn write_checkpoint(path: &Path, params: &ModelParams<f32>, hash: &ConfigHash) -> Result<(), FormatError> {
    write_atomic(path, &encode(params, hash)?)
}
