//! Synthetic dataset specs as flat `key = value` text.
//!
//! ```text
//! # comments and blank lines are ignored
//! kind = gaussian-blobs        # or bars-and-stripes, shifted-domain
//! classes = 3
//! per_class = 200
//! height = 8
//! width = 8
//! channels = 1
//! pixel_noise = 0.1
//! jitter = 0.5
//! brightness = 0.0
//! shift_noise = 0.0
//! rotation = 0.0
//! pool_size = 0
//! seed = 0
//! ```

use std::str::FromStr;

use omnidistill_core::data::{GeneratorKind, SyntheticSpec};
use serde_json::json;

use crate::config::hash_json;
use crate::error::Error;
use crate::formats::ConfigHash;

fn kind_name(k: GeneratorKind) -> &'static str {
    match k {
        GeneratorKind::GaussianBlobs => "gaussian-blobs",
        GeneratorKind::BarsAndStripes => "bars-and-stripes",
        GeneratorKind::ShiftedDomain => "shifted-domain",
    }
}

fn value<T: FromStr>(key: &str, v: &str, line: usize) -> Result<T, Error>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| Error::Input(format!("synthetic spec line {line}: `{key}`: {e}")))
}

pub fn parse_spec(text: &str) -> Result<SyntheticSpec, Error> {
    let mut spec = SyntheticSpec::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, v) = body
            .split_once('=')
            .ok_or_else(|| Error::Input(format!("synthetic spec line {line}: expected `key = value`")))?;
        let (key, v) = (key.trim(), v.trim());
        match key {
            "kind" => {
                spec.kind = match v {
                    "gaussian-blobs" => GeneratorKind::GaussianBlobs,
                    "bars-and-stripes" => GeneratorKind::BarsAndStripes,
                    "shifted-domain" => GeneratorKind::ShiftedDomain,
                    other => {
                        return Err(Error::Input(format!(
                            "synthetic spec line {line}: unknown generator `{other}`"
                        )))
                    }
                }
            }
            "classes" => spec.num_classes = value(key, v, line)?,
            "per_class" => spec.per_class = value(key, v, line)?,
            "height" => spec.shape.height = value(key, v, line)?,
            "width" => spec.shape.width = value(key, v, line)?,
            "channels" => spec.shape.channels = value(key, v, line)?,
            "pixel_noise" => spec.pixel_noise = value(key, v, line)?,
            "jitter" => spec.jitter = value(key, v, line)?,
            "brightness" => spec.shift.brightness = value(key, v, line)?,
            "shift_noise" => spec.shift.noise = value(key, v, line)?,
            "rotation" => spec.shift.rotation = value(key, v, line)?,
            "pool_size" => spec.pool_size = value(key, v, line)?,
            "seed" => spec.seed = value(key, v, line)?,
            other => return Err(Error::Input(format!("synthetic spec line {line}: unknown key `{other}`"))),
        }
    }
    Ok(spec)
}

pub fn render_spec(spec: &SyntheticSpec) -> String {
    format!(
        "kind = {}\nclasses = {}\nper_class = {}\nheight = {}\nwidth = {}\nchannels = {}\n\
         pixel_noise = {}\njitter = {}\nbrightness = {}\nshift_noise = {}\nrotation = {}\npool_size = {}\nseed = {}\n",
        kind_name(spec.kind),
        spec.num_classes,
        spec.per_class,
        spec.shape.height,
        spec.shape.width,
        spec.shape.channels,
        spec.pixel_noise,
        spec.jitter,
        spec.shift.brightness,
        spec.shift.noise,
        spec.shift.rotation,
        spec.pool_size,
        spec.seed,
    )
}

pub fn spec_hash(spec: &SyntheticSpec) -> ConfigHash {
    hash_json(&json!({
        "kind": kind_name(spec.kind),
        "classes": spec.num_classes,
        "per_class": spec.per_class,
        "shape": [spec.shape.height, spec.shape.width, spec.shape.channels],
        "pixel_noise": spec.pixel_noise,
        "jitter": spec.jitter,
        "brightness": spec.shift.brightness,
        "shift_noise": spec.shift.noise,
        "rotation": spec.shift.rotation,
        "pool_size": spec.pool_size,
        "seed": spec.seed,
    }))
}
