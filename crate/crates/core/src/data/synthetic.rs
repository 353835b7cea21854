//! Class-conditional image generators for desk-scale experiments.
//!
//! A labeled anchor set and an optional unlabeled pool are drawn from the
//! same class prototypes; the pool additionally goes through a
//! [`DomainShift`] (brightness offset, extra noise, random rotation), so its
//! statistics differ from the anchor's the way a web-scraped corpus differs
//! from a curated one.

use alloc::format;
use alloc::vec::Vec;

use core::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{ImageShape, LabeledDataset, UnlabeledPool};
use crate::error::DataError;
use crate::rng::{self, stream, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeneratorKind {
    /// A mirrored pair of Gaussian bumps per class, at a class-specific
    /// height and spread.
    GaussianBlobs,
    /// A mirrored sinusoidal grating (chevron) per class, one orientation each.
    BarsAndStripes,
    /// Gaussian blobs whose labeled set is itself drawn through the domain
    /// shift; used for cross-dataset test sets.
    ShiftedDomain,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DomainShift {
    /// Added to every pixel before clipping.
    pub brightness: f64,
    /// Standard deviation of extra per-pixel Gaussian noise.
    pub noise: f64,
    /// Images are rotated by an angle drawn uniformly from `±rotation` radians.
    pub rotation: f64,
}

impl DomainShift {
    pub fn is_identity(&self) -> bool {
        self.brightness == 0.0 && self.noise == 0.0 && self.rotation == 0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub kind: GeneratorKind,
    pub num_classes: usize,
    pub per_class: usize,
    pub shape: ImageShape,
    /// Per-pixel Gaussian noise of every sample.
    pub pixel_noise: f64,
    /// Standard deviation, in pixels, of the per-sample pattern offset.
    pub jitter: f64,
    pub shift: DomainShift,
    /// Number of unlabeled pool images to draw (0 for none).
    pub pool_size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            kind: GeneratorKind::GaussianBlobs,
            num_classes: 3,
            per_class: 200,
            shape: ImageShape::new(8, 8, 1),
            pixel_noise: 0.1,
            jitter: 0.5,
            shift: DomainShift::default(),
            pool_size: 0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), DataError> {
        if self.num_classes < 2 {
            return Err(DataError::Spec(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if self.shape.height < 2 || self.shape.width < 2 || self.shape.channels == 0 {
            return Err(DataError::Spec(format!("image shape {:?} too small", self.shape.dims())));
        }
        let nonneg = [self.pixel_noise, self.jitter, self.shift.noise, self.shift.rotation];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !self.shift.brightness.is_finite() {
            return Err(DataError::Spec("noise, jitter and rotation must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Output of [`make_synthetic`].
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub labeled: LabeledDataset,
    pub pool: Option<UnlabeledPool>,
}

const CHANNEL_TINT: [f64; 3] = [1.0, 0.85, 0.7];

struct Renderer<'a> {
    spec: &'a SyntheticSpec,
}

impl Renderer<'_> {
    /// Pattern intensity in [0, 1] at centred coordinates `(u, v)`.
    ///
    /// Every class pattern is symmetric under `u -> -u`, so horizontal flip
    /// augmentation maps each class onto itself.
    fn pattern(&self, class: usize, u: f64, v: f64, offset: (f64, f64)) -> f64 {
        let s = &self.spec;
        let size = s.shape.height.min(s.shape.width) as f64;
        let m = s.num_classes as f64;
        match s.kind {
            GeneratorKind::GaussianBlobs | GeneratorKind::ShiftedDomain => {
                let phi = PI * ((class as f64 + 0.5) / m - 0.5);
                let r = 0.3 * size;
                let sigma = 0.18 * size;
                let (cx, cy) = (r * libm::cos(phi), r * libm::sin(phi) + offset.1);
                let bump = |cx: f64| {
                    let d2 = (u - cx) * (u - cx) + (v - cy) * (v - cy);
                    libm::exp(-d2 / (2.0 * sigma * sigma))
                };
                let value = bump(cx + offset.0) + bump(-cx + offset.0);
                0.15 + 0.7 * value.min(1.0)
            }
            GeneratorKind::BarsAndStripes => {
                let phi = PI * class as f64 / m;
                let period = 0.5 * size;
                let t = libm::fabs(u - offset.0) * libm::cos(phi) + (v - offset.1) * libm::sin(phi);
                0.5 + 0.35 * libm::cos(2.0 * PI * t / period)
            }
        }
    }

    fn draw(&self, class: usize, shifted: bool, rng: &mut Rng, out: &mut Vec<f32>) {
        let s = &self.spec;
        let ImageShape {
            height,
            width,
            channels,
        } = s.shape;
        let normal = |rng: &mut Rng| -> f64 { StandardNormal.sample(rng) };
        let offset = (s.jitter * normal(rng), s.jitter * normal(rng));
        let angle = if shifted && s.shift.rotation > 0.0 {
            rng.random_range(-s.shift.rotation..=s.shift.rotation)
        } else {
            0.0
        };
        let (sin, cos) = (libm::sin(angle), libm::cos(angle));
        let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
        for y in 0..height {
            for x in 0..width {
                let (u0, v0) = (x as f64 - cx, y as f64 - cy);
                // Sample the pattern at the inversely rotated coordinate.
                let u = cos * u0 + sin * v0;
                let v = -sin * u0 + cos * v0;
                let base = self.pattern(class, u, v, offset);
                for c in 0..channels {
                    let mut value = base * CHANNEL_TINT[c % CHANNEL_TINT.len()] + s.pixel_noise * normal(rng);
                    if shifted {
                        value += s.shift.brightness + s.shift.noise * normal(rng);
                    }
                    out.push(quantize(value));
                }
            }
        }
    }
}

/// Clips to [0, 1] and rounds to the nearest 8-bit level, so that images
/// survive a round trip through the u8 dataset format unchanged.
fn quantize(v: f64) -> f32 {
    let level = libm::round(v.clamp(0.0, 1.0) * 255.0);
    (level / 255.0) as f32
}

/// Draws `per_class` labeled images per class (labels interleaved
/// `0, 1, .., m-1, 0, ..`) and, if `pool_size > 0`, an unlabeled pool
/// of uniformly random classes passed through `shift`.
pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, DataError> {
    spec.validate()?;
    let renderer = Renderer { spec };
    let m = spec.num_classes;
    let n = m * spec.per_class;
    let labeled_shifted = spec.kind == GeneratorKind::ShiftedDomain;

    let mut rng = rng::derive(spec.seed, stream::SYNTH, 0);
    let mut pixels = Vec::with_capacity(n * spec.shape.len());
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % m;
        renderer.draw(class, labeled_shifted, &mut rng, &mut pixels);
        labels.push(class);
    }
    let name = match spec.kind {
        GeneratorKind::GaussianBlobs => "gaussian-blobs",
        GeneratorKind::BarsAndStripes => "bars-and-stripes",
        GeneratorKind::ShiftedDomain => "shifted-domain",
    };
    let labeled = LabeledDataset::new(name, spec.shape, m, pixels, labels)?;

    let pool = if spec.pool_size > 0 {
        let mut rng = rng::derive(spec.seed, stream::SYNTH, 1);
        let mut pixels = Vec::with_capacity(spec.pool_size * spec.shape.len());
        for _ in 0..spec.pool_size {
            let class = rng.random_range(0..m);
            renderer.draw(class, true, &mut rng, &mut pixels);
        }
        Some(UnlabeledPool::new(&format!("{name}-pool"), spec.shape, pixels)?)
    } else {
        None
    };
    Ok(SyntheticData { labeled, pool })
}
