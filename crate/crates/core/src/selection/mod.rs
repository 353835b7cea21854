//! Pseudo-labeling of an unlabeled pool by nearest class centroid.
//!
//! Anchor features give one mean vector per class. A pool sample is scored
//! by its cosine distance `1 - cos` to every centroid and admitted with the
//! closest class only if that class beats every other one by the margin
//! `delta`. Exact ties are never admitted.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{LabeledDataset, UnlabeledPool};
use crate::error::SelectionError;
use crate::model::{ModelParams, Network};
use crate::tensor::{Real, Tensor};


/// Per-class mean feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct CentroidSet<S = f32> {
    centers: Tensor<S>,
    counts: Vec<usize>,
}

impl<S: Real> CentroidSet<S> {
    /// `[m, D]`, row `k` is the centroid of class `k`.
    pub fn centers(&self) -> &Tensor<S> {
        &self.centers
    }

    pub fn center(&self, k: usize) -> &[S] {
        self.centers.row(k)
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn dim(&self) -> usize {
        self.centers.row_width()
    }
}

/// Mean of the feature rows of each class. Rows are summed in input order
/// and the sum is divided by the class count.
pub fn compute_centroids<S: Real>(
    features: &Tensor<S>,
    labels: &[usize],
    num_classes: usize,
) -> Result<CentroidSet<S>, SelectionError> {
    if features.rank() != 2 || features.shape()[0] != labels.len() {
        return Err(SelectionError::Invalid(format!(
            "{} labels for features of shape {:?}",
            labels.len(),
            features.shape()
        )));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(SelectionError::Invalid(format!("label {l} out of range for {num_classes} classes")));
    }
    let d = features.shape()[1];
    let mut sums = vec![S::zero(); num_classes * d];
    let mut counts = vec![0usize; num_classes];
    for (i, &label) in labels.iter().enumerate() {
        counts[label] += 1;
        for (s, &v) in sums[label * d..(label + 1) * d].iter_mut().zip(features.row(i)) {
            *s = *s + v;
        }
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(SelectionError::EmptyClass(k));
    }
    for (row, &c) in sums.chunks_mut(d).zip(&counts) {
        let n = S::from_usize(c);
        row.iter_mut().for_each(|v| *v = *v / n);
    }
    Ok(CentroidSet {
        centers: Tensor::new(&[num_classes, d], sums).expect("centroid shape"),
        counts,
    })
}

/// `1 - a·b / (|a| |b|)`, in `[0, 2]`, computed in 64-bit.
pub fn cosine_distance<S: Real>(a: &[S], b: &[S]) -> Result<f64, SelectionError> {
    if a.len() != b.len() {
        return Err(SelectionError::Dimension {
            features: a.len(),
            centers: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(SelectionError::ZeroVector);
    }
    let cos = dot / (libm::sqrt(na) * libm::sqrt(nb));
    Ok((1.0 - cos).clamp(0.0, 2.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionConfig {
    /// Margin by which the closest centroid must beat every other one.
    pub delta: f64,
    /// Keep at most this many samples per class, smallest distance first.
    pub per_class_cap: Option<usize>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            delta: 0.05,
            per_class_cap: None,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<(), SelectionError> {
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(SelectionError::Invalid(format!("delta must be finite and >= 0, got {}", self.delta)));
        }
        if self.per_class_cap == Some(0) {
            return Err(SelectionError::Invalid("per-class cap must be positive".into()));
        }
        Ok(())
    }
}

/// One admitted pool sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Admission {
    pub source_id: u32,
    pub label: usize,
    /// Cosine distance to the assigned centroid.
    pub distance: f64,
}

/// Cosine distance from `feature` to every centroid, or `None` for a zero
/// feature vector (which has no direction and is never admitted).
pub fn centroid_distances<S: Real>(feature: &[S], centers: &CentroidSet<S>) -> Result<Option<Vec<f64>>, SelectionError> {
    if feature.len() != centers.dim() {
        return Err(SelectionError::Dimension {
            features: feature.len(),
            centers: centers.dim(),
        });
    }
    if feature.iter().all(|v| *v == S::zero()) {
        return Ok(None);
    }
    (0..centers.num_classes())
        .map(|k| cosine_distance(feature, centers.center(k)))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

/// The margin rule on one distance vector: the closest class `k̂` is
/// returned iff `d[k̂] <= d[k] - delta` and `d[k̂] < d[k]` for all `k != k̂`.
pub fn admit(distances: &[f64], delta: f64) -> Option<usize> {
    let best = (0..distances.len()).min_by(|&a, &b| distances[a].total_cmp(&distances[b]))?;
    let d = distances[best];
    let clear = distances
        .iter()
        .enumerate()
        .all(|(k, &dk)| k == best || (d < dk && d <= dk - delta));
    clear.then_some(best)
}

/// Applies the margin rule to precomputed pool features (`[P, D]`, row `i`
/// belonging to `source_ids[i]`). The result is ordered by source id.
pub fn select_from_features<S: Real>(
    features: &Tensor<S>,
    source_ids: &[u32],
    centers: &CentroidSet<S>,
    cfg: &SelectionConfig,
) -> Result<Vec<Admission>, SelectionError> {
    cfg.validate()?;
    if features.rank() != 2 || features.shape()[0] != source_ids.len() {
        return Err(SelectionError::Invalid(format!(
            "{} source ids for features of shape {:?}",
            source_ids.len(),
            features.shape()
        )));
    }
    if features.shape()[1] != centers.dim() {
        return Err(SelectionError::Dimension {
            features: features.shape()[1],
            centers: centers.dim(),
        });
    }
    for k in 0..centers.num_classes() {
        if centers.center(k).iter().all(|v| *v == S::zero()) {
            return Err(SelectionError::ZeroVector);
        }
    }
    let mut admitted = Vec::new();
    for (i, &source_id) in source_ids.iter().enumerate() {
        let Some(d) = centroid_distances(features.row(i), centers)? else {
            continue;
        };
        if let Some(label) = admit(&d, cfg.delta) {
            admitted.push(Admission {
                source_id,
                label,
                distance: d[label],
            });
        }
    }
    if let Some(cap) = cfg.per_class_cap {
        let mut keep = vec![false; admitted.len()];
        for k in 0..centers.num_classes() {
            for i in sorted_class_members(&admitted, k).into_iter().take(cap) {
                keep[i] = true;
            }
        }
        let mut flags = keep.into_iter();
        admitted.retain(|_| flags.next().unwrap_or(false));
    }
    admitted.sort_by_key(|a| a.source_id);
    Ok(admitted)
}

/// Indices into `admitted` of class `k`, by ascending distance (ties by
/// source id).
fn sorted_class_members(admitted: &[Admission], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..admitted.len()).filter(|&i| admitted[i].label == k).collect();
    idx.sort_by(|&a, &b| {
        admitted[a]
            .distance
            .total_cmp(&admitted[b].distance)
            .then(admitted[a].source_id.cmp(&admitted[b].source_id))
    });
    idx
}

/// Features of every pool image, computed in chunks.
pub fn pool_features<S: Real>(
    params: &ModelParams<S>,
    pool: &UnlabeledPool,
    chunk: usize,
) -> Result<Tensor<S>, SelectionError> {
    let mut net = Network::new(params.arch())?;
    let d = params.arch().feature_dim;
    let mut data = Vec::with_capacity(pool.len() * d);
    let idx: Vec<usize> = (0..pool.len()).collect();
    for part in idx.chunks(chunk.max(1)) {
        data.extend_from_slice(net.features(params, &pool.batch(part))?.data());
    }
    Ok(Tensor::new(&[pool.len(), d], data).expect("feature shape"))
}

/// Features of every image of a labeled dataset, computed in chunks.
pub fn dataset_features<S: Real>(
    params: &ModelParams<S>,
    data: &LabeledDataset,
    chunk: usize,
) -> Result<Tensor<S>, SelectionError> {
    let mut net = Network::new(params.arch())?;
    let d = params.arch().feature_dim;
    let mut out = Vec::with_capacity(data.len() * d);
    let idx: Vec<usize> = (0..data.len()).collect();
    for part in idx.chunks(chunk.max(1)) {
        out.extend_from_slice(net.features(params, &data.batch(part))?.data());
    }
    Ok(Tensor::new(&[data.len(), d], out).expect("feature shape"))
}

/// Pool samples admitted by the margin rule, with their pseudo-labels.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxiliaryDataset {
    pub images: LabeledDataset,
    pub distances: Vec<f64>,
    pub source_ids: Vec<u32>,
}

impl AuxiliaryDataset {
    /// Attaches admissions to the pool images they refer to.
    pub fn from_admissions(
        pool: &UnlabeledPool,
        admitted: &[Admission],
        num_classes: usize,
    ) -> Result<Self, SelectionError> {
        let source_ids: Vec<u32> = admitted.iter().map(|a| a.source_id).collect();
        let labels: Vec<usize> = admitted.iter().map(|a| a.label).collect();
        let images = pool
            .labeled(&source_ids, &labels, num_classes)
            .map_err(|e| SelectionError::Invalid(format!("{e}")))?;
        Ok(AuxiliaryDataset {
            images,
            distances: admitted.iter().map(|a| a.distance).collect(),
            source_ids,
        })
    }

    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.images.num_classes()
    }

    pub fn pseudo_labels(&self) -> &[usize] {
        self.images.labels()
    }

    pub fn admissions(&self) -> Vec<Admission> {
        self.source_ids
            .iter()
            .zip(self.pseudo_labels())
            .zip(&self.distances)
            .map(|((&source_id, &label), &distance)| Admission {
                source_id,
                label,
                distance,
            })
            .collect()
    }

    /// Positions of class `k` samples, most confident (smallest distance)
    /// first.
    pub fn sorted_by_distance(&self, k: usize) -> Vec<usize> {
        sorted_class_members(&self.admissions(), k)
    }
}

/// Embeds the pool with `params` and pseudo-labels it against `centers`.
pub fn assign_pseudo_labels<S: Real>(
    pool: &UnlabeledPool,
    params: &ModelParams<S>,
    centers: &CentroidSet<S>,
    cfg: &SelectionConfig,
) -> Result<AuxiliaryDataset, SelectionError> {
    cfg.validate()?;
    if centers.dim() != params.arch().feature_dim {
        return Err(SelectionError::Dimension {
            features: params.arch().feature_dim,
            centers: centers.dim(),
        });
    }
    let features = pool_features(params, pool, 256)?;
    let admitted = select_from_features(&features, pool.source_ids(), centers, cfg)?;
    AuxiliaryDataset::from_admissions(pool, &admitted, centers.num_classes())
}

/// Distance summary of one class.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassSummary {
    pub count: usize,
    pub min: Option<f64>,
    pub median: Option<f64>,
    pub max: Option<f64>,
    /// Source ids by ascending distance.
    pub sorted_ids: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionReport {
    pub classes: Vec<ClassSummary>,
}

impl SelectionReport {
    pub fn counts(&self) -> Vec<usize> {
        self.classes.iter().map(|c| c.count).collect()
    }

    pub fn total(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum()
    }
}

/// Median of sorted values; the mean of the two middle values for even
/// counts.
pub fn median_sorted(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

pub fn selection_report(aux: &AuxiliaryDataset) -> SelectionReport {
    let admitted = aux.admissions();
    let classes = (0..aux.num_classes())
        .map(|k| {
            let order = sorted_class_members(&admitted, k);
            let dists: Vec<f64> = order.iter().map(|&i| admitted[i].distance).collect();
            ClassSummary {
                count: order.len(),
                min: dists.first().copied(),
                median: median_sorted(&dists),
                max: dists.last().copied(),
                sorted_ids: order.iter().map(|&i| admitted[i].source_id).collect(),
            }
        })
        .collect();
    SelectionReport { classes }
}
