//! Accuracy reports, the three-condition comparison with per-epoch cost,
//! and the distilled-pattern probe.
//!
//! Timing needs a monotonic clock, which `no_std` code cannot read; callers
//! pass one in as a closure returning seconds.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{split, LabeledDataset};
use crate::distill::DistilledSet;
use crate::error::{EvalError, ModelError};
use crate::model::{init_params, predict, Architecture, ModelParams, TrainConfig, Trainer};
use crate::selection::median_sorted;
use crate::tensor::Real;


#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` for classes absent from the dataset.
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub count: usize,
    /// Wall-clock seconds, filled in by callers that time the evaluation.
    pub seconds: f64,
}

/// Builds a report from predicted and true labels.
pub fn report_from_predictions(predicted: &[usize], labels: &[usize], num_classes: usize) -> EvalReport {
    let mut confusion = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in predicted.iter().zip(labels) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..num_classes).map(|k| confusion[k][k]).sum();
    let count = labels.len();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(k, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| row[k] as f64 / total as f64)
        })
        .collect();
    EvalReport {
        accuracy: if count == 0 { 0.0 } else { correct as f64 / count as f64 },
        per_class_accuracy,
        confusion,
        count,
        seconds: 0.0,
    }
}

/// Argmax accuracy and confusion matrix of `params` on `data`. Ties in the
/// argmax go to the lowest class index.
pub fn evaluate<S: Real>(params: &ModelParams<S>, data: &LabeledDataset) -> Result<EvalReport, EvalError> {
    let m = params.arch().num_classes;
    if data.num_classes() != m {
        return Err(EvalError::ClassCount {
            model: m,
            dataset: data.num_classes(),
        });
    }
    let predicted = predict(params, data, 512)?;
    Ok(report_from_predictions(&predicted, data.labels(), m))
}

/// Training-set composition being compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    /// Anchor data only.
    Baseline,
    /// Anchor plus the selected auxiliary samples.
    Vas,
    /// Anchor plus the distilled images.
    Das,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Baseline, Condition::Vas, Condition::Das];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::Vas => "vas",
            Condition::Das => "das",
        }
    }
}

/// One epoch of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub condition: Condition,
    pub seed: u64,
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub seconds: f64,
}

/// Final test result of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionRun {
    pub condition: Condition,
    pub seed: u64,
    pub accuracy: f64,
    pub median_seconds_per_epoch: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub mean_accuracy: f64,
    /// Sample standard deviation over seeds.
    pub sd_accuracy: f64,
    pub median_seconds_per_epoch: f64,
    pub dataset_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    /// Median over every timed epoch of every seed, per condition in
    /// [`Condition::ALL`] order.
    pub seconds_per_epoch: [f64; 3],
    pub dataset_sizes: [usize; 3],
}

impl CostReport {
    pub fn seconds(&self, c: Condition) -> f64 {
        self.seconds_per_epoch[c as usize]
    }

    pub fn size(&self, c: Condition) -> usize {
        self.dataset_sizes[c as usize]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub runs: Vec<ConditionRun>,
    pub epochs: Vec<EpochRecord>,
    pub summary: Vec<ConditionSummary>,
    pub cost: CostReport,
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    median_sorted(&v).unwrap_or(0.0)
}

/// Trains a fresh learner per seed under each condition and evaluates it on
/// `test`.
///
/// For a given seed all three runs start from the same initialisation and
/// use the same shuffle seed. Their epochs are interleaved (baseline, VAS,
/// DAS, baseline, ...) so slow drifts in machine speed affect all three
/// alike. Each epoch is timed with `clock`, which must return monotonic
/// seconds.
#[allow(clippy::too_many_arguments)]
pub fn compare_conditions(
    anchor: &LabeledDataset,
    aux_vanilla: &LabeledDataset,
    distilled: &LabeledDataset,
    test: &LabeledDataset,
    arch: &Architecture,
    cfg: &TrainConfig,
    seeds: &[u64],
    mut clock: impl FnMut() -> f64,
) -> Result<Comparison, EvalError> {
    if seeds.len() < 3 {
        return Err(EvalError::Invalid(format!("need at least 3 seeds, got {}", seeds.len())));
    }
    if test.num_classes() != arch.num_classes {
        return Err(EvalError::ClassCount {
            model: arch.num_classes,
            dataset: test.num_classes(),
        });
    }
    let sets = [
        anchor.clone(),
        anchor.concat(aux_vanilla)?,
        anchor.concat(distilled)?,
    ];
    let fail = |c: Condition| move |source: ModelError| EvalError::Condition {
        condition: c.name(),
        source,
    };

    let mut runs = Vec::new();
    let mut epochs = Vec::new();
    let mut timings: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for &seed in seeds {
        let run_cfg = TrainConfig { seed, ..cfg.clone() };
        let init = init_params::<f32>(arch, seed).map_err(fail(Condition::Baseline))?;
        let mut trainers = Vec::with_capacity(3);
        for (c, set) in Condition::ALL.iter().zip(&sets) {
            trainers.push(Trainer::new(init.clone(), set, &run_cfg).map_err(fail(*c))?);
        }
        let mut run_times: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for epoch in 0..cfg.epochs {
            for (i, trainer) in trainers.iter_mut().enumerate() {
                let c = Condition::ALL[i];
                let start = clock();
                let loss = trainer.run_epoch().map_err(fail(c))?;
                let seconds = clock() - start;
                let accuracy = evaluate(trainer.params(), test)
                    .map_err(|e| match e {
                        EvalError::Model(source) => fail(c)(source),
                        other => other,
                    })?
                    .accuracy;
                run_times[i].push(seconds);
                epochs.push(EpochRecord {
                    condition: c,
                    seed,
                    epoch,
                    loss,
                    accuracy,
                    seconds,
                });
            }
        }
        for (i, trainer) in trainers.iter().enumerate() {
            let c = Condition::ALL[i];
            let accuracy = evaluate(trainer.params(), test)?.accuracy;
            runs.push(ConditionRun {
                condition: c,
                seed,
                accuracy,
                median_seconds_per_epoch: median(&run_times[i]),
            });
            timings[i].extend_from_slice(&run_times[i]);
        }
    }

    let seconds_per_epoch = [median(&timings[0]), median(&timings[1]), median(&timings[2])];
    let dataset_sizes = [sets[0].len(), sets[1].len(), sets[2].len()];
    let summary = Condition::ALL
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let acc: Vec<f64> = runs.iter().filter(|r| r.condition == c).map(|r| r.accuracy).collect();
            let (mean_accuracy, sd_accuracy) = mean_sd(&acc);
            ConditionSummary {
                condition: c,
                mean_accuracy,
                sd_accuracy,
                median_seconds_per_epoch: seconds_per_epoch[i],
                dataset_size: dataset_sizes[i],
            }
        })
        .collect();
    Ok(Comparison {
        runs,
        epochs,
        summary,
        cost: CostReport {
            seconds_per_epoch,
            dataset_sizes,
        },
    })
}

/// Learning curve of the pattern probe.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub train_size: usize,
    pub test_size: usize,
    /// Held-out accuracy after each epoch.
    pub test_accuracy: Vec<f64>,
    pub train_loss: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

impl ProbeResult {
    pub fn final_accuracy(&self) -> f64 {
        self.test_accuracy.last().copied().unwrap_or(0.0)
    }
}

/// Pools all snapshot images with their labels, splits them 5:1 and trains
/// a fresh probe classifier, recording held-out accuracy per epoch.
pub fn pattern_probe(
    snapshots: &[DistilledSet<f32>],
    probe_arch: &Architecture,
    cfg: &TrainConfig,
) -> Result<ProbeResult, EvalError> {
    pattern_probe_timed(snapshots, probe_arch, cfg, || 0.0)
}

/// [`pattern_probe`] timing each training epoch with `clock`.
pub fn pattern_probe_timed(
    snapshots: &[DistilledSet<f32>],
    probe_arch: &Architecture,
    cfg: &TrainConfig,
    mut clock: impl FnMut() -> f64,
) -> Result<ProbeResult, EvalError> {
    let first = snapshots
        .first()
        .ok_or_else(|| EvalError::Invalid("no snapshots to probe".into()))?;
    if snapshots
        .iter()
        .any(|s| s.labels != first.labels || s.images.shape() != first.images.shape())
    {
        return Err(EvalError::SnapshotMismatch);
    }
    let mut pooled = first.to_dataset();
    for s in &snapshots[1..] {
        pooled = pooled.concat(&s.to_dataset())?;
    }
    pooled.name = "snapshots".into();
    let m = first.num_classes;
    let (train, test) = split(&pooled, (5, 1), cfg.seed)?;
    if test.len() < m {
        return Err(EvalError::ProbeTooSmall {
            needed: m,
            got: test.len(),
        });
    }
    if probe_arch.num_classes != m {
        return Err(EvalError::ClassCount {
            model: probe_arch.num_classes,
            dataset: m,
        });
    }
    let init = init_params::<f32>(probe_arch, cfg.seed)?;
    let mut trainer = Trainer::new(init, &train, cfg)?;
    let mut result = ProbeResult {
        train_size: train.len(),
        test_size: test.len(),
        test_accuracy: Vec::with_capacity(cfg.epochs),
        train_loss: Vec::with_capacity(cfg.epochs),
        epoch_seconds: Vec::with_capacity(cfg.epochs),
    };
    for _ in 0..cfg.epochs {
        let start = clock();
        let loss = trainer.run_epoch()?;
        result.epoch_seconds.push(clock() - start);
        result.train_loss.push(loss);
        result.test_accuracy.push(evaluate(trainer.params(), &test)?.accuracy);
    }
    Ok(result)
}
