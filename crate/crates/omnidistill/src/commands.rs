//! Pipeline stages. Each reads its inputs in full before writing anything,
//! writes whole files atomically and finishes by appending to the run log.

use std::path::{Path, PathBuf};
use std::time::Instant;

use omnidistill_core::data::{make_synthetic, LabeledDataset, SyntheticSpec, UnlabeledPool};
use omnidistill_core::distill::{distill_with, DistilledSet};
use omnidistill_core::eval::{compare_conditions, evaluate, pattern_probe_timed, Condition, EvalReport};
use omnidistill_core::model::{init_params, ModelParams, Trainer};
use omnidistill_core::selection::{
    assign_pseudo_labels, compute_centroids, dataset_features, selection_report, AuxiliaryDataset,
};
use serde_json::json;

use crate::config::{ArchSection, PipelineConfig};
use crate::error::Error;
use crate::formats::{self, ConfigHash, Manifest};
use crate::report::{append_lines, CostRecord, Record};
use crate::runlog::log_run;
use crate::synth_spec::{parse_spec, spec_hash};

/// Shared state of one invocation.
pub struct Context {
    pub workdir: PathBuf,
    pub config: PipelineConfig,
}

impl Context {
    pub fn path(&self, p: &Path) -> PathBuf {
        self.workdir.join(p)
    }

    fn announce(&self, hash: &ConfigHash) {
        eprintln!("config {}", hex::encode(hash));
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    omnidistill_core::selection::median_sorted(&v).unwrap_or(0.0)
}

/// Sibling path with `suffix` replacing the extension.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

/// `MANIFEST` or `MANIFEST+POOL`. The split is at the last `+`.
pub fn parse_aux(spec: &str, default_pool: &Path) -> (PathBuf, PathBuf) {
    match spec.rsplit_once('+') {
        Some((m, p)) if !m.is_empty() && !p.is_empty() => (m.into(), p.into()),
        _ => (spec.into(), default_pool.to_path_buf()),
    }
}

fn load_aux(ctx: &Context, manifest: &Path, pool: &Path) -> Result<(Manifest, LabeledDataset), Error> {
    let m = formats::read_manifest(&ctx.path(manifest))?;
    let pool = formats::read_pool(&ctx.path(pool))?;
    let data = pool.labeled(&m.source_ids(), &m.labels(), m.num_classes)?;
    Ok((m, data))
}

pub struct SynthArgs {
    pub spec: PathBuf,
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub pool_out: Option<PathBuf>,
}

pub fn synth(ctx: &Context, a: &SynthArgs) -> Result<(), Error> {
    let text = std::fs::read_to_string(ctx.path(&a.spec))
        .map_err(|e| Error::Input(format!("{}: {e}", a.spec.display())))?;
    let mut spec: SyntheticSpec = parse_spec(&text)?;
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if spec.pool_size > 0 && a.pool_out.is_none() {
        return Err(Error::Input("the spec draws a pool; pass --pool-out".into()));
    }
    let hash = spec_hash(&spec);
    ctx.announce(&hash);
    let data = make_synthetic(&spec)?;
    formats::write_labeled(&ctx.path(&a.out), &data.labeled, Some(&hash))?;
    let mut written = vec![a.out.clone()];
    if let (Some(pool), Some(path)) = (&data.pool, &a.pool_out) {
        formats::write_pool(&ctx.path(path), pool, spec.num_classes, Some(&hash))?;
        written.push(path.clone());
    }
    println!(
        "wrote {} labeled images{}",
        data.labeled.len(),
        data.pool.as_ref().map(|p| format!(" and {} pool images", p.len())).unwrap_or_default()
    );
    log_run(&ctx.workdir, "synth", &hash, &written, &[])
}

/// Trains from the seed's initialisation, returning the model, loss trace
/// and median epoch time.
fn train(
    ctx: &Context,
    data: &LabeledDataset,
    arch_section: &ArchSection,
) -> Result<(ModelParams<f32>, Vec<f64>, f64), Error> {
    let cfg = ctx.config.train.to_config(ctx.config.seed);
    let arch = arch_section.build(data.shape(), data.num_classes())?;
    let init = init_params::<f32>(&arch, ctx.config.seed)?;
    let mut trainer = Trainer::new(init, data, &cfg)?;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut times = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let start = Instant::now();
        trace.push(trainer.run_epoch()?);
        times.push(start.elapsed().as_secs_f64());
    }
    Ok((trainer.into_params(), trace, median(&times)))
}

pub struct TrainPrimitiveArgs {
    pub out: PathBuf,
    pub trace: Option<PathBuf>,
}

pub fn train_primitive(ctx: &Context, a: &TrainPrimitiveArgs) -> Result<(), Error> {
    let hash = ctx.config.hash();
    ctx.announce(&hash);
    let anchor = formats::read_labeled(&ctx.path(&ctx.config.paths.anchor))?;
    let (params, trace, _) = train(ctx, &anchor, &ctx.config.architecture)?;
    let trace_path = a.trace.clone().unwrap_or_else(|| sibling(&a.out, ".loss.tsv"));
    formats::write_checkpoint(&ctx.path(&a.out), &params, &hash)?;
    formats::write_trace(&ctx.path(&trace_path), &hash, &trace)?;
    println!(
        "trained on {} anchor images, final loss {:.6}",
        anchor.len(),
        trace.last().copied().unwrap_or(f64::NAN)
    );
    log_run(&ctx.workdir, "train-primitive", &hash, &[a.out.clone(), trace_path], &[])
}

pub struct SelectArgs {
    pub checkpoint: PathBuf,
    pub out: PathBuf,
    pub report: Option<PathBuf>,
}

pub fn select(ctx: &Context, a: &SelectArgs) -> Result<(), Error> {
    let hash = ctx.config.hash();
    ctx.announce(&hash);
    let anchor = formats::read_labeled(&ctx.path(&ctx.config.paths.anchor))?;
    let pool: UnlabeledPool = formats::read_pool(&ctx.path(&ctx.config.paths.pool))?;
    let (params, _) = formats::read_checkpoint(&ctx.path(&a.checkpoint))?;
    if params.arch().num_classes != anchor.num_classes() {
        return Err(Error::Input(format!(
            "checkpoint predicts {} classes, anchor has {}",
            params.arch().num_classes,
            anchor.num_classes()
        )));
    }
    let features = dataset_features(&params, &anchor, 256)?;
    let centers = compute_centroids(&features, anchor.labels(), anchor.num_classes())?;
    let aux: AuxiliaryDataset = assign_pseudo_labels(&pool, &params, &centers, &ctx.config.selection.to_config())?;
    let report = selection_report(&aux);
    if aux.is_empty() {
        eprintln!("warning: no pool sample passed the margin; the manifest is empty");
    }
    let manifest = Manifest {
        config_hash: hash,
        num_classes: anchor.num_classes(),
        admissions: aux.admissions(),
    };
    let report_path = a.report.clone().unwrap_or_else(|| sibling(&a.out, ".report.json"));
    let classes: Vec<_> = report
        .classes
        .iter()
        .enumerate()
        .map(|(k, c)| {
            json!({
                "class": k,
                "count": c.count,
                "min": c.min,
                "median": c.median,
                "max": c.max,
                "sorted_ids": c.sorted_ids,
            })
        })
        .collect();
    let doc = json!({
        "config_hash": hex::encode(hash),
        "pool_size": pool.len(),
        "total": report.total(),
        "classes": classes,
    });
    formats::write_manifest(&ctx.path(&a.out), &manifest)?;
    formats::write_atomic(&ctx.path(&report_path), format!("{doc:#}\n").as_bytes())?;
    println!("admitted {} of {} pool images, per class {:?}", report.total(), pool.len(), report.counts());
    log_run(&ctx.workdir, "select", &hash, &[a.out.clone(), report_path], &[])
}

pub struct DistillArgs {
    pub manifest: PathBuf,
    pub pool: PathBuf,
    pub out: PathBuf,
    pub resume: Option<PathBuf>,
}

pub fn snapshot_path(out: &Path, iteration: u64) -> PathBuf {
    sibling(out, &format!(".snap-{iteration:06}.odds"))
}

pub fn distill(ctx: &Context, a: &DistillArgs) -> Result<(), Error> {
    let hash = ctx.config.hash();
    ctx.announce(&hash);
    let (manifest, aux) = load_aux(ctx, &a.manifest, &a.pool)?;
    let m = manifest.num_classes;
    let arch = ctx.config.distill_architecture().build(aux.shape(), m)?;
    let cfg = ctx.config.distill.to_config(m, ctx.config.seed);
    let trace_path = sibling(&a.out, ".loss.tsv");
    let resume = match &a.resume {
        Some(p) => {
            let s = formats::read_distilled(&ctx.path(p))?;
            if s.config_hash != hash {
                return Err(Error::Input(format!(
                    "{} was produced by config {}, not {}",
                    p.display(),
                    hex::encode(s.config_hash),
                    hex::encode(hash)
                )));
            }
            Some(s)
        }
        None => None,
    };
    // Keep the trace of the iterations a resumed run skips.
    let mut trace = match &resume {
        Some(s) => match formats::read_trace(&ctx.path(&trace_path)) {
            Ok((h, mut t)) if h == hash && t.len() >= s.iteration as usize => {
                t.truncate(s.iteration as usize);
                t
            }
            _ => {
                eprintln!("warning: no matching trace for the resumed iterations");
                Vec::new()
            }
        },
        None => Vec::new(),
    };

    let mut written = Vec::new();
    let mut snapshot_error = None;
    let outcome = distill_with::<f32>(&aux, &arch, &cfg, resume, |snap: &DistilledSet<f32>| {
        let mut snap = snap.clone();
        snap.config_hash = hash;
        let path = snapshot_path(&a.out, snap.iteration);
        match formats::write_distilled(&ctx.path(&path), &snap) {
            Ok(()) => written.push(path),
            Err(e) => {
                snapshot_error.get_or_insert(e);
            }
        }
    });
    if let Some(e) = snapshot_error {
        return Err(e.into());
    }
    let outcome = outcome?;
    trace.extend_from_slice(&outcome.trace);
    let mut set = outcome.distilled;
    set.config_hash = hash;
    formats::write_distilled(&ctx.path(&a.out), &set)?;
    formats::write_trace(&ctx.path(&trace_path), &hash, &trace)?;
    println!(
        "distilled {} images from {} auxiliary samples, eta {:.6}, {} snapshots",
        set.len(),
        aux.len(),
        set.eta(),
        outcome.snapshots.len()
    );
    written.push(a.out.clone());
    written.push(trace_path);
    log_run(&ctx.workdir, "distill", &hash, &written, &[])
}

pub enum AuxSource {
    Distilled(PathBuf),
    Manifest { manifest: PathBuf, pool: PathBuf },
}

pub struct TrainFinalArgs {
    pub source: AuxSource,
    pub out: PathBuf,
    pub report: PathBuf,
}

fn record(condition: &str, seed: u64, epoch: usize, r: &EvalReport, seconds: f64, hash: &ConfigHash, loss: Option<f64>) -> Record {
    Record {
        condition: condition.into(),
        seed,
        epoch,
        split: "test".into(),
        accuracy: r.accuracy,
        seconds,
        config_hash: hex::encode(hash),
        loss,
    }
}

pub fn train_final(ctx: &Context, a: &TrainFinalArgs) -> Result<(), Error> {
    let hash = ctx.config.hash();
    ctx.announce(&hash);
    let anchor = formats::read_labeled(&ctx.path(&ctx.config.paths.anchor))?;
    let (condition, aux) = match &a.source {
        AuxSource::Distilled(p) => (Condition::Das, formats::read_distilled(&ctx.path(p))?.to_dataset()),
        AuxSource::Manifest { manifest, pool } => (Condition::Vas, load_aux(ctx, manifest, pool)?.1),
    };
    let test = match &ctx.config.paths.test {
        Some(p) => Some(formats::read_labeled(&ctx.path(p))?),
        None => None,
    };
    let union = anchor.concat(&aux)?;
    let (params, trace, seconds) = train(ctx, &union, &ctx.config.architecture)?;
    let trace_path = sibling(&a.out, ".loss.tsv");
    formats::write_checkpoint(&ctx.path(&a.out), &params, &hash)?;
    formats::write_trace(&ctx.path(&trace_path), &hash, &trace)?;
    println!("trained on {} anchor + {} {} images", anchor.len(), aux.len(), condition.name());
    let mut appended = Vec::new();
    if let Some(test) = test {
        let r = evaluate(&params, &test)?;
        println!("test accuracy {:.4} on {} images", r.accuracy, r.count);
        let rec = record(condition.name(), ctx.config.seed, trace.len(), &r, seconds, &hash, trace.last().copied());
        append_lines(&ctx.path(&a.report), &[rec])?;
        appended.push(a.report.clone());
    }
    log_run(&ctx.workdir, "train-final", &hash, &[a.out.clone(), trace_path], &appended)
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub condition: String,
    pub split: String,
    pub report: Option<PathBuf>,
}

pub fn eval(ctx: &Context, a: &EvalArgs) -> Result<(), Error> {
    let (params, hash) = formats::read_checkpoint(&ctx.path(&a.checkpoint))?;
    ctx.announce(&hash);
    let data = formats::read_labeled(&ctx.path(&a.data))?;
    let start = Instant::now();
    let mut r = evaluate(&params, &data)?;
    r.seconds = start.elapsed().as_secs_f64();
    println!("accuracy {:.4} ({} images)", r.accuracy, r.count);
    for (k, acc) in r.per_class_accuracy.iter().enumerate() {
        match acc {
            Some(v) => println!("class {k}: {v:.4}"),
            None => println!("class {k}: no samples"),
        }
    }
    println!("confusion (rows true, columns predicted):");
    for row in &r.confusion {
        println!("{}", row.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("\t"));
    }
    if let Some(report) = &a.report {
        let rec = Record {
            split: a.split.clone(),
            ..record(&a.condition, ctx.config.seed, 0, &r, r.seconds, &hash, None)
        };
        append_lines(&ctx.path(report), &[rec])?;
        log_run(&ctx.workdir, "eval", &hash, &[], std::slice::from_ref(report))?;
    }
    Ok(())
}

pub struct CompareArgs {
    pub manifest: PathBuf,
    pub pool: PathBuf,
    pub distilled: PathBuf,
    pub report: PathBuf,
    pub cost: PathBuf,
}

pub fn compare(ctx: &Context, a: &CompareArgs) -> Result<(), Error> {
    let hash = ctx.config.hash();
    ctx.announce(&hash);
    let anchor = formats::read_labeled(&ctx.path(&ctx.config.paths.anchor))?;
    let (_, vas) = load_aux(ctx, &a.manifest, &a.pool)?;
    let das = formats::read_distilled(&ctx.path(&a.distilled))?.to_dataset();
    let test_path = ctx
        .config
        .paths
        .test
        .as_ref()
        .ok_or_else(|| Error::Input("compare needs paths.test".into()))?;
    let test = formats::read_labeled(&ctx.path(test_path))?;
    let arch = ctx.config.architecture.build(anchor.shape(), anchor.num_classes())?;
    let cfg = ctx.config.train.to_config(ctx.config.seed);
    let seeds = &ctx.config.compare.seeds;
    let clock_start = Instant::now();
    let c = compare_conditions(&anchor, &vas, &das, &test, &arch, &cfg, seeds, || {
        clock_start.elapsed().as_secs_f64()
    })?;

    let h = hex::encode(hash);
    let records: Vec<Record> = c
        .epochs
        .iter()
        .map(|e| Record {
            condition: e.condition.name().into(),
            seed: e.seed,
            epoch: e.epoch,
            split: "test".into(),
            accuracy: e.accuracy,
            seconds: e.seconds,
            config_hash: h.clone(),
            loss: Some(e.loss),
        })
        .collect();
    let costs: Vec<CostRecord> = c
        .summary
        .iter()
        .map(|s| CostRecord {
            condition: s.condition.name().into(),
            seeds: seeds.clone(),
            dataset_size: s.dataset_size,
            mean_accuracy: s.mean_accuracy,
            sd_accuracy: s.sd_accuracy,
            seconds_per_epoch: s.median_seconds_per_epoch,
            config_hash: h.clone(),
        })
        .collect();
    append_lines(&ctx.path(&a.report), &records)?;
    append_lines(&ctx.path(&a.cost), &costs)?;

    println!("seed\tcondition\taccuracy\tseconds/epoch");
    for r in &c.runs {
        println!("{}\t{}\t{:.4}\t{:.6}", r.seed, r.condition.name(), r.accuracy, r.median_seconds_per_epoch);
    }
    println!("condition\tsize\tmean\tsd\tseconds/epoch");
    for s in &c.summary {
        println!(
            "{}\t{}\t{:.4}\t{:.4}\t{:.6}",
            s.condition.name(),
            s.dataset_size,
            s.mean_accuracy,
            s.sd_accuracy,
            s.median_seconds_per_epoch
        );
    }
    log_run(&ctx.workdir, "compare", &hash, &[], &[a.report.clone(), a.cost.clone()])
}

pub struct ProbeArgs {
    pub snapshots: Vec<PathBuf>,
    pub report: PathBuf,
}

pub fn probe(ctx: &Context, a: &ProbeArgs) -> Result<(), Error> {
    let hash = ctx.config.hash();
    ctx.announce(&hash);
    let snaps = a
        .snapshots
        .iter()
        .map(|p| formats::read_distilled(&ctx.path(p)))
        .collect::<Result<Vec<_>, _>>()?;
    let first = snaps.first().ok_or_else(|| Error::Input("no snapshots given".into()))?;
    let arch = ctx.config.probe.architecture.build(first.shape(), first.num_classes)?;
    let cfg = ctx.config.probe.train.to_config(ctx.config.seed);
    let start = Instant::now();
    let r = pattern_probe_timed(&snaps, &arch, &cfg, || start.elapsed().as_secs_f64())?;
    let h = hex::encode(hash);
    let records: Vec<Record> = (0..r.test_accuracy.len())
        .map(|e| Record {
            condition: "probe".into(),
            seed: ctx.config.seed,
            epoch: e,
            split: "test".into(),
            accuracy: r.test_accuracy[e],
            seconds: r.epoch_seconds[e],
            config_hash: h.clone(),
            loss: Some(r.train_loss[e]),
        })
        .collect();
    append_lines(&ctx.path(&a.report), &records)?;
    println!(
        "probe on {} snapshot images: {} train / {} test, final held-out accuracy {:.4}",
        r.train_size + r.test_size,
        r.train_size,
        r.test_size,
        r.final_accuracy()
    );
    log_run(&ctx.workdir, "probe", &hash, &[], std::slice::from_ref(&a.report))
}
