use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{self, AuxSource, Context};
use crate::config::{ArchSection, PipelineConfig};
use crate::error::Error;
use crate::report::{curve, read_lines, Metric, Record};
use crate::runlog;

/// Config file picked up from the working directory when `--config` is not
/// given.
pub const DEFAULT_CONFIG: &str = "omnidistill.toml";

#[derive(Debug, Parser)]
#[command(name = "omnidistill", version, about = "Omni-supervised training with distilled auxiliary data")]
pub struct Cli {
    /// Directory every relative path is resolved against.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Pipeline config (TOML). Defaults to `omnidistill.toml` if present.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "OD_THREADS", default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub anchor: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled set (and optional unlabeled pool).
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pool_out: Option<PathBuf>,
    },
    /// Train the primitive learner on the anchor set.
    TrainPrimitive {
        #[command(flatten)]
        train: TrainOverrides,
        #[arg(long, default_value = "primitive.odmp")]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Pseudo-label the pool against the anchor class centroids.
    Select {
        #[arg(long)]
        anchor: Option<PathBuf>,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long, default_value = "primitive.odmp")]
        checkpoint: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        cap: Option<usize>,
        #[arg(long, default_value = "selection.tsv")]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Distill the selected samples into a few synthetic images.
    Distill {
        /// `MANIFEST` or `MANIFEST+POOL`.
        #[arg(long, default_value = "selection.tsv")]
        aux: String,
        /// TOML file with architecture keys for the distilled learner.
        #[arg(long)]
        arch: Option<PathBuf>,
        /// Number of distilled images.
        #[arg(long)]
        n: Option<usize>,
        /// Initial inner step size.
        #[arg(long)]
        eta0: Option<f64>,
        /// Outer step size.
        #[arg(long)]
        alpha: Option<f64>,
        /// Real samples per outer iteration.
        #[arg(long)]
        batch: Option<usize>,
        /// Outer iterations.
        #[arg(long)]
        iters: Option<usize>,
        /// Initial-weight draws per outer iteration.
        #[arg(long)]
        weight_draws: Option<usize>,
        /// Write a snapshot every this many iterations.
        #[arg(long)]
        snapshot_every: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "distilled.odds")]
        out: PathBuf,
        /// Continue from a snapshot of the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train a fresh learner on anchor plus one auxiliary source.
    #[command(group(clap::ArgGroup::new("source").required(true).args(["distilled", "aux"])))]
    TrainFinal {
        #[command(flatten)]
        train: TrainOverrides,
        #[arg(long)]
        distilled: Option<PathBuf>,
        /// `MANIFEST` or `MANIFEST+POOL`.
        #[arg(long)]
        aux: Option<String>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value = "final.odmp")]
        out: PathBuf,
        #[arg(long, default_value = "reports.jsonl")]
        report: PathBuf,
    },
    /// Evaluate a checkpoint on a labeled dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "eval")]
        condition: String,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train baseline, VAS and DAS learners over several seeds and time them.
    Compare {
        #[command(flatten)]
        train: TrainOverrides,
        /// `MANIFEST` or `MANIFEST+POOL`.
        #[arg(long, default_value = "selection.tsv")]
        aux: String,
        #[arg(long, default_value = "distilled.odds")]
        distilled: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, default_value = "compare.jsonl")]
        report: PathBuf,
        #[arg(long, default_value = "cost.jsonl")]
        cost: PathBuf,
    },
    /// Train a classifier on distillation snapshots.
    Probe {
        #[arg(long, required = true, num_args = 1..)]
        snapshots: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value = "probe.jsonl")]
        report: PathBuf,
    },
    /// Print `x<TAB>y` learning-curve columns from a report.
    PlotData {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        condition: String,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "accuracy")]
        metric: Metric,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check artifact config hashes, optionally against a second run.
    Verify {
        #[arg(long)]
        against: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    match &cli.config {
        Some(p) => PipelineConfig::load(&cli.workdir.join(p)),
        None => {
            let p = cli.workdir.join(DEFAULT_CONFIG);
            if p.exists() {
                PipelineConfig::load(&p)
            } else {
                Ok(PipelineConfig::default())
            }
        }
    }
}

fn apply_train(cfg: &mut PipelineConfig, t: &TrainOverrides) {
    if let Some(s) = t.seed {
        cfg.seed = s;
    }
    if let Some(e) = t.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = t.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(a) = &t.anchor {
        cfg.paths.anchor = a.clone();
    }
}

fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
    if let Some(v) = v {
        *slot = v.clone();
    }
}

pub fn run(cli: Cli) -> Result<(), Error> {
    if cli.threads == 0 {
        return Err(Error::Input("--threads must be at least 1".into()));
    }
    let mut config = load_config(&cli)?;
    let workdir = cli.workdir.clone();
    match cli.command {
        Command::Synth {
            spec,
            seed,
            out,
            pool_out,
        } => {
            let ctx = Context { workdir, config };
            commands::synth(&ctx, &commands::SynthArgs { spec, seed, out, pool_out })
        }
        Command::TrainPrimitive { train, out, trace } => {
            apply_train(&mut config, &train);
            commands::train_primitive(&Context { workdir, config }, &commands::TrainPrimitiveArgs { out, trace })
        }
        Command::Select {
            anchor,
            pool,
            checkpoint,
            delta,
            cap,
            out,
            report,
        } => {
            set(&mut config.paths.anchor, &anchor);
            set(&mut config.paths.pool, &pool);
            set(&mut config.selection.delta, &delta);
            if cap.is_some() {
                config.selection.per_class_cap = cap;
            }
            let ctx = Context { workdir, config };
            commands::select(&ctx, &commands::SelectArgs { checkpoint, out, report })
        }
        Command::Distill {
            aux,
            arch,
            n,
            eta0,
            alpha,
            batch,
            iters,
            weight_draws,
            snapshot_every,
            seed,
            out,
            resume,
        } => {
            let (manifest, pool) = commands::parse_aux(&aux, &config.paths.pool);
            config.paths.pool = pool.clone();
            if let Some(p) = arch {
                let text = std::fs::read_to_string(workdir.join(&p))
                    .map_err(|e| Error::Input(format!("{}: {e}", p.display())))?;
                let a: ArchSection = toml::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", p.display())))?;
                config.distill.architecture = Some(a);
            }
            let d = &mut config.distill;
            if n.is_some() {
                d.n = n;
            }
            set(&mut d.eta0, &eta0);
            set(&mut d.alpha, &alpha);
            set(&mut d.batch_size, &batch);
            set(&mut d.iterations, &iters);
            set(&mut d.weight_draws, &weight_draws);
            if snapshot_every.is_some() {
                d.snapshot_every = snapshot_every;
            }
            set(&mut config.seed, &seed);
            let ctx = Context { workdir, config };
            commands::distill(&ctx, &commands::DistillArgs { manifest, pool, out, resume })
        }
        Command::TrainFinal {
            train,
            distilled,
            aux,
            test,
            out,
            report,
        } => {
            apply_train(&mut config, &train);
            if test.is_some() {
                config.paths.test = test;
            }
            let source = match (distilled, aux) {
                (Some(d), None) => AuxSource::Distilled(d),
                (None, Some(a)) => {
                    let (manifest, pool) = commands::parse_aux(&a, &config.paths.pool);
                    config.paths.pool = pool.clone();
                    AuxSource::Manifest { manifest, pool }
                }
                _ => return Err(Error::Input("pass exactly one of --distilled and --aux".into())),
            };
            let ctx = Context { workdir, config };
            commands::train_final(&ctx, &commands::TrainFinalArgs { source, out, report })
        }
        Command::Eval {
            checkpoint,
            data,
            condition,
            split,
            report,
        } => commands::eval(
            &Context { workdir, config },
            &commands::EvalArgs {
                checkpoint,
                data,
                condition,
                split,
                report,
            },
        ),
        Command::Compare {
            train,
            aux,
            distilled,
            test,
            seeds,
            report,
            cost,
        } => {
            apply_train(&mut config, &train);
            if test.is_some() {
                config.paths.test = test;
            }
            set(&mut config.compare.seeds, &seeds);
            let (manifest, pool) = commands::parse_aux(&aux, &config.paths.pool);
            config.paths.pool = pool.clone();
            let ctx = Context { workdir, config };
            commands::compare(
                &ctx,
                &commands::CompareArgs {
                    manifest,
                    pool,
                    distilled,
                    report,
                    cost,
                },
            )
        }
        Command::Probe {
            snapshots,
            seed,
            epochs,
            report,
        } => {
            set(&mut config.seed, &seed);
            set(&mut config.probe.train.epochs, &epochs);
            commands::probe(&Context { workdir, config }, &commands::ProbeArgs { snapshots, report })
        }
        Command::PlotData {
            report,
            condition,
            split,
            seed,
            metric,
            out,
        } => {
            let records: Vec<Record> = read_lines(&workdir.join(&report))?;
            let points = curve(&records, &condition, &split, seed, metric);
            let mut text = String::from("x\ty\n");
            for (x, y) in points {
                text.push_str(&format!("{x}\t{y}\n"));
            }
            match out {
                Some(p) => crate::formats::write_atomic(&workdir.join(p), text.as_bytes())?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Verify { against } => {
            let against = against.map(|p| workdir.join(p));
            for line in runlog::verify(&workdir, against.as_deref())? {
                println!("{line}");
            }
            Ok(())
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
