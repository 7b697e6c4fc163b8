//! Command-line surface of the `dcc` binary.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::constraints::{load_constraints, save_constraints, ConstraintSet, DifficultyForm};
use crate::datasets::{load_delimited, load_idx, make_blobs, write_delimited, BlobSpec, Dataset};
use crate::metrics::ClusterMetrics;
use crate::network::{load_params, pretrain_sdae, save_params, ArchitectureSpec, NetworkParams, PretrainConfig};
use crate::oracles::{gen_difficulty, gen_pairwise, gen_triplets};
use crate::trainer::{
    cluster_size_report, ensure_centroids, negative_ratio_study, predict, sweep_constraints, train, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(name = "dcc", about = "Deep clustering with pairwise, triplet, difficulty and size constraints")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Layer-wise denoising autoencoder pretraining.
    Pretrain(Common),
    /// Simulate constraints from labels, k-means mistakes or an embedding.
    GenConstraints(GenArgs),
    /// Constrained clustering of a dataset.
    Train(Common),
    /// Accuracy and NMI of a trained model.
    Evaluate(Common),
    /// Paired runs over several constraint counts.
    Sweep(SweepArgs),
    /// Fraction of constraint sets that lower accuracy.
    NegativeStudy(StudyArgs),
    /// Cluster sizes with and without the global size loss.
    SizeReport(Common),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DataFormat {
    Idx,
    Csv,
    Blobs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ConstraintKind {
    Pairwise,
    Difficulty,
    Triplet,
}

#[derive(Debug, Args)]
struct Common {
    /// Data path; for blobs a `key=value,...` generator spec.
    #[arg(long)]
    data: String,
    #[arg(long, value_enum, default_value = "csv")]
    data_format: DataFormat,
    /// IDX label file.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// The delimited file has no label column.
    #[arg(long)]
    unlabeled: bool,
    #[arg(long, default_value = ",")]
    delimiter: char,
    #[arg(long)]
    constraints: Option<PathBuf>,
    #[arg(long)]
    model_in: Option<PathBuf>,
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Number of clusters; defaults to the number of label classes.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 256)]
    constraint_batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    ml_weight: f64,
    #[arg(long, default_value_t = 0.1)]
    theta: f64,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// Extra instance losses: `difficulty`, `global`.
    #[arg(long, value_delimiter = ',')]
    loss_flags: Vec<String>,
    /// Literal sign convention for the difficulty loss.
    #[arg(long)]
    eq6_literal: bool,
    /// Early stop once fewer than this fraction of labels change.
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long)]
    embedding_out: Option<PathBuf>,
    /// Encoder hidden widths.
    #[arg(long, value_delimiter = ',', default_value = "500,500,2000")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    embedding_dim: usize,
    #[arg(long, default_value_t = 0.2)]
    noise: f64,
    #[arg(long, default_value_t = 50)]
    layer_epochs: usize,
    #[arg(long, default_value_t = 100)]
    finetune_epochs: usize,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    kind: ConstraintKind,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 0.05)]
    pos_frac: f64,
    #[arg(long, default_value_t = 0.05)]
    neg_frac: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_value = "0,50,200,800")]
    counts: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    sets: usize,
}

#[derive(Debug, Args)]
struct StudyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 200)]
    count: usize,
    #[arg(long, default_value_t = 20)]
    sets: usize,
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

fn parse_blob_spec(text: &str) -> CliResult<BlobSpec> {
    let mut spec = BlobSpec::default();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| format!("blob spec entry `{item}` is not key=value"))?;
        match key {
            "clusters" | "num_clusters" => spec.num_clusters = value.parse()?,
            "per_cluster" => spec.per_cluster = value.parse()?,
            "dim" => spec.dim = value.parse()?,
            "separation" => spec.separation = value.parse()?,
            "sigma" => spec.sigma = value.parse()?,
            "seed" => spec.seed = value.parse()?,
            other => return Err(format!("unknown blob spec key `{other}`").into()),
        }
    }
    Ok(spec)
}

impl Common {
    fn dataset(&self) -> CliResult<Dataset> {
        Ok(match self.data_format {
            DataFormat::Idx => {
                let labels = self.labels.as_ref().ok_or("--labels is required for IDX data")?;
                load_idx(Path::new(&self.data), labels)?
            }
            DataFormat::Csv => {
                let delimiter = u8::try_from(self.delimiter).map_err(|_| "delimiter must be ASCII")?;
                load_delimited(Path::new(&self.data), !self.unlabeled, delimiter)?
            }
            DataFormat::Blobs => make_blobs(&parse_blob_spec(&self.data)?)?,
        })
    }

    fn k(&self, ds: &Dataset) -> CliResult<usize> {
        self.k
            .or_else(|| ds.num_classes())
            .ok_or_else(|| "--k is required for unlabeled data".into())
    }

    fn train_config(&self, ds: &Dataset) -> CliResult<TrainConfig> {
        let mut config = TrainConfig {
            k: self.k(ds)?,
            epochs: self.epochs,
            batch_size: self.batch_size,
            constraint_batch_size: self.constraint_batch_size,
            ml_weight: self.ml_weight,
            theta: self.theta,
            learning_rate: self.learning_rate,
            tolerance: self.tolerance,
            seed: self.seed,
            difficulty_form: if self.eq6_literal {
                DifficultyForm::Literal
            } else {
                DifficultyForm::Intent
            },
            ..TrainConfig::default()
        };
        for flag in &self.loss_flags {
            match flag.as_str() {
                "difficulty" => config.use_difficulty = true,
                "global" => config.use_global_size = true,
                other => return Err(format!("unknown loss flag `{other}` (expected difficulty, global)").into()),
            }
        }
        config.validate()?;
        Ok(config)
    }

    fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            noise_rate: self.noise,
            layer_epochs: self.layer_epochs,
            finetune_epochs: self.finetune_epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
        }
    }

    fn architecture(&self, ds: &Dataset) -> ArchitectureSpec {
        ArchitectureSpec {
            input_dim: ds.dim(),
            hidden_dims: self.hidden.clone(),
            embedding_dim: self.embedding_dim,
        }
    }

    /// The model from `--model-in`, or a freshly pretrained one.
    fn network(&self, ds: &Dataset) -> CliResult<NetworkParams> {
        match &self.model_in {
            Some(path) => Ok(load_params(path)?),
            None => Ok(pretrain_sdae(&self.architecture(ds), &ds.x, &self.pretrain_config())?),
        }
    }

    fn constraint_set(&self) -> CliResult<ConstraintSet> {
        Ok(match &self.constraints {
            Some(path) => load_constraints(path)?,
            None => ConstraintSet::default(),
        })
    }

    fn save_model(&self, net: &NetworkParams) -> CliResult<()> {
        if let Some(path) = &self.model_out {
            save_params(path, net)?;
        }
        Ok(())
    }

    fn export_embedding(&self, net: &NetworkParams, ds: &Dataset) -> CliResult<()> {
        if let Some(path) = &self.embedding_out {
            write_delimited(path, &net.embed(&ds.x)?, None)?;
        }
        Ok(())
    }
}

fn with_report(path: Option<&PathBuf>, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> CliResult<()> {
    if let Some(path) = path {
        let mut out = BufWriter::new(File::create(path)?);
        write(&mut out)?;
        out.flush()?;
    }
    Ok(())
}

fn json_line(out: &mut dyn Write, value: &impl serde::Serialize) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n")
}

#[derive(serde::Serialize)]
struct FinalLine {
    kind: &'static str,
    acc: Option<f64>,
    nmi: Option<f64>,
    epochs: usize,
    active_constraints: usize,
}

#[derive(serde::Serialize)]
struct EvalLine {
    kind: &'static str,
    acc: f64,
    nmi: f64,
    n: usize,
}

#[derive(serde::Serialize)]
struct PretrainLine {
    kind: &'static str,
    reconstruction: f64,
    n: usize,
}

fn print_metrics(m: &ClusterMetrics) {
    println!("acc={:?} nmi={:?}", m.acc, m.nmi);
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Pretrain(args) => {
            let ds = args.dataset()?;
            let net = pretrain_sdae(&args.architecture(&ds), &ds.x, &args.pretrain_config())?;
            let recon = {
                let r = net.reconstruct(&ds.x)?;
                let sq: f64 = r.values().iter().zip(ds.x.values()).map(|(a, b)| (a - b) * (a - b)).sum();
                sq / ds.len() as f64
            };
            println!("reconstruction={recon:?}");
            args.save_model(&net)?;
            args.export_embedding(&net, &ds)?;
            with_report(args.report_out.as_ref(), |out| {
                json_line(
                    out,
                    &PretrainLine {
                        kind: "pretrain",
                        reconstruction: recon,
                        n: ds.len(),
                    },
                )
            })
        }
        Command::GenConstraints(gen) => {
            let args = &gen.common;
            let ds = args.dataset()?;
            let mut set = ConstraintSet::default();
            match gen.kind {
                ConstraintKind::Pairwise => {
                    let y = ds.y.as_ref().ok_or("pairwise constraints need labels")?;
                    set.pairwise = gen_pairwise(y, gen.count, args.seed)?;
                }
                ConstraintKind::Difficulty => {
                    let y = ds.y.as_ref().ok_or("difficulty constraints need labels")?;
                    let m = gen_difficulty(&ds.x, y, args.k(&ds)?, args.seed)?;
                    set.difficulty = m.values().iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect();
                }
                ConstraintKind::Triplet => {
                    let z = args.network(&ds)?.embed(&ds.x)?;
                    set.triplets = gen_triplets(&z, gen.count, gen.pos_frac, gen.neg_frac, args.seed)?;
                }
            }
            save_constraints(&gen.out, &set)?;
            println!("wrote {} constraints to {}", constraint_count(&set), gen.out.display());
            Ok(())
        }
        Command::Train(args) => {
            let ds = args.dataset()?;
            let config = args.train_config(&ds)?;
            let constraints = args.constraint_set()?;
            let net = args.network(&ds)?;
            let out = train(&ds, &constraints, net, &config)?;
            if let Some(m) = &out.metrics {
                print_metrics(m);
            } else {
                println!("epochs={}", out.epochs_run());
            }
            args.save_model(&out.net)?;
            args.export_embedding(&out.net, &ds)?;
            with_report(args.report_out.as_ref(), |w| {
                for r in &out.history {
                    json_line(w, &EpochLine { kind: "epoch", record: r })?;
                }
                json_line(
                    w,
                    &FinalLine {
                        kind: "final",
                        acc: out.metrics.map(|m| m.acc),
                        nmi: out.metrics.map(|m| m.nmi),
                        epochs: out.epochs_run(),
                        active_constraints: out.active_pairs.len(),
                    },
                )
            })
        }
        Command::Evaluate(args) => {
            let ds = args.dataset()?;
            let path = args.model_in.as_ref().ok_or("--model-in is required")?;
            let net = load_params(path)?;
            let (_, labels) = predict(&net, &ds.x)?;
            let y = ds.y.as_ref().ok_or("evaluation needs labels")?;
            let m = ClusterMetrics::compute(&labels, y)?;
            print_metrics(&m);
            args.export_embedding(&net, &ds)?;
            with_report(args.report_out.as_ref(), |w| {
                json_line(
                    w,
                    &EvalLine {
                        kind: "evaluate",
                        acc: m.acc,
                        nmi: m.nmi,
                        n: ds.len(),
                    },
                )
            })
        }
        Command::Sweep(sweep) => {
            let args = &sweep.common;
            let ds = args.dataset()?;
            let config = args.train_config(&ds)?;
            let report = sweep_constraints(&ds, args.network(&ds)?, &sweep.counts, sweep.sets, &config)?;
            for a in &report.aggregates {
                println!("{} count={} acc={:?} nmi={:?}", a.arm, a.constraint_count, a.acc_mean, a.nmi_mean);
            }
            with_report(args.report_out.as_ref(), |w| report.write_jsonl(w))
        }
        Command::NegativeStudy(study) => {
            let args = &study.common;
            let ds = args.dataset()?;
            let config = args.train_config(&ds)?;
            let report = negative_ratio_study(&ds, args.network(&ds)?, study.count, study.sets, &config)?;
            println!("negative_ratio={:?}", report.negative_ratio);
            with_report(args.report_out.as_ref(), |w| report.write_jsonl(w))
        }
        Command::SizeReport(args) => {
            let ds = args.dataset()?;
            let config = args.train_config(&ds)?;
            let constraints = args.constraint_set()?;
            let mut net = args.network(&ds)?;
            ensure_centroids(&mut net, &ds.x, &config)?;
            let plain = TrainConfig {
                use_global_size: false,
                ..config.clone()
            };
            let sized = TrainConfig {
                use_global_size: true,
                ..config
            };
            let without = train(&ds, &constraints, net.clone(), &plain)?;
            let with = train(&ds, &constraints, net.clone(), &sized)?;
            let report = cluster_size_report(
                &[("initial", &net), ("without_global", &without.net), ("with_global", &with.net)],
                &ds,
            )?;
            for e in &report.entries {
                println!("{} counts={:?} max_deviation={:?}", e.model, e.counts, e.max_deviation);
            }
            with_report(args.report_out.as_ref(), |w| report.write_jsonl(w))
        }
    }
}

#[derive(serde::Serialize)]
struct EpochLine<'a> {
    kind: &'static str,
    #[serde(flatten)]
    record: &'a crate::trainer::EpochRecord,
}

fn constraint_count(set: &ConstraintSet) -> usize {
    set.pairwise.len() + set.difficulty.len() + set.triplets.len()
}

/// Splices `key=value` lines from `--config FILE` into the arguments,
/// after the subcommand, for every flag not given explicitly.
fn expand_config(argv: Vec<String>) -> CliResult<Vec<String>> {
    let Some(pos) = argv.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(argv);
    };
    let (path, consumed) = match argv[pos].strip_prefix("--config=") {
        Some(p) => (p.to_string(), 1),
        None => (
            argv.get(pos + 1).cloned().ok_or("--config needs a file")?,
            2,
        ),
    };
    let text = std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let mut settings = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("{path}:{}: expected key=value", i + 1))?;
        settings.insert(k.trim().replace('_', "-"), v.trim().to_string());
    }
    let mut rest: Vec<String> = argv[..pos].to_vec();
    rest.extend_from_slice(&argv[pos + consumed..]);
    let given = |key: &str| {
        rest.iter()
            .any(|a| a == &format!("--{key}") || a.starts_with(&format!("--{key}=")))
    };
    let mut extra = Vec::new();
    for (key, value) in settings {
        if given(&key) {
            continue;
        }
        match value.as_str() {
            "true" => extra.push(format!("--{key}")),
            "false" => {}
            _ => extra.push(format!("--{key}={value}")),
        }
    }
    // subcommand is the first argument after the program name
    let at = rest.len().min(2);
    rest.splice(at..at, extra);
    Ok(rest)
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn cli_main(argv: impl IntoIterator<Item = String>) -> i32 {
    let argv = match expand_config(argv.into_iter().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
