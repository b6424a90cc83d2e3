//! Command-line interface: `run`, `synth`, `convert` and `report`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use oml_core::{
    generate_synthetic, prequential_run, Hyperparams, RunOutput, StreamDataset, SynthConfig,
};

use crate::config::{self, DataSource, RunConfig, RunOverrides};
use crate::formats;
use crate::report;
use crate::snapshot::ModelSnapshot;

#[derive(Debug, Parser)]
#[command(
    name = "oml",
    version,
    about = "Online metric learning for streaming multi-label classification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Prequential evaluation of one or more methods on a dataset.
    Run(Box<RunArgs>),
    /// Write a synthetic dataset in the sparse format.
    Synth(SynthArgs),
    /// Convert between the sparse format and dense CSV.
    Convert(ConvertArgs),
    /// Summarize curve CSVs as a table and SVG charts.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Dataset file (`.csv` is read as dense CSV, anything else as the sparse format).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Generate the data instead, e.g. `n=2000,p=20,q=8,latent_dim=4,seed=1`.
    #[arg(long)]
    pub synth: Option<String>,
    /// Number of label columns in a dense CSV input.
    #[arg(long)]
    pub csv_labels: Option<usize>,
    /// `oml` or `knn`; repeat to run several.
    #[arg(long = "method")]
    pub methods: Vec<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Lower step clamp.
    #[arg(long = "m")]
    pub lambda_min: Option<f64>,
    /// Upper step clamp.
    #[arg(long = "M")]
    pub lambda_max: Option<f64>,
    #[arg(long)]
    pub seed_fraction: Option<f64>,
    /// `auto` or a non-negative number.
    #[arg(long)]
    pub ridge: Option<String>,
    /// `exact` or `first-order`.
    #[arg(long)]
    pub update_rule: Option<String>,
    /// `raw` or `learned`.
    #[arg(long)]
    pub train_nn: Option<String>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Repeat to run several seeds.
    #[arg(long = "seed")]
    pub seeds: Vec<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `key=value` config file; flags win over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Keep file order instead of shuffling before the seed split.
    #[arg(long)]
    pub no_shuffle: bool,
    /// Keep at most this many examples in memory (oldest dropped first).
    #[arg(long)]
    pub max_store: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> RunOverrides {
        RunOverrides {
            data: self.data.clone(),
            synth: self.synth.clone(),
            csv_labels: self.csv_labels,
            methods: self.methods.clone(),
            d: self.d,
            k: self.k,
            lambda_min: self.lambda_min,
            lambda_max: self.lambda_max,
            seed_fraction: self.seed_fraction,
            ridge: self.ridge.clone(),
            update_rule: self.update_rule.clone(),
            train_nn: self.train_nn.clone(),
            threshold: self.threshold,
            checkpoint_every: self.checkpoint_every,
            seeds: self.seeds.clone(),
            out: self.out.clone(),
            no_shuffle: self.no_shuffle,
            max_store: self.max_store,
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 20)]
    pub p: usize,
    #[arg(long, default_value_t = 8)]
    pub q: usize,
    #[arg(long, default_value_t = 4)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 0.5)]
    pub label_threshold: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Sparse,
    Csv,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Input file; `.csv` is dense CSV, anything else the sparse format.
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub to: Format,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of label columns when the input is CSV.
    #[arg(long)]
    pub csv_labels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Curve CSV files.
    #[arg(required = true)]
    pub curves: Vec<PathBuf>,
    /// Directory for the SVG charts.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => cmd_run(&a).map(|files| {
            for f in files {
                println!("wrote {}", f.display());
            }
        }),
        Command::Synth(a) => cmd_synth(&a),
        Command::Convert(a) => cmd_convert(&a),
        Command::Report(a) => cmd_report(&a).map(|table| print!("{table}")),
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned())
}

/// Reads a dataset, choosing the parser by extension.
pub fn load_dataset(path: &Path, csv_labels: Option<usize>) -> Result<StreamDataset> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let name = dataset_name(path);
    let ds = if is_csv(path) {
        let q = match csv_labels.or_else(|| formats::infer_label_columns(&text)) {
            Some(q) => q,
            None => bail!(
                "{}: cannot tell label columns apart; pass --csv-labels",
                path.display()
            ),
        };
        formats::parse_dense_csv(&text, q, &name)
    } else {
        formats::parse_sparse_multilabel(&text, &name)
    };
    ds.with_context(|| format!("{}: parse failed", path.display()))
}

/// Writes via a temporary sibling and a rename, so readers never see a half-written file.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, contents).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))
}

/// Resolves flags and the optional config file into a validated [`RunConfig`].
pub fn resolve_run_config(args: &RunArgs) -> Result<RunConfig> {
    let base = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            RunOverrides::from_map(&config::parse_config_file(&text)?)
                .with_context(|| format!("config {}", path.display()))?
        }
        None => RunOverrides::default(),
    };
    args.overrides().over(base).resolve()
}

struct Job {
    method: oml_core::Method,
    seed: u64,
    hp: Hyperparams,
}

/// Runs every (method, seed) pair and writes curve, summary and model files.
/// Nothing is written unless all runs succeed.
pub fn cmd_run(args: &RunArgs) -> Result<Vec<PathBuf>> {
    let cfg = resolve_run_config(args)?;
    let ds = match &cfg.source {
        DataSource::File(path) => load_dataset(path, cfg.csv_labels)?,
        DataSource::Synth(sc) => generate_synthetic(sc)?,
    };
    if cfg.out.exists() && !cfg.out.is_dir() {
        bail!(
            "output path {} exists and is not a directory",
            cfg.out.display()
        );
    }
    let mut jobs = Vec::new();
    for &method in &cfg.methods {
        for &seed in &cfg.seeds {
            let hp = Hyperparams {
                rng_seed: seed,
                ..cfg.hp.clone()
            };
            jobs.push(Job { method, seed, hp });
        }
    }

    let results: Vec<Result<RunOutput>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|job| {
                let ds = &ds;
                let every = cfg.checkpoint_every;
                s.spawn(move || {
                    prequential_run(ds, &job.hp, job.method, every).with_context(|| {
                        format!("{} run with seed {} failed", job.method.name(), job.seed)
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run thread panicked"))
            .collect()
    });

    let mut files: Vec<(PathBuf, String)> = Vec::new();
    for (job, res) in jobs.iter().zip(results) {
        let run = res?;
        let stem = if cfg.seeds.len() == 1 {
            job.method.name().to_string()
        } else {
            format!("{}_seed{}", job.method.name(), job.seed)
        };
        files.push((
            cfg.out.join(format!("curve_{stem}.csv")),
            report::write_curve_csv(run.report.curve()),
        ));
        files.push((
            cfg.out.join(format!("summary_{stem}.txt")),
            report::summary_text(&run, &ds, &cfg, job.seed),
        ));
        files.push((
            cfg.out.join(format!("model_{stem}.json")),
            ModelSnapshot::from_run(&run, &job.hp).to_json(),
        ));
    }

    fs::create_dir_all(&cfg.out).with_context(|| format!("cannot create {}", cfg.out.display()))?;
    for (path, contents) in &files {
        write_atomic(path, contents)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let ds = generate_synthetic(&SynthConfig {
        n: args.n,
        p: args.p,
        q: args.q,
        latent_dim: args.latent_dim,
        noise_std: args.noise_std,
        label_threshold: args.label_threshold,
        rng_seed: args.seed,
    })?;
    write_atomic(&args.out, &formats::write_sparse(&ds))
}

pub fn cmd_convert(args: &ConvertArgs) -> Result<()> {
    let ds = load_dataset(&args.input, args.csv_labels)?;
    let text = match args.to {
        Format::Sparse => formats::write_sparse(&ds),
        Format::Csv => formats::write_dense_csv(&ds),
    };
    write_atomic(&args.out, &text)
}

/// Returns the final-metrics table after writing the four charts.
pub fn cmd_report(args: &ReportArgs) -> Result<String> {
    let mut curves = Vec::new();
    for path in &args.curves {
        let text =
            fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let rows = report::parse_curve_csv(&text)
            .with_context(|| format!("{}: malformed curve CSV", path.display()))?;
        curves.push((dataset_name(path), rows));
    }
    let mut names: Vec<&String> = curves.iter().map(|(n, _)| n).collect();
    names.sort();
    names.dedup();
    if names.len() != curves.len() {
        for ((name, _), path) in curves.iter_mut().zip(&args.curves) {
            *name = path.display().to_string();
        }
    }
    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    for (file, svg) in report::metric_charts(&curves) {
        write_atomic(&args.out.join(file), &svg)?;
    }
    Ok(report::final_table(&curves))
}
