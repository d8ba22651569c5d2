//! `ssmkit`: shape model benchmarking from segmentation masks.
//!
//! Exit status: 0 on success, 1 for invalid input (arguments, configs,
//! manifests, files), 2 for runtime failures (I/O and the like).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use ssmkit::io::{load_manifest, CohortManifest, Source, Split};
use ssmkit::pipeline::{
    plot, read_manifest, study, tools, MetricParams, PipelineConfig, Provenance, Strategy,
};
use ssmkit::seg_metrics::save_records;
use ssmkit::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "ssmkit", version, about = "Statistical shape model construction and evaluation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON config: a pipeline config, or a study spec for `synth`
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR", default_value = "ssmkit-out")]
    out: PathBuf,
    /// Seed for optimization, sampling and generation
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (falls back to SSMKIT_THREADS, then all cores)
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Reuse completed stages found in the output directory
    #[arg(long, global = true)]
    resume: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract surfaces of every manifest mask as PLY meshes
    Surface(ManifestArg),
    /// Optimize correspondences for one cohort from a single seed particle
    Optimize(CohortArgs),
    /// Optimize a cohort against a fixed template particle system
    Warmstart {
        #[command(flatten)]
        cohort: CohortArgs,
        /// Directory of template `.particles` files
        #[arg(long, value_name = "DIR")]
        template: PathBuf,
    },
    /// Manual training SSM, every test cohort placed in its frame
    Strategy1(ManifestArg),
    /// One training SSM per method from its own predictions
    Strategy2(ManifestArg),
    /// Dice, Jaccard and surface distances of method masks against manual masks
    Segmetrics {
        #[command(flatten)]
        manifest: ManifestArg,
        /// Comma-separated methods (default: all)
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
    },
    /// Export the mean shape and mode walks of a particle system's PCA model
    Modes {
        /// Directory of `.particles` files
        #[arg(long, value_name = "DIR")]
        particles: PathBuf,
        /// Number of modes to walk
        #[arg(long, default_value_t = 2)]
        modes: usize,
        /// Steps in standard deviations
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "-2,-1,0,1,2")]
        steps: Vec<f64>,
        /// Fit PCA without Procrustes alignment
        #[arg(long)]
        no_align: bool,
    },
    /// Generate a synthetic cohort with simulated method predictions
    Synth,
    /// Draw a metric CSV as an SVG line chart
    Plot {
        /// Report CSV (method,metric,k,value or metric,k,value)
        #[arg(long, value_name = "PATH")]
        csv: PathBuf,
        /// Output SVG (default: <out>/<csv name>.svg)
        #[arg(long, value_name = "PATH")]
        output: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct ManifestArg {
    /// Manifest path (overrides the config's)
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CohortArgs {
    #[command(flatten)]
    manifest: ManifestArg,
    #[arg(long, value_parser = parse_split, default_value = "train")]
    split: Split,
    /// `gt` or a method name
    #[arg(long, default_value = "gt")]
    source: String,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(format!("expected `train` or `test`, got `{s}`")),
    }
}

fn source(label: &str) -> Source {
    if label == "gt" {
        Source::GroundTruth
    } else {
        Source::Method(label.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn threads(flag: Option<usize>) -> Result<Option<usize>> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("SSMKIT_THREADS") {
            Ok(v) if !v.trim().is_empty() => Some(
                v.trim()
                    .parse()
                    .map_err(|_| invalid(format!("SSMKIT_THREADS must be a positive integer, got `{v}`")))?,
            ),
            _ => None,
        },
    };
    if n == Some(0) {
        return Err(invalid("thread count must be at least 1"));
    }
    Ok(n)
}

/// Pipeline config from `--config`, or defaults when only a manifest is given.
fn pipeline_config(g: &Global, manifest: &ManifestArg, strategy: Strategy) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => {
            let m = manifest
                .manifest
                .clone()
                .ok_or_else(|| invalid("a manifest is required (--manifest or --config)"))?;
            PipelineConfig::new(m, strategy)
        }
    };
    if let Some(m) = &manifest.manifest {
        cfg.manifest = m.clone();
    }
    if let Some(seed) = g.seed {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn provenance(g: &Global, command: &str, manifest: Option<&Path>, seed: u64, config: serde_json::Value) -> Result<()> {
    Provenance::new(command, manifest, seed, &config)?.save(&g.out)
}

fn manifest_of(cfg: &PipelineConfig) -> Result<CohortManifest> {
    load_manifest(&cfg.manifest)
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    if let Some(n) = threads(g.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| invalid(format!("cannot configure {n} threads: {e}")))?;
    }

    match &cli.command {
        Command::Surface(m) => {
            let cfg = pipeline_config(g, m, Strategy::Strategy1)?;
            let paths = tools::extract_surfaces(&manifest_of(&cfg)?, &g.out.join("surfaces"))?;
            info!("wrote {} meshes", paths.len());
            provenance(g, "surface", Some(&cfg.manifest), cfg.optimizer.seed, serde_json::to_value(&cfg)?)?;
        }
        Command::Optimize(c) => {
            let cfg = pipeline_config(g, &c.manifest, Strategy::Strategy1)?;
            let manifest = read_manifest(&cfg.manifest)?;
            let sys = tools::optimize_cohort(&manifest, c.split, &source(&c.source), &cfg.optimizer, &g.out, g.resume)?;
            info!("{} shapes x {} particles in {}", sys.n_shapes(), sys.n_particles(), g.out.join("particles").display());
            provenance(g, "optimize", Some(&cfg.manifest), cfg.optimizer.seed, serde_json::to_value(&cfg)?)?;
        }
        Command::Warmstart { cohort: c, template } => {
            let cfg = pipeline_config(g, &c.manifest, Strategy::Strategy1)?;
            let manifest = read_manifest(&cfg.manifest)?;
            let template = tools::read_particle_dir(template)?;
            let mut params = cfg.optimizer.clone();
            params.target_particles = template.n_particles();
            tools::warmstart_cohort(&manifest, c.split, &source(&c.source), &template, &params, &g.out, g.resume)?;
            provenance(g, "warmstart", Some(&cfg.manifest), cfg.optimizer.seed, serde_json::to_value(&cfg)?)?;
        }
        Command::Strategy1(m) | Command::Strategy2(m) => {
            let strategy = if matches!(cli.command, Command::Strategy1(_)) {
                Strategy::Strategy1
            } else {
                Strategy::Strategy2
            };
            let mut cfg = pipeline_config(g, m, strategy)?;
            cfg.strategy = strategy;
            let report = ssmkit::pipeline::run(&cfg, &g.out, g.resume)?;
            info!("{} rows written to {}", report.rows.len(), g.out.join(strategy.name()).display());
        }
        Command::Segmetrics { manifest: m, methods } => {
            let cfg = pipeline_config(g, m, Strategy::Strategy1)?;
            let records = tools::segmentation_scores(&manifest_of(&cfg)?, methods.as_deref())?;
            std::fs::create_dir_all(&g.out).map_err(|e| Error::Io { path: g.out.clone(), source: e })?;
            save_records(&records, g.out.join("segmetrics.csv"))?;
            provenance(g, "segmetrics", Some(&cfg.manifest), cfg.optimizer.seed, serde_json::to_value(&cfg)?)?;
        }
        Command::Modes { particles, modes, steps, no_align } => {
            let sys = tools::read_particle_dir(particles)?;
            let metrics = MetricParams { align: !no_align, ..MetricParams::default() };
            tools::export_modes(&sys, metrics.align, metrics.scaling, *modes, steps, &g.out.join("modes"))?;
            let config = serde_json::json!({ "particles": particles, "modes": modes, "steps": steps, "align": metrics.align });
            provenance(g, "modes", None, 0, config)?;
        }
        Command::Synth => {
            let path = g.config.as_ref().ok_or_else(|| invalid("synth needs --config with a study spec"))?;
            let mut spec = study::StudySpec::load(path)?;
            if let Some(seed) = g.seed {
                spec.cohort.seed = seed;
            }
            let manifest = study::write_study(&spec, &g.out)?;
            info!("{} volumes written", manifest.shapes.len());
            provenance(g, "synth", None, spec.cohort.seed, serde_json::to_value(&spec)?)?;
        }
        Command::Plot { csv, output } => {
            let svg = match output {
                Some(p) => p.clone(),
                None => {
                    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("plot");
                    g.out.join(format!("{stem}.svg"))
                }
            };
            plot::plot_csv(csv, &svg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
