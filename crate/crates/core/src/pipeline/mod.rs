//! Benchmark runs over a cohort manifest.
//!
//! Strategy 1 builds the training SSM from manual segmentations and places
//! every test cohort (manual and predicted) in its correspondence frame.
//! Strategy 2 builds one training SSM per method from that method's own
//! predictions and never reads manual training masks.
//!
//! Each optimization is a stage with its own directory under the output root.
//! A stage records a key over its inputs; with `resume` set, a stage whose key
//! matches is read back instead of recomputed. Particle files round-trip
//! exactly, so resumed and fresh runs report the same numbers.

pub mod plot;
mod stages;
pub mod study;
pub mod tools;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{CohortManifest, ManifestEntry, Source, Split};
use crate::optimizer::OptimizerParams;
use crate::particles::ParticleSystem;
use crate::shapespace::{fit_pca_with, ShapeModel};
use crate::ssm_metrics::{self, Metric, MetricCurve, DEFAULT_SAMPLES, DEFAULT_SEED};

pub use stages::{hex_digest, Stages};

/// Label of the manual-segmentation baseline in reports.
pub const BASELINE: &str = "gt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Strategy1,
    Strategy2,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Strategy1 => "strategy1",
            Strategy::Strategy2 => "strategy2",
        }
    }
}

/// Which subspaces the Grassmannian compares for a method.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrassmannPair {
    /// Manual-segmentation test model against the method's test model.
    #[default]
    GtTest,
    /// The method's training model against its test model.
    TrainTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricParams {
    pub k_max: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Procrustes-align particle systems before PCA.
    pub align: bool,
    pub scaling: bool,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            k_max: 5,
            n_samples: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
            align: true,
            scaling: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    #[serde(default)]
    pub optimizer: OptimizerParams,
    #[serde(default)]
    pub metrics: MetricParams,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Methods to evaluate; all methods in the manifest when absent.
    #[serde(default)]
    pub methods: Option<Vec<String>>,
    #[serde(default)]
    pub grassmann_pair: GrassmannPair,
}

fn default_strategy() -> Strategy {
    Strategy::Strategy1
}

impl PipelineConfig {
    pub fn new(manifest: impl Into<PathBuf>, strategy: Strategy) -> Self {
        PipelineConfig {
            manifest: manifest.into(),
            optimizer: OptimizerParams::default(),
            metrics: MetricParams::default(),
            strategy,
            methods: None,
            grassmann_pair: GrassmannPair::default(),
        }
    }

    /// Reads a JSON config; a relative manifest path is taken from the
    /// config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        if cfg.manifest.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.manifest = dir.join(&cfg.manifest);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets both the optimizer and the metric seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.optimizer.seed = seed;
        self.metrics.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.metrics.k_max == 0 {
            return Err(Error::InvalidArgument("metrics.k_max must be at least 1".into()));
        }
        if self.metrics.n_samples == 0 {
            return Err(Error::InvalidArgument("metrics.n_samples must be at least 1".into()));
        }
        if let Some(m) = &self.methods {
            if m.iter().any(|x| x == BASELINE) {
                return Err(Error::InvalidArgument(format!("`{BASELINE}` is reserved for manual segmentations")));
            }
        }
        Ok(())
    }

    fn fit(&self, sys: &ParticleSystem) -> Result<ShapeModel> {
        fit_pca_with(sys, self.metrics.align, self.metrics.scaling)
    }
}

/// Parses the manifest without requiring every volume to exist; each stage
/// checks the files it reads.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<CohortManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    CohortManifest::from_json(&text, path.parent().unwrap_or_else(|| Path::new(".")))
}

/// One metric curve for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub curve: MetricCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub strategy: Strategy,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn curve(&self, method: &str, metric: Metric) -> Option<&MetricCurve> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.curve.metric == metric)
            .map(|r| &r.curve)
    }

    pub fn methods(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.method.as_str()) {
                out.push(&r.method);
            }
        }
        out
    }

    /// `method,metric,k,value` rows for the selected metrics, including the
    /// summary row of each curve.
    pub fn write_csv<W: Write>(&self, out: W, metric: Option<Metric>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "metric", "k", "value"])?;
        for r in self.rows.iter().filter(|r| metric.is_none_or(|m| r.curve.metric == m)) {
            let name = r.curve.metric.name();
            for (k, v) in &r.curve.values {
                w.write_record([r.method.as_str(), name, &k.to_string(), &v.to_string()])?;
            }
            w.write_record([r.method.as_str(), name, r.curve.metric.summary_label(), &r.curve.summary.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Writes `<metric>.csv` for each metric present and `summary.csv`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut written = Vec::new();
        let mut save = |name: String, metric: Option<Metric>| -> Result<()> {
            let path = dir.join(name);
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            self.write_csv(std::io::BufWriter::new(file), metric)?;
            written.push(path);
            Ok(())
        };
        for m in Metric::ALL {
            if self.rows.iter().any(|r| r.curve.metric == m) {
                save(format!("{}.csv", m.name()), Some(m))?;
            }
        }
        save("summary.csv".into(), None)?;
        Ok(written)
    }
}

/// Run metadata written next to the reports. Two runs with equal blocks
/// produce byte-identical CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub manifest_sha256: Option<String>,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new(command: &str, manifest: Option<&Path>, seed: u64, config: &impl Serialize) -> Result<Self> {
        let manifest_sha256 = match manifest {
            Some(p) => Some(hex_digest(&std::fs::read(p).map_err(|e| Error::io(p, e))?)),
            None => None,
        };
        Ok(Provenance {
            tool: "ssmkit".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            manifest_sha256,
            seed,
            config: serde_json::to_value(config)?,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("provenance.json");
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(&path, e))
    }
}

/// Runs the configured strategy and writes provenance and reports under `out`.
pub fn run(cfg: &PipelineConfig, out: &Path, resume: bool) -> Result<Report> {
    cfg.validate()?;
    let report = match cfg.strategy {
        Strategy::Strategy1 => run_strategy1(cfg, out, resume)?,
        Strategy::Strategy2 => run_strategy2(cfg, out, resume)?,
    };
    Provenance::new(cfg.strategy.name(), Some(&cfg.manifest), cfg.optimizer.seed, cfg)?.save(out)?;
    report.save(out.join(cfg.strategy.name()))?;
    Ok(report)
}

fn selected_methods(cfg: &PipelineConfig, manifest: &CohortManifest) -> Result<Vec<String>> {
    let available = manifest.methods();
    let methods = match &cfg.methods {
        Some(m) => {
            if let Some(bad) = m.iter().find(|x| !available.contains(x)) {
                return Err(Error::InvalidArgument(format!("method `{bad}` is not in the manifest")));
            }
            m.clone()
        }
        None => available,
    };
    if methods.is_empty() {
        return Err(Error::InvalidArgument("the manifest has no method predictions".into()));
    }
    if methods.iter().any(|m| m == BASELINE) {
        return Err(Error::InvalidArgument(format!("method label `{BASELINE}` is reserved")));
    }
    Ok(methods)
}

fn require<'a>(manifest: &'a CohortManifest, split: Split, source: &Source) -> Result<Vec<&'a ManifestEntry>> {
    let e = manifest.select(split, source);
    if e.is_empty() {
        let split = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        return Err(Error::Manifest(format!("no {split} segmentations from {source}")));
    }
    Ok(e)
}

/// Test cohorts must list the same ids in the same order for every source,
/// so that per-shape comparisons line up.
fn check_same_ids(reference: &[&ManifestEntry], other: &[&ManifestEntry], what: &str) -> Result<()> {
    let a: Vec<&str> = reference.iter().map(|e| e.id.as_str()).collect();
    let b: Vec<&str> = other.iter().map(|e| e.id.as_str()).collect();
    if a != b {
        return Err(Error::Manifest(format!("{what}: shape ids differ from the reference cohort")));
    }
    Ok(())
}

/// `k` range shared by a metric and the models it reads.
fn clamp_k(cfg: &PipelineConfig, what: &str, available: usize) -> Option<usize> {
    let k = cfg.metrics.k_max.min(available);
    if k < cfg.metrics.k_max {
        warn!("{what}: k_max {} reduced to {k} (modes available)", cfg.metrics.k_max);
    }
    (k > 0).then_some(k)
}

fn grassmann_row(
    cfg: &PipelineConfig,
    method: &str,
    a: &ShapeModel,
    b: &ShapeModel,
) -> Result<Option<ReportRow>> {
    match clamp_k(cfg, &format!("{method} grassmannian"), a.n_modes().min(b.n_modes())) {
        Some(k) => Ok(Some(ReportRow {
            method: method.to_string(),
            curve: ssm_metrics::grassmannian(a, b, k)?,
        })),
        None => {
            warn!("{method}: no modes to compare, grassmannian skipped");
            Ok(None)
        }
    }
}

/// Manual training SSM from origin, then every test cohort warm-started on it.
pub fn run_strategy1(cfg: &PipelineConfig, out: &Path, resume: bool) -> Result<Report> {
    let manifest = read_manifest(&cfg.manifest)?;
    let methods = selected_methods(cfg, &manifest)?;
    let gt = Source::GroundTruth;
    let gt_train = require(&manifest, Split::Train, &gt)?;
    let gt_test = require(&manifest, Split::Test, &gt)?;
    let method_test: Vec<Vec<&ManifestEntry>> = methods
        .iter()
        .map(|m| {
            let e = require(&manifest, Split::Test, &Source::Method(m.clone()))?;
            check_same_ids(&gt_test, &e, m)?;
            Ok(e)
        })
        .collect::<Result<_>>()?;

    let stages = Stages::new(out.join(Strategy::Strategy1.name()), resume, &cfg.optimizer);
    let train = stages.origin("gt/train", &gt_train)?;
    let test = stages.warmstart("gt/test", &gt_test, &train)?;
    let train_model = cfg.fit(&train.system)?;
    let test_model = cfg.fit(&test.system)?;

    let mut sources = vec![(BASELINE.to_string(), test)];
    for (m, entries) in methods.iter().zip(&method_test) {
        sources.push((m.clone(), stages.warmstart(&format!("{m}/test"), entries, &train)?));
    }

    let mut rows = Vec::new();
    for (label, sys) in &sources {
        let model = cfg.fit(&sys.system)?;
        if let Some(k) = clamp_k(cfg, &format!("{label} generalization"), train_model.n_modes()) {
            rows.push(ReportRow {
                method: label.clone(),
                curve: ssm_metrics::generalization(&train_model, &sys.system, k)?,
            });
        }
        let reference = match cfg.grassmann_pair {
            GrassmannPair::GtTest => &test_model,
            GrassmannPair::TrainTest => &train_model,
        };
        rows.extend(grassmann_row(cfg, label, reference, &model)?);
    }
    info!("strategy 1 finished for {} methods", methods.len());
    Ok(Report { strategy: Strategy::Strategy1, rows })
}

/// Per source: training SSM from origin on its own training masks, its test
/// masks warm-started on it. The manual baseline is included when manual
/// training masks are on disk; the methods never read them.
pub fn run_strategy2(cfg: &PipelineConfig, out: &Path, resume: bool) -> Result<Report> {
    let manifest = read_manifest(&cfg.manifest)?;
    let methods = selected_methods(cfg, &manifest)?;
    let gt = Source::GroundTruth;
    let gt_test = manifest.select(Split::Test, &gt);
    let gt_train = manifest.select(Split::Train, &gt);
    let baseline = !gt_train.is_empty() && gt_train.iter().all(|e| e.volume.is_file());
    if !baseline {
        info!("manual training masks unavailable; baseline omitted");
    }
    if gt_test.is_empty() {
        warn!("no manual test masks; grassmannian against {BASELINE} skipped");
    }

    let mut sources: Vec<(String, Source)> = Vec::new();
    if baseline {
        sources.push((BASELINE.to_string(), gt.clone()));
    }
    sources.extend(methods.iter().map(|m| (m.clone(), Source::Method(m.clone()))));
    let mut inputs = Vec::new();
    for (label, source) in &sources {
        let train = require(&manifest, Split::Train, source)?;
        let test = require(&manifest, Split::Test, source)?;
        if !gt_test.is_empty() {
            check_same_ids(&gt_test, &test, label)?;
        }
        inputs.push((label, train, test));
    }

    let stages = Stages::new(out.join(Strategy::Strategy2.name()), resume, &cfg.optimizer);
    let mut rows = Vec::new();
    for (label, train_entries, test_entries) in inputs {
        let train = stages.origin(&format!("{label}/train"), &train_entries)?;
        let test = stages.warmstart(&format!("{label}/test"), &test_entries, &train)?;
        let train_model = cfg.fit(&train.system)?;
        let test_model = cfg.fit(&test.system)?;

        rows.push(ReportRow { method: label.clone(), curve: ssm_metrics::compactness(&train_model) });
        if let Some(k) = clamp_k(cfg, &format!("{label} specificity"), train_model.n_modes()) {
            let curve = ssm_metrics::specificity(&train_model, &train.system, k, cfg.metrics.n_samples, cfg.metrics.seed)?;
            rows.push(ReportRow { method: label.clone(), curve });
            let curve = ssm_metrics::generalization(&train_model, &test.system, k)?;
            rows.push(ReportRow { method: label.clone(), curve });
        }
        match cfg.grassmann_pair {
            GrassmannPair::TrainTest => rows.extend(grassmann_row(cfg, label, &train_model, &test_model)?),
            GrassmannPair::GtTest if !gt_test.is_empty() => {
                // manual test masks placed in this source's own frame
                let reference = if label == BASELINE {
                    test_model.clone()
                } else {
                    cfg.fit(&stages.warmstart(&format!("{label}/gt-test"), &gt_test, &train)?.system)?
                };
                rows.extend(grassmann_row(cfg, label, &reference, &test_model)?);
            }
            GrassmannPair::GtTest => {}
        }
    }
    Ok(Report { strategy: Strategy::Strategy2, rows })
}

/// Per-method mean of each metric's summary value, for quick comparisons.
pub fn summaries(report: &Report) -> BTreeMap<(String, Metric), f64> {
    report
        .rows
        .iter()
        .map(|r| ((r.method.clone(), r.curve.metric), r.curve.summary))
        .collect()
}

#[cfg(test)]
mod tests;
