//! Shape-model evaluation: compactness, specificity, generalization and
//! Grassmannian distance between mode subspaces.
//!
//! Distances between shapes are mean per-particle Euclidean distances, in the
//! units of the particle coordinates.

use std::fmt;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::particles::{mean_particle_distance, ParticleSystem};
use crate::shapespace::{shape_vectors, ShapeModel};

pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Compactness,
    Specificity,
    Generalization,
    Grassmannian,
}

impl Metric {
    pub const ALL: [Metric; 4] = [
        Metric::Compactness,
        Metric::Specificity,
        Metric::Generalization,
        Metric::Grassmannian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Compactness => "compactness",
            Metric::Specificity => "specificity",
            Metric::Generalization => "generalization",
            Metric::Grassmannian => "grassmannian",
        }
    }

    /// Label of the summary row: the area under the curve for compactness,
    /// the mean over `k` otherwise.
    pub fn summary_label(self) -> &'static str {
        match self {
            Metric::Compactness => "AUC",
            _ => "mean",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric `{s}`")))
    }
}

/// Metric values per mode count `k = 1, 2, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricCurve {
    pub metric: Metric,
    pub values: Vec<(usize, f64)>,
    pub summary: f64,
    /// Set when the value is a convention rather than a measurement (all-zero
    /// eigenvalues for compactness).
    pub degenerate: bool,
}

impl MetricCurve {
    fn new(metric: Metric, values: Vec<f64>) -> Self {
        let summary = if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        MetricCurve {
            metric,
            values: values.into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect(),
            summary,
            degenerate: false,
        }
    }

    pub fn value(&self, k: usize) -> Option<f64> {
        self.values.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }

    pub fn k_max(&self) -> usize {
        self.values.last().map_or(0, |(k, _)| *k)
    }

    /// Rows `metric,k,value` followed by the summary row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "k", "value"])?;
        self.write_rows(&mut w)?;
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub(crate) fn write_rows<W: Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        let name = self.metric.name();
        for (k, v) in &self.values {
            w.write_record([name, &k.to_string(), &v.to_string()])?;
        }
        w.write_record([name, self.metric.summary_label(), &self.summary.to_string()])?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Cumulative explained variance over the model's modes.
pub fn compactness(model: &ShapeModel) -> MetricCurve {
    compactness_from_eigenvalues(&model.eigenvalues)
}

/// Compactness of an explicit spectrum. All-zero (or empty) spectra give a
/// single value of 1 flagged as degenerate.
pub fn compactness_from_eigenvalues(eigenvalues: &[f64]) -> MetricCurve {
    let total: f64 = eigenvalues.iter().sum();
    if eigenvalues.is_empty() || total <= 0.0 {
        let mut c = MetricCurve::new(Metric::Compactness, vec![1.0; eigenvalues.len().max(1)]);
        c.degenerate = true;
        return c;
    }
    let mut acc = 0.0;
    let mut values: Vec<f64> = eigenvalues
        .iter()
        .map(|l| {
            acc += l;
            (acc / total).min(1.0)
        })
        .collect();
    // rounding must not leave the last entry short of 1
    if let Some(last) = values.last_mut() {
        *last = 1.0;
    }
    MetricCurve::new(Metric::Compactness, values)
}

/// Mean distance from model samples to their nearest training shape, for
/// `k = 1..=k_max` modes. Scores are drawn up front from one seeded stream.
/// Mode counts past the model's own count add nothing (zero variance).
pub fn specificity(
    model: &ShapeModel,
    train: &ParticleSystem,
    k_max: usize,
    n_samples: usize,
    seed: u64,
) -> Result<MetricCurve> {
    if n_samples < 1 {
        return Err(Error::InvalidArgument("specificity needs at least one sample".into()));
    }
    check_k(k_max)?;
    check_particles(model, train.n_particles())?;
    let training = shape_vectors(train, model.aligned, model.scaling);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<Vec<Vec<f64>>> = (1..=k_max)
        .map(|k| {
            (0..n_samples)
                .map(|_| (0..k.min(model.n_modes())).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect()
        })
        .collect();

    let values = draws
        .par_iter()
        .map(|per_k| {
            let total: f64 = per_k
                .par_iter()
                .map(|z| {
                    let s = model.from_standard_scores(z);
                    training
                        .iter()
                        .map(|t| mean_particle_distance(&s, t))
                        .fold(f64::INFINITY, f64::min)
                })
                .collect::<Vec<_>>()
                .iter()
                .sum();
            total / n_samples as f64
        })
        .collect();
    Ok(MetricCurve::new(Metric::Specificity, values))
}

/// Mean reconstruction error of `test` shapes (brought into the model frame)
/// from their first `k` mode coefficients, `k = 1..=k_max`; `k` past the
/// model's mode count reconstructs from all modes.
pub fn generalization(model: &ShapeModel, test: &ParticleSystem, k_max: usize) -> Result<MetricCurve> {
    check_k(k_max)?;
    check_particles(model, test.n_particles())?;
    if test.n_shapes() == 0 {
        return Err(Error::InvalidArgument("generalization needs test shapes".into()));
    }
    let shapes: Vec<DVector<f64>> = test.shape_vectors().iter().map(|s| model.align(s)).collect();
    let values = (1..=k_max)
        .into_par_iter()
        .map(|k| reconstruction_error(model, &shapes, k.min(model.n_modes())))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricCurve::new(Metric::Generalization, values))
}

/// Mean distance between shapes already in the model frame and their
/// reconstructions from `k` modes (`k = 0` reconstructs the mean).
pub fn reconstruction_error(model: &ShapeModel, shapes: &[DVector<f64>], k: usize) -> Result<f64> {
    let mut total = 0.0;
    for s in shapes {
        let r = model.reconstruct(&model.project(s, k)?)?;
        total += mean_particle_distance(s, &r);
    }
    Ok(total / shapes.len().max(1) as f64)
}

/// Geodesic Grassmann distance between the leading-`k` mode subspaces of two
/// models, `k = 1..=k_max`.
pub fn grassmannian(a: &ShapeModel, b: &ShapeModel, k_max: usize) -> Result<MetricCurve> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension(format!("models span {} and {} coordinates", a.dim(), b.dim())));
    }
    check_k_max(a, k_max)?;
    check_k_max(b, k_max)?;
    let values = (1..=k_max)
        .into_par_iter()
        .map(|k| grassmann_distance(&a.modes.columns(0, k).into_owned(), &b.modes.columns(0, k).into_owned()))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricCurve::new(Metric::Grassmannian, values))
}

/// `sqrt(sum theta_i^2)` over the principal angles between the column spans
/// of two orthonormal bases.
pub fn grassmann_distance(qa: &DMatrix<f64>, qb: &DMatrix<f64>) -> Result<f64> {
    Ok(principal_angles(qa, qb)?.iter().map(|t| t * t).sum::<f64>().sqrt())
}

/// Principal angles, ascending, between the spans of orthonormal `qa` and
/// `qb` (same shape). Cosines come from the singular values of `qa' qb`
/// (clamped to [-1, 1]); angles below pi/4 are taken from the sines instead,
/// where `acos` has lost most of its precision.
pub fn principal_angles(qa: &DMatrix<f64>, qb: &DMatrix<f64>) -> Result<Vec<f64>> {
    if qa.shape() != qb.shape() {
        return Err(Error::Dimension(format!("bases {:?} and {:?}", qa.shape(), qb.shape())));
    }
    let k = qa.ncols();
    if k == 0 {
        return Ok(Vec::new());
    }
    let cross = qa.transpose() * qb;
    let mut cos: Vec<f64> = cross.clone().svd(false, false).singular_values.iter().map(|c| c.clamp(-1.0, 1.0)).collect();
    cos.sort_by(|x, y| y.total_cmp(x));
    let residual = qb - qa * &cross;
    let mut sin: Vec<f64> = residual.svd(false, false).singular_values.iter().map(|s| s.clamp(0.0, 1.0)).collect();
    sin.sort_by(|x, y| x.total_cmp(y));
    // the residual has k singular values only when the ambient dimension allows
    sin.resize(k, 0.0);
    Ok(cos
        .iter()
        .zip(&sin)
        .map(|(&c, &s)| if c * c >= 0.5 { s.asin() } else { c.acos() })
        .collect())
}

fn check_k(k_max: usize) -> Result<()> {
    if k_max == 0 {
        return Err(Error::InvalidArgument("k_max must be at least 1".into()));
    }
    Ok(())
}

fn check_k_max(model: &ShapeModel, k_max: usize) -> Result<()> {
    check_k(k_max)?;
    if k_max > model.n_modes() {
        return Err(Error::InvalidArgument(format!(
            "k_max {k_max} exceeds the model's {} modes",
            model.n_modes()
        )));
    }
    Ok(())
}

fn check_particles(model: &ShapeModel, n: usize) -> Result<()> {
    if n * 3 != model.dim() {
        return Err(Error::Dimension(format!(
            "shapes have {n} particles, model {}",
            model.n_particles
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
