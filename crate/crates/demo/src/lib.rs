//! Browser demo for `ssmkit`.
//!
//! Shapes are ellipsoids sampled at fixed parametric points (a Fibonacci
//! lattice on the unit sphere scaled by the semi-axes), so correspondence is
//! given and nothing has to be optimized in the page. The page can
//!
//! * walk the modes of the fitted PCA model,
//! * draw compactness and specificity curves,
//! * compare a clean cohort with a jittered one by principal angles.
//!
//! The `Model*` types hold the logic and are tested natively; the
//! `#[wasm_bindgen]` wrappers only convert errors.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use wasm_bindgen::prelude::*;

use ssmkit::shapespace::{fit_pca, ShapeModel};
use ssmkit::ssm_metrics::{compactness, grassmannian, specificity};
use ssmkit::{ParticleSystem, Result};

const C_AXIS: f64 = 6.0;

/// Cohort parameters. Ranges are semi-axes in mm; `noise` is the standard
/// deviation of per-coordinate jitter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortParams {
    pub n_shapes: usize,
    pub n_points: usize,
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub noise: f64,
    pub seed: u64,
}

fn lattice(n: usize) -> Vec<Vector3<f64>> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            Vector3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

fn range(lo: f64, hi: f64) -> Result<Uniform<f64>> {
    if lo == hi {
        return Uniform::new_inclusive(lo, hi).map_err(|e| ssmkit::Error::InvalidArgument(e.to_string()));
    }
    Uniform::new(lo.min(hi), lo.max(hi)).map_err(|e| ssmkit::Error::InvalidArgument(e.to_string()))
}

pub fn ellipsoid_cohort(p: &CohortParams) -> Result<ParticleSystem> {
    if p.n_shapes < 2 || p.n_points < 4 || !(p.noise >= 0.0) {
        return Err(ssmkit::Error::InvalidArgument("need >= 2 shapes, >= 4 points and noise >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let (ua, ub) = (range(p.a.0, p.a.1)?, range(p.b.0, p.b.1)?);
    // unit draws scaled by `noise`, so cohorts differing only in noise share (a, b)
    let jitter = Normal::new(0.0, 1.0).map_err(|e| ssmkit::Error::InvalidArgument(e.to_string()))?;
    let unit = lattice(p.n_points);
    let mut ids = Vec::new();
    let mut shapes = Vec::new();
    for i in 0..p.n_shapes {
        let (a, b) = (ua.sample(&mut rng), ub.sample(&mut rng));
        let pts = unit
            .iter()
            .map(|u| {
                let e = Vector3::new(jitter.sample(&mut rng), jitter.sample(&mut rng), jitter.sample(&mut rng));
                Vector3::new(a * u.x, b * u.y, C_AXIS * u.z) + e * p.noise
            })
            .collect();
        ids.push(format!("shape_{i:03}"));
        shapes.push(pts);
    }
    ParticleSystem::new(ids, shapes)
}

/// A cohort and its PCA model.
pub struct ModelState {
    pub system: ParticleSystem,
    pub model: ShapeModel,
}

impl ModelState {
    pub fn build(p: &CohortParams) -> Result<Self> {
        let system = ellipsoid_cohort(p)?;
        let model = fit_pca(&system, true)?;
        Ok(ModelState { system, model })
    }

    /// Flattened `x, y, z` of the mean moved `sd` standard deviations along `mode`.
    pub fn walk(&self, mode: usize, sd: f64) -> Result<Vec<f64>> {
        Ok(self.model.mode_walk(mode, &[sd])?.remove(0).as_slice().to_vec())
    }

    pub fn compactness(&self) -> Vec<f64> {
        compactness(&self.model).values.iter().map(|(_, v)| *v).collect()
    }

    pub fn specificity(&self, k_max: usize, n_samples: usize, seed: u64) -> Result<Vec<f64>> {
        let c = specificity(&self.model, &self.system, k_max, n_samples, seed)?;
        Ok(c.values.iter().map(|(_, v)| *v).collect())
    }

    /// Grassmannian distance to `other`'s model for `k = 1..=k_max`.
    pub fn grassmannian(&self, other: &ModelState, k_max: usize) -> Result<Vec<f64>> {
        let k = k_max.min(self.model.n_modes()).min(other.model.n_modes());
        let c = grassmannian(&self.model, &other.model, k)?;
        Ok(c.values.iter().map(|(_, v)| *v).collect())
    }
}

fn js(e: ssmkit::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Model(ModelState);

#[wasm_bindgen]
impl Model {
    #[wasm_bindgen(constructor)]
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_shapes: usize,
        n_points: usize,
        a_min: f64,
        a_max: f64,
        b_min: f64,
        b_max: f64,
        noise: f64,
        seed: u64,
    ) -> Result<Model, JsError> {
        let p = CohortParams { n_shapes, n_points, a: (a_min, a_max), b: (b_min, b_max), noise, seed };
        ModelState::build(&p).map(Model).map_err(js)
    }

    #[wasm_bindgen(js_name = nModes)]
    pub fn n_modes(&self) -> usize {
        self.0.model.n_modes()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.0.model.eigenvalues.clone()
    }

    pub fn walk(&self, mode: usize, sd: f64) -> Result<Vec<f64>, JsError> {
        self.0.walk(mode, sd).map_err(js)
    }

    pub fn compactness(&self) -> Vec<f64> {
        self.0.compactness()
    }

    pub fn specificity(&self, k_max: usize, n_samples: usize, seed: u64) -> Result<Vec<f64>, JsError> {
        self.0.specificity(k_max, n_samples, seed).map_err(js)
    }

    pub fn grassmannian(&self, other: &Model, k_max: usize) -> Result<Vec<f64>, JsError> {
        self.0.grassmannian(&other.0, k_max).map_err(js)
    }
}
