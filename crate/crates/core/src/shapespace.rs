//! PCA shape spaces over particle systems.
//!
//! Shape vectors are flattened particle coordinates `x1 y1 z1 x2 ...`. Models
//! are fitted on Procrustes-aligned vectors by default; shapes from outside the
//! training set are brought into the model frame with [`ShapeModel::align`]
//! before projection.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::particles::{flatten, unflatten, ParticleSystem};
use crate::procrustes::{align, generalized_procrustes};

/// Eigenvalues below this fraction of the largest are dropped.
pub const RELATIVE_EIGEN_CUTOFF: f64 = 1e-10;

const GPA_MAX_ITER: usize = 200;
const GPA_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    pub mean: DVector<f64>,
    /// Orthonormal columns, one per mode (3N x K).
    pub modes: DMatrix<f64>,
    /// Variances per mode, descending.
    pub eigenvalues: Vec<f64>,
    pub n_particles: usize,
    pub n_train: usize,
    pub aligned: bool,
    pub scaling: bool,
}

/// Procrustes-aligned (or raw) shape vectors of a system, in shape order.
pub fn shape_vectors(system: &ParticleSystem, align_shapes: bool, scaling: bool) -> Vec<DVector<f64>> {
    if !align_shapes {
        return system.shape_vectors();
    }
    let gpa = generalized_procrustes(&system.particles, scaling, GPA_MAX_ITER, GPA_TOL);
    gpa.transforms
        .iter()
        .zip(&system.particles)
        .map(|(t, s)| flatten(&t.apply_all(s)))
        .collect()
}

/// Fits a PCA model (sample covariance, divisor `M - 1`).
pub fn fit_pca(system: &ParticleSystem, align_shapes: bool) -> Result<ShapeModel> {
    fit_pca_with(system, align_shapes, false)
}

pub fn fit_pca_with(system: &ParticleSystem, align_shapes: bool, scaling: bool) -> Result<ShapeModel> {
    let m = system.n_shapes();
    if m < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 shapes, got {m}")));
    }
    let vectors = shape_vectors(system, align_shapes, scaling);
    let mut model = fit_vectors(&vectors)?;
    model.aligned = align_shapes;
    model.scaling = scaling;
    Ok(model)
}

/// PCA of raw shape vectors (no alignment).
pub fn fit_vectors(vectors: &[DVector<f64>]) -> Result<ShapeModel> {
    let m = vectors.len();
    if m < 2 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 2 shapes, got {m}")));
    }
    let dim = vectors[0].len();
    if dim == 0 || dim % 3 != 0 || vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Dimension("shape vectors must share a length divisible by 3".into()));
    }
    let mean = vectors.iter().fold(DVector::zeros(dim), |acc, v| acc + v) / m as f64;
    let mut centered = DMatrix::zeros(dim, m);
    for (j, v) in vectors.iter().enumerate() {
        centered.set_column(j, &(v - &mean));
    }
    let denom = (m - 1) as f64;
    let max_rank = (m - 1).min(dim);

    // Eigenpairs sorted by descending eigenvalue.
    let (eigenvalues, mut modes): (Vec<f64>, Vec<DVector<f64>>) = if dim > m {
        let gram = centered.transpose() * &centered / denom;
        let eig = SymmetricEigen::new(gram);
        let mut pairs: Vec<(f64, DVector<f64>)> = eig
            .eigenvalues
            .iter()
            .zip(eig.eigenvectors.column_iter())
            .map(|(&l, v)| (l.max(0.0), v.into_owned()))
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let lmax = pairs[0].0;
        pairs
            .into_iter()
            .take(max_rank)
            .filter(|(l, _)| lmax > 0.0 && *l >= RELATIVE_EIGEN_CUTOFF * lmax && *l > 0.0)
            .map(|(l, v)| {
                let mode = &centered * v / (denom * l).sqrt();
                (l, mode)
            })
            .unzip()
    } else {
        let cov = &centered * centered.transpose() / denom;
        let eig = SymmetricEigen::new(cov);
        let mut pairs: Vec<(f64, DVector<f64>)> = eig
            .eigenvalues
            .iter()
            .zip(eig.eigenvectors.column_iter())
            .map(|(&l, v)| (l.max(0.0), v.into_owned()))
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let lmax = pairs[0].0;
        pairs
            .into_iter()
            .take(max_rank)
            .filter(|(l, _)| lmax > 0.0 && *l >= RELATIVE_EIGEN_CUTOFF * lmax && *l > 0.0)
            .unzip()
    };

    let mut eigenvalues = eigenvalues;
    if eigenvalues.is_empty() {
        // No variance at all: keep canonical zero-variance modes so the model
        // still has a well-defined (trivial) subspace.
        eigenvalues = vec![0.0; max_rank];
        modes = (0..max_rank)
            .map(|i| {
                let mut e = DVector::zeros(dim);
                e[i] = 1.0;
                e
            })
            .collect();
    }

    orthonormalize(&mut modes);
    for mode in modes.iter_mut() {
        apply_sign_convention(mode);
    }
    let k = modes.len();
    let mut mat = DMatrix::zeros(dim, k);
    for (j, v) in modes.iter().enumerate() {
        mat.set_column(j, v);
    }
    Ok(ShapeModel {
        mean,
        modes: mat,
        eigenvalues,
        n_particles: dim / 3,
        n_train: m,
        aligned: false,
        scaling: false,
    })
}

/// Two passes of modified Gram-Schmidt, in order.
fn orthonormalize(vs: &mut [DVector<f64>]) {
    for _ in 0..2 {
        for i in 0..vs.len() {
            for j in 0..i {
                let (head, tail) = vs.split_at_mut(i);
                let proj = tail[0].dot(&head[j]);
                tail[0].axpy(-proj, &head[j], 1.0);
            }
            let n = vs[i].norm();
            if n > 0.0 {
                vs[i] /= n;
            }
        }
    }
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
pub fn apply_sign_convention(v: &mut DVector<f64>) {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        v.neg_mut();
    }
}

impl ShapeModel {
    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn total_variance(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    /// Brings a shape vector into the model frame (Procrustes to the mean when
    /// the model was fitted on aligned shapes).
    pub fn align(&self, s: &DVector<f64>) -> DVector<f64> {
        if !self.aligned {
            return s.clone();
        }
        let pts = unflatten(s);
        let target = unflatten(&self.mean);
        flatten(&align(&pts, &target, self.scaling).apply_all(&pts))
    }

    /// First `k` mode coefficients of `s` (assumed in the model frame).
    pub fn project(&self, s: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        self.check_k(k)?;
        if s.len() != self.dim() {
            return Err(Error::Dimension(format!("shape has {} entries, model {}", s.len(), self.dim())));
        }
        let d = s - &self.mean;
        Ok(self.modes.columns(0, k).transpose() * d)
    }

    /// `mean + modes[:, :len] * coeffs`.
    pub fn reconstruct(&self, coeffs: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_k(coeffs.len())?;
        Ok(&self.mean + self.modes.columns(0, coeffs.len()) * coeffs)
    }

    /// Gaussian sample from the first `k` modes.
    pub fn sample(&self, k: usize, seed: u64) -> Result<DVector<f64>> {
        self.check_k(k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(self.from_standard_scores(&z))
    }

    /// `mean + sum_i z_i sqrt(lambda_i) mode_i`.
    pub fn from_standard_scores(&self, z: &[f64]) -> DVector<f64> {
        let mut s = self.mean.clone();
        for (i, zi) in z.iter().enumerate() {
            let w = zi * self.eigenvalues[i].sqrt();
            if w != 0.0 {
                s.axpy(w, &self.modes.column(i), 1.0);
            }
        }
        s
    }

    /// `mean + step * sqrt(lambda) * mode` for each step (in standard deviations).
    pub fn mode_walk(&self, mode_index: usize, steps: &[f64]) -> Result<Vec<DVector<f64>>> {
        if mode_index >= self.n_modes() {
            return Err(Error::InvalidArgument(format!(
                "mode {mode_index} out of range (model has {})",
                self.n_modes()
            )));
        }
        let sd = self.eigenvalues[mode_index].sqrt();
        Ok(steps
            .iter()
            .map(|&s| {
                let mut v = self.mean.clone();
                if s * sd != 0.0 {
                    v.axpy(s * sd, &self.modes.column(mode_index), 1.0);
                }
                v
            })
            .collect())
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k > self.n_modes() {
            return Err(Error::InvalidArgument(format!(
                "requested {k} modes, model has {}",
                self.n_modes()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ShapeModelJson::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: ShapeModelJson = serde_json::from_str(text)?;
        j.try_into()
    }
}

/// On-disk form; `modes` is row-major 3N x K.
#[derive(Debug, Serialize, Deserialize)]
struct ShapeModelJson {
    mean: Vec<f64>,
    eigenvalues: Vec<f64>,
    modes: Vec<f64>,
    n_particles: usize,
    #[serde(default)]
    n_train: usize,
    #[serde(default)]
    aligned: bool,
    #[serde(default)]
    scaling: bool,
}

impl From<&ShapeModel> for ShapeModelJson {
    fn from(m: &ShapeModel) -> Self {
        let (rows, cols) = m.modes.shape();
        let mut modes = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                modes.push(m.modes[(r, c)]);
            }
        }
        ShapeModelJson {
            mean: m.mean.as_slice().to_vec(),
            eigenvalues: m.eigenvalues.clone(),
            modes,
            n_particles: m.n_particles,
            n_train: m.n_train,
            aligned: m.aligned,
            scaling: m.scaling,
        }
    }
}

impl TryFrom<ShapeModelJson> for ShapeModel {
    type Error = Error;

    fn try_from(j: ShapeModelJson) -> Result<Self> {
        let dim = j.mean.len();
        let k = j.eigenvalues.len();
        if dim != 3 * j.n_particles || j.modes.len() != dim * k {
            return Err(Error::Dimension("inconsistent shape model sizes".into()));
        }
        Ok(ShapeModel {
            mean: DVector::from_vec(j.mean),
            modes: DMatrix::from_row_slice(dim, k, &j.modes),
            eigenvalues: j.eigenvalues,
            n_particles: j.n_particles,
            n_train: j.n_train,
            aligned: j.aligned,
            scaling: j.scaling,
        })
    }
}

/// File name for a mode-walk export, e.g. `mode0_sd+2.particles`.
pub fn mode_walk_filename(mode: usize, step: f64) -> String {
    let sign = if step < 0.0 { '-' } else { '+' };
    format!("mode{mode}_sd{sign}{}.particles", step.abs())
}
