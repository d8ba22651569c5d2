//! The particle entropy objective and its analytic gradient.
//!
//! `Q = alpha * H(Z) - sum_k H(x^k)` where
//!
//! * `H(Z) = 1/2 log det(Sigma + eps I)` is the Gaussian entropy of the
//!   aligned shape vectors (covariance with divisor `M - 1`), evaluated through
//!   the `M x M` Gram matrix;
//! * `H(x^k)` is the Parzen (isotropic Gaussian kernel) entropy estimate of the
//!   particles on shape `k`, with one bandwidth per particle.
//!
//! Bandwidths, the regularizer `eps` and the Procrustes transforms are frozen
//! in an [`EvalContext`]; with those fixed the objective is smooth in the
//! particle positions and the gradient below is exact.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::particles::Vec3;
use crate::procrustes::{generalized_procrustes, Similarity};

/// Effective neighbourhood size for bandwidth selection.
pub const BANDWIDTH_NEIGHBOURS: usize = 6;
/// Covariance regularizer relative to the mean per-dimension variance.
/// Much smaller values turn the log-determinant into a stiff barrier against
/// any per-shape deviation, and particles then bunch up rather than spread.
pub const EPSILON_RELATIVE: f64 = 1e-2;
/// Lower bound on the regularizer relative to the mean squared shape radius.
pub const EPSILON_FLOOR_RELATIVE: f64 = 1e-12;

const GPA_MAX_ITER: usize = 20;
const GPA_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    /// `alpha * correspondence - sampling`.
    pub total: f64,
    /// `H(Z)`, unweighted.
    pub correspondence: f64,
    /// `sum_k H(x^k)` over the free shapes.
    pub sampling: f64,
}

/// Below this many particles a similarity fit absorbs most of the shape
/// (two points align to any pair of equal separation), so shapes are compared
/// in world coordinates.
pub const MIN_ALIGN_PARTICLES: usize = 8;

fn alignable(shapes: &[Vec<Vec3>]) -> bool {
    shapes[0].len() >= MIN_ALIGN_PARTICLES
}

/// Quantities held fixed while evaluating and differentiating the objective.
#[derive(Debug, Clone)]
pub struct EvalContext {
    /// One per shape (frozen shapes first).
    pub transforms: Vec<Similarity>,
    /// One vector per free shape.
    pub bandwidths: Vec<Vec<f64>>,
    pub epsilon: f64,
    /// Multiplier on the relative regularizer, annealed down to 1 during optimization.
    pub epsilon_boost: f64,
    /// Number of leading shapes that are frozen (template cohort).
    pub n_frozen: usize,
}

impl EvalContext {
    /// Fresh context for `shapes`, the first `n_frozen` of which are fixed.
    pub fn new(shapes: &[Vec<Vec3>], n_frozen: usize, align: bool, scaling: bool) -> Self {
        let transforms = if align && shapes.len() >= 2 && alignable(shapes) {
            generalized_procrustes(shapes, scaling, GPA_MAX_ITER, GPA_TOL).transforms
        } else {
            vec![Similarity::identity(); shapes.len()]
        };
        let mut ctx = EvalContext {
            transforms,
            bandwidths: Vec::new(),
            epsilon: 0.0,
            epsilon_boost: 1.0,
            n_frozen,
        };
        ctx.refresh_bandwidths(&shapes[n_frozen..]);
        ctx.refresh_epsilon(shapes);
        ctx
    }

    pub fn refresh_alignment(&mut self, shapes: &[Vec<Vec3>], scaling: bool) {
        if shapes.len() >= 2 && alignable(shapes) {
            self.transforms = generalized_procrustes(shapes, scaling, GPA_MAX_ITER, GPA_TOL).transforms;
        }
    }

    pub fn refresh_bandwidths(&mut self, free: &[Vec<Vec3>]) {
        self.bandwidths = free.par_iter().map(|s| bandwidths(s)).collect();
    }

    pub fn refresh_epsilon(&mut self, shapes: &[Vec<Vec3>]) {
        self.epsilon = regularizer(&aligned_vectors(shapes, &self.transforms), self.epsilon_boost);
    }
}

/// Per-particle kernel width: RMS distance to the nearest
/// `min(6, N - 1)` particles of the same shape.
pub fn bandwidths(points: &[Vec3]) -> Vec<f64> {
    let n = points.len();
    if n < 2 {
        return vec![1.0; n];
    }
    let k = BANDWIDTH_NEIGHBOURS.min(n - 1);
    let (lo, hi) = points.iter().fold(
        (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY)),
        |(lo, hi), p| (lo.inf(p), hi.sup(p)),
    );
    let floor = 1e-6 * (hi - lo).norm().max(f64::MIN_POSITIVE);
    let mut d2 = Vec::with_capacity(n - 1);
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            d2.clear();
            d2.extend(
                points
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, q)| (p - q).norm_squared()),
            );
            d2.select_nth_unstable_by(k - 1, f64::total_cmp);
            let mean: f64 = d2[..k].iter().sum::<f64>() / k as f64;
            mean.sqrt().max(floor)
        })
        .collect()
}

fn aligned_vectors(shapes: &[Vec<Vec3>], transforms: &[Similarity]) -> Vec<DVector<f64>> {
    shapes
        .iter()
        .zip(transforms)
        .map(|(s, t)| {
            DVector::from_iterator(
                s.len() * 3,
                s.iter().flat_map(|p| {
                    let q = t.apply(p);
                    [q.x, q.y, q.z]
                }),
            )
        })
        .collect()
}

fn regularizer(vectors: &[DVector<f64>], boost: f64) -> f64 {
    let m = vectors.len();
    let dim = vectors.first().map_or(0, |v| v.len());
    if m == 0 || dim == 0 {
        return f64::MIN_POSITIVE;
    }
    let mean = vectors.iter().fold(DVector::zeros(dim), |a, v| a + v) / m as f64;
    let trace = if m >= 2 {
        vectors.iter().map(|v| (v - &mean).norm_squared()).sum::<f64>() / (m - 1) as f64
    } else {
        0.0
    };
    // mean squared distance of particles from their shape centroid
    let n = dim / 3;
    let radius2: f64 = vectors
        .iter()
        .map(|v| {
            let c = (0..3)
                .map(|a| (0..n).map(|k| v[3 * k + a]).sum::<f64>() / n as f64)
                .collect::<Vec<_>>();
            (0..n)
                .map(|k| (0..3).map(|a| (v[3 * k + a] - c[a]).powi(2)).sum::<f64>())
                .sum::<f64>()
                / n as f64
        })
        .sum::<f64>()
        / m as f64;
    let floor = (EPSILON_FLOOR_RELATIVE * radius2).max(f64::MIN_POSITIVE);
    (EPSILON_RELATIVE * boost * trace / dim as f64).max(floor)
}

/// Parzen entropy of one shape's particles and (optionally) its gradient.
fn sampling_entropy(points: &[Vec3], sigma: &[f64], want_grad: bool) -> (f64, Vec<Vec3>) {
    let n = points.len();
    let mut grad = if want_grad { vec![Vec3::zeros(); n] } else { Vec::new() };
    if n < 2 {
        return (0.0, grad);
    }
    let ln_nm1 = ((n - 1) as f64).ln();
    let two_pi = 2.0 * std::f64::consts::PI;

    // p[i][j]: normalized kernel weights of i's neighbours under sigma_i
    let mut weights = vec![0.0; n * n];
    let mut h = 0.0;
    for i in 0..n {
        let inv = 1.0 / (2.0 * sigma[i] * sigma[i]);
        let row = &mut weights[i * n..(i + 1) * n];
        let mut max_e = f64::NEG_INFINITY;
        for j in 0..n {
            if j != i {
                let e = -(points[i] - points[j]).norm_squared() * inv;
                row[j] = e;
                max_e = max_e.max(e);
            }
        }
        let mut s = 0.0;
        for j in 0..n {
            if j != i {
                row[j] = (row[j] - max_e).exp();
                s += row[j];
            } else {
                row[j] = 0.0;
            }
        }
        for w in row.iter_mut() {
            *w /= s;
        }
        let log_density = max_e + s.ln() - ln_nm1 - 1.5 * (two_pi * sigma[i] * sigma[i]).ln();
        h -= log_density;
    }
    h /= n as f64;

    if want_grad {
        // dH/dx_m = 1/N sum_j (x_m - x_j) (p_mj / s_m^2 + p_jm / s_j^2)
        for m in 0..n {
            let mut g = Vec3::zeros();
            let inv_m = 1.0 / (sigma[m] * sigma[m]);
            for j in 0..n {
                if j == m {
                    continue;
                }
                let c = weights[m * n + j] * inv_m + weights[j * n + m] / (sigma[j] * sigma[j]);
                g += (points[m] - points[j]) * c;
            }
            grad[m] = g / n as f64;
        }
    }
    (h, grad)
}

/// `H(Z)` and its gradient with respect to each aligned shape vector.
fn correspondence_entropy(vectors: &[DVector<f64>], epsilon: f64, want_grad: bool) -> (f64, Option<DMatrix<f64>>) {
    let m = vectors.len();
    let dim = vectors.first().map_or(0, |v| v.len());
    if m < 2 {
        return (0.5 * dim as f64 * epsilon.ln(), want_grad.then(|| DMatrix::zeros(dim, m)));
    }
    // The centred Gram matrix always has eigenvalue eps along the ones vector.
    // Working in the orthonormal (Helmert) complement keeps the factorized
    // matrix well conditioned: B = Z Q, K' = eps I + B^T B / (M - 1).
    let q = helmert(m);
    let mut z = DMatrix::zeros(dim, m);
    for (j, v) in vectors.iter().enumerate() {
        z.set_column(j, v);
    }
    let b = &z * &q;
    let denom = (m - 1) as f64;
    // K' = R^T R with R from the QR factorization of [B / sqrt(M - 1); sqrt(eps) I],
    // which avoids squaring the condition number of B.
    let r = m - 1;
    let mut stacked = DMatrix::zeros(dim + r, r);
    stacked.view_mut((0, 0), (dim, r)).copy_from(&(&b / denom.sqrt()));
    for i in 0..r {
        stacked[(dim + i, i)] = epsilon.sqrt();
    }
    let rf = stacked.qr().r();
    let logdet_small: f64 = 2.0 * rf.diagonal().iter().map(|d| d.abs().ln()).sum::<f64>();
    let value = 0.5 * ((dim as f64 - m as f64 + 1.0) * epsilon.ln() + logdet_small);
    let grad = want_grad.then(|| {
        // dH/dZ = Y K^-1 / (M - 1) = B K'^-1 Q^T / (M - 1), K'^-1 = R^-1 R^-T
        let rinv = rf
            .solve_upper_triangular(&DMatrix::identity(r, r))
            .expect("regularized factor is nonsingular");
        let kinv = &rinv * rinv.transpose();
        &b * kinv * q.transpose() / denom
    });
    (value, grad)
}

/// Orthonormal basis (columns) of the complement of the ones vector in R^m.
fn helmert(m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m - 1, |i, j| {
        let n = (j + 1) as f64;
        let scale = 1.0 / (n * (n + 1.0)).sqrt();
        if i <= j {
            scale
        } else if i == j + 1 {
            -n * scale
        } else {
            0.0
        }
    })
}

/// Curvature model of the objective for one free shape `m` in its aligned
/// frame,
/// `H = alpha / (M - 1) * (kappa_m S + w w' / (M - 1)) + gamma I`,
/// with `S = (Sigma + eps I)^-1`, `w = S r_m` for the centred shape vector
/// `r_m`, and `gamma = 1 / (N mean(sigma^2))` standing in for the sampling
/// term.
///
/// This is the exact Hessian of the correspondence term with the sign of its
/// rank-one part flipped to keep `H` positive definite.
/// `kappa_m = 1 - 1/M - r_m' S r_m / (M - 1)` is small when the shape spans a
/// direction of its own, which it may then rotate almost freely.
///
/// [`Preconditioner::tangent_step`] solves `H d = -g` restricted to the
/// particles' tangent planes. `S` is isotropic off the span of the shape
/// modes, so this needs only an `r x r` system (`r < M`) and a rank-one
/// update.
pub struct Preconditioner {
    basis: DMatrix<f64>,
    variances: Vec<f64>,
    kappa: Vec<f64>,
    /// `S r_m` for every shape, as columns
    leverage: DMatrix<f64>,
    alpha: f64,
    epsilon: f64,
    m: usize,
}

impl Preconditioner {
    pub fn new(shapes: &[Vec<Vec3>], ctx: &EvalContext, alpha: f64) -> Self {
        let vectors = aligned_vectors(shapes, &ctx.transforms);
        let m = vectors.len();
        let dim = vectors.first().map_or(0, |v| v.len());
        let eps = ctx.epsilon;
        let mut basis = DMatrix::zeros(dim, 0);
        let mut variances = Vec::new();
        let mut kappa = vec![1.0; m];
        let mut leverage = DMatrix::zeros(dim, 0);
        if m >= 2 && alpha > 0.0 {
            let mean = vectors.iter().fold(DVector::zeros(dim), |a, v| a + v) / m as f64;
            let mut y = DMatrix::zeros(dim, m);
            for (j, v) in vectors.iter().enumerate() {
                y.set_column(j, &(v - &mean));
            }
            let denom = (m - 1) as f64;
            let eig = (y.transpose() * &y / denom).symmetric_eigen();
            let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
            let keep: Vec<usize> = (0..m)
                .filter(|&j| lmax > 0.0 && eig.eigenvalues[j] > 1e-12 * lmax)
                .collect();
            basis = DMatrix::zeros(dim, keep.len());
            for (c, &j) in keep.iter().enumerate() {
                let lam = eig.eigenvalues[j];
                let u = &y * eig.eigenvectors.column(j) / (denom * lam).sqrt();
                basis.set_column(c, &u);
                variances.push(lam);
            }
            leverage = DMatrix::zeros(dim, m);
            for s in 0..m {
                let mut spanned = 0.0;
                let mut soft = 0.0;
                let r = y.column(s);
                let mut w: DVector<f64> = r / eps;
                for (c, &j) in keep.iter().enumerate() {
                    let lam = eig.eigenvalues[j];
                    let v2 = eig.eigenvectors[(s, j)].powi(2);
                    spanned += v2;
                    soft += v2 * eps / (lam + eps);
                    // u_j' r_s = sqrt((M - 1) lam) v_j[s]
                    let proj = (denom * lam).sqrt() * eig.eigenvectors[(s, j)];
                    w += basis.column(c) * (proj * (1.0 / (lam + eps) - 1.0 / eps));
                }
                kappa[s] = soft + (1.0 - 1.0 / m as f64 - spanned).max(0.0);
                leverage.set_column(s, &w);
            }
        }
        Preconditioner {
            basis,
            variances,
            kappa,
            leverage,
            alpha,
            epsilon: eps,
            m,
        }
    }

    /// Tangential Newton direction for world-frame gradient `g` of shape
    /// `shape` with transform `t`, unit `normals` and bandwidths `sigma`.
    /// Always a descent direction (or zero).
    pub fn tangent_step(
        &self,
        shape: usize,
        g: &[Vec3],
        normals: &[Vec3],
        t: &Similarity,
        sigma: &[f64],
    ) -> Vec<Vec3> {
        let n = g.len();
        let active = self.alpha > 0.0 && self.m >= 2;
        let kappa = self.kappa.get(shape).copied().unwrap_or(1.0);
        let mean_s2 = sigma.iter().map(|s| s * s).sum::<f64>() / n.max(1) as f64;
        let gamma = 1.0 / (n as f64 * mean_s2 * t.scale * t.scale);
        let corr = |var: f64| {
            if active {
                kappa * self.alpha / ((self.m - 1) as f64 * (var + self.epsilon))
            } else {
                0.0
            }
        };
        let a0 = corr(0.0) + gamma;

        // aligned-frame normals and tangential projection
        let nrm: Vec<Vec3> = normals.iter().map(|v| t.rotation * v).collect();
        let tangential = |v: &DVector<f64>| {
            let mut out = v.clone();
            for (k, n) in nrm.iter().enumerate() {
                let c = v[3 * k] * n.x + v[3 * k + 1] * n.y + v[3 * k + 2] * n.z;
                for a in 0..3 {
                    out[3 * k + a] -= c * n[a];
                }
            }
            out
        };

        // T U, its normal parts V, and G = V'V + diag(a_j / (a0 - a_j))
        let r = self.basis.ncols();
        let tu = tangential_columns(&self.basis, &nrm);
        let mut chol = None;
        if r > 0 {
            let mut gmat = DMatrix::zeros(r, r);
            let mut v = DMatrix::zeros(n, r);
            for k in 0..n {
                for j in 0..r {
                    v[(k, j)] = (0..3).map(|a| self.basis[(3 * k + a, j)] * nrm[k][a]).sum::<f64>();
                }
            }
            gmat += v.transpose() * &v;
            for (j, &var) in self.variances.iter().enumerate() {
                let aj = corr(var) + gamma;
                gmat[(j, j)] += aj / (a0 - aj).max(f64::MIN_POSITIVE);
            }
            chol = gmat.cholesky();
        }
        // inverse of the tangent-restricted isotropic-plus-span part
        let solve = |v: &DVector<f64>| -> DVector<f64> {
            let mut out = v.clone();
            if let Some(chol) = &chol {
                out += &tu * chol.solve(&(tu.transpose() * v));
            }
            out / a0
        };

        let gv = DVector::from_iterator(3 * n, g.iter().flat_map(|g| {
            let q = t.rotation * g / t.scale;
            [q.x, q.y, q.z]
        }));
        let mut d = -solve(&tangential(&gv));

        if active && shape < self.leverage.ncols() {
            let tw = tangential(&self.leverage.column(shape).into_owned());
            let c = self.alpha / ((self.m - 1) as f64).powi(2);
            let z = solve(&tw);
            let denom = 1.0 + c * tw.dot(&z);
            if denom.is_finite() && denom > 0.0 {
                let k = c * tw.dot(&d) / denom;
                d -= z * k;
            }
        }
        (0..n)
            .map(|k| t.rotation.transpose() * Vec3::new(d[3 * k], d[3 * k + 1], d[3 * k + 2]) / t.scale)
            .collect()
    }
}

fn tangential_columns(basis: &DMatrix<f64>, nrm: &[Vec3]) -> DMatrix<f64> {
    let mut out = basis.clone();
    for (k, n) in nrm.iter().enumerate() {
        for j in 0..basis.ncols() {
            let c = (0..3).map(|a| basis[(3 * k + a, j)] * n[a]).sum::<f64>();
            for a in 0..3 {
                out[(3 * k + a, j)] -= c * n[a];
            }
        }
    }
    out
}

/// Objective value for `shapes` under `ctx`.
pub fn evaluate(shapes: &[Vec<Vec3>], ctx: &EvalContext, alpha: f64) -> ObjectiveTerms {
    let vectors = aligned_vectors(shapes, &ctx.transforms);
    let (corr, _) = correspondence_entropy(&vectors, ctx.epsilon, false);
    let sampling: f64 = shapes[ctx.n_frozen..]
        .par_iter()
        .zip(&ctx.bandwidths)
        .map(|(s, sig)| sampling_entropy(s, sig, false).0)
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    ObjectiveTerms {
        total: alpha * corr - sampling,
        correspondence: corr,
        sampling,
    }
}

/// Objective value plus `dQ/dx` for every particle of every free shape.
pub fn evaluate_with_gradient(
    shapes: &[Vec<Vec3>],
    ctx: &EvalContext,
    alpha: f64,
) -> (ObjectiveTerms, Vec<Vec<Vec3>>) {
    let vectors = aligned_vectors(shapes, &ctx.transforms);
    let (corr, corr_grad) = correspondence_entropy(&vectors, ctx.epsilon, alpha != 0.0);
    let per_shape: Vec<(f64, Vec<Vec3>)> = shapes[ctx.n_frozen..]
        .par_iter()
        .zip(&ctx.bandwidths)
        .map(|(s, sig)| sampling_entropy(s, sig, true))
        .collect();
    let sampling: f64 = per_shape.iter().map(|(h, _)| h).sum();

    let grads = per_shape
        .into_iter()
        .enumerate()
        .map(|(f, (_, sgrad))| {
            let s = ctx.n_frozen + f;
            sgrad
                .into_iter()
                .enumerate()
                .map(|(k, gs)| {
                    let mut g = -gs;
                    if let Some(cg) = &corr_grad {
                        let gz = Vec3::new(cg[(3 * k, s)], cg[(3 * k + 1, s)], cg[(3 * k + 2, s)]);
                        g += ctx.transforms[s].pull_back(&gz) * alpha;
                    }
                    g
                })
                .collect()
        })
        .collect();
    (
        ObjectiveTerms {
            total: alpha * corr - sampling,
            correspondence: corr,
            sampling,
        },
        grads,
    )
}
