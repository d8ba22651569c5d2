//! Ordinary and generalized Procrustes alignment of corresponding point sets.

use nalgebra::{Matrix3, Vector3};

type Vec3 = Vector3<f64>;

/// `x -> scale * rotation * (x - source_centroid) + target_centroid`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub source_centroid: Vec3,
    pub target_centroid: Vec3,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            rotation: Matrix3::identity(),
            scale: 1.0,
            source_centroid: Vec3::zeros(),
            target_centroid: Vec3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * (x - self.source_centroid) * self.scale + self.target_centroid
    }

    /// Pulls a gradient w.r.t. transformed coordinates back to source coordinates.
    #[inline]
    pub fn pull_back(&self, g: &Vec3) -> Vec3 {
        self.rotation.transpose() * g * self.scale
    }

    pub fn apply_all(&self, pts: &[Vec3]) -> Vec<Vec3> {
        pts.iter().map(|p| self.apply(p)).collect()
    }
}

pub fn centroid(pts: &[Vec3]) -> Vec3 {
    if pts.is_empty() {
        return Vec3::zeros();
    }
    pts.iter().sum::<Vec3>() / pts.len() as f64
}

/// Least-squares similarity (rotation + translation, optionally scale) mapping
/// `source` onto `target`. Reflections are excluded.
pub fn align(source: &[Vec3], target: &[Vec3], scaling: bool) -> Similarity {
    let cs = centroid(source);
    let ct = centroid(target);
    let mut h = Matrix3::zeros();
    let mut src_ss = 0.0;
    for (s, t) in source.iter().zip(target) {
        let a = s - cs;
        h += (t - ct) * a.transpose();
        src_ss += a.norm_squared();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let scale = if scaling && src_ss > 0.0 {
        let sv = svd.singular_values;
        (sv[0] + sv[1] + d[(2, 2)] * sv[2]) / src_ss
    } else {
        1.0
    };
    Similarity {
        rotation,
        scale,
        source_centroid: cs,
        target_centroid: ct,
    }
}

/// Result of generalized Procrustes analysis.
#[derive(Debug, Clone)]
pub struct GpaResult {
    pub transforms: Vec<Similarity>,
    pub mean: Vec<Vec3>,
    pub iterations: usize,
}

/// Iteratively aligns every shape to the evolving mean (first shape seeds the
/// reference). With `scaling`, the mean is kept at the first shape's size.
pub fn generalized_procrustes(shapes: &[Vec<Vec3>], scaling: bool, max_iter: usize, tol: f64) -> GpaResult {
    if shapes.is_empty() {
        return GpaResult {
            transforms: Vec::new(),
            mean: Vec::new(),
            iterations: 0,
        };
    }
    let c0 = centroid(&shapes[0]);
    let mut mean: Vec<Vec3> = shapes[0].iter().map(|p| p - c0).collect();
    let ref_size = mean.iter().map(|p| p.norm_squared()).sum::<f64>().sqrt();
    let mut transforms = vec![Similarity::identity(); shapes.len()];
    let mut iterations = 0;

    for it in 0..max_iter.max(1) {
        iterations = it + 1;
        for (t, s) in transforms.iter_mut().zip(shapes) {
            *t = align(s, &mean, scaling);
        }
        let n = mean.len();
        let mut next = vec![Vec3::zeros(); n];
        for (t, s) in transforms.iter().zip(shapes) {
            for (acc, p) in next.iter_mut().zip(s) {
                *acc += t.apply(p);
            }
        }
        for p in next.iter_mut() {
            *p /= shapes.len() as f64;
        }
        if scaling {
            let size = next.iter().map(|p| p.norm_squared()).sum::<f64>().sqrt();
            if size > 0.0 {
                for p in next.iter_mut() {
                    *p *= ref_size / size;
                }
            }
        }
        let change = next
            .iter()
            .zip(&mean)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt();
        mean = next;
        if change <= tol * ref_size.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    // Final transforms against the converged mean.
    for (t, s) in transforms.iter_mut().zip(shapes) {
        *t = align(s, &mean, scaling);
    }
    GpaResult {
        transforms,
        mean,
        iterations,
    }
}
