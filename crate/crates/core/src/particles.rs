//! Correspondence particle systems: `M` shapes x `N` particles, index-aligned.

use std::fs;
use std::path::Path;

use nalgebra::{DVector, Vector3};

use crate::error::{Error, Result};
use crate::io::{read_particles, write_particles};

pub type Vec3 = Vector3<f64>;

/// Particle `k` of every shape denotes the same anatomical location.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    pub shape_ids: Vec<String>,
    pub particles: Vec<Vec<Vec3>>,
}

impl ParticleSystem {
    pub fn new(shape_ids: Vec<String>, particles: Vec<Vec<Vec3>>) -> Result<Self> {
        if shape_ids.len() != particles.len() {
            return Err(Error::Dimension(format!(
                "{} ids for {} shapes",
                shape_ids.len(),
                particles.len()
            )));
        }
        if let Some(first) = particles.first() {
            if let Some((i, p)) = particles.iter().enumerate().find(|(_, p)| p.len() != first.len()) {
                return Err(Error::Dimension(format!(
                    "shape {} has {} particles, expected {}",
                    shape_ids[i],
                    p.len(),
                    first.len()
                )));
            }
        }
        Ok(ParticleSystem {
            shape_ids,
            particles,
        })
    }

    pub fn n_shapes(&self) -> usize {
        self.particles.len()
    }

    pub fn n_particles(&self) -> usize {
        self.particles.first().map_or(0, Vec::len)
    }

    /// Flattened `x1 y1 z1 x2 ...` vector of shape `i`.
    pub fn shape_vector(&self, i: usize) -> DVector<f64> {
        flatten(&self.particles[i])
    }

    pub fn shape_vectors(&self) -> Vec<DVector<f64>> {
        (0..self.n_shapes()).map(|i| self.shape_vector(i)).collect()
    }

    /// Per-shape mean over all shapes, particle by particle.
    pub fn mean_shape(&self) -> Vec<Vec3> {
        let n = self.n_particles();
        let m = self.n_shapes().max(1) as f64;
        (0..n)
            .map(|k| self.particles.iter().map(|s| s[k]).sum::<Vec3>() / m)
            .collect()
    }

    /// Writes `<dir>/<shape_id>.particles` for every shape.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (id, pts) in self.shape_ids.iter().zip(&self.particles) {
            write_particles(pts, dir.join(format!("{id}.particles")))?;
        }
        Ok(())
    }

    /// Reads particle files for `ids`, in that order.
    pub fn read_dir(dir: impl AsRef<Path>, ids: &[String]) -> Result<Self> {
        let dir = dir.as_ref();
        let particles = ids
            .iter()
            .map(|id| read_particles(dir.join(format!("{id}.particles"))))
            .collect::<Result<Vec<_>>>()?;
        ParticleSystem::new(ids.to_vec(), particles)
    }

    /// Multiplies every coordinate by `s`.
    pub fn scaled(&self, s: f64) -> ParticleSystem {
        ParticleSystem {
            shape_ids: self.shape_ids.clone(),
            particles: self
                .particles
                .iter()
                .map(|p| p.iter().map(|x| x * s).collect())
                .collect(),
        }
    }
}

pub fn flatten(points: &[Vec3]) -> DVector<f64> {
    DVector::from_iterator(points.len() * 3, points.iter().flat_map(|p| [p.x, p.y, p.z]))
}

pub fn unflatten(v: &DVector<f64>) -> Vec<Vec3> {
    v.as_slice()
        .chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect()
}

/// Mean over particles of the Euclidean distance between corresponding points.
pub fn mean_particle_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = a.len() / 3;
    if n == 0 {
        return 0.0;
    }
    let sum: f64 = a
        .as_slice()
        .chunks_exact(3)
        .zip(b.as_slice().chunks_exact(3))
        .map(|(p, q)| {
            let (dx, dy, dz) = (p[0] - q[0], p[1] - q[1], p[2] - q[2]);
            (dx * dx + dy * dy + dz * dz).sqrt()
        })
        .sum();
    sum / n as f64
}
