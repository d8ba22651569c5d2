//! Synthetic mask cohorts with known generative parameters, and seeded
//! corruptions that stand in for imperfect automatic segmentations.
//!
//! Shapes are centred in the grid. A voxel is foreground iff its centre lies
//! inside the analytic surface. Shape `i` draws its parameters from stream `i`
//! of the cohort seed, so generation order never changes the output.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::Volume;

/// Free space, in voxels, required between a shape's bounding box and the
/// grid border.
pub const MARGIN_VOXELS: f64 = 2.0;

/// Closed interval `[min, max]`, written as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    pub fn fixed(v: f64) -> Self {
        Range { min: v, max: v }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.min > 0.0 && self.min <= self.max && self.max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "{name} range [{}, {}] must be positive and ordered",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

impl From<[f64; 2]> for Range {
    fn from([min, max]: [f64; 2]) -> Self {
        Range { min, max }
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.min, r.max]
    }
}

/// Shape family; lengths are semi-axes in millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Sphere { radius: Range },
    Ellipsoid { a: Range, b: Range, c: Range },
    /// `|x/a|^(2/e) + |y/b|^(2/e) + |z/c|^(2/e) <= 1`; `e = 1` is the ellipsoid.
    Superquadric { a: Range, b: Range, c: Range, exponent: Range },
}

impl Family {
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Family::Sphere { .. } => &["radius"],
            Family::Ellipsoid { .. } => &["a", "b", "c"],
            Family::Superquadric { .. } => &["a", "b", "c", "exponent"],
        }
    }

    fn ranges(&self) -> Vec<Range> {
        match *self {
            Family::Sphere { radius } => vec![radius],
            Family::Ellipsoid { a, b, c } => vec![a, b, c],
            Family::Superquadric { a, b, c, exponent } => vec![a, b, c, exponent],
        }
    }

    /// Largest semi-axes the family can produce.
    fn max_extent(&self) -> [f64; 3] {
        match *self {
            Family::Sphere { radius } => [radius.max; 3],
            Family::Ellipsoid { a, b, c } | Family::Superquadric { a, b, c, .. } => [a.max, b.max, c.max],
        }
    }

    /// Inside test at offset `p` from the shape centre.
    fn contains(&self, params: &[f64], p: [f64; 3]) -> bool {
        match self {
            Family::Sphere { .. } => p.iter().map(|x| x * x).sum::<f64>() <= params[0] * params[0],
            Family::Ellipsoid { .. } => (0..3).map(|i| (p[i] / params[i]).powi(2)).sum::<f64>() <= 1.0,
            Family::Superquadric { .. } => {
                let q = 2.0 / params[3];
                (0..3).map(|i| (p[i] / params[i]).abs().powf(q)).sum::<f64>() <= 1.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub family: Family,
    pub n_shapes: usize,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub seed: u64,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let names = self.family.param_names();
        for (r, name) in self.family.ranges().iter().zip(names) {
            r.check(name)?;
        }
        if self.dims.iter().any(|&d| d == 0) || self.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument("grid dims and spacing must be positive".into()));
        }
        let ext = self.family.max_extent();
        for axis in 0..3 {
            let room = (self.dims[axis] as f64 - 1.0) / 2.0 * self.spacing[axis];
            if ext[axis] + MARGIN_VOXELS * self.spacing[axis] > room {
                return Err(Error::InvalidArgument(format!(
                    "shapes up to {} mm along axis {axis} need a {MARGIN_VOXELS}-voxel margin; grid half-width is {room} mm",
                    ext[axis]
                )));
            }
        }
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        Ok(())
    }

    fn centre(&self) -> [f64; 3] {
        std::array::from_fn(|a| (self.dims[a] as f64 - 1.0) / 2.0 * self.spacing[a])
    }
}

/// Generated masks with their parameters; `corrupted` holds the noisy copies
/// when the spec has noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub ids: Vec<String>,
    pub param_names: Vec<String>,
    pub latent: Vec<Vec<f64>>,
    pub volumes: Vec<Volume>,
    pub corrupted: Option<Vec<Volume>>,
}

pub fn shape_id(i: usize) -> String {
    format!("shape_{i:03}")
}

pub fn generate(spec: &CohortSpec) -> Result<Cohort> {
    spec.validate()?;
    let ranges = spec.family.ranges();
    let latent: Vec<Vec<f64>> = (0..spec.n_shapes)
        .map(|i| {
            let mut rng = stream(spec.seed, i);
            ranges.iter().map(|r| r.sample(&mut rng)).collect()
        })
        .collect();
    let volumes = latent
        .par_iter()
        .map(|params| voxelize(spec, params))
        .collect::<Result<Vec<_>>>()?;
    let corrupted = spec.noise.as_ref().map(|n| {
        volumes
            .par_iter()
            .enumerate()
            .map(|(i, v)| corrupt_stream(v, n, i as u64))
            .collect()
    });
    Ok(Cohort {
        ids: (0..spec.n_shapes).map(shape_id).collect(),
        param_names: spec.family.param_names().iter().map(|s| s.to_string()).collect(),
        latent,
        volumes,
        corrupted,
    })
}

/// Centre-inclusion mask of one shape with the given parameters.
pub fn voxelize(spec: &CohortSpec, params: &[f64]) -> Result<Volume> {
    let c = spec.centre();
    let h = spec.spacing;
    Volume::mask_from_fn(spec.dims, spec.spacing, [0.0; 3], |i, j, k| {
        let p = [i as f64 * h[0] - c[0], j as f64 * h[1] - c[1], k as f64 * h[2] - c[2]];
        spec.family.contains(params, p)
    })
}

fn stream(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

impl Cohort {
    /// Writes `shape_id,<param>...` rows.
    pub fn write_latent<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["shape_id".to_string()];
        header.extend(self.param_names.iter().cloned());
        w.write_record(&header)?;
        for (id, p) in self.ids.iter().zip(&self.latent) {
            let mut row = vec![id.clone()];
            row.extend(p.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save_latent(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_latent(std::io::BufWriter::new(file))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// Dilate or erode (fair coin) by a ball of radius drawn from `0..=max_radius` voxels.
    DilateErode { max_radius: usize },
    /// Flip each voxel on either side of the boundary with this probability.
    BoundaryFlip { probability: f64 },
    /// Clear foreground within `radius` voxels of `count` random boundary voxels
    /// of the input, so each bite takes a piece of the outer surface.
    DropoutLobe { radius: f64, count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mode: NoiseMode,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match self.mode {
            NoiseMode::BoundaryFlip { probability } if !(0.0..=1.0).contains(&probability) => Err(
                Error::InvalidArgument(format!("flip probability {probability} outside [0, 1]")),
            ),
            NoiseMode::DropoutLobe { radius, .. } if !(radius >= 0.0) => {
                Err(Error::InvalidArgument(format!("negative lobe radius {radius}")))
            }
            _ => Ok(()),
        }
    }
}

pub fn corrupt(v: &Volume, noise: &NoiseSpec) -> Volume {
    corrupt_stream(v, noise, 0)
}

/// Corruption drawn from stream `stream` of the noise seed.
pub fn corrupt_stream(v: &Volume, noise: &NoiseSpec, stream_index: u64) -> Volume {
    let mut rng = stream(noise.seed, stream_index as usize);
    match noise.mode {
        NoiseMode::DilateErode { max_radius } => {
            let r = rng.random_range(0..=max_radius);
            if rng.random::<bool>() {
                dilate(v, r)
            } else {
                erode(v, r)
            }
        }
        NoiseMode::BoundaryFlip { probability } => {
            let bits = v.mask_bits();
            let flipped: Vec<bool> = (0..v.len())
                .map(|i| {
                    // one draw per voxel keeps the stream aligned across masks
                    let u: f64 = rng.random();
                    bits[i] ^ (on_boundary(v, &bits, i) && u < probability)
                })
                .collect();
            from_bits(v, &flipped)
        }
        NoiseMode::DropoutLobe { radius, count } => {
            let mut bits = v.mask_bits();
            let fg: Vec<usize> = (0..v.len()).filter(|&i| bits[i] && on_boundary(v, &bits, i)).collect();
            if fg.is_empty() {
                return v.clone();
            }
            for _ in 0..count {
                let [ci, cj, ck] = v.coords(fg[rng.random_range(0..fg.len())]);
                for (idx, b) in bits.iter_mut().enumerate() {
                    let [i, j, k] = v.coords(idx);
                    let d2 = [i as f64 - ci as f64, j as f64 - cj as f64, k as f64 - ck as f64]
                        .iter()
                        .map(|x| x * x)
                        .sum::<f64>();
                    if d2 < radius * radius {
                        *b = false;
                    }
                }
            }
            from_bits(v, &bits)
        }
    }
}

/// Morphological dilation by a Euclidean ball of `r` voxels.
pub fn dilate(v: &Volume, r: usize) -> Volume {
    morph(v, r, true)
}

/// Morphological erosion by a Euclidean ball of `r` voxels; outside the grid
/// counts as background.
pub fn erode(v: &Volume, r: usize) -> Volume {
    morph(v, r, false)
}

fn morph(v: &Volume, r: usize, grow: bool) -> Volume {
    if r == 0 {
        return v.clone();
    }
    let ri = r as isize;
    let offsets: Vec<[isize; 3]> = (-ri..=ri)
        .flat_map(|a| (-ri..=ri).flat_map(move |b| (-ri..=ri).map(move |c| [a, b, c])))
        .filter(|o| o.iter().map(|x| x * x).sum::<isize>() <= ri * ri)
        .collect();
    let bits = v.mask_bits();
    let d = v.dims.map(|x| x as isize);
    let out: Vec<bool> = (0..v.len())
        .into_par_iter()
        .map(|idx| {
            let [i, j, k] = v.coords(idx).map(|x| x as isize);
            let hit = |o: &[isize; 3]| {
                let (a, b, c) = (i + o[0], j + o[1], k + o[2]);
                a >= 0 && b >= 0 && c >= 0 && a < d[0] && b < d[1] && c < d[2]
                    && bits[v.index(a as usize, b as usize, c as usize)]
            };
            if grow {
                offsets.iter().any(hit)
            } else {
                offsets.iter().all(hit)
            }
        })
        .collect();
    from_bits(v, &out)
}

/// True if voxel `idx` has a face neighbour with the other label (the grid
/// outside counts as background).
fn on_boundary(v: &Volume, bits: &[bool], idx: usize) -> bool {
    let [i, j, k] = v.coords(idx).map(|x| x as isize);
    let d = v.dims.map(|x| x as isize);
    [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
        .iter()
        .any(|&(a, b, c)| {
            let (x, y, z) = (i + a, j + b, k + c);
            let other = x >= 0 && y >= 0 && z >= 0 && x < d[0] && y < d[1] && z < d[2]
                && bits[v.index(x as usize, y as usize, z as usize)];
            other != bits[idx]
        })
}

fn from_bits(v: &Volume, bits: &[bool]) -> Volume {
    let mut out = v.clone();
    out.data = crate::io::VoxelData::U8(bits.iter().map(|&b| b as u8).collect());
    out
}

#[cfg(test)]
mod tests;
