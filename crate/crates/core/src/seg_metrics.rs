//! Segmentation quality: volume overlap and surface distances between a
//! predicted mask and a reference mask on the same grid.
//!
//! Surface distances are measured between marching-cubes surfaces, in
//! millimetres. Each surface is sampled (its vertices plus ten area-weighted
//! points per vertex) and every sample is scored against the other surface's
//! closest-point index; the two directions are pooled.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{marching_cubes, surface_points, SurfaceIndex, SurfaceMesh};
use crate::io::Volume;

/// Area-weighted samples drawn per mesh vertex.
pub const SAMPLES_PER_VERTEX: usize = 10;
/// Sampling seed; fixed so scores are reproducible and symmetric.
pub const SURFACE_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub dice: f64,
    pub jaccard: f64,
    /// Both masks were empty; the scores of 1 are a convention.
    pub both_empty: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceDistances {
    pub asd: f64,
    pub hd95: f64,
    pub hd100: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegScore {
    pub overlap: Overlap,
    /// `None` when either surface is empty.
    pub distances: Option<SurfaceDistances>,
}

/// Dice and Jaccard of two masks on the same grid.
pub fn overlap(a: &Volume, b: &Volume) -> Result<Overlap> {
    check_grid(a, b)?;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for i in 0..a.len() {
        let (x, y) = (a.is_foreground(i), b.is_foreground(i));
        na += x as usize;
        nb += y as usize;
        both += (x && y) as usize;
    }
    if na + nb == 0 {
        return Ok(Overlap { dice: 1.0, jaccard: 1.0, both_empty: true });
    }
    Ok(Overlap {
        dice: 2.0 * both as f64 / (na + nb) as f64,
        jaccard: both as f64 / (na + nb - both) as f64,
        both_empty: false,
    })
}

/// Symmetric surface distances between the boundaries of two masks.
pub fn surface_distance(a: &Volume, b: &Volume) -> Result<SurfaceDistances> {
    check_grid(a, b)?;
    let ma = marching_cubes(a, 0.5);
    let mb = marching_cubes(b, 0.5);
    if ma.is_empty() || mb.is_empty() {
        return Err(Error::EmptySurface("surface distance needs two non-empty masks".into()));
    }
    mesh_distance(ma, mb)
}

/// Surface distances between two meshes.
pub fn mesh_distance(a: SurfaceMesh, b: SurfaceMesh) -> Result<SurfaceDistances> {
    let pa = surface_points(&a, SAMPLES_PER_VERTEX * a.vertices.len(), SURFACE_SEED)?;
    let pb = surface_points(&b, SAMPLES_PER_VERTEX * b.vertices.len(), SURFACE_SEED)?;
    let (ia, ib) = (SurfaceIndex::build(a)?, SurfaceIndex::build(b)?);
    let mut d: Vec<f64> = pa
        .par_iter()
        .map(|p| ib.closest_point(p).distance)
        .chain(pb.par_iter().map(|p| ia.closest_point(p).distance))
        .collect();
    // sorted before summing so swapping the inputs gives identical bits
    d.sort_by(f64::total_cmp);
    Ok(SurfaceDistances {
        asd: d.iter().sum::<f64>() / d.len() as f64,
        hd95: percentile(&d, 0.95),
        hd100: *d.last().unwrap(),
    })
}

/// Overlap plus surface distances; distances are absent if a mask is empty.
pub fn score(pred: &Volume, truth: &Volume) -> Result<SegScore> {
    let overlap = overlap(pred, truth)?;
    let distances = match surface_distance(pred, truth) {
        Ok(d) => Some(d),
        Err(Error::EmptySurface(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(SegScore { overlap, distances })
}

/// Linear interpolation between order statistics of `sorted` at `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let t = pos - lo as f64;
            sorted[lo] + t * (sorted[hi] - sorted[lo])
        }
    }
}

fn check_grid(a: &Volume, b: &Volume) -> Result<()> {
    if !a.same_grid(b) {
        return Err(Error::GridMismatch(format!(
            "dims {:?} spacing {:?} origin {:?} vs dims {:?} spacing {:?} origin {:?}",
            a.dims, a.spacing, a.origin, b.dims, b.spacing, b.origin
        )));
    }
    Ok(())
}

/// One row of a segmentation report.
#[derive(Debug, Clone, PartialEq)]
pub struct SegRecord {
    pub shape_id: String,
    pub method: String,
    pub score: SegScore,
}

/// Writes `shape_id,method,dice,jaccard,asd,hd95,hd100`. Missing surface
/// distances are written as `nan`.
pub fn write_records<W: Write>(records: &[SegRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["shape_id", "method", "dice", "jaccard", "asd", "hd95", "hd100"])?;
    for r in records {
        let d = r.score.distances;
        let fmt = |f: fn(&SurfaceDistances) -> f64| d.as_ref().map_or("nan".to_string(), |d| f(d).to_string());
        w.write_record([
            r.shape_id.clone(),
            r.method.clone(),
            r.score.overlap.dice.to_string(),
            r.score.overlap.jaccard.to_string(),
            fmt(|d| d.asd),
            fmt(|d| d.hd95),
            fmt(|d| d.hd100),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn save_records(records: &[SegRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(records, std::io::BufWriter::new(file))
}
