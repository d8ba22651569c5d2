//! Single-purpose steps behind the smaller subcommands.

use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;

use super::stages::{StageOutput, Stages};
use crate::error::{Error, Result};
use crate::geometry::marching_cubes;
use crate::io::{format_particles, read_volume, write_mesh, write_particles, CohortManifest, ManifestEntry, Source, Split, VolumeKind};
use crate::optimizer::OptimizerParams;
use crate::particles::{unflatten, ParticleSystem};
use crate::seg_metrics::{score, SegRecord};
use crate::shapespace::fit_pca_with;

/// Writes `<out>/<source>/<id>.ply` for every manifest entry; returns the paths.
pub fn extract_surfaces(manifest: &CohortManifest, out: &Path) -> Result<Vec<PathBuf>> {
    manifest
        .shapes
        .par_iter()
        .map(|e| {
            let v = read_volume(&e.volume, VolumeKind::Mask)?;
            let mesh = marching_cubes(&v, 0.5);
            if mesh.is_empty() {
                warn!("{} ({}): empty mask, empty mesh written", e.id, e.source);
            }
            let path = out.join(e.source.label()).join(format!("{}.ply", e.id));
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))?;
            }
            write_mesh(&mesh, &path)?;
            Ok(path)
        })
        .collect()
}

/// Scores every method mask against the manual mask with the same id and
/// split. Rows follow manifest order; `methods` restricts the sources.
pub fn segmentation_scores(manifest: &CohortManifest, methods: Option<&[String]>) -> Result<Vec<SegRecord>> {
    let pairs: Vec<(&ManifestEntry, &ManifestEntry)> = manifest
        .shapes
        .iter()
        .filter(|e| match &e.source {
            Source::Method(m) => methods.is_none_or(|sel| sel.contains(m)),
            Source::GroundTruth => false,
        })
        .filter_map(|e| {
            let gt = manifest
                .shapes
                .iter()
                .find(|g| g.source == Source::GroundTruth && g.split == e.split && g.id == e.id);
            if gt.is_none() {
                warn!("{} ({}): no manual mask to compare with", e.id, e.source);
            }
            gt.map(|g| (e, g))
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::Manifest("no method masks with matching manual masks".into()));
    }
    pairs
        .par_iter()
        .map(|(pred, gt)| {
            let p = read_volume(&pred.volume, VolumeKind::Mask)?;
            let g = read_volume(&gt.volume, VolumeKind::Mask)?;
            Ok(SegRecord {
                shape_id: pred.id.clone(),
                method: pred.source.label().to_string(),
                score: score(&p, &g)?,
            })
        })
        .collect()
}

/// Reads every `*.particles` file in `dir`, ordered by file name.
pub fn read_particle_dir(dir: impl AsRef<Path>) -> Result<ParticleSystem> {
    let dir = dir.as_ref();
    let mut ids: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_suffix(".particles").map(str::to_string)
        })
        .collect();
    ids.sort();
    if ids.is_empty() {
        return Err(Error::InvalidArgument(format!("no .particles files in {}", dir.display())));
    }
    ParticleSystem::read_dir(dir, &ids)
}

fn select<'a>(manifest: &'a CohortManifest, split: Split, source: &Source) -> Result<Vec<&'a ManifestEntry>> {
    let e = manifest.select(split, source);
    if e.is_empty() {
        let split = if split == Split::Train { "train" } else { "test" };
        return Err(Error::Manifest(format!("no {split} entries from {source}")));
    }
    Ok(e)
}

/// Origin-initialized optimization of one manifest cohort into `<out>/particles`.
pub fn optimize_cohort(
    manifest: &CohortManifest,
    split: Split,
    source: &Source,
    params: &OptimizerParams,
    out: &Path,
    resume: bool,
) -> Result<ParticleSystem> {
    let entries = select(manifest, split, source)?;
    Ok(Stages::new(out.to_path_buf(), resume, params).origin("particles", &entries)?.system)
}

/// Warm start of one manifest cohort on a template into `<out>/particles`.
pub fn warmstart_cohort(
    manifest: &CohortManifest,
    split: Split,
    source: &Source,
    template: &ParticleSystem,
    params: &OptimizerParams,
    out: &Path,
    resume: bool,
) -> Result<ParticleSystem> {
    let entries = select(manifest, split, source)?;
    let mut text = String::new();
    for (id, pts) in template.shape_ids.iter().zip(&template.particles) {
        text.push_str(id);
        text.push('\n');
        text.push_str(&format_particles(pts)?);
    }
    let template = StageOutput { system: template.clone(), key: super::hex_digest(text.as_bytes()) };
    Ok(Stages::new(out.to_path_buf(), resume, params).warmstart("particles", &entries, &template)?.system)
}

/// Mean shape and mode walks of the PCA model of `system`:
/// `<out>/mean.particles`, `<out>/mode_<j>/step_<s>.particles` (j from 1) and
/// `<out>/eigenvalues.csv`.
pub fn export_modes(
    system: &ParticleSystem,
    align: bool,
    scaling: bool,
    n_modes: usize,
    steps: &[f64],
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let model = fit_pca_with(system, align, scaling)?;
    if n_modes > model.n_modes() {
        return Err(Error::InvalidArgument(format!(
            "{n_modes} modes requested, model has {}",
            model.n_modes()
        )));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = vec![out.join("mean.particles")];
    write_particles(&unflatten(&model.mean), &written[0])?;
    for j in 0..n_modes {
        let dir = out.join(format!("mode_{}", j + 1));
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (s, shape) in steps.iter().zip(model.mode_walk(j, steps)?) {
            let path = dir.join(format!("step_{s:+}.particles"));
            write_particles(&unflatten(&shape), &path)?;
            written.push(path);
        }
    }
    let path = out.join("eigenvalues.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["mode", "eigenvalue"])?;
    for (j, l) in model.eigenvalues.iter().enumerate() {
        w.write_record([(j + 1).to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}
