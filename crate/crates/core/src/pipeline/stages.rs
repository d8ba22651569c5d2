use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{marching_cubes, SurfaceIndex};
use crate::io::{read_volume, ManifestEntry, Volume, VolumeKind};
use crate::optimizer::{optimize, warmstart_optimize, InitCondition, OptimizerParams};
use crate::particles::ParticleSystem;

const STAGE_FILE: &str = "stage.json";

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of a mask's grid and foreground bits.
fn volume_digest(v: &Volume) -> String {
    let mut h = Sha256::new();
    for d in v.dims {
        h.update((d as u64).to_le_bytes());
    }
    for x in v.spacing.iter().chain(&v.origin) {
        h.update(x.to_le_bytes());
    }
    h.update(v.mask_bits().iter().map(|&b| b as u8).collect::<Vec<_>>());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Mask volumes of `entries` with their digests, in order.
pub(crate) fn load_masks(entries: &[&ManifestEntry]) -> Result<Vec<(Volume, String)>> {
    entries
        .par_iter()
        .map(|e| {
            if !e.volume.is_file() {
                return Err(Error::Manifest(format!("volume for `{}` not found: {}", e.id, e.volume.display())));
            }
            let v = read_volume(&e.volume, VolumeKind::Mask)?;
            let d = volume_digest(&v);
            Ok((v, d))
        })
        .collect()
}

pub(crate) fn surfaces(entries: &[&ManifestEntry], masks: &[(Volume, String)]) -> Result<Vec<SurfaceIndex>> {
    entries
        .par_iter()
        .zip(masks)
        .map(|(e, (v, _))| {
            let mesh = marching_cubes(v, 0.5);
            if mesh.is_empty() {
                return Err(Error::EmptySurface(format!("mask of `{}` ({}) is empty", e.id, e.source)));
            }
            SurfaceIndex::build(mesh)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub system: ParticleSystem,
    pub key: String,
}

#[derive(Serialize, Deserialize)]
struct Marker {
    key: String,
    ids: Vec<String>,
    converged: bool,
}

#[derive(Serialize)]
struct KeyInput<'a> {
    kind: &'a str,
    params: &'a OptimizerParams,
    shapes: Vec<(&'a str, &'a str)>,
    template: Option<&'a str>,
}

/// Optimization stages under one root directory.
pub struct Stages {
    root: PathBuf,
    resume: bool,
    params: OptimizerParams,
}

impl Stages {
    pub fn new(root: PathBuf, resume: bool, params: &OptimizerParams) -> Self {
        Stages { root, resume, params: params.clone() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn origin(&self, rel: &str, entries: &[&ManifestEntry]) -> Result<StageOutput> {
        self.run(rel, entries, None)
    }

    pub fn warmstart(&self, rel: &str, entries: &[&ManifestEntry], template: &StageOutput) -> Result<StageOutput> {
        self.run(rel, entries, Some(template))
    }

    fn run(&self, rel: &str, entries: &[&ManifestEntry], template: Option<&StageOutput>) -> Result<StageOutput> {
        let ids: Vec<String> = entries.iter().map(|e| e.id.clone()).collect();
        let masks = load_masks(entries)?;
        let key = {
            let input = KeyInput {
                kind: if template.is_some() { "warmstart" } else { "origin" },
                params: &self.params,
                shapes: ids.iter().zip(&masks).map(|(i, (_, d))| (i.as_str(), d.as_str())).collect(),
                template: template.map(|t| t.key.as_str()),
            };
            hex_digest(serde_json::to_string(&input)?.as_bytes())
        };
        let dir = self.root.join(rel);
        if self.resume {
            if let Some(sys) = self.completed(&dir, &key, &ids) {
                info!("{rel}: up to date, skipped");
                return Ok(StageOutput { system: sys, key });
            }
        }

        info!("{rel}: optimizing {} shapes", ids.len());
        let surfaces = surfaces(entries, &masks)?;
        let result = match template {
            Some(t) => warmstart_optimize(&surfaces, &t.system, &self.params)?,
            None => optimize(&surfaces, InitCondition::Origin, &self.params)?,
        };
        let system = ParticleSystem::new(ids.clone(), result.system.particles)?;

        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        system.write_dir(&dir)?;
        result_log(&dir, &result.log)?;
        // the marker goes last so an interrupted stage is never taken as done
        let marker = Marker { key: key.clone(), ids, converged: result.converged };
        let path = dir.join(STAGE_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&marker)?).map_err(|e| Error::io(&path, e))?;
        Ok(StageOutput { system, key })
    }

    fn completed(&self, dir: &Path, key: &str, ids: &[String]) -> Option<ParticleSystem> {
        let text = std::fs::read_to_string(dir.join(STAGE_FILE)).ok()?;
        let marker: Marker = serde_json::from_str(&text).ok()?;
        if marker.key != key || marker.ids != ids {
            return None;
        }
        ParticleSystem::read_dir(dir, ids).ok()
    }
}

fn result_log(dir: &Path, log: &[crate::optimizer::LogEntry]) -> Result<()> {
    let path = dir.join("optimization_log.json");
    std::fs::write(&path, serde_json::to_string(log)?).map_err(|e| Error::io(&path, e))
}
