//! Synthetic benchmark cohorts on disk: manual masks, simulated method
//! predictions and a manifest tying them together.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_volume, CohortManifest, ManifestEntry, Source, Split};
use crate::synth::{corrupt_stream, generate, CohortSpec, NoiseSpec};

/// A simulated segmentation method. Without noise its masks copy the manual ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub name: String,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub annotation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    pub cohort: CohortSpec,
    /// The first `n_train` shapes form the training split, the rest the test split.
    pub n_train: usize,
    #[serde(default)]
    pub methods: Vec<MethodSpec>,
}

impl StudySpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: StudySpec = serde_json::from_str(&text)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.cohort.validate()?;
        if self.n_train > self.cohort.n_shapes {
            return Err(Error::InvalidArgument(format!(
                "n_train {} exceeds the cohort's {} shapes",
                self.n_train, self.cohort.n_shapes
            )));
        }
        let mut names = Vec::new();
        for m in &self.methods {
            let ok = !m.name.is_empty()
                && m.name != super::BASELINE
                && m.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
                && !m.name.starts_with('.');
            if !ok {
                return Err(Error::InvalidArgument(format!("unusable method name `{}`", m.name)));
            }
            if names.contains(&m.name) {
                return Err(Error::InvalidArgument(format!("duplicate method `{}`", m.name)));
            }
            names.push(m.name.clone());
            if let Some(n) = &m.noise {
                n.validate()?;
            }
        }
        Ok(())
    }
}

/// Writes `gt/<id>.mhd`, `<method>/<id>.mhd`, `latent.csv` and `manifest.json`
/// under `out` and returns the manifest (with absolute volume paths).
pub fn write_study(spec: &StudySpec, out: &Path) -> Result<CohortManifest> {
    spec.validate()?;
    let cohort = generate(&CohortSpec { noise: None, ..spec.cohort.clone() })?;
    let split = |i: usize| if i < spec.n_train { Split::Train } else { Split::Test };

    let mut entries = Vec::new();
    let mut jobs: Vec<(PathBuf, usize, Option<&NoiseSpec>)> = Vec::new();
    let mut add = |dir: &str, source: Source, annotation: Option<String>| {
        for (i, id) in cohort.ids.iter().enumerate() {
            entries.push(ManifestEntry {
                id: id.clone(),
                volume: PathBuf::from(dir).join(format!("{id}.mhd")),
                split: split(i),
                source: source.clone(),
                annotation: annotation.clone(),
            });
        }
    };
    add(super::BASELINE, Source::GroundTruth, None);
    for m in &spec.methods {
        add(&m.name, Source::Method(m.name.clone()), m.annotation.clone());
    }
    for (i, id) in cohort.ids.iter().enumerate() {
        jobs.push((PathBuf::from(super::BASELINE).join(format!("{id}.mhd")), i, None));
        for m in &spec.methods {
            jobs.push((PathBuf::from(&m.name).join(format!("{id}.mhd")), i, m.noise.as_ref()));
        }
    }

    jobs.par_iter().try_for_each(|(rel, i, noise)| {
        let v = &cohort.volumes[*i];
        match noise {
            Some(n) => write_volume(&corrupt_stream(v, n, *i as u64), out.join(rel)),
            None => write_volume(v, out.join(rel)),
        }
    })?;
    cohort.save_latent(out.join("latent.csv"))?;

    let manifest = CohortManifest { shapes: entries };
    manifest.validate()?;
    let path = out.join("manifest.json");
    std::fs::write(&path, manifest.to_json()? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(CohortManifest {
        shapes: manifest
            .shapes
            .into_iter()
            .map(|e| ManifestEntry { volume: out.join(&e.volume), ..e })
            .collect(),
    })
}
