//! Cohort manifests: which volume belongs to which shape, split and source.
//!
//! ```json
//! {"shapes": [
//!   {"id": "f01", "volume": "gt/f01.mhd", "split": "train", "source": "gt"},
//!   {"id": "f01", "volume": "bcp/f01.mhd", "split": "train", "source": {"method": "BCP"}}
//! ]}
//! ```
//!
//! Relative volume paths are resolved against the manifest's directory.
//! Entry order is preserved everywhere; particle index bookkeeping relies on it.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The semi-supervised segmentation methods of the benchmark cohort.
pub const SEMI_METHODS: [&str; 8] = ["MT", "UA-MT", "BCP", "CAML", "DeSCO", "DTC", "MCF", "SASSnet"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Where a segmentation came from: manual annotation or a named method.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    GroundTruth,
    Method(String),
}

impl Source {
    pub fn label(&self) -> &str {
        match self {
            Source::GroundTruth => "gt",
            Source::Method(name) => name,
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SourceRepr {
    Tag(String),
    Method { method: String },
}

impl Serialize for Source {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Source::GroundTruth => SourceRepr::Tag("gt".into()),
            Source::Method(m) => SourceRepr::Method { method: m.clone() },
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match SourceRepr::deserialize(d)? {
            SourceRepr::Tag(t) if t == "gt" => Ok(Source::GroundTruth),
            SourceRepr::Tag(t) => Err(serde::de::Error::custom(format!(
                "source must be \"gt\" or {{\"method\": name}}, got \"{t}\""
            ))),
            SourceRepr::Method { method } if method.trim().is_empty() => {
                Err(serde::de::Error::custom("empty method name"))
            }
            SourceRepr::Method { method } => Ok(Source::Method(method)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub volume: PathBuf,
    pub split: Split,
    pub source: Source,
    /// Free-form label such as the annotation fraction a method was trained with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub shapes: Vec<ManifestEntry>,
}

impl CohortManifest {
    /// Parses and validates manifest JSON. Relative paths are joined onto `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m: CohortManifest = serde_json::from_str(text)
            .map_err(|e| Error::Manifest(format!("cannot parse manifest: {e}")))?;
        for e in &mut m.shapes {
            if e.volume.is_relative() {
                e.volume = base_dir.join(&e.volume);
            }
        }
        m.validate()?;
        Ok(m)
    }

    /// Checks id uniqueness per (split, source) and train/test disjointness.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.shapes {
            if e.id.is_empty() {
                return Err(Error::Manifest("empty shape id".into()));
            }
            if !seen.insert((e.split, e.source.clone(), e.id.as_str())) {
                return Err(Error::Manifest(format!(
                    "duplicate id `{}` in split {:?} for source {}",
                    e.id, e.split, e.source
                )));
            }
        }
        let train: HashSet<&str> = self
            .shapes
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| e.id.as_str())
            .collect();
        if let Some(e) = self
            .shapes
            .iter()
            .find(|e| e.split == Split::Test && train.contains(e.id.as_str()))
        {
            return Err(Error::Manifest(format!(
                "shape `{}` appears in both train and test splits",
                e.id
            )));
        }
        Ok(())
    }

    pub fn check_files(&self) -> Result<()> {
        for e in &self.shapes {
            if !e.volume.is_file() {
                return Err(Error::Manifest(format!(
                    "volume for `{}` not found: {}",
                    e.id,
                    e.volume.display()
                )));
            }
        }
        Ok(())
    }

    /// Entries of one split and source, in manifest order.
    pub fn select(&self, split: Split, source: &Source) -> Vec<&ManifestEntry> {
        self.shapes
            .iter()
            .filter(|e| e.split == split && &e.source == source)
            .collect()
    }

    /// Method sources in order of first appearance.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.shapes {
            if let Source::Method(m) = &e.source {
                if !out.contains(m) {
                    out.push(m.clone());
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Reads, validates and checks that every referenced volume exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<CohortManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let m = CohortManifest::from_json(&text, base)?;
    m.check_files()?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: &str, split: &str, source: &str) -> String {
        format!(r#"{{"id":"{id}","volume":"{id}.mhd","split":"{split}","source":{source}}}"#)
    }

    fn doc(entries: &[String]) -> String {
        format!(r#"{{"shapes":[{}]}}"#, entries.join(","))
    }

    #[test]
    fn femur_sized_split_is_valid() {
        let mut es: Vec<String> = (0..40).map(|i| entry(&format!("tr{i}"), "train", "\"gt\"")).collect();
        es.extend((0..9).map(|i| entry(&format!("te{i}"), "test", "\"gt\"")));
        let m = CohortManifest::from_json(&doc(&es), Path::new("/data")).unwrap();
        assert_eq!(m.select(Split::Train, &Source::GroundTruth).len(), 40);
        assert_eq!(m.select(Split::Test, &Source::GroundTruth).len(), 9);
        assert_eq!(m.shapes[0].volume, PathBuf::from("/data/tr0.mhd"));
    }

    #[test]
    fn id_in_both_splits_rejected() {
        let es = [entry("a", "train", "\"gt\""), entry("a", "test", "\"gt\"")];
        assert!(matches!(
            CohortManifest::from_json(&doc(&es), Path::new(".")),
            Err(Error::Manifest(_))
        ));
    }

    #[test]
    fn duplicate_id_within_source_rejected() {
        let es = [entry("a", "train", "\"gt\""), entry("a", "train", "\"gt\"")];
        assert!(CohortManifest::from_json(&doc(&es), Path::new(".")).is_err());
    }

    #[test]
    fn method_sources_group() {
        let es = [
            entry("a", "test", "\"gt\""),
            entry("a", "test", r#"{"method":"BCP"}"#),
            entry("b", "test", r#"{"method":"BCP"}"#),
        ];
        let m = CohortManifest::from_json(&doc(&es), Path::new(".")).unwrap();
        assert_eq!(m.methods(), vec!["BCP".to_string()]);
        let bcp = m.select(Split::Test, &Source::Method("BCP".into()));
        assert_eq!(bcp.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn bad_source_tag_rejected() {
        let es = [entry("a", "test", "\"manual\"")];
        assert!(CohortManifest::from_json(&doc(&es), Path::new(".")).is_err());
    }

    #[test]
    fn missing_files_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        fs::write(&p, doc(&[entry("a", "train", "\"gt\"")])).unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Manifest(_))));
        fs::write(dir.path().join("a.mhd"), "").unwrap();
        assert!(load_manifest(&p).is_ok());
    }

    proptest! {
        #[test]
        fn json_round_trip_preserves_order(ids in prop::collection::hash_set("[a-z]{1,6}", 1..12), methods in prop::collection::vec(prop::option::of("[A-Z]{2,4}"), 12)) {
            let shapes: Vec<ManifestEntry> = ids.iter().enumerate().map(|(i, id)| ManifestEntry {
                id: id.clone(),
                volume: PathBuf::from(format!("/v/{id}.mhd")),
                split: if i % 3 == 0 { Split::Test } else { Split::Train },
                source: methods[i].clone().map(Source::Method).unwrap_or(Source::GroundTruth),
                annotation: None,
            }).collect();
            let m = CohortManifest { shapes };
            let back = CohortManifest::from_json(&m.to_json().unwrap(), Path::new("/")).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
