use super::study::{write_study, MethodSpec, StudySpec};
use super::*;
use crate::synth::{CohortSpec, Family, NoiseMode, NoiseSpec, Range};

fn study(methods: Vec<MethodSpec>) -> StudySpec {
    StudySpec {
        cohort: CohortSpec {
            family: Family::Ellipsoid { a: Range::new(4.0, 6.0), b: Range::new(3.5, 4.5), c: Range::fixed(3.5) },
            n_shapes: 8,
            dims: [18, 15, 13],
            spacing: [1.0; 3],
            seed: 5,
            noise: None,
        },
        n_train: 5,
        methods,
    }
}

fn copy(name: &str) -> MethodSpec {
    MethodSpec { name: name.into(), noise: None, annotation: None }
}

fn config(manifest: &Path, strategy: Strategy) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(manifest, strategy);
    cfg.optimizer = OptimizerParams {
        target_particles: 16,
        iterations_per_split: 20,
        max_iterations_final: 100,
        ..Default::default()
    };
    cfg.metrics.k_max = 3;
    cfg.metrics.n_samples = 50;
    cfg
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn strategy1_with_copied_masks_matches_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    write_study(&study(vec![copy("same")]), &dir.path().join("data")).unwrap();
    let cfg = config(&dir.path().join("data/manifest.json"), Strategy::Strategy1);
    let out = dir.path().join("out");
    let report = run(&cfg, &out, false).unwrap();
    assert_eq!(report.methods(), ["gt", "same"]);
    for m in [Metric::Generalization, Metric::Grassmannian] {
        assert_eq!(report.curve("gt", m).unwrap().values, report.curve("same", m).unwrap().values);
    }
    for f in ["provenance.json", "strategy1/summary.csv", "strategy1/generalization.csv", "strategy1/grassmannian.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let summary = read(&out.join("strategy1/summary.csv"));
    assert!(summary.starts_with("method,metric,k,value\ngt,generalization,1,"));
    assert!(summary.contains("same,grassmannian,mean,"));
}

#[test]
fn resume_reuses_stages_and_reproduces_reports() {
    let dir = tempfile::tempdir().unwrap();
    write_study(&study(vec![copy("same")]), &dir.path().join("data")).unwrap();
    let cfg = config(&dir.path().join("data/manifest.json"), Strategy::Strategy1);
    let out = dir.path().join("out");
    run(&cfg, &out, false).unwrap();
    let first = read(&out.join("strategy1/summary.csv"));
    let marker = out.join("strategy1/gt/train/stage.json");
    let stamp = std::fs::metadata(&marker).unwrap().modified().unwrap();

    run(&cfg, &out, true).unwrap();
    assert_eq!(std::fs::metadata(&marker).unwrap().modified().unwrap(), stamp);
    assert_eq!(read(&out.join("strategy1/summary.csv")), first);

    // a changed parameter invalidates the stages
    let mut other = cfg.clone();
    other.optimizer.seed = 9;
    run(&other, &out, true).unwrap();
    assert_ne!(std::fs::metadata(&marker).unwrap().modified().unwrap(), stamp);
}

#[test]
fn strategy2_never_reads_manual_training_masks() {
    let dir = tempfile::tempdir().unwrap();
    let noise = NoiseSpec { mode: NoiseMode::DilateErode { max_radius: 1 }, seed: 3 };
    let manifest = write_study(&study(vec![MethodSpec { name: "noisy".into(), noise: Some(noise), annotation: None }]), &dir.path().join("data")).unwrap();
    let cfg = config(&dir.path().join("data/manifest.json"), Strategy::Strategy2);
    let with_gt = run(&cfg, &dir.path().join("a"), false).unwrap();

    for e in manifest.select(Split::Train, &Source::GroundTruth) {
        std::fs::remove_file(&e.volume).unwrap();
    }
    let without = run(&cfg, &dir.path().join("b"), false).unwrap();
    assert_eq!(without.methods(), ["noisy"]);
    let keep: Vec<&ReportRow> = with_gt.rows.iter().filter(|r| r.method == "noisy").collect();
    assert_eq!(keep, without.rows.iter().collect::<Vec<_>>());
    for m in Metric::ALL {
        assert!(without.curve("noisy", m).is_some(), "{m}");
    }
}

#[test]
fn missing_sources_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_study(&study(vec![copy("same")]), &dir.path().join("data")).unwrap();
    // strategy 1 without manual test masks
    let trimmed = CohortManifest {
        shapes: manifest
            .shapes
            .iter()
            .filter(|e| !(e.split == Split::Test && e.source == Source::GroundTruth))
            .cloned()
            .collect(),
    };
    let path = dir.path().join("trimmed.json");
    std::fs::write(&path, trimmed.to_json().unwrap()).unwrap();
    let err = run(&config(&path, Strategy::Strategy1), &dir.path().join("out"), false).unwrap_err();
    assert!(err.is_validation(), "{err}");

    let mut cfg = config(&dir.path().join("data/manifest.json"), Strategy::Strategy1);
    cfg.methods = Some(vec!["absent".into()]);
    assert!(run(&cfg, &dir.path().join("out"), false).unwrap_err().is_validation());
}

#[test]
fn config_parses_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, r#"{"manifest": "m.json", "strategy": "strategy2", "grassmann_pair": "train-test", "metrics": {"k_max": 2}}"#).unwrap();
    let cfg = PipelineConfig::load(&path).unwrap();
    assert_eq!(cfg.manifest, dir.path().join("m.json"));
    assert_eq!(cfg.strategy, Strategy::Strategy2);
    assert_eq!(cfg.grassmann_pair, GrassmannPair::TrainTest);
    assert_eq!(cfg.metrics.n_samples, DEFAULT_SAMPLES);
    std::fs::write(&path, r#"{"manifest": "m.json", "typo": 1}"#).unwrap();
    assert!(PipelineConfig::load(&path).unwrap_err().is_validation());
}
