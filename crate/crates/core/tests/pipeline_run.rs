use std::path::Path;
use std::time::Instant;

use progkit::pipeline::{
    make_synthetic_cohort, mini_cohort_config, run_pipeline, write_synthetic_cohort, PipelineConfig, Stage, StageStatus,
    Stages, SynthSpec,
};

fn bundle(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn mini_cohort_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = make_synthetic_cohort(42, 20, &SynthSpec::default()).unwrap();
    write_synthetic_cohort(&cohort, dir.path(), &mini_cohort_config(42)).unwrap();
    let cfg = PipelineConfig::load(&dir.path().join("config.json")).unwrap();
    let t = Instant::now();
    let report = run_pipeline(&cfg).unwrap();
    let elapsed = t.elapsed().as_secs_f64();
    eprintln!("run took {elapsed:.1} s: {:?}", report.metrics);
    assert!(elapsed < 120.0);
    assert!(report.stages.values().all(|s| *s == StageStatus::Ok), "{:?}", report.stages);
    let first = bundle(&cfg.paths.output);
    for f in ["manifest.json", "localize/landmarks.csv", "features/regions.csv", "classify/metrics.json",
        "survival/fit_report.json", "survival/sweep.csv", "neural/model.json", "neural/training_log.csv", "eval/metrics.json"] {
        assert!(first.iter().any(|(n, _)| n == f), "missing {f}");
    }
    std::fs::remove_dir_all(&cfg.paths.output).unwrap();
    run_pipeline(&cfg).unwrap();
    assert!(first == bundle(&cfg.paths.output), "rerun differs");
}

#[test]
fn all_stages_disabled_is_an_empty_success() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = mini_cohort_config(0);
    cfg.paths.output = dir.path().join("out");
    cfg.paths.images = dir.path().join("nowhere");
    cfg.stages = Stages::none();
    let r = run_pipeline(&cfg).unwrap();
    assert!(r.metrics.is_none());
    assert_eq!(bundle(&cfg.paths.output).len(), 1);
}

#[test]
fn missing_ehr_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = mini_cohort_config(0);
    cfg.paths.output = dir.path().join("out");
    cfg.paths.ehr_csv = dir.path().join("absent_ehr.csv");
    cfg.stages = Stages { survival: true, ..Stages::none() };
    let e = run_pipeline(&cfg).unwrap_err();
    assert_eq!(e.stage, Stage::Ingest);
    assert_ne!(e.exit_code(), 0);
    assert!(e.to_string().contains("absent_ehr.csv"), "{e}");
    assert!(dir.path().join("out/manifest.json").is_file());
}
