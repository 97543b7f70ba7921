use std::fs;

use proptest::prelude::*;

use otlab_core::experiment::{
    aggregate, describe, fit_points, read_json, read_summary_csv, run_experiment, CellFile, ExperimentConfig,
    ExperimentKind, FitModel, CELLS_DIR, MANIFEST_FILE, SUMMARY_FILE, TIMINGS_FILE,
};

fn small_matching(dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(ExperimentKind::MatchingScaling, dir);
    cfg.sides = vec![8.0];
    cfg.seeds.count = 2;
    cfg.matching.radii = vec![2.0];
    cfg
}

#[test]
fn matching_run_writes_all_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_matching(tmp.path());
    let out = run_experiment(&cfg).unwrap();
    assert_eq!((out.total, out.computed, out.failed), (2, 2, 0));
    for f in [SUMMARY_FILE, MANIFEST_FILE, TIMINGS_FILE, "config.toml"] {
        assert!(tmp.path().join(f).exists(), "{f}");
    }
    let rows = read_summary_csv(fs::File::open(&out.summary).unwrap()).unwrap();
    let w2 = rows.iter().find(|r| r.statistic == "w2_per_area").unwrap();
    assert_eq!((w2.count, w2.side), (2, 8.0));
    assert!(w2.ci_lo <= w2.mean && w2.mean <= w2.ci_hi);
    for name in ["n", "field_residual", "residual_t_per_log", "gap_R2", "gap_norm_R2"] {
        assert!(rows.iter().any(|r| r.statistic == name), "{name}");
    }
    let manifest: serde_json::Value = read_json(&out.manifest).unwrap();
    assert_eq!(manifest["kind"], "matching-scaling");
    assert_eq!(manifest["cells"].as_array().unwrap().len(), 2);
    let csv = fs::read(&out.summary).unwrap();
    assert_eq!(manifest["summary_sha256"], otlab_core::experiment::sha256_hex(&csv));
    // the summary is reproducible from the cell files alone
    assert_eq!(aggregate(&cfg).unwrap(), rows);
}

#[test]
fn reruns_skip_valid_cells_and_redo_damaged_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_matching(tmp.path());
    let first = run_experiment(&cfg).unwrap();
    let summary = fs::read(&first.summary).unwrap();

    let again = run_experiment(&cfg).unwrap();
    assert_eq!((again.computed, again.skipped), (0, 2));
    assert_eq!(fs::read(&again.summary).unwrap(), summary);

    // tamper with one payload: the hash check rejects it
    let cells = tmp.path().join(CELLS_DIR);
    let victim = fs::read_dir(&cells).unwrap().next().unwrap().unwrap().path();
    let mut file: CellFile = read_json(&victim).unwrap();
    file.output.as_mut().unwrap().stats.get_mut("w2_per_area").unwrap()[0] += 1.0;
    fs::write(&victim, serde_json::to_string(&file).unwrap()).unwrap();
    let repaired = run_experiment(&cfg).unwrap();
    assert_eq!(repaired.computed, 1);
    assert_eq!(fs::read(&repaired.summary).unwrap(), summary);

    // truncated file
    fs::write(&victim, b"{").unwrap();
    assert_eq!(run_experiment(&cfg).unwrap().computed, 1);
    assert_eq!(fs::read(&first.summary).unwrap(), summary);
}

#[test]
fn independent_directories_agree_byte_for_byte() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&small_matching(a.path())).unwrap();
    let rb = run_experiment(&small_matching(b.path())).unwrap();
    assert_eq!(fs::read(ra.summary).unwrap(), fs::read(rb.summary).unwrap());
}

#[test]
fn changed_parameters_invalidate_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_matching(tmp.path());
    run_experiment(&cfg).unwrap();
    cfg.matching.radii = vec![1.5];
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.computed, 2);
}

#[test]
fn config_files_round_trip_and_reject_typos() {
    let tmp = tempfile::tempdir().unwrap();
    for kind in [
        ExperimentKind::MatchingScaling,
        ExperimentKind::HarmonicApprox,
        ExperimentKind::EpsregDecay,
        ExperimentKind::Cascade,
        ExperimentKind::RstarTail,
    ] {
        let cfg = ExperimentConfig::new(kind, tmp.path().join("out"));
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let typo = text.replacen("[seeds]", "[seeds]\ncout = 3", 1);
        assert!(ExperimentConfig::from_toml(&typo).is_err());
    }
    let bad = ExperimentConfig { schema: 99, ..ExperimentConfig::new(ExperimentKind::Cascade, "x") };
    assert!(ExperimentConfig::from_toml(&bad.to_toml().unwrap()).is_err());
}

#[test]
fn relative_output_resolves_against_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::new(ExperimentKind::RstarTail, "runs/a");
    let path = tmp.path().join("c.toml");
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap().output.dir, tmp.path().join("runs/a"));
}

#[test]
fn fit_interval_narrows_with_smaller_errors() {
    let sides = [8.0, 16.0, 32.0, 64.0];
    let means: Vec<f64> = sides.iter().map(|l: &f64| 0.16 * l.ln() + 0.1).collect();
    let wide = fit_points(&sides, &means, &[0.05; 4], FitModel::Log, "w").unwrap();
    let narrow = fit_points(&sides, &means, &[0.005; 4], FitModel::Log, "w").unwrap();
    assert!((wide.slope - 0.16).abs() < 1e-12 && (narrow.slope - 0.16).abs() < 1e-12);
    assert!(narrow.slope_ci[1] - narrow.slope_ci[0] < 0.2 * (wide.slope_ci[1] - wide.slope_ci[0]));
    assert!(wide.slope_ci[0] <= wide.slope && wide.slope <= wide.slope_ci[1]);
    let power: Vec<f64> = sides.iter().map(|l: &f64| 3.0 * l.powf(0.5)).collect();
    let p = fit_points(&sides, &power, &[0.0; 4], FitModel::Power, "p").unwrap();
    assert!((p.slope - 0.5).abs() < 1e-12);
    assert!(fit_points(&sides[..2], &means[..2], &[0.1; 2], FitModel::Log, "w").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn confidence_interval_brackets_mean(values in prop::collection::vec(-10.0f64..10.0, 1..80)) {
        let row = describe("k", 8.0, "s", &values);
        prop_assert!(row.ci_lo <= row.mean + 1e-12 && row.mean <= row.ci_hi + 1e-12);
        prop_assert!(row.min <= row.median && row.median <= row.p95 && row.p95 <= row.p99 && row.p99 <= row.max);
    }

    #[test]
    fn seed_settings_round_trip(count in 1u64..500, base in any::<u32>(), cap in 1.0f64..1e9) {
        let mut cfg = ExperimentConfig::new(ExperimentKind::Cascade, "out");
        cfg.seeds.count = count;
        cfg.seeds.base = base as u64;
        cfg.cascade.e_cap = cap;
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
