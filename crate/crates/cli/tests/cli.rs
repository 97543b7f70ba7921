use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn otlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_otlab")).args(args).env("OTLAB_THREADS", "1").output().expect("binary runs")
}

fn template(kind: &str, dir: &Path) -> String {
    let out = otlab(&["template", kind, "--dir", dir.to_str().unwrap()]);
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.toml");
    assert_eq!(otlab(&["run", missing.to_str().unwrap()]).status.code(), Some(2));

    let text = template("rstar-tail", &tmp.path().join("out")).replacen("[seeds]", "[seeds]\ncuont = 1", 1);
    let path = tmp.path().join("typo.toml");
    fs::write(&path, text).unwrap();
    let out = otlab(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cuont"));
}

#[test]
fn all_failed_cells_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    // a cascade needs R_0 = L/8 above its target radius; L = 8 cannot satisfy r_target = 4
    let text = template("cascade", &tmp.path().join("out"))
        .replace("sides = [8.0, 16.0, 32.0, 64.0]", "sides = [8.0]")
        .replacen("count = 64", "count = 2", 1);
    let path = tmp.path().join("cascade.toml");
    fs::write(&path, text).unwrap();
    let out = otlab(&["run", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_then_inspect_and_fit() {
    let tmp = tempfile::tempdir().unwrap();
    let text = template("matching-scaling", &tmp.path().join("out"))
        .replace("sides = [8.0, 16.0, 32.0, 64.0]", "sides = [4.0, 8.0, 12.0]")
        .replacen("count = 64", "count = 2", 1);
    let path = tmp.path().join("ms.toml");
    fs::write(&path, text).unwrap();
    let out = otlab(&["run", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["total"], 6);

    let cell = fs::read_dir(tmp.path().join("out/cells")).unwrap().next().unwrap().unwrap().path();
    let out = otlab(&["inspect", cell.to_str().unwrap()]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "ok");
    assert!(v["stats"]["w2_per_area"]["mean"].as_f64().unwrap() > 0.0);

    let summary = tmp.path().join("out/summary.csv");
    let out = otlab(&["fit", summary.to_str().unwrap(), "--model", "log"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(fit["points"].as_array().unwrap().len(), 3);
    assert!(fit["slope"].as_f64().unwrap().is_finite());
}

#[test]
fn oracle_agrees_on_small_instance() {
    let tmp = tempfile::tempdir().unwrap();
    let instance = serde_json::json!({
        "src": { "domain": { "L": 4.0, "d": 2 }, "tag": "custom", "atoms": [[0.0, 0.0, 1.0], [1.0, 1.0, 1.0], [-1.5, 0.5, 1.0]] },
        "tgt": { "domain": { "L": 4.0, "d": 2 }, "tag": "custom", "atoms": [[0.5, 0.0, 1.0], [1.9, -1.9, 1.0], [-1.0, 1.0, 1.0]] },
        "cost": "periodic"
    });
    let path = tmp.path().join("inst.json");
    fs::write(&path, instance.to_string()).unwrap();
    let out = otlab(&["oracle", path.to_str().unwrap()]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["agree"], true);
    assert!((v["exact"].as_f64().unwrap() - v["oracle"].as_f64().unwrap()).abs() < 1e-12);
}
