use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pathcache"))
}

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes a small variant of the 4 MB preset next to a copy of ref60.
fn small_config(dir: &Path) -> PathBuf {
    std::fs::copy(scenarios().join("ref60.toml"), dir.join("ref60.toml")).unwrap();
    let text = std::fs::read_to_string(scenarios().join("preset-4mb.toml"))
        .unwrap()
        .replace("count = 1000", "count = 40");
    let path = dir.join("small.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(cfg: &Path, mode: &str, out: &Path, extra: &[&str]) -> Output {
    bin()
        .args(["run", "--config"])
        .arg(cfg)
        .args(["--mode", mode, "--out"])
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn run_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = dir.path().join("eo");
    let o = run(&cfg, "edge_only", &out, &["--trace", "--snapshot", "--dump-readings"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mode edge_only"));
    for f in ["report.json", "downloads.csv", "traffic.csv", "trace.csv", "caches.json", "readings.jsonl"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.lines().skip(1).all(|l| l.split(',').count() == 5));
}

#[test]
fn runs_are_byte_identical_and_seed_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let c = dir.path().join("c");
    assert!(run(&cfg, "edge_plus_core", &a, &[]).status.success());
    assert!(run(&cfg, "edge_plus_core", &b, &[]).status.success());
    assert!(run(&cfg, "edge_plus_core", &c, &["--seed", "7"]).status.success());
    let read = |d: &Path| std::fs::read(d.join("report.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    let csv = |d: &Path| std::fs::read(d.join("downloads.csv")).unwrap();
    assert_eq!(csv(&a), csv(&b));
}

#[test]
fn compare_reports_reduction() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let mut reports = Vec::new();
    for mode in ["legacy", "edge_only", "edge_plus_core"] {
        let out = dir.path().join(mode);
        assert!(run(&cfg, mode, &out, &[]).status.success());
        reports.push(out.join("report.json"));
    }
    let o = bin().arg("compare").args(&reports).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("legacy"));
    assert!(text.contains("57.7%"), "{text}");
    assert!(text.contains("edge_only -> edge_plus_core"));

    let o = bin().arg("compare").arg("--json").args(&reports).output().unwrap();
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["modes"].as_array().unwrap().len(), 3);
}

#[test]
fn compare_rejects_different_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let a = dir.path().join("a");
    assert!(run(&cfg, "legacy", &a, &[]).status.success());
    let text = std::fs::read_to_string(&cfg).unwrap().replace("count = 40", "count = 41");
    let other = dir.path().join("other.toml");
    std::fs::write(&other, text).unwrap();
    let b = dir.path().join("b");
    assert!(run(&other, "legacy", &b, &[]).status.success());
    let o = bin()
        .arg("compare")
        .args([a.join("report.json"), b.join("report.json")])
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("sensor counts differ"), "{}", stderr(&o));
}

#[test]
fn validate_topology_checks_the_reference_profile() {
    let ok = bin()
        .args(["validate-topology", "--reference"])
        .arg(scenarios().join("ref60.toml"))
        .output()
        .unwrap();
    assert!(ok.status.success(), "{}", stderr(&ok));
    assert!(stdout(&ok).contains("11 core, 12 edge, 35 end, 1 control"));

    let dir = tempfile::tempdir().unwrap();
    let slow = dir.path().join("slow.toml");
    let text = std::fs::read_to_string(scenarios().join("ref60.toml")).unwrap();
    // turn the first 100 Mb/s link into a 50 Mb/s one
    let text = text.replacen("bandwidth = 100_000_000", "bandwidth = 50_000_000", 1);
    std::fs::write(&slow, text).unwrap();
    let plain = bin().arg("validate-topology").arg(&slow).output().unwrap();
    assert!(plain.status.success());
    let strict = bin().args(["validate-topology", "--reference"]).arg(&slow).output().unwrap();
    assert!(!strict.status.success());
    assert!(stdout(&strict).contains("violation: core-side link"));
}

#[test]
fn bad_inputs_fail_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.toml");
    std::fs::write(&broken, "[[node]]\nid = 0\nkind = \"gateway\"\n[[node]]\nid = 0\nkind = \"edge\"\n").unwrap();
    let o = bin().arg("validate-topology").arg(&broken).output().unwrap();
    assert!(!o.status.success());
    assert!(stderr(&o).contains("duplicate node id 0"), "{}", stderr(&o));

    let cfg = small_config(dir.path());
    let o = run(&cfg, "hybrid", &dir.path().join("x"), &[]);
    assert!(!o.status.success());

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "topology = \"ref60.toml\"\n[model]\ngoodput = 2.0\n").unwrap();
    let o = run(&bad, "legacy", &dir.path().join("y"), &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("model.goodput"), "{}", stderr(&o));

    let o = run(&dir.path().join("missing.toml"), "legacy", &dir.path().join("z"), &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("missing.toml"));
}
