use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_voltreg"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_single_dc_stays_in_band() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/out");
    let cfg = configs().join("single_dc.toml");
    let o = run(&["run", "-c", s(&cfg), "-o", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("metrics.json"));
    assert_eq!(m["controller"], "switching");
    assert!(m["metrics"]["max_abs_deviation"].as_f64().unwrap() <= 0.05);
    assert!(m["certificate"]["epsilon"].as_f64().unwrap() < 1.0);
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 27_001);
}

#[test]
fn missing_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["run", "-c", "/definitely/not/here.toml", "-o", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_config_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("single_dc.toml");
    let o = run(&[
        "run",
        "-c",
        s(&cfg),
        "-o",
        s(dir.path()),
        "--set",
        "dt_ctrl_s=0.25",
        "--set",
        "data_center.0.bus=1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("dt_ctrl_s") && err.contains("slack"), "{err}");
}

#[test]
fn unknown_subcommand_exits_2() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn existing_outputs_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("single_dc.toml");
    let args = ["run", "-c", s(&cfg), "-o", s(dir.path()), "--set", "duration_s=700"];
    assert!(run(&args).status.success());
    let o = run(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--force"));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert!(run(&forced).status.success());
}

#[test]
fn controller_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("single_dc.toml");
    let o = run(&["run", "-c", s(&cfg), "-o", s(dir.path()), "--set", "controller=fixed"]);
    assert!(o.status.success());
    let m = json(&dir.path().join("metrics.json"));
    assert_eq!(m["controller"], "fixed");
    assert!(m["metrics"]["max_abs_deviation"].as_f64().unwrap() > 0.05);
}

#[test]
fn compare_reports_reductions() {
    for name in ["single_dc.toml", "two_dc.toml"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = configs().join(name);
        let o = run(&["compare", "-c", s(&cfg), "-o", s(dir.path())]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let c = json(&dir.path().join("compare.json"));
        assert!(c["deltas"]["max_abs_deviation"].as_f64().unwrap() < 0.0, "{name}");
        assert!(c["deltas"]["total_effort"].as_f64().unwrap() < 0.0, "{name}");
        assert!(dir.path().join("fixed.csv").exists() && dir.path().join("switching.csv").exists());
    }
}

#[test]
fn verify_default_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "-o", s(dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("epsilon"));
    assert!(!stdout.contains("FAIL"));
    let r = json(&dir.path().join("verify.json"));
    let eps = r["certificate"]["epsilon"].as_f64().unwrap();
    assert!(eps > 0.99 && eps < 1.0);
}

#[test]
fn verify_with_oversized_gain_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "-o", s(dir.path()), "--set", "gain=1.0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("gain_contraction"));
}

#[test]
fn verify_rejects_unknown_override() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify", "-o", s(dir.path()), "--set", "colour=blue"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generated_trace_replays_through_csv_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("single_dc.toml");
    let short = ["--set", "duration_s=900"];
    let o = bin()
        .args(["gen-trace", "-c", s(&cfg), "-o", s(dir.path())])
        .args(short)
        .output()
        .unwrap();
    assert!(o.status.success());
    let synth = dir.path().join("synth");
    assert!(bin()
        .args(["run", "-c", s(&cfg), "-o", s(&synth)])
        .args(short)
        .output()
        .unwrap()
        .status
        .success());

    let text = std::fs::read_to_string(&cfg).unwrap();
    let head = text.split("[[data_center]]").next().unwrap();
    let replay = format!(
        "{head}[[data_center]]\nkind = \"csv\"\nbus = 22\npath = \"trace_dc0.csv\"\npu_per_watt = 1e-7\n"
    );
    let replay_cfg = dir.path().join("replay.toml");
    std::fs::write(&replay_cfg, replay).unwrap();
    let out = dir.path().join("replay");
    let o = bin()
        .args(["run", "-c", s(&replay_cfg), "-o", s(&out)])
        .args(short)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = json(&synth.join("metrics.json"));
    let b = json(&out.join("metrics.json"));
    let dev = |m: &serde_json::Value| m["metrics"]["max_abs_deviation"].as_f64().unwrap();
    assert!((dev(&a) - dev(&b)).abs() < 1e-9);
}
