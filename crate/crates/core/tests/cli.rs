use std::path::Path;
use std::process::{Command, Output};

fn dofsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dofsim"))
        .args(args)
        .env_remove("DOFSIM_OUT_DIR")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn formulas_print_exact_dof_first() {
    let o = dofsim(&["formulas", "--scheme", "x2_mimo", "-M", "1", "-N", "1"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().next(), Some("4/3"));

    let o = dofsim(&["formulas", "--scheme", "kx_global", "-K", "3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().next(), Some("18/11"));

    let o = dofsim(&["formulas", "--scheme", "x2_mimo", "-M", "2", "-N", "3"]);
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("24/7"));
    assert!(text.contains("OB1") && text.contains("OB2"));
}

#[test]
fn missing_config_is_reported() {
    let o = dofsim(&["run", "missing.cfg"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("missing.cfg") && err.contains("No such file"), "{err}");
}

#[test]
fn unknown_flag_prints_usage() {
    let o = dofsim(&["--bogus", "verify-all"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn bad_config_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.toml",
        "scheme = \"kx_partial\"\nmode = \"rank_verify\"\n",
    );
    let out = dir.path().join("out");
    let o = dofsim(&["run", &cfg, "--output", out.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error"));
    assert!(!out.exists());
}

#[test]
fn rank_run_writes_outputs_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "x2.toml",
        "scheme = \"x2_mimo\"\nm = 2\nn = 3\nmode = \"rank_verify\"\ntrials = 100\nmaster_seed = 9\n",
    );
    let out = dir.path().join("out");
    let o = dofsim(&["run", &cfg, "--output", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["report"]["ratio"], "24/7");
    assert_eq!(summary["report"]["rank_pass"], 1.0);
    let csv = std::fs::read_to_string(out.join("trials.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("trial,seed,rank_margin,decode_exact"));
    assert_eq!(csv.lines().count(), 101);
    assert!(out.join("transcript.jsonl").exists());
}

#[test]
fn noiseless_partial_feedback_decodes_everything() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "kx.toml",
        "scheme = \"kx_partial\"\nk = 3\nmode = \"noiseless_decode\"\ntrials = 10\n",
    );
    let out = dir.path().join("out");
    let o = dofsim(&["run", &cfg, "--output", out.to_str().unwrap()]);
    assert!(o.status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["report"]["symbols"], 9);
    assert_eq!(summary["report"]["slots"], 6);
    assert_eq!(summary["decode_exact_fraction"], 1.0);
}

#[test]
fn sweep_csv_is_identical_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "ic.toml",
        "scheme = \"k_ic\"\nk = 2\nmode = \"snr_sweep\"\ntrials = 20\nmaster_seed = 3\np_grid_db = [30, 40, 50, 60]\n",
    );
    let mut outputs = Vec::new();
    for jobs in ["1", "4"] {
        let out = dir.path().join(format!("jobs{jobs}"));
        let o = dofsim(&["--jobs", jobs, "run", &cfg, "--output", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(out);
    }
    for f in ["trials.csv", "summary.json", "plot.dat", "transcript.jsonl"] {
        let a = std::fs::read(outputs[0].join(f)).unwrap();
        let b = std::fs::read(outputs[1].join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(outputs[0].join("summary.json")).unwrap()).unwrap();
    let slope = summary["report"]["slope"].as_f64().unwrap();
    assert!((slope - 0.8).abs() < 0.08, "slope {slope}");
    let plot = std::fs::read_to_string(outputs[0].join("plot.dat")).unwrap();
    assert_eq!(plot.lines().filter(|l| !l.starts_with('#')).count(), 4);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.toml",
        "scheme = \"kx_partial\"\nk = 2\nmode = \"rank_verify\"\ntrials = 2\nmaster_seed = 1\n",
    );
    let read = |extra: &[&str], sub: &str| {
        let out = dir.path().join(sub);
        let mut args: Vec<&str> = extra.to_vec();
        let o = out.to_str().unwrap().to_string();
        args.extend(["run", &cfg, "--output", &o]);
        assert!(dofsim(&args).status.success());
        std::fs::read_to_string(out.join("trials.csv")).unwrap()
    };
    let base = read(&[], "a");
    assert_ne!(base, read(&["--seed", "2"], "b"));
    assert_eq!(base, read(&["--seed", "1"], "c"));
}
