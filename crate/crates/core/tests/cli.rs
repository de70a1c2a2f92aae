use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimo-relay"))
        .arg("simulate")
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn csv_names(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn power_campaign_writes_figure_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--trials", "3", "--ns", "2", "--nr", "2", "--nd", "2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        csv_names(dir.path()),
        ["campaign.json", "capacity_vs_power.csv", "cdf_20.csv", "cdf_28.csv", "trials.csv"]
    );
    let cdf = fs::read_to_string(dir.path().join("cdf_20.csv")).unwrap();
    assert_eq!(cdf.lines().next(), Some("capacity,cdf,scheme"));
    // 4 schemes x 3 trials
    assert_eq!(cdf.lines().count(), 13);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("campaign.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["trials"], 3);
    assert!(manifest["git_describe"].is_string());
}

#[test]
fn one_scheme_one_point_one_trial_is_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--mode", "mse", "--schemes", "jds", "--sweep", "none", "--trials", "1"], dir.path());
    assert!(out.status.success());
    let body = fs::read_to_string(dir.path().join("mse_vs_power.csv")).unwrap();
    let lines: Vec<&str> = body.lines().collect();
    assert_eq!(lines[0], "power_db,scheme,sum_mse,stderr,trials");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("20.0,jds,"));
}

#[test]
fn lsr_sweep_and_plot_script() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["--sweep", "lsr", "--values", "3,7", "--schemes", "nas,nod", "--trials", "2", "--plot-script"],
        dir.path(),
    );
    assert!(out.status.success());
    let body = fs::read_to_string(dir.path().join("capacity_vs_lsr.csv")).unwrap();
    assert_eq!(body.lines().next(), Some("l_sr,scheme,ergodic_capacity,stderr,trials"));
    assert_eq!(body.lines().count(), 5);
    assert!(dir.path().join("plot_results.py").exists());
}

#[test]
fn empty_scheme_list_writes_manifest_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--schemes", "", "--trials", "2"], dir.path());
    assert!(out.status.success());
    assert_eq!(csv_names(dir.path()), ["campaign.json"]);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["--trials", "5", "--seed", "42", "--values", "26"];
    assert!(run(&args, a.path()).status.success());
    assert!(run(&[&args[..], &["--threads", "1"]].concat(), b.path()).status.success());
    for name in csv_names(a.path()) {
        assert_eq!(
            fs::read(a.path().join(&name)).unwrap(),
            fs::read(b.path().join(&name)).unwrap(),
            "{name} differs"
        );
    }
}

#[test]
fn bad_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["--schemes", "jds,xyz"][..],
        &["--sweep", "lsr", "--values", "12"],
        &["--trials", "0"],
        &["--ns", "0"],
    ] {
        let out = run(args, dir.path());
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty());
    }
}
