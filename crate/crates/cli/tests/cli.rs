use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_perfpred");

const COIN: &str = r#"
[map]
name = "biased_coin"
mu = 0.3
eps = 0.1

[loss]
name = "squared_affine"

[dynamic]
kind = "rrm"
theta0 = [0.0]
"#;

const LINEAR: &str = r#"
[map]
name = "point_mass_linear"
eps = 0.5

[loss]
name = "linear"
beta = 1.0

[dynamic]
kind = "rrm"
theta0 = [0.5]
"#;

fn perfpred(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn coin_run_converges_to_one_third() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "coin.toml", COIN);
    let out = tmp.path().join("out");
    let o = perfpred(
        tmp.path(),
        &["run", "--config", cfg.to_str().unwrap(), "--out", "out"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let report = read_json(&out.join("report.json"));
    let theta = report["final_theta"][0].as_f64().unwrap();
    assert!((theta - 1.0 / 3.0).abs() <= 1e-6, "θ = {theta}");
    assert!(
        report["verdict"]["converged"].is_u64(),
        "{}",
        report["verdict"]
    );

    let sidecar = read_json(&out.join("trajectory.json"));
    assert_eq!(sidecar["config"]["map"]["name"], "biased_coin");
    assert!(sidecar["verdict"]["converged"].is_u64());

    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["library_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["seed"], 0);

    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "iter,theta_0,perf_risk,perf_risk_se,step_norm,n_samples"
    );
}

#[test]
fn linear_counterexample_exits_with_oscillation_status() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lin.toml", LINEAR);
    let o = perfpred(
        tmp.path(),
        &["run", "--config", cfg.to_str().unwrap(), "--out", "out"],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let report = read_json(&tmp.path().join("out/report.json"));
    assert_eq!(report["verdict"], "oscillating");
}

#[test]
fn unknown_map_name_is_an_error_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "bad.toml",
        &COIN.replace("biased_coin", "fair_coin"),
    );
    let o = perfpred(
        tmp.path(),
        &["run", "--config", cfg.to_str().unwrap(), "--out", "out"],
    );
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(
        err.contains("map.name") && err.contains("fair_coin"),
        "{err}"
    );
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn bad_values_are_reported_with_their_path() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{COIN}\n[dynamic.solver]\nouter_tol = -1.0\n");
    let cfg = write_config(tmp.path(), "tol.toml", &text);
    let o = perfpred(tmp.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("dynamic.solver"), "{}", stderr(&o));

    let text = COIN.replace("[dynamic]", "[dynamic]\nstep = 0.1");
    let cfg = write_config(tmp.path(), "typo.toml", &text);
    let o = perfpred(tmp.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("dynamic") && err.contains("step"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&perfpred(tmp.path(), &["frobnicate"])), 1);
    assert_eq!(code(&perfpred(tmp.path(), &["run"])), 1);
    assert_eq!(code(&perfpred(tmp.path(), &["--help"])), 0);
}

#[test]
fn violated_contraction_condition_is_a_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let text =
        "[map]\nname = \"point_mass_affine\"\neps = 1.5\n[loss]\nname = \"squared_location\"\n";
    let cfg = write_config(tmp.path(), "div.toml", text);
    let o = perfpred(tmp.path(), &["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(
        err.contains("warning: epsilon >= gamma/beta") && err.contains("no RRM guarantee"),
        "{err}"
    );
    assert!(!err.contains("error"), "{err}");
    let quiet = perfpred(
        tmp.path(),
        &["run", "--config", cfg.to_str().unwrap(), "--quiet"],
    );
    assert!(quiet.stderr.is_empty() && quiet.stdout.is_empty());
}

#[test]
fn presets_from_the_examples_pass() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["coin", "counterexample-a", "concave-pr"] {
        let o = perfpred(tmp.path(), &["reproduce", name]);
        assert_eq!(code(&o), 0, "{name}: {}{}", stdout(&o), stderr(&o));
        assert!(
            stdout(&o).contains(&format!("PASS {name}")),
            "{}",
            stdout(&o)
        );
    }
}

#[test]
fn every_small_preset_passes() {
    let tmp = tempfile::tempdir().unwrap();
    for name in [
        "counterexample-b",
        "counterexample-c",
        "no-stable-point",
        "regularized-linear",
        "credit-small-eps",
    ] {
        let o = perfpred(tmp.path(), &["reproduce", name, "--quiet"]);
        assert_eq!(code(&o), 0, "{name}: {}", stdout(&o));
        assert!(stdout(&o).starts_with(&format!("PASS {name}")));
    }
}

#[test]
fn unknown_preset_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = perfpred(tmp.path(), &["reproduce", "counterexample-d"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown preset"), "{}", stderr(&o));
}

#[test]
fn reproduce_rejects_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let o = perfpred(tmp.path(), &["reproduce", "coin", "--seed", "3"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--seed"));
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn presets_write_only_inside_their_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["coin", "concave-pr"] {
        let dir = format!("runs/{name}");
        let o = perfpred(tmp.path(), &["reproduce", name, "--out", &dir, "--quiet"]);
        assert_eq!(code(&o), 0);
    }
    let files: Vec<String> = files_under(tmp.path())
        .iter()
        .map(|p| p.to_string_lossy().replace('\\', "/"))
        .collect();
    assert_eq!(
        files,
        [
            "runs/coin/manifest.json",
            "runs/coin/report.json",
            "runs/coin/trajectory.csv",
            "runs/coin/trajectory.json",
            "runs/concave-pr/manifest.json",
            "runs/concave-pr/report.json",
        ]
    );
}

#[test]
fn manifest_reruns_to_identical_trajectory_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "coin.toml", COIN);
    // Sampled procedure with flag overrides: the echo has to capture them.
    let o = perfpred(
        tmp.path(),
        &[
            "run-rerm",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "a",
            "--seed",
            "7",
            "--max-iters",
            "12",
        ],
    );
    assert!(matches!(code(&o), 0 | 2), "{}", stderr(&o));
    let o = perfpred(
        tmp.path(),
        &["run", "--config", "a/manifest.json", "--out", "b"],
    );
    assert!(matches!(code(&o), 0 | 2), "{}", stderr(&o));
    for f in ["trajectory.csv", "trajectory.json"] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let csv = fs::read_to_string(tmp.path().join("a/trajectory.csv")).unwrap();
    assert!(csv.lines().count() <= 14, "max-iters ignored");
    let manifest = read_json(&tmp.path().join("a/manifest.json"));
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["config"]["dynamic"]["kind"], "rerm");
}

#[test]
fn seed_changes_sampled_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "coin.toml", COIN);
    let c = cfg.to_str().unwrap();
    perfpred(
        tmp.path(),
        &["run-rerm", "--config", c, "--out", "s1", "--seed", "1"],
    );
    perfpred(
        tmp.path(),
        &["run-rerm", "--config", c, "--out", "s2", "--seed", "2"],
    );
    let a = fs::read(tmp.path().join("s1/trajectory.csv")).unwrap();
    let b = fs::read(tmp.path().join("s2/trajectory.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn sensitivity_diagnosis_matches_the_declared_epsilon() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "lin.toml", LINEAR);
    let o = perfpred(
        tmp.path(),
        &[
            "diagnose-sensitivity",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "out",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_json(&tmp.path().join("out/report.json"));
    let s = &report["sensitivity"];
    assert_eq!(s["method"], "exact1d");
    assert!((s["sup_ratio"].as_f64().unwrap() - 0.5).abs() < 1e-9, "{s}");
    assert!(report.get("verdict").is_none());
    assert!(!tmp.path().join("out/trajectory.csv").exists());
}

#[test]
fn brute_force_finds_the_optimum_without_a_stable_point() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "[map]\nname = \"step_half\"\n[loss]\nname = \"squared_location\"\n[diagnostics]\ngrid_resolution = 1001\n";
    let cfg = write_config(tmp.path(), "step.toml", text);
    let o = perfpred(
        tmp.path(),
        &[
            "brute-force-pr",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "out",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let opt = &read_json(&tmp.path().join("out/report.json"))["optimum"];
    assert!(
        (opt["theta"][0].as_f64().unwrap() - 0.5).abs() <= 1e-3,
        "{opt}"
    );
    assert!(
        (opt["value"].as_f64().unwrap() - 0.25).abs() <= 1e-3,
        "{opt}"
    );
}

#[test]
fn gradient_run_with_diagnostics() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!("{COIN}\n[diagnostics]\nclosenesss = true\n");
    let cfg = write_config(tmp.path(), "bad.toml", &text);
    assert_eq!(
        code(&perfpred(
            tmp.path(),
            &["run-rgd", "--config", cfg.to_str().unwrap()]
        )),
        1
    );

    let text = format!("{COIN}\n[diagnostics]\ncloseness = true\nlipschitz = true\n");
    let cfg = write_config(tmp.path(), "rgd.toml", &text);
    let o = perfpred(
        tmp.path(),
        &["run-rgd", "--config", cfg.to_str().unwrap(), "--out", "out"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_json(&tmp.path().join("out/report.json"));
    assert_eq!(report["procedure"], "rgd");
    assert_eq!(report["eta"], 0.5);
    let c = &report["closeness"];
    assert_eq!(c["violation"], false, "{c}");
    assert!(c["gap"].as_f64().unwrap() <= c["bound"].as_f64().unwrap());
}

#[test]
fn strategic_simulation_records_both_risks() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"
[map]
name = "strategic"
eps = 0.05
[map.data]
kind = "synthetic"
n = 200
m = 4
strategic_count = 2
seed = 3
[loss]
name = "logistic_l2"
"#;
    let cfg = write_config(tmp.path(), "credit.toml", text);
    let o = perfpred(
        tmp.path(),
        &[
            "strategic-sim",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "out",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_json(&tmp.path().join("out/report.json"));
    let s = &report["strategic"];
    let iterates = fs::read_to_string(tmp.path().join("out/trajectory.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    assert_eq!(s["post_shift"].as_array().unwrap().len(), iterates);
    assert_eq!(s["post_training"].as_array().unwrap().len(), iterates - 1);
    assert_eq!(s["accuracy"].as_array().unwrap().len(), iterates);
    assert_eq!(s["eps"], 0.05);
    assert_eq!(s["gamma"], 1000.0 / 200.0);

    let manifest = read_json(&tmp.path().join("out/manifest.json"));
    assert_eq!(manifest["command"], "strategic-sim");

    let o = perfpred(
        tmp.path(),
        &[
            "strategic-sim",
            "--config",
            "out/manifest.json",
            "--out",
            "again",
        ],
    );
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(tmp.path().join("out/trajectory.csv")).unwrap(),
        fs::read(tmp.path().join("again/trajectory.csv")).unwrap()
    );

    let coin = write_config(tmp.path(), "coin.toml", COIN);
    let o = perfpred(
        tmp.path(),
        &["strategic-sim", "--config", coin.to_str().unwrap()],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("map.name"), "{}", stderr(&o));
}
