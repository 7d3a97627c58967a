//! End-to-end runs through the experiment runner: determinism of reports,
//! the replay audit, artifact persistence, and the error paths.

use mfglab::experiment::{replay, run, ReplayOutcome};
use std::path::Path;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

const SOLVE_CONFIG: &str = r#"
kind = "solve"
seed = 42

[model]
family = "mechanical_quadratic"
[model.params]
c0 = 1.0
a = 0.4
gamma = 1.0

[rho0]
source = "gaussian"
mean = [0.8]
std = 0.5
particles = 24

[solver]
dt_t = 0.05
theta = 0.8

[experiment]
horizon_t = 3.0
"#;

#[test]
fn solve_run_writes_artifacts_and_replays() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = write_config(tmp.path(), SOLVE_CONFIG);
    let out = tmp.path().join("out");
    let text = std::fs::read_to_string(&cfg_path).unwrap();
    let report = run(&text, tmp.path(), &out, true).unwrap();
    assert!(report.pass, "{report:?}");
    // Artifact layout.
    for f in [
        "report.json",
        "manifest.json",
        "config.toml",
        "traces/summary.csv",
        "traces/residuals.csv",
        "solution/meta.json",
        "solution/paths.csv",
        "plots/fixed_point_residual.svg",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    assert!(out.join("solution/rho_flow/t00000.csv").is_file());
    // Byte-stable replay.
    assert_eq!(replay(&out).unwrap(), ReplayOutcome::Match);
}

#[test]
fn same_config_and_seed_give_byte_identical_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SOLVE_CONFIG;
    let out1 = tmp.path().join("a");
    let out2 = tmp.path().join("b");
    run(text, tmp.path(), &out1, false).unwrap();
    run(text, tmp.path(), &out2, false).unwrap();
    let r1 = std::fs::read(out1.join("report.json")).unwrap();
    let r2 = std::fs::read(out2.join("report.json")).unwrap();
    assert_eq!(r1, r2);
    // Traces too.
    let t1 = std::fs::read(out1.join("traces/residuals.csv")).unwrap();
    let t2 = std::fs::read(out2.join("traces/residuals.csv")).unwrap();
    assert_eq!(t1, t2);
}

#[test]
fn perturbed_trace_fails_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    run(SOLVE_CONFIG, tmp.path(), &out, false).unwrap();
    // Flip one cell of the summary trace.
    let path = out.join("traces/summary.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[1].split(',').map(String::from).collect();
    cells[2] = "0.5".into(); // terminal residual
    lines[1] = cells.join(",");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    match replay(&out).unwrap() {
        ReplayOutcome::Mismatch { .. } => {}
        ReplayOutcome::Match => panic!("perturbed trace must not replay"),
    }
}

#[test]
fn missing_manifest_is_artifact_corrupt() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    run(SOLVE_CONFIG, tmp.path(), &out, false).unwrap();
    std::fs::remove_file(out.join("manifest.json")).unwrap();
    assert!(matches!(
        replay(&out),
        Err(mfglab::Error::ArtifactCorrupt(_))
    ));
}

#[test]
fn verify_kind_runs_hypothesis_audit() {
    let config = r#"
kind = "verify"
seed = 7

[model]
family = "mechanical_quadratic"
[model.params]
c0 = 1.0
a = 0.3
gamma = 1.0

[experiment]
estimate_c0_trials = 48
estimate_c0_cloud = 12
hypotheses = ["H2", "H4", "H5", "H8"]
"#;
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let report = run(config, tmp.path(), &out, false).unwrap();
    assert!(report.pass, "{report:?}");
    let c0 = report.item("c0_hat").unwrap();
    assert!(c0.value > 0.9 && c0.value <= 1.0 + 1e-9);
    assert!(report.item("delta_H5").is_some());
    assert!(report.item("delta_H8").is_some());
    assert_eq!(replay(&out).unwrap(), ReplayOutcome::Match);
}

#[test]
fn turnpike_pair_run_passes_and_replays() {
    let config = r#"
kind = "turnpike_pair"
seed = 11

[model]
family = "mechanical_quadratic"
[model.params]
c0 = 1.0
a = 0.4
gamma = 1.0

[rho0]
source = "gaussian"
mean = [0.8]
std = 0.5
particles = 32

[solver]
dt_t = 0.02
theta = 0.7
fp_tol_w2 = 1e-11
inner_tol = 1e-12

[experiment]
horizon_t = 8.0
decay_shape = "backward"
fit_window_t = [4.0, 7.5]
estimate_c0_trials = 64
estimate_c0_cloud = 12

[experiment.second]
[experiment.second.params]
gamma = 2.0
"#;
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let report = run(config, tmp.path(), &out, true).unwrap();
    assert!(report.pass, "{report:?}");
    let rate = report.item("phi_rate_per_t").unwrap();
    assert!(rate.value >= rate.bound.unwrap(), "{rate:?}");
    assert!(out.join("plots/gap_decay.svg").is_file());
    assert_eq!(replay(&out).unwrap(), ReplayOutcome::Match);
}

#[test]
fn invalid_config_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let bad = "kind = \"solve\"\nseed = 1\n[model]\nfamily = \"riccati_lq\"\n[rho0]\nsource = \"gaussian\"\nparticles = 0\n";
    assert!(matches!(
        run(bad, tmp.path(), &out, false),
        Err(mfglab::Error::ConfigInvalid(_))
    ));
}
