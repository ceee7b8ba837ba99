use std::fs;
use std::path::Path;
use std::process::Command;

use chemotaxis_core::scenario::{execute, parse_config, RunSummary, Status};
use chemotaxis_core::solver::{
    duhamel_oracle, InitSpec, PksSolver, Profile, Regime, Solver, SolverConfig,
};
use chemotaxis_core::{Grid, ModelParams, SpectralState};

const BIN: &str = env!("CARGO_BIN_EXE_chemotaxis");

fn small_zero_state(dir: &Path) -> String {
    format!(
        r#"
scenario = "zero_state"
seed = 7
output_dir = "{}"

[grid]
dim = 1
points = 256
length = 100.0

[model]
gamma = 1.0
beta = 1.0
a = 1.0
b = 1.0

[time]
t_end = 30.0
record_every = 5

[initial]
u = {{ kind = "gaussian", amplitude = 0.01, width = 1.0 }}

[fit]
window = [5.0, 30.0]
"#,
        dir.display()
    )
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn csv_and_report_schema() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = parse_config(&small_zero_state(tmp.path())).unwrap();
    let (summary, _) = execute(&cfg, true).unwrap();

    let json = fs::read_to_string(tmp.path().join("report.json")).unwrap();
    let back: RunSummary = serde_json::from_str(&json).unwrap();
    assert_eq!(back, summary);
    for check in &back.checks {
        assert!(check.expected.is_finite() && check.tolerance.is_finite(), "{}", check.name);
    }
    assert!(!back.expected_rates.entries.is_empty());

    let csv = fs::read_to_string(tmp.path().join("series.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header[0], "t");
    for name in ["u_L2", "u_Linf", "v1_L2", "v_agg_L2", "phi_L2", "gphi_Linf", "u_Hs", "mass_u"] {
        assert!(header.contains(&name), "missing column {name}");
    }
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert!(rows.len() > 10);
    assert!(rows.iter().all(|r| r.len() == header.len() && r.iter().all(|x| x.is_finite())));
    assert!(rows.windows(2).all(|w| w[1][0] > w[0][0]));

    let snaps: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("snapshots.json")).unwrap()).unwrap();
    assert!(snaps.as_array().is_some_and(|a| !a.is_empty()));
}

#[test]
fn output_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &small_zero_state(&tmp.path().join("unused")));
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        let status = Command::new(BIN)
            .args(["run", config.to_str().unwrap(), "--seed", "3", "--output-dir", dir.to_str().unwrap()])
            .output()
            .unwrap();
        assert!(status.status.code().is_some());
        outputs.push(fs::read(dir.join("series.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write_config(tmp.path(), &small_zero_state(&tmp.path().join("out")));
    let out = Command::new(BIN).args(["check-config", good.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let resolved: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(resolved["scenario"], "zero_state");

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, small_zero_state(tmp.path()).replace("gamma = 1.0", "gamma = -1.0")).unwrap();
    let out = Command::new(BIN).args(["check-config", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gamma"));
    let out = Command::new(BIN).args(["run", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = Command::new(BIN).args(["expected-rates", "--dim", "2"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("u_L2"));

    // a window with too few records leaves fits unreliable or missing
    let short = write_config(
        tmp.path(),
        &small_zero_state(&tmp.path().join("short")).replace("t_end = 30.0", "t_end = 6.0"),
    );
    let out = Command::new(BIN).args(["run", short.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn blow_up_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let text = small_zero_state(tmp.path())
        .replace("amplitude = 0.01", "amplitude = 1e4")
        .replace("t_end = 30.0", "t_end = 20.0");
    let cfg = parse_config(&text).unwrap();
    let (summary, status) = execute(&cfg, false).unwrap();
    assert_eq!(status, Status::BlowUp);
    assert_eq!(status.exit_code(), 3);
    assert!(summary.diagnostics.blow_up.is_some());
    assert!(!summary.pass);
}

fn smooth_config(dt: f64) -> SolverConfig {
    let grid = Grid::new(1, 64, 20.0).unwrap();
    let init = InitSpec {
        u: Profile::Gaussian { amplitude: 0.5, width: 2.0, center: None },
        v: vec![Profile::Mode { k: vec![1], amplitude: 0.2 }],
        phi: Profile::Gaussian { amplitude: 0.3, width: 3.0, center: Some(vec![4.0]) },
    };
    let mut c = SolverConfig::new(grid, ModelParams::default(), Regime::ZeroState, 2.0, init);
    c.dt = dt;
    c
}

fn state_gap(a: &SpectralState, b: &SpectralState) -> f64 {
    let w = a.w_hat.iter().flatten().zip(b.w_hat.iter().flatten());
    let p = a.phi_hat.iter().zip(&b.phi_hat);
    w.chain(p).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

fn observed_order(errors: [f64; 2]) -> f64 {
    (errors[0] / errors[1]).log2()
}

#[test]
fn strang_self_convergence() {
    let states: Vec<SpectralState> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&dt| {
            let mut s = Solver::new(smooth_config(dt)).unwrap();
            for _ in 0..s.steps_total() {
                s.step().unwrap();
            }
            s.state().clone()
        })
        .collect();
    let order = observed_order([state_gap(&states[0], &states[1]), state_gap(&states[1], &states[2])]);
    assert!(order >= 1.9, "order {order}");
}

#[test]
fn pks_self_convergence() {
    let finals: Vec<Vec<num_complex::Complex64>> = [0.1, 0.05, 0.025]
        .iter()
        .map(|&dt| {
            let mut c = smooth_config(dt);
            c.regime = Regime::Pks;
            let mut s = PksSolver::new(c.clone()).unwrap();
            let (steps, _) = c.step_plan();
            for _ in 0..steps {
                s.step().unwrap();
            }
            s.u_hat().iter().chain(s.phi_hat()).copied().collect()
        })
        .collect();
    let gap = |a: &[num_complex::Complex64], b: &[num_complex::Complex64]| {
        a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
    };
    let order = observed_order([gap(&finals[0], &finals[1]), gap(&finals[1], &finals[2])]);
    assert!(order >= 1.9, "order {order}");
}

#[test]
fn oracle_matches_splitting_for_small_data() {
    let mut c = smooth_config(0.01);
    c.t_end = 1.0;
    let oracle = duhamel_oracle(&c, 6, 201).unwrap();
    let mut s = Solver::new(c).unwrap();
    for _ in 0..s.steps_total() {
        s.step().unwrap();
    }
    let zero = SpectralState::zeros(s.state().grid);
    let rel = state_gap(&oracle.state, s.state()) / state_gap(s.state(), &zero);
    assert!(rel <= 1e-3, "relative gap {rel}");
    assert!(oracle.deltas.windows(2).all(|w| w[1] < w[0]));
}
