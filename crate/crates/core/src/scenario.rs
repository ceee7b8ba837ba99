//! Scenario configs, the four scenario families and their output files
//! (`series.csv`, `report.json`, optional `snapshots.json`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::analysis::{
    assemble_report, constant_state_rate, expected_table, fit_decay, nu_k, pks_difference_rate,
    weighted_running_sup, DecayFit, DecayReport, ExpectedTable, FitKind, NormSeries,
};
use crate::error::{Error, Result};
use crate::grid::{Grid, NormKind, Spectral};
use crate::kernels::{
    measure_kernel_decay, propagator_gap, refined_remainder_decay, Block, KernelPart, KernelProbe, KernelSplit,
};
use crate::model::{ModelParams, SourceSpec};
use crate::solver::{default_dt, run, run_comparison, InitSpec, Regime, SolverConfig, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    ZeroState,
    ConstantState,
    PksCompare,
    KernelRates,
}

impl ScenarioKind {
    fn parse(name: &str) -> Option<Self> {
        match name {
            "zero_state" => Some(ScenarioKind::ZeroState),
            "constant_state" => Some(ScenarioKind::ConstantState),
            "pks_compare" => Some(ScenarioKind::PksCompare),
            "kernel_rates" => Some(ScenarioKind::KernelRates),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub window: (f64, f64),
    pub tolerance_l2: f64,
    pub tolerance_linf: f64,
    /// tolerance on the `v` rate, `tolerance_l2` unless set
    pub tolerance_v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantSettings {
    pub u_bar: f64,
    /// time at which the functionals are first read
    pub reference_time: f64,
    /// allowed growth of each functional after `reference_time`
    pub growth_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSettings {
    pub cutoff_radius: f64,
    pub probe_width: f64,
    pub norm: NormKind,
    pub t_min: f64,
    pub t_max: f64,
    pub t_points: usize,
    pub exp_window: (f64, f64),
}

/// Validated scenario with every default resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub solver: SolverConfig,
    pub fit: FitSettings,
    pub constant_state: Option<ConstantSettings>,
    pub kernel_rates: Option<KernelSettings>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    scenario: Spanned<String>,
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    grid: RawGrid,
    model: RawModel,
    sources: Option<SourceSpec>,
    time: RawTime,
    initial: Option<InitSpec>,
    fit: Option<RawFit>,
    constant_state: Option<Spanned<RawConstant>>,
    kernel_rates: Option<RawKernel>,
    output: Option<RawOutput>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    dim: Spanned<usize>,
    points: Spanned<usize>,
    length: Spanned<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    gamma: Spanned<f64>,
    beta: Spanned<f64>,
    a: Spanned<f64>,
    b: Spanned<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTime {
    t_end: Spanned<f64>,
    dt: Option<Spanned<f64>>,
    record_every: Option<Spanned<usize>>,
    hs_order: Option<Spanned<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFit {
    window: Option<Spanned<[f64; 2]>>,
    tolerance_l2: Option<f64>,
    tolerance_linf: Option<f64>,
    tolerance_v: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstant {
    u_bar: Option<Spanned<f64>>,
    reference_time: Option<f64>,
    growth_factor: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKernel {
    cutoff_radius: Option<f64>,
    probe_width: Option<f64>,
    norm: Option<NormKind>,
    t_min: Option<f64>,
    t_max: Option<f64>,
    t_points: Option<usize>,
    exp_window: Option<[f64; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    snapshot_every: Option<usize>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count() + 1
}

/// Attaches the key and the line of its value to a validation error.
fn at<T>(text: &str, key: &str, span: std::ops::Range<usize>, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Config(format!("`{key}` (line {}): {e}", line_of(text, span.start))))
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let scenario = ScenarioKind::parse(raw.scenario.get_ref()).ok_or_else(|| {
        Error::Config(format!(
            "`scenario` (line {}): unknown scenario `{}`, expected zero_state, constant_state, pks_compare or kernel_rates",
            line_of(text, raw.scenario.span().start),
            raw.scenario.get_ref()
        ))
    })?;

    let g = &raw.grid;
    let grid = at(
        text,
        "grid",
        g.points.span(),
        Grid::new(*g.dim.get_ref(), *g.points.get_ref(), *g.length.get_ref()),
    )?;

    let m = &raw.model;
    let params = ModelParams { gamma: *m.gamma.get_ref(), beta: *m.beta.get_ref(), a: *m.a.get_ref(), b: *m.b.get_ref() };
    for (key, span) in [("gamma", m.gamma.span()), ("beta", m.beta.span()), ("a", m.a.span()), ("b", m.b.span())] {
        let check = params.validate();
        if let Err(Error::InvalidParameter { name, .. }) = &check {
            if name == key {
                at(text, &format!("model.{key}"), span, check)?;
            }
        }
    }

    let t = &raw.time;
    let t_end = *t.t_end.get_ref();
    let dt = t.dt.as_ref().map(|d| *d.get_ref()).unwrap_or_else(|| default_dt(&grid, &params));
    let record_every = match &t.record_every {
        Some(r) => *r.get_ref(),
        None => ((0.25 / dt).round() as usize).max(1),
    };
    let regime = match scenario {
        ScenarioKind::ConstantState => {
            let cs = raw.constant_state.as_ref().ok_or_else(|| {
                Error::Config("missing required table [constant_state] with key `u_bar`".into())
            })?;
            let u_bar = cs.get_ref().u_bar.as_ref().ok_or_else(|| {
                Error::Config(format!(
                    "missing required key `u_bar` in [constant_state] (line {})",
                    line_of(text, cs.span().start)
                ))
            })?;
            Regime::ConstantState { u_bar: *u_bar.get_ref() }
        }
        _ => Regime::ZeroState,
    };
    let solver = SolverConfig {
        grid,
        params,
        sources: raw.sources.unwrap_or_else(|| SourceSpec::default_coupling(1.0)),
        regime,
        dt,
        t_end,
        record_every,
        initial: raw.initial.unwrap_or_default(),
        hs_order: t.hs_order.as_ref().map(|h| *h.get_ref()).unwrap_or(2.0),
        snapshot_every: raw.output.and_then(|o| o.snapshot_every),
    };
    validate_solver(text, &raw.time, raw.constant_state.as_ref(), &solver)?;

    let fit_raw = raw.fit.as_ref();
    let default_hi = t_end.min(0.4 * grid.length() / params.gamma);
    let window = match fit_raw.and_then(|f| f.window.as_ref()) {
        Some(w) => {
            let [lo, hi] = *w.get_ref();
            if !(lo < hi && lo >= 0.0) {
                return Err(Error::Config(format!(
                    "`fit.window` (line {}): need 0 <= lo < hi",
                    line_of(text, w.span().start)
                )));
            }
            (lo, hi)
        }
        None => (10.0, default_hi),
    };
    let tolerance_l2 = fit_raw.and_then(|f| f.tolerance_l2).unwrap_or(0.1);
    let fit = FitSettings {
        window,
        tolerance_l2,
        tolerance_linf: fit_raw.and_then(|f| f.tolerance_linf).unwrap_or(0.15),
        tolerance_v: fit_raw.and_then(|f| f.tolerance_v).unwrap_or(tolerance_l2),
    };

    let constant_state = match (scenario, &raw.constant_state) {
        (ScenarioKind::ConstantState, Some(cs)) => {
            let cs = cs.get_ref();
            Some(ConstantSettings {
                u_bar: cs.u_bar.as_ref().map(|u| *u.get_ref()).unwrap_or(0.0),
                reference_time: cs.reference_time.unwrap_or(10.0),
                growth_factor: cs.growth_factor.unwrap_or(2.0),
            })
        }
        _ => None,
    };

    let kernel_rates = if scenario == ScenarioKind::KernelRates {
        let k = raw.kernel_rates.as_ref();
        let settings = KernelSettings {
            cutoff_radius: k.and_then(|k| k.cutoff_radius).unwrap_or_else(|| params.branch_radius()),
            probe_width: k.and_then(|k| k.probe_width).unwrap_or(4.0 * grid.spacing()),
            norm: k.and_then(|k| k.norm).unwrap_or(NormKind::L2),
            t_min: k.and_then(|k| k.t_min).unwrap_or(1.0),
            t_max: k.and_then(|k| k.t_max).unwrap_or(t_end),
            t_points: k.and_then(|k| k.t_points).unwrap_or(120),
            exp_window: k.and_then(|k| k.exp_window).map(|[a, b]| (a, b)).unwrap_or(window),
        };
        if !(settings.t_min > 0.0 && settings.t_max > settings.t_min && settings.t_points >= 2) {
            return Err(Error::Config("`kernel_rates`: need 0 < t_min < t_max and t_points >= 2".into()));
        }
        if !(settings.cutoff_radius > 0.0 && settings.probe_width > 0.0) {
            return Err(Error::Config("`kernel_rates`: cutoff_radius and probe_width must be positive".into()));
        }
        if settings.norm == NormKind::L1 {
            return Err(Error::Config("`kernel_rates.norm`: must be L2 or Linf".into()));
        }
        Some(settings)
    } else {
        None
    };

    Ok(ScenarioConfig {
        scenario,
        seed: raw.seed.unwrap_or(0),
        output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("output")),
        solver,
        fit,
        constant_state,
        kernel_rates,
    })
}

fn validate_solver(
    text: &str,
    time: &RawTime,
    constant: Option<&Spanned<RawConstant>>,
    solver: &SolverConfig,
) -> Result<()> {
    match solver.validate() {
        Ok(()) => Ok(()),
        Err(Error::InvalidParameter { name, reason }) => {
            let span = match name.as_str() {
                "dt" => time.dt.as_ref().map(|d| d.span()),
                "t_end" => Some(time.t_end.span()),
                "record_every" => time.record_every.as_ref().map(|r| r.span()),
                "hs_order" => time.hs_order.as_ref().map(|h| h.span()),
                "u_bar" => constant.and_then(|c| c.get_ref().u_bar.as_ref()).map(|u| u.span()),
                _ => None,
            };
            let line = span.map(|s| format!(" (line {})", line_of(text, s.start))).unwrap_or_default();
            Err(Error::Config(format!("`{name}`{line}: {reason}")))
        }
        Err(e) => Err(Error::Config(e.to_string())),
    }
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path)?;
    parse_config(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// `|value - expected| <= tolerance`
    Within,
    /// `value <= expected + tolerance`
    AtMost,
    /// `|value - expected| <= tolerance |expected|`
    Relative,
}

/// One pass/fail flag with the numbers behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub kind: CheckKind,
    pub expected: f64,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub r_squared: Option<f64>,
    pub reliable: Option<bool>,
    pub note: Option<String>,
}

impl Check {
    pub fn new(name: impl Into<String>, kind: CheckKind, expected: f64, value: f64, tolerance: f64) -> Self {
        let pass = match kind {
            CheckKind::Within => (value - expected).abs() <= tolerance,
            CheckKind::AtMost => value <= expected + tolerance,
            CheckKind::Relative => (value - expected).abs() <= tolerance * expected.abs(),
        };
        Check { name: name.into(), kind, expected, value, tolerance, pass, r_squared: None, reliable: None, note: None }
    }

    fn with_fit(mut self, fit: &DecayFit) -> Self {
        self.r_squared = Some(fit.r_squared);
        self.reliable = Some(fit.reliable());
        self
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// One-line human summary.
    pub fn line(&self) -> String {
        let op = match self.kind {
            CheckKind::Within => "within",
            CheckKind::AtMost => "at most",
            CheckKind::Relative => "rel. within",
        };
        format!(
            "{} {}: value {:.6} {} {:.6} (tol {})",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            op,
            self.expected,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedFit {
    pub column: String,
    pub kind: FitKind,
    pub fit: DecayFit,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub wall_time_s: f64,
    pub steps: Option<usize>,
    pub dt: Option<f64>,
    pub mass_drift: Option<f64>,
    pub propagator_gap: Option<f64>,
    pub blow_up: Option<String>,
    pub unreliable_fits: Vec<String>,
    pub fit_errors: Vec<String>,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: ScenarioKind,
    pub config: ScenarioConfig,
    pub expected_rates: ExpectedTable,
    pub checks: Vec<Check>,
    pub decay_report: Option<DecayReport>,
    pub fits: Vec<NamedFit>,
    pub diagnostics: Diagnostics,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    BlowUp,
}

impl Status {
    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::BlowUp => 3,
        }
    }
}

/// CSV with a `t` column first; floats as `{:.16e}` (17 significant digits).
pub fn write_csv(path: &Path, times: &[f64], columns: &[(String, Vec<f64>)]) -> Result<()> {
    let mut out = String::from("t");
    for (name, values) in columns {
        if values.len() != times.len() {
            return Err(Error::Config(format!("column `{name}` has the wrong length")));
        }
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, t) in times.iter().enumerate() {
        write!(out, "{t:.16e}").expect("string write");
        for (_, values) in columns {
            write!(out, ",{:.16e}", values[i]).expect("string write");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn trajectory_columns(traj: &Trajectory) -> Vec<(String, Vec<f64>)> {
    traj.columns.iter().map(|c| (c.name.clone(), c.values.clone())).collect()
}

struct Fitter<'a> {
    window: (f64, f64),
    fits: Vec<NamedFit>,
    diagnostics: &'a mut Diagnostics,
}

impl Fitter<'_> {
    fn fit(&mut self, series: Result<NormSeries>, kind: FitKind, window: (f64, f64)) -> Option<DecayFit> {
        let series = match series {
            Ok(s) => s,
            Err(e) => {
                self.diagnostics.fit_errors.push(e.to_string());
                return None;
            }
        };
        match fit_decay(&series, window, kind) {
            Ok(fit) => {
                if !fit.reliable() {
                    self.diagnostics.unreliable_fits.push(series.label.quantity.clone());
                }
                self.fits.push(NamedFit { column: series.label.quantity.clone(), kind, fit });
                Some(fit)
            }
            Err(e) => {
                self.diagnostics.fit_errors.push(format!("{}: {e}", series.label.quantity));
                None
            }
        }
    }

    fn power(&mut self, traj: &Trajectory, column: &str) -> Option<DecayFit> {
        let w = self.window;
        self.fit(traj.series(column), FitKind::Power, w)
    }
}

fn mass_drift(traj: &Trajectory, column: &str) -> Option<f64> {
    let mass = traj.column(column)?;
    let m0 = mass[0];
    let scale = if m0 != 0.0 { m0.abs() } else { 1.0 };
    Some(mass.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max) / scale)
}

fn mass_check(drift: f64) -> Check {
    Check::new("mass_u relative drift", CheckKind::AtMost, 0.0, drift, 1e-9)
}

struct Outcome {
    checks: Vec<Check>,
    decay_report: Option<DecayReport>,
    fits: Vec<NamedFit>,
    times: Vec<f64>,
    columns: Vec<(String, Vec<f64>)>,
    snapshots: Option<Trajectory>,
}

fn zero_state(cfg: &ScenarioConfig, diag: &mut Diagnostics) -> Result<Outcome> {
    let traj = run(&cfg.solver)?;
    let n = cfg.solver.grid.dim();
    let f = &cfg.fit;
    let mut fitter = Fitter { window: f.window, fits: Vec::new(), diagnostics: diag };
    let table = expected_table(n, 2);
    let pairs = [
        ("u_L2", "u_L2"),
        ("u_Linf", "u_Linf"),
        ("v_L2", "v_agg_L2"),
        ("v_Linf", "v_agg_Linf"),
        ("phi_L2", "phi_L2"),
        ("phi_Linf", "phi_Linf"),
        ("gphi_Linf", "gphi_Linf"),
        ("D1u_L2", "gu_L2"),
        ("D1v_L2", "gv_L2"),
        ("D1phi_L2", "gphi_L2"),
    ];
    let mut table_fits = Vec::new();
    for (quantity, column) in pairs {
        if let Some(fit) = fitter.power(&traj, column) {
            table_fits.push((quantity.to_string(), fit));
        }
    }
    let get = |q: &str| table_fits.iter().find(|(k, _)| k == q).map(|(_, f)| *f);
    let nf = n as f64;
    let mut checks = Vec::new();
    if let Some(fit) = get("u_L2") {
        checks.push(Check::new("u_L2 exponent", CheckKind::Within, -nf / 4.0, fit.exponent, f.tolerance_l2).with_fit(&fit));
    }
    if let Some(fit) = get("v_L2") {
        checks.push(
            Check::new("v_L2 exponent", CheckKind::AtMost, -nu_k(n, 0), fit.exponent, f.tolerance_v)
                .with_fit(&fit)
                .with_note("one-sided: at least the stated decay"),
        );
    }
    if let Some(fit) = get("phi_L2") {
        checks.push(Check::new("phi_L2 exponent", CheckKind::Within, -nf / 4.0, fit.exponent, f.tolerance_l2).with_fit(&fit));
    }
    if let Some(fit) = get("u_Linf") {
        checks.push(Check::new("u_Linf exponent", CheckKind::AtMost, -nf / 2.0, fit.exponent, f.tolerance_linf).with_fit(&fit));
    }
    if let (Some(u), Some(g)) = (get("u_Linf"), get("gphi_Linf")) {
        checks.push(
            Check::new("gphi_Linf exponent vs u_Linf exponent", CheckKind::AtMost, u.exponent, g.exponent, 0.1)
                .with_fit(&g),
        );
    }
    let fits = fitter.fits;
    let drift = mass_drift(&traj, "mass_u").unwrap_or(0.0);
    diag.mass_drift = Some(drift);
    checks.push(mass_check(drift));
    let report = assemble_report(&table_fits, &table);
    Ok(Outcome {
        checks,
        decay_report: Some(report),
        fits,
        times: traj.times.clone(),
        columns: trajectory_columns(&traj),
        snapshots: Some(traj),
    })
}

fn constant_state(cfg: &ScenarioConfig, diag: &mut Diagnostics) -> Result<Outcome> {
    let settings = cfg.constant_state.as_ref().ok_or_else(|| Error::Config("missing [constant_state]".into()))?;
    let traj = run(&cfg.solver)?;
    let n = cfg.solver.grid.dim();
    let delta = constant_state_rate(n);
    let mut checks = Vec::new();
    let reference = traj.times.iter().position(|t| *t >= settings.reference_time);
    let columns = ["u_L2", "v_agg_L2", "phi_L2", "gphi_L2", "u_Linf", "v_agg_Linf", "phi_Linf", "gphi_Linf"];
    for column in columns {
        let series = traj.series(column)?;
        let functional = if series.label.norm == NormKind::L2 { "M" } else { "N" };
        let running = weighted_running_sup(&series, delta);
        let Some(r) = reference else {
            diag.fit_errors.push(format!("no record after t = {}", settings.reference_time));
            break;
        };
        let at_ref = running[r];
        let last = *running.last().expect("nonempty");
        diag.values.insert(format!("{functional}_{column}_at_reference"), at_ref);
        diag.values.insert(format!("{functional}_{column}_final"), last);
        let ratio = if at_ref > 0.0 { last / at_ref } else if last == 0.0 { 1.0 } else { f64::INFINITY };
        checks.push(
            Check::new(format!("{functional}^delta[{column}] growth after t_ref"), CheckKind::AtMost, settings.growth_factor, ratio, 0.0)
                .with_note(format!("delta = {delta}")),
        );
    }

    let mut fitter = Fitter { window: cfg.fit.window, fits: Vec::new(), diagnostics: diag };
    if let Some(fit) = fitter.power(&traj, "u_L2") {
        checks.push(Check::new("u_L2 exponent", CheckKind::AtMost, -delta, fit.exponent, cfg.fit.tolerance_l2).with_fit(&fit));
    }
    let fits = fitter.fits;

    // the constant state itself must be an exact fixed point
    let mut still = cfg.solver.clone();
    still.initial = InitSpec::default();
    still.t_end = still.t_end.min(100.0 * still.dt);
    let zero_traj = run(&still)?;
    let largest = zero_traj.columns.iter().flat_map(|c| c.values.iter()).fold(0.0_f64, |a, v| a.max(v.abs()));
    checks.push(Check::new("zero perturbation stays zero", CheckKind::AtMost, 0.0, largest, 0.0));

    let drift = mass_drift(&traj, "mass_u").unwrap_or(0.0);
    diag.mass_drift = Some(drift);
    checks.push(mass_check(drift));
    Ok(Outcome {
        checks,
        decay_report: None,
        fits,
        times: traj.times.clone(),
        columns: trajectory_columns(&traj),
        snapshots: Some(traj),
    })
}

fn pks_compare(cfg: &ScenarioConfig, diag: &mut Diagnostics) -> Result<Outcome> {
    let traj = run_comparison(&cfg.solver)?;
    let n = cfg.solver.grid.dim();
    let f = &cfg.fit;
    let mut fitter = Fitter { window: f.window, fits: Vec::new(), diagnostics: diag };
    let diff = fitter.power(&traj, "diff_u_L2");
    let u = fitter.power(&traj, "u_L2");
    let pks = fitter.power(&traj, "pks_u_L2");
    fitter.power(&traj, "diff_phi_L2");
    let fits = fitter.fits;
    let mut checks = Vec::new();
    if let Some(d) = diff {
        checks.push(Check::new("diff_u_L2 exponent", CheckKind::AtMost, -pks_difference_rate(n), d.exponent, f.tolerance_l2).with_fit(&d));
        if let Some(u) = u {
            checks.push(
                Check::new("diff_u_L2 minus u_L2 exponent", CheckKind::AtMost, -0.15, d.exponent - u.exponent, 0.0)
                    .with_note("difference decays faster than the solution"),
            );
        }
    }
    if let Some(p) = pks {
        checks.push(Check::new("pks_u_L2 exponent", CheckKind::Within, -(n as f64) / 4.0, p.exponent, f.tolerance_l2).with_fit(&p));
    }
    let drift = mass_drift(&traj, "mass_u").unwrap_or(0.0);
    diag.mass_drift = Some(drift);
    checks.push(mass_check(drift));
    if let Some(pd) = mass_drift(&traj, "pks_mass_u") {
        diag.values.insert("pks_mass_drift".into(), pd);
        checks.push(Check::new("pks_mass_u relative drift", CheckKind::AtMost, 0.0, pd, 1e-9));
    }
    Ok(Outcome {
        checks,
        decay_report: None,
        fits,
        times: traj.times.clone(),
        columns: trajectory_columns(&traj),
        snapshots: None,
    })
}

/// Unit vector for the `v` probe; fixed `e_1` in one dimension.
pub fn probe_direction(dim: usize, seed: u64) -> Vec<f64> {
    if dim == 1 {
        return vec![1.0];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r2: f64 = v.iter().map(|x| x * x).sum();
        if r2 > 1e-4 && r2 <= 1.0 {
            let r = r2.sqrt();
            return v.iter().map(|x| x / r).collect();
        }
    }
}

/// `points` log-spaced times in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..points).map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp()).collect()
}

fn largest_step_ratio(values: &[f64], times: &[f64], window: (f64, f64)) -> f64 {
    let inside: Vec<f64> =
        values.iter().zip(times).filter(|(_, t)| **t >= window.0 && **t <= window.1).map(|(v, _)| *v).collect();
    inside.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max)
}

fn kernel_rates(cfg: &ScenarioConfig, diag: &mut Diagnostics) -> Result<Outcome> {
    let k = cfg.kernel_rates.as_ref().ok_or_else(|| Error::Config("missing kernel settings".into()))?;
    let grid = cfg.solver.grid;
    let n = grid.dim();
    let params = cfg.solver.params;
    let spectral = Spectral::new(grid);
    let split = KernelSplit::new(params, Some(k.cutoff_radius))?;
    let probe = KernelProbe::gaussian(&spectral, k.probe_width, probe_direction(n, cfg.seed))?;
    let t_grid = log_grid(k.t_min, k.t_max, k.t_points);

    // closed form against the generic exponential on a strided sample of modes
    let stride = (grid.len() / 4096).max(1);
    let mut gap = 0.0_f64;
    for m in (0..grid.len()).step_by(stride) {
        let xi = spectral.derivative_wavevector(m);
        gap = gap.max(propagator_gap(&xi[..n], &params, 1.0)?);
    }
    diag.propagator_gap = Some(gap);

    let base = match k.norm {
        NormKind::Linf => n as f64 / 2.0,
        _ => n as f64 / 4.0,
    };
    let mut fitter = Fitter { window: cfg.fit.window, fits: Vec::new(), diagnostics: diag };
    let mut checks = Vec::new();
    let mut columns = Vec::new();
    let blocks = [
        (Block::Conservative, Block::Conservative, base),
        (Block::Conservative, Block::Dissipative, base + 0.5),
        (Block::Dissipative, Block::Conservative, base + 0.5),
        (Block::Dissipative, Block::Dissipative, base + 1.0),
    ];
    for (input, output, rate) in blocks {
        let series = measure_kernel_decay(&spectral, &split, KernelPart::Diffusive, input, output, k.norm, &t_grid, &probe)?;
        let name = format!("{}_{}", series.label.quantity, k.norm);
        let mut s = series.clone();
        s.label.quantity = name.clone();
        if let Some(fit) = fitter.fit(Ok(s), FitKind::Power, cfg.fit.window) {
            checks.push(Check::new(format!("{name} exponent"), CheckKind::Within, -rate, fit.exponent, 0.1).with_fit(&fit));
        }
        columns.push((name, series.values));
    }

    let kcal = measure_kernel_decay(
        &spectral,
        &split,
        KernelPart::Exponential,
        Block::Conservative,
        Block::Full,
        NormKind::L2,
        &t_grid,
        &probe,
    )?;
    let name = format!("{}_L2", kcal.label.quantity);
    let mut s = kcal.clone();
    s.label.quantity = name.clone();
    if let Some(fit) = fitter.fit(Ok(s), FitKind::Exp, k.exp_window) {
        checks.push(
            Check::new(format!("{name} exponential rate"), CheckKind::Relative, -0.5 * params.beta, fit.exponent, 0.1)
                .with_fit(&fit),
        );
    }
    columns.push((name, kcal.values));

    let rem = refined_remainder_decay(&spectral, &split, &t_grid, &probe)?;
    let mut r11 = rem.r11.clone();
    r11.label.quantity = "R1_11_L2".into();
    if let Some(fit) = fitter.fit(Ok(r11), FitKind::Power, cfg.fit.window) {
        let rate = n as f64 / 4.0 + 0.5;
        checks.push(Check::new("R1_11_L2 exponent", CheckKind::AtMost, -rate, fit.exponent, 0.1).with_fit(&fit));
    }
    let ratio = rem.ratio();
    let leading: Vec<f64> = rem.r11.values.iter().zip(&rem.k11.values).map(|(r, k)| r / k).collect();
    checks.push(
        Check::new("R1/K ratio step factor on window", CheckKind::AtMost, 1.0, largest_step_ratio(&ratio, &t_grid, cfg.fit.window), 0.0)
            .with_note("largest ratio(t_{i+1}) / ratio(t_i); below 1 means monotone decreasing"),
    );
    checks.push(Check::new(
        "R1_11/K_11 ratio step factor on window",
        CheckKind::AtMost,
        1.0,
        largest_step_ratio(&leading, &t_grid, cfg.fit.window),
        0.0,
    ));
    columns.push(("R1_11_L2".into(), rem.r11.values.clone()));
    columns.push(("R1_L2".into(), rem.remainder.values.clone()));
    columns.push(("K_L2".into(), rem.diffusive.values.clone()));
    columns.push(("K_11_L2".into(), rem.k11.values.clone()));
    columns.push(("R1_over_K".into(), ratio));
    let fits = fitter.fits;
    Ok(Outcome { checks, decay_report: None, fits, times: t_grid, columns, snapshots: None })
}

/// Runs a scenario, writes its files into `config.output_dir` and returns
/// the summary. A blow-up yields a failed summary rather than an error.
pub fn execute(config: &ScenarioConfig, snapshots: bool) -> Result<(RunSummary, Status)> {
    let start = Instant::now();
    let mut cfg = config.clone();
    if snapshots && cfg.solver.snapshot_every.is_none() {
        cfg.solver.snapshot_every = Some(10);
    }
    if !snapshots {
        cfg.solver.snapshot_every = None;
    }
    let mut diag = Diagnostics::default();
    if cfg.scenario != ScenarioKind::KernelRates {
        let (steps, dt) = cfg.solver.step_plan();
        diag.steps = Some(steps);
        diag.dt = Some(dt);
    }
    let result = match cfg.scenario {
        ScenarioKind::ZeroState => zero_state(&cfg, &mut diag),
        ScenarioKind::ConstantState => constant_state(&cfg, &mut diag),
        ScenarioKind::PksCompare => pks_compare(&cfg, &mut diag),
        ScenarioKind::KernelRates => kernel_rates(&cfg, &mut diag),
    };
    fs::create_dir_all(&cfg.output_dir)?;
    let expected_rates = expected_table(cfg.solver.grid.dim(), 2);
    let (outcome, status) = match result {
        Ok(o) => {
            let clean = diag.fit_errors.is_empty() && diag.unreliable_fits.is_empty();
            let pass = clean && o.checks.iter().all(|c| c.pass) && o.decay_report.as_ref().is_none_or(|r| r.all_pass());
            (Some(o), if pass { Status::Pass } else { Status::Fail })
        }
        Err(e @ Error::BlowUp { .. }) => {
            diag.blow_up = Some(e.to_string());
            (None, Status::BlowUp)
        }
        Err(e) => return Err(e),
    };
    diag.wall_time_s = start.elapsed().as_secs_f64();
    let (checks, decay_report, fits) = match &outcome {
        Some(o) => (o.checks.clone(), o.decay_report.clone(), o.fits.clone()),
        None => (Vec::new(), None, Vec::new()),
    };
    if let Some(o) = &outcome {
        write_csv(&cfg.output_dir.join("series.csv"), &o.times, &o.columns)?;
        if let Some(traj) = o.snapshots.as_ref().filter(|t| !t.snapshots.is_empty()) {
            let json = serde_json::to_string(&traj.snapshots).map_err(|e| Error::Config(e.to_string()))?;
            fs::write(cfg.output_dir.join("snapshots.json"), json)?;
        }
    }
    let summary = RunSummary {
        scenario: cfg.scenario,
        config: cfg.clone(),
        expected_rates,
        checks,
        decay_report,
        fits,
        diagnostics: diag,
        pass: status == Status::Pass,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(cfg.output_dir.join("report.json"), json)?;
    Ok((summary, status))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
scenario = "zero_state"

[grid]
dim = 1
points = 4096
length = 400.0

[model]
gamma = 1.0
beta = 1.0
a = 1.0
b = 1.0

[time]
t_end = 200.0
"#;

    #[test]
    fn minimal_config_resolves_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.scenario, ScenarioKind::ZeroState);
        assert_eq!(c.fit.window, (10.0, 160.0));
        let h = 400.0 / 4096.0;
        assert!((c.solver.dt - 0.25 * h).abs() < 1e-15);
        assert_eq!(c.solver.sources, SourceSpec::default_coupling(1.0));
    }

    #[test]
    fn constant_state_without_u_bar() {
        let text = MINIMAL.replace("zero_state", "constant_state") + "\n[constant_state]\nreference_time = 10.0\n";
        let err = parse_config(&text).unwrap_err().to_string();
        assert!(err.contains("u_bar"), "{err}");
        let err = parse_config(&MINIMAL.replace("zero_state", "constant_state")).unwrap_err().to_string();
        assert!(err.contains("u_bar"), "{err}");
    }

    #[test]
    fn negative_gamma_names_key_and_line() {
        let err = parse_config(&MINIMAL.replace("gamma = 1.0", "gamma = -1.0")).unwrap_err().to_string();
        assert!(err.contains("gamma") && err.contains("line 10") && err.contains("positive"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config(&(MINIMAL.to_string() + "bogus = 1\n")).unwrap_err().to_string();
        assert!(err.contains("bogus"), "{err}");
        let err = parse_config(&MINIMAL.replace("points = 4096", "points = 4096\nspacing = 0.1")).unwrap_err();
        assert!(err.to_string().contains("spacing"));
        let err = parse_config(&MINIMAL.replace("points = 4096", "points = \"many\"")).unwrap_err();
        assert!(err.to_string().contains("line"));
    }

    #[test]
    fn checks() {
        assert!(Check::new("a", CheckKind::Within, -0.25, -0.3, 0.1).pass);
        assert!(!Check::new("a", CheckKind::AtMost, -0.5, -0.3, 0.1).pass);
        assert!(Check::new("a", CheckKind::Relative, -0.5, -0.46, 0.1).pass);
        assert!(Check::new("a", CheckKind::AtMost, 0.0, 0.0, 0.0).pass);
    }

    #[test]
    fn probe_direction_is_unit_and_seeded() {
        let a = probe_direction(3, 7);
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-14);
        assert_eq!(a, probe_direction(3, 7));
        assert_ne!(a, probe_direction(3, 8));
        assert_eq!(probe_direction(1, 99), vec![1.0]);
    }
}
