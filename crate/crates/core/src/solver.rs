//! Strang-split spectral integrators for the hyperbolic-parabolic system and
//! its parabolic (PKS) limit, plus a Picard iteration of the Duhamel formula
//! used as an independent oracle.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::{NormSeries, SeriesLabel};
use crate::error::{Error, Result};
use crate::grid::{norm_of, vector_norm_of, Grid, NormKind, ScalarField, Spectral, SpectralState};
use crate::kernels::{HeatPropagator, HyperbolicPropagator};
use crate::model::{evaluate_source_values, Background, ModelParams, SourceInputs, SourceSpec, StationaryState};

type C64 = Complex64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Squared spectral mass above which a run is declared blown up.
const BLOWUP_LEVEL: f64 = 1e60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Regime {
    ZeroState,
    /// perturbation around `(u_bar, 0, a u_bar / b)`
    ConstantState { u_bar: f64 },
    Pks,
}

/// One initial profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    #[default]
    Zero,
    /// `amplitude exp(-|x - center|^2 / (2 width^2))`, periodic distance; the
    /// centre defaults to the middle of the box.
    Gaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    /// `amplitude cos(2 pi k.x / L)`
    Mode { k: Vec<i64>, amplitude: f64 },
}

impl Profile {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        match self {
            Profile::Zero => Ok(()),
            Profile::Gaussian { amplitude, width, center } => {
                if !amplitude.is_finite() {
                    return Err(Error::param("amplitude", "must be finite"));
                }
                if !(*width > 0.0 && width.is_finite()) {
                    return Err(Error::param("width", "must be strictly positive"));
                }
                if let Some(c) = center {
                    if c.len() != grid.dim() || c.iter().any(|x| !x.is_finite()) {
                        return Err(Error::param("center", format!("needs {} finite coordinates", grid.dim())));
                    }
                }
                Ok(())
            }
            Profile::Mode { k, amplitude } => {
                if k.len() != grid.dim() {
                    return Err(Error::param("k", format!("needs {} entries", grid.dim())));
                }
                if !amplitude.is_finite() {
                    return Err(Error::param("amplitude", "must be finite"));
                }
                Ok(())
            }
        }
    }

    pub fn sample(&self, grid: Grid) -> ScalarField {
        match self {
            Profile::Zero => ScalarField::zeros(grid),
            Profile::Gaussian { amplitude, width, center } => {
                let mid = vec![0.5 * grid.length(); grid.dim()];
                let c = center.clone().unwrap_or(mid);
                ScalarField::from_fn(grid, |x| {
                    let r2: f64 = x.iter().zip(&c).map(|(xi, ci)| grid.periodic_offset(*xi, *ci).powi(2)).sum();
                    amplitude * (-r2 / (2.0 * width * width)).exp()
                })
            }
            Profile::Mode { k, amplitude } => {
                let scale = 2.0 * std::f64::consts::PI / grid.length();
                ScalarField::from_fn(grid, |x| {
                    let phase: f64 = x.iter().zip(k).map(|(xi, ki)| *ki as f64 * xi).sum();
                    amplitude * (scale * phase).cos()
                })
            }
        }
    }
}

/// Initial data; `v` holds one profile per component, empty meaning zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    #[serde(default)]
    pub u: Profile,
    #[serde(default)]
    pub v: Vec<Profile>,
    #[serde(default)]
    pub phi: Profile,
}

impl InitSpec {
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        self.u.validate(grid)?;
        self.phi.validate(grid)?;
        if !self.v.is_empty() && self.v.len() != grid.dim() {
            return Err(Error::param("v", format!("needs {} profiles or none", grid.dim())));
        }
        self.v.iter().try_for_each(|p| p.validate(grid))
    }

    /// Spectral coefficients of the initial `(u, v)` and `phi`.
    pub fn spectral_state(&self, spectral: &Spectral) -> SpectralState {
        let grid = *spectral.grid();
        let mut state = SpectralState::zeros(grid);
        state.w_hat[0] = spectral.forward_field(&self.u.sample(grid));
        for (j, p) in self.v.iter().enumerate() {
            state.w_hat[j + 1] = spectral.forward_field(&p.sample(grid));
        }
        state.phi_hat = spectral.forward_field(&self.phi.sample(grid));
        state
    }
}

/// `min(0.5 / beta, 0.1, 0.25 h / gamma)`
pub fn default_dt(grid: &Grid, params: &ModelParams) -> f64 {
    (0.5 / params.beta).min(0.1).min(0.25 * grid.spacing() / params.gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub grid: Grid,
    pub params: ModelParams,
    pub sources: SourceSpec,
    pub regime: Regime,
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    pub initial: InitSpec,
    /// Sobolev index of the recorded `H^s` norms
    pub hs_order: f64,
    /// keep a full snapshot every this many records
    pub snapshot_every: Option<usize>,
}

impl SolverConfig {
    pub fn new(grid: Grid, params: ModelParams, regime: Regime, t_end: f64, initial: InitSpec) -> Self {
        SolverConfig {
            grid,
            params,
            sources: SourceSpec::default_coupling(1.0),
            regime,
            dt: default_dt(&grid, &params),
            t_end,
            record_every: 1,
            initial,
            hs_order: 2.0,
            snapshot_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::param("dt", "must be strictly positive"));
        }
        if !(self.t_end >= self.dt && self.t_end.is_finite()) {
            return Err(Error::param("t_end", "must be at least dt"));
        }
        if self.record_every == 0 {
            return Err(Error::param("record_every", "must be at least 1"));
        }
        if !(self.hs_order >= 0.0) {
            return Err(Error::param("hs_order", "must be nonnegative"));
        }
        if let Regime::ConstantState { u_bar } = self.regime {
            if !(u_bar >= 0.0 && u_bar.is_finite()) {
                return Err(Error::param("u_bar", "must be nonnegative"));
            }
            if !matches!(self.sources.fbar, crate::model::Production::Zero) {
                return Err(Error::param("fbar", "the constant state is only stationary with fbar = zero"));
            }
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::param("snapshot_every", "must be at least 1"));
        }
        self.initial.validate(&self.grid)
    }

    /// Number of steps and the step actually used, so that `steps * dt = t_end`.
    pub fn step_plan(&self) -> (usize, f64) {
        let steps = ((self.t_end / self.dt) - 1e-9).ceil().max(1.0) as usize;
        (steps, self.t_end / steps as f64)
    }

    pub fn background(&self) -> Result<Background> {
        match self.regime {
            Regime::ConstantState { u_bar } => {
                let s = StationaryState::new(u_bar, &self.params)?;
                Ok(Background { u_bar: s.u_bar, phi_bar: s.phi_bar })
            }
            _ => Ok(Background::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub u: Vec<f64>,
    pub v: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
}

/// Recorded norms on a common time grid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub columns: Vec<Column>,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    fn push(&mut self, time: f64, record: Vec<(String, f64)>) {
        if self.columns.is_empty() {
            self.columns = record.iter().map(|(n, _)| Column { name: n.clone(), values: Vec::new() }).collect();
        }
        self.times.push(time);
        for (col, (_, v)) in self.columns.iter_mut().zip(record) {
            col.values.push(v);
        }
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.iter().find(|c| c.name == name).map(|c| c.values.as_slice())
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Norm series of a column; the norm is read off the `_L1/_L2/_Linf` suffix.
    pub fn series(&self, name: &str) -> Result<NormSeries> {
        let values = self.column(name).ok_or_else(|| Error::Fit(format!("no column `{name}`")))?;
        let norm = if name.ends_with("_Linf") {
            NormKind::Linf
        } else if name.ends_with("_L2") {
            NormKind::L2
        } else if name.ends_with("_L1") {
            NormKind::L1
        } else {
            return Err(Error::LabelMismatch(format!("column `{name}` is not an L1/L2/Linf norm")));
        };
        NormSeries::new(SeriesLabel::new(name, norm), self.times.clone(), values.to_vec())
    }

    /// Appends the columns of `other`, which must share the time grid.
    pub fn merge(&mut self, other: Trajectory) -> Result<()> {
        if self.times != other.times {
            return Err(Error::Config("trajectories are on different time grids".into()));
        }
        self.columns.extend(other.columns);
        Ok(())
    }
}

fn l2_hat(spectral: &Spectral, comps: &[&[C64]]) -> f64 {
    let sum: f64 = comps.iter().flat_map(|c| c.iter()).map(|z| z.norm_sqr()).sum();
    (spectral.parseval_weight() * sum).sqrt()
}

/// `|| grad f ||_{L2}` from coefficients.
fn grad_l2_hat(spectral: &Spectral, xi2: &[f64], comps: &[&[C64]]) -> f64 {
    let sum: f64 =
        comps.iter().map(|c| c.iter().zip(xi2).map(|(z, k2)| k2 * z.norm_sqr()).sum::<f64>()).sum();
    (spectral.parseval_weight() * sum).sqrt()
}

fn check_finite(time: f64, comps: &[&[C64]]) -> Result<()> {
    let total: f64 = comps.iter().flat_map(|c| c.iter()).map(|z| z.norm_sqr()).sum();
    if !total.is_finite() || total > BLOWUP_LEVEL {
        return Err(Error::BlowUp { time, detail: format!("spectral mass {total:e}") });
    }
    Ok(())
}

/// Scalar-field records `{prefix}_L1, _L2, _Linf, _Hs`.
fn scalar_records(
    spectral: &Spectral,
    prefix: &str,
    hat: &[C64],
    values: &[f64],
    hs: f64,
    out: &mut Vec<(String, f64)>,
) {
    let cell = spectral.grid().cell_volume();
    out.push((format!("{prefix}_L1"), norm_of(values, cell, NormKind::L1)));
    out.push((format!("{prefix}_L2"), l2_hat(spectral, &[hat])));
    out.push((format!("{prefix}_Linf"), norm_of(values, cell, NormKind::Linf)));
    out.push((format!("{prefix}_Hs"), spectral.sobolev_norm_hat(hat, hs)));
}

fn phi_records(spectral: &Spectral, xi2: &[f64], prefix: &str, phi_hat: &[C64], hs: f64, out: &mut Vec<(String, f64)>) {
    let cell = spectral.grid().cell_volume();
    let dim = spectral.grid().dim();
    let phi = spectral.inverse(phi_hat);
    out.push((format!("{prefix}phi_L2"), l2_hat(spectral, &[phi_hat])));
    out.push((format!("{prefix}phi_Linf"), norm_of(&phi, cell, NormKind::Linf)));
    out.push((format!("{prefix}phi_Hs"), spectral.sobolev_norm_hat(phi_hat, hs)));
    let grads: Vec<Vec<f64>> = (0..dim).map(|a| spectral.inverse(&spectral.differentiate(phi_hat, a))).collect();
    let refs: Vec<&[f64]> = grads.iter().map(|g| g.as_slice()).collect();
    out.push((format!("{prefix}gphi_L2"), grad_l2_hat(spectral, xi2, &[phi_hat])));
    out.push((format!("{prefix}gphi_Linf"), vector_norm_of(&refs, cell, NormKind::Linf)));
}

/// Per-step linear and source operators of the hyperbolic-parabolic system.
pub struct Solver {
    spectral: Spectral,
    config: SolverConfig,
    background: Background,
    dt: f64,
    steps_total: usize,
    hyper_half: HyperbolicPropagator,
    heat_half: HeatPropagator,
    xi2: Vec<f64>,
    state: SpectralState,
    steps: usize,
}

impl Solver {
    pub fn new(config: SolverConfig) -> Result<Self> {
        config.validate()?;
        if config.regime == Regime::Pks {
            return Err(Error::Config("the PKS regime runs through PksSolver".into()));
        }
        let spectral = Spectral::new(config.grid);
        let state = config.initial.spectral_state(&spectral);
        Self::with_state(config, spectral, state)
    }

    fn with_state(config: SolverConfig, spectral: Spectral, state: SpectralState) -> Result<Self> {
        let (steps_total, dt) = config.step_plan();
        let hyper_half = HyperbolicPropagator::new(&spectral, &config.params, 0.5 * dt)?;
        let heat_half = HeatPropagator::new(&spectral, 0.5 * dt, config.params.b, 1.0)?;
        let xi2 = spectral.mode_tables().1;
        let background = config.background()?;
        Ok(Solver { spectral, config, background, dt, steps_total, hyper_half, heat_half, xi2, state, steps: 0 })
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    pub fn state(&self) -> &SpectralState {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps_total(&self) -> usize {
        self.steps_total
    }

    /// `(rhs_v_hat, rhs_phi_hat)` of the source terms at a spectral state.
    fn sources(&self, w: &[Vec<C64>], phi_hat: &[C64]) -> Result<(Vec<Vec<C64>>, Vec<C64>)> {
        source_terms(&self.spectral, &self.config.sources, &self.config.params, self.background, w, phi_hat)
    }

    /// One Strang step: half linear flow, Heun on the sources, half linear flow.
    pub fn step(&mut self) -> Result<()> {
        let time = self.time();
        self.hyper_half.apply(&mut self.state.w_hat);
        self.heat_half.apply(&mut self.state.phi_hat);

        let dim = self.config.grid.dim();
        let dt = self.dt;
        let (k1v, k1p) = self.sources(&self.state.w_hat, &self.state.phi_hat)?;
        let mut w1 = self.state.w_hat.clone();
        for j in 0..dim {
            axpy(&mut w1[j + 1], dt, &k1v[j]);
        }
        let mut p1 = self.state.phi_hat.clone();
        axpy(&mut p1, dt, &k1p);
        let (k2v, k2p) = self.sources(&w1, &p1)?;
        for j in 0..dim {
            let v = &mut self.state.w_hat[j + 1];
            for m in 0..v.len() {
                v[m] += (k1v[j][m] + k2v[j][m]) * (0.5 * dt);
            }
        }
        for m in 0..self.state.phi_hat.len() {
            self.state.phi_hat[m] += (k1p[m] + k2p[m]) * (0.5 * dt);
        }

        self.hyper_half.apply(&mut self.state.w_hat);
        self.heat_half.apply(&mut self.state.phi_hat);
        self.steps += 1;
        let mut comps: Vec<&[C64]> = self.state.w_hat.iter().map(|c| c.as_slice()).collect();
        comps.push(&self.state.phi_hat);
        check_finite(time + dt, &comps)
    }

    /// Norms of the current state, in CSV column order.
    pub fn record(&self) -> Vec<(String, f64)> {
        let s = &self.spectral;
        let dim = self.config.grid.dim();
        let cell = self.config.grid.cell_volume();
        let hs = self.config.hs_order;
        let mut out = Vec::new();
        let u = s.inverse(&self.state.w_hat[0]);
        scalar_records(s, "u", &self.state.w_hat[0], &u, hs, &mut out);
        out.push(("gu_L2".into(), grad_l2_hat(s, &self.xi2, &[&self.state.w_hat[0]])));
        let vs: Vec<Vec<f64>> = (0..dim).map(|j| s.inverse(&self.state.w_hat[j + 1])).collect();
        for j in 0..dim {
            out.push((format!("v{}_L2", j + 1), l2_hat(s, &[&self.state.w_hat[j + 1]])));
            out.push((format!("v{}_Linf", j + 1), norm_of(&vs[j], cell, NormKind::Linf)));
        }
        let v_hats: Vec<&[C64]> = self.state.w_hat[1..].iter().map(|c| c.as_slice()).collect();
        let v_refs: Vec<&[f64]> = vs.iter().map(|v| v.as_slice()).collect();
        out.push(("v_agg_L2".into(), l2_hat(s, &v_hats)));
        out.push(("v_agg_Linf".into(), vector_norm_of(&v_refs, cell, NormKind::Linf)));
        out.push(("gv_L2".into(), grad_l2_hat(s, &self.xi2, &v_hats)));
        phi_records(s, &self.xi2, "", &self.state.phi_hat, hs, &mut out);
        out.push(("mass_u".into(), self.state.w_hat[0][0].re * cell));
        out
    }

    pub fn snapshot(&self) -> Snapshot {
        let s = &self.spectral;
        Snapshot {
            time: self.time(),
            u: s.inverse(&self.state.w_hat[0]),
            v: self.state.w_hat[1..].iter().map(|c| s.inverse(c)).collect(),
            phi: s.inverse(&self.state.phi_hat),
        }
    }
}

fn axpy(y: &mut [C64], a: f64, x: &[C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += xi * a;
    }
}

/// Spectral coefficients of `(-bbar v + h g, a u + fbar)` at a spectral state.
pub fn source_terms(
    spectral: &Spectral,
    spec: &SourceSpec,
    params: &ModelParams,
    background: Background,
    w: &[Vec<C64>],
    phi_hat: &[C64],
) -> Result<(Vec<Vec<C64>>, Vec<C64>)> {
    let grid = spectral.grid();
    let dim = grid.dim();
    let u = spectral.inverse(&w[0]);
    let v: Vec<Vec<f64>> = w[1..].iter().map(|c| spectral.inverse(c)).collect();
    let phi = spectral.inverse(phi_hat);
    let grad: Vec<Vec<f64>> = (0..dim).map(|a| spectral.inverse(&spectral.differentiate(phi_hat, a))).collect();
    let inputs = SourceInputs { u: &u, v: &v, phi: &phi, grad_phi: &grad };
    let mut rhs_v = vec![vec![0.0; grid.len()]; dim];
    let mut rhs_phi = vec![0.0; grid.len()];
    evaluate_source_values(&inputs, spec, params, background, &mut rhs_v, &mut rhs_phi);
    Ok((rhs_v.iter().map(|r| spectral.forward(r)).collect(), spectral.forward(&rhs_phi)))
}

fn should_snapshot(config: &SolverConfig, record_index: usize) -> bool {
    matches!(config.snapshot_every, Some(k) if record_index.is_multiple_of(k))
}

/// Integrates to `t_end`, recording every `record_every` steps and at the end.
pub fn run(config: &SolverConfig) -> Result<Trajectory> {
    let mut solver = Solver::new(config.clone())?;
    let mut traj = Trajectory::default();
    traj.push(0.0, solver.record());
    if should_snapshot(config, 0) {
        traj.snapshots.push(solver.snapshot());
    }
    let total = solver.steps_total();
    for step in 1..=total {
        solver.step()?;
        if step % config.record_every == 0 || step == total {
            let idx = traj.times.len();
            traj.push(solver.time(), solver.record());
            if should_snapshot(config, idx) {
                traj.snapshots.push(solver.snapshot());
            }
        }
    }
    Ok(traj)
}

/// Strang integrator for the parabolic limit
/// `u_t = (gamma^2/beta) Lap u - (gamma/beta) div(h g(u))`, `phi_t = Lap phi - b phi + a u + fbar`.
pub struct PksSolver {
    spectral: Spectral,
    config: SolverConfig,
    dt: f64,
    steps_total: usize,
    heat_u: HeatPropagator,
    heat_phi: HeatPropagator,
    xi2: Vec<f64>,
    u_hat: Vec<C64>,
    phi_hat: Vec<C64>,
    steps: usize,
}

impl PksSolver {
    pub fn new(config: SolverConfig) -> Result<Self> {
        config.validate()?;
        if matches!(config.regime, Regime::ConstantState { .. }) {
            return Err(Error::Config("the PKS solver has no constant-state regime".into()));
        }
        let spectral = Spectral::new(config.grid);
        let init = config.initial.spectral_state(&spectral);
        let (steps_total, dt) = config.step_plan();
        let p = config.params;
        let heat_u = HeatPropagator::new(&spectral, 0.5 * dt, 0.0, p.effective_diffusion())?;
        let heat_phi = HeatPropagator::new(&spectral, 0.5 * dt, p.b, 1.0)?;
        let xi2 = spectral.mode_tables().1;
        Ok(PksSolver {
            spectral,
            config,
            dt,
            steps_total,
            heat_u,
            heat_phi,
            xi2,
            u_hat: init.w_hat[0].clone(),
            phi_hat: init.phi_hat,
            steps: 0,
        })
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn u_hat(&self) -> &[C64] {
        &self.u_hat
    }

    pub fn phi_hat(&self) -> &[C64] {
        &self.phi_hat
    }

    fn sources(&self, u_hat: &[C64], phi_hat: &[C64]) -> Result<(Vec<C64>, Vec<C64>)> {
        let s = &self.spectral;
        let dim = s.grid().dim();
        let mut w = vec![u_hat.to_vec()];
        w.extend((0..dim).map(|_| vec![ZERO; u_hat.len()]));
        let p = self.config.params;
        let (flux, rhs_phi) = source_terms(s, &self.config.sources, &p, Background::default(), &w, phi_hat)?;
        // with v = 0 the v source is exactly h g(u)
        let mut rhs_u = vec![ZERO; u_hat.len()];
        for (a, f) in flux.iter().enumerate() {
            let d = s.differentiate(f, a);
            axpy(&mut rhs_u, -p.gamma / p.beta, &d);
        }
        Ok((rhs_u, rhs_phi))
    }

    pub fn step(&mut self) -> Result<()> {
        let time = self.time();
        let dt = self.dt;
        self.heat_u.apply(&mut self.u_hat);
        self.heat_phi.apply(&mut self.phi_hat);
        let (k1u, k1p) = self.sources(&self.u_hat, &self.phi_hat)?;
        let mut u1 = self.u_hat.clone();
        axpy(&mut u1, dt, &k1u);
        let mut p1 = self.phi_hat.clone();
        axpy(&mut p1, dt, &k1p);
        let (k2u, k2p) = self.sources(&u1, &p1)?;
        for m in 0..self.u_hat.len() {
            self.u_hat[m] += (k1u[m] + k2u[m]) * (0.5 * dt);
            self.phi_hat[m] += (k1p[m] + k2p[m]) * (0.5 * dt);
        }
        self.heat_u.apply(&mut self.u_hat);
        self.heat_phi.apply(&mut self.phi_hat);
        self.steps += 1;
        check_finite(time + dt, &[&self.u_hat, &self.phi_hat])
    }

    /// Same layout as [`Solver::record`] with a `pks_` prefix and no `v`.
    pub fn record(&self) -> Vec<(String, f64)> {
        let s = &self.spectral;
        let hs = self.config.hs_order;
        let mut out = Vec::new();
        let u = s.inverse(&self.u_hat);
        scalar_records(s, "pks_u", &self.u_hat, &u, hs, &mut out);
        out.push(("pks_gu_L2".into(), grad_l2_hat(s, &self.xi2, &[&self.u_hat])));
        phi_records(s, &self.xi2, "pks_", &self.phi_hat, hs, &mut out);
        out.push(("pks_mass_u".into(), self.u_hat[0].re * self.config.grid.cell_volume()));
        out
    }
}

pub fn run_pks(config: &SolverConfig) -> Result<Trajectory> {
    let mut solver = PksSolver::new(config.clone())?;
    let mut traj = Trajectory::default();
    traj.push(0.0, solver.record());
    for step in 1..=solver.steps_total {
        solver.step()?;
        if step % config.record_every == 0 || step == solver.steps_total {
            traj.push(solver.time(), solver.record());
        }
    }
    Ok(traj)
}

/// Both systems from identical data, stepped in lockstep; the returned
/// trajectory holds the hyperbolic columns, the `pks_` columns and
/// `diff_u_L2`, `diff_phi_L2`.
pub fn run_comparison(config: &SolverConfig) -> Result<Trajectory> {
    let mut hyper_cfg = config.clone();
    if hyper_cfg.regime == Regime::Pks {
        hyper_cfg.regime = Regime::ZeroState;
    }
    let mut pks_cfg = hyper_cfg.clone();
    pks_cfg.regime = Regime::Pks;
    let mut hyper = Solver::new(hyper_cfg)?;
    let mut pks = PksSolver::new(pks_cfg)?;
    if hyper.steps_total() != pks.steps_total || hyper.dt() != pks.dt {
        return Err(Error::Config("solver time grids differ".into()));
    }
    let record = |h: &Solver, p: &PksSolver| {
        let mut rec = h.record();
        rec.extend(p.record());
        let du: Vec<C64> = h.state().w_hat[0].iter().zip(p.u_hat()).map(|(a, b)| a - b).collect();
        let dp: Vec<C64> = h.state().phi_hat.iter().zip(p.phi_hat()).map(|(a, b)| a - b).collect();
        rec.push(("diff_u_L2".into(), l2_hat(h.spectral(), &[&du])));
        rec.push(("diff_phi_L2".into(), l2_hat(h.spectral(), &[&dp])));
        rec
    };
    let mut traj = Trajectory::default();
    traj.push(0.0, record(&hyper, &pks));
    let total = hyper.steps_total();
    for step in 1..=total {
        hyper.step()?;
        pks.step()?;
        if step % config.record_every == 0 || step == total {
            traj.push(hyper.time(), record(&hyper, &pks));
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub state: SpectralState,
    /// `max_i || X^k(s_i) - X^{k-1}(s_i) ||_{L2}` for `k = 1..=n_picard`
    pub deltas: Vec<f64>,
    pub nodes: Vec<f64>,
}

/// Picard iterates of the Duhamel formulas for `w` and `phi` on uniform
/// nodes of `[0, t_end]`, trapezoid rule in time, exact kernels per mode.
pub fn duhamel_oracle(config: &SolverConfig, n_picard: usize, quadrature_nodes: usize) -> Result<OracleResult> {
    config.validate()?;
    if config.regime == Regime::Pks {
        return Err(Error::Config("the oracle integrates the hyperbolic system".into()));
    }
    if !(config.t_end <= 1.0) {
        return Err(Error::param("t_end", "the oracle is restricted to t_end <= 1"));
    }
    if n_picard < 3 {
        return Err(Error::param("n_picard", "need at least 3 iterates"));
    }
    if quadrature_nodes < 2 {
        return Err(Error::param("quadrature_nodes", "need at least 2 nodes"));
    }
    let spectral = Spectral::new(config.grid);
    let params = config.params;
    let background = config.background()?;
    let dim = config.grid.dim();
    let m = quadrature_nodes - 1;
    let ds = config.t_end / m as f64;
    let nodes: Vec<f64> = (0..=m).map(|i| i as f64 * ds).collect();
    let hyper: Vec<HyperbolicPropagator> =
        (0..=m).map(|l| HyperbolicPropagator::new(&spectral, &params, l as f64 * ds)).collect::<Result<_>>()?;
    let heat: Vec<HeatPropagator> =
        (0..=m).map(|l| HeatPropagator::new(&spectral, l as f64 * ds, params.b, 1.0)).collect::<Result<_>>()?;

    let init = config.initial.spectral_state(&spectral);
    let free: Vec<SpectralState> = (0..=m)
        .map(|i| {
            let mut s = init.clone();
            hyper[i].apply(&mut s.w_hat);
            heat[i].apply(&mut s.phi_hat);
            s
        })
        .collect();

    let state_l2 = |a: &SpectralState, b: &SpectralState| {
        let mut sum = 0.0;
        for (x, y) in a.w_hat.iter().flatten().zip(b.w_hat.iter().flatten()) {
            sum += (x - y).norm_sqr();
        }
        for (x, y) in a.phi_hat.iter().zip(&b.phi_hat) {
            sum += (x - y).norm_sqr();
        }
        (spectral.parseval_weight() * sum).sqrt()
    };
    let scale = free.iter().map(|s| state_l2(s, &SpectralState::zeros(config.grid))).fold(0.0, f64::max);

    let mut iterate = free.clone();
    let mut deltas = Vec::with_capacity(n_picard);
    for k in 1..=n_picard {
        let forcing: Vec<(Vec<Vec<C64>>, Vec<C64>)> = iterate
            .iter()
            .map(|s| source_terms(&spectral, &config.sources, &params, background, &s.w_hat, &s.phi_hat))
            .collect::<Result<_>>()?;
        let mut next = free.clone();
        for i in 1..=m {
            for (j, (fv, fp)) in forcing.iter().enumerate().take(i + 1) {
                let weight = if j == 0 || j == i { 0.5 * ds } else { ds };
                let mut w = vec![vec![ZERO; config.grid.len()]];
                w.extend(fv.iter().cloned());
                hyper[i - j].apply(&mut w);
                let mut p = fp.clone();
                heat[i - j].apply(&mut p);
                for c in 0..=dim {
                    axpy(&mut next[i].w_hat[c], weight, &w[c]);
                }
                axpy(&mut next[i].phi_hat, weight, &p);
            }
        }
        let delta = iterate.iter().zip(&next).map(|(a, b)| state_l2(a, b)).fold(0.0, f64::max);
        if !delta.is_finite() {
            return Err(Error::NotContracting(format!("iterate {k} is not finite")));
        }
        if let Some(&prev) = deltas.last() {
            let floor = 1e-13 * scale.max(f64::MIN_POSITIVE);
            if delta >= prev && delta > floor {
                return Err(Error::NotContracting(format!("delta {delta:e} after {prev:e} at iterate {k}")));
            }
        }
        deltas.push(delta);
        iterate = next;
    }
    Ok(OracleResult { state: iterate.pop().expect("nodes"), deltas, nodes })
}
