//! Per-mode linear propagators, the K / Kcal frequency split and the refined
//! heat-kernel expansion, plus decay measurements of each piece.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::{NormSeries, SeriesLabel};
use crate::error::{Error, Result};
use crate::grid::{norm_of, vector_norm_of, NormKind, ScalarField, Spectral};
use crate::model::{ModelParams, SystemMatrices};

type C64 = Complex64;

const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Gap above which the closed form and the generic exponential are considered
/// inconsistent.
pub const PROPAGATOR_ABORT_GAP: f64 = 1e-8;

/// Roots of `lambda^2 + beta lambda + gamma^2 |xi|^2 = 0`, `(lambda_+, lambda_-)`.
pub fn damped_wave_eigen(xi_norm: f64, gamma: f64, beta: f64) -> (C64, C64) {
    let disc = beta * beta - 4.0 * gamma * gamma * xi_norm * xi_norm;
    if disc >= 0.0 {
        let r = disc.sqrt();
        // avoid cancellation in the slow root
        let minus = -0.5 * (beta + r);
        let plus = if minus != 0.0 { gamma * gamma * xi_norm * xi_norm / minus } else { 0.0 };
        (C64::new(plus, 0.0), C64::new(minus, 0.0))
    } else {
        let w = 0.5 * (-disc).sqrt();
        (C64::new(-0.5 * beta, w), C64::new(-0.5 * beta, -w))
    }
}

/// `sinh(x)/x`, `sin(x)/x` with their removable singularity.
fn sinhc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 + x * x / 6.0
    } else {
        x.sinh() / x
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Entries of the longitudinal 2x2 block
/// `e^{-beta t/2} (cosh(mu t) I + t sinhc(mu t) S)`, `S = [[beta/2, -i gamma k], [-i gamma k, -beta/2]]`,
/// `mu^2 = beta^2/4 - gamma^2 k^2`. Returns `(E_uu, gamma k s, E_vv)` with the
/// off-diagonal entry equal to `-i gamma k s`.
fn longitudinal(k: f64, gamma: f64, beta: f64, t: f64) -> (f64, f64, f64) {
    let half = 0.5 * beta;
    let mu2 = half * half - gamma * gamma * k * k;
    let (c, s) = if mu2 >= 0.0 {
        let mu = mu2.sqrt();
        let x = mu * t;
        if x < 30.0 {
            let damp = (-half * t).exp();
            (damp * x.cosh(), damp * t * sinhc(x))
        } else {
            // combine exponents so neither factor overflows
            let grow = ((mu - half) * t).exp();
            let fast = (-(mu + half) * t).exp();
            (0.5 * (grow + fast), 0.5 * (grow - fast) / mu)
        }
    } else {
        let w = (-mu2).sqrt();
        let damp = (-half * t).exp();
        (damp * (w * t).cos(), damp * t * sinc(w * t))
    };
    (c + half * s, gamma * k * s, c - half * s)
}

/// `M(xi) = -i sum_j A_j xi_j + B`.
pub fn mode_symbol(matrices: &SystemMatrices, xi: &[f64]) -> DMatrix<C64> {
    let flux = matrices.flux_symbol(xi);
    let m = flux.nrows();
    DMatrix::from_fn(m, m, |r, c| -I * flux[(r, c)] + C64::new(matrices.b[(r, c)], 0.0))
}

fn norm1(m: &DMatrix<C64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a Taylor series.
pub fn expm(a: &DMatrix<C64>) -> DMatrix<C64> {
    let n = a.nrows();
    let norm = norm1(a);
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a * C64::new(0.5_f64.powi(squarings), 0.0);
    let mut result = DMatrix::<C64>::identity(n, n);
    let mut term = DMatrix::<C64>::identity(n, n);
    for j in 1..40 {
        term = &term * &scaled * C64::new(1.0 / j as f64, 0.0);
        result += &term;
        if norm1(&term) < 1e-18 * norm1(&result) {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

/// Closed-form `exp(t M(xi))` as a dense matrix.
pub fn propagator_matrix(xi: &[f64], params: &ModelParams, t: f64) -> DMatrix<C64> {
    let dim = xi.len();
    let mut e = DMatrix::<C64>::zeros(dim + 1, dim + 1);
    let k = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let perp = (-params.beta * t).exp();
    if k == 0.0 {
        e[(0, 0)] = C64::new(1.0, 0.0);
        for j in 0..dim {
            e[(j + 1, j + 1)] = C64::new(perp, 0.0);
        }
        return e;
    }
    let (uu, uv, vv) = longitudinal(k, params.gamma, params.beta, t);
    let off = -I * uv;
    e[(0, 0)] = C64::new(uu, 0.0);
    for j in 0..dim {
        let dj = xi[j] / k;
        e[(0, j + 1)] = off * dj;
        e[(j + 1, 0)] = off * dj;
        for l in 0..dim {
            let dl = xi[l] / k;
            let delta = if j == l { 1.0 } else { 0.0 };
            e[(j + 1, l + 1)] = C64::new(perp * (delta - dj * dl) + vv * dj * dl, 0.0);
        }
    }
    e
}

fn max_abs_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Max-entry gap between the closed form and the generic exponential.
pub fn propagator_gap(xi: &[f64], params: &ModelParams, t: f64) -> Result<f64> {
    let matrices = SystemMatrices::build(params, xi.len())?;
    let generic = expm(&(mode_symbol(&matrices, xi) * C64::new(t, 0.0)));
    Ok(max_abs_diff(&propagator_matrix(xi, params, t), &generic))
}

#[derive(Debug, Clone, Copy)]
struct ModeCoeffs {
    uu: f64,
    /// off-diagonal is `-i uv`
    uv: f64,
    vv: f64,
}

/// Precomputed `exp(t M(xi))` on every mode of a grid, for a fixed `t`.
#[derive(Debug, Clone)]
pub struct HyperbolicPropagator {
    dim: usize,
    perp: f64,
    coeffs: Vec<ModeCoeffs>,
    /// unit longitudinal direction, zero at `xi = 0`
    dirs: Vec<[f64; 3]>,
}

impl HyperbolicPropagator {
    pub fn new(spectral: &Spectral, params: &ModelParams, t: f64) -> Result<Self> {
        params.validate()?;
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::param("t", "must be finite and nonnegative"));
        }
        let grid = spectral.grid();
        let perp = (-params.beta * t).exp();
        let mut coeffs = Vec::with_capacity(grid.len());
        let mut dirs = Vec::with_capacity(grid.len());
        for m in 0..grid.len() {
            let xi = spectral.derivative_wavevector(m);
            let k = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
            if k == 0.0 {
                coeffs.push(ModeCoeffs { uu: 1.0, uv: 0.0, vv: perp });
                dirs.push([0.0; 3]);
            } else {
                let (uu, uv, vv) = longitudinal(k, params.gamma, params.beta, t);
                coeffs.push(ModeCoeffs { uu, uv, vv });
                dirs.push([xi[0] / k, xi[1] / k, xi[2] / k]);
            }
        }
        Ok(HyperbolicPropagator { dim: grid.dim(), perp, coeffs, dirs })
    }

    /// Builds the propagator and checks every mode against [`expm`].
    pub fn verified(spectral: &Spectral, params: &ModelParams, t: f64) -> Result<Self> {
        let prop = Self::new(spectral, params, t)?;
        let dim = spectral.grid().dim();
        for m in 0..spectral.grid().len() {
            let xi = spectral.derivative_wavevector(m);
            let gap = propagator_gap(&xi[..dim], params, t)?;
            if gap > PROPAGATOR_ABORT_GAP {
                let xi_norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
                return Err(Error::PropagatorMismatch { gap, xi_norm });
            }
        }
        Ok(prop)
    }

    /// Applies the propagator in place to `w_hat = [u_hat, v1_hat, ..]`.
    pub fn apply(&self, w_hat: &mut [Vec<C64>]) {
        let dim = self.dim;
        debug_assert_eq!(w_hat.len(), dim + 1);
        for (m, (c, d)) in self.coeffs.iter().zip(&self.dirs).enumerate() {
            let u = w_hat[0][m];
            let mut vl = C64::new(0.0, 0.0);
            for j in 0..dim {
                vl += w_hat[j + 1][m] * d[j];
            }
            let is_zero_mode = d[..dim].iter().all(|&x| x == 0.0);
            if is_zero_mode {
                for j in 0..dim {
                    w_hat[j + 1][m] *= c.vv;
                }
                continue;
            }
            let u_new = u * c.uu - I * c.uv * vl;
            let vl_new = -I * c.uv * u + vl * c.vv;
            w_hat[0][m] = u_new;
            for j in 0..dim {
                let v = w_hat[j + 1][m];
                // transverse part decays at the full damping rate
                w_hat[j + 1][m] = (v - vl * d[j]) * self.perp + vl_new * d[j];
            }
        }
    }
}

/// `exp(t M)` applied to every mode; with `verify` the closed form is first
/// checked against the generic exponential.
pub fn propagate_hyperbolic(
    w_hat: &mut [Vec<C64>],
    spectral: &Spectral,
    params: &ModelParams,
    t: f64,
    verify: bool,
) -> Result<()> {
    let prop = if verify {
        HyperbolicPropagator::verified(spectral, params, t)?
    } else {
        HyperbolicPropagator::new(spectral, params, t)?
    };
    if w_hat.len() != spectral.grid().dim() + 1 {
        return Err(Error::InvalidGrid(format!("expected {} components", spectral.grid().dim() + 1)));
    }
    prop.apply(w_hat);
    Ok(())
}

/// Per-mode multipliers `exp(-(diffusion |xi|^2 + b) t)`.
#[derive(Debug, Clone)]
pub struct HeatPropagator {
    multipliers: Vec<f64>,
}

impl HeatPropagator {
    pub fn new(spectral: &Spectral, t: f64, b_coeff: f64, diffusion: f64) -> Result<Self> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::param("t", "must be finite and nonnegative"));
        }
        if !(diffusion > 0.0) {
            return Err(Error::param("diffusion", "must be strictly positive"));
        }
        if !(b_coeff >= 0.0) {
            return Err(Error::param("b", "must be nonnegative"));
        }
        let multipliers =
            (0..spectral.grid().len()).map(|m| (-(diffusion * spectral.xi_squared(m) + b_coeff) * t).exp()).collect();
        Ok(HeatPropagator { multipliers })
    }

    pub fn multiplier(&self, mode: usize) -> f64 {
        self.multipliers[mode]
    }

    pub fn apply(&self, coeffs: &mut [C64]) {
        for (c, m) in coeffs.iter_mut().zip(&self.multipliers) {
            *c *= *m;
        }
    }
}

pub fn propagate_heat(phi_hat: &mut [C64], spectral: &Spectral, t: f64, b_coeff: f64, diffusion: f64) -> Result<()> {
    HeatPropagator::new(spectral, t, b_coeff, diffusion)?.apply(phi_hat);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelPart {
    /// low frequencies, `|xi| <= r`
    Diffusive,
    /// high frequencies, `|xi| > r`
    Exponential,
}

/// Sharp frequency split of the hyperbolic propagator into `K + Kcal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSplit {
    pub cutoff_radius: f64,
    pub params: ModelParams,
}

impl KernelSplit {
    pub fn new(params: ModelParams, cutoff_radius: Option<f64>) -> Result<Self> {
        params.validate()?;
        let cutoff_radius = cutoff_radius.unwrap_or_else(|| params.branch_radius());
        if !(cutoff_radius > 0.0 && cutoff_radius.is_finite()) {
            return Err(Error::param("cutoff_radius", "must be strictly positive"));
        }
        Ok(KernelSplit { cutoff_radius, params })
    }

    pub fn part_of(&self, xi: &[f64]) -> KernelPart {
        if xi.iter().map(|x| x * x).sum::<f64>().sqrt() <= self.cutoff_radius {
            KernelPart::Diffusive
        } else {
            KernelPart::Exponential
        }
    }

    pub fn mode(&self, part: KernelPart, xi: &[f64], t: f64) -> DMatrix<C64> {
        if self.part_of(xi) == part {
            propagator_matrix(xi, &self.params, t)
        } else {
            DMatrix::zeros(xi.len() + 1, xi.len() + 1)
        }
    }

    pub fn k_mode(&self, xi: &[f64], t: f64) -> DMatrix<C64> {
        self.mode(KernelPart::Diffusive, xi, t)
    }

    pub fn kcal_mode(&self, xi: &[f64], t: f64) -> DMatrix<C64> {
        self.mode(KernelPart::Exponential, xi, t)
    }

    /// Applies one part of the propagator: the full flow, then zero the modes
    /// belonging to the other part.
    pub fn apply(&self, part: KernelPart, w_hat: &mut [Vec<C64>], spectral: &Spectral, t: f64) -> Result<()> {
        propagate_hyperbolic(w_hat, spectral, &self.params, t, false)?;
        let dim = spectral.grid().dim();
        for m in 0..spectral.grid().len() {
            let xi = spectral.derivative_wavevector(m);
            if self.part_of(&xi[..dim]) != part {
                for comp in w_hat.iter_mut() {
                    comp[m] = C64::new(0.0, 0.0);
                }
            }
        }
        Ok(())
    }
}

/// Effective heat-kernel block `e^{-D|xi|^2 t} r r^T` with `r = (1, -i (gamma/beta) xi)`,
/// `D = gamma^2/beta`: the slow eigenprojection to leading order.
pub fn heat_block_mode(xi: &[f64], params: &ModelParams, t: f64) -> DMatrix<C64> {
    let k2: f64 = xi.iter().map(|x| x * x).sum();
    let decay = (-params.effective_diffusion() * k2 * t).exp();
    let ratio = params.gamma / params.beta;
    let mut r = vec![C64::new(1.0, 0.0)];
    r.extend(xi.iter().map(|x| -I * ratio * x));
    DMatrix::from_fn(r.len(), r.len(), |i, j| r[i] * r[j] * decay)
}

/// `R_1 = K - G_hat` on one mode.
pub fn remainder_mode(split: &KernelSplit, xi: &[f64], t: f64) -> DMatrix<C64> {
    split.k_mode(xi, t) - heat_block_mode(xi, &split.params, t)
}

/// The two blocks of `w = (u, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    /// `L_0`: the conservative `u` component
    Conservative,
    /// `L_-`: the dissipative `v` components
    Dissipative,
    /// the whole vector
    Full,
}

impl Block {
    pub fn tag(&self) -> &'static str {
        match self {
            Block::Conservative => "L0",
            Block::Dissipative => "Lm",
            Block::Full => "all",
        }
    }
}

/// Inputs shared by the kernel-decay measurements.
#[derive(Debug, Clone)]
pub struct KernelProbe {
    pub profile: ScalarField,
    /// unit direction of the `v` probe
    pub v_direction: Vec<f64>,
}

impl KernelProbe {
    /// Gaussian of the given width centred in the box, normalized to unit `L1`.
    pub fn gaussian(spectral: &Spectral, width: f64, v_direction: Vec<f64>) -> Result<Self> {
        let grid = *spectral.grid();
        if !(width > 0.0) {
            return Err(Error::param("width", "must be strictly positive"));
        }
        if v_direction.len() != grid.dim() {
            return Err(Error::param("v_direction", "length must equal the dimension"));
        }
        let len = v_direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(len > 0.0) {
            return Err(Error::param("v_direction", "must be nonzero"));
        }
        let center = 0.5 * grid.length();
        let raw = ScalarField::from_fn(grid, |x| {
            let r2: f64 = x.iter().map(|xi| grid.periodic_offset(*xi, center).powi(2)).sum();
            (-r2 / (2.0 * width * width)).exp()
        });
        let mass = raw.norm(NormKind::L1)?;
        let values = raw.values().iter().map(|v| v / mass).collect();
        Ok(KernelProbe {
            profile: ScalarField::new(grid, values)?,
            v_direction: v_direction.iter().map(|x| x / len).collect(),
        })
    }

    fn initial(&self, spectral: &Spectral, block: Block) -> Vec<Vec<C64>> {
        let grid = spectral.grid();
        let p = spectral.forward_field(&self.profile);
        let zero = vec![C64::new(0.0, 0.0); grid.len()];
        let mut w = vec![zero; grid.dim() + 1];
        if matches!(block, Block::Conservative | Block::Full) {
            w[0] = p.clone();
        }
        if matches!(block, Block::Dissipative | Block::Full) {
            for (j, d) in self.v_direction.iter().enumerate() {
                w[j + 1] = p.iter().map(|c| c * d).collect();
            }
        }
        w
    }
}

fn block_norm(spectral: &Spectral, w_hat: &[Vec<C64>], block: Block, p: NormKind) -> f64 {
    let cell = spectral.grid().cell_volume();
    let range = match block {
        Block::Conservative => 0..1,
        Block::Dissipative => 1..w_hat.len(),
        Block::Full => 0..w_hat.len(),
    };
    if p == NormKind::L2 {
        let sum: f64 = w_hat[range].iter().flatten().map(|c| c.norm_sqr()).sum();
        return (spectral.parseval_weight() * sum).sqrt();
    }
    let fields: Vec<Vec<f64>> = w_hat[range].iter().map(|c| spectral.inverse(c)).collect();
    if fields.len() == 1 {
        return norm_of(&fields[0], cell, p);
    }
    let refs: Vec<&[f64]> = fields.iter().map(|f| f.as_slice()).collect();
    vector_norm_of(&refs, cell, p)
}

fn check_t_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.is_empty() || t_grid.iter().any(|t| !(*t >= 0.0)) || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param("t_grid", "must be nonempty, nonnegative and increasing"));
    }
    Ok(())
}

/// `|| L_out Part(t) L_in w0 ||_p` over `t_grid`.
pub fn measure_kernel_decay(
    spectral: &Spectral,
    split: &KernelSplit,
    part: KernelPart,
    input: Block,
    output: Block,
    p: NormKind,
    t_grid: &[f64],
    probe: &KernelProbe,
) -> Result<NormSeries> {
    check_t_grid(t_grid)?;
    let w0 = probe.initial(spectral, input);
    let mut values = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let mut w = w0.clone();
        split.apply(part, &mut w, spectral, t)?;
        values.push(block_norm(spectral, &w, output, p));
    }
    let part_tag = match part {
        KernelPart::Diffusive => "K",
        KernelPart::Exponential => "Kcal",
    };
    let label = SeriesLabel::new(format!("{part_tag}_{}_{}", input.tag(), output.tag()), p);
    NormSeries::new(label, t_grid.to_vec(), values)
}

/// `L2` series of the refined expansion applied to a `u` probe.
#[derive(Debug, Clone)]
pub struct RemainderSeries {
    /// `|| (R_1)_{11} w0 ||`
    pub r11: NormSeries,
    /// `|| R_1 w0 ||` over all components
    pub remainder: NormSeries,
    /// `|| K w0 ||` over all components
    pub diffusive: NormSeries,
    /// `|| K_{11} w0 ||`
    pub k11: NormSeries,
}

impl RemainderSeries {
    /// `||R_1 w0|| / ||K w0||` at each time.
    pub fn ratio(&self) -> Vec<f64> {
        self.remainder.values.iter().zip(&self.diffusive.values).map(|(r, k)| r / k).collect()
    }
}

pub fn refined_remainder_decay(
    spectral: &Spectral,
    split: &KernelSplit,
    t_grid: &[f64],
    probe: &KernelProbe,
) -> Result<RemainderSeries> {
    check_t_grid(t_grid)?;
    let grid = spectral.grid();
    let dim = grid.dim();
    let w0 = probe.initial(spectral, Block::Conservative);
    let params = split.params;
    let ratio = params.gamma / params.beta;
    let weight = spectral.parseval_weight();
    let (xis, _) = spectral.mode_tables();
    let mut series = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    for &t in t_grid {
        let mut k = w0.clone();
        split.apply(KernelPart::Diffusive, &mut k, spectral, t)?;
        let (mut r11, mut rall, mut kall, mut k11) = (0.0, 0.0, 0.0, 0.0);
        for m in 0..grid.len() {
            let xi = &xis[m];
            let k2: f64 = xi[..dim].iter().map(|x| x * x).sum();
            let g = (-params.effective_diffusion() * k2 * t).exp() * w0[0][m];
            let du = k[0][m] - g;
            r11 += du.norm_sqr();
            rall += du.norm_sqr();
            k11 += k[0][m].norm_sqr();
            kall += k[0][m].norm_sqr();
            for j in 0..dim {
                let gv = -I * ratio * xi[j] * g;
                rall += (k[j + 1][m] - gv).norm_sqr();
                kall += k[j + 1][m].norm_sqr();
            }
        }
        for (s, v) in series.iter_mut().zip([r11, rall, kall, k11]) {
            s.push((weight * v).sqrt());
        }
    }
    let [r11, rall, kall, k11] = series;
    let mk = |name: &str, v| NormSeries::new(SeriesLabel::new(name, NormKind::L2), t_grid.to_vec(), v);
    Ok(RemainderSeries {
        r11: mk("R1_11", r11)?,
        remainder: mk("R1", rall)?,
        diffusive: mk("K", kall)?,
        k11: mk("K_11", k11)?,
    })
}
