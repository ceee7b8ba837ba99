//! Norm time series, weighted sup functionals, decay-rate fits, the convolution
//! bound verifier and the expected-rate table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::NormKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesLabel {
    pub quantity: String,
    pub norm: NormKind,
}

impl SeriesLabel {
    pub fn new(quantity: impl Into<String>, norm: NormKind) -> Self {
        SeriesLabel { quantity: quantity.into(), norm }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSeries {
    pub label: SeriesLabel,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl NormSeries {
    pub fn new(label: SeriesLabel, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Fit(format!(
                "series `{}` has {} times and {} values",
                label.quantity,
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Fit(format!("series `{}` times not increasing", label.quantity)));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Fit(format!("series `{}` has negative or non-finite values", label.quantity)));
        }
        Ok(NormSeries { label, times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn weight(s: f64, delta: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else {
        s.powf(delta)
    }
}

/// Running `sup_{s <= t_i} max{1, s^delta} |g(s)|` at every recorded time.
pub fn weighted_running_sup(series: &NormSeries, delta: f64) -> Vec<f64> {
    let mut acc = 0.0_f64;
    series
        .times
        .iter()
        .zip(&series.values)
        .map(|(&s, &v)| {
            acc = acc.max(weight(s, delta) * v);
            acc
        })
        .collect()
}

fn weighted_sup(series: &NormSeries, delta: f64, expected: NormKind, name: &str) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(Error::param("delta", "must be nonnegative"));
    }
    if series.is_empty() {
        return Err(Error::Fit(format!("{name} of an empty series")));
    }
    if series.label.norm != expected {
        return Err(Error::LabelMismatch(format!(
            "{name} needs an {expected} series, `{}` is {}",
            series.label.quantity, series.label.norm
        )));
    }
    Ok(*weighted_running_sup(series, delta).last().expect("nonempty"))
}

/// `M^delta = sup_{(0,t)} max{1, s^delta} ||g(s)||_{L2}` over the recorded times.
pub fn functional_m(series: &NormSeries, delta: f64) -> Result<f64> {
    weighted_sup(series, delta, NormKind::L2, "M functional")
}

/// The `L^inf` twin of [`functional_m`].
pub fn functional_n(series: &NormSeries, delta: f64) -> Result<f64> {
    weighted_sup(series, delta, NormKind::Linf, "N functional")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    /// `v ~ C t^exponent`
    Power,
    /// `v ~ C e^{exponent t}`
    Exp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

/// Fits with `r^2` below this are reported as unreliable.
pub const RELIABLE_R_SQUARED: f64 = 0.98;
pub const MIN_FIT_SAMPLES: usize = 10;

impl DecayFit {
    pub fn reliable(&self) -> bool {
        self.r_squared >= RELIABLE_R_SQUARED
    }
}

/// Unweighted least squares on `(log t, log v)` or `(t, log v)` restricted to
/// the closed window.
pub fn fit_decay(series: &NormSeries, window: (f64, f64), kind: FitKind) -> Result<DecayFit> {
    let (lo, hi) = window;
    if !(lo < hi) {
        return Err(Error::Fit(format!("empty window [{lo}, {hi}]")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&t, &v) in series.times.iter().zip(&series.values) {
        if t < lo || t > hi {
            continue;
        }
        if !(v > 0.0) {
            return Err(Error::Fit(format!(
                "nonpositive value {v} at t = {t} in `{}`",
                series.label.quantity
            )));
        }
        let x = match kind {
            FitKind::Power => {
                if t <= 0.0 {
                    return Err(Error::Fit("power fit needs t > 0".into()));
                }
                t.ln()
            }
            FitKind::Exp => t,
        };
        xs.push(x);
        ys.push(v.ln());
    }
    if xs.len() < MIN_FIT_SAMPLES {
        return Err(Error::Fit(format!(
            "{} samples of `{}` in [{lo}, {hi}], need {MIN_FIT_SAMPLES}",
            xs.len(),
            series.label.quantity
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy <= f64::EPSILON * n * my.abs().max(1.0) {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(DecayFit { exponent: slope, intercept, r_squared, window, samples: xs.len() })
}

/// Which branch of the convolution bound applies to `(gamma, delta)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaCase {
    /// `gamma, delta != 1`: `t^{-nu}`
    Generic,
    /// `gamma <= 1, delta = 1` or `gamma = 1, delta <= 1`: `t^{-nu} (1 + ln t)`
    Logarithmic,
    /// `gamma > 1, delta = 1` or `gamma = 1, delta > 1`: `t^{-1}`
    Reciprocal,
    /// One exponent is zero, so the integral is `int_0^t min{1, s^-d} ds`.
    SingleFactor,
}

impl LemmaCase {
    pub fn label(&self) -> &'static str {
        match self {
            LemmaCase::Generic => "gamma,delta!=1",
            LemmaCase::Logarithmic => "log: gamma<=1,delta=1 | gamma=1,delta<=1",
            LemmaCase::Reciprocal => "gamma>1,delta=1 | gamma=1,delta>1",
            LemmaCase::SingleFactor => "single factor: int_0^t min{1,s^-d} ds",
        }
    }
}

pub fn lemma_nu(gamma: f64, delta: f64) -> f64 {
    gamma.min(delta).min(gamma + delta - 1.0)
}

pub fn lemma_case(gamma: f64, delta: f64) -> LemmaCase {
    if gamma == 0.0 || delta == 0.0 {
        LemmaCase::SingleFactor
    } else if (gamma <= 1.0 && delta == 1.0) || (gamma == 1.0 && delta <= 1.0) {
        LemmaCase::Logarithmic
    } else if (gamma > 1.0 && delta == 1.0) || (gamma == 1.0 && delta > 1.0) {
        LemmaCase::Reciprocal
    } else {
        LemmaCase::Generic
    }
}

/// Shape of the bound at `t >= 2`. For `nu < 0` the generic branch is read as
/// `t^{-nu}`, the growth of the integral.
pub fn lemma_bound(gamma: f64, delta: f64, t: f64) -> f64 {
    match lemma_case(gamma, delta) {
        LemmaCase::Generic => t.powf(-lemma_nu(gamma, delta)),
        LemmaCase::Logarithmic => t.powf(-lemma_nu(gamma, delta)) * (1.0 + t.ln()),
        LemmaCase::Reciprocal => 1.0 / t,
        LemmaCase::SingleFactor => {
            let d = gamma.max(delta);
            if d > 1.0 {
                1.0
            } else if d == 1.0 {
                t.ln()
            } else {
                t.powf(1.0 - d)
            }
        }
    }
}

fn capped_power(x: f64, p: f64) -> f64 {
    if x <= 1.0 {
        1.0
    } else {
        x.powf(-p)
    }
}

/// `int_0^t min{1, (t-s)^-gamma} min{1, s^-delta} ds`, split at the kinks
/// `s = 1`, `s = t - 1` and at `t / 2`.
pub fn convolution_integral(gamma: f64, delta: f64, t: f64) -> Result<f64> {
    if !(gamma >= 0.0 && delta >= 0.0) {
        return Err(Error::param("gamma/delta", "exponents must be nonnegative"));
    }
    if !(t >= 2.0) {
        return Err(Error::param("t", "convolution bounds need t >= 2"));
    }
    let f = |s: f64| capped_power(t - s, gamma) * capped_power(s, delta);
    let mut breaks = vec![0.0, 1.0, 0.5 * t, t - 1.0, t];
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut total = 0.0;
    for w in breaks.windows(2) {
        total += adaptive_gauss_kronrod(&f, w[0], w[1], 1e-12, 40)?;
    }
    Ok(total)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS_K: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const GK_WEIGHTS_G: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// 15-point Kronrod estimate and its embedded 7-point Gauss estimate.
fn gauss_kronrod_15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_WEIGHTS_K[7] * fc;
    let mut gauss = GK_WEIGHTS_G[3] * fc;
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let pair = f(c - x) + f(c + x);
        kronrod += GK_WEIGHTS_K[i] * pair;
        if i % 2 == 1 {
            gauss += GK_WEIGHTS_G[i / 2] * pair;
        }
    }
    (kronrod * h, gauss * h)
}

fn adaptive_gauss_kronrod(f: &impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64, depth: u32) -> Result<f64> {
    let (k, g) = gauss_kronrod_15(f, a, b);
    let err = (k - g).abs();
    if err <= rel_tol * k.abs().max(1e-300) || err < 1e-300 {
        return Ok(k);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!("interval [{a}, {b}] error {err:e}")));
    }
    let m = 0.5 * (a + b);
    Ok(adaptive_gauss_kronrod(f, a, m, rel_tol, depth - 1)? + adaptive_gauss_kronrod(f, m, b, rel_tol, depth - 1)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvolutionCheck {
    pub gamma: f64,
    pub delta: f64,
    pub case: LemmaCase,
    pub max_ratio: f64,
    /// `(t, I(t) / bound(t))`
    pub ratios: Vec<(f64, f64)>,
}

pub fn convolution_bound_check(gamma: f64, delta: f64, t_grid: &[f64]) -> Result<ConvolutionCheck> {
    if t_grid.is_empty() {
        return Err(Error::param("t_grid", "empty"));
    }
    let ratios = t_grid
        .iter()
        .map(|&t| Ok((t, convolution_integral(gamma, delta, t)? / lemma_bound(gamma, delta, t))))
        .collect::<Result<Vec<_>>>()?;
    let max_ratio = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(ConvolutionCheck { gamma, delta, case: lemma_case(gamma, delta), max_ratio, ratios })
}

/// Decay rate `delta_k` of `||D^k u||_{L2}` (and of `||D^{k+1} phi||_{L2}`).
pub fn delta_k(dim: usize, k: usize) -> f64 {
    let q = dim as f64 / 4.0;
    if k == 0 {
        return q;
    }
    let r = k / 2;
    let half_steps = ((k + 1) / 2) as f64;
    (q + 0.5 + 0.5 * half_steps).min(q + delta_k(dim, r))
}

/// Decay rate `nu_k` of `||D^k v||_{L2}`.
pub fn nu_k(dim: usize, k: usize) -> f64 {
    let q = dim as f64 / 4.0;
    if k == 0 {
        return (2.0 * q).min(q + 0.5);
    }
    let r = k / 2;
    let half_steps = ((k + 1) / 2) as f64;
    (q + 1.0 + 0.5 * half_steps).min(q + delta_k(dim, r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedRate {
    pub quantity: String,
    pub norm: NormKind,
    /// Positive decay rate: the quantity behaves like `t^{-rate}`.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedTable {
    pub dim: usize,
    pub entries: Vec<ExpectedRate>,
}

impl ExpectedTable {
    pub fn rate(&self, quantity: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.quantity == quantity).map(|e| e.rate)
    }
}

/// Zero-state decay rates for `u`, `v`, `phi` and their derivatives up to
/// order `max_order`.
pub fn expected_table(dim: usize, max_order: usize) -> ExpectedTable {
    let n = dim as f64;
    let mut entries = Vec::new();
    let mut push = |q: String, norm, rate| entries.push(ExpectedRate { quantity: q, norm, rate });
    push("u_Linf".into(), NormKind::Linf, n / 2.0);
    push("u_L2".into(), NormKind::L2, n / 4.0);
    for k in 0..=max_order {
        push(format!("D{k}u_L2"), NormKind::L2, delta_k(dim, k));
    }
    push("v_Linf".into(), NormKind::Linf, n / 2.0);
    push("v_L2".into(), NormKind::L2, nu_k(dim, 0));
    for k in 0..=max_order {
        push(format!("D{k}v_L2"), NormKind::L2, nu_k(dim, k));
    }
    push("phi_Linf".into(), NormKind::Linf, n / 2.0);
    push("gphi_Linf".into(), NormKind::Linf, n / 2.0);
    push("phi_L2".into(), NormKind::L2, n / 4.0);
    for k in 0..=max_order {
        push(format!("D{}phi_L2", k + 1), NormKind::L2, delta_k(dim, k));
    }
    ExpectedTable { dim, entries }
}

/// Decay rate of the perturbation around a nonzero constant state,
/// `min{n/4, n/8 + 1}`.
pub fn constant_state_rate(dim: usize) -> f64 {
    let n = dim as f64;
    (n / 4.0).min(n / 8.0 + 1.0)
}

/// Rate of `||u - u_pks||_{L2}`, `min{n/4 + 1/2, n/2}`.
pub fn pks_difference_rate(dim: usize) -> f64 {
    let n = dim as f64;
    (n / 4.0 + 0.5).min(n / 2.0)
}

/// Tolerance on fitted exponents by norm.
pub fn default_tolerance(norm: NormKind) -> f64 {
    match norm {
        NormKind::L1 | NormKind::L2 => 0.1,
        NormKind::Linf => 0.15,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub quantity: String,
    pub norm: NormKind,
    /// Expected slope, `-rate`.
    pub expected: f64,
    pub fitted: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub r_squared: f64,
    pub reliable: bool,
    /// `fitted <= expected + tolerance`: at least the expected decay.
    pub pass: bool,
    /// Set when the decay is faster than expected by more than the tolerance.
    pub strictly_faster: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct DecayReport {
    pub entries: Vec<ReportEntry>,
}

impl DecayReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn entry(&self, quantity: &str) -> Option<&ReportEntry> {
        self.entries.iter().find(|e| e.quantity == quantity)
    }
}

/// Compares fits, keyed by expected-table quantity, against the table.
/// Quantities missing from the table are skipped.
pub fn assemble_report(fits: &[(String, DecayFit)], table: &ExpectedTable) -> DecayReport {
    let entries = fits
        .iter()
        .filter_map(|(q, fit)| {
            let e = table.entries.iter().find(|e| &e.quantity == q)?;
            let tolerance = default_tolerance(e.norm);
            let expected = -e.rate;
            Some(ReportEntry {
                quantity: q.clone(),
                norm: e.norm,
                expected,
                fitted: fit.exponent,
                gap: (fit.exponent - expected).abs(),
                tolerance,
                r_squared: fit.r_squared,
                reliable: fit.reliable(),
                pass: fit.exponent <= expected + tolerance,
                strictly_faster: fit.exponent < expected - tolerance,
            })
        })
        .collect();
    DecayReport { entries }
}
