//! Model parameters, the closed-form source catalog, the conservative-dissipative
//! change of variables and the Shizuta-Kawashima check.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ScalarField, VectorField};

/// `(gamma, beta, a, b)`: cell speed, damping, production and degradation
/// rates of the chemoattractant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub gamma: f64,
    pub beta: f64,
    pub a: f64,
    pub b: f64,
}

impl ModelParams {
    pub fn new(gamma: f64, beta: f64, a: f64, b: f64) -> Result<Self> {
        let p = ModelParams { gamma, beta, a, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("gamma", self.gamma), ("beta", self.beta), ("b", self.b)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::param(name, format!("must be strictly positive, got {value}")));
            }
        }
        // a = 0 switches off the production coupling; only used for linear checks
        if !(self.a.is_finite() && self.a >= 0.0) {
            return Err(Error::param("a", format!("must be nonnegative, got {}", self.a)));
        }
        Ok(())
    }

    /// Diffusivity of the slow branch, `lambda_+ = -gamma^2 |xi|^2 / beta + O(|xi|^4)`.
    pub fn effective_diffusion(&self) -> f64 {
        self.gamma * self.gamma / self.beta
    }

    /// Radius where the two damped-wave eigenvalues collide, `beta / (2 gamma)`.
    pub fn branch_radius(&self) -> f64 {
        self.beta / (2.0 * self.gamma)
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams { gamma: 1.0, beta: 1.0, a: 1.0, b: 1.0 }
    }
}

/// Fluctuation `bbar(phi, grad phi)` of the damping coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Damping {
    #[default]
    Zero,
    /// `c3 * phi`
    PhiLinear { c3: f64 },
    /// `c3 * sqrt(phi^2 + |grad phi|^2)`
    Norm { c3: f64 },
}

/// Chemotactic sensitivity `h(phi, grad phi)` (vector valued).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sensitivity {
    Zero,
    /// `chi * grad phi`
    Grad { chi: f64 },
    /// `chi * grad phi / (1 + phi^2)`
    Saturating { chi: f64 },
}

impl Default for Sensitivity {
    fn default() -> Self {
        Sensitivity::Grad { chi: 1.0 }
    }
}

/// Density response `g(u)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Response {
    Zero,
    #[default]
    Linear,
}

/// Nonlinear production term `fbar(u, phi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Production {
    #[default]
    Zero,
    /// `c1 u^2 + c2 phi^2`
    Quadratic { c1: f64, c2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    #[serde(default)]
    pub bbar: Damping,
    #[serde(default)]
    pub h: Sensitivity,
    #[serde(default)]
    pub g: Response,
    #[serde(default)]
    pub fbar: Production,
}

/// Growth constants `(B_K, H_K, G_K, F_K)` of the smallness assumptions:
/// `|bbar| <= B_K (|z|+|w|)`, `|h| <= H_K (|z|+|w|)`, `|g| <= G_K |z|`,
/// `|fbar| <= F_K (z^2 + w^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub b_k: f64,
    pub h_k: f64,
    pub g_k: f64,
    pub f_k: f64,
}

impl Damping {
    pub fn eval(&self, phi: f64, grad_phi: &[f64]) -> f64 {
        match *self {
            Damping::Zero => 0.0,
            Damping::PhiLinear { c3 } => c3 * phi,
            Damping::Norm { c3 } => {
                c3 * (phi * phi + grad_phi.iter().map(|g| g * g).sum::<f64>()).sqrt()
            }
        }
    }
}

impl Sensitivity {
    /// Scalar factor `s` with `h = s * grad phi`.
    pub fn factor(&self, phi: f64) -> f64 {
        match *self {
            Sensitivity::Zero => 0.0,
            Sensitivity::Grad { chi } => chi,
            Sensitivity::Saturating { chi } => chi / (1.0 + phi * phi),
        }
    }
}

impl Response {
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            Response::Zero => 0.0,
            Response::Linear => u,
        }
    }
}

impl Production {
    pub fn eval(&self, u: f64, phi: f64) -> f64 {
        match *self {
            Production::Zero => 0.0,
            Production::Quadratic { c1, c2 } => c1 * u * u + c2 * phi * phi,
        }
    }
}

impl SourceSpec {
    /// `bbar = 0`, `h = chi grad phi`, `g(u) = u`, `fbar = 0`.
    pub fn default_coupling(chi: f64) -> Self {
        SourceSpec {
            bbar: Damping::Zero,
            h: Sensitivity::Grad { chi },
            g: Response::Linear,
            fbar: Production::Zero,
        }
    }

    pub fn zero() -> Self {
        SourceSpec {
            bbar: Damping::Zero,
            h: Sensitivity::Zero,
            g: Response::Zero,
            fbar: Production::Zero,
        }
    }

    pub fn growth_constants(&self) -> GrowthConstants {
        let b_k = match self.bbar {
            Damping::Zero => 0.0,
            Damping::PhiLinear { c3 } | Damping::Norm { c3 } => c3.abs(),
        };
        let h_k = match self.h {
            Sensitivity::Zero => 0.0,
            Sensitivity::Grad { chi } | Sensitivity::Saturating { chi } => chi.abs(),
        };
        let g_k = match self.g {
            Response::Zero => 0.0,
            Response::Linear => 1.0,
        };
        let f_k = match self.fbar {
            Production::Zero => 0.0,
            Production::Quadratic { c1, c2 } => c1.abs().max(c2.abs()),
        };
        GrowthConstants { b_k, h_k, g_k, f_k }
    }

    /// Whether every term vanishes identically, so the coupled flow is linear.
    pub fn is_zero(&self) -> bool {
        matches!(self.bbar, Damping::Zero)
            && (matches!(self.h, Sensitivity::Zero) || matches!(self.g, Response::Zero))
            && matches!(self.fbar, Production::Zero)
    }
}

/// Physical-space values entering the source evaluation.
pub struct SourceInputs<'a> {
    pub u: &'a [f64],
    pub v: &'a [Vec<f64>],
    pub phi: &'a [f64],
    pub grad_phi: &'a [Vec<f64>],
}

/// Background `(u_bar, phi_bar)` around which the state is a perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Background {
    pub u_bar: f64,
    pub phi_bar: f64,
}

/// Coupling and nonlinear right-hand sides:
/// `rhs_v = -bbar(phi, grad phi) v + h(phi, grad phi) g(u)` and
/// `rhs_phi = a u + fbar(u, phi)`. The stiff linear parts are left to the
/// propagators. With a nonzero background, `h` and `g` see the full state.
pub fn evaluate_source_values(
    inputs: &SourceInputs<'_>,
    spec: &SourceSpec,
    params: &ModelParams,
    background: Background,
    rhs_v: &mut [Vec<f64>],
    rhs_phi: &mut [f64],
) {
    let dim = inputs.v.len();
    let mut grad = [0.0; 3];
    for i in 0..inputs.u.len() {
        for j in 0..dim {
            grad[j] = inputs.grad_phi[j][i];
        }
        let phi_full = inputs.phi[i] + background.phi_bar;
        let u_full = inputs.u[i] + background.u_bar;
        let damping = spec.bbar.eval(phi_full, &grad[..dim]);
        let drive = spec.h.factor(phi_full) * spec.g.eval(u_full);
        for j in 0..dim {
            rhs_v[j][i] = -damping * inputs.v[j][i] + drive * grad[j];
        }
        rhs_phi[i] = params.a * inputs.u[i] + spec.fbar.eval(inputs.u[i], inputs.phi[i]);
    }
}

/// Field-level wrapper around [`evaluate_source_values`] for a zero background.
pub fn evaluate_sources(
    u: &ScalarField,
    v: &VectorField,
    phi: &ScalarField,
    grad_phi: &VectorField,
    spec: &SourceSpec,
    params: &ModelParams,
) -> Result<(VectorField, ScalarField)> {
    let grid = *u.grid();
    if *v.grid() != grid || *phi.grid() != grid || *grad_phi.grid() != grid {
        return Err(Error::InvalidGrid("source inputs live on different grids".into()));
    }
    let v_vals: Vec<Vec<f64>> = v.components().iter().map(|c| c.values().to_vec()).collect();
    let g_vals: Vec<Vec<f64>> = grad_phi.components().iter().map(|c| c.values().to_vec()).collect();
    let inputs = SourceInputs { u: u.values(), v: &v_vals, phi: phi.values(), grad_phi: &g_vals };
    let mut rhs_v = vec![vec![0.0; grid.len()]; grid.dim()];
    let mut rhs_phi = vec![0.0; grid.len()];
    evaluate_source_values(&inputs, spec, params, Background::default(), &mut rhs_v, &mut rhs_phi);
    if rhs_v.iter().flatten().chain(rhs_phi.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("evaluate_sources"));
    }
    let comps = rhs_v.into_iter().map(|c| ScalarField::new(grid, c)).collect::<Result<Vec<_>>>()?;
    Ok((VectorField::new(comps)?, ScalarField::new(grid, rhs_phi)?))
}

/// `(u, v) -> (u, v / gamma)`.
pub fn cd_transform(u: &ScalarField, v: &VectorField, gamma: f64) -> Result<(ScalarField, VectorField)> {
    if !(gamma > 0.0) {
        return Err(Error::param("gamma", "must be strictly positive"));
    }
    Ok((u.clone(), scale_vector(v, 1.0 / gamma)?))
}

/// `(w1, w2) -> (w1, gamma w2)`.
pub fn cd_inverse(w1: &ScalarField, w2: &VectorField, gamma: f64) -> Result<(ScalarField, VectorField)> {
    if !(gamma > 0.0) {
        return Err(Error::param("gamma", "must be strictly positive"));
    }
    Ok((w1.clone(), scale_vector(w2, gamma)?))
}

fn scale_vector(v: &VectorField, factor: f64) -> Result<VectorField> {
    let comps = v
        .components()
        .iter()
        .map(|c| ScalarField::new(*c.grid(), c.values().iter().map(|x| x * factor).collect()))
        .collect::<Result<Vec<_>>>()?;
    VectorField::new(comps)
}

/// Stationary constant state `(u_bar, 0, phi_bar)` with `b phi_bar = a u_bar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryState {
    pub u_bar: f64,
    pub phi_bar: f64,
}

impl StationaryState {
    pub fn new(u_bar: f64, params: &ModelParams) -> Result<Self> {
        if !(u_bar >= 0.0 && u_bar.is_finite()) {
            return Err(Error::param("u_bar", "must be nonnegative"));
        }
        Ok(StationaryState { u_bar, phi_bar: params.a * u_bar / params.b })
    }
}

/// Flux matrices `A_j` and source matrix `B` of the linear system in
/// conservative-dissipative form.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    pub a: Vec<DMatrix<f64>>,
    pub b: DMatrix<f64>,
}

impl SystemMatrices {
    pub fn build(params: &ModelParams, dim: usize) -> Result<Self> {
        if !(1..=3).contains(&dim) {
            return Err(Error::param("dim", format!("{dim} outside {{1, 2, 3}}")));
        }
        let size = dim + 1;
        let a = (0..dim)
            .map(|j| {
                let mut m = DMatrix::zeros(size, size);
                m[(0, j + 1)] = params.gamma;
                m[(j + 1, 0)] = params.gamma;
                m
            })
            .collect();
        let mut b = DMatrix::zeros(size, size);
        for j in 1..size {
            b[(j, j)] = -params.beta;
        }
        Ok(SystemMatrices { a, b })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// `sum_j A_j xi_j`.
    pub fn flux_symbol(&self, xi: &[f64]) -> DMatrix<f64> {
        let size = self.dim() + 1;
        let mut m = DMatrix::zeros(size, size);
        for (aj, &x) in self.a.iter().zip(xi) {
            m += aj * x;
        }
        m
    }

    /// Symmetric flux matrices and `B = diag(0, D)` with `D` negative definite.
    pub fn is_conservative_dissipative(&self) -> bool {
        let size = self.dim() + 1;
        let symmetric = self.a.iter().all(|a| (a - a.transpose()).abs().max() == 0.0);
        let first_row_zero = (0..size).all(|j| self.b[(0, j)] == 0.0 && self.b[(j, 0)] == 0.0);
        let d = self.b.view((1, 1), (size - 1, size - 1)).into_owned();
        let d_sym = (&d - d.transpose()).abs().max() == 0.0;
        let negative = d_sym && nalgebra::SymmetricEigen::new(d).eigenvalues.iter().all(|&l| l < 0.0);
        symmetric && first_row_zero && negative
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkReport {
    pub holds: bool,
    /// `(xi, X)`: an eigenvector `X` of `sum A_j xi_j` annihilated by `B`.
    pub witness: Option<(Vec<f64>, DVector<f64>)>,
}

pub const SK_TOLERANCE: f64 = 1e-10;

/// Checks that no eigenvector of `sum_j A_j xi_j` lies in the null space of `B`
/// for the sampled directions. Degenerate eigenspaces are tested as a whole:
/// the smallest singular value of `B Q`, with `Q` an orthonormal basis of the
/// eigenspace, must stay above `tol`.
pub fn sk_check(matrices: &SystemMatrices, xi_samples: &[Vec<f64>]) -> Result<SkReport> {
    for xi in xi_samples {
        if xi.len() != matrices.dim() {
            return Err(Error::param("xi", format!("expected {} components", matrices.dim())));
        }
        let norm = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::param("xi", "zero direction"));
        }
        let symbol = matrices.flux_symbol(xi);
        let eig = nalgebra::SymmetricEigen::new(symbol.clone());
        let scale = symbol.abs().max().max(1.0);
        let size = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..size).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

        let mut start = 0;
        while start < size {
            let mut end = start + 1;
            while end < size
                && (eig.eigenvalues[order[end]] - eig.eigenvalues[order[start]]).abs() <= 1e-9 * scale
            {
                end += 1;
            }
            let cols: Vec<DVector<f64>> =
                order[start..end].iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect();
            let basis = DMatrix::from_columns(&cols);
            let image = &matrices.b * &basis;
            let svd = nalgebra::SVD::new(image, false, true);
            let (idx, smallest) = svd
                .singular_values
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
            // singular_values may be shorter than the basis when B Q is wide
            let deficient = svd.singular_values.len() < cols.len();
            if deficient || smallest < SK_TOLERANCE {
                let v_t = svd.v_t.expect("requested V^T");
                let coeffs = if deficient {
                    null_direction(&v_t)
                } else {
                    v_t.row(idx).transpose().into_owned()
                };
                let witness = &basis * coeffs;
                return Ok(SkReport { holds: false, witness: Some((xi.clone(), witness)) });
            }
            start = end;
        }
    }
    Ok(SkReport { holds: true, witness: None })
}

/// A unit vector orthogonal to the rows of `v_t`.
fn null_direction(v_t: &DMatrix<f64>) -> DVector<f64> {
    let n = v_t.ncols();
    for k in 0..n {
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        let proj = v_t.transpose() * (v_t * &e);
        let r = e - proj;
        if r.norm() > 1e-6 {
            return r.normalize();
        }
    }
    DVector::zeros(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, Spectral};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn params_must_be_positive() {
        assert!(ModelParams::new(1.0, 1.0, 1.0, 1.0).is_ok());
        let err = ModelParams::new(-1.0, 1.0, 1.0, 1.0).unwrap_err();
        assert!(err.to_string().contains("gamma"));
        assert!(ModelParams::new(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, 0.0, 1.0).is_ok());
        assert!(ModelParams::new(1.0, 1.0, -0.1, 1.0).is_err());
    }

    #[test]
    fn cd_transform_examples() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let u = ScalarField::constant(g, 1.0);
        let v = VectorField::new(vec![ScalarField::constant(g, 2.0)]).unwrap();
        let (w1, w2) = cd_transform(&u, &v, 2.0).unwrap();
        assert_eq!(w1.values()[0], 1.0);
        assert_eq!(w2.component(0).values()[0], 1.0);
        let (w1, w2) = cd_transform(&u, &v, 1.0).unwrap();
        assert_eq!(w1, u);
        assert_eq!(w2, v);
        assert!(cd_transform(&u, &v, 0.0).is_err());
        assert!(cd_inverse(&u, &v, -2.0).is_err());
    }

    #[test]
    fn matrices_have_cd_form() {
        let p = ModelParams::new(3.0, 0.7, 1.0, 1.0).unwrap();
        let m = SystemMatrices::build(&p, 1).unwrap();
        assert_eq!(m.a[0], DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 3.0, 0.0]));
        assert_eq!(m.b, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, -0.7]));

        let m2 = SystemMatrices::build(&p, 2).unwrap();
        assert_eq!(m2.a[0][(0, 1)], 3.0);
        assert_eq!(m2.a[0][(1, 0)], 3.0);
        assert_eq!(m2.a[1][(0, 2)], 3.0);
        assert_eq!(m2.a[1][(2, 0)], 3.0);
        assert_eq!(m2.a[1][(0, 1)], 0.0);
        for dim in 1..=3 {
            let m = SystemMatrices::build(&p, dim).unwrap();
            assert!(m.a.iter().all(|a| *a == a.transpose()));
            assert!(m.is_conservative_dissipative());
        }
        assert!(SystemMatrices::build(&p, 4).is_err());
    }

    fn random_unit_directions(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n > 1e-3 {
                    break v.iter().map(|x| x / n).collect();
                }
            })
            .collect()
    }

    #[test]
    fn sk_holds_for_the_model() {
        for dim in 1..=3 {
            for (gamma, beta) in [(0.5, 2.0), (1.0, 1.0), (2.0, 0.5)] {
                let p = ModelParams::new(gamma, beta, 1.0, 1.0).unwrap();
                let m = SystemMatrices::build(&p, dim).unwrap();
                let report = sk_check(&m, &random_unit_directions(dim, 100, dim as u64)).unwrap();
                assert!(report.holds, "dim {dim}");
            }
        }
    }

    #[test]
    fn sk_fails_without_dissipation_or_flux() {
        let p = ModelParams::default();
        for dim in 1..=3 {
            let xi = random_unit_directions(dim, 5, 7);
            let mut m = SystemMatrices::build(&p, dim).unwrap();
            m.b.fill(0.0);
            let r = sk_check(&m, &xi).unwrap();
            assert!(!r.holds);

            let mut m = SystemMatrices::build(&p, dim).unwrap();
            for a in &mut m.a {
                a.fill(0.0);
            }
            let r = sk_check(&m, &xi).unwrap();
            assert!(!r.holds);
            let (_, x) = r.witness.unwrap();
            // the witness is the conservative direction
            assert!((x[0].abs() - 1.0).abs() < 1e-10);
            assert!((&m.b * &x).norm() < 1e-10);
        }
    }

    #[test]
    fn sk_rejects_zero_direction() {
        let m = SystemMatrices::build(&ModelParams::default(), 2).unwrap();
        assert!(sk_check(&m, &[vec![0.0, 0.0]]).is_err());
    }

    #[test]
    fn source_examples() {
        let g = Grid::new(1, 64, 2.0 * std::f64::consts::PI).unwrap();
        let sp = Spectral::new(g);
        let p = ModelParams::new(1.0, 1.0, 0.5, 1.0).unwrap();

        let u = ScalarField::from_fn(g, |x| 1.0 + 0.1 * x[0].cos());
        let v = VectorField::zeros(g);
        let phi = ScalarField::zeros(g);
        let spec = SourceSpec { g: Response::Linear, ..SourceSpec::zero() };
        let (rv, rp) = evaluate_sources(&u, &v, &phi, &VectorField::zeros(g), &spec, &p).unwrap();
        assert!(rv.component(0).values().iter().all(|x| *x == 0.0));
        for (r, uu) in rp.values().iter().zip(u.values()) {
            assert_relative_eq!(*r, 0.5 * uu);
        }

        let u = ScalarField::constant(g, 1.0);
        let phi = ScalarField::from_fn(g, |x| x[0].sin());
        let grad_phi = sp.grad(&phi);
        let spec = SourceSpec::default_coupling(1.0);
        let (rv, _) = evaluate_sources(&u, &v, &phi, &grad_phi, &spec, &p).unwrap();
        for (i, r) in rv.component(0).values().iter().enumerate() {
            assert!((r - g.coordinate(i)[0].cos()).abs() < 1e-10);
        }

        let u = ScalarField::constant(g, 2.0);
        let phi = ScalarField::zeros(g);
        let spec = SourceSpec { fbar: Production::Quadratic { c1: 1.0, c2: 0.0 }, ..SourceSpec::zero() };
        let p1 = ModelParams::new(1.0, 1.0, 3.0, 1.0).unwrap();
        let (_, rp) = evaluate_sources(&u, &v, &phi, &VectorField::zeros(g), &spec, &p1).unwrap();
        assert!(rp.values().iter().all(|r| (r - (2.0 * 3.0 + 4.0)).abs() < 1e-14));
    }

    fn catalog() -> Vec<SourceSpec> {
        let mut out = vec![SourceSpec::zero(), SourceSpec::default_coupling(1.3)];
        for bbar in [Damping::Zero, Damping::PhiLinear { c3: -0.8 }, Damping::Norm { c3: 1.1 }] {
            for h in [Sensitivity::Grad { chi: 2.0 }, Sensitivity::Saturating { chi: -1.5 }] {
                out.push(SourceSpec {
                    bbar,
                    h,
                    g: Response::Linear,
                    fbar: Production::Quadratic { c1: 0.4, c2: -2.0 },
                });
            }
        }
        out
    }

    #[test]
    fn catalog_satisfies_growth_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for spec in catalog() {
            let c = spec.growth_constants();
            assert_eq!(spec.bbar.eval(0.0, &[0.0]), 0.0);
            assert_eq!(spec.h.factor(0.0) * 0.0, 0.0);
            assert_eq!(spec.g.eval(0.0), 0.0);
            assert_eq!(spec.fbar.eval(0.0, 0.0), 0.0);
            for _ in 0..1000 {
                let z: f64 = rng.random_range(-0.5..0.5);
                let w: f64 = rng.random_range(-0.5..0.5);
                let slack = 1e-14;
                assert!(spec.bbar.eval(z, &[w]).abs() <= c.b_k * (z.abs() + w.abs()) + slack);
                assert!((spec.h.factor(z) * w).abs() <= c.h_k * (z.abs() + w.abs()) + slack);
                assert!(spec.g.eval(z).abs() <= c.g_k * z.abs() + slack);
                assert!(spec.fbar.eval(z, w).abs() <= c.f_k * (z * z + w * w) + slack);
            }
        }
    }

    #[test]
    fn stationary_state_balance() {
        let p = ModelParams::new(1.0, 1.0, 2.0, 3.0).unwrap();
        let s = StationaryState::new(0.3, &p).unwrap();
        assert_eq!(s.phi_bar * p.b, p.a * s.u_bar);
        assert!(StationaryState::new(-1.0, &p).is_err());
    }

    #[test]
    fn source_spec_toml_roundtrip() {
        let text = r#"
            bbar = { kind = "norm", c3 = 0.5 }
            h = { kind = "saturating", chi = 2.0 }
            g = { kind = "linear" }
            fbar = { kind = "quadratic", c1 = 1.0, c2 = 0.0 }
        "#;
        let spec: SourceSpec = toml::from_str(text).unwrap();
        assert_eq!(spec.h, Sensitivity::Saturating { chi: 2.0 });
        let back: SourceSpec = toml::from_str(&toml::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
        assert!(toml::from_str::<SourceSpec>("h = { kind = \"grad\", chi = 1.0, extra = 2 }").is_err());
    }
}
