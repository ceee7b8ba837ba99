use chemotaxis_core::analysis::{fit_decay, functional_m, weighted_running_sup, FitKind, NormSeries, SeriesLabel};
use chemotaxis_core::kernels::{
    damped_wave_eigen, mode_symbol, propagate_hyperbolic, propagator_matrix, KernelSplit,
};
use chemotaxis_core::model::{cd_inverse, cd_transform, SystemMatrices};
use chemotaxis_core::{Grid, ModelParams, NormKind, ScalarField, Spectral, VectorField};
use num_complex::Complex64;
use proptest::prelude::*;

fn grid_strategy() -> impl Strategy<Value = Grid> {
    prop_oneof![
        (3u32..7).prop_map(|p| Grid::new(1, 1 << p, 10.0).unwrap()),
        (3u32..5).prop_map(|p| Grid::new(2, 1 << p, 7.0).unwrap()),
        Just(Grid::new(3, 8, 5.0).unwrap()),
    ]
}

fn field_strategy() -> impl Strategy<Value = ScalarField> {
    grid_strategy().prop_flat_map(|g| {
        prop::collection::vec(-1.0..1.0f64, g.len()).prop_map(move |v| ScalarField::new(g, v).unwrap())
    })
}

fn params_strategy() -> impl Strategy<Value = ModelParams> {
    (0.2..3.0f64, 0.2..3.0f64).prop_map(|(g, b)| ModelParams::new(g, b, 1.0, 1.0).unwrap())
}

fn xi_strategy() -> impl Strategy<Value = Vec<f64>> {
    (1usize..=3).prop_flat_map(|n| prop::collection::vec(-4.0..4.0f64, n))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fft_roundtrip(f in field_strategy()) {
        let sp = Spectral::new(*f.grid());
        let back = sp.inverse(&sp.forward(f.values()));
        let err: Vec<f64> = back.iter().zip(f.values()).map(|(a, b)| a - b).collect();
        prop_assert!(l2(&err) <= 1e-12 * l2(f.values()));
    }

    #[test]
    fn parseval(f in field_strategy()) {
        let sp = Spectral::new(*f.grid());
        let physical = f.norm(NormKind::L2).unwrap();
        let spectral = sp.l2_norm_hat(&sp.forward(f.values()));
        prop_assert!((physical - spectral).abs() <= 1e-10 * physical.max(1e-300));
    }

    #[test]
    fn hermitian_symmetry(f in field_strategy()) {
        let g = *f.grid();
        let sp = Spectral::new(g);
        let c = sp.forward(f.values());
        let n = g.points();
        for idx in 0..g.len() {
            let p = g.unravel(idx);
            let mut mirror = 0;
            for d in 0..g.dim() {
                mirror = mirror * n + (n - p[d]) % n;
            }
            prop_assert!((c[idx] - c[mirror].conj()).norm() <= 1e-12 * (1.0 + c[idx].norm()));
        }
    }

    /// Equal multipliers away from the Nyquist plane, where first-order
    /// derivatives are zeroed.
    #[test]
    fn div_grad_is_laplacian(f in field_strategy()) {
        let g = *f.grid();
        let sp = Spectral::new(g);
        let mut c = sp.forward(f.values());
        let nyq = g.points() / 2;
        for (idx, v) in c.iter_mut().enumerate() {
            if g.unravel(idx)[..g.dim()].contains(&nyq) {
                *v = Complex64::new(0.0, 0.0);
            }
        }
        let band = ScalarField::new(g, sp.inverse(&c)).unwrap();
        let dg = sp.divergence(&sp.grad(&band));
        let lap = sp.laplacian(&band);
        let err: Vec<f64> = dg.values().iter().zip(lap.values()).map(|(a, b)| a - b).collect();
        prop_assert!(l2(&err) <= 1e-12 * (1.0 + l2(lap.values())));
    }

    /// Scaling by `1/gamma` then `gamma` is exact up to one rounding per entry.
    #[test]
    fn cd_roundtrip(f in field_strategy(), gamma in 1e-3..1e3f64) {
        let g = *f.grid();
        let comps: Vec<ScalarField> = (0..g.dim())
            .map(|j| ScalarField::new(g, f.values().iter().map(|x| x * (j as f64 + 1.0)).collect()).unwrap())
            .collect();
        let v = VectorField::new(comps).unwrap();
        let (w1, w2) = cd_transform(&f, &v, gamma).unwrap();
        let (u, back) = cd_inverse(&w1, &w2, gamma).unwrap();
        prop_assert_eq!(&u, &f);
        for (a, b) in back.components().iter().zip(v.components()) {
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() <= 2.0 * f64::EPSILON * y.abs());
            }
        }
    }

    #[test]
    fn semigroup(f in field_strategy(), p in params_strategy(), ti in 0usize..3, si in 0usize..3) {
        let times = [0.1, 0.7, 1.3];
        let (t, s) = (times[ti], times[si]);
        let g = *f.grid();
        let sp = Spectral::new(g);
        let mut w: Vec<Vec<Complex64>> = (0..=g.dim())
            .map(|j| sp.forward(&f.values().iter().map(|x| x * (1.0 + j as f64)).rev().collect::<Vec<_>>()))
            .collect();
        let mut once = w.clone();
        propagate_hyperbolic(&mut once, &sp, &p, t + s, false).unwrap();
        propagate_hyperbolic(&mut w, &sp, &p, t, false).unwrap();
        propagate_hyperbolic(&mut w, &sp, &p, s, false).unwrap();
        let diff: f64 = w.iter().flatten().zip(once.iter().flatten()).map(|(a, b)| (a - b).norm_sqr()).sum();
        let norm: f64 = once.iter().flatten().map(|a| a.norm_sqr()).sum();
        prop_assert!(diff.sqrt() <= 1e-9 * norm.sqrt().max(1e-300));
    }

    #[test]
    fn identity_at_time_zero(xi in xi_strategy(), p in params_strategy()) {
        let e = propagator_matrix(&xi, &p, 0.0);
        for i in 0..e.nrows() {
            for j in 0..e.ncols() {
                let id = if i == j { 1.0 } else { 0.0 };
                prop_assert!((e[(i, j)] - Complex64::new(id, 0.0)).norm() <= 1e-15);
            }
        }
    }

    #[test]
    fn split_reconstructs_exactly(xi in xi_strategy(), p in params_strategy(), t in 0.0..20.0f64, r in 0.05..2.0f64) {
        let split = KernelSplit::new(p, Some(r)).unwrap();
        let sum = split.k_mode(&xi, t) + split.kcal_mode(&xi, t);
        prop_assert_eq!(sum, propagator_matrix(&xi, &p, t));
    }

    #[test]
    fn free_flow_conserves_mass(f in field_strategy(), p in params_strategy(), t in 0.0..50.0f64) {
        let g = *f.grid();
        let sp = Spectral::new(g);
        let mut w: Vec<Vec<Complex64>> = (0..=g.dim()).map(|_| sp.forward(f.values())).collect();
        let mass = w[0][0];
        propagate_hyperbolic(&mut w, &sp, &p, t, false).unwrap();
        prop_assert_eq!(w[0][0], mass);
    }

    #[test]
    fn spectral_radius_on_complex_branch(p in params_strategy(), excess in 1.01..20.0f64, t in 0.01..30.0f64) {
        let k = excess * p.beta / (2.0 * p.gamma);
        let e = propagator_matrix(&[k], &p, t);
        let tr = e[(0, 0)] + e[(1, 1)];
        let det = e[(0, 0)] * e[(1, 1)] - e[(0, 1)] * e[(1, 0)];
        let disc = (tr * tr / 4.0 - det).sqrt();
        let radius = (tr / 2.0 + disc).norm().max((tr / 2.0 - disc).norm());
        let expected = (-p.beta * t / 2.0).exp();
        prop_assert!((radius - expected).abs() <= 1e-10 * expected.max(1e-300) + 1e-14);
    }

    #[test]
    fn symbol_conjugate_symmetry(xi in xi_strategy(), p in params_strategy()) {
        let m = SystemMatrices::build(&p, xi.len()).unwrap();
        let neg: Vec<f64> = xi.iter().map(|x| -x).collect();
        prop_assert_eq!(mode_symbol(&m, &neg), mode_symbol(&m, &xi).map(|z| z.conj()));
        let k = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        let (lp, lm) = damped_wave_eigen(k, p.gamma, p.beta);
        prop_assert!(lp.re <= 0.0 && lm.re <= 0.0);
    }

    #[test]
    fn functional_m_is_monotone(values in prop::collection::vec(0.0..10.0f64, 2..60), delta in 0.0..2.0f64) {
        let times: Vec<f64> = (0..values.len()).map(|i| 0.25 * (i + 1) as f64).collect();
        let s = NormSeries::new(SeriesLabel::new("g", NormKind::L2), times.clone(), values.clone()).unwrap();
        let running = weighted_running_sup(&s, delta);
        prop_assert!(running.windows(2).all(|w| w[1] >= w[0]));
        for cut in 1..values.len() {
            let prefix = NormSeries::new(SeriesLabel::new("g", NormKind::L2), times[..cut].to_vec(), values[..cut].to_vec()).unwrap();
            prop_assert!(functional_m(&prefix, delta).unwrap() <= functional_m(&s, delta).unwrap());
        }
    }

    #[test]
    fn power_fit_recovers_exponent(expo in -3.0..0.5f64, c in 0.01..100.0f64, lo in 1.0..10.0f64, span in 2.0..50.0f64) {
        let times: Vec<f64> = (0..80).map(|i| 0.5 + i as f64 * (lo + span) / 70.0).collect();
        let values: Vec<f64> = times.iter().map(|t| c * t.powf(expo)).collect();
        let s = NormSeries::new(SeriesLabel::new("g", NormKind::L2), times, values).unwrap();
        let fit = fit_decay(&s, (lo, lo + span), FitKind::Power).unwrap();
        prop_assert!((fit.exponent - expo).abs() <= 1e-6);
    }
}

/// Every rate of the decay table, transcribed by hand for `k = 0, 1, 2`.
#[test]
fn expected_table_golden() {
    let golden: [(usize, [(&str, f64); 16]); 3] = [
        (
            1,
            [
                ("u_Linf", 0.5), ("u_L2", 0.25), ("D0u_L2", 0.25), ("D1u_L2", 0.5), ("D2u_L2", 0.75),
                ("v_Linf", 0.5), ("v_L2", 0.5), ("D0v_L2", 0.5), ("D1v_L2", 0.5), ("D2v_L2", 0.75),
                ("phi_Linf", 0.5), ("gphi_Linf", 0.5), ("phi_L2", 0.25), ("D1phi_L2", 0.25), ("D2phi_L2", 0.5), ("D3phi_L2", 0.75),
            ],
        ),
        (
            2,
            [
                ("u_Linf", 1.0), ("u_L2", 0.5), ("D0u_L2", 0.5), ("D1u_L2", 1.0), ("D2u_L2", 1.5),
                ("v_Linf", 1.0), ("v_L2", 1.0), ("D0v_L2", 1.0), ("D1v_L2", 1.0), ("D2v_L2", 1.5),
                ("phi_Linf", 1.0), ("gphi_Linf", 1.0), ("phi_L2", 0.5), ("D1phi_L2", 0.5), ("D2phi_L2", 1.0), ("D3phi_L2", 1.5),
            ],
        ),
        (
            3,
            [
                ("u_Linf", 1.5), ("u_L2", 0.75), ("D0u_L2", 0.75), ("D1u_L2", 1.5), ("D2u_L2", 1.75),
                ("v_Linf", 1.5), ("v_L2", 1.25), ("D0v_L2", 1.25), ("D1v_L2", 1.5), ("D2v_L2", 2.25),
                ("phi_Linf", 1.5), ("gphi_Linf", 1.5), ("phi_L2", 0.75), ("D1phi_L2", 0.75), ("D2phi_L2", 1.5), ("D3phi_L2", 1.75),
            ],
        ),
    ];
    for (dim, rates) in golden {
        let table = chemotaxis_core::analysis::expected_table(dim, 2);
        for (q, r) in rates {
            assert_eq!(table.rate(q), Some(r), "n = {dim}, {q}");
        }
        assert_eq!(table.entries.len(), 16);
        assert_eq!(table, chemotaxis_core::analysis::expected_table(dim, 2));
    }
}
