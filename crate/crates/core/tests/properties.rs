use proptest::prelude::*;

use mimik::copula::{bivariate_normal_cdf, CopulaModel};
use mimik::genlib::{build_generator_1d, instantaneous_moments, validate_generator, ModelSpec1D};
use mimik::grid::StateGrid;
use mimik::kernel::{expm_apply, DEFAULT_TOL};
use mimik::mc_oracle::ks_two_sample;
use mimik::tensor_ops::{assemble_joint_direct, build_correlation_operator, RhoField};

fn small_grid() -> StateGrid {
    StateGrid::with_spacing(-3.0, 3.0, 0.25).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ou_generators_are_conservative(kappa in 0.0..0.25f64, theta in -1.0..1.0f64, sigma in 0.5..2.0f64) {
        let g = small_grid();
        let m = ModelSpec1D::ou(kappa, theta, sigma);
        let q = build_generator_1d(&g, &m).unwrap();
        let r = validate_generator(&q);
        prop_assert!(r.passed);
        prop_assert!(r.boundary_rows_absorbing);
        for i in 1..g.len() - 1 {
            let x = g.points()[i];
            let (b, v) = instantaneous_moments(&q, &g, i).unwrap();
            prop_assert!((b - m.drift(x)).abs() <= 1e-12 * (1.0 + v));
            prop_assert!((v - sigma * sigma).abs() <= 1e-12 * v);
        }
    }

    #[test]
    fn joint_generators_stay_conservative(rho in -0.95..0.95f64, s1 in 0.5..1.5f64, s2 in 0.5..1.5f64) {
        let g = small_grid();
        let (m1, m2) = (ModelSpec1D::bm(0.0, s1), ModelSpec1D::bm(0.0, s2));
        let a1 = build_generator_1d(&g, &m1).unwrap();
        let a2 = build_generator_1d(&g, &m2).unwrap();
        let n = g.len();
        // cross rates stay below the axial ones only while |rho| s1 s2 <= min(s1, s2)^2
        let rho = rho * s1.min(s2) / s1.max(s2);
        let c = build_correlation_operator(&g, &g, &m1, &m2, &RhoField::constant(n, n, rho)).unwrap();
        let q = assemble_joint_direct(&a1, &a2, &c).unwrap();
        prop_assert!(validate_generator(&q).passed);
    }

    #[test]
    fn evolution_keeps_a_probability_vector(t in 0.0..2.0f64, start in 1usize..24) {
        let g = small_grid();
        let q = build_generator_1d(&g, &ModelSpec1D::ou(0.5, 0.0, 1.0)).unwrap();
        let mut v = vec![0.0; g.len()];
        v[start] = 1.0;
        let p = expm_apply(&q, &v, t, DEFAULT_TOL).unwrap();
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn model_copulas_are_two_increasing(rho in -0.9..0.9f64) {
        let g = StateGrid::with_spacing(-3.0, 3.0, 0.5).unwrap();
        let n = g.len();
        let bm = ModelSpec1D::bm(0.0, 1.0);
        let m = CopulaModel::new(&g, &g, &bm, &bm, (n / 2, n / 2), 0.8, DEFAULT_TOL).unwrap();
        let report = m.copula(&RhoField::constant(n, n, rho)).unwrap().check(2.0 * g.h());
        prop_assert!(report.passed, "{report:?}");
    }

    #[test]
    fn bivariate_normal_is_monotone_in_correlation(x in -2.0..2.0f64, y in -2.0..2.0f64, r in -0.9..0.8f64) {
        prop_assert!(bivariate_normal_cdf(x, y, r + 0.1) >= bivariate_normal_cdf(x, y, r) - 1e-15);
    }

    #[test]
    fn ks_two_sample_is_a_symmetric_distance(
        a in prop::collection::vec(-5.0..5.0f64, 1..40),
        b in prop::collection::vec(-5.0..5.0f64, 1..40),
    ) {
        let d = ks_two_sample(&a, &b);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, ks_two_sample(&b, &a));
        prop_assert_eq!(ks_two_sample(&a, &a), 0.0);
    }
}
