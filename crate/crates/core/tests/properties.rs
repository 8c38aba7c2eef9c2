use fcalc_core::chart::{smallest_singular_value, RANK_TOL};
use fcalc_core::fiber::FiberOptions;
use fcalc_core::kernel::KernelFamily;
use fcalc_core::metric::{quasi_metric, ReachOptions};
use fcalc_core::operator::DyadicKernel;
use fcalc_core::poly::{PolyField, Polynomial};
use fcalc_core::profile::{Profile, ProfileKind};
use fcalc_core::{BoxRegion, Complex64, FilteredChart, GradedSpace};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use std::sync::Arc;

fn grushin() -> Arc<FilteredChart> {
    let x2 = PolyField::new(vec![Polynomial::zero(2), Polynomial::variable(2, 0)]).unwrap();
    Arc::new(
        FilteredChart::new(
            GradedSpace::new(vec![1, 1, 2]).unwrap(),
            vec![PolyField::coordinate(2, 0), x2, PolyField::coordinate(2, 1)],
            BoxRegion::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap(),
            1.0,
        )
        .unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10, rng_seed: RngSeed::Fixed(0x5eed), ..ProptestConfig::default() })]

    #[test]
    fn quasi_metric_is_symmetric(
        x0 in -0.4f64..0.4, x1 in -0.4f64..0.4,
        d0 in -0.15f64..0.15, d1 in -0.1f64..0.1,
    ) {
        let c = grushin();
        let tol = 1e-7;
        let (x, y) = ([x0, x1], [x0 + d0, x1 + d1]);
        let opts = ReachOptions::default();
        let a = quasi_metric(&c, &x, &y, tol, &opts).unwrap();
        let b = quasi_metric(&c, &y, &x, tol, &opts).unwrap();
        prop_assert!(a.is_finite() && b.is_finite());
        prop_assert!((a - b).abs() <= 2.0 * tol, "{} vs {}", a, b);
    }

    #[test]
    fn kernel_pieces_vanish_beyond_the_support_radius(
        x0 in -0.3f64..0.3, x1 in -0.3f64..0.3,
        d0 in -0.3f64..0.3, d1 in -0.2f64..0.2, j in 0u32..3,
    ) {
        let c = grushin();
        let p = Profile::builtin(c.space(), ProfileKind::OddBump, 0.0).unwrap();
        let fam = KernelFamily::new(c.clone(), p, 0.5, FiberOptions::default()).unwrap();
        let (x, y) = ([x0, x1], [x0 + d0, x1 + d1]);
        let rho = quasi_metric(&c, &x, &y, 1e-9, &ReachOptions::default()).unwrap();
        prop_assume!(rho > fam.support_radius(j) * (1.0 + 1e-6));
        prop_assert_eq!(fam.piece(j, &x, &y).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn coefficient_modulus_follows_the_real_part_of_the_order(
        re in -2.0f64..0.0, im in -3.0f64..3.0, j_max in 1u32..12,
    ) {
        let c = grushin();
        let p = Profile::builtin(c.space(), ProfileKind::Bump, 0.0).unwrap();
        let k = DyadicKernel::new(p, Complex64::new(re, im), 0.5, j_max).unwrap();
        for j in 1..=j_max {
            let want = 2f64.powf(j as f64 * re);
            prop_assert!((k.alpha(j).norm() - want).abs() <= 1e-12 * want.max(1e-300));
        }
    }

    #[test]
    fn grushin_fields_span_at_every_point(x0 in -1.0f64..1.0, x1 in -1.0f64..1.0) {
        let c = grushin();
        prop_assert!(smallest_singular_value(&c.field_matrix(&[x0, x1])) >= RANK_TOL);
    }

    #[test]
    fn ball_samples_stay_inside_and_scale_with_the_homogeneous_dimension(
        seed in any::<u64>(), r in 0.1f64..2.0,
    ) {
        let space = GradedSpace::new(vec![1, 2]).unwrap();
        let n = 20_000;
        let pts = space.sample_ball(2.0 * r, n, seed).unwrap();
        prop_assert!(pts.iter().all(|v| space.norm(v) < 2.0 * r));
        let inner = pts.iter().filter(|v| space.norm(v) < r).count() as f64 / n as f64;
        let p = 0.5f64.powi(space.homogeneous_dimension() as i32);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        prop_assert!((inner - p).abs() <= 3.0 * se, "{} vs {} (se {})", inner, p, se);
    }
}
