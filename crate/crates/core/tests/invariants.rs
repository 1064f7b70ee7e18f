use ndarray::Array2;
use proptest::prelude::*;

use epidiffuse::estimate::{acceptance_probability, Bounds};
use epidiffuse::solver_cn::CnWorkspace;
use epidiffuse::solver_fem::FemWorkspace;
use epidiffuse::trajectory::ForwardStepper;
use epidiffuse::GridSpec;

fn field(g: &GridSpec, seed: u64) -> Array2<f64> {
    Array2::from_shape_fn(g.shape(), |(j, i)| {
        (((i as u64 * 131 + j as u64 * 71 + seed) * 2654435761) % 1000) as f64 / 250.0
    })
}

fn trapezoid_weights(g: &GridSpec) -> Array2<f64> {
    let (ny, nx) = g.shape();
    Array2::from_shape_fn((ny, nx), |(j, i)| {
        let wx = if i == 0 || i == nx - 1 { 0.5 } else { 1.0 };
        let wy = if j == 0 || j == ny - 1 { 0.5 } else { 1.0 };
        wx * wy
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cn_diffusion_conserves_the_node_sum(
        nx in 3usize..12, ny in 3usize..12, kappa in 0.0f64..2.0, tau in 0.01f64..1.0, seed in 0u64..1000,
    ) {
        let g = GridSpec::new(nx, ny, 5.0, 7.0).unwrap();
        let cn = CnWorkspace::assemble(&g, kappa, tau).unwrap();
        let mut u = field(&g, seed);
        let before = u.sum();
        for _ in 0..5 {
            u = cn.diffuse(&u).unwrap();
        }
        prop_assert!((u.sum() - before).abs() <= 1e-12 * before.max(1.0));
    }

    #[test]
    fn cn_diffusion_keeps_constants(nx in 3usize..10, ny in 3usize..10, kappa in 0.0f64..2.0, c in 0.0f64..1e4) {
        let g = GridSpec::new(nx, ny, 3.0, 2.0).unwrap();
        let cn = CnWorkspace::assemble(&g, kappa, 0.5).unwrap();
        let u = cn.diffuse(&Array2::from_elem(g.shape(), c)).unwrap();
        prop_assert!(u.iter().all(|v| (v - c).abs() <= 1e-12 * c.max(1.0)));
    }

    #[test]
    fn cn_diffusion_obeys_the_maximum_principle(
        nx in 3usize..10, ny in 3usize..10, kappa in 0.0f64..0.5, seed in 0u64..1000,
    ) {
        // the 1/h² scale is at most ~1 here, so κτ/h² stays well inside the monotone range
        let g = GridSpec::new(nx, ny, 10.0, 10.0).unwrap();
        let cn = CnWorkspace::assemble(&g, kappa, 0.1).unwrap();
        let u0 = field(&g, seed);
        let u = cn.diffuse(&u0).unwrap();
        let (lo, hi) = u0.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        prop_assert!(u.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn fem_diffusion_conserves_the_lumped_integral(
        nx in 3usize..9, ny in 3usize..9, kappa in 0.0f64..1.0, seed in 0u64..1000,
    ) {
        let g = GridSpec::new(nx, ny, 4.0, 6.0).unwrap();
        let fem = FemWorkspace::assemble(&g, kappa, 0.25).unwrap();
        let w = trapezoid_weights(&g);
        let u0 = field(&g, seed);
        let u = fem.diffuse(&u0).unwrap();
        let (a, b) = ((&w * &u0).sum(), (&w * &u).sum());
        prop_assert!((a - b).abs() <= 1e-11 * a.max(1.0));
    }

    #[test]
    fn acceptance_probability_is_a_clipped_likelihood_ratio(
        j_old in 0.0f64..10.0, j_new in 0.0f64..10.0, sigma in 0.05f64..10.0,
    ) {
        let a = acceptance_probability(j_old, j_new, sigma);
        prop_assert!((0.0..=1.0).contains(&a));
        if j_new <= j_old {
            prop_assert_eq!(a, 1.0);
        } else {
            let expected = ((j_old * j_old - j_new * j_new) / (2.0 * sigma * sigma)).exp();
            prop_assert!((a - expected).abs() <= 1e-15);
            prop_assert!(acceptance_probability(j_old, j_new * 1.01, sigma) <= a);
        }
    }

    #[test]
    fn projection_lands_inside_the_bounds(chi in proptest::array::uniform5(-5.0f64..5.0)) {
        let b = Bounds::default();
        let mut x = chi;
        b.project(&mut x);
        prop_assert!(b.contains(&x));
        let mut y = x;
        b.project(&mut y);
        prop_assert_eq!(x, y);
    }
}
