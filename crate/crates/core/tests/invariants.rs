//! Cross-module invariants checked on random inputs.

use lineqgp::{
    back_solve, ConstrainedGp, ConstrainedGp32, KernelFamily, KernelParams, KnotGrid, LinearConstraintSystem,
    MapOptions, SamplerConfig, SamplerKind,
};
use nalgebra::DVector;
use proptest::prelude::*;

fn knot_vector(max_m: usize) -> impl Strategy<Value = Vec<f64>> {
    (3..=max_m).prop_flat_map(|m| prop::collection::vec(-1.5f64..1.5, m))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn reduced_and_stacked_bounded_monotone_agree(mut xi in knot_vector(12), sorted in any::<bool>()) {
        if sorted {
            xi.sort_by(f64::total_cmp);
        }
        let m = xi.len();
        let x = DVector::from_vec(xi);
        let reduced = LinearConstraintSystem::reduced_bounded_monotone(m, -1.0, 1.0).unwrap();
        let stacked = LinearConstraintSystem::stack(&[
            &LinearConstraintSystem::bounds(m, -1.0, 1.0).unwrap(),
            &LinearConstraintSystem::monotonicity(m).unwrap(),
        ])
        .unwrap();
        prop_assert_eq!(reduced.is_feasible(&x, 0.0), stacked.is_feasible(&x, 0.0));
    }

    #[test]
    fn interpolant_reproduces_knot_values(xi in knot_vector(20)) {
        let m = xi.len();
        let grid = KnotGrid::<f64>::uniform(m).unwrap();
        let x = DVector::from_vec(xi);
        for (j, knot) in grid.knot_points().iter().enumerate() {
            prop_assert!((grid.eval(&x, knot).unwrap() - x[j]).abs() <= 1e-12);
        }
    }

    #[test]
    fn back_solve_inverts_full_rank_systems(xi in knot_vector(10)) {
        let m = xi.len();
        let x = DVector::from_vec(xi);
        let sys = LinearConstraintSystem::reduced_bounded_monotone(m, -1.0, 1.0).unwrap();
        let eta = sys.matrix() * &x;
        let (back, residual) = back_solve(&sys, &eta).unwrap();
        prop_assert!(residual <= 1e-9);
        prop_assert!((back - x).amax() <= 1e-9);
    }

    #[test]
    fn map_is_feasible_and_interpolates(ys in prop::collection::vec(0.05f64..0.95, 2..6)) {
        let mut ys = ys;
        ys.sort_by(f64::total_cmp);
        let n = ys.len();
        let design: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 + 0.5) / n as f64]).collect();
        let sys = LinearConstraintSystem::stack(&[
            &LinearConstraintSystem::bounds(15, 0.0, 1.0).unwrap(),
            &LinearConstraintSystem::monotonicity(15).unwrap(),
        ])
        .unwrap();
        let kernel = KernelParams::new(KernelFamily::Matern52, 1.0, vec![0.3]).unwrap();
        let gp = ConstrainedGp::new(KnotGrid::uniform(15).unwrap(), kernel, design.clone(), DVector::from_vec(ys.clone()), sys)
            .unwrap();
        let map = gp.map(&MapOptions::default()).unwrap();
        prop_assert!(gp.system().max_violation(&map.xi) <= 1e-9);
        let fitted = gp.eval(&map.xi, &design).unwrap();
        for (f, y) in fitted.iter().zip(&ys) {
            prop_assert!((f - y).abs() <= 1e-8);
        }
    }
}

#[test]
fn chains_are_reproducible_per_seed_and_stream() {
    let design = vec![vec![0.2], vec![0.5], vec![0.8]];
    let y = DVector::from_vec(vec![0.1, 0.4, 0.9]);
    let kernel = KernelParams::new(KernelFamily::SquaredExponential, 1.0, vec![0.2]).unwrap();
    let sys = LinearConstraintSystem::monotonicity(20).unwrap();
    let gp = ConstrainedGp::new(KnotGrid::uniform(20).unwrap(), kernel, design, y, sys).unwrap();
    let map = gp.map(&MapOptions::default()).unwrap();
    for kind in SamplerKind::ALL {
        let cfg = SamplerConfig::new(kind, 50, 9);
        let (Ok(a), Ok(b)) = (gp.sample(&map, &cfg), gp.sample(&map, &cfg)) else {
            continue;
        };
        assert_eq!(a.draws, b.draws, "{kind}");
        let other = SamplerConfig { chain: 1, ..cfg };
        if let Ok(c) = gp.sample(&map, &other) {
            assert_ne!(a.draws, c.draws, "{kind}");
        }
    }
}

#[test]
fn single_precision_pipeline() {
    let design = vec![vec![0.1f32], vec![0.5], vec![0.9]];
    let y = DVector::from_vec(vec![0.1f32, 0.5, 0.8]);
    let kernel = KernelParams::new(KernelFamily::Matern52, 1.0f32, vec![0.3]).unwrap();
    let sys = LinearConstraintSystem::bounds(12, 0.0f32, 1.0).unwrap();
    let gp: ConstrainedGp32 = ConstrainedGp::new(KnotGrid::uniform(12).unwrap(), kernel, design, y, sys).unwrap();
    let map = gp.map(&MapOptions::default()).unwrap();
    let chain = gp.sample(&map, &SamplerConfig::new(SamplerKind::Hmc, 200, 1)).unwrap();
    let xi = gp.xi_draws(&chain);
    assert!(xi.iter().all(|&v| (-1e-4..=1.0 + 1e-4).contains(&v)));
}
