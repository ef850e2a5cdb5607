mod common;

use std::sync::Arc;

use common::*;
use mfg_core::grid::{Sign, TorusGrid};
use mfg_core::inverse::{EquilibriumConstraint, StationaryConstraint, TimeDependentConstraint, TimeSolver};
use mfg_core::linalg;
use mfg_core::models::{adjoint_identity_check, transport_operator, CongestionPower, Coupling, GodunovQuadratic, MfgProblem, NumericalHamiltonian, SmoothedQuadratic};
use mfg_core::rkhs::{rkhs_norm_sq, GramModel, KernelKind, KernelSpec};
use mfg_core::stationary::{stationary_residual, InnerConfig, StationarySolver};
use mfg_core::timedep::{monotonicity_gap, SpaceTimeState};
use proptest::prelude::*;

fn grid_strategy() -> impl Strategy<Value = TorusGrid> {
    prop_oneof![(3usize..16).prop_map(|n| TorusGrid::new(1, n).unwrap()), (3usize..8).prop_map(|n| TorusGrid::new(2, n).unwrap()),]
}

fn vec_for(g: &TorusGrid, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    uniform(&mut rng(seed), g.len(), lo, hi)
}

fn hamiltonians() -> Vec<Arc<dyn NumericalHamiltonian>> {
    vec![
        Arc::new(GodunovQuadratic::plain()),
        Arc::new(GodunovQuadratic::shifted([2.0, -1.0])),
        Arc::new(CongestionPower::new(1.5, 2.0, [1.0, 3.0])),
        Arc::new(SmoothedQuadratic::new([0.5, 0.25], 1e-2)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn summation_by_parts(g in grid_strategy(), seed in any::<u64>()) {
        let a = vec_for(&g, seed, -1.0, 1.0);
        let b = vec_for(&g, seed ^ 1, -1.0, 1.0);
        for axis in 0..g.dim() {
            let dm_a: Vec<f64> = g.diff(&a, axis, Sign::Backward).unwrap().iter().map(|v| -v).collect();
            let dp_b = g.diff(&b, axis, Sign::Forward).unwrap();
            prop_assert!((g.inner(&dm_a, &b).unwrap() - g.inner(&a, &dp_b).unwrap()).abs() < 1e-12);
            let dp_a: Vec<f64> = g.diff(&a, axis, Sign::Forward).unwrap().iter().map(|v| -v).collect();
            let dm_b = g.diff(&b, axis, Sign::Backward).unwrap();
            prop_assert!((g.inner(&dp_a, &b).unwrap() - g.inner(&a, &dm_b).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn laplacian_is_symmetric_and_nonpositive(g in grid_strategy(), seed in any::<u64>()) {
        let a = vec_for(&g, seed, -1.0, 1.0);
        let b = vec_for(&g, seed ^ 2, -1.0, 1.0);
        let la = g.laplacian(&a).unwrap();
        let lb = g.laplacian(&b).unwrap();
        let scale = 1.0 + linalg::norm_inf(&la).max(linalg::norm_inf(&lb));
        prop_assert!((g.inner(&la, &b).unwrap() - g.inner(&a, &lb).unwrap()).abs() < 1e-12 * scale);
        prop_assert!(g.inner(&la, &a).unwrap() <= 1e-12 * scale);
    }

    #[test]
    fn hamiltonians_are_consistent(x1 in -3.0..3.0f64, x2 in -3.0..3.0f64, m in 0.1..3.0f64) {
        // The smoothed variant is only ε-consistent.
        for h in hamiltonians().into_iter().take(3) {
            for dim in [1usize, 2] {
                let q = [x1, x1, x2, x2];
                let p = [x1, if dim == 2 { x2 } else { 0.0 }];
                let g = h.value([0.3, 0.7], &q, m, dim);
                let c = h.continuous([0.3, 0.7], p, m, dim);
                prop_assert!((g - c).abs() < 1e-12 * (1.0 + c.abs()), "{:?}: {} vs {}", h.kind(), g, c);
            }
        }
    }

    #[test]
    fn hamiltonian_gradient_signs(q in prop::array::uniform4(-4.0..4.0f64), m in 0.1..3.0f64) {
        for h in hamiltonians() {
            let gr = h.gradient([0.1, 0.2], &q, m, 2);
            for a in 0..2 {
                prop_assert!(gr[2 * a] <= 0.0, "{:?} slot {}", h.kind(), 2 * a);
                prop_assert!(gr[2 * a + 1] >= 0.0, "{:?} slot {}", h.kind(), 2 * a + 1);
            }
        }
    }

    #[test]
    fn local_couplings_are_monotone(g in grid_strategy(), seed in any::<u64>(), p in 0.5..3.0f64) {
        let a = vec_for(&g, seed, 0.1, 2.0);
        let b = vec_for(&g, seed ^ 3, 0.1, 2.0);
        for c in [Coupling::Power(p), Coupling::LogScaled(100.0), Coupling::Cubic] {
            let fa = c.apply(&g, &a).unwrap();
            let fb = c.apply(&g, &b).unwrap();
            let gap = g.inner(&linalg::sub(&fa, &fb), &linalg::sub(&a, &b)).unwrap();
            prop_assert!(gap > 0.0);
        }
    }

    #[test]
    fn transport_has_zero_mean_and_adjoint_identity(g in grid_strategy(), seed in any::<u64>()) {
        let u = vec_for(&g, seed, -1.0, 1.0);
        let m = vec_for(&g, seed ^ 4, 0.1, 2.0);
        let v = vec_for(&g, seed ^ 5, -1.0, 1.0);
        for h in hamiltonians() {
            let p = MfgProblem::stationary(g, 0.1, h, Coupling::Cubic, vec![0.0; g.len()]).unwrap();
            let b = transport_operator(&p, &u, &m).unwrap();
            prop_assert!(g.integral(&b).abs() < 1e-12);
            prop_assert!(adjoint_identity_check(&p, &u, &m, &v).unwrap() < 1e-12);
        }
    }

    #[test]
    fn lambda_elimination_and_fp_mean(seed in any::<u64>()) {
        let mut r = rng(seed);
        let s = random_setup(&mut r);
        let p = s.problem();
        let m = density(&mut r, p.grid.len(), p.grid.cell_volume());
        let u = uniform(&mut r, p.grid.len(), -1.0, 1.0);
        let res = stationary_residual(&p, &m, &u).unwrap();
        let scale = 1.0 + linalg::norm_inf(&res.hjb);
        prop_assert!(p.grid.inner(&m, &res.hjb).unwrap().abs() < 1e-12 * scale);
        prop_assert!(p.grid.integral(&res.fp).abs() < 1e-12 * (1.0 + linalg::norm_inf(&res.fp)));
    }

    #[test]
    fn timedep_operator_is_strictly_monotone(seed in any::<u64>(), cubic in any::<bool>()) {
        let mut r = rng(seed);
        let f = if cubic { LocalF::Cubic } else { LocalF::Power(1.0) };
        let s = Setup { dim: 1, n: 6, nu: 0.1, shift: [0.0, 0.0], f, cost: uniform(&mut r, 6, -1.0, 1.0) };
        let cell = 1.0 / 6.0;
        let p = with_time(&s, 1.0, 3, density(&mut r, 6, cell), uniform(&mut r, 6, -1.0, 1.0));
        let draw = |r: &mut rand_chacha::ChaCha8Rng| {
            let mut y = Vec::new();
            for _ in 0..3 { y.extend(density(r, 6, cell)); }
            y.extend(uniform(r, 18, -1.0, 1.0));
            SpaceTimeState::from_vec(&p, y).unwrap()
        };
        let a = draw(&mut r);
        let b = draw(&mut r);
        prop_assert!(monotonicity_gap(&p, &a, &b).unwrap() > 0.0);
    }

    #[test]
    fn kernels_are_symmetric(ax in 0.0..1.0f64, ay in 0.0..1.0f64, bx in 0.0..1.0f64, by in 0.0..1.0f64) {
        let kinds = [
            KernelKind::PeriodicGaussian { lengthscale: 0.2 },
            KernelKind::TorusMatern { smoothness: 1.5, lengthscale: 0.3 },
            KernelKind::TorusMatern { smoothness: 0.5, lengthscale: 0.2 },
        ];
        for k in kinds {
            for dim in [1, 2] {
                let kab = k.spatial([ax, ay], [bx, by], dim);
                let kba = k.spatial([bx, by], [ax, ay], dim);
                prop_assert_eq!(kab, kba);
            }
        }
    }
}

#[test]
fn rkhs_norm_scales_quadratically() {
    let g = TorusGrid::new(2, 6).unwrap();
    let gram = GramModel::spatial(&KernelSpec::periodic_gaussian(0.2).with_jitter(1e-6), &g).unwrap();
    let mut r = rng(21);
    for _ in 0..10 {
        let v = uniform(&mut r, g.len(), -1.0, 1.0);
        let n1 = rkhs_norm_sq(&v, &gram).unwrap();
        let n3 = rkhs_norm_sq(&v.iter().map(|x| 3.0 * x).collect::<Vec<_>>(), &gram).unwrap();
        assert!(n1 >= 0.0);
        assert!((n3 - 9.0 * n1).abs() < 1e-9 * n3);
    }
}

/// ⟨w, A v⟩ = ⟨Aᵀ w, v⟩ for the four Jacobian actions of a constraint.
fn check_transposes(c: &dyn EquilibriumConstraint, z: &[f64], theta: &[f64], seed: u64) {
    let mut r = rng(seed);
    let nz = c.state_len();
    let np = c.param_len();
    let nf = c.residual(z, theta).unwrap().len();
    for _ in 0..5 {
        let v = uniform(&mut r, nz, -1.0, 1.0);
        let w = uniform(&mut r, nf, -1.0, 1.0);
        let p = uniform(&mut r, np, -1.0, 1.0);
        let jv = c.jac_z(z, theta, &v).unwrap();
        let jtw = c.jac_z_t(z, theta, &w).unwrap();
        let lhs = linalg::dot(&w, &jv);
        assert!((lhs - linalg::dot(&jtw, &v)).abs() < 1e-10 * (1.0 + lhs.abs()));
        let jp = c.jac_theta(z, theta, &p).unwrap();
        let jtw = c.jac_theta_t(z, theta, &w).unwrap();
        let lhs = linalg::dot(&w, &jp);
        assert!((lhs - linalg::dot(&jtw, &p)).abs() < 1e-10 * (1.0 + lhs.abs()));
    }
}

#[test]
fn jacobian_actions_are_transpose_consistent() {
    let mut r = rng(31);
    for _ in 0..4 {
        let s = random_setup(&mut r);
        let p = s.problem();
        let n = p.grid.len();
        let theta = s.cost.clone();
        let c = StationaryConstraint::new(p.clone(), StationarySolver::Newton, InnerConfig::default());
        let mut z = density(&mut r, n, p.grid.cell_volume());
        z.extend(uniform(&mut r, n, -1.0, 1.0));
        check_transposes(&c, &z, &theta, 32);
    }
    let p = downscaled_timedep();
    let c = TimeDependentConstraint::new(p.clone(), TimeSolver::Newton, 1e-10, 100).unwrap();
    let state = SpaceTimeState::initial(&p).unwrap();
    let z: Vec<f64> = state.y.iter().enumerate().map(|(i, v)| v + 0.01 * ((i as f64) * 0.37).sin().abs()).collect();
    check_transposes(&c, &z, &p.cost, 33);
}
