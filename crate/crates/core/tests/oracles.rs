mod common;

use common::*;
use mfg_core::experiments::l2_error;
use mfg_core::stationary::stationary_residual;
use mfg_core::timedep::{residual_td, SpaceTimeState};
use rand::Rng;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn stationary_residual_matches_naive_loops() {
    let mut r = rng(11);
    for _ in 0..50 {
        let s = random_setup(&mut r);
        let p = s.problem();
        let cell = p.grid.cell_volume();
        let m = density(&mut r, p.grid.len(), cell);
        let u = uniform(&mut r, p.grid.len(), -1.0, 1.0);
        let got = stationary_residual(&p, &m, &u).unwrap();
        let (hjb, fp, lambda) = s.stationary_residual(&m, &u);
        let scale = 1.0 + hjb.iter().chain(&fp).fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!(max_diff(&got.hjb, &hjb) < 1e-12 * scale, "{s:?}");
        assert!(max_diff(&got.fp, &fp) < 1e-12 * scale, "{s:?}");
        assert!((got.lambda - lambda).abs() < 1e-12 * scale);
    }
}

#[test]
fn timedep_residual_matches_naive_loops() {
    let mut r = rng(12);
    for _ in 0..50 {
        let s = random_setup(&mut r);
        let base = s.problem();
        let n = base.grid.len();
        let cell = base.grid.cell_volume();
        let slices: usize = r.gen_range(1..=4);
        let horizon = 0.5 + uniform(&mut r, 1, 0.0, 1.0)[0];
        let m0 = density(&mut r, n, cell);
        let ut = uniform(&mut r, n, -1.0, 1.0);
        let p = with_time(&s, horizon, slices, m0.clone(), ut.clone());
        let mut m = vec![p.time.as_ref().unwrap().m0.clone()];
        let mut y = Vec::new();
        for _ in 0..slices {
            let mk = density(&mut r, n, cell);
            y.extend(&mk);
            m.push(mk);
        }
        let mut u = Vec::new();
        for _ in 0..slices {
            let uk = uniform(&mut r, n, -1.0, 1.0);
            y.extend(&uk);
            u.push(uk);
        }
        u.push(ut);
        let state = SpaceTimeState::from_vec(&p, y).unwrap();
        let got = residual_td(&p, &state).unwrap();
        let want = s.td_residual(horizon / slices as f64, &m, &u);
        let scale = 1.0 + want.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        assert!(max_diff(&got.blocks, &want) < 1e-12 * scale, "{s:?}");
    }
}

#[test]
fn l2_error_matches_naive_loop() {
    let mut r = rng(13);
    for _ in 0..20 {
        let a = uniform(&mut r, 64, -3.0, 3.0);
        let b = uniform(&mut r, 64, -3.0, 3.0);
        let mut acc = 0.0;
        for i in 0..64 {
            acc += (a[i] - b[i]) * (a[i] - b[i]);
        }
        let want = (0.125 * 0.125 * acc).sqrt();
        assert!((l2_error(&a, &b, &[0.125, 0.125]).unwrap() - want).abs() < 1e-14);
    }
    // Constant difference 2 on a 10 x 10 grid with h = 0.1.
    let a = vec![3.0; 100];
    let b = vec![1.0; 100];
    assert!((l2_error(&a, &b, &[0.1, 0.1]).unwrap() - 2.0).abs() < 1e-14);
}
