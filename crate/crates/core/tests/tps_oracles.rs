mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use tps_undistort::tps::{
    build_kernel_k, build_padded_l, grid_jacobian_wrt_sources, solve_theta, transform_grid,
};
use tps_undistort::{ControlPointSet, SamplingGrid};

fn theta_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| vec![m[(i, 0)], m[(i, 1)]]).collect()
}

#[test]
fn kernel_matches_double_loop() {
    for (w, h) in [(64, 48), (128, 128), (256, 256)] {
        let t = targets(w, h);
        let expected = dense_l(&t);
        let k = build_kernel_k(&cps(t.clone()));
        let l = build_padded_l(&cps(t.clone())).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                assert!((k[(i, j)] - expected[i][j]).abs() <= 1e-12 * expected[i][j].abs().max(1.0));
            }
        }
        for i in 0..19 {
            for j in 0..19 {
                assert!((l[(i, j)] - expected[i][j]).abs() <= 1e-12 * expected[i][j].abs().max(1.0));
            }
        }
    }
}

#[test]
fn identity_reproduces_reference_grid() {
    let t = cps(targets(128, 128));
    let theta = solve_theta(&t, &t).unwrap();
    let grid = transform_grid(&theta, (128, 128));
    assert!(grid.max_deviation(&SamplingGrid::identity(128, 128)).unwrap() < 1e-6);
}

#[test]
fn theta_matches_dense_oracle() {
    let mut r = rng(11);
    for (w, h) in [(128, 128), (256, 256), (96, 64)] {
        let t = targets(w, h);
        for _ in 0..10 {
            let s = jitter(&t, 12.0, &mut r);
            let theta = solve_theta(&cps(s.clone()), &cps(t.clone())).unwrap();
            let oracle = theta_oracle(&s, &t);
            let got: Vec<f64> = theta_rows(theta.theta()).concat();
            let want: Vec<f64> = oracle.concat();
            let diff: f64 = got.iter().zip(&want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = want.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(diff / norm < 1e-8, "{w}x{h}: relative error {}", diff / norm);
        }
    }
}

#[test]
fn grid_matches_pointwise_evaluation() {
    let mut r = rng(12);
    let (w, h) = (64, 80);
    let t = targets(w, h);
    for _ in 0..5 {
        let s = jitter(&t, 10.0, &mut r);
        let theta = solve_theta(&cps(s), &cps(t.clone())).unwrap();
        let rows = theta_rows(theta.theta());
        let grid = transform_grid(&theta, (w, h));
        for y in 0..h {
            for x in 0..w {
                let want = eval_spline(&rows, &t, [x as f64, y as f64]);
                let got = grid.at(x, y);
                assert!((got[0] - want[0]).abs() < 1e-6 && (got[1] - want[1]).abs() < 1e-6);
                let e = theta.eval([x as f64, y as f64]);
                assert!((e[0] - want[0]).abs() < 1e-6 && (e[1] - want[1]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn affine_sources_have_no_bending() {
    let mut r = rng(13);
    let t = targets(128, 128);
    for _ in 0..20 {
        let a: [f64; 6] = std::array::from_fn(|i| {
            let v: f64 = rand::Rng::random(&mut r);
            if i == 0 || i == 4 { 0.8 + 0.4 * v } else if i == 2 || i == 5 { 20.0 * v - 10.0 } else { 0.4 * v - 0.2 }
        });
        let map = |p: [f64; 2]| [a[0] * p[0] + a[1] * p[1] + a[2], a[3] * p[0] + a[4] * p[1] + a[5]];
        let s: Vec<_> = t.iter().map(|&p| map(p)).collect();
        let theta = solve_theta(&cps(s), &cps(t.clone())).unwrap();
        assert!(theta.warp_weights().amax() < 1e-8);
        let grid = transform_grid(&theta, (128, 128));
        for y in 0..128 {
            for x in 0..128 {
                let want = map([x as f64, y as f64]);
                let got = grid.at(x, y);
                assert!((got[0] - want[0]).abs() < 1e-6 && (got[1] - want[1]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut r = rng(14);
    let (w, h) = (40, 32);
    let t = targets(w, h);
    let jac = grid_jacobian_wrt_sources(&cps(t.clone()), (w, h)).unwrap();
    for _ in 0..10 {
        let s = jitter(&t, 6.0, &mut r);
        for k in 0..16 {
            for c in 0..2 {
                let step = 1e-3;
                let grid_at = |d: f64| {
                    let mut p = s.clone();
                    p[k][c] += d;
                    transform_grid(&solve_theta(&cps(p), &cps(t.clone())).unwrap(), (w, h))
                };
                let (gp, gm) = (grid_at(step), grid_at(-step));
                let fd: Vec<f64> = gp
                    .coords()
                    .iter()
                    .zip(gm.coords())
                    .map(|(a, b)| (a[c] - b[c]) / (2.0 * step))
                    .collect();
                let cross = gp
                    .coords()
                    .iter()
                    .zip(gm.coords())
                    .fold(0.0f64, |m, (a, b)| m.max((a[1 - c] - b[1 - c]).abs()));
                let analytic: Vec<f64> = (0..w * h).map(|i| jac.entry(i, k)).collect();
                assert!(rel_err(&analytic, &fd, 1e-12) < 1e-4);
                assert!(cross < 1e-9);
            }
        }
    }
}

#[test]
fn grid_is_linear_in_sources() {
    let mut r = rng(15);
    let (w, h) = (48, 48);
    let t = targets(w, h);
    let a = jitter(&t, 5.0, &mut r);
    let b = jitter(&t, 5.0, &mut r);
    let mix: Vec<_> = a.iter().zip(&b).map(|(p, q)| [0.3 * p[0] + 0.7 * q[0], 0.3 * p[1] + 0.7 * q[1]]).collect();
    let g = |s: &Vec<[f64; 2]>| transform_grid(&solve_theta(&cps(s.clone()), &cps(t.clone())).unwrap(), (w, h));
    let (ga, gb, gm) = (g(&a), g(&b), g(&mix));
    for i in 0..w * h {
        for c in 0..2 {
            let want = 0.3 * ga.coords()[i][c] + 0.7 * gb.coords()[i][c];
            assert!((gm.coords()[i][c] - want).abs() < 1e-8);
        }
    }
}

#[test]
fn collinear_targets_are_rejected() {
    let line: Vec<_> = (0..16).map(|i| [i as f64, 2.0 * i as f64]).collect();
    assert!(build_padded_l(&cps(line)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spline_interpolates_sources(offsets in prop::collection::vec((-15.0f64..15.0, -15.0f64..15.0), 16)) {
        let t = targets(100, 70);
        let s: Vec<_> = t.iter().zip(&offsets).map(|(p, o)| [p[0] + o.0, p[1] + o.1]).collect();
        let theta = solve_theta(&ControlPointSet::new(s.clone()).unwrap(), &cps(t.clone())).unwrap();
        for (p, q) in t.iter().zip(&s) {
            let v = theta.eval(*p);
            prop_assert!((v[0] - q[0]).abs() < 1e-8 && (v[1] - q[1]).abs() < 1e-8);
        }
    }
}
