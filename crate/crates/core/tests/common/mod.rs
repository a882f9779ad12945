//! Reference implementations written independently of the library, used as
//! oracles by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tps_undistort::{ControlPointSet, ImageBuffer, Point};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `r^2 ln r` from a squared distance.
pub fn u(d2: f64) -> f64 {
    if d2 == 0.0 {
        0.0
    } else {
        0.5 * d2 * d2.ln()
    }
}

/// 4x4 regular targets spanning `[0, W-1] x [0, H-1]`, row-major.
pub fn targets(w: usize, h: usize) -> Vec<Point> {
    let mut out = Vec::new();
    for j in 0..4 {
        for i in 0..4 {
            out.push([i as f64 * (w - 1) as f64 / 3.0, j as f64 * (h - 1) as f64 / 3.0]);
        }
    }
    out
}

pub fn jitter(base: &[Point], sigma: f64, rng: &mut impl Rng) -> Vec<Point> {
    base.iter()
        .map(|p| {
            [
                p[0] + sigma * (2.0 * rng.random::<f64>() - 1.0),
                p[1] + sigma * (2.0 * rng.random::<f64>() - 1.0),
            ]
        })
        .collect()
}

pub fn cps(points: Vec<Point>) -> ControlPointSet {
    ControlPointSet::new(points).unwrap()
}

/// The `(n+3) x (n+3)` system matrix built entry by entry.
pub fn dense_l(targets: &[Point]) -> Vec<Vec<f64>> {
    let n = targets.len();
    let mut l = vec![vec![0.0; n + 3]; n + 3];
    for i in 0..n {
        for j in 0..n {
            let dx = targets[i][0] - targets[j][0];
            let dy = targets[i][1] - targets[j][1];
            l[i][j] = u(dx * dx + dy * dy);
        }
        l[i][n] = 1.0;
        l[n][i] = 1.0;
        l[i][n + 1] = targets[i][0];
        l[n + 1][i] = targets[i][0];
        l[i][n + 2] = targets[i][1];
        l[n + 2][i] = targets[i][1];
    }
    l
}

/// Gaussian elimination with row/column scaling, partial pivoting and
/// two rounds of iterative refinement. Solves `A X = B` column by column.
pub fn gauss_solve(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let d: Vec<f64> = a
        .iter()
        .map(|row| 1.0 / row.iter().fold(0.0f64, |m, v| m.max(v.abs())).sqrt())
        .collect();
    let scaled: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| d[i] * a[i][j] * d[j]).collect())
        .collect();

    let solve_scaled = |rhs: &[f64]| -> Vec<f64> {
        let mut m = scaled.clone();
        let mut r = rhs.to_vec();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
                .unwrap();
            m.swap(col, piv);
            r.swap(col, piv);
            for row in col + 1..n {
                let f = m[row][col] / m[col][col];
                if f != 0.0 {
                    let pivot_row = m[col].clone();
                    for (dst, src) in m[row][col..].iter_mut().zip(&pivot_row[col..]) {
                        *dst -= f * src;
                    }
                    r[row] -= f * r[col];
                }
            }
        }
        let mut x = vec![0.0; n];
        for row in (0..n).rev() {
            let s: f64 = (row + 1..n).map(|k| m[row][k] * x[k]).sum();
            x[row] = (r[row] - s) / m[row][row];
        }
        x
    };

    let cols = b[0].len();
    let mut out = vec![vec![0.0; cols]; n];
    for c in 0..cols {
        let rhs: Vec<f64> = (0..n).map(|i| d[i] * b[i][c]).collect();
        let mut y = solve_scaled(&rhs);
        for _ in 0..2 {
            let resid: Vec<f64> = (0..n)
                .map(|i| rhs[i] - (0..n).map(|j| scaled[i][j] * y[j]).sum::<f64>())
                .collect();
            let dy = solve_scaled(&resid);
            for (yi, di) in y.iter_mut().zip(dy) {
                *yi += di;
            }
        }
        for i in 0..n {
            out[i][c] = d[i] * y[i];
        }
    }
    out
}

/// Spline coefficients `[w_1..w_n; a_1; a_x; a_y]` mapping targets to sources.
pub fn theta_oracle(sources: &[Point], targets: &[Point]) -> Vec<Vec<f64>> {
    let n = targets.len();
    let mut rhs = vec![vec![0.0; 2]; n + 3];
    for (i, s) in sources.iter().enumerate() {
        rhs[i] = vec![s[0], s[1]];
    }
    gauss_solve(&dense_l(targets), &rhs)
}

/// The spline evaluated directly at `g`.
pub fn eval_spline(theta: &[Vec<f64>], targets: &[Point], g: Point) -> Point {
    let n = targets.len();
    let mut out = [0.0; 2];
    for c in 0..2 {
        let mut v = theta[n][c] + theta[n + 1][c] * g[0] + theta[n + 2][c] * g[1];
        for (k, t) in targets.iter().enumerate() {
            let dx = g[0] - t[0];
            let dy = g[1] - t[1];
            v += theta[k][c] * u(dx * dx + dy * dy);
        }
        out[c] = v;
    }
    out
}

/// Smooth, in-range multi-channel test image.
pub fn smooth_image(w: usize, h: usize, channels: usize, rng: &mut impl Rng) -> ImageBuffer {
    let params: Vec<[f64; 5]> = (0..channels * 3)
        .map(|_| {
            [
                rng.random::<f64>() * 0.3 + 0.05,
                rng.random::<f64>() * 0.3 + 0.05,
                rng.random::<f64>() * std::f64::consts::TAU,
                rng.random::<f64>() * 0.12 + 0.03,
                rng.random::<f64>(),
            ]
        })
        .collect();
    ImageBuffer::from_fn(w, h, channels, |x, y, c| {
        let mut v = 0.5;
        for p in &params[c * 3..c * 3 + 3] {
            let s = if p[4] < 0.5 { 1.0 } else { -1.0 };
            v += p[3] * (p[0] * x as f64 + s * p[1] * y as f64 + p[2]).sin();
        }
        v.clamp(0.0, 1.0)
    })
    .unwrap()
}

/// `max |a - b| / max(max |b|, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let num = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let den = b.iter().fold(floor, |m, y| m.max(y.abs()));
    num / den
}

pub fn central_diff(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}
