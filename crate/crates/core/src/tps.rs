//! Thin-plate-spline mathematics.
//!
//! A spline pair maps a point `G` of the undistorted frame to a position in the
//! distorted image:
//!
//! ```text
//! f(G) = A [G; 1] + sum_k phi(|p'_k - G|) w_k,    phi(r) = r^2 ln r
//! ```
//!
//! The targets `p'_k` are fixed (a regular 4x4 grid by default) and the sources
//! `p_k` are where those targets land in the distorted image. The parameters
//! `theta = (W | A)^T` solve `L theta = [P^T; 0]`, with `L` the padded kernel
//! matrix built from the targets only. `theta` stores the `n` warping rows
//! first, then the constant row, then the x and y rows of the affine part.
//!
//! Because `L` depends only on the targets, the grid produced for a fixed
//! target set is a *linear* function of the sources: `tau(G) = M P` where `M`
//! is `N x n` and every row of `M` sums to one. [`GridJacobian`] stores `M`.

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::grid::SamplingGrid;

/// A 2D point `(x, y)` in pixel units, origin at the top-left pixel centre.
pub type Point = [f64; 2];

/// Configurations whose equilibrated condition estimate exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Side length of the default target grid.
pub const TARGET_GRID_SIDE: usize = 4;

/// Radial basis kernel `phi(r) = r^2 ln r`, continuously extended with `phi(0) = 0`.
pub fn rbf_phi(r: f64) -> Result<f64> {
    if !r.is_finite() || r < 0.0 {
        return Err(Error::Domain(format!("rbf_phi needs a finite r >= 0, got {r}")));
    }
    Ok(phi(r))
}

#[inline]
fn phi(r: f64) -> f64 {
    if r == 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

/// `phi` evaluated from a squared distance: `r^2 ln r = d2 ln(d2) / 2`.
#[inline]
pub(crate) fn phi_sq(d2: f64) -> f64 {
    if d2 == 0.0 {
        0.0
    } else {
        0.5 * d2 * d2.ln()
    }
}

#[inline]
fn dist_sq(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// An ordered set of 2D control points in pixel units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPointSet {
    points: Vec<Point>,
}

impl ControlPointSet {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::Domain(format!(
                "need at least 4 control points, got {}",
                points.len()
            )));
        }
        if let Some(p) = points.iter().find(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::Domain(format!("non-finite control point {p:?}")));
        }
        Ok(Self { points })
    }

    /// The fixed 4x4 target grid spanning the whole `width x height` image,
    /// including its borders, in row-major order.
    pub fn make_target_grid(width: usize, height: usize) -> Self {
        Self::regular_grid(width, height, TARGET_GRID_SIDE)
    }

    /// A `side x side` regular grid over `[0, W-1] x [0, H-1]`, row-major.
    ///
    /// # Panics
    /// If `side < 2`.
    pub fn regular_grid(width: usize, height: usize, side: usize) -> Self {
        assert!(side >= 2, "grid side must be at least 2");
        let span_x = width.saturating_sub(1) as f64;
        let span_y = height.saturating_sub(1) as f64;
        let step = (side - 1) as f64;
        let points = (0..side)
            .flat_map(|j| {
                (0..side).map(move |i| [i as f64 * span_x / step, j as f64 * span_y / step])
            })
            .collect();
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    /// Every point shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            points: self.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
        }
    }

    /// Largest Euclidean distance between corresponding points.
    pub fn max_distance(&self, other: &ControlPointSet) -> Result<f64> {
        if self.len() != other.len() {
            return Err(mismatch(self.len(), other.len()));
        }
        Ok(self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| dist_sq(*a, *b).sqrt())
            .fold(0.0, f64::max))
    }
}

/// The `n x n` kernel matrix `K[i][j] = phi(|p'_i - p'_j|)`.
pub fn build_kernel_k(targets: &ControlPointSet) -> DMatrix<f64> {
    let pts = targets.points();
    let n = pts.len();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            phi_sq(dist_sq(pts[i], pts[j]))
        }
    })
}

fn assemble_padded_l(targets: &ControlPointSet) -> DMatrix<f64> {
    let n = targets.len();
    let mut l = DMatrix::zeros(n + 3, n + 3);
    l.view_mut((0, 0), (n, n)).copy_from(&build_kernel_k(targets));
    for (i, p) in targets.points().iter().enumerate() {
        l[(i, n)] = 1.0;
        l[(n, i)] = 1.0;
        l[(i, n + 1)] = p[0];
        l[(i, n + 2)] = p[1];
        l[(n + 1, i)] = p[0];
        l[(n + 2, i)] = p[1];
    }
    l
}

/// The padded kernel matrix `[[K, 1, P'^T], [1^T, 0, 0], [P', 0, 0]]`.
///
/// Fails when the targets are degenerate (e.g. collinear).
pub fn build_padded_l(targets: &ControlPointSet) -> Result<DMatrix<f64>> {
    let l = assemble_padded_l(targets);
    let condition = condition_estimate(&l);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::DegenerateConfiguration { condition });
    }
    Ok(l)
}

/// Symmetric scaling `D` with `D_ii = 1 / sqrt(max_j |L_ij|)`.
fn equilibration(l: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(
        l.nrows(),
        l.row_iter().map(|row| {
            let m = row.amax();
            if m > 0.0 {
                1.0 / m.sqrt()
            } else {
                1.0
            }
        }),
    )
}

fn scale_symmetric(l: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(l.nrows(), l.ncols(), |i, j| d[i] * l[(i, j)] * d[j])
}

/// 2-norm condition number of the symmetrically equilibrated matrix.
///
/// Kernel entries grow like `r^2 ln r` while the padding block holds ones,
/// so the raw condition number mostly measures units rather than geometry.
pub fn condition_estimate(l: &DMatrix<f64>) -> f64 {
    let scaled = scale_symmetric(l, &equilibration(l));
    let sv = scaled.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// The factorised padded kernel matrix for one fixed target configuration.
///
/// Build once per target set; every [`TpsSystem::solve`] reuses the
/// factorisation.
#[derive(Clone, Debug)]
pub struct TpsSystem {
    targets: ControlPointSet,
    scale: DVector<f64>,
    lu: LU<f64, Dyn, Dyn>,
    condition: f64,
}

impl TpsSystem {
    pub fn new(targets: ControlPointSet) -> Result<Self> {
        let l = assemble_padded_l(&targets);
        let condition = condition_estimate(&l);
        if !(condition <= MAX_CONDITION) {
            return Err(Error::DegenerateConfiguration { condition });
        }
        let scale = equilibration(&l);
        let scaled = scale_symmetric(&l, &scale);
        Ok(Self {
            targets,
            scale,
            lu: scaled.lu(),
            condition,
        })
    }

    pub fn targets(&self) -> &ControlPointSet {
        &self.targets
    }

    pub fn n(&self) -> usize {
        self.targets.len()
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// Solves `L x = rhs` through the equilibrated factorisation.
    fn solve_padded(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut b = rhs.clone();
        for (i, mut row) in b.row_iter_mut().enumerate() {
            row *= self.scale[i];
        }
        let mut x = self
            .lu
            .solve(&b)
            .ok_or(Error::DegenerateConfiguration { condition: f64::INFINITY })?;
        for (i, mut row) in x.row_iter_mut().enumerate() {
            row *= self.scale[i];
        }
        Ok(x)
    }

    /// `theta = L^{-1} [P^T; 0]` for the given sources.
    pub fn solve(&self, sources: &ControlPointSet) -> Result<TpsTransform> {
        let n = self.n();
        if sources.len() != n {
            return Err(mismatch(n, sources.len()));
        }
        let mut rhs = DMatrix::zeros(n + 3, 2);
        for (i, p) in sources.points().iter().enumerate() {
            rhs[(i, 0)] = p[0];
            rhs[(i, 1)] = p[1];
        }
        let theta = self.solve_padded(&rhs)?;
        Ok(TpsTransform {
            theta,
            targets: self.targets.clone(),
        })
    }

    /// The linear map from sources to the sampling grid of a `W x H` image.
    pub fn grid_jacobian(&self, dims: (usize, usize)) -> Result<GridJacobian> {
        let n = self.n();
        let (width, height) = dims;
        // First n columns of L^{-1}.
        let mut unit = DMatrix::zeros(n + 3, n);
        for k in 0..n {
            unit[(k, k)] = 1.0;
        }
        let inv = self.solve_padded(&unit)?;
        let pts = self.targets.points();
        let mut weights = Vec::with_capacity(width * height * n);
        let mut row = vec![0.0; n + 3];
        for y in 0..height {
            for x in 0..width {
                let g = [x as f64, y as f64];
                for (r, p) in row.iter_mut().zip(pts) {
                    *r = phi_sq(dist_sq(g, *p));
                }
                row[n] = 1.0;
                row[n + 1] = g[0];
                row[n + 2] = g[1];
                for k in 0..n {
                    let mut acc = 0.0;
                    for (j, r) in row.iter().enumerate() {
                        acc += r * inv[(j, k)];
                    }
                    weights.push(acc);
                }
            }
        }
        Ok(GridJacobian {
            width,
            height,
            n,
            weights,
        })
    }
}

/// Solved spline parameters `theta = (W | A)^T`, shape `(n + 3) x 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct TpsTransform {
    theta: DMatrix<f64>,
    targets: ControlPointSet,
}

impl TpsTransform {
    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn targets(&self) -> &ControlPointSet {
        &self.targets
    }

    pub fn n(&self) -> usize {
        self.targets.len()
    }

    /// The `n x 2` non-affine block `W^T`.
    pub fn warp_weights(&self) -> DMatrix<f64> {
        self.theta.rows(0, self.n()).into_owned()
    }

    /// The `3 x 2` affine block: constant row, x row, y row.
    pub fn affine(&self) -> DMatrix<f64> {
        self.theta.rows(self.n(), 3).into_owned()
    }

    /// Pointwise evaluation of the spline pair at `g`.
    pub fn eval(&self, g: Point) -> Point {
        let n = self.n();
        let t = &self.theta;
        let mut out = [
            t[(n, 0)] + g[0] * t[(n + 1, 0)] + g[1] * t[(n + 2, 0)],
            t[(n, 1)] + g[0] * t[(n + 1, 1)] + g[1] * t[(n + 2, 1)],
        ];
        for (k, p) in self.targets.points().iter().enumerate() {
            let u = phi_sq(dist_sq(g, *p));
            out[0] += u * t[(k, 0)];
            out[1] += u * t[(k, 1)];
        }
        out
    }

    /// Spatial Jacobian `d f / d g` at `g`, as `[[dfx/dx, dfx/dy], [dfy/dx, dfy/dy]]`.
    pub fn eval_jacobian(&self, g: Point) -> [[f64; 2]; 2] {
        let n = self.n();
        let t = &self.theta;
        let mut j = [
            [t[(n + 1, 0)], t[(n + 2, 0)]],
            [t[(n + 1, 1)], t[(n + 2, 1)]],
        ];
        for (k, p) in self.targets.points().iter().enumerate() {
            let dx = g[0] - p[0];
            let dy = g[1] - p[1];
            let d2 = dx * dx + dy * dy;
            if d2 == 0.0 {
                continue;
            }
            // grad phi(|g - p|) = (g - p) (2 ln r + 1)
            let s = d2.ln() + 1.0;
            j[0][0] += s * dx * t[(k, 0)];
            j[0][1] += s * dy * t[(k, 0)];
            j[1][0] += s * dx * t[(k, 1)];
            j[1][1] += s * dy * t[(k, 1)];
        }
        j
    }

    /// Solves `f(x) = y` for every pixel centre `y` of a `W x H` image by
    /// Newton iteration, returning the grid of pre-images.
    ///
    /// Sampling an image at this grid applies the distortion whose
    /// undistorting sampling grid is `transform_grid(self)`.
    pub fn inverse_grid(&self, dims: (usize, usize)) -> Result<SamplingGrid> {
        const TOL: f64 = 1e-9;
        const MAX_ITERS: usize = 60;
        let (width, height) = dims;
        let mut coords = Vec::with_capacity(width * height);
        for yy in 0..height {
            for xx in 0..width {
                let target = [xx as f64, yy as f64];
                let f0 = self.eval(target);
                let mut x = [2.0 * target[0] - f0[0], 2.0 * target[1] - f0[1]];
                let mut converged = false;
                for _ in 0..MAX_ITERS {
                    let f = self.eval(x);
                    let r = [f[0] - target[0], f[1] - target[1]];
                    if r[0].hypot(r[1]) < TOL {
                        converged = true;
                        break;
                    }
                    let j = self.eval_jacobian(x);
                    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                    if det.abs() < 1e-12 || !det.is_finite() {
                        break;
                    }
                    x[0] -= (j[1][1] * r[0] - j[0][1] * r[1]) / det;
                    x[1] -= (j[0][0] * r[1] - j[1][0] * r[0]) / det;
                }
                if !converged {
                    return Err(Error::NonInvertible {
                        x: target[0],
                        y: target[1],
                    });
                }
                coords.push(x);
            }
        }
        SamplingGrid::new(width, height, coords)
    }
}

/// Solves the spline parameters mapping `targets` onto `sources`.
pub fn solve_theta(sources: &ControlPointSet, targets: &ControlPointSet) -> Result<TpsTransform> {
    if sources.len() != targets.len() {
        return Err(mismatch(targets.len(), sources.len()));
    }
    TpsSystem::new(targets.clone())?.solve(sources)
}

/// `K'[i][j] = phi(|G_i - p'_j|)` for the `W x H` pixel grid in row-major order.
pub fn build_kprime(dims: (usize, usize), targets: &ControlPointSet) -> DMatrix<f64> {
    let (width, height) = dims;
    let pts = targets.points();
    DMatrix::from_fn(width * height, pts.len(), |i, j| {
        let g = [(i % width) as f64, (i / width) as f64];
        phi_sq(dist_sq(g, pts[j]))
    })
}

/// The sampling grid `tau(G) = [K' 1 G^T] theta`.
pub fn transform_grid(theta: &TpsTransform, dims: (usize, usize)) -> SamplingGrid {
    let (width, height) = dims;
    let n = theta.n();
    let big_n = width * height;
    let mut design = DMatrix::zeros(big_n, n + 3);
    design
        .view_mut((0, 0), (big_n, n))
        .copy_from(&build_kprime(dims, theta.targets()));
    for i in 0..big_n {
        design[(i, n)] = 1.0;
        design[(i, n + 1)] = (i % width) as f64;
        design[(i, n + 2)] = (i / width) as f64;
    }
    let out = design * theta.theta();
    let coords = (0..big_n).map(|i| [out[(i, 0)], out[(i, 1)]]).collect();
    SamplingGrid::new(width, height, coords).expect("grid size matches by construction")
}

/// Derivative of every grid coordinate with respect to every source point.
pub fn grid_jacobian_wrt_sources(
    targets: &ControlPointSet,
    dims: (usize, usize),
) -> Result<GridJacobian> {
    TpsSystem::new(targets.clone())?.grid_jacobian(dims)
}

/// The `N x n` matrix `M` with `tau(G_i) = sum_k M[i][k] p_k`.
///
/// The x and y channels share `M`; cross-partials are zero.
#[derive(Clone, Debug)]
pub struct GridJacobian {
    width: usize,
    height: usize,
    n: usize,
    weights: Vec<f64>,
}

impl GridJacobian {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entry(&self, pixel: usize, k: usize) -> f64 {
        self.weights[pixel * self.n + k]
    }

    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.weights[pixel * self.n..(pixel + 1) * self.n]
    }

    /// `tau = M P`.
    pub fn apply(&self, sources: &ControlPointSet) -> Result<SamplingGrid> {
        if sources.len() != self.n {
            return Err(mismatch(self.n, sources.len()));
        }
        let pts = sources.points();
        let coords = self
            .weights
            .chunks_exact(self.n)
            .map(|row| {
                row.iter().zip(pts).fold([0.0, 0.0], |acc, (m, p)| {
                    [acc[0] + m * p[0], acc[1] + m * p[1]]
                })
            })
            .collect();
        SamplingGrid::new(self.width, self.height, coords)
    }

    /// `M^T g`: pulls a per-pixel coordinate gradient back onto the sources.
    pub fn backprop(&self, grad: &[Point]) -> Result<Vec<Point>> {
        if grad.len() != self.width * self.height {
            return Err(mismatch(self.width * self.height, grad.len()));
        }
        let mut out = vec![[0.0; 2]; self.n];
        for (row, g) in self.weights.chunks_exact(self.n).zip(grad) {
            for (o, m) in out.iter_mut().zip(row) {
                o[0] += m * g[0];
                o[1] += m * g[1];
            }
        }
        Ok(out)
    }
}
