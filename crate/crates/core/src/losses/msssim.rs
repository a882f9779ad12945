//! Multi-scale structural similarity with an analytic gradient.
//!
//! Each scale filters the two images with a normalised Gaussian window
//! ("valid" placement, no padding) to get local means, variances and the
//! covariance. Every scale contributes the mean contrast-structure term
//! `cs = (2 s_ab + C2) / (s_a^2 + s_b^2 + C2)`; the coarsest scale uses the full
//! SSIM map `l * cs` with `l = (2 mu_a mu_b + C1) / (mu_a^2 + mu_b^2 + C1)`.
//! The index is `prod_s v_s^{w_s}`. Scales are built by 2x2 mean pooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// Standard per-scale exponents, finest scale first.
pub const DEFAULT_SCALE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Per-scale terms are floored here before exponentiation; anticorrelated
/// patches would otherwise raise a negative mean to a fractional power.
const MIN_TERM: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsSsimConfig {
    /// Exponent per scale, finest first. Must sum to one.
    pub weights: Vec<f64>,
    /// Gaussian window side length (odd).
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for MsSsimConfig {
    fn default() -> Self {
        let total: f64 = DEFAULT_SCALE_WEIGHTS.iter().sum();
        Self {
            weights: DEFAULT_SCALE_WEIGHTS.iter().map(|w| w / total).collect(),
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl MsSsimConfig {
    pub fn scales(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::Domain("MS-SSIM needs at least one scale".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Domain(format!(
                "MS-SSIM weights must be nonnegative and sum to 1, got sum {sum}"
            )));
        }
        if self.window.is_multiple_of(2) {
            return Err(Error::Domain(format!("window side must be odd, got {}", self.window)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Domain(format!("window sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// Weights actually used for a `width x height` image: scales whose
    /// pooled size would drop below the window are removed and the
    /// remaining weights renormalised.
    pub fn effective_weights(&self, width: usize, height: usize) -> Result<Vec<f64>> {
        self.validate()?;
        if width < self.window || height < self.window {
            return Err(Error::Domain(format!(
                "image {width}x{height} smaller than the {0}x{0} window",
                self.window
            )));
        }
        let mut count = 0;
        let (mut w, mut h) = (width, height);
        while count < self.scales() && w >= self.window && h >= self.window {
            count += 1;
            w /= 2;
            h /= 2;
        }
        let kept = &self.weights[..count];
        let total: f64 = kept.iter().sum();
        if total <= 0.0 {
            return Err(Error::Domain("all retained MS-SSIM weights are zero".into()));
        }
        Ok(kept.iter().map(|w| w / total).collect())
    }

    fn kernel(&self) -> Vec<f64> {
        let c = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

/// A single-channel plane.
#[derive(Clone, Debug)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn pooled(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut v = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * self.w + 2 * x;
                v.push(0.25 * (self.v[i] + self.v[i + 1] + self.v[i + self.w] + self.v[i + self.w + 1]));
            }
        }
        Plane { w, h, v }
    }

    /// Adjoint of [`Plane::pooled`] onto a `w x h` plane.
    fn unpool_into(&self, target: &mut Plane) {
        for y in 0..self.h {
            for x in 0..self.w {
                let g = 0.25 * self.v[y * self.w + x];
                let i = 2 * y * target.w + 2 * x;
                target.v[i] += g;
                target.v[i + 1] += g;
                target.v[i + target.w] += g;
                target.v[i + target.w + 1] += g;
            }
        }
    }

    fn mul(&self, other: &Plane) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&other.v).map(|(a, b)| a * b).collect(),
        }
    }
}

/// Separable correlation with `k`, valid placement only.
fn filter_valid(src: &Plane, k: &[f64]) -> Plane {
    let n = k.len();
    let ow = src.w + 1 - n;
    let oh = src.h + 1 - n;
    let mut tmp = vec![0.0; ow * src.h];
    for y in 0..src.h {
        let row = &src.v[y * src.w..(y + 1) * src.w];
        let out = &mut tmp[y * ow..(y + 1) * ow];
        for (x, o) in out.iter_mut().enumerate() {
            *o = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut v = vec![0.0; ow * oh];
    for (j, kj) in k.iter().enumerate() {
        for y in 0..oh {
            let src_row = &tmp[(y + j) * ow..(y + j + 1) * ow];
            let dst = &mut v[y * ow..(y + 1) * ow];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += kj * s;
            }
        }
    }
    Plane { w: ow, h: oh, v }
}

/// Adjoint of [`filter_valid`]: spreads a valid-sized map back onto `w x h`.
fn filter_valid_adjoint(g: &Plane, k: &[f64], w: usize, h: usize) -> Plane {
    let n = k.len();
    let mut tmp = vec![0.0; g.w * h];
    for (j, kj) in k.iter().enumerate() {
        for y in 0..g.h {
            let src_row = &g.v[y * g.w..(y + 1) * g.w];
            let dst = &mut tmp[(y + j) * g.w..(y + j + 1) * g.w];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += kj * s;
            }
        }
    }
    let mut v = vec![0.0; w * h];
    for y in 0..h {
        let row = &tmp[y * g.w..(y + 1) * g.w];
        let out = &mut v[y * w..(y + 1) * w];
        for (x, r) in row.iter().enumerate() {
            if *r == 0.0 {
                continue;
            }
            for (i, ki) in k.iter().enumerate() {
                out[x + i] += ki * r;
            }
        }
    }
    debug_assert_eq!(g.w + n - 1, w);
    Plane { w, h, v }
}

/// Precomputed pyramid statistics of one (reference) image, reused across
/// many comparisons against it.
#[derive(Clone, Debug)]
pub struct MsSsimReference {
    width: usize,
    height: usize,
    channels: usize,
    weights: Vec<f64>,
    kernel: Vec<f64>,
    c1: f64,
    c2: f64,
    /// Per channel, per scale.
    scales: Vec<Vec<RefScale>>,
}

#[derive(Clone, Debug)]
struct RefScale {
    plane: Plane,
    mu: Plane,
    sq: Plane,
}

/// Value and (optionally) gradient with respect to the compared image.
#[derive(Clone, Debug)]
pub struct MsSsimEval {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
}

impl MsSsimReference {
    pub fn new(reference: &ImageBuffer, cfg: &MsSsimConfig) -> Result<Self> {
        let (width, height) = reference.dims();
        let weights = cfg.effective_weights(width, height)?;
        let kernel = cfg.kernel();
        let scales = (0..reference.channels())
            .map(|c| {
                let mut plane = Plane {
                    w: width,
                    h: height,
                    v: reference.plane(c),
                };
                let mut out = Vec::with_capacity(weights.len());
                for s in 0..weights.len() {
                    if s > 0 {
                        plane = plane.pooled();
                    }
                    let mu = filter_valid(&plane, &kernel);
                    let sq = filter_valid(&plane.mul(&plane), &kernel);
                    out.push(RefScale {
                        plane: plane.clone(),
                        mu,
                        sq,
                    });
                }
                out
            })
            .collect();
        Ok(Self {
            width,
            height,
            channels: reference.channels(),
            weights,
            kernel,
            c1: cfg.k1 * cfg.k1,
            c2: cfg.k2 * cfg.k2,
            scales,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// MS-SSIM between the reference and `other`, averaged over channels.
    pub fn compare(&self, other: &ImageBuffer, with_gradient: bool) -> Result<MsSsimEval> {
        if (other.width(), other.height(), other.channels()) != (self.width, self.height, self.channels) {
            return Err(crate::error::mismatch(
                format!("{}x{}x{}", self.width, self.height, self.channels),
                format!("{}x{}x{}", other.width(), other.height(), other.channels()),
            ));
        }
        let ch = self.channels;
        let mut value = 0.0;
        let mut gradient = with_gradient.then(|| vec![0.0; other.data().len()]);
        for c in 0..ch {
            let plane = Plane {
                w: self.width,
                h: self.height,
                v: other.plane(c),
            };
            let (s, g) = self.compare_plane(c, plane, with_gradient);
            value += s / ch as f64;
            if let (Some(grad), Some(g)) = (gradient.as_mut(), g) {
                for (dst, v) in grad.iter_mut().skip(c).step_by(ch).zip(g.v) {
                    *dst = v / ch as f64;
                }
            }
        }
        Ok(MsSsimEval { value, gradient })
    }

    fn compare_plane(&self, c: usize, mut b: Plane, with_gradient: bool) -> (f64, Option<Plane>) {
        let last = self.weights.len() - 1;
        let (c1, c2) = (self.c1, self.c2);
        let mut terms = Vec::with_capacity(self.weights.len());
        // Per scale: the b plane and the derivative maps w.r.t. mu_b, E[b^2], E[ab].
        let mut partials = Vec::new();
        for (s, rs) in self.scales[c].iter().enumerate() {
            if s > 0 {
                b = b.pooled();
            }
            let mu_b = filter_valid(&b, &self.kernel);
            let sq_b = filter_valid(&b.mul(&b), &self.kernel);
            let ab = filter_valid(&rs.plane.mul(&b), &self.kernel);
            let count = mu_b.v.len() as f64;
            let mut sum = 0.0;
            let mut d_mu = Vec::new();
            let mut d_sq = Vec::new();
            let mut d_ab = Vec::new();
            if with_gradient {
                d_mu.reserve(mu_b.v.len());
                d_sq.reserve(mu_b.v.len());
                d_ab.reserve(mu_b.v.len());
            }
            for i in 0..mu_b.v.len() {
                let (ma, mb) = (rs.mu.v[i], mu_b.v[i]);
                let var_a = rs.sq.v[i] - ma * ma;
                let var_b = sq_b.v[i] - mb * mb;
                let cov = ab.v[i] - ma * mb;
                let den = var_a + var_b + c2;
                let cs = (2.0 * cov + c2) / den;
                let dcs_mu = (2.0 * mb * cs - 2.0 * ma) / den;
                let dcs_sq = -cs / den;
                let dcs_ab = 2.0 / den;
                if s == last {
                    let lden = ma * ma + mb * mb + c1;
                    let l = (2.0 * ma * mb + c1) / lden;
                    sum += l * cs;
                    if with_gradient {
                        let dl_mu = (2.0 * ma - 2.0 * mb * l) / lden;
                        d_mu.push((dl_mu * cs + l * dcs_mu) / count);
                        d_sq.push(l * dcs_sq / count);
                        d_ab.push(l * dcs_ab / count);
                    }
                } else {
                    sum += cs;
                    if with_gradient {
                        d_mu.push(dcs_mu / count);
                        d_sq.push(dcs_sq / count);
                        d_ab.push(dcs_ab / count);
                    }
                }
            }
            terms.push(sum / count);
            if with_gradient {
                let shape = |v| Plane { w: mu_b.w, h: mu_b.h, v };
                partials.push((b.clone(), shape(d_mu), shape(d_sq), shape(d_ab)));
            }
        }

        let value: f64 = terms
            .iter()
            .zip(&self.weights)
            .map(|(t, w)| t.max(MIN_TERM).powf(*w))
            .product();
        if !with_gradient {
            return (value, None);
        }

        // Walk from the coarsest scale to the finest, unpooling as we go.
        let mut carry: Option<Plane> = None;
        for (s, (bs, d_mu, d_sq, d_ab)) in partials.into_iter().enumerate().rev() {
            let rs = &self.scales[c][s];
            let coeff = if terms[s] > MIN_TERM {
                value * self.weights[s] / terms[s]
            } else {
                0.0
            };
            let g_mu = filter_valid_adjoint(&d_mu, &self.kernel, bs.w, bs.h);
            let g_sq = filter_valid_adjoint(&d_sq, &self.kernel, bs.w, bs.h);
            let g_ab = filter_valid_adjoint(&d_ab, &self.kernel, bs.w, bs.h);
            let mut grad = Plane {
                w: bs.w,
                h: bs.h,
                v: (0..bs.v.len())
                    .map(|i| coeff * (g_mu.v[i] + 2.0 * bs.v[i] * g_sq.v[i] + rs.plane.v[i] * g_ab.v[i]))
                    .collect(),
            };
            if let Some(coarse) = carry.take() {
                coarse.unpool_into(&mut grad);
            }
            carry = Some(grad);
        }
        (value, carry)
    }
}

/// MS-SSIM index of two equally sized images.
pub fn ms_ssim(a: &ImageBuffer, b: &ImageBuffer, cfg: &MsSsimConfig) -> Result<f64> {
    a.check_same_shape(b)?;
    Ok(MsSsimReference::new(a, cfg)?.compare(b, false)?.value)
}
