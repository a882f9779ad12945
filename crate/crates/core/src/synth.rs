//! Synthetic TPS distortions.
//!
//! Sources are the target grid plus i.i.d. zero-mean Gaussian offsets. The
//! affine part is left alone: all displacement enters through the control
//! points. Distortions are applied by sampling the clean image at the
//! pre-image of every pixel, so that the spline grid solved from the sources
//! is exactly the grid that undistorts the result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::grid::SamplingGrid;
use crate::image::{ImageBuffer, LabelMap, NUM_CLASSES};
use crate::sampler::{bilinear_sample, nearest_sample};
use crate::tps::{solve_theta, transform_grid, ControlPointSet, GridJacobian, TpsSystem};

/// Parameters of one random distortion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionSpec {
    /// Per-axis standard deviation of each control-point offset, px.
    pub sigma_cp: f64,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Offsets longer than this are shortened to it, px.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_displacement: Option<f64>,
}

impl DistortionSpec {
    pub fn new(sigma_cp: f64, seed: u64, width: usize, height: usize) -> Self {
        Self {
            sigma_cp,
            seed,
            width,
            height,
            max_displacement: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_cp >= 0.0) || !self.sigma_cp.is_finite() {
            return Err(Error::Domain(format!("sigma_cp must be finite and >= 0, got {}", self.sigma_cp)));
        }
        if let Some(m) = self.max_displacement {
            if !(m >= 0.0) {
                return Err(Error::Domain(format!("max_displacement must be >= 0, got {m}")));
            }
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::Domain(format!(
                "image must be at least 2x2, got {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Unit-variance offsets for the 16 control points, deterministic per seed.
fn unit_offsets(seed: u64, n: usize) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect()
}

/// Random source control points for `spec`.
pub fn sample_distortion(spec: &DistortionSpec) -> Result<ControlPointSet> {
    spec.validate()?;
    let targets = ControlPointSet::make_target_grid(spec.width, spec.height);
    let offsets = unit_offsets(spec.seed, targets.len());
    let points = targets
        .points()
        .iter()
        .zip(offsets)
        .map(|(t, z)| {
            let mut d = [spec.sigma_cp * z[0], spec.sigma_cp * z[1]];
            if let Some(max) = spec.max_displacement {
                let len = d[0].hypot(d[1]);
                if len > max {
                    d = [d[0] * max / len, d[1] * max / len];
                }
            }
            [t[0] + d[0], t[1] + d[1]]
        })
        .collect();
    ControlPointSet::new(points)
}

/// Mean per-pixel displacement norm `|tau(G_i) - G_i|` of the grid defined by `sources`.
pub fn mean_displacement(jacobian: &GridJacobian, sources: &ControlPointSet) -> Result<f64> {
    let grid = jacobian.apply(sources)?;
    let (w, _) = grid.dims();
    let total: f64 = grid
        .coords()
        .iter()
        .enumerate()
        .map(|(i, p)| (p[0] - (i % w) as f64).hypot(p[1] - (i / w) as f64))
        .sum();
    Ok(total / grid.len() as f64)
}

const CALIBRATION_STEPS: usize = 60;
const CALIBRATION_RTOL: f64 = 1e-4;

/// Finds the control-point sigma whose Monte-Carlo mean displacement over
/// `trials` draws (seeds `seed..seed + trials`) hits `target_mean_px`.
///
/// Bisection on the monotone sigma -> mean map. Clamping is not applied
/// during calibration.
pub fn calibrate_sigma(target_mean_px: f64, dims: (usize, usize), trials: usize, seed: u64) -> Result<f64> {
    if !target_mean_px.is_finite() || target_mean_px < 0.0 {
        return Err(Error::Domain(format!("target mean must be finite and >= 0, got {target_mean_px}")));
    }
    if target_mean_px == 0.0 {
        return Ok(0.0);
    }
    if trials == 0 {
        return Err(Error::Domain("calibration needs at least one trial".into()));
    }
    let (width, height) = dims;
    let system = TpsSystem::new(ControlPointSet::make_target_grid(width, height))?;
    let jac = system.grid_jacobian(dims)?;
    let mean_for = |sigma: f64| -> Result<f64> {
        let mut total = 0.0;
        for t in 0..trials as u64 {
            let spec = DistortionSpec::new(sigma, seed.wrapping_add(t), width, height);
            total += mean_displacement(&jac, &sample_distortion(&spec)?)?;
        }
        Ok(total / trials as f64)
    };

    let mut lo = 0.0;
    let mut hi = target_mean_px;
    let mut steps = 0;
    while mean_for(hi)? < target_mean_px {
        lo = hi;
        hi *= 2.0;
        steps += 1;
        if steps >= CALIBRATION_STEPS {
            return Err(Error::NonConvergence(steps));
        }
    }
    while steps < CALIBRATION_STEPS {
        let mid = 0.5 * (lo + hi);
        let m = mean_for(mid)?;
        if ((m - target_mean_px) / target_mean_px).abs() < CALIBRATION_RTOL {
            return Ok(mid);
        }
        if m < target_mean_px {
            lo = mid;
        } else {
            hi = mid;
        }
        steps += 1;
    }
    Err(Error::NonConvergence(steps))
}

/// A distorted image with optional labels and the grid that undoes the distortion.
#[derive(Clone, Debug)]
pub struct Distorted {
    pub image: ImageBuffer,
    pub labels: Option<LabelMap>,
    /// Ground-truth sampling grid: sampling `image` here recovers the input.
    pub grid: SamplingGrid,
}

/// Warps `image` (bilinear) and `labels` (nearest) by the spline whose
/// sources are `sources` on the default target grid.
pub fn apply_distortion(
    image: &ImageBuffer,
    labels: Option<&LabelMap>,
    sources: &ControlPointSet,
) -> Result<Distorted> {
    let dims = image.dims();
    if let Some(l) = labels {
        if l.dims() != dims {
            return Err(mismatch(
                format!("{}x{}", dims.0, dims.1),
                format!("{}x{}", l.width(), l.height()),
            ));
        }
    }
    let targets = ControlPointSet::make_target_grid(dims.0, dims.1);
    let theta = solve_theta(sources, &targets)?;
    let grid = transform_grid(&theta, dims);
    let preimage = theta.inverse_grid(dims)?;
    Ok(Distorted {
        image: bilinear_sample(image, &preimage),
        labels: labels.map(|l| nearest_sample(l, &preimage)),
        grid,
    })
}

/// A procedural RGB scene with semantic labels: random polygonal class
/// regions, each filled with its own multi-scale sinusoidal texture.
pub fn procedural_scene(width: usize, height: usize, seed: u64) -> Result<(ImageBuffer, LabelMap)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let regions = 14;
    let centres: Vec<([f64; 2], u8)> = (0..regions)
        .map(|i| {
            let c = [rng.random::<f64>() * width as f64, rng.random::<f64>() * height as f64];
            (c, (i % NUM_CLASSES) as u8)
        })
        .collect();

    struct Wave {
        kx: f64,
        ky: f64,
        phase: f64,
        amp: f64,
    }
    // Per class and channel: a base level and a handful of waves.
    let textures: Vec<Vec<(f64, Vec<Wave>)>> = (0..NUM_CLASSES)
        .map(|_| {
            (0..3)
                .map(|_| {
                    let base = 0.3 + 0.4 * rng.random::<f64>();
                    let waves = (0..4)
                        .map(|k| {
                            let wavelength = [7.0, 13.0, 29.0, 61.0][k] * (0.8 + 0.4 * rng.random::<f64>());
                            let angle = rng.random::<f64>() * std::f64::consts::TAU;
                            let f = std::f64::consts::TAU / wavelength;
                            Wave {
                                kx: f * angle.cos(),
                                ky: f * angle.sin(),
                                phase: rng.random::<f64>() * std::f64::consts::TAU,
                                amp: 0.06 + 0.03 * rng.random::<f64>(),
                            }
                        })
                        .collect();
                    (base, waves)
                })
                .collect()
        })
        .collect();

    let label_at = |x: usize, y: usize| -> u8 {
        let p = [x as f64, y as f64];
        centres
            .iter()
            .min_by(|a, b| {
                let da = (a.0[0] - p[0]).powi(2) + (a.0[1] - p[1]).powi(2);
                let db = (b.0[0] - p[0]).powi(2) + (b.0[1] - p[1]).powi(2);
                da.total_cmp(&db)
            })
            .map(|c| c.1)
            .unwrap_or(0)
    };
    let labels = LabelMap::from_fn(width, height, label_at)?;
    let image = ImageBuffer::from_fn(width, height, 3, |x, y, c| {
        let (base, waves) = &textures[labels.get(x, y) as usize][c];
        let v = waves.iter().fold(*base, |acc, w| {
            acc + w.amp * (w.kx * x as f64 + w.ky * y as f64 + w.phase).sin()
        });
        v.clamp(0.0, 1.0)
    })?;
    Ok((image, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_is_identity() {
        let spec = DistortionSpec::new(0.0, 7, 64, 48);
        assert_eq!(sample_distortion(&spec).unwrap(), ControlPointSet::make_target_grid(64, 48));
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = DistortionSpec::new(3.0, 11, 64, 48);
        assert_eq!(sample_distortion(&spec).unwrap(), sample_distortion(&spec).unwrap());
        let other = DistortionSpec { seed: 12, ..spec.clone() };
        assert_ne!(sample_distortion(&spec).unwrap(), sample_distortion(&other).unwrap());
    }

    #[test]
    fn clamp_limits_offsets() {
        let spec = DistortionSpec {
            max_displacement: Some(1.0),
            ..DistortionSpec::new(10.0, 3, 64, 64)
        };
        let s = sample_distortion(&spec).unwrap();
        let t = ControlPointSet::make_target_grid(64, 64);
        assert!(s.max_distance(&t).unwrap() <= 1.0 + 1e-12);
    }

    #[test]
    fn invalid_specs() {
        assert!(sample_distortion(&DistortionSpec::new(-1.0, 0, 64, 64)).is_err());
        assert!(sample_distortion(&DistortionSpec::new(1.0, 0, 1, 64)).is_err());
        assert!(calibrate_sigma(-1.0, (64, 64), 10, 0).is_err());
        assert_eq!(calibrate_sigma(0.0, (64, 64), 10, 0).unwrap(), 0.0);
    }

    #[test]
    fn identity_distortion_keeps_image() {
        let (img, labels) = procedural_scene(40, 30, 1).unwrap();
        let t = ControlPointSet::make_target_grid(40, 30);
        let d = apply_distortion(&img, Some(&labels), &t).unwrap();
        assert!(d.image.max_abs_diff(&img).unwrap() < 1e-7);
        assert_eq!(d.labels.unwrap(), labels);
        assert!(d.grid.max_deviation(&SamplingGrid::identity(40, 30)).unwrap() < 1e-6);
    }

    #[test]
    fn scene_is_label_rich() {
        let (img, labels) = procedural_scene(64, 64, 5).unwrap();
        let mut seen = [false; NUM_CLASSES];
        for &l in labels.data() {
            seen[l as usize] = true;
        }
        assert!(seen.iter().filter(|s| **s).count() >= 8);
        assert_eq!(img.channels(), 3);
    }
}
