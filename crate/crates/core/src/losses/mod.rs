//! Training losses and the residual distortion metric.

mod msssim;

pub use msssim::{ms_ssim, MsSsimConfig, MsSsimEval, MsSsimReference, DEFAULT_SCALE_WEIGHTS};

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::grid::SamplingGrid;
use crate::image::{ImageBuffer, LabelMap};
use crate::tps::Point;

/// Grid-loss weight.
pub const DEFAULT_LAMBDA_GRID: f64 = 100.0;
/// Semantic-loss weight.
pub const DEFAULT_LAMBDA_SEMANTIC: f64 = 0.25;
/// Probability floor inside the cross-entropy logarithm.
pub const CE_EPSILON: f64 = 1e-7;

/// `-(MS-SSIM(a, b) + 1) / 2` and its gradient with respect to `b`.
pub fn reconstruction_loss(
    a: &ImageBuffer,
    b: &ImageBuffer,
    cfg: &MsSsimConfig,
) -> Result<(f64, Vec<f64>)> {
    a.check_same_shape(b)?;
    reconstruction_loss_against(&MsSsimReference::new(a, cfg)?, b)
}

/// [`reconstruction_loss`] against a prepared reference.
pub fn reconstruction_loss_against(
    reference: &MsSsimReference,
    b: &ImageBuffer,
) -> Result<(f64, Vec<f64>)> {
    let eval = reference.compare(b, true)?;
    let grad = eval
        .gradient
        .expect("gradient requested")
        .into_iter()
        .map(|g| -0.5 * g)
        .collect();
    Ok((-(eval.value + 1.0) / 2.0, grad))
}

/// Mean squared coordinate error in px² and its gradient `2 (est - truth) / N`.
pub fn grid_loss(estimated: &SamplingGrid, truth: &SamplingGrid) -> Result<(f64, Vec<Point>)> {
    estimated.check_same_dims(truth)?;
    let n = estimated.len() as f64;
    let mut sum = 0.0;
    let grad = estimated
        .coords()
        .iter()
        .zip(truth.coords())
        .map(|(e, t)| {
            let d = [e[0] - t[0], e[1] - t[1]];
            sum += d[0] * d[0] + d[1] * d[1];
            [2.0 * d[0] / n, 2.0 * d[1] / n]
        })
        .collect();
    Ok((sum / n, grad))
}

/// Mean pixel-wise cross-entropy `-ln(max(p_true, eps))` and its gradient
/// with respect to the predicted probabilities.
pub fn semantic_ce_loss(probs: &ImageBuffer, truth: &LabelMap) -> Result<(f64, Vec<f64>)> {
    if probs.dims() != truth.dims() {
        return Err(mismatch(
            format!("{}x{}", truth.width(), truth.height()),
            format!("{}x{}", probs.width(), probs.height()),
        ));
    }
    let classes = probs.channels();
    let max = truth.max_label();
    if max as usize >= classes {
        return Err(Error::InvalidLabel(max as u32));
    }
    let n = truth.data().len() as f64;
    let mut sum = 0.0;
    let mut grad = vec![0.0; probs.data().len()];
    for (i, (px, &label)) in probs.data().chunks_exact(classes).zip(truth.data()).enumerate() {
        let total: f64 = px.iter().sum();
        if (total - 1.0).abs() > 1e-4 {
            return Err(Error::Domain(format!(
                "probabilities at pixel {i} sum to {total}"
            )));
        }
        let p = px[label as usize];
        if p > CE_EPSILON {
            sum -= p.ln();
            grad[i * classes + label as usize] = -1.0 / (p * n);
        } else {
            sum -= CE_EPSILON.ln();
        }
    }
    Ok((sum / n, grad))
}

/// Values of the individual loss terms; absent terms contribute nothing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub reconstruction: Option<f64>,
    pub grid: Option<f64>,
    pub semantic: Option<f64>,
}

impl LossComponents {
    pub fn joint(&self, lambda_grid: f64, lambda_semantic: f64) -> f64 {
        joint_loss(self.reconstruction, self.grid, self.semantic, lambda_grid, lambda_semantic)
    }
}

/// `L_r + lambda_grid * L_g + lambda_semantic * L_s`.
pub fn joint_loss(
    reconstruction: Option<f64>,
    grid: Option<f64>,
    semantic: Option<f64>,
    lambda_grid: f64,
    lambda_semantic: f64,
) -> f64 {
    reconstruction.unwrap_or(0.0)
        + lambda_grid * grid.unwrap_or(0.0)
        + lambda_semantic * semantic.unwrap_or(0.0)
}

/// Residual distortion statistics for one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResidual {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stem: Option<String>,
    pub pixels: usize,
    pub mean_px: f64,
    pub std_px: f64,
}

/// Pooled residual distortion norms over every pixel of every image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub images: usize,
    pub pixels: usize,
    pub mean_px: f64,
    pub std_px: f64,
    pub per_image: Vec<ImageResidual>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-pixel `|tau - tau_hat|` pooled over all image pairs; std is the
/// population standard deviation.
pub fn residual_stats(estimated: &[SamplingGrid], truth: &[SamplingGrid]) -> Result<ResidualReport> {
    if estimated.len() != truth.len() {
        return Err(mismatch(truth.len(), estimated.len()));
    }
    let mut pooled = Vec::new();
    let mut per_image = Vec::with_capacity(estimated.len());
    for (e, t) in estimated.iter().zip(truth) {
        e.check_same_dims(t)?;
        let norms: Vec<f64> = e
            .coords()
            .iter()
            .zip(t.coords())
            .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
            .collect();
        let (mean_px, std_px) = mean_std(&norms);
        per_image.push(ImageResidual {
            stem: None,
            pixels: norms.len(),
            mean_px,
            std_px,
        });
        pooled.extend(norms);
    }
    let (mean_px, std_px) = mean_std(&pooled);
    Ok(ResidualReport {
        images: estimated.len(),
        pixels: pooled.len(),
        mean_px,
        std_px,
        per_image,
    })
}

/// Displacement of a grid from the reference grid, as a residual report.
pub fn displacement_stats(grids: &[SamplingGrid]) -> Result<ResidualReport> {
    let identities: Vec<_> = grids
        .iter()
        .map(|g| SamplingGrid::identity(g.width(), g.height()))
        .collect();
    residual_stats(grids, &identities)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::NUM_CLASSES;

    fn offset_grid(w: usize, h: usize, dx: f64, dy: f64) -> SamplingGrid {
        let base = SamplingGrid::identity(w, h);
        SamplingGrid::new(w, h, base.coords().iter().map(|p| [p[0] + dx, p[1] + dy]).collect()).unwrap()
    }

    #[test]
    fn grid_loss_fixtures() {
        let g = SamplingGrid::identity(6, 4);
        assert_eq!(grid_loss(&g, &g).unwrap().0, 0.0);
        assert_eq!(grid_loss(&offset_grid(6, 4, 1.0, 0.0), &g).unwrap().0, 1.0);
        let (v, grad) = grid_loss(&offset_grid(6, 4, 3.0, 4.0), &g).unwrap();
        assert_eq!(v, 25.0);
        assert_eq!(grad[0], [6.0 / 24.0, 8.0 / 24.0]);
        assert!(grid_loss(&g, &SamplingGrid::identity(4, 6)).is_err());
    }

    #[test]
    fn cross_entropy_fixtures() {
        let labels = LabelMap::from_fn(4, 3, |x, y| ((x + y) % NUM_CLASSES) as u8).unwrap();
        let onehot = crate::sampler::one_hot(&labels, NUM_CLASSES).unwrap();
        assert!(semantic_ce_loss(&onehot, &labels).unwrap().0 < 1e-5);

        let uniform = ImageBuffer::constant(4, 3, NUM_CLASSES, 1.0 / NUM_CLASSES as f64).unwrap();
        let (v, _) = semantic_ce_loss(&uniform, &labels).unwrap();
        assert!((v - (13f64).ln()).abs() < 1e-12);
        assert!((v - 2.5649).abs() < 1e-4);

        let wrong = LabelMap::from_fn(4, 3, |x, y| ((x + y + 1) % NUM_CLASSES) as u8).unwrap();
        let (v, grad) = semantic_ce_loss(&onehot, &wrong).unwrap();
        assert!((v + CE_EPSILON.ln()).abs() < 1e-12);
        assert!((v - 16.118).abs() < 1e-3);
        assert!(grad.iter().all(|g| *g == 0.0));

        let bad = LabelMap::new(4, 3, vec![12; 12]).unwrap();
        let few = ImageBuffer::constant(4, 3, 5, 0.2).unwrap();
        assert!(matches!(semantic_ce_loss(&few, &bad), Err(Error::InvalidLabel(12))));
    }

    #[test]
    fn joint_fixtures() {
        let v = joint_loss(Some(-1.0), Some(0.01), Some(0.2), DEFAULT_LAMBDA_GRID, DEFAULT_LAMBDA_SEMANTIC);
        assert!((v - 0.05).abs() < 1e-12);
        assert_eq!(joint_loss(Some(-0.5), None, None, 100.0, 0.25), -0.5);
        assert_eq!(joint_loss(Some(0.0), Some(0.0), Some(0.0), 100.0, 0.25), 0.0);
    }

    #[test]
    fn residual_fixtures() {
        let g = SamplingGrid::identity(5, 5);
        let r = residual_stats(std::slice::from_ref(&g), std::slice::from_ref(&g)).unwrap();
        assert_eq!((r.mean_px, r.std_px), (0.0, 0.0));

        let r = residual_stats(&[offset_grid(5, 5, 3.0, 4.0)], std::slice::from_ref(&g)).unwrap();
        assert_eq!(r.mean_px, 5.0);
        assert!(r.std_px.abs() < 1e-12);

        let r = residual_stats(&[offset_grid(5, 5, 3.0, 4.0), g.clone()], &[g.clone(), g.clone()]).unwrap();
        assert!((r.mean_px - 2.5).abs() < 1e-12);
        assert!((r.std_px - 2.5).abs() < 1e-12);
        assert_eq!((r.images, r.pixels), (2, 50));

        assert!(residual_stats(std::slice::from_ref(&g), &[]).is_err());
        assert!(residual_stats(&[g], &[SamplingGrid::identity(4, 5)]).is_err());
    }

    #[test]
    fn reconstruction_identical_is_minus_one() {
        let a = ImageBuffer::from_fn(48, 48, 2, |x, y, c| ((x * 3 + y * 5 + c) % 17) as f64 / 16.0).unwrap();
        let (v, grad) = reconstruction_loss(&a, &a, &MsSsimConfig::default()).unwrap();
        assert!((v + 1.0).abs() < 1e-6);
        assert!(grad.iter().all(|g| g.abs() < 1e-6));
    }

    #[test]
    fn reconstruction_constant_pair() {
        let a = ImageBuffer::constant(256, 256, 1, 0.2).unwrap();
        let b = ImageBuffer::constant(256, 256, 1, 0.8).unwrap();
        let (v, _) = reconstruction_loss(&a, &b, &MsSsimConfig::default()).unwrap();
        assert!((v + 0.9522).abs() < 1e-4, "{v}");
    }
}
