//! Grid sampling with border clamping.
//!
//! Coordinates outside `[0, W-1] x [0, H-1]` are clamped onto the border
//! before interpolation (replicate padding). The gradient of a clamped
//! coordinate component is zero.

use crate::error::{mismatch, Error, Result};
use crate::grid::SamplingGrid;
use crate::image::{ImageBuffer, LabelMap};
use crate::tps::Point;

/// Bilinear cell lookup for one coordinate axis: `(i0, i1, frac, inside)`.
///
/// `inside` is false when the coordinate was clamped, which zeroes its
/// derivative.
#[inline]
fn axis(v: f64, size: usize) -> (usize, usize, f64, bool) {
    let max = (size - 1) as f64;
    let inside = (0.0..=max).contains(&v);
    let c = v.clamp(0.0, max);
    if size == 1 {
        return (0, 0, 0.0, inside);
    }
    let i0 = (c.floor() as usize).min(size - 2);
    (i0, i0 + 1, c - i0 as f64, inside)
}

/// Samples `image` at every grid coordinate by bilinear interpolation.
pub fn bilinear_sample(image: &ImageBuffer, grid: &SamplingGrid) -> ImageBuffer {
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    let src = image.data();
    let mut out = Vec::with_capacity(grid.len() * ch);
    for p in grid.coords() {
        let (x0, x1, fx, _) = axis(p[0], w);
        let (y0, y1, fy, _) = axis(p[1], h);
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w10 = fx * (1.0 - fy);
        let w01 = (1.0 - fx) * fy;
        let w11 = fx * fy;
        let (i00, i10) = ((y0 * w + x0) * ch, (y0 * w + x1) * ch);
        let (i01, i11) = ((y1 * w + x0) * ch, (y1 * w + x1) * ch);
        for c in 0..ch {
            let v = w00 * src[i00 + c] + w10 * src[i10 + c] + w01 * src[i01 + c] + w11 * src[i11 + c];
            // Convex weights keep v in range up to rounding.
            out.push(v.clamp(0.0, 1.0));
        }
    }
    ImageBuffer::from_raw(grid.width(), grid.height(), ch, out)
}

/// Gradient of a loss with respect to each grid coordinate, given the
/// loss gradient `upstream` with respect to the sampled image.
pub fn bilinear_sample_backward(
    image: &ImageBuffer,
    grid: &SamplingGrid,
    upstream: &[f64],
) -> Result<Vec<Point>> {
    let (w, h, ch) = (image.width(), image.height(), image.channels());
    if upstream.len() != grid.len() * ch {
        return Err(mismatch(grid.len() * ch, upstream.len()));
    }
    let src = image.data();
    let mut out = Vec::with_capacity(grid.len());
    for (p, up) in grid.coords().iter().zip(upstream.chunks_exact(ch)) {
        let (x0, x1, fx, in_x) = axis(p[0], w);
        let (y0, y1, fy, in_y) = axis(p[1], h);
        let (i00, i10) = ((y0 * w + x0) * ch, (y0 * w + x1) * ch);
        let (i01, i11) = ((y1 * w + x0) * ch, (y1 * w + x1) * ch);
        let mut gx = 0.0;
        let mut gy = 0.0;
        for (c, u) in up.iter().enumerate() {
            if *u == 0.0 {
                continue;
            }
            let (v00, v10, v01, v11) = (src[i00 + c], src[i10 + c], src[i01 + c], src[i11 + c]);
            gx += u * ((1.0 - fy) * (v10 - v00) + fy * (v11 - v01));
            gy += u * ((1.0 - fx) * (v01 - v00) + fx * (v11 - v10));
        }
        out.push([
            if in_x && w > 1 { gx } else { 0.0 },
            if in_y && h > 1 { gy } else { 0.0 },
        ]);
    }
    Ok(out)
}

/// Nearest-neighbour label lookup, rounding half up and clamping to the border.
pub fn nearest_sample(labels: &LabelMap, grid: &SamplingGrid) -> LabelMap {
    let (w, h) = labels.dims();
    let data = grid
        .coords()
        .iter()
        .map(|p| {
            let x = (p[0] + 0.5).floor().clamp(0.0, (w - 1) as f64) as usize;
            let y = (p[1] + 0.5).floor().clamp(0.0, (h - 1) as f64) as usize;
            labels.get(x, y)
        })
        .collect();
    LabelMap::new(grid.width(), grid.height(), data).expect("labels drawn from a valid map")
}

/// One-hot encoding of a label map as a `num_classes`-channel image.
pub fn one_hot(labels: &LabelMap, num_classes: usize) -> Result<ImageBuffer> {
    let max = labels.max_label();
    if max as usize >= num_classes {
        return Err(Error::InvalidLabel(max as u32));
    }
    let mut data = vec![0.0; labels.data().len() * num_classes];
    for (i, &l) in labels.data().iter().enumerate() {
        data[i * num_classes + l as usize] = 1.0;
    }
    Ok(ImageBuffer::from_raw(labels.width(), labels.height(), num_classes, data))
}

/// Differentiable label warp: one-hot encode, then sample each channel bilinearly.
pub fn onehot_sample(labels: &LabelMap, grid: &SamplingGrid, num_classes: usize) -> Result<ImageBuffer> {
    Ok(bilinear_sample(&one_hot(labels, num_classes)?, grid))
}
