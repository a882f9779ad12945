use crate::error::{mismatch, Result};
use crate::tps::Point;

/// Per-pixel sampling coordinates, row-major, in pixel units of the image
/// being sampled. Coordinates may fall outside the image; the sampler clamps.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingGrid {
    width: usize,
    height: usize,
    coords: Vec<Point>,
}

impl SamplingGrid {
    pub fn new(width: usize, height: usize, coords: Vec<Point>) -> Result<Self> {
        if coords.len() != width * height {
            return Err(mismatch(width * height, coords.len()));
        }
        Ok(Self {
            width,
            height,
            coords,
        })
    }

    /// The reference grid G: every pixel maps to its own centre.
    pub fn identity(width: usize, height: usize) -> Self {
        let coords = (0..height)
            .flat_map(|y| (0..width).map(move |x| [x as f64, y as f64]))
            .collect();
        Self {
            width,
            height,
            coords,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn coords_mut(&mut self) -> &mut [Point] {
        &mut self.coords
    }

    pub fn into_coords(self) -> Vec<Point> {
        self.coords
    }

    pub fn at(&self, x: usize, y: usize) -> Point {
        self.coords[y * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.coords
            .iter()
            .all(|p| p[0].is_finite() && p[1].is_finite())
    }

    /// Largest per-pixel Euclidean distance to `other`.
    pub fn max_deviation(&self, other: &SamplingGrid) -> Result<f64> {
        self.check_same_dims(other)?;
        Ok(self
            .coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1]))
            .fold(0.0, f64::max))
    }

    pub(crate) fn check_same_dims(&self, other: &SamplingGrid) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(mismatch(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }
}
