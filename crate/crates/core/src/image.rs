use crate::error::{mismatch, Error, Result};

/// Number of semantic classes.
pub const NUM_CLASSES: usize = 13;

/// Class names indexed by class id.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "None",
    "Buildings",
    "Fences",
    "Other",
    "Pedestrians",
    "Poles",
    "Road lines",
    "Roads",
    "Sidewalks",
    "Vegetation",
    "Vehicles",
    "Walls",
    "Traffic signs",
];

/// Interleaved `H x W x C` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::Domain(format!(
                "image must be non-empty, got {width}x{height}x{channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(mismatch(width * height * channels, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub(crate) fn from_raw(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    /// A `W x H x C` image generated by `f(x, y, c)`.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// One channel as a contiguous `H x W` plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn max_abs_diff(&self, other: &ImageBuffer) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn check_same_shape(&self, other: &ImageBuffer) -> Result<()> {
        if (self.width, self.height, self.channels) != (other.width, other.height, other.channels) {
            return Err(mismatch(
                format!("{}x{}x{}", self.width, self.height, self.channels),
                format!("{}x{}x{}", other.width, other.height, other.channels),
            ));
        }
        Ok(())
    }
}

/// `H x W` map of semantic class ids in `0..NUM_CLASSES`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Domain(format!(
                "label map must be non-empty, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(mismatch(width * height, data.len()));
        }
        if let Some(&v) = data.iter().find(|&&v| v as usize >= NUM_CLASSES) {
            return Err(Error::InvalidLabel(v as u32));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> u8,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
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

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn max_label(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range() {
        assert!(ImageBuffer::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ImageBuffer::new(1, 1, 1, vec![f64::NAN]).is_err());
        assert!(ImageBuffer::new(2, 1, 1, vec![0.5]).is_err());
        assert!(matches!(LabelMap::new(1, 1, vec![13]), Err(Error::InvalidLabel(13))));
        assert!(LabelMap::new(1, 1, vec![12]).is_ok());
    }

    #[test]
    fn plane_extraction() {
        let img = ImageBuffer::from_fn(2, 2, 3, |x, y, c| ((x + 2 * y) * 4 + c) as f64 / 16.0).unwrap();
        assert_eq!(img.plane(1), vec![1.0 / 16.0, 5.0 / 16.0, 9.0 / 16.0, 13.0 / 16.0]);
        assert_eq!(img.get(1, 1, 2), 14.0 / 16.0);
    }
}
