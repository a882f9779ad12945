//! PNG input and output for images and label maps.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{DynamicImage, ImageBuffer as RawImage};
use tps_undistort::{ImageBuffer, LabelMap, NUM_CLASSES};

/// Fixed RGB palette for label PNGs, one entry per class id. The colours
/// carry no meaning beyond telling classes apart.
pub const LABEL_PALETTE: [[u8; 3]; NUM_CLASSES] = [
    [0, 0, 0],
    [70, 70, 70],
    [190, 153, 153],
    [250, 170, 160],
    [220, 20, 60],
    [153, 153, 153],
    [157, 234, 50],
    [128, 64, 128],
    [244, 35, 232],
    [107, 142, 35],
    [0, 0, 142],
    [102, 102, 156],
    [220, 220, 0],
];

/// Reads an 8- or 16-bit PNG as a `[0, 1]` image, keeping its channel count.
pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    let img = image::open(path).with_context(|| format!("reading image {}", path.display()))?;
    let (channels, bytes, w, h) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.as_raw().clone(), b.width(), b.height()),
        DynamicImage::ImageLumaA8(b) => (2, b.as_raw().clone(), b.width(), b.height()),
        DynamicImage::ImageRgb8(b) => (3, b.as_raw().clone(), b.width(), b.height()),
        DynamicImage::ImageRgba8(b) => (4, b.as_raw().clone(), b.width(), b.height()),
        other if other.color().has_alpha() => {
            let raw = other.to_rgba8();
            (4, raw.as_raw().clone(), raw.width(), raw.height())
        }
        other => {
            let raw = other.to_rgb8();
            (3, raw.as_raw().clone(), raw.width(), raw.height())
        }
    };
    let data = bytes.into_iter().map(|b| b as f64 / 255.0).collect();
    Ok(ImageBuffer::new(w as usize, h as usize, channels, data)?)
}

/// Writes an image as 8-bit PNG, rounding to the nearest level.
pub fn write_image(path: &Path, img: &ImageBuffer) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(RawImage::from_raw(w, h, bytes).expect("sized")),
        2 => DynamicImage::ImageLumaA8(RawImage::from_raw(w, h, bytes).expect("sized")),
        3 => DynamicImage::ImageRgb8(RawImage::from_raw(w, h, bytes).expect("sized")),
        4 => DynamicImage::ImageRgba8(RawImage::from_raw(w, h, bytes).expect("sized")),
        c => bail!("cannot write a {c}-channel image as PNG"),
    };
    dynamic
        .save_with_format(path, image::ImageFormat::Png)
        .with_context(|| format!("writing image {}", path.display()))
}

/// Reads a label PNG: 8-bit indexed (palette index = class id) or 8-bit
/// grayscale (value = class id).
pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let file = File::open(path).with_context(|| format!("opening labels {}", path.display()))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .with_context(|| format!("decoding labels {}", path.display()))?;
    let mut buf = vec![0; reader.output_buffer_size().context("label image too large")?];
    let info = reader.next_frame(&mut buf)?;
    match (info.color_type, info.bit_depth) {
        (png::ColorType::Indexed | png::ColorType::Grayscale, png::BitDepth::Eight) => {}
        (c, d) => bail!(
            "{}: labels must be 8-bit indexed or grayscale PNG, found {c:?} {d:?}",
            path.display()
        ),
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut data = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        data.extend_from_slice(&row[..w]);
    }
    LabelMap::new(w, h, data).with_context(|| format!("labels {}", path.display()))
}

/// Writes labels as an 8-bit indexed PNG with [`LABEL_PALETTE`].
pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        labels.width() as u32,
        labels.height() as u32,
    );
    encoder.set_color(png::ColorType::Indexed);
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_palette(LABEL_PALETTE.concat());
    let mut writer = encoder.write_header()?;
    writer.write_image_data(labels.data())?;
    writer.finish()?;
    Ok(())
}
