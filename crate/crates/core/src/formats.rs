//! On-disk formats for control points and sampling grids.
//!
//! Control-point file (text): a header line `n W H`, then `n` lines `x y`
//! in row-major grid order, pixel units.
//!
//! Grid file (binary): magic `TPSG`, little-endian `u32` width and height,
//! then `H * W` pairs of little-endian `f32` `(x, y)` in row-major order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::SamplingGrid;
use crate::tps::ControlPointSet;

pub const GRID_MAGIC: &[u8; 4] = b"TPSG";

fn cp_err(reason: impl Into<String>) -> Error {
    Error::Format {
        kind: "control-point",
        reason: reason.into(),
    }
}

fn grid_err(reason: impl Into<String>) -> Error {
    Error::Format {
        kind: "grid",
        reason: reason.into(),
    }
}

pub fn write_control_points<W: Write>(
    mut out: W,
    points: &ControlPointSet,
    dims: (usize, usize),
) -> Result<()> {
    writeln!(out, "{} {} {}", points.len(), dims.0, dims.1)?;
    for p in points.points() {
        writeln!(out, "{} {}", p[0], p[1])?;
    }
    Ok(())
}

/// Returns the points and the `(W, H)` image size they were written for.
pub fn read_control_points<R: BufRead>(input: R) -> Result<(ControlPointSet, (usize, usize))> {
    let mut lines = input.lines().filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()));
    let header = lines.next().ok_or_else(|| cp_err("empty file"))??;
    let fields: Vec<usize> = header
        .split_whitespace()
        .map(|f| f.parse().map_err(|_| cp_err(format!("bad header field {f:?}"))))
        .collect::<Result<_>>()?;
    let [n, w, h] = fields[..] else {
        return Err(cp_err(format!("header must be `n W H`, got {header:?}")));
    };
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| cp_err(format!("expected {n} points, found {i}")))??;
        let xy: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse().map_err(|_| cp_err(format!("bad coordinate {f:?}"))))
            .collect::<Result<_>>()?;
        let [x, y] = xy[..] else {
            return Err(cp_err(format!("point line must be `x y`, got {line:?}")));
        };
        points.push([x, y]);
    }
    if let Some(extra) = lines.next() {
        return Err(cp_err(format!("trailing content {:?}", extra?)));
    }
    Ok((ControlPointSet::new(points)?, (w, h)))
}

pub fn save_control_points(
    path: impl AsRef<Path>,
    points: &ControlPointSet,
    dims: (usize, usize),
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_control_points(&mut out, points, dims)?;
    out.flush()?;
    Ok(())
}

pub fn load_control_points(path: impl AsRef<Path>) -> Result<(ControlPointSet, (usize, usize))> {
    read_control_points(BufReader::new(File::open(path)?))
}

pub fn write_grid<W: Write>(mut out: W, grid: &SamplingGrid) -> Result<()> {
    let dim = |v: usize| u32::try_from(v).map_err(|_| grid_err(format!("dimension {v} exceeds u32")));
    out.write_all(GRID_MAGIC)?;
    out.write_all(&dim(grid.width())?.to_le_bytes())?;
    out.write_all(&dim(grid.height())?.to_le_bytes())?;
    for p in grid.coords() {
        out.write_all(&(p[0] as f32).to_le_bytes())?;
        out.write_all(&(p[1] as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_grid<R: Read>(mut input: R) -> Result<SamplingGrid> {
    let mut head = [0u8; 12];
    input
        .read_exact(&mut head)
        .map_err(|_| grid_err("truncated header"))?;
    if &head[..4] != GRID_MAGIC {
        return Err(grid_err("missing TPSG magic"));
    }
    let w = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() != w * h * 8 {
        return Err(grid_err(format!(
            "expected {} payload bytes for {w}x{h}, found {}",
            w * h * 8,
            body.len()
        )));
    }
    let coords = body
        .chunks_exact(8)
        .map(|c| {
            [
                f32::from_le_bytes(c[..4].try_into().unwrap()) as f64,
                f32::from_le_bytes(c[4..].try_into().unwrap()) as f64,
            ]
        })
        .collect();
    SamplingGrid::new(w, h, coords)
}

pub fn save_grid(path: impl AsRef<Path>, grid: &SamplingGrid) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_grid(&mut out, grid)?;
    out.flush()?;
    Ok(())
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<SamplingGrid> {
    read_grid(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_bytes_layout() {
        let g = SamplingGrid::new(2, 1, vec![[1.5, -2.0], [0.0, 3.25]]).unwrap();
        let mut buf = Vec::new();
        write_grid(&mut buf, &g).unwrap();
        let mut expected = b"TPSG".to_vec();
        expected.extend(2u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        for v in [1.5f32, -2.0, 0.0, 3.25] {
            expected.extend(v.to_le_bytes());
        }
        assert_eq!(buf, expected);
        assert_eq!(read_grid(&buf[..]).unwrap(), g);
    }

    #[test]
    fn grid_rejects_garbage() {
        assert!(read_grid(&b"TPS"[..]).is_err());
        assert!(read_grid(&b"XXXX\x01\0\0\0\x01\0\0\0\0\0\0\0\0\0\0\0"[..]).is_err());
        assert!(read_grid(&b"TPSG\x01\0\0\0\x01\0\0\0\0\0\0\0"[..]).is_err());
    }

    #[test]
    fn control_point_text() {
        let cps = ControlPointSet::make_target_grid(256, 128);
        let mut buf = Vec::new();
        write_control_points(&mut buf, &cps, (256, 128)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("16 256 128\n0 0\n85 0\n"));
        let (back, dims) = read_control_points(&buf[..]).unwrap();
        assert_eq!(back, cps);
        assert_eq!(dims, (256, 128));
    }

    #[test]
    fn control_point_errors() {
        assert!(read_control_points(&b""[..]).is_err());
        assert!(read_control_points(&b"4 10 10\n0 0\n1 0\n"[..]).is_err());
        assert!(read_control_points(&b"4 10\n"[..]).is_err());
        assert!(read_control_points(&b"4 10 10\n0 0\n1 0\n0 1\n1 x\n"[..]).is_err());
        assert!(read_control_points(&b"4 10 10\n0 0\n1 0\n0 1\n1 1\n5 5\n"[..]).is_err());
        assert!(read_control_points(&b"4 10 10\n0 0\n1 0\n0 1\n1 1\n"[..]).is_ok());
    }
}
