//! Slice export for visual inspection: PGM grayscale, PPM with label tint.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::volume::{LabelMap3, Volume3, LABEL_REAL, LABEL_SYNTHETIC};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(Error::Config(format!("unknown axis '{other}'"))),
        }
    }
}

fn slice_dims(dims: [usize; 3], axis: Axis) -> (usize, usize) {
    match axis {
        Axis::X => (dims[1], dims[2]),
        Axis::Y => (dims[0], dims[2]),
        Axis::Z => (dims[0], dims[1]),
    }
}

fn voxel_for(axis: Axis, index: usize, u: usize, v: usize) -> (usize, usize, usize) {
    match axis {
        Axis::X => (index, u, v),
        Axis::Y => (u, index, v),
        Axis::Z => (u, v, index),
    }
}

fn base_path(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") | Some("ppm") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

/// Write `<path>.pgm` (min-max windowed grayscale) and, when labels are
/// given, `<path>.ppm` with label 1 tinted red and label 2 tinted blue.
pub fn export_slices(
    v: &Volume3,
    labels: Option<&LabelMap3>,
    axis: Axis,
    index: usize,
    path: &Path,
) -> Result<()> {
    let dims = v.dims();
    let axis_len = match axis {
        Axis::X => dims[0],
        Axis::Y => dims[1],
        Axis::Z => dims[2],
    };
    if index >= axis_len {
        return Err(Error::OutOfBounds(format!(
            "slice index {index} on an axis of {axis_len} voxels"
        )));
    }
    if let Some(m) = labels {
        if m.dims() != dims {
            return Err(Error::DimensionMismatch(format!(
                "label dims {:?} != volume dims {:?}",
                m.dims(),
                dims
            )));
        }
    }

    let (w, h) = slice_dims(dims, axis);
    let (lo, hi) = v.value_range();
    let window = |val: f32| -> u8 {
        if hi > lo {
            (((val - lo) / (hi - lo)) * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            128
        }
    };

    let mut gray = vec![0u8; w * h];
    for row in 0..h {
        for col in 0..w {
            let (x, y, z) = voxel_for(axis, index, col, row);
            gray[col + w * row] = window(v.get(x, y, z));
        }
    }

    let base = base_path(path);
    let pgm_path = base.with_extension("pgm");
    let mut pgm = Vec::with_capacity(gray.len() + 32);
    write!(pgm, "P5\n{w} {h}\n255\n")?;
    pgm.extend_from_slice(&gray);
    std::fs::write(&pgm_path, pgm)?;

    if let Some(m) = labels {
        let ppm_path = base.with_extension("ppm");
        let mut ppm = Vec::with_capacity(gray.len() * 3 + 32);
        write!(ppm, "P6\n{w} {h}\n255\n")?;
        for row in 0..h {
            for col in 0..w {
                let g = gray[col + w * row];
                let (x, y, z) = voxel_for(axis, index, col, row);
                let rgb = match m.get(x, y, z) {
                    LABEL_REAL => [255, g / 2, g / 2],
                    LABEL_SYNTHETIC => [g / 2, g / 2, 255],
                    _ => [g, g, g],
                };
                ppm.extend_from_slice(&rgb);
            }
        }
        std::fs::write(&ppm_path, ppm)?;
    }
    Ok(())
}
