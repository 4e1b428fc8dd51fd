//! Axial slice export as binary portable graymaps.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::VelocityVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SliceQuantity {
    Speed,
    /// Per-voxel error magnitude against a reference volume.
    Error,
}

/// Values of a `z` slice at timestep `t`, row-major in `(y, x)`.
pub fn slice_values(
    v: &VelocityVolume,
    reference: Option<&VelocityVolume>,
    t: usize,
    z: usize,
    quantity: SliceQuantity,
) -> Result<(usize, usize, Vec<f64>)> {
    let d = v.dims();
    if t >= v.nt() || z >= d.nz {
        return Err(Error::OutOfBounds(format!("slice t={t} z={z} outside {}x{}", d, v.nt())));
    }
    if let Some(r) = reference {
        if r.dims() != d || r.nt() != v.nt() {
            return Err(Error::ShapeMismatch("reference volume shape differs".into()));
        }
    }
    let mut out = Vec::with_capacity(d.nx * d.ny);
    for y in 0..d.ny {
        for x in 0..d.nx {
            let i = d.index(x, y, z);
            let a = v.get(t, i);
            let val = match (quantity, reference) {
                (SliceQuantity::Speed, _) => (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt(),
                (SliceQuantity::Error, Some(r)) => {
                    let b = r.get(t, i);
                    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
                }
                (SliceQuantity::Error, None) => {
                    return Err(Error::InvalidArgument("error slice needs a reference volume".into()))
                }
            };
            out.push(val);
        }
    }
    Ok((d.nx, d.ny, out))
}

/// Linear map of `[lo, hi]` onto 0..=255, clamped. Equal bounds give zeros.
pub fn to_gray(values: &[f64], lo: f64, hi: f64) -> Vec<u8> {
    values
        .iter()
        .map(|&v| {
            if hi <= lo {
                0
            } else {
                (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8
            }
        })
        .collect()
}

pub fn pgm_bytes(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::ShapeMismatch(format!("{} pixels for {width}x{height}", pixels.len())));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&pgm_bytes(width, height, pixels)).map_err(|e| Error::io(path, e))
}
