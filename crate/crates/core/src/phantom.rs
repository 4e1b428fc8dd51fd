//! Analytic straight-tube flow phantom with a pulsatile parabolic profile.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::volume::{Axis, Dims, FluidMask, MagnitudeVolume, VelocityVolume};

pub const DEFAULT_M_VESSEL: f64 = 100.0;
pub const DEFAULT_M_BACKGROUND: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub nt: usize,
    /// mm
    pub spacing: f64,
    /// ms
    pub dt: f64,
    /// mm
    pub tube_radius: f64,
    pub tube_axis: Axis,
    /// Offset of the centerline from the volume center in the two transverse
    /// axes (in axis order, skipping the tube axis), mm.
    pub centerline_offset: [f64; 2],
    /// Peak centerline velocity, m/s.
    pub v_peak: f64,
    pub waveform: Vec<f64>,
    pub m_vessel: f64,
    pub m_background: f64,
}

impl PhantomSpec {
    /// Straight tube along `z` through the volume center with the default
    /// waveform and magnitudes.
    pub fn new(dims: Dims, nt: usize, tube_radius: f64, v_peak: f64) -> Self {
        PhantomSpec {
            dims,
            nt,
            spacing: 1.0,
            dt: 10.0,
            tube_radius,
            tube_axis: Axis::Z,
            centerline_offset: [0.0, 0.0],
            v_peak,
            waveform: default_waveform(nt),
            m_vessel: DEFAULT_M_VESSEL,
            m_background: DEFAULT_M_BACKGROUND,
        }
    }

    fn transverse_axes(&self) -> [usize; 2] {
        match self.tube_axis {
            Axis::X => [1, 2],
            Axis::Y => [0, 2],
            Axis::Z => [0, 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.nt == 0 {
            return Err(Error::DimensionTooSmall(format!("phantom {} x {}", self.dims, self.nt)));
        }
        if !(self.spacing > 0.0) || !(self.dt > 0.0) {
            return Err(Error::InvalidArgument("spacing and dt must be positive".into()));
        }
        if !(self.v_peak > 0.0) || !self.v_peak.is_finite() {
            return Err(Error::InvalidArgument(format!("v_peak must be positive, got {}", self.v_peak)));
        }
        if !(self.tube_radius > 0.0) {
            return Err(Error::InvalidArgument("tube_radius must be positive".into()));
        }
        if self.waveform.len() != self.nt {
            return Err(Error::InvalidArgument(format!(
                "waveform has {} entries, nt is {}",
                self.waveform.len(),
                self.nt
            )));
        }
        if self.waveform.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidArgument("waveform entries must lie in [0, 1]".into()));
        }
        if !self.waveform.contains(&1.0) {
            return Err(Error::InvalidArgument("waveform must reach 1 at peak systole".into()));
        }
        if self.m_vessel < 0.0 || self.m_background < 0.0 {
            return Err(Error::InvalidArgument("magnitudes must be non-negative".into()));
        }
        let extent = self.dims.as_array();
        for (k, &ax) in self.transverse_axes().iter().enumerate() {
            let len = extent[ax] as f64 * self.spacing;
            let center = len / 2.0 + self.centerline_offset[k];
            if center - self.tube_radius < 0.0 || center + self.tube_radius > len {
                return Err(Error::OutOfBounds(format!(
                    "tube of radius {} mm centered at {center} mm does not fit an extent of {len} mm",
                    self.tube_radius
                )));
            }
        }
        Ok(())
    }

    /// Distance of a voxel center from the centerline, mm.
    fn radial_distance(&self, x: usize, y: usize, z: usize) -> f64 {
        let idx = [x, y, z];
        let extent = self.dims.as_array();
        let mut r2 = 0.0;
        for (k, &ax) in self.transverse_axes().iter().enumerate() {
            let pos = (idx[ax] as f64 + 0.5) * self.spacing;
            let center = extent[ax] as f64 * self.spacing / 2.0 + self.centerline_offset[k];
            r2 += (pos - center) * (pos - center);
        }
        r2.sqrt()
    }
}

/// Smooth systolic pulse normalized so its maximum is exactly 1.
pub fn default_waveform(nt: usize) -> Vec<f64> {
    if nt == 0 {
        return Vec::new();
    }
    let raw: Vec<f64> = (0..nt)
        .map(|t| {
            let phase = 2.0 * PI * t as f64 / nt as f64;
            0.25 + 0.75 * (0.5 - 0.5 * phase.cos())
        })
        .collect();
    let max = raw.iter().cloned().fold(f64::MIN, f64::max);
    raw.iter().map(|w| w / max).collect()
}

/// Poiseuille flow in a straight tube, scaled per timestep by the waveform.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(VelocityVolume, MagnitudeVolume, FluidMask)> {
    spec.validate()?;
    let d = spec.dims;
    let radius = spec.tube_radius;
    let mut profile = vec![0.0; d.len()];
    let mut mask = vec![false; d.len()];
    for z in 0..d.nz {
        for y in 0..d.ny {
            for x in 0..d.nx {
                let i = d.index(x, y, z);
                let r = spec.radial_distance(x, y, z);
                if r < radius {
                    mask[i] = true;
                    let q = r / radius;
                    profile[i] = 1.0 - q * q;
                }
            }
        }
    }
    let axis = spec.tube_axis.index();
    let mut data = vec![0.0; d.len() * spec.nt * 3];
    for (t, &w) in spec.waveform.iter().enumerate() {
        let scale = w * spec.v_peak;
        let frame = &mut data[t * d.len() * 3..(t + 1) * d.len() * 3];
        for (i, p) in profile.iter().enumerate() {
            frame[3 * i + axis] = scale * p;
        }
    }
    let magnitude = mask
        .iter()
        .map(|&f| if f { spec.m_vessel } else { spec.m_background })
        .collect();
    Ok((
        VelocityVolume::from_vec(d, spec.nt, spec.spacing, spec.dt, data)?,
        MagnitudeVolume::from_vec(d, magnitude)?,
        FluidMask::from_vec(d, mask)?,
    ))
}

/// Index of the first timestep where the waveform attains its maximum.
pub fn peak_systole_index(spec: &PhantomSpec) -> usize {
    first_argmax(&spec.waveform)
}

pub fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Band-limited field for exercising the acquisition pipeline: uniform
/// magnitude, every voxel fluid, and a velocity built from the lowest
/// spatial harmonics scaled by the waveform. `amplitude` is the peak of each
/// component's harmonic sum.
pub fn make_smooth_field(
    dims: Dims,
    waveform: &[f64],
    amplitude: f64,
    magnitude: f64,
) -> Result<(VelocityVolume, MagnitudeVolume, FluidMask)> {
    let nt = waveform.len();
    let mut v = VelocityVolume::zeros(dims, nt, 1.0, 10.0)?;
    let n = dims.as_array();
    for (t, &w) in waveform.iter().enumerate() {
        for i in 0..dims.len() {
            let (x, y, z) = dims.coords(i);
            let ax = 2.0 * PI * x as f64 / n[0] as f64;
            let ay = 2.0 * PI * y as f64 / n[1] as f64;
            let az = 2.0 * PI * z as f64 / n[2] as f64;
            let a = amplitude * w / 2.0;
            v.set(
                t,
                i,
                [
                    a * (ay.cos() + az.sin()),
                    a * (ax.sin() + az.cos()),
                    a * (ax.cos() + ay.sin()),
                ],
            );
        }
    }
    Ok((
        v,
        MagnitudeVolume::filled(dims, magnitude)?,
        FluidMask::filled(dims, true),
    ))
}
