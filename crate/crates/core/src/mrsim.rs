//! Synthetic low-resolution dual-venc acquisition from noise-free velocity
//! and magnitude volumes.
//!
//! Per timestep and velocity component: phase encoding at a low and a high
//! venc, complex image assembly, k-space cropping, complex Gaussian noise,
//! inverse transform, velocity decoding and dual-venc unwrapping.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::{crop_kspace, fft3, ifft3};
use crate::volume::{ComplexVolume, Dims, FluidMask, MagnitudeVolume, Space, VelocityVolume};

#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionConfig {
    /// m/s
    pub venc_low: f64,
    pub tsnr_high_range: (f64, f64),
    pub tsnr_low_range: (f64, f64),
    pub tsnr_highvenc: f64,
    pub magnitude_floor: f64,
    pub downsample_factor: usize,
    pub seed: u64,
    /// Skip noise entirely (infinite TSNR); strata are still drawn and logged.
    pub noise_free: bool,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            venc_low: 0.6,
            tsnr_high_range: (8.0, 12.0),
            tsnr_low_range: (2.0, 6.0),
            tsnr_highvenc: 15.0,
            magnitude_floor: 30.0,
            downsample_factor: 2,
            seed: 0,
            noise_free: false,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.venc_low > 0.0) {
            return Err(Error::InvalidArgument("venc_low must be positive".into()));
        }
        for (name, (lo, hi)) in [("tsnr_high", self.tsnr_high_range), ("tsnr_low", self.tsnr_low_range)] {
            if !(lo > 0.0 && lo <= hi) {
                return Err(Error::InvalidArgument(format!("{name} range [{lo}, {hi}] is empty")));
            }
        }
        if !(self.tsnr_highvenc > 0.0) {
            return Err(Error::InvalidArgument("tsnr_highvenc must be positive".into()));
        }
        if self.downsample_factor != 2 {
            return Err(Error::InvalidArgument("downsample_factor must be 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VencPair {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SnrStratum {
    High,
    Low,
}

impl SnrStratum {
    pub fn name(&self) -> &'static str {
        match self {
            SnrStratum::High => "high",
            SnrStratum::Low => "low",
        }
    }

    pub fn parse(s: &str) -> Option<SnrStratum> {
        match s {
            "high" => Some(SnrStratum::High),
            "low" => Some(SnrStratum::Low),
            _ => None,
        }
    }
}

/// TSNR assignment for one timestep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrEntry {
    pub timestep: usize,
    pub stratum: SnrStratum,
    pub tsnr: f64,
}

/// High venc is twice the low venc unless the frame's largest absolute
/// velocity component already exceeds that.
pub fn select_vencs(frame: &[f64], cfg: &AcquisitionConfig) -> VencPair {
    let vmax = frame.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let doubled = 2.0 * cfg.venc_low;
    VencPair {
        low: cfg.venc_low,
        high: if vmax >= doubled { vmax } else { doubled },
    }
}

/// Linear phase encoding `φ = π·v/venc`, no wrapping.
pub fn encode_phase(v: &[f64], venc: f64) -> Vec<f64> {
    v.iter().map(|x| x / venc * PI).collect()
}

/// `m·e^{iφ}` per voxel, with magnitudes under `floor` zeroed first.
pub fn assemble_complex(m: &MagnitudeVolume, phase: &[f64], floor: f64) -> Result<ComplexVolume> {
    if phase.len() != m.data().len() {
        return Err(Error::ShapeMismatch(format!(
            "phase has {} voxels, magnitude {}",
            phase.len(),
            m.data().len()
        )));
    }
    let data = m
        .data()
        .iter()
        .zip(phase)
        .map(|(&mag, &ph)| {
            let mag = if mag < floor { 0.0 } else { mag };
            Complex64::from_polar(mag, ph)
        })
        .collect();
    ComplexVolume::new(m.dims(), data, Space::Image)
}

/// Adds zero-mean complex Gaussian noise whose image-space per-channel
/// standard deviation is `signal_ref / tsnr`. `tsnr = ∞` returns the input.
pub fn add_kspace_noise(k: &ComplexVolume, tsnr: f64, signal_ref: f64, rng: &mut impl Rng) -> ComplexVolume {
    if tsnr.is_infinite() {
        return k.clone();
    }
    // the transform is unitary, so k-space and image-space std coincide
    let sigma = signal_ref / tsnr;
    let data = k
        .data
        .iter()
        .map(|c| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            c + Complex64::new(sigma * re, sigma * im)
        })
        .collect();
    ComplexVolume {
        dims: k.dims,
        data,
        space: k.space,
    }
}

/// Phase-difference velocity and magnitude; the angle is taken in `(−π, π]`.
pub fn decode_velocity(x: &ComplexVolume, venc: f64) -> (Vec<f64>, Vec<f64>) {
    x.data
        .iter()
        .map(|c| {
            let mut phi = c.im.atan2(c.re);
            if phi == -PI {
                phi = PI;
            }
            (phi * venc / PI, c.norm())
        })
        .unzip()
}

/// Which correction of the dual-venc rule fired for a voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnwrapBranch {
    None,
    Plus2,
    Minus2,
    Plus4,
    Minus4,
    Plus6,
    Minus6,
}

impl UnwrapBranch {
    pub const ALL: [UnwrapBranch; 7] = [
        UnwrapBranch::None,
        UnwrapBranch::Plus2,
        UnwrapBranch::Minus2,
        UnwrapBranch::Plus4,
        UnwrapBranch::Minus4,
        UnwrapBranch::Plus6,
        UnwrapBranch::Minus6,
    ];
}

/// Single-voxel dual-venc correction, returning the corrected velocity and the
/// branch taken. Thresholds are 1.2, 3, 5 and 7 times the low venc.
pub fn unwrap_voxel(v_lv: f64, v_hv: f64, venc_low: f64) -> (f64, UnwrapBranch) {
    let t1 = 1.2 * venc_low;
    let t2 = 3.0 * venc_low;
    let t3 = 5.0 * venc_low;
    let t4 = 7.0 * venc_low;
    let d = v_hv - v_lv;
    let (k, branch) = if t1 < d && d < t2 {
        (2.0, UnwrapBranch::Plus2)
    } else if -t2 < d && d < -t1 {
        (-2.0, UnwrapBranch::Minus2)
    } else if t2 <= d && d < t3 {
        (4.0, UnwrapBranch::Plus4)
    } else if -t3 < d && d <= -t2 {
        (-4.0, UnwrapBranch::Minus4)
    } else if t3 <= d && d < t4 {
        (6.0, UnwrapBranch::Plus6)
    } else if -t4 < d && d <= -t3 {
        (-6.0, UnwrapBranch::Minus6)
    } else {
        return (v_lv, UnwrapBranch::None);
    };
    (v_lv + k * venc_low, branch)
}

pub fn dualvenc_unwrap(v_lv: &[f64], v_hv: &[f64], venc_low: f64) -> Result<Vec<f64>> {
    if v_lv.len() != v_hv.len() {
        return Err(Error::ShapeMismatch(format!(
            "low-venc has {} voxels, high-venc {}",
            v_lv.len(),
            v_hv.len()
        )));
    }
    if !(venc_low > 0.0) {
        return Err(Error::InvalidArgument("venc_low must be positive".into()));
    }
    Ok(v_lv
        .iter()
        .zip(v_hv)
        .map(|(&l, &h)| unwrap_voxel(l, h, venc_low).0)
        .collect())
}

/// Dual-venc unwrap of whole velocity volumes (all timesteps and components).
pub fn dualvenc_unwrap_volume(v_lv: &VelocityVolume, v_hv: &VelocityVolume, venc_low: f64) -> Result<VelocityVolume> {
    if v_lv.dims() != v_hv.dims() || v_lv.nt() != v_hv.nt() {
        return Err(Error::ShapeMismatch("low/high venc volumes differ in shape".into()));
    }
    let data = dualvenc_unwrap(v_lv.data(), v_hv.data(), venc_low)?;
    VelocityVolume::from_vec(v_lv.dims(), v_lv.nt(), v_lv.spacing, v_lv.dt, data)
}

/// splitmix64 finalizer; mixes stream tags into independent sub-seeds.
pub fn mix_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut z = seed;
    for &t in tags {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(t.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const STREAM_STRATUM: u64 = 1;
const STREAM_NOISE: u64 = 2;

/// Draws the per-timestep SNR stratum (fair coin) and TSNR (uniform in range).
pub fn draw_snr_log(nt: usize, cfg: &AcquisitionConfig) -> Vec<SnrEntry> {
    (0..nt)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, &[STREAM_STRATUM, t as u64]));
            let stratum = if rng.random_bool(0.5) {
                SnrStratum::High
            } else {
                SnrStratum::Low
            };
            let (lo, hi) = match stratum {
                SnrStratum::High => cfg.tsnr_high_range,
                SnrStratum::Low => cfg.tsnr_low_range,
            };
            let tsnr = if lo == hi { lo } else { rng.random_range(lo..=hi) };
            SnrEntry {
                timestep: t,
                stratum,
                tsnr,
            }
        })
        .collect()
}

/// Mean magnitude over fluid voxels after the floor is applied.
pub fn fluid_signal_reference(m: &MagnitudeVolume, mask: &FluidMask, floor: f64) -> Result<f64> {
    let (sum, n) = m
        .data()
        .iter()
        .zip(mask.data())
        .filter(|(_, &f)| f)
        .fold((0.0, 0usize), |(s, n), (&v, _)| (s + if v < floor { 0.0 } else { v }, n + 1));
    if n == 0 || sum <= 0.0 {
        return Err(Error::InvalidArgument(
            "fluid mask is empty or fluid magnitude is zero; cannot calibrate noise".into(),
        ));
    }
    Ok(sum / n as f64)
}

fn acquire_channel(
    v: &[f64],
    m: &MagnitudeVolume,
    venc: f64,
    cfg: &AcquisitionConfig,
    tsnr: f64,
    signal_ref: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let img = assemble_complex(m, &encode_phase(v, venc), cfg.magnitude_floor)?;
    let k = crop_kspace(&fft3(&img))?;
    let k = if cfg.noise_free {
        k
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        add_kspace_noise(&k, tsnr, signal_ref, &mut rng)
    };
    Ok(decode_velocity(&ifft3(&k), venc).0)
}

/// Full low-resolution synthesis. Returns the unwrapped half-resolution
/// velocity and the per-timestep TSNR log.
pub fn synthesize(
    v_hr: &VelocityVolume,
    m: &MagnitudeVolume,
    mask: &FluidMask,
    cfg: &AcquisitionConfig,
) -> Result<(VelocityVolume, Vec<SnrEntry>)> {
    cfg.validate()?;
    let d = v_hr.dims();
    if m.dims() != d || mask.dims() != d {
        return Err(Error::ShapeMismatch(format!(
            "velocity {d}, magnitude {}, mask {}",
            m.dims(),
            mask.dims()
        )));
    }
    for n in d.as_array() {
        if n % 2 != 0 {
            return Err(Error::OddDimension(n));
        }
    }
    let signal_ref = fluid_signal_reference(m, mask, cfg.magnitude_floor)?;
    let log = draw_snr_log(v_hr.nt(), cfg);
    let low_dims: Dims = d.halved();

    let jobs: Vec<(usize, usize)> = (0..v_hr.nt()).flat_map(|t| (0..3).map(move |c| (t, c))).collect();
    let results: Vec<Result<Vec<f64>>> = jobs
        .par_iter()
        .map(|&(t, c)| {
            let vencs = select_vencs(v_hr.frame(t), cfg);
            let comp = v_hr.component(t, c);
            let seed = |channel: u64| mix_seed(cfg.seed, &[STREAM_NOISE, t as u64, c as u64, channel]);
            let lv = acquire_channel(&comp, m, vencs.low, cfg, log[t].tsnr, signal_ref, seed(0))?;
            let hv = acquire_channel(&comp, m, vencs.high, cfg, cfg.tsnr_highvenc, signal_ref, seed(1))?;
            dualvenc_unwrap(&lv, &hv, vencs.low)
        })
        .collect();

    let mut out = VelocityVolume::zeros(low_dims, v_hr.nt(), v_hr.spacing * 2.0, v_hr.dt)?;
    for (&(t, c), r) in jobs.iter().zip(results) {
        out.set_component(t, c, &r?);
    }
    out.check_finite()?;
    Ok((out, log))
}
