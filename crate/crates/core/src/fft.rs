//! Orthonormal 3D FFT over [`ComplexVolume`]s and central k-space cropping.

use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::error::{Error, Result};
use crate::volume::{ComplexVolume, Dims, Space};

fn transform_axis(data: &mut [Complex64], dims: Dims, axis: usize, fft: &dyn Fft<f64>) {
    let n = dims.as_array()[axis];
    if n == 1 {
        return;
    }
    let stride = match axis {
        0 => 1,
        1 => dims.nx,
        _ => dims.nx * dims.ny,
    };
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let (outer, inner) = match axis {
        0 => (dims.ny * dims.nz, 1),
        1 => (dims.nz, dims.nx),
        _ => (1, dims.nx * dims.ny),
    };
    let block = n * stride;
    for o in 0..outer {
        for i in 0..inner {
            let base = o * block + i;
            for (k, slot) in line.iter_mut().enumerate() {
                *slot = data[base + k * stride];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for (k, v) in line.iter().enumerate() {
                data[base + k * stride] = *v;
            }
        }
    }
}

fn transform(x: &ComplexVolume, direction: FftDirection) -> Vec<Complex64> {
    let mut data = x.data.clone();
    let mut planner = FftPlanner::<f64>::new();
    for (axis, &n) in x.dims.as_array().iter().enumerate() {
        let fft = planner.plan_fft(n, direction);
        transform_axis(&mut data, x.dims, axis, fft.as_ref());
    }
    let scale = 1.0 / (x.dims.len() as f64).sqrt();
    for v in data.iter_mut() {
        *v *= scale;
    }
    data
}

/// Unitary forward transform, image space to k-space (DC at index 0).
pub fn fft3(x: &ComplexVolume) -> ComplexVolume {
    ComplexVolume {
        dims: x.dims,
        data: transform(x, FftDirection::Forward),
        space: Space::KSpace,
    }
}

/// Unitary inverse transform, k-space to image space.
pub fn ifft3(x: &ComplexVolume) -> ComplexVolume {
    ComplexVolume {
        dims: x.dims,
        data: transform(x, FftDirection::Inverse),
        space: Space::Image,
    }
}

/// Maps each low-resolution frequency bin to the contributing high-resolution
/// bins. Frequencies strictly inside the new Nyquist map one-to-one; the new
/// Nyquist bin receives both `±n/4` components.
fn crop_axis_map(n: usize) -> Vec<Vec<usize>> {
    let m = n / 2;
    (0..m)
        .map(|j| {
            let f = if j < m / 2 { j as isize } else { j as isize - m as isize };
            let src = f.rem_euclid(n as isize) as usize;
            if m.is_multiple_of(2) && j == m / 2 && m > 1 {
                vec![src, (-f).rem_euclid(n as isize) as usize]
            } else {
                vec![src]
            }
        })
        .collect()
}

/// Keeps the central half of k-space along every axis.
///
/// The result is scaled by `1/√8` so that, under the unitary convention,
/// image-space intensities of band-limited signals are unchanged.
pub fn crop_kspace(k: &ComplexVolume) -> Result<ComplexVolume> {
    let d = k.dims;
    for n in d.as_array() {
        if n % 2 != 0 {
            return Err(Error::OddDimension(n));
        }
    }
    let out_dims = d.halved();
    let mx = crop_axis_map(d.nx);
    let my = crop_axis_map(d.ny);
    let mz = crop_axis_map(d.nz);
    let scale = 1.0 / 8f64.sqrt();
    let mut data = Vec::with_capacity(out_dims.len());
    for sz in &mz {
        for sy in &my {
            for sx in &mx {
                let mut acc = Complex64::new(0.0, 0.0);
                for &z in sz {
                    for &y in sy {
                        for &x in sx {
                            acc += k.data[d.index(x, y, z)];
                        }
                    }
                }
                data.push(acc * scale);
            }
        }
    }
    Ok(ComplexVolume {
        dims: out_dims,
        data,
        space: Space::KSpace,
    })
}

/// Fourier downsampling of a real scalar grid by a factor of two: crop of the
/// unitary spectrum followed by the inverse transform, real part.
pub fn fourier_downsample_real(dims: Dims, values: &[f64]) -> Result<Vec<f64>> {
    let x = ComplexVolume::new(
        dims,
        values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        Space::Image,
    )?;
    let low = ifft3(&crop_kspace(&fft3(&x))?);
    Ok(low.data.iter().map(|c| c.re).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    fn random_volume(dims: Dims, seed: u64) -> ComplexVolume {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dims.len())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ComplexVolume::new(dims, data, Space::Image).unwrap()
    }

    fn norm(x: &ComplexVolume) -> f64 {
        x.data.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    #[test]
    fn constant_volume_has_single_dc_coefficient() {
        let d = Dims::new(4, 6, 8);
        let c = Complex64::new(2.5, -1.0);
        let x = ComplexVolume::new(d, vec![c; d.len()], Space::Image).unwrap();
        let k = fft3(&x);
        let expect = c * (d.len() as f64).sqrt();
        assert!((k.data[0] - expect).norm() < 1e-12);
        assert!(k.data[1..].iter().all(|v| v.norm() < 1e-12));
        assert_eq!(k.space, Space::KSpace);
    }

    #[test]
    fn zero_volume_stays_zero() {
        let x = ComplexVolume::zeros(Dims::cube(4), Space::Image);
        assert!(fft3(&x).data.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
    }

    #[test]
    fn round_trip_and_parseval() {
        let x = random_volume(Dims::new(6, 8, 10), 5);
        let k = fft3(&x);
        assert!((norm(&k) - norm(&x)).abs() / norm(&x) < 1e-6);
        let back = ifft3(&k);
        let err: f64 = back.data.iter().zip(&x.data).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!(err / norm(&x) < 1e-6);
    }

    #[test]
    fn fft_matches_direct_dft() {
        let d = Dims::new(3, 4, 2);
        let x = random_volume(d, 9);
        let k = fft3(&x);
        for kz in 0..d.nz {
            for ky in 0..d.ny {
                for kx in 0..d.nx {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for i in 0..d.len() {
                        let (x_, y_, z_) = d.coords(i);
                        let ph = -2.0 * PI
                            * (kx as f64 * x_ as f64 / d.nx as f64
                                + ky as f64 * y_ as f64 / d.ny as f64
                                + kz as f64 * z_ as f64 / d.nz as f64);
                        acc += x.data[i] * Complex64::from_polar(1.0, ph);
                    }
                    acc /= (d.len() as f64).sqrt();
                    assert!((acc - k.data[d.index(kx, ky, kz)]).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn crop_preserves_constant() {
        let d = Dims::new(8, 8, 4);
        let x = ComplexVolume::new(d, vec![Complex64::new(3.0, 1.0); d.len()], Space::Image).unwrap();
        let low = ifft3(&crop_kspace(&fft3(&x)).unwrap());
        assert_eq!(low.dims, Dims::new(4, 4, 2));
        for v in &low.data {
            assert!((v - Complex64::new(3.0, 1.0)).norm() < 1e-6);
        }
    }

    #[test]
    fn crop_keeps_cosines_below_new_nyquist() {
        let d = Dims::cube(16);
        for wavelength in [16.0, 8.0, 4.0] {
            let vals: Vec<f64> = (0..d.len())
                .map(|i| {
                    let (x, y, _) = d.coords(i);
                    (2.0 * PI * x as f64 / wavelength).cos() + 0.5 * (2.0 * PI * y as f64 / wavelength).cos()
                })
                .collect();
            let low = fourier_downsample_real(d, &vals).unwrap();
            let ld = d.halved();
            for i in 0..ld.len() {
                let (x, y, z) = ld.coords(i);
                assert!((low[i] - vals[d.index(2 * x, 2 * y, 2 * z)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn checkerboard_at_nyquist_is_removed() {
        let d = Dims::cube(8);
        let vals: Vec<f64> = (0..d.len())
            .map(|i| {
                let (x, y, z) = d.coords(i);
                if (x + y + z) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        assert!(fourier_downsample_real(d, &vals).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn odd_dimension_rejected() {
        let x = ComplexVolume::zeros(Dims::new(4, 5, 4), Space::KSpace);
        assert!(matches!(crop_kspace(&x), Err(Error::OddDimension(5))));
    }
}
