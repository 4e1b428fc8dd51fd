//! Numeric kernels on channel-first `[C, D, H, W]` buffers.
//!
//! Convolutions come in three forms sharing one geometry: the forward map,
//! its adjoint with respect to the input (`conv3d_dx`) and with respect to the
//! kernel (`conv3d_dw`). All three are bilinear, which keeps the set closed
//! under differentiation.

use crate::volume::Dims;

/// Shape of a channel-first activation: `[channels, d, h, w]`.
pub type Shape4 = [usize; 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub in_spatial: [usize; 3],
}

impl ConvGeom {
    pub fn out_spatial(&self) -> [usize; 3] {
        self.in_spatial.map(|n| (n + 2 * self.pad - self.k) / self.stride + 1)
    }

    pub fn in_shape(&self) -> Shape4 {
        let [d, h, w] = self.in_spatial;
        [self.cin, d, h, w]
    }

    pub fn out_shape(&self) -> Shape4 {
        let [d, h, w] = self.out_spatial();
        [self.cout, d, h, w]
    }

    pub fn kernel_shape(&self) -> [usize; 5] {
        [self.cout, self.cin, self.k, self.k, self.k]
    }

    /// Valid output index range along one axis for kernel tap `kk`.
    #[inline]
    fn valid(&self, kk: usize, n_in: usize, n_out: usize) -> (usize, usize) {
        // i = o*s + kk - pad must lie in [0, n_in)
        let s = self.stride as isize;
        let off = kk as isize - self.pad as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi_num = n_in as isize - 1 - off;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(n_out as isize);
        if hi <= lo {
            (0, 0)
        } else {
            (lo as usize, hi as usize)
        }
    }
}

/// Visits every (kernel tap, output row) pair with a non-empty valid span.
/// The callback receives `(o_channel, i_channel, kernel offset, out row start,
/// in row start, first valid ox, one past last valid ox)`.
#[inline]
fn for_each_row(g: &ConvGeom, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize)) {
    let [di, hi, wi] = g.in_spatial;
    let [dout, hout, wout] = g.out_spatial();
    let k = g.k;
    for o in 0..g.cout {
        for c in 0..g.cin {
            for kz in 0..k {
                let (z0, z1) = g.valid(kz, di, dout);
                for ky in 0..k {
                    let (y0, y1) = g.valid(ky, hi, hout);
                    for kx in 0..k {
                        let (x0, x1) = g.valid(kx, wi, wout);
                        if x1 <= x0 {
                            continue;
                        }
                        let widx = (((o * g.cin + c) * k + kz) * k + ky) * k + kx;
                        for oz in z0..z1 {
                            let iz = oz * g.stride + kz - g.pad;
                            for oy in y0..y1 {
                                let iy = oy * g.stride + ky - g.pad;
                                let out_row = ((o * dout + oz) * hout + oy) * wout;
                                let in_row = ((c * di + iz) * hi + iy) * wi;
                                f(o, c, widx, out_row, in_row + x0 * g.stride + kx - g.pad, x0, x1);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv3d(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let out_len: usize = g.out_shape().iter().product();
    let mut y = vec![0.0; out_len];
    let s = g.stride;
    for_each_row(g, |_, _, widx, out_row, in_start, x0, x1| {
        let wv = w[widx];
        let dst = &mut y[out_row + x0..out_row + x1];
        if s == 1 {
            let src = &x[in_start..in_start + (x1 - x0)];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += wv * v;
            }
        } else {
            for (j, d) in dst.iter_mut().enumerate() {
                *d += wv * x[in_start + j * s];
            }
        }
    });
    y
}

/// Adjoint of [`conv3d`] in its input: scatters `gy` back through `w`.
pub fn conv3d_dx(gy: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
    let in_len: usize = g.in_shape().iter().product();
    let mut gx = vec![0.0; in_len];
    let s = g.stride;
    for_each_row(g, |_, _, widx, out_row, in_start, x0, x1| {
        let wv = w[widx];
        let src = &gy[out_row + x0..out_row + x1];
        if s == 1 {
            let dst = &mut gx[in_start..in_start + (x1 - x0)];
            for (d, v) in dst.iter_mut().zip(src) {
                *d += wv * v;
            }
        } else {
            for (j, v) in src.iter().enumerate() {
                gx[in_start + j * s] += wv * v;
            }
        }
    });
    gx
}

/// Adjoint of [`conv3d`] in its kernel: correlates `x` with `gy`.
pub fn conv3d_dw(x: &[f64], gy: &[f64], g: &ConvGeom) -> Vec<f64> {
    let w_len: usize = g.kernel_shape().iter().product();
    let mut gw = vec![0.0; w_len];
    let s = g.stride;
    for_each_row(g, |_, _, widx, out_row, in_start, x0, x1| {
        let src = &gy[out_row + x0..out_row + x1];
        let mut acc = 0.0;
        if s == 1 {
            for (a, b) in src.iter().zip(&x[in_start..in_start + (x1 - x0)]) {
                acc += a * b;
            }
        } else {
            for (j, a) in src.iter().enumerate() {
                acc += a * x[in_start + j * s];
            }
        }
        gw[widx] += acc;
    });
    gw
}

/// Per-output interpolation taps `(i0, w0, i1, w1)` for a ×2 half-pixel
/// trilinear upsample along an axis of length `n`, edges clamped.
fn upsample_taps(n: usize) -> Vec<(usize, f64, usize, f64)> {
    (0..2 * n)
        .map(|j| {
            let i = j / 2;
            if j % 2 == 0 {
                (i.saturating_sub(1), 0.25, i, 0.75)
            } else {
                (i, 0.75, (i + 1).min(n - 1), 0.25)
            }
        })
        .collect()
}

/// Applies 1D taps along `axis` (0 = w, 1 = h, 2 = d) of a `[C, D, H, W]` buffer.
fn apply_axis(x: &[f64], shape: Shape4, axis: usize, transpose: bool) -> (Vec<f64>, Shape4) {
    let [c, d, h, w] = shape;
    let n_in = [w, h, d][axis];
    let (n_src, n_dst) = if transpose { (n_in, n_in / 2) } else { (n_in, 2 * n_in) };
    let taps = upsample_taps(if transpose { n_dst } else { n_src });
    let mut out_shape = shape;
    out_shape[3 - axis] = n_dst;
    let stride = match axis {
        0 => 1,
        1 => w,
        _ => w * h,
    };
    let outer = match axis {
        0 => c * d * h,
        1 => c * d,
        _ => c,
    };
    let inner = stride;
    let mut y = vec![0.0; out_shape.iter().product()];
    for o in 0..outer {
        let sbase = o * n_src * inner;
        let dbase = o * n_dst * inner;
        for i in 0..inner {
            if transpose {
                for (j, &(i0, w0, i1, w1)) in taps.iter().enumerate() {
                    let v = x[sbase + j * inner + i];
                    y[dbase + i0 * inner + i] += w0 * v;
                    y[dbase + i1 * inner + i] += w1 * v;
                }
            } else {
                for (j, &(i0, w0, i1, w1)) in taps.iter().enumerate() {
                    y[dbase + j * inner + i] = w0 * x[sbase + i0 * inner + i] + w1 * x[sbase + i1 * inner + i];
                }
            }
        }
    }
    (y, out_shape)
}

/// Trilinear ×2 upsample (half-pixel centers, clamped edges).
pub fn upsample2(x: &[f64], shape: Shape4) -> (Vec<f64>, Shape4) {
    let (a, s) = apply_axis(x, shape, 0, false);
    let (b, s) = apply_axis(&a, s, 1, false);
    apply_axis(&b, s, 2, false)
}

/// Adjoint of [`upsample2`]; `shape` is the upsampled shape.
pub fn upsample2_t(gy: &[f64], shape: Shape4) -> (Vec<f64>, Shape4) {
    let (a, s) = apply_axis(gy, shape, 2, true);
    let (b, s) = apply_axis(&a, s, 1, true);
    apply_axis(&b, s, 0, true)
}

/// Interleaved `(z, y, x, c)` 3-vector grid to channel-first `[3, D, H, W]`.
pub fn interleaved_to_channels(dims: Dims, v: &[f64]) -> Vec<f64> {
    let n = dims.len();
    let mut out = vec![0.0; 3 * n];
    for (i, c) in v.chunks_exact(3).enumerate() {
        out[i] = c[0];
        out[n + i] = c[1];
        out[2 * n + i] = c[2];
    }
    out
}

pub fn channels_to_interleaved(dims: Dims, v: &[f64]) -> Vec<f64> {
    let n = dims.len();
    let mut out = Vec::with_capacity(3 * n);
    for i in 0..n {
        out.extend_from_slice(&[v[i], v[n + i], v[2 * n + i]]);
    }
    out
}

/// Trilinear ×2 upsample of an interleaved 3-vector grid.
pub fn upsample_interleaved(dims: Dims, v: &[f64]) -> Vec<f64> {
    let ch = interleaved_to_channels(dims, v);
    let (up, _) = upsample2(&ch, [3, dims.nz, dims.ny, dims.nx]);
    channels_to_interleaved(dims.doubled(), &up)
}

#[inline]
pub fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// `gy` scaled by the leaky-rectifier slope at `x`.
pub fn leaky_mask_mul(gy: &[f64], x: &[f64], slope: f64) -> Vec<f64> {
    gy.iter()
        .zip(x)
        .map(|(&g, &v)| if v > 0.0 { g } else { slope * g })
        .collect()
}

/// `y = W x` with `W` of shape `[out, in]`.
pub fn dense(x: &[f64], w: &[f64], out: usize) -> Vec<f64> {
    let n = x.len();
    (0..out)
        .map(|o| w[o * n..(o + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// `Wᵀ gy`.
pub fn dense_dx(gy: &[f64], w: &[f64], n_in: usize) -> Vec<f64> {
    let mut gx = vec![0.0; n_in];
    for (o, &g) in gy.iter().enumerate() {
        for (d, &wv) in gx.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
            *d += wv * g;
        }
    }
    gx
}

/// `gy xᵀ`.
pub fn dense_dw(x: &[f64], gy: &[f64]) -> Vec<f64> {
    let mut gw = Vec::with_capacity(x.len() * gy.len());
    for &g in gy {
        gw.extend(x.iter().map(|&v| g * v));
    }
    gw
}
