//! Volumetric data types, fluid masks and the boundary/core decomposition.
//!
//! Every grid is stored with `x` fastest, then `y`, then `z`; time-resolved
//! vector volumes add the component as the fastest index and time as the
//! slowest, i.e. `(t, z, y, x, component)`.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Voxel counts along each spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Dims { nx, ny, nz }
    }

    pub const fn cube(n: usize) -> Self {
        Dims { nx: n, ny: n, nz: n }
    }

    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.ny + y) * self.nx + x
    }

    #[inline]
    pub const fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.nx;
        let y = (i / self.nx) % self.ny;
        let z = i / (self.nx * self.ny);
        (x, y, z)
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    pub const fn from_array(a: [usize; 3]) -> Self {
        Dims::new(a[0], a[1], a[2])
    }

    pub fn is_cubic(&self) -> bool {
        self.nx == self.ny && self.ny == self.nz
    }

    pub fn halved(&self) -> Self {
        Dims::new(self.nx / 2, self.ny / 2, self.nz / 2)
    }

    pub fn doubled(&self) -> Self {
        Dims::new(self.nx * 2, self.ny * 2, self.nz * 2)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

/// Time-resolved 3-component velocity field in m/s.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityVolume {
    dims: Dims,
    nt: usize,
    /// Isotropic voxel size in mm.
    pub spacing: f64,
    /// Temporal resolution in ms.
    pub dt: f64,
    data: Vec<f64>,
}

impl VelocityVolume {
    pub fn zeros(dims: Dims, nt: usize, spacing: f64, dt: f64) -> Result<Self> {
        Self::from_vec(dims, nt, spacing, dt, vec![0.0; dims.len() * nt * 3])
    }

    pub fn from_vec(dims: Dims, nt: usize, spacing: f64, dt: f64, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || nt == 0 {
            return Err(Error::DimensionTooSmall(format!("velocity volume {dims} x {nt}")));
        }
        if !(spacing > 0.0 && spacing.is_finite()) || !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "spacing ({spacing}) and dt ({dt}) must be positive"
            )));
        }
        if data.len() != dims.len() * nt * 3 {
            return Err(Error::ShapeMismatch(format!(
                "velocity payload has {} values, expected {}",
                data.len(),
                dims.len() * nt * 3
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite velocity component".into()));
        }
        Ok(VelocityVolume {
            dims,
            nt,
            spacing,
            dt,
            data,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Interleaved `(z, y, x, component)` slice for one timestep.
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.dims.len() * 3;
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.dims.len() * 3;
        &mut self.data[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn get(&self, t: usize, i: usize) -> [f64; 3] {
        let o = (t * self.dims.len() + i) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn set(&mut self, t: usize, i: usize, v: [f64; 3]) {
        let o = (t * self.dims.len() + i) * 3;
        self.data[o..o + 3].copy_from_slice(&v);
    }

    /// One velocity component of one timestep as a scalar grid.
    pub fn component(&self, t: usize, c: usize) -> Vec<f64> {
        self.frame(t).chunks_exact(3).map(|v| v[c]).collect()
    }

    pub fn set_component(&mut self, t: usize, c: usize, values: &[f64]) {
        for (dst, &v) in self.frame_mut(t).chunks_exact_mut(3).zip(values) {
            dst[c] = v;
        }
    }

    /// Returns an error if any component is NaN or infinite.
    pub fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numerical("non-finite velocity component".into()))
        }
    }
}

/// Non-negative scalar intensity per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeVolume {
    dims: Dims,
    data: Vec<f64>,
}

impl MagnitudeVolume {
    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "magnitude payload has {} values, expected {}",
                data.len(),
                dims.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument(
                "magnitude values must be finite and non-negative".into(),
            ));
        }
        Ok(MagnitudeVolume { dims, data })
    }

    pub fn filled(dims: Dims, value: f64) -> Result<Self> {
        Self::from_vec(dims, vec![value; dims.len()])
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Whether a complex volume holds image-space or k-space samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Image,
    KSpace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVolume {
    pub dims: Dims,
    pub data: Vec<Complex64>,
    pub space: Space,
}

impl ComplexVolume {
    pub fn new(dims: Dims, data: Vec<Complex64>, space: Space) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "complex payload has {} values, expected {}",
                data.len(),
                dims.len()
            )));
        }
        Ok(ComplexVolume { dims, data, space })
    }

    pub fn zeros(dims: Dims, space: Space) -> Self {
        ComplexVolume {
            dims,
            data: vec![Complex64::new(0.0, 0.0); dims.len()],
            space,
        }
    }
}

/// Boolean fluid membership per voxel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FluidMask {
    dims: Dims,
    data: Vec<bool>,
}

impl FluidMask {
    pub fn from_vec(dims: Dims, data: Vec<bool>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask has {} voxels, expected {}",
                data.len(),
                dims.len()
            )));
        }
        Ok(FluidMask { dims, data })
    }

    pub fn filled(dims: Dims, value: bool) -> Self {
        FluidMask {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Region {
    NonFluid = 0,
    Boundary = 1,
    Core = 2,
}

impl Region {
    pub fn from_u8(v: u8) -> Option<Region> {
        match v {
            0 => Some(Region::NonFluid),
            1 => Some(Region::Boundary),
            2 => Some(Region::Core),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Region::NonFluid => "nonfluid",
            Region::Boundary => "boundary",
            Region::Core => "core",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionLabels {
    dims: Dims,
    data: Vec<Region>,
}

impl RegionLabels {
    pub fn from_vec(dims: Dims, data: Vec<Region>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::ShapeMismatch(format!(
                "labels have {} voxels, expected {}",
                data.len(),
                dims.len()
            )));
        }
        Ok(RegionLabels { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[Region] {
        &self.data
    }

    pub fn count(&self, region: Region) -> usize {
        self.data.iter().filter(|&&r| r == region).count()
    }

    pub fn is_fluid(&self, i: usize) -> bool {
        self.data[i] != Region::NonFluid
    }
}

/// Splits a fluid mask into near-wall (boundary) and core voxels.
///
/// Core is one iteration of binary erosion with the 6-connected structuring
/// element; voxels outside the grid count as non-fluid.
pub fn decompose_regions(mask: &FluidMask) -> Result<RegionLabels> {
    let d = mask.dims();
    if d.nx < 3 || d.ny < 3 || d.nz < 3 {
        return Err(Error::DimensionTooSmall(format!(
            "region decomposition needs every axis >= 3, got {d}"
        )));
    }
    let m = mask.data();
    let fluid = |x: isize, y: isize, z: isize| -> bool {
        if x < 0 || y < 0 || z < 0 || x >= d.nx as isize || y >= d.ny as isize || z >= d.nz as isize
        {
            return false;
        }
        m[d.index(x as usize, y as usize, z as usize)]
    };
    let mut labels = Vec::with_capacity(d.len());
    for z in 0..d.nz as isize {
        for y in 0..d.ny as isize {
            for x in 0..d.nx as isize {
                let label = if !fluid(x, y, z) {
                    Region::NonFluid
                } else if fluid(x - 1, y, z)
                    && fluid(x + 1, y, z)
                    && fluid(x, y - 1, z)
                    && fluid(x, y + 1, z)
                    && fluid(x, y, z - 1)
                    && fluid(x, y, z + 1)
                {
                    Region::Core
                } else {
                    Region::Boundary
                };
                labels.push(label);
            }
        }
    }
    RegionLabels::from_vec(d, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(&self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Rotation angle restricted to quarter turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QuarterTurn {
    Deg90,
    Deg180,
    Deg270,
}

impl QuarterTurn {
    pub const ALL: [QuarterTurn; 3] = [QuarterTurn::Deg90, QuarterTurn::Deg180, QuarterTurn::Deg270];

    pub fn degrees(&self) -> u32 {
        match self {
            QuarterTurn::Deg90 => 90,
            QuarterTurn::Deg180 => 180,
            QuarterTurn::Deg270 => 270,
        }
    }

    pub fn inverse(&self) -> QuarterTurn {
        match self {
            QuarterTurn::Deg90 => QuarterTurn::Deg270,
            QuarterTurn::Deg180 => QuarterTurn::Deg180,
            QuarterTurn::Deg270 => QuarterTurn::Deg90,
        }
    }
}

/// Signed axis permutation: row `i` of the rotation matrix has a single
/// nonzero entry `sign[i]` in column `src[i]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rotation {
    src: [usize; 3],
    sign: [i8; 3],
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        src: [0, 1, 2],
        sign: [1, 1, 1],
    };

    pub fn new(axis: Axis, angle: QuarterTurn) -> Rotation {
        // right-handed quarter turn about the axis
        let quarter = match axis {
            Axis::X => Rotation {
                src: [0, 2, 1],
                sign: [1, -1, 1],
            },
            Axis::Y => Rotation {
                src: [2, 1, 0],
                sign: [1, 1, -1],
            },
            Axis::Z => Rotation {
                src: [1, 0, 2],
                sign: [-1, 1, 1],
            },
        };
        let turns = angle.degrees() / 90;
        (0..turns).fold(Rotation::IDENTITY, |acc, _| quarter.compose(&acc))
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let mut src = [0; 3];
        let mut sign = [0; 3];
        for i in 0..3 {
            let j = self.src[i];
            src[i] = other.src[j];
            sign[i] = self.sign[i] * other.sign[j];
        }
        Rotation { src, sign }
    }

    pub fn inverse(&self) -> Rotation {
        let mut src = [0; 3];
        let mut sign = [0; 3];
        for i in 0..3 {
            src[self.src[i]] = i;
            sign[self.src[i]] = self.sign[i];
        }
        Rotation { src, sign }
    }

    #[inline]
    pub fn apply_f64(&self, v: [f64; 3]) -> [f64; 3] {
        let pick = |i: usize| {
            let x = v[self.src[i]];
            if self.sign[i] < 0 {
                -x
            } else {
                x
            }
        };
        [pick(0), pick(1), pick(2)]
    }

    #[inline]
    fn apply_i64(&self, v: [i64; 3]) -> [i64; 3] {
        let pick = |i: usize| v[self.src[i]] * self.sign[i] as i64;
        [pick(0), pick(1), pick(2)]
    }

    pub fn matrix(&self) -> [[i8; 3]; 3] {
        let mut m = [[0; 3]; 3];
        for i in 0..3 {
            m[i][self.src[i]] = self.sign[i];
        }
        m
    }
}

/// Source voxel index for every output voxel of a cube of side `n` rotated
/// about its center.
pub fn rotation_gather_map(n: usize, rot: &Rotation) -> Vec<usize> {
    let dims = Dims::cube(n);
    let inv = rot.inverse();
    let c = n as i64 - 1;
    let mut map = Vec::with_capacity(dims.len());
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                // doubled, centered coordinates stay integral
                let p = [2 * x as i64 - c, 2 * y as i64 - c, 2 * z as i64 - c];
                let q = inv.apply_i64(p);
                let sx = ((q[0] + c) / 2) as usize;
                let sy = ((q[1] + c) / 2) as usize;
                let sz = ((q[2] + c) / 2) as usize;
                map.push(dims.index(sx, sy, sz));
            }
        }
    }
    map
}

/// Rotates a scalar grid (cubic) about its center.
pub fn rotate_grid<T: Copy>(n: usize, data: &[T], rot: &Rotation) -> Vec<T> {
    rotation_gather_map(n, rot).into_iter().map(|s| data[s]).collect()
}

/// Rotates an interleaved 3-vector grid: voxels are permuted and each vector
/// is rotated by the same matrix.
pub fn rotate_vector_grid(n: usize, data: &[f64], rot: &Rotation) -> Vec<f64> {
    let map = rotation_gather_map(n, rot);
    let mut out = Vec::with_capacity(data.len());
    for s in map {
        let v = [data[3 * s], data[3 * s + 1], data[3 * s + 2]];
        out.extend_from_slice(&rot.apply_f64(v));
    }
    out
}

/// Rigid quarter-turn rotation of a velocity field about a coordinate axis.
pub fn rotate_field(v: &VelocityVolume, axis: Axis, angle: QuarterTurn) -> Result<VelocityVolume> {
    let d = v.dims();
    if !d.is_cubic() {
        return Err(Error::NonCubic {
            nx: d.nx,
            ny: d.ny,
            nz: d.nz,
        });
    }
    let rot = Rotation::new(axis, angle);
    let mut data = Vec::with_capacity(v.data().len());
    for t in 0..v.nt() {
        data.extend(rotate_vector_grid(d.nx, v.frame(t), &rot));
    }
    VelocityVolume::from_vec(d, v.nt(), v.spacing, v.dt, data)
}
