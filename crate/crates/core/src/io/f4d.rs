//! F4D volume container.
//!
//! Layout (all little-endian): magic `F4DV`, `u32` version, `u32` kind,
//! five `u32` dims `(nx, ny, nz, nt, ncomp)`, `f64` spacing (mm), `f64` dt
//! (ms), then the payload in `(t, z, y, x, component)` order as `f32`
//! (masks: one byte per voxel).

use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::patching::{PatchPair, HR_PATCH, LR_PATCH};
use crate::volume::{ComplexVolume, Dims, FluidMask, MagnitudeVolume, Region, Space, VelocityVolume};

pub const MAGIC: &[u8; 4] = b"F4DV";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 4 + 5 * 4 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum Kind {
    Velocity = 0,
    Magnitude = 1,
    Mask = 2,
    Complex = 3,
    PatchSet = 4,
}

impl Kind {
    pub fn from_u32(v: u32) -> Option<Kind> {
        Some(match v {
            0 => Kind::Velocity,
            1 => Kind::Magnitude,
            2 => Kind::Mask,
            3 => Kind::Complex,
            4 => Kind::PatchSet,
            _ => return None,
        })
    }

    pub fn element_size(&self) -> usize {
        match self {
            Kind::Mask => 1,
            _ => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Header {
    pub kind: Kind,
    /// `(nx, ny, nz, nt, ncomp)`
    pub dims: [u32; 5],
    pub spacing: f64,
    pub dt: f64,
}

impl Header {
    pub fn element_count(&self) -> usize {
        self.dims.iter().map(|&d| d as usize).product()
    }

    pub fn spatial(&self) -> Dims {
        Dims::new(self.dims[0] as usize, self.dims[1] as usize, self.dims[2] as usize)
    }

    pub fn nt(&self) -> usize {
        self.dims[3] as usize
    }

    pub fn ncomp(&self) -> usize {
        self.dims[4] as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Header,
    pub payload: Payload,
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} does not fit in 32 bits")))
}

fn f32s(values: &[f64]) -> Vec<f32> {
    values.iter().map(|&v| v as f32).collect()
}

impl Container {
    pub fn new(header: Header, payload: Payload) -> Result<Self> {
        let n = header.element_count();
        let (len, byte) = match &payload {
            Payload::F32(v) => (v.len(), false),
            Payload::U8(v) => (v.len(), true),
        };
        if byte != (header.kind == Kind::Mask) {
            return Err(Error::InvalidArgument(format!("payload type does not match kind {:?}", header.kind)));
        }
        if len != n {
            return Err(Error::ShapeMismatch(format!("payload has {len} elements, dims give {n}")));
        }
        Ok(Container { header, payload })
    }

    pub fn encode(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(HEADER_LEN + h.element_count() * h.kind.element_size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(h.kind as u32).to_le_bytes());
        for d in h.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&h.spacing.to_le_bytes());
        out.extend_from_slice(&h.dt.to_le_bytes());
        match &self.payload {
            Payload::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Payload::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::format(path, "truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::format(path, "bad magic, expected F4DV"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let kind = Kind::from_u32(u32_at(8)).ok_or_else(|| Error::format(path, format!("unknown kind {}", u32_at(8))))?;
        let mut dims = [0u32; 5];
        for (k, d) in dims.iter_mut().enumerate() {
            *d = u32_at(12 + 4 * k);
        }
        let header = Header {
            kind,
            dims,
            spacing: f64_at(32),
            dt: f64_at(40),
        };
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
            .ok_or_else(|| Error::format(path, "dims overflow"))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != n * kind.element_size() {
            return Err(Error::format(
                path,
                format!("payload is {} bytes, dims give {}", body.len(), n * kind.element_size()),
            ));
        }
        let payload = if kind == Kind::Mask {
            Payload::U8(body.to_vec())
        } else {
            Payload::F32(
                body.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            )
        };
        Ok(Container { header, payload })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    fn expect(&self, kind: Kind, ncomp: usize, path: &Path) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::format(path, format!("expected {kind:?}, found {:?}", self.header.kind)));
        }
        if self.header.ncomp() != ncomp {
            return Err(Error::format(path, format!("expected {ncomp} components, found {}", self.header.ncomp())));
        }
        Ok(())
    }

    fn floats(&self) -> Vec<f64> {
        match &self.payload {
            Payload::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Payload::U8(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

fn header(kind: Kind, d: Dims, nt: usize, ncomp: usize, spacing: f64, dt: f64) -> Result<Header> {
    Ok(Header {
        kind,
        dims: [
            to_u32(d.nx, "nx")?,
            to_u32(d.ny, "ny")?,
            to_u32(d.nz, "nz")?,
            to_u32(nt, "nt")?,
            to_u32(ncomp, "ncomp")?,
        ],
        spacing,
        dt,
    })
}

pub fn velocity_container(v: &VelocityVolume) -> Result<Container> {
    Container::new(
        header(Kind::Velocity, v.dims(), v.nt(), 3, v.spacing, v.dt)?,
        Payload::F32(f32s(v.data())),
    )
}

pub fn write_velocity(path: &Path, v: &VelocityVolume) -> Result<()> {
    velocity_container(v)?.write(path)
}

pub fn read_velocity(path: &Path) -> Result<VelocityVolume> {
    let c = Container::read(path)?;
    c.expect(Kind::Velocity, 3, path)?;
    let h = c.header;
    VelocityVolume::from_vec(h.spatial(), h.nt(), h.spacing, h.dt, c.floats())
}

pub fn write_magnitude(path: &Path, m: &MagnitudeVolume, spacing: f64, dt: f64) -> Result<()> {
    Container::new(header(Kind::Magnitude, m.dims(), 1, 1, spacing, dt)?, Payload::F32(f32s(m.data())))?.write(path)
}

pub fn read_magnitude(path: &Path) -> Result<MagnitudeVolume> {
    let c = Container::read(path)?;
    c.expect(Kind::Magnitude, 1, path)?;
    if c.header.nt() != 1 {
        return Err(Error::format(path, "magnitude volumes are static (nt = 1)"));
    }
    MagnitudeVolume::from_vec(c.header.spatial(), c.floats())
}

pub fn write_mask(path: &Path, m: &FluidMask, spacing: f64, dt: f64) -> Result<()> {
    let bytes = m.data().iter().map(|&b| b as u8).collect();
    Container::new(header(Kind::Mask, m.dims(), 1, 1, spacing, dt)?, Payload::U8(bytes))?.write(path)
}

pub fn read_mask(path: &Path) -> Result<FluidMask> {
    let c = Container::read(path)?;
    c.expect(Kind::Mask, 1, path)?;
    let Payload::U8(bytes) = &c.payload else {
        unreachable!("mask payloads decode as bytes")
    };
    if c.header.nt() != 1 || bytes.iter().any(|&b| b > 1) {
        return Err(Error::format(path, "mask must be a single frame of 0/1 bytes"));
    }
    FluidMask::from_vec(c.header.spatial(), bytes.iter().map(|&b| b == 1).collect())
}

/// Complex volumes store `(re, im)` as two components.
pub fn write_complex(path: &Path, v: &ComplexVolume, spacing: f64, dt: f64) -> Result<()> {
    let mut data = Vec::with_capacity(v.data.len() * 2);
    for z in &v.data {
        data.push(z.re as f32);
        data.push(z.im as f32);
    }
    Container::new(header(Kind::Complex, v.dims, 1, 2, spacing, dt)?, Payload::F32(data))?.write(path)
}

pub fn read_complex(path: &Path, space: Space) -> Result<ComplexVolume> {
    let c = Container::read(path)?;
    c.expect(Kind::Complex, 2, path)?;
    let f = c.floats();
    let data = f.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
    ComplexVolume::new(c.header.spatial(), data, space)
}

/// Values per patch record: origin (3), timestep, HR velocity, LR velocity,
/// HR region codes.
pub const PATCH_RECORD_LEN: usize = 4 + 3 * HR_PATCH * HR_PATCH * HR_PATCH + 3 * LR_PATCH * LR_PATCH * LR_PATCH
    + HR_PATCH * HR_PATCH * HR_PATCH;

/// Patch sets are stored as `nt` flat records of `PATCH_RECORD_LEN` values.
pub fn write_patches(path: &Path, patches: &[PatchPair], spacing: f64, dt: f64) -> Result<()> {
    let mut data = Vec::with_capacity(patches.len() * PATCH_RECORD_LEN);
    for p in patches {
        data.extend(p.origin.iter().map(|&o| o as f32));
        data.push(p.timestep as f32);
        data.extend(p.x_hr.iter().map(|&v| v as f32));
        data.extend(p.x_lr.iter().map(|&v| v as f32));
        data.extend(p.labels_hr.iter().map(|&l| l as u8 as f32));
    }
    let h = Header {
        kind: Kind::PatchSet,
        dims: [PATCH_RECORD_LEN as u32, 1, 1, to_u32(patches.len(), "patch count")?, 1],
        spacing,
        dt,
    };
    Container::new(h, Payload::F32(data))?.write(path)
}

pub fn read_patches(path: &Path) -> Result<Vec<PatchPair>> {
    let c = Container::read(path)?;
    c.expect(Kind::PatchSet, 1, path)?;
    if c.header.dims[..3] != [PATCH_RECORD_LEN as u32, 1, 1] {
        return Err(Error::format(path, "patch records have the wrong length"));
    }
    let Payload::F32(v) = &c.payload else {
        unreachable!("patch payloads decode as floats")
    };
    let n_hr = HR_PATCH * HR_PATCH * HR_PATCH;
    let n_lr = LR_PATCH * LR_PATCH * LR_PATCH;
    v.chunks_exact(PATCH_RECORD_LEN)
        .map(|r| {
            let int = |x: f32| -> Result<usize> {
                if x >= 0.0 && x.fract() == 0.0 {
                    Ok(x as usize)
                } else {
                    Err(Error::format(path, format!("bad patch index {x}")))
                }
            };
            let labels = r[4 + 3 * n_hr + 3 * n_lr..]
                .iter()
                .map(|&x| {
                    int(x).and_then(|c| {
                        Region::from_u8(c as u8)
                            .filter(|_| c < 3)
                            .ok_or_else(|| Error::format(path, format!("bad region code {x}")))
                    })
                })
                .collect::<Result<Vec<Region>>>()?;
            Ok(PatchPair {
                origin: [int(r[0])?, int(r[1])?, int(r[2])?],
                timestep: int(r[3])?,
                x_hr: r[4..4 + 3 * n_hr].iter().map(|&x| x as f64).collect(),
                x_lr: r[4 + 3 * n_hr..4 + 3 * n_hr + 3 * n_lr].iter().map(|&x| x as f64).collect(),
                mask_hr: labels.iter().map(|&l| l != Region::NonFluid).collect(),
                labels_hr: labels,
            })
        })
        .collect()
}
