//! Aligned HR/LR patch extraction, rotation augmentation and tiled inference.

use rand::Rng;

use crate::error::{Error, Result};
use crate::volume::{
    decompose_regions, rotate_grid, rotate_vector_grid, Axis, Dims, FluidMask, QuarterTurn, Region,
    RegionLabels, Rotation, VelocityVolume,
};

pub const HR_PATCH: usize = 24;
pub const LR_PATCH: usize = 12;
pub const TILE_STRIDE: usize = 8;
pub const MIN_FLUID_FRACTION: f64 = 0.05;
pub const MAX_CONSECUTIVE_REJECTIONS: usize = 10_000;

/// One aligned training sample. Vector patches are interleaved `(z, y, x, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub x_hr: Vec<f64>,
    pub x_lr: Vec<f64>,
    /// LR voxel coordinates of the patch corner; the HR corner is twice this.
    pub origin: [usize; 3],
    pub timestep: usize,
    pub mask_hr: Vec<bool>,
    pub labels_hr: Vec<Region>,
}

impl PatchPair {
    pub fn fluid_count(&self) -> usize {
        self.mask_hr.iter().filter(|&&f| f).count()
    }
}

/// True when `fluid` of `total` voxels reaches the 5% retention threshold.
pub fn passes_fluid_threshold(fluid: usize, total: usize) -> bool {
    fluid as f64 >= MIN_FLUID_FRACTION * total as f64
}

fn crop_vectors(v: &[f64], dims: Dims, origin: [usize; 3], size: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(size * size * size * 3);
    for z in 0..size {
        for y in 0..size {
            let start = dims.index(origin[0], origin[1] + y, origin[2] + z);
            out.extend_from_slice(&v[3 * start..3 * (start + size)]);
        }
    }
    out
}

fn crop_scalar<T: Copy>(v: &[T], dims: Dims, origin: [usize; 3], size: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(size * size * size);
    for z in 0..size {
        for y in 0..size {
            let start = dims.index(origin[0], origin[1] + y, origin[2] + z);
            out.extend_from_slice(&v[start..start + size]);
        }
    }
    out
}

/// Draws `count` patch pairs at uniformly random LR origins and timesteps,
/// keeping only candidates whose HR patch is at least 5% fluid.
pub fn extract_pairs(
    v_hr: &VelocityVolume,
    v_lr: &VelocityVolume,
    mask: &FluidMask,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<PatchPair>> {
    if count == 0 {
        return Err(Error::InvalidArgument("patch count must be at least 1".into()));
    }
    let hd = v_hr.dims();
    let ld = v_lr.dims();
    if ld.doubled() != hd || v_hr.nt() != v_lr.nt() {
        return Err(Error::ShapeMismatch(format!(
            "HR {hd} x {} must be twice LR {ld} x {}",
            v_hr.nt(),
            v_lr.nt()
        )));
    }
    if mask.dims() != hd {
        return Err(Error::ShapeMismatch(format!("mask {} vs HR {hd}", mask.dims())));
    }
    if ld.as_array().iter().any(|&n| n < LR_PATCH) {
        return Err(Error::DimensionTooSmall(format!("LR volume {ld} smaller than a {LR_PATCH}^3 patch")));
    }
    let labels = decompose_regions(mask)?;
    let total = HR_PATCH.pow(3);
    let mut pairs = Vec::with_capacity(count);
    let mut rejections = 0;
    while pairs.len() < count {
        let origin = [
            rng.random_range(0..=ld.nx - LR_PATCH),
            rng.random_range(0..=ld.ny - LR_PATCH),
            rng.random_range(0..=ld.nz - LR_PATCH),
        ];
        let t = rng.random_range(0..v_hr.nt());
        let hr_origin = origin.map(|o| 2 * o);
        let mask_hr = crop_scalar(mask.data(), hd, hr_origin, HR_PATCH);
        let fluid = mask_hr.iter().filter(|&&f| f).count();
        if !passes_fluid_threshold(fluid, total) {
            rejections += 1;
            if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                return Err(Error::Infeasible(format!(
                    "no patch with >= {}% fluid found after {rejections} attempts",
                    MIN_FLUID_FRACTION * 100.0
                )));
            }
            continue;
        }
        rejections = 0;
        pairs.push(PatchPair {
            x_hr: crop_vectors(v_hr.frame(t), hd, hr_origin, HR_PATCH),
            x_lr: crop_vectors(v_lr.frame(t), ld, origin, LR_PATCH),
            origin,
            timestep: t,
            mask_hr,
            labels_hr: crop_scalar(labels.data(), hd, hr_origin, HR_PATCH),
        });
    }
    Ok(pairs)
}

/// Rotation of a patch pair; HR, LR, mask and labels move together.
pub fn rotate_pair(pair: &PatchPair, axis: Axis, angle: QuarterTurn) -> PatchPair {
    let rot = Rotation::new(axis, angle);
    PatchPair {
        x_hr: rotate_vector_grid(HR_PATCH, &pair.x_hr, &rot),
        x_lr: rotate_vector_grid(LR_PATCH, &pair.x_lr, &rot),
        origin: pair.origin,
        timestep: pair.timestep,
        mask_hr: rotate_grid(HR_PATCH, &pair.mask_hr, &rot),
        labels_hr: rotate_grid(HR_PATCH, &pair.labels_hr, &rot),
    }
}

/// The original pair followed by the nine single-axis quarter-turn rotations
/// (axes X, Y, Z; angles 90, 180, 270 in that order).
pub fn augment(pair: &PatchPair) -> Vec<PatchPair> {
    let mut out = Vec::with_capacity(10);
    out.push(pair.clone());
    for axis in Axis::ALL {
        for angle in QuarterTurn::ALL {
            out.push(rotate_pair(pair, axis, angle));
        }
    }
    out
}

/// Position of one inference tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tile {
    /// LR corner of the 12³ input patch.
    pub origin: [usize; 3],
    /// Retained HR window, absolute coordinates, half-open.
    pub keep_lo: [usize; 3],
    pub keep_hi: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    pub lr_dims: Dims,
    pub tiles: Vec<Tile>,
}

impl TilePlan {
    pub fn hr_dims(&self) -> Dims {
        self.lr_dims.doubled()
    }
}

/// Tile origins and retained HR intervals along one axis.
fn plan_axis(n: usize) -> Vec<(usize, usize, usize)> {
    let mut origins = Vec::new();
    let mut o = 0;
    while o + LR_PATCH < n {
        origins.push(o);
        o += TILE_STRIDE;
    }
    let last = n - LR_PATCH;
    if origins.last() != Some(&last) {
        origins.push(last);
    }
    // cut between neighbours at the middle of their HR overlap; for the
    // regular stride this is the edge of the central 16-voxel window
    let mut spans = Vec::with_capacity(origins.len());
    for (k, &o) in origins.iter().enumerate() {
        let lo = if k == 0 { 0 } else { origins[k - 1] + o + LR_PATCH };
        let hi = if k + 1 == origins.len() {
            2 * n
        } else {
            o + origins[k + 1] + LR_PATCH
        };
        spans.push((o, lo, hi));
    }
    spans
}

/// Stride-8 tiling of an LR volume with disjoint retained HR windows.
pub fn plan_tiles(lr_dims: Dims) -> Result<TilePlan> {
    if lr_dims.as_array().iter().any(|&n| n < LR_PATCH) {
        return Err(Error::DimensionTooSmall(format!(
            "tiling needs every LR axis >= {LR_PATCH}, got {lr_dims}"
        )));
    }
    let px = plan_axis(lr_dims.nx);
    let py = plan_axis(lr_dims.ny);
    let pz = plan_axis(lr_dims.nz);
    let mut tiles = Vec::with_capacity(px.len() * py.len() * pz.len());
    for &(oz, zl, zh) in &pz {
        for &(oy, yl, yh) in &py {
            for &(ox, xl, xh) in &px {
                tiles.push(Tile {
                    origin: [ox, oy, oz],
                    keep_lo: [xl, yl, zl],
                    keep_hi: [xh, yh, zh],
                });
            }
        }
    }
    Ok(TilePlan { lr_dims, tiles })
}

/// Number of times each HR voxel falls inside a retained window.
pub fn coverage(plan: &TilePlan) -> Vec<u32> {
    let hd = plan.hr_dims();
    let mut count = vec![0u32; hd.len()];
    for t in &plan.tiles {
        for z in t.keep_lo[2]..t.keep_hi[2] {
            for y in t.keep_lo[1]..t.keep_hi[1] {
                for x in t.keep_lo[0]..t.keep_hi[0] {
                    count[hd.index(x, y, z)] += 1;
                }
            }
        }
    }
    count
}

/// Crops the 12³ LR input of every tile from one interleaved LR frame.
pub fn tile_inputs(plan: &TilePlan, lr_frame: &[f64]) -> Vec<Vec<f64>> {
    plan.tiles
        .iter()
        .map(|t| crop_vectors(lr_frame, plan.lr_dims, t.origin, LR_PATCH))
        .collect()
}

/// Writes every tile's retained window into an interleaved HR frame.
pub fn stitch(plan: &TilePlan, tile_outputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let hd = plan.hr_dims();
    let mut out = vec![0.0; hd.len() * 3];
    let tile_dims = Dims::cube(HR_PATCH);
    for (k, t) in plan.tiles.iter().enumerate() {
        let pred = tile_outputs.get(k).ok_or(Error::MissingTile(k))?;
        if pred.len() != tile_dims.len() * 3 {
            return Err(Error::ShapeMismatch(format!(
                "tile {k} output has {} values, expected {}",
                pred.len(),
                tile_dims.len() * 3
            )));
        }
        let base = t.origin.map(|o| 2 * o);
        for z in t.keep_lo[2]..t.keep_hi[2] {
            for y in t.keep_lo[1]..t.keep_hi[1] {
                let x0 = t.keep_lo[0];
                let x1 = t.keep_hi[0];
                let dst = hd.index(x0, y, z);
                let src = tile_dims.index(x0 - base[0], y - base[1], z - base[2]);
                out[3 * dst..3 * (dst + x1 - x0)].copy_from_slice(&pred[3 * src..3 * (src + x1 - x0)]);
            }
        }
    }
    Ok(out)
}

/// Tiled super-resolution of every timestep of an LR volume.
pub fn infer_volume<F>(v_lr: &VelocityVolume, mut predict: F) -> Result<VelocityVolume>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let plan = plan_tiles(v_lr.dims())?;
    let mut data = Vec::with_capacity(plan.hr_dims().len() * 3 * v_lr.nt());
    for t in 0..v_lr.nt() {
        let outputs = tile_inputs(&plan, v_lr.frame(t))
            .iter()
            .map(|x| predict(x))
            .collect::<Result<Vec<_>>>()?;
        data.extend(stitch(&plan, &outputs)?);
    }
    VelocityVolume::from_vec(plan.hr_dims(), v_lr.nt(), v_lr.spacing / 2.0, v_lr.dt, data)
}

/// Region labels for an HR patch, as a standalone label set.
pub fn patch_labels(pair: &PatchPair) -> RegionLabels {
    RegionLabels::from_vec(Dims::cube(HR_PATCH), pair.labels_hr.clone()).expect("patch label size")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::ops::upsample_interleaved;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn volumes(lr: Dims, nt: usize, seed: u64) -> (VelocityVolume, VelocityVolume) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hd = lr.doubled();
        let hr_data = (0..hd.len() * nt * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let lr_data = (0..lr.len() * nt * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        (
            VelocityVolume::from_vec(hd, nt, 1.0, 10.0, hr_data).unwrap(),
            VelocityVolume::from_vec(lr, nt, 2.0, 10.0, lr_data).unwrap(),
        )
    }

    #[test]
    fn threshold_arithmetic() {
        // 0.05 * 13824 = 691.2, so "at least 5%" needs 692 voxels
        assert!(!passes_fluid_threshold(691, 13_824));
        assert!(passes_fluid_threshold(692, 13_824));
        assert!(passes_fluid_threshold(13_824, 13_824));
    }

    #[test]
    fn all_fluid_accepts_everything_and_aligns() {
        let (hr, lr) = volumes(Dims::new(16, 14, 12), 2, 1);
        let mask = FluidMask::filled(hr.dims(), true);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs = extract_pairs(&hr, &lr, &mask, 20, &mut rng).unwrap();
        assert_eq!(pairs.len(), 20);
        for p in &pairs {
            assert!(p.origin[0] <= 4 && p.origin[1] <= 2 && p.origin[2] == 0);
            let hd = hr.dims();
            let h0 = p.origin.map(|o| 2 * o);
            let i = hd.index(h0[0] + 3, h0[1] + 5, h0[2] + 7);
            let j = Dims::cube(HR_PATCH).index(3, 5, 7);
            assert_eq!(hr.get(p.timestep, i).to_vec(), p.x_hr[3 * j..3 * j + 3].to_vec());
            let ld = lr.dims();
            let i = ld.index(p.origin[0] + 1, p.origin[1] + 2, p.origin[2] + 3);
            let j = Dims::cube(LR_PATCH).index(1, 2, 3);
            assert_eq!(lr.get(p.timestep, i).to_vec(), p.x_lr[3 * j..3 * j + 3].to_vec());
        }
        let again = extract_pairs(&hr, &lr, &mask, 20, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(pairs, again);
    }

    #[test]
    fn empty_volume_is_infeasible() {
        let (hr, lr) = volumes(Dims::cube(12), 1, 1);
        let mask = FluidMask::filled(hr.dims(), false);
        let r = extract_pairs(&hr, &lr, &mask, 1, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }

    #[test]
    fn sparse_mask_keeps_threshold() {
        let (hr, lr) = volumes(Dims::cube(16), 1, 4);
        let hd = hr.dims();
        let m: Vec<bool> = (0..hd.len())
            .map(|i| {
                let (x, y, _) = hd.coords(i);
                x >= 26 && y >= 26
            })
            .collect();
        let mask = FluidMask::from_vec(hd, m).unwrap();
        let pairs = extract_pairs(&hr, &lr, &mask, 10, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for p in &pairs {
            assert!(passes_fluid_threshold(p.fluid_count(), HR_PATCH.pow(3)));
        }
    }

    fn sample_pair(seed: u64) -> PatchPair {
        let (hr, lr) = volumes(Dims::cube(12), 1, seed);
        let mask = FluidMask::filled(hr.dims(), true);
        extract_pairs(&hr, &lr, &mask, 1, &mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
            .remove(0)
    }

    #[test]
    fn augmentation_produces_ten_consistent_copies() {
        let p = sample_pair(3);
        let aug = augment(&p);
        assert_eq!(aug.len(), 10);
        assert_eq!(aug[0], p);
        // 180° about Z is entry 1 + 2*3 + 1
        let z180 = &aug[8];
        assert_eq!(rotate_pair(z180, Axis::Z, QuarterTurn::Deg180), p);
        let norms = |v: &[f64]| {
            let mut n: Vec<f64> = v
                .chunks_exact(3)
                .map(|c| {
                    let mut s = c.iter().map(|x| x * x).collect::<Vec<_>>();
                    s.sort_by(f64::total_cmp);
                    s.iter().sum::<f64>()
                })
                .collect();
            n.sort_by(f64::total_cmp);
            n
        };
        for a in &aug {
            assert_eq!(norms(&a.x_hr), norms(&p.x_hr));
            assert_eq!(norms(&a.x_lr), norms(&p.x_lr));
        }
    }

    #[test]
    fn zero_pair_augments_to_zeros() {
        let p = PatchPair {
            x_hr: vec![0.0; HR_PATCH.pow(3) * 3],
            x_lr: vec![0.0; LR_PATCH.pow(3) * 3],
            origin: [0; 3],
            timestep: 0,
            mask_hr: vec![true; HR_PATCH.pow(3)],
            labels_hr: vec![Region::Core; HR_PATCH.pow(3)],
        };
        assert!(augment(&p).iter().all(|a| *a == p));
    }

    #[test]
    fn tile_counts() {
        let plan = plan_tiles(Dims::cube(28)).unwrap();
        assert_eq!(plan.tiles.len(), 27);
        let xs: Vec<usize> = plan.tiles.iter().take(3).map(|t| t.origin[0]).collect();
        assert_eq!(xs, vec![0, 8, 16]);
        assert!(coverage(&plan).iter().all(|&c| c == 1));
        let middle = plan.tiles[13];
        assert_eq!(middle.keep_lo, [20, 20, 20]);
        assert_eq!(middle.keep_hi, [36, 36, 36]);

        let single = plan_tiles(Dims::cube(12)).unwrap();
        assert_eq!(single.tiles.len(), 1);
        assert_eq!(single.tiles[0].keep_lo, [0; 3]);
        assert_eq!(single.tiles[0].keep_hi, [24; 3]);
        assert!(plan_tiles(Dims::new(12, 11, 12)).is_err());
    }

    #[test]
    fn retained_volumes_sum_to_output() {
        for n in 12..40 {
            let plan = plan_tiles(Dims::new(n, 12 + n % 5, 13)).unwrap();
            let total: usize = plan
                .tiles
                .iter()
                .map(|t| (0..3).map(|a| t.keep_hi[a] - t.keep_lo[a]).product::<usize>())
                .sum();
            assert_eq!(total, plan.hr_dims().len());
            assert!(coverage(&plan).iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn single_tile_stitch_is_identity() {
        let plan = plan_tiles(Dims::cube(12)).unwrap();
        let pred: Vec<f64> = (0..HR_PATCH.pow(3) * 3).map(|i| i as f64).collect();
        assert_eq!(stitch(&plan, std::slice::from_ref(&pred)).unwrap(), pred);
        assert!(matches!(stitch(&plan, &[]), Err(Error::MissingTile(0))));
    }

    #[test]
    fn upsample_network_stitches_to_whole_volume_upsample() {
        let ld = Dims::new(21, 12, 30);
        let (_, lr) = volumes(ld, 1, 8);
        let plan = plan_tiles(ld).unwrap();
        let preds: Vec<Vec<f64>> = tile_inputs(&plan, lr.frame(0))
            .iter()
            .map(|x| upsample_interleaved(Dims::cube(LR_PATCH), x))
            .collect();
        let stitched = stitch(&plan, &preds).unwrap();
        let whole = upsample_interleaved(ld, lr.frame(0));
        for (a, b) in stitched.iter().zip(&whole) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
