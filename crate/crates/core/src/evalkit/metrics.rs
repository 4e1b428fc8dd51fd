//! Voxelwise error metrics, regression and stratified reports.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mrsim::SnrEntry;
use crate::volume::{Region, RegionLabels, VelocityVolume};

pub const EPSILON: f64 = 1e-6;
pub const HIGH_SNR_RANGE: (f64, f64) = (10.0, 12.0);
pub const LOW_SNR_RANGE: (f64, f64) = (2.0, 4.0);

/// Metrics over one set of (SR, HR) vector pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelMetrics {
    pub n: usize,
    /// Percent.
    pub mre: f64,
    pub mae: f64,
    pub vnrmse: f64,
    /// Percent.
    pub de: f64,
    pub k: [Option<f64>; 3],
    pub r2: [Option<f64>; 3],
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Ordinary least squares of `y` on `x` with intercept. Returns `(slope, R²)`,
/// absent when either variable has no spread.
pub fn regression(x: &[f64], y: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = x.len() as f64;
    if x.is_empty() {
        return (None, None);
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= 0.0 {
        return (None, None);
    }
    let k = sxy / sxx;
    let r2 = if syy > 0.0 { Some(((sxy * sxy) / (sxx * syy)).min(1.0)) } else { None };
    (Some(k), r2)
}

/// Computes all metrics over paired vectors; `None` when there are none.
pub fn voxel_metrics(pairs: &[([f64; 3], [f64; 3])]) -> Option<VoxelMetrics> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let (mut mre, mut mae, mut sq, mut de, mut vmax) = (0.0, 0.0, 0.0, 0.0, 0.0f64);
    for &(sr, hr) in pairs {
        let d = norm(sub(sr, hr));
        let nh = norm(hr);
        let ns = norm(sr);
        mre += (d / (nh + EPSILON)).tanh();
        mae += d;
        sq += d * d;
        let dot = sr[0] * hr[0] + sr[1] * hr[1] + sr[2] * hr[2];
        de += 1.0 - dot.abs() / (ns * nh + EPSILON);
        vmax = vmax.max(nh);
    }
    let rmse = (sq / n).sqrt();
    let vnrmse = if vmax > 0.0 { rmse / vmax } else { 0.0 };
    let mut k = [None; 3];
    let mut r2 = [None; 3];
    for c in 0..3 {
        let x: Vec<f64> = pairs.iter().map(|p| p.1[c]).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.0[c]).collect();
        (k[c], r2[c]) = regression(&x, &y);
    }
    Some(VoxelMetrics {
        n: pairs.len(),
        mre: 100.0 * mre / n,
        mae: mae / n,
        vnrmse,
        de: 100.0 * de / n,
        k,
        r2,
    })
}

/// Pooled MRE (percent) over fluid voxels of channel-first patches.
pub fn patch_mre(sr: &[f64], hr: &[f64], fluid: &[bool]) -> (f64, usize) {
    let n = fluid.len();
    let mut acc = 0.0;
    let mut count = 0;
    for i in 0..n {
        if !fluid[i] {
            continue;
        }
        let s = [sr[i], sr[n + i], sr[2 * n + i]];
        let h = [hr[i], hr[n + i], hr[2 * n + i]];
        acc += (norm(sub(s, h)) / (norm(h) + EPSILON)).tanh();
        count += 1;
    }
    (100.0 * acc, count)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SnrScope {
    All,
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimeScope {
    FullCycle,
    PeakSystole,
}

macro_rules! named_enum {
    ($t:ty, $($v:ident => $s:literal),+) => {
        impl $t {
            pub fn name(&self) -> &'static str {
                match self { $(Self::$v => $s),+ }
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Self::$v),)+
                    _ => Err(Error::InvalidArgument(format!("unknown {} {s:?}", stringify!($t)))),
                }
            }
        }
    };
}

named_enum!(SnrScope, All => "all", High => "high", Low => "low");
named_enum!(TimeScope, FullCycle => "full_cycle", PeakSystole => "peak_systole");

impl SnrScope {
    pub const ALL: [SnrScope; 3] = [SnrScope::All, SnrScope::High, SnrScope::Low];

    pub fn includes(&self, tsnr: f64) -> bool {
        match self {
            SnrScope::All => true,
            SnrScope::High => (HIGH_SNR_RANGE.0..=HIGH_SNR_RANGE.1).contains(&tsnr),
            SnrScope::Low => (LOW_SNR_RANGE.0..=LOW_SNR_RANGE.1).contains(&tsnr),
        }
    }
}

impl TimeScope {
    pub const ALL: [TimeScope; 2] = [TimeScope::FullCycle, TimeScope::PeakSystole];
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratumRow {
    pub region: Region,
    pub snr: SnrScope,
    pub time: TimeScope,
    pub metrics: Option<VoxelMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub model: String,
    pub rows: Vec<StratumRow>,
}

impl MetricsReport {
    pub fn get(&self, region: Region, snr: SnrScope, time: TimeScope) -> Option<&VoxelMetrics> {
        self.rows
            .iter()
            .find(|r| r.region == region && r.snr == snr && r.time == time)
            .and_then(|r| r.metrics.as_ref())
    }
}

/// Pairs of (SR, HR) vectors for the given region over timesteps `ts`.
pub fn collect_pairs(
    v_sr: &VelocityVolume,
    v_hr: &VelocityVolume,
    labels: &RegionLabels,
    region: Region,
    ts: &[usize],
) -> Vec<([f64; 3], [f64; 3])> {
    let mut out = Vec::new();
    for &t in ts {
        for (i, &l) in labels.data().iter().enumerate() {
            if l == region {
                out.push((v_sr.get(t, i), v_hr.get(t, i)));
            }
        }
    }
    out
}

/// Stratified metric suite over Boundary/Core × SNR scope × time scope.
///
/// Frames whose logged TSNR lies outside both sub-ranges count only towards
/// the `All` scope. A stratum with no voxels is reported as absent.
pub fn compute_metrics(
    model: &str,
    v_sr: &VelocityVolume,
    v_hr: &VelocityVolume,
    labels: &RegionLabels,
    snr_log: &[SnrEntry],
    peak_index: usize,
) -> Result<MetricsReport> {
    if v_sr.dims() != v_hr.dims() || v_sr.nt() != v_hr.nt() {
        return Err(Error::ShapeMismatch(format!(
            "SR {}x{} vs HR {}x{}",
            v_sr.dims(),
            v_sr.nt(),
            v_hr.dims(),
            v_hr.nt()
        )));
    }
    if labels.dims() != v_hr.dims() {
        return Err(Error::ShapeMismatch(format!("labels {} vs volume {}", labels.dims(), v_hr.dims())));
    }
    if peak_index >= v_hr.nt() {
        return Err(Error::OutOfBounds(format!("peak index {peak_index} >= nt {}", v_hr.nt())));
    }
    let nt = v_hr.nt();
    let tsnr_of = |t: usize| snr_log.iter().find(|e| e.timestep == t).map(|e| e.tsnr);
    let mut rows = Vec::with_capacity(12);
    for region in [Region::Boundary, Region::Core] {
        for snr in SnrScope::ALL {
            for time in TimeScope::ALL {
                let frames: Vec<usize> = match time {
                    TimeScope::FullCycle => (0..nt).collect(),
                    TimeScope::PeakSystole => vec![peak_index],
                };
                let ts: Vec<usize> = frames
                    .into_iter()
                    .filter(|&t| match snr {
                        SnrScope::All => true,
                        _ => tsnr_of(t).is_some_and(|v| snr.includes(v)),
                    })
                    .collect();
                let pairs = collect_pairs(v_sr, v_hr, labels, region, &ts);
                rows.push(StratumRow {
                    region,
                    snr,
                    time,
                    metrics: voxel_metrics(&pairs),
                });
            }
        }
    }
    Ok(MetricsReport {
        model: model.to_string(),
        rows,
    })
}

pub const CSV_HEADER: &str = "model,region,snr,time,n,mre,mae,vnrmse,de,k_x,k_y,k_z,r2_x,r2_y,r2_z";
pub const ABSENT: &str = "NA";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| ABSENT.to_string(), |x| format!("{x}"))
}

/// CSV text, one row per stratum; absent values are written as `NA`.
pub fn report_csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for rep in reports {
        for row in &rep.rows {
            let m = row.metrics;
            let mut cells = vec![
                rep.model.clone(),
                row.region.name().to_string(),
                row.snr.name().to_string(),
                row.time.name().to_string(),
                m.map_or(0, |m| m.n).to_string(),
            ];
            cells.extend([m.map(|m| m.mre), m.map(|m| m.mae), m.map(|m| m.vnrmse), m.map(|m| m.de)].map(fmt_opt));
            for c in 0..3 {
                cells.push(fmt_opt(m.and_then(|m| m.k[c])));
            }
            for c in 0..3 {
                cells.push(fmt_opt(m.and_then(|m| m.r2[c])));
            }
            s.push_str(&cells.join(","));
            s.push('\n');
        }
    }
    s
}

pub fn export_report(reports: &[MetricsReport], path: &std::path::Path) -> Result<()> {
    std::fs::write(path, report_csv(reports)).map_err(|e| Error::io(path, e))
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s == ABSENT {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|e| Error::InvalidArgument(format!("bad number {s:?}: {e}")))
}

fn parse_region(s: &str) -> Result<Region> {
    [Region::NonFluid, Region::Boundary, Region::Core]
        .into_iter()
        .find(|r| r.name() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown region {s:?}")))
}

/// Parses text produced by [`report_csv`].
pub fn parse_report_csv(text: &str) -> Result<Vec<MetricsReport>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::InvalidArgument("metrics CSV header mismatch".into()));
    }
    let mut out: Vec<MetricsReport> = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 15 {
            return Err(Error::InvalidArgument(format!("expected 15 fields, got {}", f.len())));
        }
        let vals: Vec<Option<f64>> = f[5..].iter().map(|s| parse_opt(s)).collect::<Result<_>>()?;
        let metrics = match vals[0] {
            None => None,
            Some(mre) => Some(VoxelMetrics {
                n: f[4].parse().map_err(|_| Error::InvalidArgument(format!("bad count {:?}", f[4])))?,
                mre,
                mae: vals[1].unwrap_or(f64::NAN),
                vnrmse: vals[2].unwrap_or(f64::NAN),
                de: vals[3].unwrap_or(f64::NAN),
                k: [vals[4], vals[5], vals[6]],
                r2: [vals[7], vals[8], vals[9]],
            }),
        };
        let row = StratumRow {
            region: parse_region(f[1])?,
            snr: f[2].parse()?,
            time: f[3].parse()?,
            metrics,
        };
        match out.last_mut() {
            Some(rep) if rep.model == f[0] => rep.rows.push(row),
            _ => out.push(MetricsReport {
                model: f[0].to_string(),
                rows: vec![row],
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrsim::SnrStratum;
    use crate::volume::{decompose_regions, Dims, FluidMask};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_field(dims: Dims, nt: usize, rng: &mut impl Rng) -> VelocityVolume {
        let data = (0..dims.len() * nt * 3).map(|_| rng.random_range(-1.5..1.5)).collect();
        VelocityVolume::from_vec(dims, nt, 1.0, 10.0, data).unwrap()
    }

    /// Straight per-voxel loops written independently of the implementation.
    fn oracle(pairs: &[([f64; 3], [f64; 3])]) -> (f64, f64, f64, f64) {
        let n = pairs.len() as f64;
        let mut mre = 0.0;
        let mut mae = 0.0;
        let mut sse = 0.0;
        let mut de = 0.0;
        let mut mx = 0.0f64;
        for (s, h) in pairs {
            let e = ((s[0] - h[0]).powi(2) + (s[1] - h[1]).powi(2) + (s[2] - h[2]).powi(2)).sqrt();
            let hn = (h[0].powi(2) + h[1].powi(2) + h[2].powi(2)).sqrt();
            let sn = (s[0].powi(2) + s[1].powi(2) + s[2].powi(2)).sqrt();
            mre += (e / (hn + 1e-6)).tanh();
            mae += e;
            sse += e * e;
            de += 1.0 - (s[0] * h[0] + s[1] * h[1] + s[2] * h[2]).abs() / (sn * hn + 1e-6);
            mx = mx.max(hn);
        }
        (100.0 * mre / n, mae / n, (sse / n).sqrt() / mx, 100.0 * de / n)
    }

    #[test]
    fn metrics_match_loop_oracle_on_random_fields() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let d = Dims::cube(8);
            let a = random_field(d, 1, &mut rng);
            let b = random_field(d, 1, &mut rng);
            let pairs: Vec<_> = (0..d.len()).map(|i| (a.get(0, i), b.get(0, i))).collect();
            let m = voxel_metrics(&pairs).unwrap();
            let (mre, mae, vn, de) = oracle(&pairs);
            assert!((m.mre - mre).abs() < 1e-12);
            assert!((m.mae - mae).abs() < 1e-12);
            assert!((m.vnrmse - vn).abs() < 1e-12);
            assert!((m.de - de).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_and_scaled_fields() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = Dims::cube(6);
        let hr = random_field(d, 2, &mut rng);
        let pairs: Vec<_> = (0..d.len()).map(|i| (hr.get(1, i), hr.get(1, i))).collect();
        let m = voxel_metrics(&pairs).unwrap();
        assert_eq!((m.mre, m.mae, m.vnrmse), (0.0, 0.0, 0.0));
        assert!(m.de.abs() < 1e-4, "DE carries only the epsilon term");
        assert_eq!(m.k, [Some(1.0); 3]);
        assert_eq!(m.r2, [Some(1.0); 3]);

        let pairs: Vec<_> = pairs.iter().map(|&(s, h)| ([0.9 * s[0], 0.9 * s[1], 0.9 * s[2]], h)).collect();
        let m = voxel_metrics(&pairs).unwrap();
        for c in 0..3 {
            assert!((m.k[c].unwrap() - 0.9).abs() < 1e-12);
            assert!((m.r2[c].unwrap() - 1.0).abs() < 1e-12);
        }
        assert!((m.mre - 100.0 * 0.1f64.tanh()).abs() < 1e-3);
    }

    #[test]
    fn perpendicular_and_offset_examples() {
        let m = voxel_metrics(&[([0.0, 1.0, 0.0], [1.0, 0.0, 0.0])]).unwrap();
        assert!((m.de - 100.0).abs() < 1e-12);
        let pairs = [([1.1, 0.0, 0.0], [1.0, 0.0, 0.0]), ([0.6, 0.5, 0.0], [0.5, 0.5, 0.0])];
        assert!((voxel_metrics(&pairs).unwrap().vnrmse - 0.1).abs() < 1e-12);
    }

    fn snr_log(tsnr: &[f64]) -> Vec<SnrEntry> {
        tsnr.iter()
            .enumerate()
            .map(|(t, &v)| SnrEntry {
                timestep: t,
                stratum: if v >= 8.0 { SnrStratum::High } else { SnrStratum::Low },
                tsnr: v,
            })
            .collect()
    }

    #[test]
    fn strata_and_csv_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let d = Dims::cube(6);
        let mask = FluidMask::from_vec(d, (0..d.len()).map(|i| i % 5 != 0).collect()).unwrap();
        let labels = decompose_regions(&mask).unwrap();
        let hr = random_field(d, 4, &mut rng);
        let sr = random_field(d, 4, &mut rng);
        // Frame 3 is outside both sub-ranges; no low frame at peak.
        let log = snr_log(&[11.0, 3.0, 10.5, 7.0]);
        let rep = compute_metrics("net", &sr, &hr, &labels, &log, 2).unwrap();
        assert_eq!(rep.rows.len(), 12);
        assert!(rep.get(Region::Core, SnrScope::Low, TimeScope::PeakSystole).is_none());
        let n_core = labels.count(Region::Core);
        assert_eq!(rep.get(Region::Core, SnrScope::All, TimeScope::FullCycle).unwrap().n, 4 * n_core);
        assert_eq!(rep.get(Region::Core, SnrScope::High, TimeScope::FullCycle).unwrap().n, 2 * n_core);

        // All-SNR MAE is the count-weighted mean of per-frame MAEs.
        let all = rep.get(Region::Boundary, SnrScope::All, TimeScope::FullCycle).unwrap();
        let mut acc = 0.0;
        let mut cnt = 0;
        for t in 0..4 {
            let m = voxel_metrics(&collect_pairs(&sr, &hr, &labels, Region::Boundary, &[t])).unwrap();
            acc += m.mae * m.n as f64;
            cnt += m.n;
        }
        assert!((all.mae - acc / cnt as f64).abs() < 1e-12);

        let text = report_csv(std::slice::from_ref(&rep));
        assert_eq!(text.lines().count(), 13);
        assert!(text.contains(",NA,"));
        assert_eq!(parse_report_csv(&text).unwrap(), vec![rep]);
    }

    #[test]
    fn constant_reference_has_absent_regression() {
        let pairs = [([1.0, 2.0, 3.0], [1.0, 0.0, 0.0]), ([2.0, 1.0, 0.0], [2.0, 0.0, 0.0])];
        let m = voxel_metrics(&pairs).unwrap();
        assert!(m.k[0].is_some());
        assert_eq!((m.k[1], m.r2[1]), (None, None));
    }

    proptest! {
        #[test]
        fn mre_scale_invariant_up_to_epsilon(seed in 0u64..200, c in 0.5f64..10.0, small in 1e-3f64..0.5) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut draw = |lo: f64, hi: f64| -> [f64; 3] {
                let dir = loop {
                    let d = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                    let n = norm(d);
                    if n > 0.1 && n <= 1.0 { break d.map(|v| v / n); }
                };
                let r = rng.random_range(lo..hi);
                dir.map(|v| v * r)
            };
            let mut pairs: Vec<([f64; 3], [f64; 3])> = (0..50).map(|_| (draw(0.0, 1.5), draw(0.5, 1.5))).collect();
            let mre = |p: &[([f64; 3], [f64; 3])]| voxel_metrics(p).unwrap().mre / 100.0;
            let scale = |p: &[([f64; 3], [f64; 3])]| -> Vec<([f64; 3], [f64; 3])> {
                p.iter().map(|(s, h)| (s.map(|v| v * c), h.map(|v| v * c))).collect()
            };
            // Speeds of realistic magnitude: the epsilon effect stays below 1e-6.
            prop_assert!((mre(&pairs) - mre(&scale(&pairs))).abs() < 1e-6);
            // Down to |v| = 1e-3 the shift is bounded by max(r sech² r)·ε·|1 − 1/c| / min|v|.
            pairs.push((draw(0.0, 1.0), draw(small, small * 1.0001)));
            let bound = 0.45 * EPSILON * (1.0 - 1.0 / c).abs() / small;
            prop_assert!((mre(&pairs) - mre(&scale(&pairs))).abs() <= bound + 1e-15);
        }

        #[test]
        fn de_symmetric_and_rescale_invariant(seed in 0u64..200, c in 0.5f64..4.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pairs: Vec<([f64; 3], [f64; 3])> = (0..50)
                .map(|_| {
                    let mut f = || [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                    (f(), f())
                })
                .collect();
            let swapped: Vec<_> = pairs.iter().map(|&(s, h)| (h, s)).collect();
            let scaled: Vec<_> = pairs.iter().map(|&(s, h)| (s.map(|v| v * c), h)).collect();
            let a = voxel_metrics(&pairs).unwrap().de;
            prop_assert!((a - voxel_metrics(&swapped).unwrap().de).abs() < 1e-12);
            prop_assert!((a - voxel_metrics(&scaled).unwrap().de).abs() < 1e-3);
        }
    }
}
