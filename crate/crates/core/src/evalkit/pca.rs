//! Generator feature extraction and principal component projection.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::ops::interleaved_to_channels;
use crate::net::{generator_graph, GeneratorSpec, Graph, ParamSet, Tensor};
use crate::patching::{PatchPair, LR_PATCH};
use crate::volume::Dims;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tap {
    /// Activations entering the trilinear upsample.
    Middle,
    /// Activations entering the per-component output branches.
    End,
}

impl Tap {
    pub fn name(&self) -> &'static str {
        match self {
            Tap::Middle => "middle",
            Tap::End => "end",
        }
    }

    /// Feature length for a generator of the given width.
    pub fn dim(&self, spec: &GeneratorSpec) -> usize {
        match self {
            Tap::Middle => spec.width * LR_PATCH.pow(3),
            Tap::End => spec.width * (2 * LR_PATCH).pow(3),
        }
    }
}

impl fmt::Display for Tap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Tap {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "middle" => Ok(Tap::Middle),
            "end" => Ok(Tap::End),
            _ => Err(Error::InvalidArgument(format!("invalid tap {s:?}, expected middle or end"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample {
    pub tap: Tap,
    pub patch_id: usize,
    pub values: Vec<f64>,
}

/// Activations at `tap` for `count` patches drawn from `patches`. Draws are
/// without replacement when `count` fits, otherwise with replacement.
pub fn extract_features<R: Rng>(
    theta_g: &ParamSet,
    patches: &[PatchPair],
    tap: Tap,
    count: usize,
    rng: &mut R,
) -> Result<Vec<FeatureSample>> {
    if patches.is_empty() {
        return Err(Error::EmptyInput("no patches to sample features from".into()));
    }
    let spec = GeneratorSpec::infer(theta_g)?;
    let ids: Vec<usize> = if count <= patches.len() {
        sample(rng, patches.len(), count).into_vec()
    } else {
        (0..count).map(|_| rng.random_range(0..patches.len())).collect()
    };
    let lr_dims = Dims::cube(LR_PATCH);
    ids.into_par_iter()
        .map(|id| {
            let x = Tensor::new(vec![3, LR_PATCH, LR_PATCH, LR_PATCH], interleaved_to_channels(lr_dims, &patches[id].x_lr))?;
            let mut g = Graph::new();
            let bp = theta_g.bind(&mut g, false);
            let xv = g.constant(x);
            let taps = generator_graph(&mut g, &spec, &bp, xv)?;
            let v = match tap {
                Tap::Middle => taps.middle,
                Tap::End => taps.end,
            };
            Ok(FeatureSample {
                tap,
                patch_id: id,
                values: g.value(v).data().to_vec(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Unit principal axes, one per component.
    pub components: Vec<Vec<f64>>,
    /// Per-sample coordinates, one inner vector per sample.
    pub projections: Vec<Vec<f64>>,
    /// Explained-variance fractions, descending.
    pub fractions: Vec<f64>,
}

/// Problems whose smaller side is at most this size are solved exactly.
const EXACT_LIMIT: usize = 400;
const SUBSPACE_ITERS: usize = 8;
const OVERSAMPLE: usize = 10;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Top eigenpairs of the Gram matrix `X Xᵀ` (rows of `x` are centred samples).
fn gram_top(x: &[Vec<f64>], k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = x.len();
    let gram = DMatrix::from_fn(n, n, |i, j| dot(&x[i], &x[j]));
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().take(k).map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vecs = order
        .iter()
        .take(k)
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (vals, vecs)
}

/// Top eigenpairs of the scatter matrix `Xᵀ X`, returned as Gram eigenvectors
/// `X v / √λ` so both exact paths share one convention.
fn scatter_top(x: &[Vec<f64>], k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = x[0].len();
    let mut s = DMatrix::<f64>::zeros(d, d);
    for r in x {
        for i in 0..d {
            for j in 0..d {
                s[(i, j)] += r[i] * r[j];
            }
        }
    }
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut vals = Vec::new();
    let mut vecs = Vec::new();
    for &i in order.iter().take(k) {
        let lam = eig.eigenvalues[i].max(0.0);
        let v = eig.eigenvectors.column(i);
        let s = lam.sqrt();
        vecs.push(
            x.iter()
                .map(|r| if s > 0.0 { dot(r, v.as_slice()) / s } else { 0.0 })
                .collect(),
        );
        vals.push(lam);
    }
    (vals, vecs)
}

/// Randomized subspace iteration for the leading Gram eigenpairs of large sets.
fn gram_top_randomized(x: &[Vec<f64>], k: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    use rand::SeedableRng;
    let n = x.len();
    let p = (k + OVERSAMPLE).min(n);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x9ca);
    let gram_mul = |v: &DMatrix<f64>| -> DMatrix<f64> {
        // X (Xᵀ v)
        let d = x[0].len();
        let mut xt = DMatrix::<f64>::zeros(d, v.ncols());
        for (i, row) in x.iter().enumerate() {
            for c in 0..v.ncols() {
                let a = v[(i, c)];
                for (j, r) in row.iter().enumerate() {
                    xt[(j, c)] += a * r;
                }
            }
        }
        DMatrix::from_fn(n, v.ncols(), |i, c| dot(&x[i], xt.column(c).as_slice()))
    };
    let mut q = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.0..1.0));
    for _ in 0..SUBSPACE_ITERS {
        q = gram_mul(&q).qr().q();
    }
    let b = q.transpose() * gram_mul(&q);
    let b = (&b + b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().take(k).map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vecs = order
        .iter()
        .take(k)
        .map(|&i| (&q * eig.eigenvectors.column(i)).iter().copied().collect())
        .collect();
    (vals, vecs)
}

/// Projects samples onto their leading principal components.
pub fn pca_project(samples: &[FeatureSample], n_components: usize) -> Result<PcaResult> {
    if samples.len() < 3 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 3 samples, got {}", samples.len())));
    }
    let d = samples[0].values.len();
    if samples.iter().any(|s| s.values.len() != d) {
        return Err(Error::ShapeMismatch("feature samples differ in dimensionality".into()));
    }
    let rows: Vec<&[f64]> = samples.iter().map(|s| s.values.as_slice()).collect();
    pca_rows(&rows, n_components)
}

pub fn pca_rows(rows: &[&[f64]], n_components: usize) -> Result<PcaResult> {
    let n = rows.len();
    let d = rows[0].len();
    let k = n_components;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centred: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let total: f64 = centred.iter().map(|r| dot(r, r)).sum();
    if total <= 0.0 {
        return Ok(PcaResult {
            mean,
            components: vec![vec![0.0; d]; k],
            projections: vec![vec![0.0; k]; n],
            fractions: vec![0.0; k],
        });
    }
    let (vals, vecs) = if d <= EXACT_LIMIT {
        scatter_top(&centred, k.min(d))
    } else if n <= EXACT_LIMIT {
        gram_top(&centred, k.min(n))
    } else {
        gram_top_randomized(&centred, k.min(n))
    };
    let mut components = Vec::with_capacity(k);
    let mut projections = vec![vec![0.0; k]; n];
    let mut fractions = Vec::with_capacity(k);
    for j in 0..k {
        let lam = vals.get(j).copied().unwrap_or(0.0);
        if lam <= total * 1e-14 {
            components.push(vec![0.0; d]);
            fractions.push(0.0);
            continue;
        }
        let u = &vecs[j];
        // Axis in feature space: Xᵀ u / √λ.
        let s = lam.sqrt();
        let mut axis = vec![0.0; d];
        for (i, r) in centred.iter().enumerate() {
            for (a, v) in axis.iter_mut().zip(r) {
                *a += u[i] * v / s;
            }
        }
        // Deterministic sign: largest-magnitude loading positive.
        let pivot = axis
            .iter()
            .copied()
            .fold(0.0f64, |best, v| if v.abs() > best.abs() { v } else { best });
        if pivot < 0.0 {
            axis.iter_mut().for_each(|a| *a = -*a);
        }
        for (i, r) in centred.iter().enumerate() {
            projections[i][j] = dot(r, &axis);
        }
        components.push(axis);
        fractions.push(lam / total);
    }
    Ok(PcaResult {
        mean,
        components,
        projections,
        fractions,
    })
}

/// CSV with columns `tap,patch_id,pc1,pc2,...`.
pub fn projections_csv(samples: &[FeatureSample], pca: &PcaResult) -> String {
    let k = pca.fractions.len();
    let mut s = String::from("tap,patch_id");
    for j in 0..k {
        s.push_str(&format!(",pc{}", j + 1));
    }
    s.push('\n');
    for (smp, p) in samples.iter().zip(&pca.projections) {
        s.push_str(&format!("{},{}", smp.tap, smp.patch_id));
        for v in p {
            s.push_str(&format!(",{v}"));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn samples(rows: Vec<Vec<f64>>) -> Vec<FeatureSample> {
        rows.into_iter()
            .enumerate()
            .map(|(i, values)| FeatureSample {
                tap: Tap::Middle,
                patch_id: i,
                values,
            })
            .collect()
    }

    #[test]
    fn line_through_origin_has_one_component() {
        let dir: Vec<f64> = (0..10).map(|i| (i as f64 + 1.0).sin()).collect();
        let rows = (0..7).map(|t| dir.iter().map(|d| d * (t as f64 - 2.5)).collect()).collect();
        let r = pca_project(&samples(rows), 2).unwrap();
        assert!((r.fractions[0] - 1.0).abs() < 1e-10);
        assert!(r.fractions[1].abs() < 1e-10);
    }

    #[test]
    fn isotropic_gaussian_splits_evenly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let rows: Vec<Vec<f64>> = (0..10_000)
            .map(|_| vec![StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
            .collect();
        let r = pca_rows(&rows.iter().map(|v| v.as_slice()).collect::<Vec<_>>(), 2).unwrap();
        for f in &r.fractions {
            assert!((f - 0.5).abs() < 0.02, "{f}");
        }
        assert!(r.fractions[0] >= r.fractions[1]);
    }

    #[test]
    fn rank_two_data_reconstructs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let d = 12;
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let off: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let (s, t) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                (0..d).map(|j| off[j] + s * a[j] + t * b[j]).collect()
            })
            .collect();
        let r = pca_project(&samples(rows.clone()), 2).unwrap();
        for (row, p) in rows.iter().zip(&r.projections) {
            for j in 0..d {
                let rec = r.mean[j] + p[0] * r.components[0][j] + p[1] * r.components[1][j];
                assert!((rec - row[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn randomized_path_agrees_with_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        // Both sides above the exact limit, so the subspace path is taken.
        let d = EXACT_LIMIT + 20;
        let a: Vec<f64> = (0..d).map(|j| ((j * 7 % 13) as f64 - 6.0) / 6.0).collect();
        let b: Vec<f64> = (0..d).map(|j| ((j * 5 % 11) as f64 - 5.0) / 5.0).collect();
        let rows: Vec<Vec<f64>> = (0..EXACT_LIMIT + 50)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                let w: f64 = StandardNormal.sample(&mut rng);
                (0..d).map(|j| 3.0 * z * a[j] + 1.0 * w * b[j] + rng.random_range(-0.05..0.05)).collect()
            })
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|v| v.as_slice()).collect();
        let big = pca_rows(&refs, 2).unwrap();
        let small = pca_rows(&refs[..EXACT_LIMIT], 2).unwrap();
        for j in 0..2 {
            assert!((big.fractions[j] - small.fractions[j]).abs() < 0.02);
            let c = dot(&big.components[j], &small.components[j]).abs();
            assert!(c > 0.99);
        }
    }

    #[test]
    fn degenerate_input_gives_zeros() {
        let r = pca_project(&samples(vec![vec![1.0, 2.0]; 4]), 2).unwrap();
        assert_eq!(r.fractions, vec![0.0, 0.0]);
        assert!(r.projections.iter().flatten().all(|&v| v == 0.0));
        assert!(pca_project(&samples(vec![vec![1.0]; 2]), 2).is_err());
    }

    #[test]
    fn features_are_seeded_and_sized() {
        use crate::net::GeneratorSpec;
        let spec = GeneratorSpec {
            n_rrdb: 1,
            width: 4,
            n_hr_blocks: 1,
        };
        let mut theta = spec.init(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
        let pair = |s: f64| PatchPair {
            x_hr: vec![s; 3 * 13824],
            x_lr: (0..3 * 1728).map(|i| s * ((i % 7) as f64 - 3.0)).collect(),
            origin: [0, 0, 0],
            timestep: 0,
            mask_hr: vec![true; 13824],
            labels_hr: vec![crate::volume::Region::Core; 13824],
        };
        let patches = vec![pair(0.1), pair(0.2), pair(-0.3)];
        let f = |seed| extract_features(&theta, &patches, Tap::Middle, 1, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let a = f(5);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].values.len(), Tap::Middle.dim(&spec));
        assert_eq!(a, f(5));
        for (_, t) in theta.iter_mut() {
            t.data_mut().fill(0.0);
        }
        let e = extract_features(&theta, &patches, Tap::End, 4, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(e.len(), 4);
        assert!(e.iter().all(|s| s.values.len() == Tap::End.dim(&spec) && s.values.iter().all(|&v| v == 0.0)));
        assert!("side".parse::<Tap>().is_err());
    }
}
