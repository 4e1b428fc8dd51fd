//! Region-decomposed data losses, discriminator input masking and the three
//! adversarial objectives with their score derivatives.
//!
//! Patch arrays here are channel-first: component `c` of voxel `i` lives at
//! `c * n + i` where `n` is the voxel count.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::net::params::BoundParams;
use crate::net::{discriminator_graph, DiscriminatorSpec, Graph, ParamSet, Tensor, Var};
use crate::volume::Region;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AdvVariant {
    Vanilla,
    Relativistic,
    Wasserstein,
}

impl AdvVariant {
    pub const ALL: [AdvVariant; 3] = [AdvVariant::Vanilla, AdvVariant::Relativistic, AdvVariant::Wasserstein];

    pub fn name(&self) -> &'static str {
        match self {
            AdvVariant::Vanilla => "vanilla",
            AdvVariant::Relativistic => "relativistic",
            AdvVariant::Wasserstein => "wasserstein",
        }
    }
}

impl fmt::Display for AdvVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdvVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" => Ok(AdvVariant::Vanilla),
            "relativistic" => Ok(AdvVariant::Relativistic),
            "wasserstein" | "wgan" => Ok(AdvVariant::Wasserstein),
            _ => Err(Error::InvalidArgument(format!("unknown adversarial variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda_g: f64,
    pub mu_g: f64,
    pub mu_d: f64,
    pub lambda_gp: f64,
    pub variant: AdvVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_g: 1e-3,
            mu_g: 5e-7,
            mu_d: 5e-5,
            lambda_gp: 10.0,
            variant: AdvVariant::Wasserstein,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_g", self.lambda_g),
            ("mu_g", self.mu_g),
            ("mu_d", self.mu_d),
            ("lambda_gp", self.lambda_gp),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub mse_nonfluid: f64,
    pub mse_bound: f64,
    pub mse_core: f64,
    pub adv_g: f64,
    pub adv_d: f64,
    pub l2_g: f64,
    pub l2_d: f64,
    pub total_g: f64,
    pub total_d: f64,
}

impl LossReport {
    pub const FIELDS: [&'static str; 9] = [
        "mse_nonfluid",
        "mse_bound",
        "mse_core",
        "adv_g",
        "adv_d",
        "l2_g",
        "l2_d",
        "total_g",
        "total_d",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.mse_nonfluid,
            self.mse_bound,
            self.mse_core,
            self.adv_g,
            self.adv_d,
            self.l2_g,
            self.l2_d,
            self.total_g,
            self.total_d,
        ]
    }

    pub fn data_loss(&self) -> f64 {
        self.mse_nonfluid + self.mse_bound + self.mse_core
    }

    /// Recomputes both totals from the component fields.
    pub fn with_totals(mut self, cfg: &LossConfig) -> Self {
        self.total_g = self.data_loss() + cfg.lambda_g * self.adv_g + cfg.mu_g * self.l2_g;
        self.total_d = self.adv_d + cfg.mu_d * self.l2_d;
        self
    }
}

fn check_patch(sr: &[f64], hr: &[f64], labels: &[Region]) -> Result<usize> {
    let n = labels.len();
    if sr.len() != 3 * n || hr.len() != 3 * n {
        return Err(Error::ShapeMismatch(format!(
            "patch lengths {} / {} do not match 3 x {} labels",
            sr.len(),
            hr.len(),
            n
        )));
    }
    Ok(n)
}

fn sq_diff(a: &[f64], b: &[f64], n: usize, i: usize) -> f64 {
    (0..3).map(|c| (a[c * n + i] - b[c * n + i]).powi(2)).sum()
}

/// Mean squared vector error over the voxels labelled `region`; 0 when empty.
pub fn region_mse(sr: &[f64], hr: &[f64], labels: &[Region], region: Region) -> Result<f64> {
    let n = check_patch(sr, hr, labels)?;
    let (mut acc, mut count) = (0.0, 0usize);
    for (i, &l) in labels.iter().enumerate() {
        if l == region {
            acc += sq_diff(sr, hr, n, i);
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { acc / count as f64 })
}

/// Zeroes every NonFluid voxel of a channel-first patch.
pub fn mask_nonfluid(sr: &[f64], labels: &[Region]) -> Result<Vec<f64>> {
    let n = labels.len();
    if sr.len() != 3 * n {
        return Err(Error::ShapeMismatch(format!("patch length {} vs 3 x {}", sr.len(), n)));
    }
    Ok(sr
        .iter()
        .enumerate()
        .map(|(j, &v)| if labels[j % n] == Region::NonFluid { 0.0 } else { v })
        .collect())
}

/// Fluid indicator repeated per component, for use as a graph constant.
pub fn fluid_weights(labels: &[Region]) -> Vec<f64> {
    let w: Vec<f64> = labels
        .iter()
        .map(|&l| if l == Region::NonFluid { 0.0 } else { 1.0 })
        .collect();
    [w.as_slice(), w.as_slice(), w.as_slice()].concat()
}

/// The three data terms, with NonFluid measured against a zero target, and
/// the derivative of their sum with respect to `sr`.
pub fn data_terms(sr: &[f64], hr: &[f64], labels: &[Region]) -> Result<([f64; 3], Vec<f64>)> {
    let n = check_patch(sr, hr, labels)?;
    let mut counts = [0usize; 3];
    for &l in labels {
        counts[l as usize] += 1;
    }
    let mut sums = [0.0; 3];
    let mut grad = vec![0.0; 3 * n];
    for (i, &l) in labels.iter().enumerate() {
        let r = l as usize;
        let inv = 1.0 / counts[r] as f64;
        for c in 0..3 {
            let j = c * n + i;
            let target = if l == Region::NonFluid { 0.0 } else { hr[j] };
            let d = sr[j] - target;
            sums[r] += d * d;
            grad[j] = 2.0 * d * inv;
        }
    }
    let mut means = [0.0; 3];
    for r in 0..3 {
        if counts[r] > 0 {
            means[r] = sums[r] / counts[r] as f64;
        }
    }
    Ok((means, grad))
}

/// Adversarial losses and their derivatives with respect to each score.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvTerms {
    pub l_g: f64,
    pub l_d: f64,
    pub dg_dhr: Vec<f64>,
    pub dg_dsr: Vec<f64>,
    pub dd_dhr: Vec<f64>,
    pub dd_dsr: Vec<f64>,
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_scores(hr: &[f64], sr: &[f64]) -> Result<()> {
    if hr.is_empty() || sr.is_empty() {
        return Err(Error::EmptyInput("score list is empty".into()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn adv_vanilla(hr: &[f64], sr: &[f64]) -> Result<AdvTerms> {
    check_scores(hr, sr)?;
    let (bh, bs) = (hr.len() as f64, sr.len() as f64);
    let l_g = sr.iter().map(|&s| softplus(-s)).sum::<f64>() / bs;
    let l_d = hr.iter().map(|&h| softplus(-h)).sum::<f64>() / bh + sr.iter().map(|&s| softplus(s)).sum::<f64>() / bs;
    Ok(AdvTerms {
        l_g,
        l_d,
        dg_dhr: vec![0.0; hr.len()],
        dg_dsr: sr.iter().map(|&s| -sigmoid(-s) / bs).collect(),
        dd_dhr: hr.iter().map(|&h| -sigmoid(-h) / bh).collect(),
        dd_dsr: sr.iter().map(|&s| sigmoid(s) / bs).collect(),
    })
}

/// Relativistic average form: each score is compared with the batch mean of
/// the opposite set.
pub fn adv_relativistic(hr: &[f64], sr: &[f64]) -> Result<AdvTerms> {
    check_scores(hr, sr)?;
    let (bh, bs) = (hr.len() as f64, sr.len() as f64);
    let (mh, ms) = (mean(hr), mean(sr));
    let a: Vec<f64> = hr.iter().map(|h| h - ms).collect();
    let b: Vec<f64> = sr.iter().map(|s| s - mh).collect();
    let l_d = a.iter().map(|&x| softplus(-x)).sum::<f64>() / bh + b.iter().map(|&x| softplus(x)).sum::<f64>() / bs;
    let l_g = a.iter().map(|&x| softplus(x)).sum::<f64>() / bh + b.iter().map(|&x| softplus(-x)).sum::<f64>() / bs;

    let sum_sig_b = b.iter().map(|&x| sigmoid(x)).sum::<f64>();
    let sum_sig_neg_a = a.iter().map(|&x| sigmoid(-x)).sum::<f64>();
    let sum_sig_a = a.iter().map(|&x| sigmoid(x)).sum::<f64>();
    let sum_sig_neg_b = b.iter().map(|&x| sigmoid(-x)).sum::<f64>();

    let dd_dhr = a.iter().map(|&x| -sigmoid(-x) / bh - sum_sig_b / (bs * bh)).collect();
    let dd_dsr = b.iter().map(|&x| sum_sig_neg_a / (bh * bs) + sigmoid(x) / bs).collect();
    let dg_dsr = b.iter().map(|&x| -sum_sig_a / (bh * bs) - sigmoid(-x) / bs).collect();
    let dg_dhr = a.iter().map(|&x| sigmoid(x) / bh + sum_sig_neg_b / (bs * bh)).collect();
    Ok(AdvTerms {
        l_g,
        l_d,
        dg_dhr,
        dg_dsr,
        dd_dhr,
        dd_dsr,
    })
}

pub fn adv_wasserstein(hr: &[f64], sr: &[f64], gp: f64) -> Result<AdvTerms> {
    check_scores(hr, sr)?;
    if !(gp >= 0.0) {
        return Err(Error::InvalidArgument(format!("gradient penalty must be non-negative, got {gp}")));
    }
    let (bh, bs) = (hr.len() as f64, sr.len() as f64);
    Ok(AdvTerms {
        l_g: mean(sr),
        l_d: mean(hr) - mean(sr) + gp,
        dg_dhr: vec![0.0; hr.len()],
        dg_dsr: vec![1.0 / bs; sr.len()],
        dd_dhr: vec![1.0 / bh; hr.len()],
        dd_dsr: vec![-1.0 / bs; sr.len()],
    })
}

pub fn adversarial(variant: AdvVariant, hr: &[f64], sr: &[f64], gp: f64) -> Result<AdvTerms> {
    match variant {
        AdvVariant::Vanilla => adv_vanilla(hr, sr),
        AdvVariant::Relativistic => adv_relativistic(hr, sr),
        AdvVariant::Wasserstein => adv_wasserstein(hr, sr, gp),
    }
}

/// Generator-side loss report for one patch (discriminator fields zero).
pub fn generator_total(
    sr: &[f64],
    hr: &[f64],
    labels: &[Region],
    adv_g: f64,
    theta_g: &ParamSet,
    cfg: &LossConfig,
) -> Result<LossReport> {
    let ([nf, b, c], _) = data_terms(sr, hr, labels)?;
    Ok(LossReport {
        mse_nonfluid: nf,
        mse_bound: b,
        mse_core: c,
        adv_g,
        l2_g: theta_g.sum_squares(),
        ..Default::default()
    }
    .with_totals(cfg))
}

/// A scalar-valued critic recorded on a graph.
pub trait Critic: Sync {
    fn score(&self, g: &mut Graph, params: &BoundParams, x: Var) -> Result<Var>;
}

impl Critic for DiscriminatorSpec {
    fn score(&self, g: &mut Graph, params: &BoundParams, x: Var) -> Result<Var> {
        discriminator_graph(g, self, params, x)
    }
}

/// Batch-mean gradient penalty `λ·(‖∇D(x̂)‖ − 1)²` at `x̂ = βx_HR + (1−β)x_SR`,
/// with its gradient with respect to the critic parameters.
pub fn gradient_penalty_with<C: Critic>(
    critic: &C,
    params: &ParamSet,
    x_hr: &[Tensor],
    x_sr: &[Tensor],
    betas: &[f64],
    lambda: f64,
) -> Result<(f64, ParamSet)> {
    if x_hr.is_empty() {
        return Err(Error::EmptyInput("gradient penalty batch is empty".into()));
    }
    if x_hr.len() != x_sr.len() || x_hr.len() != betas.len() {
        return Err(Error::ShapeMismatch("gradient penalty batch sizes differ".into()));
    }
    let bsz = x_hr.len() as f64;
    let per_sample: Vec<Result<(f64, ParamSet)>> = (0..x_hr.len())
        .into_par_iter()
        .map(|k| {
            let beta = betas[k];
            if !(0.0..=1.0).contains(&beta) {
                return Err(Error::InvalidArgument(format!("beta {beta} outside [0, 1]")));
            }
            let (h, s) = (&x_hr[k], &x_sr[k]);
            if h.shape() != s.shape() {
                return Err(Error::ShapeMismatch("HR and SR patch shapes differ".into()));
            }
            let xhat: Vec<f64> = h
                .data()
                .iter()
                .zip(s.data())
                .map(|(a, b)| beta * a + (1.0 - beta) * b)
                .collect();
            let mut g = Graph::new();
            let bp = params.bind(&mut g, true);
            let xv = g.leaf(Tensor::new(h.shape().to_vec(), xhat)?, true);
            let score = critic.score(&mut g, &bp, xv)?;
            let first = g.backward(&[(score, Tensor::scalar(1.0))], true)?;
            let gx = first
                .get(xv)
                .ok_or_else(|| Error::Graph("critic input not reached".into()))?;
            let gxd = g.value(gx).data().to_vec();
            let norm = gxd.iter().map(|v| v * v).sum::<f64>().sqrt();
            let value = lambda * (norm - 1.0).powi(2) / bsz;
            let coef = if norm > 0.0 { lambda * 2.0 * (norm - 1.0) / (norm * bsz) } else { 0.0 };
            let seed = Tensor::new(g.value(gx).shape().to_vec(), gxd.iter().map(|v| coef * v).collect())?;
            let second = g.backward(&[(gx, seed)], false)?;
            Ok((value, bp.gradients(&g, &second)))
        })
        .collect();
    let mut total = 0.0;
    let mut grads = params.zeros_like();
    for r in per_sample {
        let (v, gr) = r?;
        total += v;
        grads.add_scaled(&gr, 1.0)?;
    }
    Ok((total, grads))
}

pub fn gradient_penalty(
    disc_params: &ParamSet,
    x_hr: &[Tensor],
    x_sr: &[Tensor],
    betas: &[f64],
    lambda: f64,
) -> Result<(f64, ParamSet)> {
    let spec = DiscriminatorSpec::infer(disc_params)?;
    gradient_penalty_with(&spec, disc_params, x_hr, x_sr, betas, lambda)
}
