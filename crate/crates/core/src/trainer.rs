//! Two-stage training: generator-only warm start, then alternating
//! discriminator/generator updates under one adversarial variant.
//!
//! Every random draw comes from its own seed-derived stream (shuffle per
//! global epoch, generator init, discriminator init, penalty β per epoch), so
//! the discriminator cannot perturb the generator's trajectory.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::evalkit::metrics::patch_mre;
use crate::losses::{adversarial, data_terms, fluid_weights, gradient_penalty_with, mask_nonfluid, AdvVariant, LossConfig, LossReport};
use crate::mrsim::mix_seed;
use crate::net::ops::interleaved_to_channels;
use crate::net::params::BoundParams;
use crate::net::{
    adam_step, discriminator_graph, generator_graph, AdamConfig, AdamState, DiscriminatorSpec, GeneratorSpec, Graph,
    ParamSet, Tensor, Var,
};
use crate::patching::{PatchPair, HR_PATCH, LR_PATCH};
use crate::volume::{Dims, Region};

pub const STREAM_SHUFFLE: u64 = 10;
pub const STREAM_G_INIT: u64 = 11;
pub const STREAM_D_INIT: u64 = 12;
pub const STREAM_BETA: u64 = 13;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub loss: LossConfig,
    pub seed: u64,
    /// Train the discriminator without feeding its loss back (λ_G = 0).
    pub disc_only: bool,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_stage1: 20,
            epochs_stage2: 20,
            batch_size: 8,
            lr: 1e-4,
            loss: LossConfig::default(),
            seed: 0,
            disc_only: false,
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.lr)));
        }
        self.loss.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()
    }

    pub fn effective_lambda_g(&self) -> f64 {
        if self.disc_only {
            0.0
        } else {
            self.loss.lambda_g
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    fn loss_cfg(&self) -> LossConfig {
        LossConfig {
            lambda_g: self.effective_lambda_g(),
            ..self.loss
        }
    }
}

fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, tags))
}

pub fn init_generator(cfg: &TrainConfig) -> Result<ParamSet> {
    cfg.generator.init(&mut stream(cfg.seed, &[STREAM_G_INIT]))
}

pub fn init_discriminator(cfg: &TrainConfig) -> Result<ParamSet> {
    cfg.discriminator.init(&mut stream(cfg.seed, &[STREAM_D_INIT]))
}

/// One training example in network layout.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub x_lr: Tensor,
    /// Channel-first HR target.
    pub x_hr: Vec<f64>,
    pub labels: Vec<Region>,
    pub fluid: Vec<bool>,
    fluid_weights: Arc<Vec<f64>>,
}

impl TrainSample {
    pub fn from_pair(p: &PatchPair) -> Result<Self> {
        let lr = Dims::cube(LR_PATCH);
        let hr = Dims::cube(HR_PATCH);
        if p.x_lr.len() != 3 * lr.len() || p.x_hr.len() != 3 * hr.len() || p.labels_hr.len() != hr.len() {
            return Err(Error::ShapeMismatch("patch pair does not have 12^3 / 24^3 extents".into()));
        }
        Ok(TrainSample {
            x_lr: Tensor::new(vec![3, LR_PATCH, LR_PATCH, LR_PATCH], interleaved_to_channels(lr, &p.x_lr))?,
            x_hr: interleaved_to_channels(hr, &p.x_hr),
            fluid: p.labels_hr.iter().map(|&l| l != Region::NonFluid).collect(),
            fluid_weights: Arc::new(fluid_weights(&p.labels_hr)),
            labels: p.labels_hr.clone(),
        })
    }

    fn hr_tensor(&self) -> Tensor {
        Tensor::new(vec![3, HR_PATCH, HR_PATCH, HR_PATCH], self.x_hr.clone()).expect("fixed shape")
    }
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<TrainSample>,
    pub val: Vec<TrainSample>,
}

impl Dataset {
    pub fn from_pairs(train: &[PatchPair], val: &[PatchPair]) -> Result<Self> {
        Ok(Dataset {
            train: train.iter().map(TrainSample::from_pair).collect::<Result<_>>()?,
            val: val.iter().map(TrainSample::from_pair).collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based index across both stages.
    pub epoch: usize,
    pub stage: u8,
    pub split: Split,
    pub report: LossReport,
    /// Percent, pooled over fluid voxels.
    pub mre: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub variant: AdvVariant,
    pub records: Vec<EpochRecord>,
    pub theta_g: ParamSet,
    pub theta_d: Option<ParamSet>,
}

impl TrainRun {
    pub fn last(&self, split: Split) -> Option<&EpochRecord> {
        self.records.iter().rev().find(|r| r.split == split)
    }

    pub fn first(&self, split: Split) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.split == split)
    }
}

pub const LOG_HEADER: &str =
    "epoch,stage,variant,split,mse_nonfluid,mse_bound,mse_core,adv_g,adv_d,l2_g,l2_d,total_g,total_d,mre";

/// Training-log CSV text for one or more runs.
pub fn training_log_csv(records: &[EpochRecord], variant: AdvVariant) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in records {
        let _ = write!(s, "{},{},{},{}", r.epoch, r.stage, variant, r.split.name());
        for v in r.report.values() {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{}", r.mre);
    }
    s
}

struct GenPass {
    graph: Graph,
    params: BoundParams,
    out: Var,
}

fn gen_pass(theta: &ParamSet, spec: &GeneratorSpec, s: &TrainSample, track: bool) -> Result<GenPass> {
    let mut graph = Graph::new();
    let params = theta.bind(&mut graph, track);
    let x = graph.constant(s.x_lr.clone());
    let out = generator_graph(&mut graph, spec, &params, x)?.output;
    Ok(GenPass { graph, params, out })
}

fn critic_scores(theta_d: &ParamSet, spec: &DiscriminatorSpec, xs: &[Tensor]) -> Result<Vec<f64>> {
    xs.par_iter()
        .map(|x| {
            let mut g = Graph::new();
            let bp = theta_d.bind(&mut g, false);
            let xv = g.constant(x.clone());
            let s = discriminator_graph(&mut g, spec, &bp, xv)?;
            Ok(g.value(s).data()[0])
        })
        .collect()
}

fn sum_grads(base: &ParamSet, parts: Vec<ParamSet>) -> Result<ParamSet> {
    let mut acc = base.zeros_like();
    for p in parts {
        acc.add_scaled(&p, 1.0)?;
    }
    Ok(acc)
}

/// Adds the critic (held constant) on top of each generator pass, seeds the
/// data and adversarial terms and returns `(L_G^adv, ∇θ_G total_G)`.
#[allow(clippy::too_many_arguments)]
fn generator_backward(
    theta_g: &ParamSet,
    critic: Option<(&ParamSet, &DiscriminatorSpec)>,
    loss: &LossConfig,
    batch: &[&TrainSample],
    passes: &mut [GenPass],
    data_grads: &[Vec<f64>],
    hr_tensors: &[Tensor],
) -> Result<(f64, ParamSet)> {
    let bsz = batch.len() as f64;
    let mut adv_g = 0.0;
    let mut score_seeds: Option<Vec<f64>> = None;
    let mut score_vars: Vec<Option<Var>> = vec![None; passes.len()];
    if let Some((theta_d, dspec)) = critic {
        let outs: Vec<Result<Var>> = passes
            .par_iter_mut()
            .zip(batch.par_iter())
            .map(|(p, s)| {
                let masked = p.graph.mul_const(p.out, s.fluid_weights.clone());
                let bp = theta_d.bind(&mut p.graph, false);
                discriminator_graph(&mut p.graph, dspec, &bp, masked)
            })
            .collect();
        let mut sr_scores = Vec::with_capacity(passes.len());
        for (k, v) in outs.into_iter().enumerate() {
            let v = v?;
            sr_scores.push(passes[k].graph.value(v).data()[0]);
            score_vars[k] = Some(v);
        }
        let hr_scores = critic_scores(theta_d, dspec, hr_tensors)?;
        let adv = adversarial(loss.variant, &hr_scores, &sr_scores, 0.0)?;
        adv_g = adv.l_g;
        if loss.lambda_g != 0.0 {
            score_seeds = Some(adv.dg_dsr.iter().map(|d| loss.lambda_g * d).collect());
        }
    }

    let grads: Vec<ParamSet> = passes
        .par_iter_mut()
        .enumerate()
        .map(|(k, p)| {
            let shape = p.graph.value(p.out).shape().to_vec();
            let seed = Tensor::new(shape, data_grads[k].iter().map(|v| v / bsz).collect())?;
            let mut seeds = vec![(p.out, seed)];
            if let (Some(ss), Some(v)) = (score_seeds.as_ref(), score_vars[k]) {
                seeds.push((v, Tensor::scalar(ss[k])));
            }
            let gr = p.graph.backward(&seeds, false)?;
            Ok(p.params.gradients(&p.graph, &gr))
        })
        .collect::<Result<_>>()?;
    let mut total = sum_grads(theta_g, grads)?;
    total.add_scaled(theta_g, 2.0 * loss.mu_g)?;
    if total.iter().any(|(_, t)| !t.is_finite()) {
        return Err(Error::Numerical("non-finite generator gradient".into()));
    }
    Ok((adv_g, total))
}

/// Generator objective on one batch with a fixed critic, and its gradient.
pub fn generator_objective(
    theta_g: &ParamSet,
    gspec: &GeneratorSpec,
    critic: Option<(&ParamSet, &DiscriminatorSpec)>,
    loss: &LossConfig,
    batch: &[&TrainSample],
) -> Result<(f64, ParamSet)> {
    let bsz = batch.len() as f64;
    let mut passes: Vec<GenPass> = batch
        .par_iter()
        .map(|s| gen_pass(theta_g, gspec, s, true))
        .collect::<Result<_>>()?;
    let mut data = 0.0;
    let mut data_grads = Vec::with_capacity(batch.len());
    for (s, p) in batch.iter().zip(&passes) {
        let (t, g) = data_terms(p.graph.value(p.out).data(), &s.x_hr, &s.labels)?;
        data += (t[0] + t[1] + t[2]) / bsz;
        data_grads.push(g);
    }
    let hr: Vec<Tensor> = batch.iter().map(|s| s.hr_tensor()).collect();
    let (adv_g, grad) = generator_backward(theta_g, critic, loss, batch, &mut passes, &data_grads, &hr)?;
    let adv = if critic.is_some() { loss.lambda_g * adv_g } else { 0.0 };
    Ok((data + adv + loss.mu_g * theta_g.sum_squares(), grad))
}

/// Critic adversarial loss (penalty included for Wasserstein) on real and
/// masked generated patches, and the gradient of `L_D + μ_D‖θ_D‖²`.
pub fn discriminator_gradient(
    theta_d: &ParamSet,
    dspec: &DiscriminatorSpec,
    loss: &LossConfig,
    hr: &[Tensor],
    masked_sr: &[Tensor],
    betas: &[f64],
) -> Result<(f64, ParamSet)> {
    let (gp, gp_grads) = if loss.variant == AdvVariant::Wasserstein {
        gradient_penalty_with(dspec, theta_d, hr, masked_sr, betas, loss.lambda_gp)?
    } else {
        (0.0, theta_d.zeros_like())
    };
    let mut passes: Vec<(Graph, BoundParams, Var, Var)> = hr
        .par_iter()
        .zip(masked_sr.par_iter())
        .map(|(h, m)| {
            let mut g = Graph::new();
            let bp = theta_d.bind(&mut g, true);
            let hv = g.constant(h.clone());
            let sh = discriminator_graph(&mut g, dspec, &bp, hv)?;
            let mv = g.constant(m.clone());
            let ss = discriminator_graph(&mut g, dspec, &bp, mv)?;
            Ok((g, bp, sh, ss))
        })
        .collect::<Result<_>>()?;
    let hr_scores: Vec<f64> = passes.iter().map(|p| p.0.value(p.2).data()[0]).collect();
    let sr_scores: Vec<f64> = passes.iter().map(|p| p.0.value(p.3).data()[0]).collect();
    let adv = adversarial(loss.variant, &hr_scores, &sr_scores, gp)?;
    let grads: Vec<ParamSet> = passes
        .par_iter_mut()
        .enumerate()
        .map(|(k, (g, bp, sh, ss))| {
            let gr = g.backward(
                &[(*sh, Tensor::scalar(adv.dd_dhr[k])), (*ss, Tensor::scalar(adv.dd_dsr[k]))],
                false,
            )?;
            Ok(bp.gradients(g, &gr))
        })
        .collect::<Result<_>>()?;
    let mut total = sum_grads(theta_d, grads)?;
    total.add_scaled(&gp_grads, 1.0)?;
    total.add_scaled(theta_d, 2.0 * loss.mu_d)?;
    if total.iter().any(|(_, t)| !t.is_finite()) {
        return Err(Error::Numerical("non-finite discriminator gradient".into()));
    }
    Ok((adv.l_d, total))
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    loss: LossConfig,
    theta_g: ParamSet,
    adam_g: AdamState,
    critic: Option<(ParamSet, AdamState)>,
}

impl Trainer<'_> {
    fn adversarial(&self) -> bool {
        self.critic.is_some()
    }

    fn step(&mut self, batch: &[&TrainSample], beta_rng: &mut ChaCha8Rng) -> Result<LossReport> {
        let gspec = self.cfg.generator;
        let dspec = self.cfg.discriminator;
        let bsz = batch.len() as f64;
        let mut passes: Vec<GenPass> = batch
            .par_iter()
            .map(|s| gen_pass(&self.theta_g, &gspec, s, true))
            .collect::<Result<_>>()?;
        let srs: Vec<Vec<f64>> = passes.iter().map(|p| p.graph.value(p.out).data().to_vec()).collect();

        let mut rep = LossReport {
            l2_g: self.theta_g.sum_squares(),
            ..Default::default()
        };
        let mut data_grads = Vec::with_capacity(batch.len());
        for (s, sr) in batch.iter().zip(&srs) {
            let (terms, grad) = data_terms(sr, &s.x_hr, &s.labels)?;
            rep.mse_nonfluid += terms[0] / bsz;
            rep.mse_bound += terms[1] / bsz;
            rep.mse_core += terms[2] / bsz;
            data_grads.push(grad);
        }

        let hr_tensors: Vec<Tensor> = if self.adversarial() {
            batch.iter().map(|s| s.hr_tensor()).collect()
        } else {
            Vec::new()
        };

        if let Some((theta_d, adam_d)) = self.critic.as_mut() {
            let masked: Vec<Tensor> = batch
                .iter()
                .zip(&srs)
                .map(|(s, sr)| Tensor::new(vec![3, HR_PATCH, HR_PATCH, HR_PATCH], mask_nonfluid(sr, &s.labels)?))
                .collect::<Result<_>>()?;
            let betas: Vec<f64> = if self.loss.variant == AdvVariant::Wasserstein {
                (0..batch.len()).map(|_| beta_rng.random_range(0.0..=1.0)).collect()
            } else {
                Vec::new()
            };
            let (l_d, total) = discriminator_gradient(theta_d, &dspec, &self.loss, &hr_tensors, &masked, &betas)?;
            rep.adv_d = l_d;
            rep.l2_d = theta_d.sum_squares();
            adam_step(theta_d, &total, adam_d, &self.cfg.adam())?;
        }

        let critic = self.critic.as_ref().map(|c| (&c.0, &dspec));
        let (adv_g, total) = generator_backward(
            &self.theta_g,
            critic,
            &self.loss,
            batch,
            &mut passes,
            &data_grads,
            &hr_tensors,
        )?;
        rep.adv_g = adv_g;
        adam_step(&mut self.theta_g, &total, &mut self.adam_g, &self.cfg.adam())?;
        Ok(rep)
    }

    fn evaluate(&self, samples: &[TrainSample]) -> Result<(LossReport, f64)> {
        let gspec = self.cfg.generator;
        let n = samples.len() as f64;
        let srs: Vec<Vec<f64>> = samples
            .par_iter()
            .map(|s| {
                let p = gen_pass(&self.theta_g, &gspec, s, false)?;
                Ok(p.graph.value(p.out).data().to_vec())
            })
            .collect::<Result<_>>()?;
        let mut rep = LossReport {
            l2_g: self.theta_g.sum_squares(),
            ..Default::default()
        };
        let (mut mre_sum, mut mre_count) = (0.0, 0usize);
        for (s, sr) in samples.iter().zip(&srs) {
            let (t, _) = data_terms(sr, &s.x_hr, &s.labels)?;
            rep.mse_nonfluid += t[0] / n;
            rep.mse_bound += t[1] / n;
            rep.mse_core += t[2] / n;
            let (m, c) = patch_mre(sr, &s.x_hr, &s.fluid);
            mre_sum += m;
            mre_count += c;
        }
        if let Some((theta_d, _)) = self.critic.as_ref() {
            let dspec = self.cfg.discriminator;
            let hr: Vec<Tensor> = samples.iter().map(|s| s.hr_tensor()).collect();
            let masked: Vec<Tensor> = samples
                .iter()
                .zip(&srs)
                .map(|(s, sr)| Tensor::new(vec![3, HR_PATCH, HR_PATCH, HR_PATCH], mask_nonfluid(sr, &s.labels)?))
                .collect::<Result<_>>()?;
            let adv = adversarial(
                self.loss.variant,
                &critic_scores(theta_d, &dspec, &hr)?,
                &critic_scores(theta_d, &dspec, &masked)?,
                0.0,
            )?;
            rep.adv_g = adv.l_g;
            rep.adv_d = adv.l_d;
            rep.l2_d = theta_d.sum_squares();
        }
        let mre = if mre_count == 0 { 0.0 } else { mre_sum / mre_count as f64 };
        Ok((rep.with_totals(&self.loss), mre))
    }

    fn run_epochs(
        &mut self,
        data: &Dataset,
        stage: u8,
        epoch_offset: usize,
        epochs: usize,
        records: &mut Vec<EpochRecord>,
    ) -> Result<()> {
        for e in 0..epochs {
            let global = epoch_offset + e;
            let mut order: Vec<usize> = (0..data.train.len()).collect();
            order.shuffle(&mut stream(self.cfg.seed, &[STREAM_SHUFFLE, global as u64]));
            let mut beta_rng = stream(self.cfg.seed, &[STREAM_BETA, global as u64]);
            let mut acc = LossReport::default();
            let mut batches = 0usize;
            for chunk in order.chunks(self.cfg.batch_size) {
                let batch: Vec<&TrainSample> = chunk.iter().map(|&i| &data.train[i]).collect();
                let r = self.step(&batch, &mut beta_rng)?;
                for (a, v) in [
                    (&mut acc.mse_nonfluid, r.mse_nonfluid),
                    (&mut acc.mse_bound, r.mse_bound),
                    (&mut acc.mse_core, r.mse_core),
                    (&mut acc.adv_g, r.adv_g),
                    (&mut acc.adv_d, r.adv_d),
                    (&mut acc.l2_g, r.l2_g),
                    (&mut acc.l2_d, r.l2_d),
                ] {
                    *a += v;
                }
                batches += 1;
            }
            let nb = batches.max(1) as f64;
            for v in [
                &mut acc.mse_nonfluid,
                &mut acc.mse_bound,
                &mut acc.mse_core,
                &mut acc.adv_g,
                &mut acc.adv_d,
                &mut acc.l2_g,
                &mut acc.l2_d,
            ] {
                *v /= nb;
            }
            // Training MRE is measured after the epoch's updates, like validation.
            let (_, train_mre) = self.evaluate(&data.train)?;
            records.push(EpochRecord {
                epoch: global + 1,
                stage,
                split: Split::Train,
                report: acc.with_totals(&self.loss),
                mre: train_mre,
            });
            if !data.val.is_empty() {
                let (rep, mre) = self.evaluate(&data.val)?;
                records.push(EpochRecord {
                    epoch: global + 1,
                    stage,
                    split: Split::Val,
                    report: rep,
                    mre,
                });
            }
        }
        Ok(())
    }
}

fn check_data(data: &Dataset) -> Result<()> {
    if data.train.is_empty() {
        return Err(Error::EmptyInput("training set is empty".into()));
    }
    Ok(())
}

/// Generator-only training from `theta` for `epochs` epochs, numbered from
/// `epoch_offset`, with a fresh optimizer state.
pub fn train_generator_only(
    cfg: &TrainConfig,
    data: &Dataset,
    theta: ParamSet,
    epoch_offset: usize,
    epochs: usize,
    stage: u8,
) -> Result<(ParamSet, Vec<EpochRecord>)> {
    cfg.validate()?;
    check_data(data)?;
    let mut t = Trainer {
        cfg,
        loss: LossConfig {
            lambda_g: 0.0,
            ..cfg.loss
        },
        adam_g: AdamState::new(&theta),
        theta_g: theta,
        critic: None,
    };
    let mut records = Vec::new();
    t.run_epochs(data, stage, epoch_offset, epochs, &mut records)?;
    Ok((t.theta_g, records))
}

/// Stage 1: data-matching terms and L2 only.
pub fn train_stage1(cfg: &TrainConfig, data: &Dataset) -> Result<(ParamSet, TrainRun)> {
    let theta = init_generator(cfg)?;
    let (theta_g, records) = train_generator_only(cfg, data, theta, 0, cfg.epochs_stage1, 1)?;
    Ok((
        theta_g.clone(),
        TrainRun {
            variant: cfg.loss.variant,
            records,
            theta_g,
            theta_d: None,
        },
    ))
}

/// Stage 2: one discriminator step then one generator step per batch.
/// Both optimizers start fresh.
pub fn train_stage2(cfg: &TrainConfig, data: &Dataset, theta_g_init: &ParamSet) -> Result<(ParamSet, ParamSet, TrainRun)> {
    cfg.validate()?;
    check_data(data)?;
    let expected = GeneratorSpec::infer(theta_g_init)?;
    if expected != cfg.generator {
        return Err(Error::StructureMismatch(format!(
            "initial generator {:?} does not match configured {:?}",
            expected, cfg.generator
        )));
    }
    let theta_d = init_discriminator(cfg)?;
    let mut t = Trainer {
        cfg,
        loss: cfg.loss_cfg(),
        theta_g: theta_g_init.clone(),
        adam_g: AdamState::new(theta_g_init),
        critic: Some((theta_d.clone(), AdamState::new(&theta_d))),
    };
    let mut records = Vec::new();
    t.run_epochs(data, 2, cfg.epochs_stage1, cfg.epochs_stage2, &mut records)?;
    let theta_d = t.critic.take().map(|c| c.0).expect("critic present");
    Ok((
        t.theta_g.clone(),
        theta_d.clone(),
        TrainRun {
            variant: cfg.loss.variant,
            records,
            theta_g: t.theta_g,
            theta_d: Some(theta_d),
        },
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityRow {
    pub variant: AdvVariant,
    pub lambda_g: f64,
    pub final_val_mre: f64,
    pub best_val_mre: f64,
    pub final_val_data_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    pub runs: Vec<TrainRun>,
}

pub const DEFAULT_LAMBDA_GRID: [f64; 3] = [1e-4, 1e-3, 1e-2];

/// Full-scale reference outcome (200 epochs, λ_G = 1e-3, patient data),
/// kept as report metadata; toy runs are not expected to reach it.
pub const FULL_SCALE_REFERENCE: &str = "val_mre=19.6 epochs=200 lambda_g=0.001";

/// Trains stage 1 once, then one stage-2 run per (variant, λ_G) cell.
pub fn run_stability_suite(
    base: &TrainConfig,
    data: &Dataset,
    variants: &[AdvVariant],
    lambdas: &[f64],
) -> Result<StabilityReport> {
    if data.val.is_empty() {
        return Err(Error::EmptyInput("stability suite needs a validation set".into()));
    }
    let (theta1, _) = train_stage1(base, data)?;
    let cells: Vec<(AdvVariant, f64)> = variants
        .iter()
        .flat_map(|&v| lambdas.iter().map(move |&l| (v, l)))
        .collect();
    let results: Vec<Result<(StabilityRow, TrainRun)>> = cells
        .par_iter()
        .map(|&(variant, lambda_g)| {
            let cfg = TrainConfig {
                loss: LossConfig {
                    variant,
                    lambda_g,
                    ..base.loss
                },
                ..*base
            };
            let (_, _, run) = train_stage2(&cfg, data, &theta1)?;
            let vals: Vec<&EpochRecord> = run.records.iter().filter(|r| r.split == Split::Val).collect();
            let last = vals.last().ok_or_else(|| Error::EmptyInput("no validation epochs".into()))?;
            let row = StabilityRow {
                variant,
                lambda_g,
                final_val_mre: last.mre,
                best_val_mre: vals.iter().map(|r| r.mre).fold(f64::INFINITY, f64::min),
                final_val_data_loss: last.report.data_loss(),
            };
            Ok((row, run))
        })
        .collect();
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for r in results {
        let (row, run) = r?;
        rows.push(row);
        runs.push(run);
    }
    Ok(StabilityReport { rows, runs })
}

pub fn stability_csv(report: &StabilityReport) -> String {
    let mut s = String::from("variant,lambda_g,final_val_mre,best_val_mre,final_val_data_loss\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.variant, r.lambda_g, r.final_val_mre, r.best_val_mre, r.final_val_data_loss
        );
    }
    s
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::patching::extract_pairs;
    use crate::phantom::{make_phantom, PhantomSpec};

    pub(crate) fn toy_config() -> TrainConfig {
        TrainConfig {
            epochs_stage1: 2,
            epochs_stage2: 2,
            batch_size: 2,
            lr: 1e-3,
            seed: 7,
            generator: GeneratorSpec {
                n_rrdb: 1,
                width: 4,
                n_hr_blocks: 1,
            },
            discriminator: DiscriminatorSpec {
                n_down_blocks: 3,
                width: 2,
                hidden: 4,
            },
            ..Default::default()
        }
    }

    pub(crate) fn toy_data(n_train: usize, n_val: usize) -> Dataset {
        let mut out = Vec::new();
        for (radius, count, seed) in [(7.0, n_train, 1u64), (5.5, n_val, 2)] {
            let spec = PhantomSpec::new(Dims::cube(32), 4, radius, 0.8);
            let (v, _, mask) = make_phantom(&spec).unwrap();
            let lr_data: Vec<f64> = {
                // Point-sampled LR keeps the test independent of the acquisition model.
                let hd = v.dims();
                let ld = hd.halved();
                let mut d = Vec::new();
                for t in 0..v.nt() {
                    for i in 0..ld.len() {
                        let (x, y, z) = ld.coords(i);
                        d.extend(v.get(t, hd.index(2 * x, 2 * y, 2 * z)));
                    }
                }
                d
            };
            let lr = crate::volume::VelocityVolume::from_vec(v.dims().halved(), v.nt(), 2.0, 10.0, lr_data).unwrap();
            let pairs = if count == 0 {
                Vec::new()
            } else {
                extract_pairs(&v, &lr, &mask, count, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
            };
            out.push(pairs);
        }
        Dataset::from_pairs(&out[0], &out[1]).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let cfg = TrainConfig {
            epochs_stage1: 0,
            ..toy_config()
        };
        let data = toy_data(2, 0);
        let (theta, run) = train_stage1(&cfg, &data).unwrap();
        assert_eq!(theta, init_generator(&cfg).unwrap());
        assert!(run.records.is_empty());
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(train_stage1(&toy_config(), &Dataset::default()), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn stage1_is_deterministic_and_logs_consistent_totals() {
        let cfg = toy_config();
        let data = toy_data(3, 2);
        let (a, ra) = train_stage1(&cfg, &data).unwrap();
        let (b, rb) = train_stage1(&cfg, &data).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            training_log_csv(&ra.records, cfg.loss.variant),
            training_log_csv(&rb.records, cfg.loss.variant)
        );
        assert_eq!(ra.records.len(), 4);
        for r in &ra.records {
            let rep = r.report;
            let recomputed = rep.data_loss() + 0.0 * rep.adv_g + cfg.loss.mu_g * rep.l2_g;
            assert!((rep.total_g - recomputed).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_lambda_stage2_follows_generator_only_trajectory() {
        let cfg = TrainConfig {
            disc_only: true,
            ..toy_config()
        };
        let data = toy_data(3, 1);
        let (theta1, _) = train_stage1(&cfg, &data).unwrap();
        let (g2, _, run) = train_stage2(&cfg, &data, &theta1).unwrap();
        let (g_only, _) = train_generator_only(&cfg, &data, theta1, cfg.epochs_stage1, cfg.epochs_stage2, 2).unwrap();
        assert_eq!(g2, g_only);
        assert!(run.records.iter().all(|r| r.stage == 2));
        assert_eq!(run.records[0].epoch, cfg.epochs_stage1 + 1);
    }

    #[test]
    fn adversarial_stage_runs_for_every_variant() {
        let data = toy_data(2, 1);
        for variant in AdvVariant::ALL {
            let cfg = TrainConfig {
                epochs_stage2: 1,
                loss: LossConfig {
                    variant,
                    ..Default::default()
                },
                ..toy_config()
            };
            let theta1 = init_generator(&cfg).unwrap();
            let (g, d, run) = train_stage2(&cfg, &data, &theta1).unwrap();
            assert_ne!(g, theta1);
            assert_eq!(DiscriminatorSpec::infer(&d).unwrap(), cfg.discriminator);
            let r = run.last(Split::Train).unwrap().report;
            assert!(r.adv_d.is_finite() && r.adv_g.is_finite());
            let cfgl = cfg.loss;
            assert!((r.total_g - (r.data_loss() + cfgl.lambda_g * r.adv_g + cfgl.mu_g * r.l2_g)).abs() < 1e-9);
        }
    }

    #[test]
    fn stage2_rejects_mismatched_generator() {
        let cfg = toy_config();
        let other = GeneratorSpec {
            width: 6,
            ..cfg.generator
        }
        .init(&mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
        assert!(matches!(train_stage2(&cfg, &toy_data(1, 0), &other), Err(Error::StructureMismatch(_))));
    }

    #[test]
    fn single_cell_suite_reports_one_row() {
        let cfg = TrainConfig {
            epochs_stage1: 1,
            epochs_stage2: 1,
            ..toy_config()
        };
        let rep = run_stability_suite(&cfg, &toy_data(2, 1), &[AdvVariant::Wasserstein], &[1e-3]).unwrap();
        assert_eq!(rep.rows.len(), 1);
        let csv = stability_csv(&rep);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("wasserstein,0.001,"));
    }

    #[test]
    fn generator_objective_gradient_matches_finite_differences() {
        use rand_distr::{Distribution, StandardNormal};
        let cfg = toy_config();
        let data = toy_data(2, 0);
        let batch: Vec<&TrainSample> = data.train.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Zero biases on zero-valued background voxels put activations exactly
        // on the leaky kink, where one-sided slopes differ.
        let mut theta_g = init_generator(&cfg).unwrap();
        let mut theta_d = init_discriminator(&cfg).unwrap();
        for th in [&mut theta_g, &mut theta_d] {
            for (name, t) in th.iter_mut() {
                if name.ends_with(".b") {
                    for v in t.data_mut() {
                        *v = rng.random_range(0.05..0.15);
                    }
                }
            }
        }
        let mut dir = theta_g.zeros_like();
        for (_, t) in dir.iter_mut() {
            for v in t.data_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
        }
        for variant in AdvVariant::ALL {
            // A large λ_G makes the adversarial path dominate the check.
            let loss = LossConfig {
                variant,
                lambda_g: 0.5,
                mu_g: 1e-3,
                ..Default::default()
            };
            let critic = Some((&theta_d, &cfg.discriminator));
            let (_, grad) = generator_objective(&theta_g, &cfg.generator, critic, &loss, &batch).unwrap();
            let analytic: f64 = grad
                .iter()
                .zip(dir.iter())
                .map(|((_, g), (_, d))| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            let h = 1e-6;
            let eval = |s: f64| {
                let mut th = theta_g.clone();
                th.add_scaled(&dir, s).unwrap();
                generator_objective(&th, &cfg.generator, critic, &loss, &batch).unwrap().0
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let tol = 1e-6 * analytic.abs().max(numeric.abs()).max(1e-3);
            assert!((analytic - numeric).abs() < tol, "{variant}: {analytic} vs {numeric}");
        }
    }

    #[test]
    fn discriminator_gradient_matches_finite_differences() {
        use rand_distr::{Distribution, StandardNormal};
        let cfg = toy_config();
        let data = toy_data(2, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let theta_g = init_generator(&cfg).unwrap();
        let mut theta_d = init_discriminator(&cfg).unwrap();
        for (name, t) in theta_d.iter_mut() {
            if name.ends_with(".b") {
                for v in t.data_mut() {
                    *v = rng.random_range(0.05..0.15);
                }
            }
        }
        let hr: Vec<Tensor> = data.train.iter().map(|s| s.hr_tensor()).collect();
        let masked: Vec<Tensor> = data
            .train
            .iter()
            .map(|s| {
                let sr = crate::net::forward_generator(&theta_g, &s.x_lr).unwrap();
                Tensor::new(sr.shape().to_vec(), mask_nonfluid(sr.data(), &s.labels).unwrap()).unwrap()
            })
            .collect();
        let betas = [0.3, 0.8];
        let mut dir = theta_d.zeros_like();
        for (_, t) in dir.iter_mut() {
            for v in t.data_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
        }
        for variant in AdvVariant::ALL {
            let loss = LossConfig {
                variant,
                mu_d: 1e-2,
                ..Default::default()
            };
            let (_, grad) = discriminator_gradient(&theta_d, &cfg.discriminator, &loss, &hr, &masked, &betas).unwrap();
            let analytic: f64 = grad
                .iter()
                .zip(dir.iter())
                .map(|((_, g), (_, d))| g.data().iter().zip(d.data()).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            let h = 1e-6;
            let eval = |s: f64| {
                let mut th = theta_d.clone();
                th.add_scaled(&dir, s).unwrap();
                let (l_d, _) = discriminator_gradient(&th, &cfg.discriminator, &loss, &hr, &masked, &betas).unwrap();
                l_d + loss.mu_d * th.sum_squares()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let tol = 1e-6 * analytic.abs().max(numeric.abs()).max(1e-3);
            assert!((analytic - numeric).abs() < tol, "{variant}: {analytic} vs {numeric}");
        }
    }
}
