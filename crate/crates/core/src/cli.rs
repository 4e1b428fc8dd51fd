//! Command-line front end. Each subcommand reads F4D/F4DW/CSV inputs,
//! writes its outputs plus a `manifest.txt` into the output directory, and
//! maps failures onto exit codes (2 usage, 3 input validation, 4 numerical).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evalkit::metrics::compute_metrics;
use crate::evalkit::pca::projections_csv;
use crate::evalkit::{export_report, extract_features, pca_project, slice_values, to_gray, write_pgm, SliceQuantity, Tap};
use crate::io::config::{self, Config};
use crate::io::f4d;
use crate::io::{load_params, save_params, RunManifest};
use crate::losses::AdvVariant;
use crate::mrsim::{mix_seed, synthesize, SnrEntry, SnrStratum};
use crate::net::ops::{channels_to_interleaved, interleaved_to_channels, upsample_interleaved};
use crate::net::{forward_generator, interpolate_weights, GeneratorSpec, Tensor};
use crate::patching::{augment, extract_pairs, infer_volume, LR_PATCH};
use crate::phantom::{first_argmax, make_phantom};
use crate::trainer::{
    run_stability_suite, stability_csv, train_stage1, train_stage2, training_log_csv, Dataset, TrainConfig,
    DEFAULT_LAMBDA_GRID,
};
use crate::volume::{decompose_regions, Dims, FluidMask, VelocityVolume};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const THREADS_ENV: &str = "F4D_THREADS";

const PHANTOM_HELP: &str = "\
Config keys (key = value, # comments):
  nx, ny, nz, nt        grid size and frame count (required)
  tube_radius           mm (required)
  v_peak                peak centerline velocity, m/s (required)
  spacing = 1.0         mm
  dt = 10.0             ms
  tube_axis = z         x | y | z
  offset_a = 0, offset_b = 0   centerline offset in the transverse axes, mm
  waveform              comma-separated per-frame scale (default: smooth systolic pulse)
  m_vessel, m_background  magnitude levels";

const SYNTH_HELP: &str = "\
Config keys (all optional):
  venc_low = 0.6          m/s
  tsnr_high_min = 8, tsnr_high_max = 12
  tsnr_low_min = 2, tsnr_low_max = 6
  tsnr_highvenc = 15
  magnitude_floor = 30
  downsample_factor = 2
  seed = 0
  noise_free = false";

const TRAIN_HELP: &str = "\
Config keys (all optional):
  epochs_stage1 = 20, epochs_stage2 = 20, batch_size = 8, lr = 0.0001
  variant = wasserstein   vanilla | relativistic | wasserstein
  lambda_g = 0.001, mu_g = 5e-7, mu_d = 5e-5, lambda_gp = 10
  seed = 0, disc_only = false
  g_rrdb = 2, g_width = 16, g_hr_blocks = 1
  d_down_blocks = 2, d_width = 8, d_hidden = 16";

#[derive(Debug, Parser)]
#[command(name = "flowsr", version, about = "Synthetic 4D flow MRI, super-resolution training and evaluation")]
pub struct Cli {
    /// Worker threads (default: $F4D_THREADS, else all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a tube-flow phantom: v_hr.f4d, magnitude.f4d, mask.f4d.
    #[command(after_help = PHANTOM_HELP)]
    Phantom(PhantomArgs),
    /// Simulate a dual-venc acquisition: lr.f4d, snr_log.csv.
    #[command(after_help = SYNTH_HELP)]
    Synth(SynthArgs),
    /// Extract paired HR/LR training patches: patches.f4d.
    Patch(PatchArgs),
    /// Two-stage training: stage1.f4dw, generator.f4dw, discriminator.f4dw, train_log.csv.
    #[command(after_help = TRAIN_HELP)]
    Train(TrainArgs),
    /// Tiled super-resolution of an LR volume: sr.f4d.
    Infer(InferArgs),
    /// Stratified velocity metrics: metrics.csv.
    Eval(EvalArgs),
    /// Weight interpolation between two generator checkpoints.
    Interp(InterpArgs),
    /// PCA of generator features: pca_<tap>.csv, variance_<tap>.csv.
    Pca(PcaArgs),
    /// Write one z-slice of speed or error as a binary graymap.
    ExportSlice(SliceArgs),
    /// Stage-2 runs over adversarial variants and λ_G values: stability.csv.
    #[command(after_help = TRAIN_HELP)]
    Stability(StabilityArgs),
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub hr: PathBuf,
    #[arg(long)]
    pub mag: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise_free: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PatchArgs {
    #[arg(long)]
    pub hr: PathBuf,
    #[arg(long)]
    pub lr: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Add the nine quarter-turn rotations of every patch.
    #[arg(long)]
    pub augment: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train_patches: PathBuf,
    #[arg(long)]
    pub val_patches: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long, required_unless_present = "identity_upsample")]
    pub checkpoint: Option<PathBuf>,
    /// Debug network: trilinear ×2 upsampling of each tile.
    #[arg(long, conflicts_with = "checkpoint")]
    pub identity_upsample: bool,
    #[arg(long)]
    pub lr: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub sr: PathBuf,
    #[arg(long)]
    pub hr: PathBuf,
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub snr_log: PathBuf,
    #[arg(long, default_value = "model")]
    pub model: String,
    /// Peak-systole frame (default: frame of maximum mean fluid speed in HR).
    #[arg(long)]
    pub peak_index: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InterpArgs {
    #[arg(long)]
    pub stage1: PathBuf,
    #[arg(long)]
    pub stage2: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.25, 0.5, 0.75, 1.0])]
    pub alphas: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TapArg {
    Middle,
    End,
}

#[derive(Debug, Args)]
pub struct PcaArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub patches: PathBuf,
    #[arg(long, value_enum, default_value = "end")]
    pub tap: TapArg,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 2)]
    pub components: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum QuantityArg {
    Speed,
    Error,
}

#[derive(Debug, Args)]
pub struct SliceArgs {
    #[arg(long)]
    pub volume: PathBuf,
    /// Needed for `--quantity error`.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub t: usize,
    #[arg(long)]
    pub z: usize,
    #[arg(long, value_enum, default_value = "speed")]
    pub quantity: QuantityArg,
    /// Gray-level window; defaults to [0, slice maximum].
    #[arg(long)]
    pub lo: Option<f64>,
    #[arg(long)]
    pub hi: Option<f64>,
    /// Output .pgm path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StabilityArgs {
    #[arg(long)]
    pub train_patches: PathBuf,
    #[arg(long)]
    pub val_patches: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = vec!["vanilla".to_string(), "relativistic".to_string(), "wasserstein".to_string()])]
    pub variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LAMBDA_GRID.to_vec())]
    pub lambdas: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Messages go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<String> = args
        .into_iter()
        .map(|a| a.into().to_string_lossy().into_owned())
        .collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    match execute(&cli.command, argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(s) => Some(
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got `{s}`")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::InvalidArgument("thread count must be at least 1".into()));
        }
        // A pool that already exists (second call in one process) is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn execute(cmd: &Command, argv: Vec<String>) -> Result<()> {
    let mut m = RunManifest::new(argv);
    let out_dir = match cmd {
        Command::Phantom(a) => cmd_phantom(a, &mut m)?,
        Command::Synth(a) => cmd_synth(a, &mut m)?,
        Command::Patch(a) => cmd_patch(a, &mut m)?,
        Command::Train(a) => cmd_train(a, &mut m)?,
        Command::Infer(a) => cmd_infer(a, &mut m)?,
        Command::Eval(a) => cmd_eval(a, &mut m)?,
        Command::Interp(a) => cmd_interp(a, &mut m)?,
        Command::Pca(a) => cmd_pca(a, &mut m)?,
        Command::ExportSlice(a) => cmd_export_slice(a, &mut m)?,
        Command::Stability(a) => cmd_stability(a, &mut m)?,
    };
    m.write(&out_dir)?;
    Ok(())
}

pub fn cmd_phantom(a: &PhantomArgs, m: &mut RunManifest) -> Result<PathBuf> {
    let cfg = Config::load(&a.config)?;
    let spec = config::phantom_spec(&cfg)?;
    let (v, mag, mask) = make_phantom(&spec)?;
    create_dir(&a.out)?;
    let paths = [a.out.join("v_hr.f4d"), a.out.join("magnitude.f4d"), a.out.join("mask.f4d")];
    f4d::write_velocity(&paths[0], &v)?;
    f4d::write_magnitude(&paths[1], &mag, spec.spacing, spec.dt)?;
    f4d::write_mask(&paths[2], &mask, spec.spacing, spec.dt)?;
    m.config = cfg.to_text();
    m.inputs.push(a.config.clone());
    m.outputs.extend(paths);
    Ok(a.out.clone())
}

pub fn snr_log_csv(log: &[SnrEntry]) -> String {
    let mut s = String::from("timestep,stratum,tsnr\n");
    for e in log {
        s.push_str(&format!("{},{},{}\n", e.timestep, e.stratum.name(), e.tsnr));
    }
    s
}

pub fn parse_snr_log(text: &str, path: &Path) -> Result<Vec<SnrEntry>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("timestep,stratum,tsnr") {
        return Err(Error::format(path, "expected header `timestep,stratum,tsnr`"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let bad = || Error::format(path, format!("line {}: malformed row `{l}`", i + 2));
            let f: Vec<&str> = l.trim().split(',').collect();
            if f.len() != 3 {
                return Err(bad());
            }
            let stratum = match f[1] {
                "high" => SnrStratum::High,
                "low" => SnrStratum::Low,
                _ => return Err(bad()),
            };
            Ok(SnrEntry {
                timestep: f[0].parse().map_err(|_| bad())?,
                stratum,
                tsnr: f[2].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn cmd_synth(a: &SynthArgs, m: &mut RunManifest) -> Result<PathBuf> {
    let mut cfg = match &a.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = a.seed {
        cfg.set("seed", s);
    }
    if a.noise_free {
        cfg.set("noise_free", true);
    }
    let acq = config::acquisition_config(&cfg)?;
    let v = f4d::read_velocity(&a.hr)?;
    let mag = f4d::read_magnitude(&a.mag)?;
    let mask = f4d::read_mask(&a.mask)?;
    let (lr, log) = synthesize(&v, &mag, &mask, &acq)?;
    create_dir(&a.out)?;
    let lr_path = a.out.join("lr.f4d");
    let log_path = a.out.join("snr_log.csv");
    f4d::write_velocity(&lr_path, &lr)?;
    write_text(&log_path, &snr_log_csv(&log))?;
    m.config = cfg.to_text();
    m.seeds.push(("acquisition".into(), acq.seed));
    m.inputs.extend([a.hr.clone(), a.mag.clone(), a.mask.clone()]);
    m.inputs.extend(a.config.clone());
    m.outputs.extend([lr_path, log_path]);
    Ok(a.out.clone())
}

pub fn cmd_patch(a: &PatchArgs, m: &mut RunManifest) -> Result<PathBuf> {
    let hr = f4d::read_velocity(&a.hr)?;
    let lr = f4d::read_velocity(&a.lr)?;
    let mask = f4d::read_mask(&a.mask)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(a.seed, &[]));
    let mut pairs = extract_pairs(&hr, &lr, &mask, a.count, &mut rng)?;
    if a.augment {
        pairs = pairs.iter().flat_map(augment).collect();
    }
    create_dir(&a.out)?;
    let path = a.out.join("patches.f4d");
    f4d::write_patches(&path, &pairs, hr.spacing, hr.dt)?;
    m.config = format!("count = {}\naugment = {}\n", a.count, a.augment);
    m.seeds.push(("patch".into(), a.seed));
    m.inputs.extend([a.hr.clone(), a.lr.clone(), a.mask.clone()]);
    m.outputs.push(path);
    Ok(a.out.clone())
}

fn load_train_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = seed {
        cfg.set("seed", s);
    }
    config::train_config(&cfg)
}

fn load_dataset(train: &Path, val: Option<&PathBuf>) -> Result<Dataset> {
    let t = f4d::read_patches(train)?;
    let v = match val {
        Some(p) => f4d::read_patches(p)?,
        None => Vec::new(),
    };
    Dataset::from_pairs(&t, &v)
}

pub fn cmd_train(a: &TrainArgs, m: &mut RunManifest) -> Result<PathBuf> {
    let cfg = load_train_config(a.config.as_ref(), a.seed)?;
    let data = load_dataset(&a.train_patches, a.val_patches.as_ref())?;
    let (theta1, run1) = train_stage1(&cfg, &data)?;
    let (theta_g, theta_d, run2) = train_stage2(&cfg, &data, &theta1)?;
    create_dir(&a.out)?;
    let paths = [
        a.out.join("stage1.f4dw"),
        a.out.join("generator.f4dw"),
        a.out.join("discriminator.f4dw"),
        a.out.join("train_log.csv"),
    ];
    save_params(&paths[0], &theta1)?;
    save_params(&paths[1], &theta_g)?;
    save_params(&paths[2], &theta_d)?;
    let mut records = run1.records;
    records.extend(run2.records);
    write_text(&paths[3], &training_log_csv(&records, cfg.loss.variant))?;
    m.config = config::train_config_text(&cfg);
    m.seeds.push(("train".into(), cfg.seed));
    m.inputs.push(a.train_patches.clone());
    m.inputs.extend(a.val_patches.clone());
    m.inputs.extend(a.config.clone());
    m.outputs.extend(paths);
    Ok(a.out.clone())
}

/// Tiled inference with a generator checkpoint, or with plain trilinear
/// upsampling when `params` is `None`.
pub fn infer_with(params: Option<&crate::net::ParamSet>, lr: &VelocityVolume) -> Result<VelocityVolume> {
    let tile = Dims::cube(LR_PATCH);
    if let Some(p) = params {
        GeneratorSpec::infer(p)?;
    }
    infer_volume(lr, |x| match params {
        None => Ok(upsample_interleaved(tile, x)),
        Some(p) => {
            let input = Tensor::new(vec![3, LR_PATCH, LR_PATCH, LR_PATCH], interleaved_to_channels(tile, x))?;
            let y = forward_generator(p, &input)?;
            if !y.is_finite() {
                return Err(Error::Numerical("generator produced non-finite values".into()));
            }
            Ok(channels_to_interleaved(tile.doubled(), y.data()))
        }
    })
}

pub fn cmd_infer(a: &InferArgs, m: &mut RunManifest) -> Result<PathBuf> {
    let lr = f4d::read_velocity(&a.lr)?;
    let params = a.checkpoint.as_deref().map(load_params).transpose()?;
    let sr = infer_with(params.as_ref(), &lr)?;
    create_dir(&a.out)?;
    let path = a.out.join("sr.f4d");
    f4d::write_velocity(&path, &sr)?;
    m.inputs.push(a.lr.clone());
    m.inputs.extend(a.checkpoint.clone());
    m.config = format!("identity_upsample = {}\n", a.identity_upsample);
    m.outputs.push(path);
    Ok(a.out.clone())
}

/// First frame with the largest mean speed over fluid voxels.
pub fn peak_frame(v: &VelocityVolume, mask: &FluidMask) -> Result<usize> {
    if v.dims() != mask.dims() {
        return Err(Error::ShapeMismatch("mask and velocity grids differ".into()));
    }
    let fluid: Vec<usize> = (0..mask.dims().len()).filter(|&i| mask.data()[i]).collect();
    if fluid.is_empty() {
        return Err(Error::EmptyInput("mask has no fluid voxels".into()));
    }
    let means: Vec<f64> = (0..v.nt())
        .map(|t| {
            fluid
                .iter()
                .map(|&i| {
                    let u = v.get(t, i);
                    (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
                })
                .sum::<f64>()
                / fluid.len() as f64
        })
        .collect();
    Ok(first_argmax(&means))
}

pub fn cmd_eval(a: &EvalArgs, m: &mut RunManifest) -> Result<PathBuf> {
    let sr = f4d::read_velocity(&a.sr)?;
    let hr = f4d::read_velocity(&a.hr)?;
    let mask = f4d::read_mask(&a.mask)?;
    let text = std::fs::read_to_string(&a.snr_log).map_err(|e| Error::io(&a.snr_log, e))?;
    let log = parse_snr_log(&text, &a.snr_log)?;
    let labels = decompose_regions(&mask)?;
    let peak = match a.peak_index {
        Some(p) => p,
        None => peak_frame(&hr, &mask)?,
    };
    let report = compute_metrics(&a.model, &sr, &hr, &labels, &log, peak)?;
    create_dir(&a.out)?;
    let path = a.out.join("metrics.csv");
    export_report(&[report], &path)?;
    m.config = format!("model = {}\npeak_index = {peak}\n", a.model);
    m.inputs.extend([a.sr.clone(), a.hr.clone(), a.mask.clone(), a.snr_log.clone()]);
    m.outputs.push(path);
    Ok(a.out.clone())
}

pub fn interp_file_name(alpha: f64) -> String {
    format!("interp_{alpha:.2}.f4dw")
}

pub fn cmd_interp(a: &InterpArgs, m: &mut RunManifest) -> Result<PathBuf> {
    let s1 = load_params(&a.stage1)?;
    let s2 = load_params(&a.stage2)?;
    create_dir(&a.out)?;
    for &alpha in &a.alphas {
        let p = interpolate_weights(&s1, &s2, alpha)?;
        let path = a.out.join(interp_file_name(alpha));
        save_params(&path, &p)?;
        m.outputs.push(path);
    }
    m.config = format!(
        "alphas = {}\n",
        a.alphas.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    );
    m.inputs.extend([a.stage1.clone(), a.stage2.clone()]);
    Ok(a.out.clone())
}

pub fn cmd_pca(a: &PcaArgs, m: &mut RunManifest) -> Result<PathBuf> {
    let params = load_params(&a.checkpoint)?;
    let patches = f4d::read_patches(&a.patches)?;
    let tap = match a.tap {
        TapArg::Middle => Tap::Middle,
        TapArg::End => Tap::End,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(a.seed, &[]));
    let samples = extract_features(&params, &patches, tap, a.count, &mut rng)?;
    let pca = pca_project(&samples, a.components)?;
    create_dir(&a.out)?;
    let proj = a.out.join(format!("pca_{}.csv", tap.name()));
    let var = a.out.join(format!("variance_{}.csv", tap.name()));
    write_text(&proj, &projections_csv(&samples, &pca))?;
    let mut v = String::from("component,explained_fraction\n");
    for (j, f) in pca.fractions.iter().enumerate() {
        v.push_str(&format!("{},{}\n", j + 1, f));
    }
    write_text(&var, &v)?;
    m.config = format!("tap = {}\ncount = {}\ncomponents = {}\n", tap.name(), a.count, a.components);
    m.seeds.push(("pca".into(), a.seed));
    m.inputs.extend([a.checkpoint.clone(), a.patches.clone()]);
    m.outputs.extend([proj, var]);
    Ok(a.out.clone())
}

pub fn cmd_export_slice(a: &SliceArgs, m: &mut RunManifest) -> Result<PathBuf> {
    let v = f4d::read_velocity(&a.volume)?;
    let reference = a.reference.as_deref().map(f4d::read_velocity).transpose()?;
    let q = match a.quantity {
        QuantityArg::Speed => SliceQuantity::Speed,
        QuantityArg::Error => SliceQuantity::Error,
    };
    let (w, h, vals) = slice_values(&v, reference.as_ref(), a.t, a.z, q)?;
    let lo = a.lo.unwrap_or(0.0);
    let hi = a.hi.unwrap_or_else(|| vals.iter().cloned().fold(0.0, f64::max));
    let dir = match a.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    create_dir(&dir)?;
    write_pgm(&a.out, w, h, &to_gray(&vals, lo, hi))?;
    m.config = format!("t = {}\nz = {}\nquantity = {:?}\nlo = {lo}\nhi = {hi}\n", a.t, a.z, a.quantity);
    m.inputs.push(a.volume.clone());
    m.inputs.extend(a.reference.clone());
    m.outputs.push(a.out.clone());
    Ok(dir)
}

pub fn cmd_stability(a: &StabilityArgs, m: &mut RunManifest) -> Result<PathBuf> {
    let cfg = load_train_config(a.config.as_ref(), None)?;
    let variants = a
        .variants
        .iter()
        .map(|s| s.parse::<AdvVariant>())
        .collect::<Result<Vec<_>>>()?;
    let data = load_dataset(&a.train_patches, Some(&a.val_patches))?;
    let report = run_stability_suite(&cfg, &data, &variants, &a.lambdas)?;
    create_dir(&a.out)?;
    let path = a.out.join("stability.csv");
    write_text(&path, &stability_csv(&report))?;
    for (row, run) in report.rows.iter().zip(&report.runs) {
        let p = a.out.join(format!("log_{}_{}.csv", row.variant, row.lambda_g));
        write_text(&p, &training_log_csv(&run.records, run.variant))?;
        m.outputs.push(p);
    }
    m.config = config::train_config_text(&cfg);
    m.config.push_str(&format!(
        "reference_point = {}\n",
        crate::trainer::FULL_SCALE_REFERENCE
    ));
    m.seeds.push(("train".into(), cfg.seed));
    m.inputs.extend([a.train_patches.clone(), a.val_patches.clone()]);
    m.outputs.push(path);
    Ok(a.out.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_log_round_trip() {
        let log = vec![
            SnrEntry {
                timestep: 0,
                stratum: SnrStratum::High,
                tsnr: 10.5,
            },
            SnrEntry {
                timestep: 1,
                stratum: SnrStratum::Low,
                tsnr: 3.25,
            },
        ];
        let p = Path::new("snr.csv");
        assert_eq!(parse_snr_log(&snr_log_csv(&log), p).unwrap(), log);
        assert!(parse_snr_log("timestep,stratum,tsnr\n0,mid,1\n", p).is_err());
        assert!(parse_snr_log("a,b\n", p).is_err());
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(run(["flowsr"]), EXIT_USAGE);
        assert_eq!(run(["flowsr", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["flowsr", "phantom", "--out", "x"]), EXIT_USAGE);
        assert_eq!(run(["flowsr", "--help"]), EXIT_OK);
    }

    #[test]
    fn validation_errors_exit_with_three() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("p.cfg");
        std::fs::write(&cfg, "nx = 16\n").unwrap();
        let out = dir.path().join("o");
        let code = run(["flowsr", "phantom", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, 3);
        let missing = dir.path().join("none.f4d");
        let code = run([
            "flowsr",
            "infer",
            "--identity-upsample",
            "--lr",
            missing.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 3);
    }

    #[test]
    fn peak_frame_picks_fastest_fluid_frame() {
        let d = Dims::new(2, 1, 1);
        let mut v = VelocityVolume::zeros(d, 3, 1.0, 1.0).unwrap();
        v.set(1, 0, [0.0, 2.0, 0.0]);
        v.set(2, 0, [2.0, 0.0, 0.0]);
        v.set(2, 1, [9.0, 0.0, 0.0]);
        let mask = FluidMask::from_vec(d, vec![true, false]).unwrap();
        assert_eq!(peak_frame(&v, &mask).unwrap(), 1);
    }

    #[test]
    fn interp_names_are_stable() {
        assert_eq!(interp_file_name(0.0), "interp_0.00.f4dw");
        assert_eq!(interp_file_name(0.25), "interp_0.25.f4dw");
    }
}
