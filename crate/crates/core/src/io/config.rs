//! Flat `key = value` configuration files with `#` comments, plus the
//! typed views used by the commands.

use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::losses::{AdvVariant, LossConfig};
use crate::mrsim::AcquisitionConfig;
use crate::net::{DiscriminatorSpec, GeneratorSpec};
use crate::phantom::{default_waveform, PhantomSpec};
use crate::trainer::TrainConfig;
use crate::volume::{Axis, Dims};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    source: String,
    /// key -> (value, 1-based line)
    entries: IndexMap<String, (String, usize)>,
}

impl Config {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut entries = IndexMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Config {
                path: source.to_string(),
                line,
                msg,
            };
            let (k, v) = content
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{content}`")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(err(format!("invalid key `{k}`")));
            }
            if let Some((_, first)) = entries.get(k) {
                return Err(err(format!("duplicate key `{k}` (first set on line {first})")));
            }
            entries.insert(k.to_string(), (v.to_string(), line));
        }
        Ok(Config {
            source: source.to_string(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let line = self.entries.get(key).map_or(0, |e| e.1);
        self.entries.insert(key.to_string(), (value.to_string(), line));
    }

    /// Rejects keys outside `known`, reporting the first offender's line.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        for (k, (_, line)) in &self.entries {
            if !known.contains(&k.as_str()) {
                return Err(Error::Config {
                    path: self.source.clone(),
                    line: *line,
                    msg: format!("unknown key `{k}`"),
                });
            }
        }
        Ok(())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|e| Error::Config {
                path: self.source.clone(),
                line: *line,
                msg: format!("bad value for `{key}`: {e}"),
            }),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some((v, line)) = self.entries.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| Error::Config {
                    path: self.source.clone(),
                    line: *line,
                    msg: format!("bad list entry `{}` in `{key}`: {e}", s.trim()),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Canonical `key = value` lines in insertion order.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, (v, _))| format!("{k} = {v}\n")).collect()
    }
}

pub const PHANTOM_KEYS: &[&str] = &[
    "nx",
    "ny",
    "nz",
    "nt",
    "spacing",
    "dt",
    "tube_radius",
    "tube_axis",
    "offset_a",
    "offset_b",
    "v_peak",
    "waveform",
    "m_vessel",
    "m_background",
];

/// Required: `nx ny nz nt tube_radius v_peak`.
pub fn phantom_spec(cfg: &Config) -> Result<PhantomSpec> {
    cfg.check_keys(PHANTOM_KEYS)?;
    let dims = Dims::new(cfg.require("nx")?, cfg.require("ny")?, cfg.require("nz")?);
    let nt: usize = cfg.require("nt")?;
    let mut spec = PhantomSpec::new(dims, nt, cfg.require("tube_radius")?, cfg.require("v_peak")?);
    spec.spacing = cfg.get_or("spacing", spec.spacing)?;
    spec.dt = cfg.get_or("dt", spec.dt)?;
    if let Some(a) = cfg.get::<String>("tube_axis")? {
        spec.tube_axis = match a.as_str() {
            "x" => Axis::X,
            "y" => Axis::Y,
            "z" => Axis::Z,
            other => return Err(Error::InvalidArgument(format!("tube_axis must be x, y or z, got `{other}`"))),
        };
    }
    spec.centerline_offset = [cfg.get_or("offset_a", 0.0)?, cfg.get_or("offset_b", 0.0)?];
    spec.waveform = cfg.get_list("waveform")?.unwrap_or_else(|| default_waveform(nt));
    spec.m_vessel = cfg.get_or("m_vessel", spec.m_vessel)?;
    spec.m_background = cfg.get_or("m_background", spec.m_background)?;
    spec.validate()?;
    Ok(spec)
}

pub const ACQUISITION_KEYS: &[&str] = &[
    "venc_low",
    "tsnr_high_min",
    "tsnr_high_max",
    "tsnr_low_min",
    "tsnr_low_max",
    "tsnr_highvenc",
    "magnitude_floor",
    "downsample_factor",
    "seed",
    "noise_free",
];

/// Every key is optional.
pub fn acquisition_config(cfg: &Config) -> Result<AcquisitionConfig> {
    cfg.check_keys(ACQUISITION_KEYS)?;
    let d = AcquisitionConfig::default();
    let a = AcquisitionConfig {
        venc_low: cfg.get_or("venc_low", d.venc_low)?,
        tsnr_high_range: (
            cfg.get_or("tsnr_high_min", d.tsnr_high_range.0)?,
            cfg.get_or("tsnr_high_max", d.tsnr_high_range.1)?,
        ),
        tsnr_low_range: (
            cfg.get_or("tsnr_low_min", d.tsnr_low_range.0)?,
            cfg.get_or("tsnr_low_max", d.tsnr_low_range.1)?,
        ),
        tsnr_highvenc: cfg.get_or("tsnr_highvenc", d.tsnr_highvenc)?,
        magnitude_floor: cfg.get_or("magnitude_floor", d.magnitude_floor)?,
        downsample_factor: cfg.get_or("downsample_factor", d.downsample_factor)?,
        seed: cfg.get_or("seed", d.seed)?,
        noise_free: cfg.get_or("noise_free", d.noise_free)?,
    };
    a.validate()?;
    Ok(a)
}

pub const TRAIN_KEYS: &[&str] = &[
    "epochs_stage1",
    "epochs_stage2",
    "batch_size",
    "lr",
    "variant",
    "lambda_g",
    "mu_g",
    "mu_d",
    "lambda_gp",
    "seed",
    "disc_only",
    "g_rrdb",
    "g_width",
    "g_hr_blocks",
    "d_down_blocks",
    "d_width",
    "d_hidden",
];

/// Every key is optional.
pub fn train_config(cfg: &Config) -> Result<TrainConfig> {
    cfg.check_keys(TRAIN_KEYS)?;
    let d = TrainConfig::default();
    let l = LossConfig::default();
    let g = GeneratorSpec::default();
    let ds = DiscriminatorSpec::default();
    let t = TrainConfig {
        epochs_stage1: cfg.get_or("epochs_stage1", d.epochs_stage1)?,
        epochs_stage2: cfg.get_or("epochs_stage2", d.epochs_stage2)?,
        batch_size: cfg.get_or("batch_size", d.batch_size)?,
        lr: cfg.get_or("lr", d.lr)?,
        loss: LossConfig {
            lambda_g: cfg.get_or("lambda_g", l.lambda_g)?,
            mu_g: cfg.get_or("mu_g", l.mu_g)?,
            mu_d: cfg.get_or("mu_d", l.mu_d)?,
            lambda_gp: cfg.get_or("lambda_gp", l.lambda_gp)?,
            variant: cfg.get_or::<AdvVariant>("variant", l.variant)?,
        },
        seed: cfg.get_or("seed", d.seed)?,
        disc_only: cfg.get_or("disc_only", d.disc_only)?,
        generator: GeneratorSpec {
            n_rrdb: cfg.get_or("g_rrdb", g.n_rrdb)?,
            width: cfg.get_or("g_width", g.width)?,
            n_hr_blocks: cfg.get_or("g_hr_blocks", g.n_hr_blocks)?,
        },
        discriminator: DiscriminatorSpec {
            n_down_blocks: cfg.get_or("d_down_blocks", ds.n_down_blocks)?,
            width: cfg.get_or("d_width", ds.width)?,
            hidden: cfg.get_or("d_hidden", ds.hidden)?,
        },
    };
    t.validate()?;
    Ok(t)
}

/// Full `key = value` rendering of a training configuration.
pub fn train_config_text(t: &TrainConfig) -> String {
    let mut c = Config::default();
    c.set("epochs_stage1", t.epochs_stage1);
    c.set("epochs_stage2", t.epochs_stage2);
    c.set("batch_size", t.batch_size);
    c.set("lr", t.lr);
    c.set("variant", t.loss.variant);
    c.set("lambda_g", t.loss.lambda_g);
    c.set("mu_g", t.loss.mu_g);
    c.set("mu_d", t.loss.mu_d);
    c.set("lambda_gp", t.loss.lambda_gp);
    c.set("seed", t.seed);
    c.set("disc_only", t.disc_only);
    c.set("g_rrdb", t.generator.n_rrdb);
    c.set("g_width", t.generator.width);
    c.set("g_hr_blocks", t.generator.n_hr_blocks);
    c.set("d_down_blocks", t.discriminator.n_down_blocks);
    c.set("d_width", t.discriminator.width);
    c.set("d_hidden", t.discriminator.hidden);
    c.to_text()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let c = Config::parse("# header\n a = 1 # trailing\n\nb=two\n", "t").unwrap();
        assert_eq!(c.raw("a"), Some("1"));
        assert_eq!(c.raw("b"), Some("two"));
        assert_eq!(c.get::<usize>("a").unwrap(), Some(1));
        assert_eq!(c.keys().collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Config::parse("a = 1\n\nnot a pair\n", "cfg.txt").unwrap_err();
        assert_eq!(e.to_string(), "cfg.txt:3: expected `key = value`, found `not a pair`");
        let e = Config::parse("a = 1\na = 2\n", "c").unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }));
        let c = Config::parse("x = 1\nn = abc\n", "c").unwrap();
        assert!(matches!(c.get::<usize>("n"), Err(Error::Config { line: 2, .. })));
        assert!(matches!(c.check_keys(&["n"]), Err(Error::Config { line: 1, .. })));
    }

    #[test]
    fn missing_required_key_is_named() {
        let c = Config::parse("nx = 32\nny = 32\nnz = 32\nnt = 4\nv_peak = 1.0\n", "p").unwrap();
        let e = phantom_spec(&c).unwrap_err();
        assert!(matches!(&e, Error::MissingKey(k) if k == "tube_radius"));
        assert!(e.to_string().contains("tube_radius"));
    }

    #[test]
    fn phantom_config_sets_fields() {
        let c = Config::parse(
            "nx=16\nny=16\nnz=24\nnt=3\ntube_radius=4\nv_peak=1.2\ntube_axis=y\nwaveform=0.2,1,0.5\n",
            "p",
        )
        .unwrap();
        let s = phantom_spec(&c).unwrap();
        assert_eq!(s.dims, Dims::new(16, 16, 24));
        assert_eq!(s.tube_axis, Axis::Y);
        assert_eq!(s.waveform, vec![0.2, 1.0, 0.5]);
    }

    #[test]
    fn train_config_text_round_trips() {
        let t = TrainConfig {
            seed: 99,
            disc_only: true,
            loss: LossConfig {
                variant: AdvVariant::Relativistic,
                lambda_g: 0.01,
                ..Default::default()
            },
            ..Default::default()
        };
        let c = Config::parse(&train_config_text(&t), "t").unwrap();
        assert_eq!(train_config(&c).unwrap(), t);
        assert_eq!(train_config(&Config::default()).unwrap(), TrainConfig::default());
    }

    #[test]
    fn acquisition_defaults_and_overrides() {
        assert_eq!(acquisition_config(&Config::default()).unwrap(), AcquisitionConfig::default());
        let c = Config::parse("seed = 5\nnoise_free = true\n", "a").unwrap();
        let a = acquisition_config(&c).unwrap();
        assert_eq!((a.seed, a.noise_free), (5, true));
        let bad = Config::parse("venc = 1\n", "a").unwrap();
        assert!(acquisition_config(&bad).is_err());
    }
}
