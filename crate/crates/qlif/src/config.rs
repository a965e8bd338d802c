//! Run configuration. Precedence: defaults, then a `key = value` file,
//! then command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use qlif_core::network::ThetaInit;
use qlif_core::neuron::{DecayMode, QlifConfig};
use qlif_core::training::AdamConfig;
use sha2::{Digest, Sha256};

use crate::data::DatasetName;
use crate::error::{Error, IoContext, Result};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    QsnnDense,
    QscnnConv,
    LifDense,
}

impl Preset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::QsnnDense => "qsnn-dense",
            Preset::QscnnConv => "qscnn-conv",
            Preset::LifDense => "lif-dense",
        }
    }

    /// Learning rate used when none is configured.
    pub fn default_lr(&self) -> f64 {
        match self {
            Preset::QscnnConv => 1e-3,
            _ => AdamConfig::default().lr,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "qsnn-dense" => Ok(Preset::QsnnDense),
            "qscnn-conv" => Ok(Preset::QscnnConv),
            "lif-dense" => Ok(Preset::LifDense),
            other => Err(Error::Config(format!("unknown model '{other}' (qsnn-dense, qscnn-conv, lif-dense)"))),
        }
    }
}

pub fn parse_decay_mode(s: &str) -> Result<DecayMode> {
    match s {
        "paper-exact" | "exact" => Ok(DecayMode::PaperExact),
        "physical-exponential" | "physical" | "exponential" => Ok(DecayMode::PhysicalExponential),
        other => Err(Error::Config(format!("unknown decay mode '{other}' (paper-exact, physical-exponential)"))),
    }
}

pub fn decay_mode_str(mode: DecayMode) -> &'static str {
    match mode {
        DecayMode::PaperExact => "paper-exact",
        DecayMode::PhysicalExponential => "physical-exponential",
    }
}

pub fn parse_theta_init(s: &str) -> Result<ThetaInit> {
    match s {
        "fan-in" => Ok(ThetaInit::FanIn),
        "sqrt-fan-in" => Ok(ThetaInit::SqrtFanIn),
        other => Err(Error::Config(format!("unknown theta init '{other}' (fan-in, sqrt-fan-in)"))),
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunConfig {
    pub dataset: DatasetName,
    pub model: Preset,
    pub hidden: usize,
    pub filters: usize,
    pub kernel: usize,
    pub timesteps: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` selects [`Preset::default_lr`].
    pub lr: Option<f64>,
    pub seed: u64,
    pub decay_mode: DecayMode,
    pub threshold: f64,
    pub t1: f64,
    pub theta_init: ThetaInit,
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub val_fraction: f64,
    /// Directory of IDX files used instead of the download cache.
    pub data_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Worker threads, 0 for all cores. Does not affect results.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetName::Mnist,
            model: Preset::QsnnDense,
            hidden: 100,
            filters: 12,
            kernel: 5,
            timesteps: 25,
            epochs: 5,
            batch_size: 128,
            lr: None,
            seed: 0,
            decay_mode: DecayMode::PaperExact,
            threshold: 0.5,
            t1: 1.0,
            theta_init: ThetaInit::FanIn,
            train_subset: None,
            test_subset: None,
            val_fraction: 0.0,
            data_dir: None,
            cache_dir: None,
            out_dir: PathBuf::from("qlif-run"),
            threads: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    /// Sets one field from its flag name (with or without leading dashes,
    /// hyphens or underscores).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim_start_matches('-').replace('_', "-");
        let value = value.trim();
        match key.as_str() {
            "dataset" => self.dataset = value.parse()?,
            "model" => self.model = value.parse()?,
            "hidden" => self.hidden = parse(&key, value)?,
            "filters" => self.filters = parse(&key, value)?,
            "kernel" => self.kernel = parse(&key, value)?,
            "timesteps" => self.timesteps = parse(&key, value)?,
            "epochs" => self.epochs = parse(&key, value)?,
            "batch-size" => self.batch_size = parse(&key, value)?,
            "lr" => self.lr = optional(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "decay-mode" => self.decay_mode = parse_decay_mode(value)?,
            "threshold" => self.threshold = parse(&key, value)?,
            "t1" => self.t1 = parse(&key, value)?,
            "theta-init" => self.theta_init = parse_theta_init(value)?,
            "train-subset" => self.train_subset = optional(&key, value)?,
            "test-subset" => self.test_subset = optional(&key, value)?,
            "val-fraction" => self.val_fraction = parse(&key, value)?,
            "data-dir" => self.data_dir = optional(&key, value)?,
            "cache-dir" => self.cache_dir = optional(&key, value)?,
            "out-dir" => self.out_dir = parse(&key, value)?,
            "threads" => self.threads = parse(&key, value)?,
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value).map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        self.apply_text(&std::fs::read_to_string(path).at(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.neuron().validate()?;
        let positive = [
            ("hidden", self.hidden),
            ("filters", self.filters),
            ("kernel", self.kernel),
            ("timesteps", self.timesteps),
            ("epochs", self.epochs),
            ("batch-size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(self.lr().is_finite() && self.lr() >= 0.0) {
            return Err(Error::Config(format!("lr must be finite and >= 0, got {}", self.lr())));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val-fraction must lie in [0, 1), got {}", self.val_fraction)));
        }
        Ok(())
    }

    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.model.default_lr())
    }

    pub fn neuron(&self) -> QlifConfig {
        QlifConfig { threshold: self.threshold, t1: self.t1, decay_mode: self.decay_mode, ..QlifConfig::default() }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            timesteps: self.timesteps,
            batch_size: self.batch_size,
            seed: self.seed,
            shuffle: true,
            adam: AdamConfig { lr: self.lr(), ..AdamConfig::default() },
        }
    }

    /// SHA-256 of the settings that determine results (paths and thread
    /// count excluded).
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            for key in ["out_dir", "cache_dir", "threads"] {
                map.remove(key);
            }
        }
        hex(&Sha256::digest(v.to_string().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.lr(), 5e-3);
        cfg.apply_text("# experiment\nmodel = qscnn-conv\nepochs=2  # short\nseed = 4\n\n").unwrap();
        assert_eq!(cfg.lr(), 1e-3);
        assert_eq!((cfg.epochs, cfg.seed), (2, 4));
        cfg.set("--seed", "9").unwrap();
        cfg.set("lr", "0").unwrap();
        assert_eq!((cfg.seed, cfg.lr()), (9, 0.0));
    }

    #[test]
    fn bad_input_is_reported() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_text("epochs 3").unwrap_err().to_string().contains("line 1"));
        assert!(cfg.set("epochs", "many").is_err());
        assert!(cfg.set("colour", "red").is_err());
        cfg.set("threshold", "0").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn hash_ignores_paths_and_threads() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out_dir = "elsewhere".into();
        b.threads = 3;
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
