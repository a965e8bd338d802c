//! Implementations behind the command-line subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qlif_core::network::Model;
use qlif_core::neuron::{
    run_lif_trace, run_qlif_trace, DecayMode, LifConfig, LifTraceRecord, QlifConfig, QlifInput, QlifTraceRecord,
};
use qlif_core::oracle::{verify_against, verify_battery, ResidualSummary};

use crate::checkpoint::Checkpoint;
use crate::config::{decay_mode_str, Preset, RunConfig};
use crate::data::{default_cache_dir, load_idx_dir, Dataset, DatasetName, Fetcher, HttpTransport, Split, CLASSES};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::trainer::{evaluate, optimizer, train_epoch, with_threads, BatchMetrics, EvalReport, TrainConfig};

pub const CODE_HASH: &str = env!("QLIF_CODE_HASH");

/// Residuals above this fail `verify`.
pub const VERIFY_TOLERANCE: f64 = 1e-10;

/// Where a split comes from: a plain IDX directory or the download cache.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Dir(PathBuf),
    Cache(PathBuf),
}

impl DataSource {
    pub fn from_options(data_dir: Option<&Path>, cache_dir: Option<&Path>) -> Self {
        match data_dir {
            Some(d) => DataSource::Dir(d.to_path_buf()),
            None => DataSource::Cache(cache_dir.map_or_else(default_cache_dir, Path::to_path_buf)),
        }
    }

    pub fn load(&self, name: DatasetName, split: Split) -> Result<Dataset> {
        match self {
            DataSource::Dir(dir) => load_idx_dir(dir, name, split),
            DataSource::Cache(dir) => Fetcher::new(dir, &HttpTransport::default()).load(name, split),
        }
    }

    fn describe(&self) -> String {
        match self {
            DataSource::Dir(d) => format!("dir:{}", d.display()),
            DataSource::Cache(d) => format!("cache:{}", d.display()),
        }
    }
}

pub fn build_model(cfg: &RunConfig, input_shape: [usize; 3]) -> Result<Model> {
    let flat = [input_shape.iter().product()];
    let model = match cfg.model {
        Preset::QsnnDense => Model::qsnn_dense(&flat, cfg.hidden, CLASSES, cfg.neuron(), cfg.theta_init, cfg.seed)?,
        Preset::QscnnConv => {
            Model::qscnn_conv(&input_shape, cfg.filters, cfg.kernel, CLASSES, cfg.neuron(), cfg.theta_init, cfg.seed)?
        }
        Preset::LifDense => Model::lif_dense(&flat, cfg.hidden, CLASSES, LifConfig::default(), cfg.seed)?,
    };
    Ok(model)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_acc: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TrainReport {
    pub test_acc: f64,
    pub test_loss: f64,
    pub val_acc: Option<f64>,
    pub train_samples: usize,
    pub test_samples: usize,
    pub epochs: Vec<EpochSummary>,
    /// Seconds spent in the training loop only.
    pub train_wall_time_s: f64,
    pub eval_wall_time_s: f64,
    pub data_source: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub code_hash: String,
}

pub struct TrainOutcome {
    pub report: TrainReport,
    pub model: Model,
    pub eval: EvalReport,
}

fn metrics_line(out: &mut String, m: &BatchMetrics) {
    let _ = writeln!(out, "{},{},{},{}", m.epoch, m.batch, m.loss, m.train_acc);
}

/// Loads data, trains, evaluates and writes `metrics.csv`, `report.json`,
/// `confusion.csv`, `checkpoint-init.json` and `checkpoint.json` to `cfg.out_dir`.
pub fn train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let source = DataSource::from_options(cfg.data_dir.as_deref(), cfg.cache_dir.as_deref());
    let mut train = source.load(cfg.dataset, Split::Train)?;
    let mut test = source.load(cfg.dataset, Split::Test)?;
    if let Some(n) = cfg.train_subset {
        train = train.head(n);
    }
    if let Some(n) = cfg.test_subset {
        test = test.head(n);
    }
    let val = if cfg.val_fraction > 0.0 {
        let (t, v) = train.split_tail(cfg.val_fraction)?;
        train = t;
        Some(v)
    } else {
        None
    };

    let mut model = build_model(cfg, [1, train.rows, train.cols])?;
    let tcfg = cfg.train_config();
    let encoder = tcfg.encoder();
    let out = &cfg.out_dir;
    Checkpoint::new(model.clone(), encoder, Some(cfg.dataset)).save(&out.join("checkpoint-init.json"))?;

    let mut opt = optimizer(&model, &tcfg);
    let mut csv = String::from("epoch,batch,loss,train_acc\n");
    let mut epochs = Vec::new();
    let started = Instant::now();
    with_threads(cfg.threads, || -> Result<()> {
        for epoch in 0..cfg.epochs {
            let m = train_epoch(&mut model, &train, &mut opt, &tcfg, epoch, |b| {
                metrics_line(&mut csv, b);
                log::info!("epoch {} batch {} loss {:.4} acc {:.4}", b.epoch, b.batch, b.loss, b.train_acc);
            })?;
            epochs.push(EpochSummary { epoch, mean_loss: m.mean_loss, train_acc: m.train_acc });
        }
        Ok(())
    })??;
    let train_wall_time_s = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let (eval, val_acc) = with_threads(cfg.threads, || -> Result<_> {
        let eval = evaluate(&model, &test, &tcfg)?;
        let val_acc = val.as_ref().map(|v| evaluate(&model, v, &tcfg).map(|r| r.accuracy)).transpose()?;
        Ok((eval, val_acc))
    })??;
    let eval_wall_time_s = started.elapsed().as_secs_f64();

    let report = TrainReport {
        test_acc: eval.accuracy,
        test_loss: eval.mean_loss,
        val_acc,
        train_samples: train.len(),
        test_samples: test.len(),
        epochs,
        train_wall_time_s,
        eval_wall_time_s,
        data_source: source.describe(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        code_hash: CODE_HASH.to_string(),
    };
    write_atomic(&out.join("metrics.csv"), csv.as_bytes())?;
    write_atomic(&out.join("confusion.csv"), confusion_csv(&eval).as_bytes())?;
    Checkpoint::new(model.clone(), encoder, Some(cfg.dataset)).save(&out.join("checkpoint.json"))?;
    write_atomic(&out.join("report.json"), &serde_json::to_vec_pretty(&report)?)?;
    Ok(TrainOutcome { report, model, eval })
}

pub fn confusion_csv(r: &EvalReport) -> String {
    let mut s = String::from("true\\pred");
    for c in 0..CLASSES {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    for (t, row) in r.confusion.iter().enumerate() {
        let _ = write!(s, "{t}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub dataset: Option<DatasetName>,
    pub split: Split,
    pub subset: Option<usize>,
    pub source: DataSource,
    pub out_dir: Option<PathBuf>,
    pub threads: usize,
}

#[derive(Debug, Clone, serde::Serialize)]
struct EvalJson<'a> {
    checkpoint: &'a Path,
    dataset: DatasetName,
    split: Split,
    samples: usize,
    accuracy: f64,
    mean_loss: f64,
}

/// Evaluates a checkpoint; writes `eval.json` and `confusion.csv` when
/// `out_dir` is given.
pub fn eval(args: &EvalArgs) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let dataset = args.dataset.or(ckpt.dataset).unwrap_or(DatasetName::Mnist);
    let mut data = args.source.load(dataset, args.split)?;
    if let Some(n) = args.subset {
        data = data.head(n);
    }
    let tcfg = TrainConfig { timesteps: ckpt.encoder.timesteps, seed: ckpt.encoder.seed, ..TrainConfig::default() };
    let report = with_threads(args.threads, || evaluate(&ckpt.model, &data, &tcfg))??;
    if let Some(out) = &args.out_dir {
        let json = EvalJson {
            checkpoint: &args.checkpoint,
            dataset,
            split: args.split,
            samples: data.len(),
            accuracy: report.accuracy,
            mean_loss: report.mean_loss,
        };
        write_atomic(&out.join("eval.json"), &serde_json::to_vec_pretty(&json)?)?;
        write_atomic(&out.join("confusion.csv"), confusion_csv(&report).as_bytes())?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceArgs {
    pub theta: f64,
    /// Idle delay as a multiple of T1.
    pub tau_ratio: f64,
    pub threshold: f64,
    pub t1: f64,
    pub timesteps: usize,
    pub seed: u64,
    pub mode: DecayMode,
    /// Probability of an input spike per step.
    pub rate: f64,
    pub zero_input: bool,
    pub lif_weight: f64,
    pub lif: LifConfig,
    pub out_dir: PathBuf,
}

impl Default for TraceArgs {
    fn default() -> Self {
        Self {
            theta: 1.0,
            tau_ratio: 0.2,
            threshold: 0.7,
            t1: 1.0,
            timesteps: 60,
            seed: 0,
            mode: DecayMode::PaperExact,
            rate: 0.35,
            zero_input: false,
            lif_weight: 0.4,
            lif: LifConfig::default(),
            out_dir: PathBuf::from("qlif-trace"),
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TraceOutput {
    pub inputs: Vec<bool>,
    pub qlif: Vec<QlifTraceRecord>,
    pub lif: Vec<LifTraceRecord>,
    pub theta: f64,
    pub tau: f64,
    pub threshold: f64,
    pub decay_mode: &'static str,
    pub lif_threshold: f64,
}

/// Drives one QLIF and one LIF neuron with the same random spike train and
/// writes `trace.csv`, `qlif.csv`, `lif.csv` and `trace.json`.
pub fn trace(args: &TraceArgs) -> Result<TraceOutput> {
    let cfg = QlifConfig { threshold: args.threshold, t1: args.t1, decay_mode: args.mode, ..QlifConfig::default() };
    cfg.validate()?;
    args.lif.validate()?;
    if !(0.0..=1.0).contains(&args.rate) || args.timesteps == 0 {
        return Err(Error::Config("trace needs rate in [0, 1] and at least one timestep".into()));
    }
    let tau = args.tau_ratio * args.t1;
    let input = QlifInput::new(true, args.theta, tau)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let inputs: Vec<bool> = (0..args.timesteps).map(|_| !args.zero_input && rng.random_bool(args.rate)).collect();
    let q_inputs: Vec<QlifInput> = inputs.iter().map(|&x| QlifInput { x, ..input }).collect();
    let l_inputs: Vec<(bool, f64)> = inputs.iter().map(|&x| (x, args.lif_weight)).collect();
    let qlif = run_qlif_trace(&q_inputs, &cfg);
    let lif = run_lif_trace(&l_inputs, &args.lif);

    let mut side = String::from("t,x,qlif_alpha_pre_reset,qlif_spike,lif_u,lif_spike\n");
    let mut q_csv = String::from("t,x,alpha_pre_reset,spike\n");
    let mut l_csv = String::from("t,x,u,spike\n");
    for (q, l) in qlif.iter().zip(&lif) {
        let _ = writeln!(side, "{},{},{},{},{},{}", q.t, q.x as u8, q.alpha_pre_reset, q.spike as u8, l.u, l.spike as u8);
        let _ = writeln!(q_csv, "{},{},{},{}", q.t, q.x as u8, q.alpha_pre_reset, q.spike as u8);
        let _ = writeln!(l_csv, "{},{},{},{}", l.t, l.x as u8, l.u, l.spike as u8);
    }
    let output = TraceOutput {
        inputs,
        qlif,
        lif,
        theta: args.theta,
        tau,
        threshold: args.threshold,
        decay_mode: decay_mode_str(args.mode),
        lif_threshold: args.lif.u_thr,
    };
    let out = &args.out_dir;
    write_atomic(&out.join("trace.csv"), side.as_bytes())?;
    write_atomic(&out.join("qlif.csv"), q_csv.as_bytes())?;
    write_atomic(&out.join("lif.csv"), l_csv.as_bytes())?;
    write_atomic(&out.join("trace.json"), &serde_json::to_vec_pretty(&output)?)?;
    Ok(output)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOutcome {
    pub rows: Vec<ResidualSummary>,
    /// `(kernel mode, residual)` at alpha = 1/2, tau / T1 = ln 2.
    pub worked: Vec<(DecayMode, f64)>,
    pub max_residual: f64,
    pub csv: String,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.max_residual <= VERIFY_TOLERANCE
    }
}

/// Oracle battery; with `force_mismatch` the oracle models every idle step
/// as amplitude damping regardless of the kernel's decay mode.
pub fn verify(samples: usize, seed: u64, force_mismatch: bool) -> Result<VerifyOutcome> {
    if samples == 0 {
        return Err(Error::Config("verify needs at least one sample".into()));
    }
    let forced = force_mismatch.then_some(DecayMode::PhysicalExponential);
    let rows = verify_battery(samples, seed, forced);
    let mut csv = String::from("branch,kernel_mode,oracle_mode,samples,max_residual,mean_residual\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{:e},{:e}",
            r.branch.as_str(),
            decay_mode_str(r.kernel_mode),
            decay_mode_str(r.oracle_mode),
            r.samples,
            r.max,
            r.mean
        );
    }
    let mut worked = Vec::new();
    for mode in [DecayMode::PaperExact, DecayMode::PhysicalExponential] {
        let cfg = QlifConfig { decay_mode: mode, ..QlifConfig::default() };
        let input = QlifInput { x: false, theta: 0.0, tau: std::f64::consts::LN_2 };
        let r = verify_against(0.5, &input, &cfg, forced.unwrap_or(mode));
        let _ = writeln!(
            csv,
            "worked-case,{},{},1,{:e},{:e}",
            decay_mode_str(mode),
            decay_mode_str(forced.unwrap_or(mode)),
            r,
            r
        );
        worked.push((mode, r));
    }
    let max_residual = rows.iter().map(|r| r.max).chain(worked.iter().map(|w| w.1)).fold(0.0, f64::max);
    Ok(VerifyOutcome { rows, worked, max_residual, csv })
}

/// Downloads (or validates the cache of) each dataset; returns
/// `(name, train count, test count)`.
pub fn fetch(names: &[DatasetName], cache_dir: &Path) -> Result<Vec<(DatasetName, usize, usize)>> {
    let transport = HttpTransport::default();
    let fetcher = Fetcher::new(cache_dir, &transport);
    names
        .iter()
        .map(|&n| {
            let (train, test) = fetcher.fetch(n)?;
            Ok((n, train.len(), test.len()))
        })
        .collect()
}
