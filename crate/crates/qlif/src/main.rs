use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qlif::commands::{self, DataSource, EvalArgs, TraceArgs};
use qlif::config::{parse_decay_mode, RunConfig};
use qlif::data::{default_cache_dir, DatasetName, Split};
use qlif::fsutil::write_atomic;
use qlif_core::neuron::LifConfig;

#[derive(Parser)]
#[command(name = "qlif", version, about = "Quantum leaky integrate-and-fire spiking networks")]
struct Cli {
    /// Worker threads (0 = all cores); results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Train a model and write metrics, report and checkpoints.
    Train(TrainCmd),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalCmd),
    /// Run one QLIF and one LIF neuron on a random spike train.
    Trace(TraceCmd),
    /// Check the closed-form kernel against the density-matrix oracle.
    Verify(VerifyCmd),
    /// Download and validate datasets into the cache.
    Fetch(FetchCmd),
}

#[derive(Args)]
struct TrainCmd {
    /// `key = value` file applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// qsnn-dense, qscnn-conv or lif-dense.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long)]
    kernel: Option<usize>,
    #[arg(long)]
    timesteps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// paper-exact or physical-exponential.
    #[arg(long)]
    decay_mode: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    t1: Option<f64>,
    /// fan-in or sqrt-fan-in.
    #[arg(long)]
    theta_init: Option<String>,
    #[arg(long)]
    train_subset: Option<usize>,
    #[arg(long)]
    test_subset: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Read IDX files from this directory instead of the download cache.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl TrainCmd {
    fn resolve(&self, threads: Option<usize>) -> qlif::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let show = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let flags = [
            ("dataset", self.dataset.clone()),
            ("model", self.model.clone()),
            ("hidden", self.hidden.map(|v| v.to_string())),
            ("filters", self.filters.map(|v| v.to_string())),
            ("kernel", self.kernel.map(|v| v.to_string())),
            ("timesteps", self.timesteps.map(|v| v.to_string())),
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch-size", self.batch_size.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("decay-mode", self.decay_mode.clone()),
            ("threshold", self.threshold.map(|v| v.to_string())),
            ("t1", self.t1.map(|v| v.to_string())),
            ("theta-init", self.theta_init.clone()),
            ("train-subset", self.train_subset.map(|v| v.to_string())),
            ("test-subset", self.test_subset.map(|v| v.to_string())),
            ("val-fraction", self.val_fraction.map(|v| v.to_string())),
            ("data-dir", show(&self.data_dir)),
            ("cache-dir", show(&self.cache_dir)),
            ("out-dir", show(&self.out_dir)),
            ("threads", threads.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Defaults to the dataset recorded in the checkpoint.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TraceCmd {
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    /// Idle delay as a multiple of T1.
    #[arg(long, default_value_t = 0.2)]
    tau_ratio: f64,
    #[arg(long, default_value_t = 0.7)]
    threshold: f64,
    #[arg(long, default_value_t = 1.0)]
    t1: f64,
    #[arg(long, default_value_t = 60)]
    timesteps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "paper-exact")]
    mode: String,
    /// Input spike probability per step.
    #[arg(long, default_value_t = 0.35)]
    rate: f64,
    /// Feed no input spikes at all.
    #[arg(long)]
    zero_input: bool,
    #[arg(long, default_value_t = 0.4)]
    lif_weight: f64,
    #[arg(long, default_value_t = 0.9)]
    lif_beta: f64,
    #[arg(long, default_value_t = 1.0)]
    lif_threshold: f64,
    #[arg(long, default_value = "qlif-trace")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct VerifyCmd {
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Compare every idle step against amplitude damping.
    #[arg(long)]
    force_mode_mismatch: bool,
    /// Also write the residual table to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FetchCmd {
    /// mnist, fashion-mnist, kmnist or all.
    #[arg(long, default_value = "all")]
    dataset: String,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

fn run(cli: Cli) -> qlif::Result<ExitCode> {
    let threads = cli.threads;
    match cli.command {
        Command::Train(cmd) => {
            let cfg = cmd.resolve(threads)?;
            let outcome = commands::train(&cfg)?;
            let r = &outcome.report;
            println!("test_acc {:.4}", r.test_acc);
            println!("train_wall_time_s {:.2}", r.train_wall_time_s);
            println!("outputs {}", cfg.out_dir.display());
        }
        Command::Eval(cmd) => {
            let args = EvalArgs {
                checkpoint: cmd.checkpoint,
                dataset: cmd.dataset.map(|d| d.parse()).transpose()?,
                split: cmd.split.parse::<Split>()?,
                subset: cmd.subset,
                source: DataSource::from_options(cmd.data_dir.as_deref(), cmd.cache_dir.as_deref()),
                out_dir: cmd.out_dir,
                threads: threads.unwrap_or(0),
            };
            let report = commands::eval(&args)?;
            println!("accuracy {:.4} over {} samples", report.accuracy, report.samples());
            print!("{}", commands::confusion_csv(&report));
        }
        Command::Trace(cmd) => {
            let args = TraceArgs {
                theta: cmd.theta,
                tau_ratio: cmd.tau_ratio,
                threshold: cmd.threshold,
                t1: cmd.t1,
                timesteps: cmd.timesteps,
                seed: cmd.seed,
                mode: parse_decay_mode(&cmd.mode)?,
                rate: cmd.rate,
                zero_input: cmd.zero_input,
                lif_weight: cmd.lif_weight,
                lif: LifConfig { beta: cmd.lif_beta, u_thr: cmd.lif_threshold },
                out_dir: cmd.out_dir,
            };
            let out = commands::trace(&args)?;
            let q = out.qlif.iter().filter(|r| r.spike).count();
            let l = out.lif.iter().filter(|r| r.spike).count();
            println!("{} steps, {} input spikes, QLIF fired {q}, LIF fired {l}", out.inputs.len(), out.inputs.iter().filter(|&&x| x).count());
            println!("outputs {}", args.out_dir.display());
        }
        Command::Verify(cmd) => {
            let outcome = commands::verify(cmd.samples, cmd.seed, cmd.force_mode_mismatch)?;
            print!("{}", outcome.csv);
            if let Some(path) = &cmd.out {
                write_atomic(path, outcome.csv.as_bytes())?;
            }
            if !outcome.passed() {
                eprintln!("max residual {:e} exceeds {:e}", outcome.max_residual, commands::VERIFY_TOLERANCE);
                return Ok(ExitCode::from(2));
            }
        }
        Command::Fetch(cmd) => {
            let names: Vec<DatasetName> =
                if cmd.dataset == "all" { DatasetName::ALL.to_vec() } else { vec![cmd.dataset.parse()?] };
            let cache = cmd.cache_dir.unwrap_or_else(default_cache_dir);
            for (name, train, test) in commands::fetch(&names, &cache)? {
                println!("{name}: train {train}, test {test} ({})", cache.join(name.as_str()).display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
