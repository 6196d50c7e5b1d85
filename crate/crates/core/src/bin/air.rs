use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use air_core::experiment::{
    cmd_attack, cmd_gen_data, cmd_train, cmd_uap, ExperimentConfig, Overrides, Scenario, Split,
};
use air_core::{Error, Result};

/// Adversarial attacks on a neural baseband receiver: data, training, sweeps.
#[derive(Parser)]
#[command(name = "air", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled waveform dataset.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Which grid and count to use from the config.
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Train the receiver (or, with --surrogate, the surrogate architecture).
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run an attack sweep over the test set and append BER rows.
    Attack {
        #[command(flatten)]
        common: Common,
    },
    /// Build a universal perturbation from the training set.
    Uap {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Primary output path of the command.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    psr_db: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    papr_db: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    iters: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    method: Option<Vec<String>>,
    #[arg(long)]
    scenario: Option<String>,
    /// Surrogate checkpoint (attack, uap) or surrogate output path (train).
    #[arg(long)]
    surrogate: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<(ExperimentConfig, Overrides)> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        let overrides = Overrides {
            seed: self.seed,
            out: self.out.clone(),
            psr_db: self.psr_db.clone(),
            papr_db: self.papr_db.clone(),
            iters: self.iters.clone(),
            method: self.method.clone(),
            scenario: self.scenario.as_deref().map(str::parse::<Scenario>).transpose()?,
            surrogate: self.surrogate.clone(),
        };
        overrides.apply(&mut cfg);
        Ok((cfg, overrides))
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("AIR_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("AIR_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::GenData { common, split } => {
            let (cfg, ov) = common.resolve()?;
            let split: Split = split.parse()?;
            print!("{}", cmd_gen_data(&cfg, split, ov.out.as_deref())?);
        }
        Command::Train { common } => {
            let (cfg, ov) = common.resolve()?;
            let s = cmd_train(&cfg, ov.out.as_deref(), common.surrogate.as_deref())?;
            for (e, loss) in s.history.epoch_loss.iter().enumerate() {
                println!("epoch {} lr {:.1e} loss {loss:.4}", e + 1, s.history.learning_rate[e]);
            }
            println!("wrote {} and {}", s.checkpoint.display(), s.loss_csv.display());
        }
        Command::Attack { common } => {
            let (cfg, ov) = common.resolve()?;
            let curve = cmd_attack(&cfg, ov.out.as_deref())?;
            print!("{}", curve.to_csv()?);
        }
        Command::Uap { common } => {
            let (cfg, ov) = common.resolve()?;
            let s = cmd_uap(&cfg, ov.out.as_deref(), common.surrogate.as_deref())?;
            println!(
                "wrote {} ({} epochs, subset BER {:.4}, {})",
                s.path.display(),
                s.report.epochs_used,
                s.report.final_subset_ber,
                if s.report.reached_target {
                    "target reached"
                } else {
                    "stopped at epoch limit"
                }
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let full = e.to_string().replace('\n', " ");
            // the category replaces the message's own leading label
            let msg = full.split_once(": ").map_or(full.as_str(), |(_, rest)| rest);
            eprintln!("error: {}: {msg}", e.category());
            ExitCode::FAILURE
        }
    }
}
