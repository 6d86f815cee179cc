use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use boxseg::model::SegModel;
use boxseg::synthdata::{self, DatasetConfig};
use boxseg::trainer::{self, prepare, Split, TrainConfig, TrainError, TrainMode};

#[derive(Parser)]
#[command(name = "boxseg", version, about = "Segmentation from bounding-box annotations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Generate {
        /// Dataset TOML; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write metrics.csv, metrics.svg and model.ckpt.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        t_init: Option<f64>,
        #[arg(long)]
        t_growth: Option<f64>,
        #[arg(long)]
        t_max: Option<f64>,
        /// Replace the log-barrier with a quadratic penalty.
        #[arg(long)]
        penalty: bool,
    },
    /// Report validation Dice and constraint statistics of a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Training config supplying mode, w, eps and the barrier parameter.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train once per box margin and print a CSV table.
    Sweep {
        #[arg(long, value_delimiter = ',', required = true)]
        margins: Vec<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn train_config(path: Option<&Path>) -> Result<TrainConfig, TrainError> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn write(path: &Path, text: &str) -> Result<(), TrainError> {
    std::fs::write(path, text).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cli: Cli) -> Result<(), TrainError> {
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|source| TrainError::Io { path: p, source })?;
                    toml::from_str::<DatasetConfig>(&text).map_err(|e| TrainError::Config(e.to_string()))?
                }
                None => DatasetConfig::default(),
            };
            let data = synthdata::generate(&cfg)?;
            synthdata::save(&data, &out)?;
            println!("wrote {} samples to {}", data.train.len() + data.val.len(), out.display());
        }
        Command::Train {
            config,
            mode,
            epochs,
            seed,
            data,
            out,
            t_init,
            t_growth,
            t_max,
            penalty,
        } => {
            let mut cfg = train_config(config.as_deref())?;
            if let Some(m) = mode {
                cfg.mode = TrainMode::parse(&m).ok_or_else(|| TrainError::Config(format!("unknown mode `{m}`")))?;
            }
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            cfg.seed = seed.unwrap_or(cfg.seed);
            cfg.data_dir = data.or(cfg.data_dir);
            cfg.out_dir = out.unwrap_or(cfg.out_dir);
            cfg.schedule.t_init = t_init.unwrap_or(cfg.schedule.t_init);
            cfg.schedule.growth = t_growth.unwrap_or(cfg.schedule.growth);
            cfg.schedule.t_max = t_max.unwrap_or(cfg.schedule.t_max);
            cfg.penalty_mode |= penalty;
            cfg.validate()?;
            let dataset = cfg.load_dataset()?;
            let outcome = trainer::run(&cfg, &dataset)?;
            for split in [Split::Train, Split::Val] {
                if let Some(r) = outcome.final_row(split) {
                    println!(
                        "{:<5} dice {:.4} ± {:.4}  tight_sat {:.4}  size_ok {:.4}",
                        split.as_str(),
                        r.dice_mean,
                        r.dice_std,
                        r.tight_sat_frac,
                        r.size_ok
                    );
                }
            }
            println!("outputs in {}", cfg.out_dir.display());
        }
        Command::Evaluate {
            checkpoint,
            data,
            config,
        } => {
            let cfg = train_config(config.as_deref())?;
            let model = SegModel::load(&checkpoint)?;
            let dataset = synthdata::load(&data)?;
            let t = cfg.schedule.t_at(cfg.epochs.saturating_sub(1));
            for (split, samples) in [(Split::Train, &dataset.train), (Split::Val, &dataset.val)] {
                if samples.is_empty() {
                    continue;
                }
                let r = trainer::evaluate(&model, &prepare(samples, cfg.w)?, &cfg, t, cfg.epochs, split)?;
                println!(
                    "{:<5} n={:<4} dice {:.4} ± {:.4}  tight_sat {:.4}  size_ok {:.4}",
                    split.as_str(),
                    samples.len(),
                    r.dice_mean,
                    r.dice_std,
                    r.tight_sat_frac,
                    r.size_ok
                );
            }
        }
        Command::Sweep { margins, config, out } => {
            let cfg = train_config(config.as_deref())?;
            let dataset = cfg.load_dataset()?;
            let csv = trainer::sweep_csv(&trainer::sweep_margin(&cfg, &dataset, &margins)?);
            match out {
                Some(p) => write(&p, &csv)?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
