//! Trains each supervision mode on the same synthetic data and seed and
//! prints the final validation Dice per mode, plus a combined curve chart.
//!
//! ```text
//! cargo run --release --example compare_modes -- [epochs] [seed] [out.csv]
//! ```

use boxseg::synthdata;
use boxseg::trainer::{self, Split, TrainConfig, TrainMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(60);
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(0);
    let out = args.next().unwrap_or_else(|| "compare_modes.csv".into());

    let base = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let data = synthdata::generate(&base.dataset)?;
    let mut all = Vec::new();
    for mode in TrainMode::ALL {
        let cfg = TrainConfig { mode, ..base.clone() };
        let outcome = trainer::train_with(&cfg, &data, |r| {
            if r.split == Split::Val {
                eprintln!(
                    "{:<26} epoch {:>3}  dice {:.3}  tight {:.3}  size {:.2}",
                    mode.as_str(),
                    r.epoch,
                    r.dice_mean,
                    r.tight_sat_frac,
                    r.size_ok
                );
            }
        })?;
        let val = outcome.final_row(Split::Val).expect("validation rows");
        println!("{:<26} {:.4} ± {:.4}", mode.as_str(), val.dice_mean, val.dice_std);
        all.extend(outcome.metrics);
    }
    let svg = trainer::export_curves(&all, out.as_ref())?;
    println!("wrote {out} and {}", svg.display());
    Ok(())
}
