//! Loosens the boxes by a margin and retrains, to see how much an imprecise
//! annotation costs.
//!
//! ```text
//! cargo run --release --example margin_sweep -- [margins, e.g. 0,5,10] [epochs]
//! ```

use boxseg::trainer::{self, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let margins: Vec<usize> = args
        .next()
        .unwrap_or_else(|| "0,5,10".into())
        .split(',')
        .map(|m| m.trim().parse())
        .collect::<Result<_, _>>()?;
    let epochs: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(60);

    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    let data = cfg.load_dataset()?;
    let rows = trainer::sweep_margin(&cfg, &data, &margins)?;
    print!("{}", trainer::sweep_csv(&rows));
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        println!(
            "dice change from margin {} to {}: {:+.4}",
            first.margin,
            last.margin,
            last.dice_mean - first.dice_mean
        );
    }
    Ok(())
}
