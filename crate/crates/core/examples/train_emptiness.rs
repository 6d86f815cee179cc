//! Trains the default box-supervised model (emptiness, tightness and size
//! constraints) and writes metrics, a curve chart and a checkpoint. Reloads
//! the checkpoint and reports how well each constraint is met on the
//! training set.
//!
//! ```text
//! cargo run --release --example train_emptiness -- [epochs] [out_dir]
//! ```

use boxseg::model::SegModel;
use boxseg::trainer::{self, prepare, Split, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(60);
    let out = args.next().unwrap_or_else(|| "runs/emptiness".into());

    let cfg = TrainConfig {
        epochs,
        out_dir: out.into(),
        ..TrainConfig::default()
    };
    cfg.validate()?;
    let data = cfg.load_dataset()?;
    let outcome = trainer::run(&cfg, &data)?;
    for r in outcome.metrics.iter().filter(|r| r.split == Split::Val && r.epoch % 10 == 0) {
        println!(
            "epoch {:>3}  t {:>7.3}  val dice {:.4}  tightness satisfied {:.3}",
            r.epoch, r.t, r.dice_mean, r.tight_sat_frac
        );
    }

    let model = SegModel::load(&cfg.out_dir.join("model.ckpt"))?;
    let t = cfg.schedule.t_at(epochs.saturating_sub(1));
    let train = trainer::evaluate(&model, &prepare(&data.train, cfg.w)?, &cfg, t, epochs, Split::Train)?;
    println!(
        "reloaded checkpoint on the training set: dice {:.4}, tightness {:.3}, size bounds {:.3}, outside mass {:.3}",
        train.dice_mean, train.tight_sat_frac, train.size_ok, train.empty_residual
    );
    println!("outputs in {}", cfg.out_dir.display());
    Ok(())
}
