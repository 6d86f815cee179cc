//! Compares the tape's gradient of the full training objective with
//! central finite differences on a handful of parameters.
//!
//! ```text
//! cargo run --release --example gradient_check -- [mode]
//! ```

use boxseg::autodiff::Tape;
use boxseg::boxprior::BoxSupervision;
use boxseg::model::{ModelConfig, SegModel};
use boxseg::synthdata::{self, DatasetConfig};
use boxseg::trainer::{loss_eq6, TrainConfig, TrainMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mode = match std::env::args().nth(1) {
        Some(m) => TrainMode::parse(&m).ok_or(format!("unknown mode `{m}`"))?,
        None => TrainMode::EmptinessTightnessSize,
    };
    let data = synthdata::generate(&DatasetConfig {
        n_samples: 1,
        n_val: 0,
        height: 16,
        width: 16,
        size_range: [0.1, 0.2],
        ..DatasetConfig::default()
    })?;
    let sample = &data.train[0];
    let cfg = TrainConfig {
        mode,
        w: 2,
        ..TrainConfig::default()
    };
    let sup = BoxSupervision::new(sample.bbox, sample.height(), sample.width(), cfg.w)?;
    let mut model = SegModel::build(&ModelConfig {
        zero_head: false,
        head_bias: 0.0,
        ..ModelConfig::default()
    })?;
    let t = 3.0;

    let loss = |model: &SegModel| -> Result<(f64, Vec<boxseg::autodiff::Tensor>), Box<dyn std::error::Error>> {
        let mut tape = Tape::new();
        let (params, pred) = model.forward(&mut tape, &sample.image)?;
        let terms = loss_eq6(&mut tape, &pred, &sup, &sample.mask, &cfg, t)?;
        let grads = tape.backward(terms.total)?;
        Ok((tape.scalar(terms.total), params.iter().map(|&p| grads.wrt(p)).collect()))
    };
    let (value, grads) = loss(&model)?;
    println!("{} objective {value:.6} with {} parameters", mode.as_str(), model.num_params());
    println!("{:>6} {:>6} {:>14} {:>14} {:>10}", "tensor", "index", "analytic", "numeric", "rel err");

    let h = 1e-6;
    for (p, grad) in grads.iter().enumerate() {
        let k = model.params()[p].len() / 2;
        let orig = model.params()[p].data()[k];
        model.params_mut()[p].data_mut()[k] = orig + h;
        let up = loss(&model)?.0;
        model.params_mut()[p].data_mut()[k] = orig - h;
        let down = loss(&model)?.0;
        model.params_mut()[p].data_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grad.data()[k];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        println!("{p:>6} {k:>6} {analytic:>14.6e} {numeric:>14.6e} {rel:>10.2e}");
    }
    Ok(())
}
