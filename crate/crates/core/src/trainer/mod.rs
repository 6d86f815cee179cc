//! Training loop, evaluation, ablation modes and the margin sweep.

mod loss;
mod metrics;
mod optim;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor};
use crate::barrier::BarrierSchedule;
use crate::boxprior::{BoxError, BoxSupervision, LabelMask};
use crate::model::{ModelConfig, ModelError, SegModel};
use crate::synthdata::{self, DataError, Dataset, DatasetConfig, Sample};

pub use loss::{loss_eq6, LossTerms};
pub use metrics::{dice, dice_curves_svg, export_curves, mean_std, metrics_csv, MetricsRow, Split, METRICS_HEADER};
pub use optim::{Adam, Optimizer, OptimizerConfig, OptimizerKind, Sgd};

/// Probability above which a pixel counts as foreground.
pub const DICE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("non-finite {term} ({value})")]
    NonFinite { term: String, value: f64 },
    #[error("numerical abort at {at}: {source}")]
    NumericalAbort {
        /// Where training stopped, e.g. `epoch 3, batch 7`.
        at: String,
        #[source]
        source: Box<TrainError>,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Box(#[from] BoxError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl TrainError {
    /// Process exit code: 3 for numerical aborts, 2 for everything else
    /// that stems from configuration or inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            TrainError::NonFinite { .. } | TrainError::NumericalAbort { .. } => 3,
            _ => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Cross-entropy against the ground-truth mask.
    FullSupervision,
    /// Masked cross-entropy outside the box, tightness and size bounds.
    MceTightnessSize,
    /// Emptiness constraint outside the box, tightness and size bounds.
    EmptinessTightnessSize,
    /// Tightness and size bounds with no term outside the box.
    TightnessSizeOnly,
    /// Emptiness and tightness with no size bounds.
    TightnessEmptinessOnly,
}

impl TrainMode {
    pub const ALL: [TrainMode; 5] = [
        TrainMode::FullSupervision,
        TrainMode::MceTightnessSize,
        TrainMode::EmptinessTightnessSize,
        TrainMode::TightnessSizeOnly,
        TrainMode::TightnessEmptinessOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::FullSupervision => "full_supervision",
            TrainMode::MceTightnessSize => "mce_tightness_size",
            TrainMode::EmptinessTightnessSize => "emptiness_tightness_size",
            TrainMode::TightnessSizeOnly => "tightness_size_only",
            TrainMode::TightnessEmptinessOnly => "tightness_emptiness_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    /// Weight of the tightness barriers.
    pub lambda: f64,
    /// Lower size bound as a fraction of the box area.
    pub eps: f64,
    /// Segment width for the tightness constraints.
    pub w: usize,
    pub schedule: BarrierSchedule,
    /// Replace every barrier with `penalty_weight * max(0, z)^2`.
    pub penalty_mode: bool,
    pub penalty_weight: f64,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds model initialization and the per-epoch shuffle.
    pub seed: u64,
    pub model: ModelConfig,
    /// Directory written by `boxseg generate`; when absent, `dataset` is
    /// generated in memory.
    pub data_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub out_dir: PathBuf,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::EmptinessTightnessSize,
            lambda: 1.0,
            eps: 0.1,
            w: 5,
            schedule: BarrierSchedule::default(),
            penalty_mode: false,
            penalty_weight: 1.0,
            optimizer: OptimizerConfig::default(),
            epochs: 60,
            batch_size: 4,
            seed: 0,
            model: ModelConfig::default(),
            data_dir: None,
            dataset: DatasetConfig::default(),
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: Self = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.eps) {
            return bad(format!("eps must lie in [0, 1), got {}", self.eps));
        }
        if self.w == 0 {
            return bad("segment width w must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.optimizer.lr > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.optimizer.lr));
        }
        if self.penalty_mode && !(self.penalty_weight > 0.0) {
            return bad(format!("penalty_weight must be positive, got {}", self.penalty_weight));
        }
        self.schedule.validate().map_err(TrainError::Config)?;
        self.model.validate()?;
        Ok(())
    }

    /// Loads `data_dir`, or generates `dataset` when no directory is set.
    pub fn load_dataset(&self) -> Result<Dataset, TrainError> {
        Ok(match &self.data_dir {
            Some(dir) => synthdata::load(dir)?,
            None => synthdata::generate(&self.dataset)?,
        })
    }
}

/// A sample with its box supervision pre-computed.
#[derive(Clone, Debug)]
pub struct Prepared<'a> {
    pub sample: &'a Sample,
    pub supervision: BoxSupervision,
}

pub fn prepare<'a>(samples: &'a [Sample], w: usize) -> Result<Vec<Prepared<'a>>, TrainError> {
    samples
        .iter()
        .map(|s| {
            Ok(Prepared {
                sample: s,
                supervision: BoxSupervision::new(s.bbox, s.height(), s.width(), w)?,
            })
        })
        .collect()
}

/// Running aggregate of per-sample results for one split and epoch.
#[derive(Default)]
struct Tally {
    dice: Vec<f64>,
    loss: f64,
    tight_sat: usize,
    tight_total: usize,
    empty: f64,
    size_ok: usize,
}

impl Tally {
    fn add(&mut self, probs: &[f64], mask: &LabelMask, loss: f64, terms: &LossTerms) {
        let pred = LabelMask::from_probs(mask.height(), mask.width(), probs, DICE_THRESHOLD);
        self.dice.push(dice(&pred, mask));
        self.loss += loss;
        self.tight_sat += terms.tightness_satisfied();
        self.tight_total += terms.tightness.len();
        self.empty += terms.emptiness;
        self.size_ok += usize::from(terms.size_ok());
    }

    fn row(&self, epoch: usize, split: Split, mode: TrainMode, t: f64) -> MetricsRow {
        let n = self.dice.len().max(1) as f64;
        let (dice_mean, dice_std) = mean_std(&self.dice);
        MetricsRow {
            epoch,
            split,
            mode,
            dice_mean,
            dice_std,
            loss: self.loss / n,
            t,
            tight_sat_frac: if self.tight_total == 0 {
                1.0
            } else {
                self.tight_sat as f64 / self.tight_total as f64
            },
            empty_residual: self.empty / n,
            size_ok: self.size_ok as f64 / n,
        }
    }
}

/// Forward-only evaluation of `model` over `samples` at barrier parameter `t`.
pub fn evaluate(
    model: &SegModel,
    samples: &[Prepared<'_>],
    cfg: &TrainConfig,
    t: f64,
    epoch: usize,
    split: Split,
) -> Result<MetricsRow, TrainError> {
    let mut tally = Tally::default();
    for chunk in samples.chunks(cfg.batch_size.max(8)) {
        let mut tape = Tape::new();
        let images: Vec<&Tensor> = chunk.iter().map(|p| &p.sample.image).collect();
        let fwd = model.forward_batch(&mut tape, &images)?;
        for (p, map) in chunk.iter().zip(&fwd.maps) {
            let terms = loss_eq6(&mut tape, map, &p.supervision, &p.sample.mask, cfg, t)?;
            let loss = tape.scalar(terms.total);
            tally.add(map.probs(&tape), &p.sample.mask, loss, &terms);
        }
    }
    Ok(tally.row(epoch, split, cfg.mode, t))
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SegModel,
    /// Epoch 0 is the untrained model; each later epoch has one train row
    /// (aggregated over the epoch's batches) and one validation row.
    pub metrics: Vec<MetricsRow>,
}

impl TrainOutcome {
    pub fn final_row(&self, split: Split) -> Option<&MetricsRow> {
        self.metrics.iter().rev().find(|r| r.split == split)
    }
}

pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutcome, TrainError> {
    train_with(cfg, data, |_| {})
}

/// [`train`] with a callback invoked after every logged row.
pub fn train_with(
    cfg: &TrainConfig,
    data: &Dataset,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::Config("training split is empty".into()));
    }
    let train_set = prepare(&data.train, cfg.w)?;
    let val_set = prepare(&data.val, cfg.w)?;
    let mut model = SegModel::build(&ModelConfig {
        seed: cfg.seed,
        ..cfg.model.clone()
    })?;
    let mut opt = optim::build(&cfg.optimizer, model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(synthdata::sample_seed(cfg.seed, u64::MAX));
    let mut metrics = Vec::with_capacity(2 * (cfg.epochs + 1));
    let mut log = |row: MetricsRow, metrics: &mut Vec<MetricsRow>| {
        on_row(&row);
        metrics.push(row);
    };

    let t0 = cfg.schedule.t_at(0);
    log(evaluate(&model, &train_set, cfg, t0, 0, Split::Train)?, &mut metrics);
    if !val_set.is_empty() {
        log(evaluate(&model, &val_set, cfg, t0, 0, Split::Val)?, &mut metrics);
    }

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        let t = cfg.schedule.t_at(epoch - 1);
        order.shuffle(&mut rng);
        let mut tally = Tally::default();
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            step(&mut model, opt.as_mut(), &train_set, idx, cfg, t, &mut tally)
                .map_err(|e| abort(e, format!("epoch {epoch}, batch {batch}")))?;
        }
        log(tally.row(epoch, Split::Train, cfg.mode, t), &mut metrics);
        if !val_set.is_empty() {
            let row = evaluate(&model, &val_set, cfg, t, epoch, Split::Val)
                .map_err(|e| abort(e, format!("epoch {epoch}, validation")))?;
            log(row, &mut metrics);
        }
    }
    Ok(TrainOutcome { model, metrics })
}

fn abort(e: TrainError, at: String) -> TrainError {
    match e {
        TrainError::NonFinite { .. } => TrainError::NumericalAbort {
            at,
            source: Box::new(e),
        },
        other => other,
    }
}

fn step(
    model: &mut SegModel,
    opt: &mut dyn Optimizer,
    set: &[Prepared<'_>],
    idx: &[usize],
    cfg: &TrainConfig,
    t: f64,
    tally: &mut Tally,
) -> Result<(), TrainError> {
    let mut tape = Tape::new();
    let images: Vec<&Tensor> = idx.iter().map(|&i| &set[i].sample.image).collect();
    let fwd = model.forward_batch(&mut tape, &images)?;
    let mut total = None;
    for (&i, map) in idx.iter().zip(&fwd.maps) {
        let p = &set[i];
        let terms = loss_eq6(&mut tape, map, &p.supervision, &p.sample.mask, cfg, t)?;
        tally.add(map.probs(&tape), &p.sample.mask, tape.scalar(terms.total), &terms);
        // batch losses are summed
        total = Some(match total {
            Some(acc) => tape.add(acc, terms.total)?,
            None => terms.total,
        });
    }
    let total = total.expect("non-empty batch");
    let grads = tape.backward(total)?;
    let grads: Vec<Tensor> = fwd.params.iter().map(|&p| grads.wrt(p)).collect();
    if let Some(bad) = grads.iter().flat_map(|g| g.data()).find(|v| !v.is_finite()) {
        return Err(TrainError::NonFinite {
            term: "parameter gradient".into(),
            value: *bad,
        });
    }
    opt.step(model.params_mut(), &grads);
    Ok(())
}

/// Trains, then writes `metrics.csv`, `metrics.svg` and `model.ckpt` into
/// `cfg.out_dir`.
pub fn run(cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutcome, TrainError> {
    let outcome = train(cfg, data)?;
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|source| TrainError::Io {
        path: dir.clone(),
        source,
    })?;
    export_curves(&outcome.metrics, &dir.join("metrics.csv"))?;
    outcome.model.save(&dir.join("model.ckpt"))?;
    Ok(outcome)
}

/// One row of the margin sensitivity table.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub margin: usize,
    pub mode: TrainMode,
    pub dice_mean: f64,
    pub dice_std: f64,
}

/// Trains once per margin on the same images and seed, boxes re-derived
/// from the masks at each margin. Reports final validation Dice.
pub fn sweep_margin(cfg: &TrainConfig, data: &Dataset, margins: &[usize]) -> Result<Vec<SweepRow>, TrainError> {
    margins
        .iter()
        .map(|&m| {
            let outcome = train(cfg, &data.with_margin(m)?)?;
            let last = outcome
                .final_row(Split::Val)
                .or_else(|| outcome.final_row(Split::Train))
                .expect("epoch 0 is always logged");
            Ok(SweepRow {
                margin: m,
                mode: cfg.mode,
                dice_mean: last.dice_mean,
                dice_std: last.dice_std,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("margin,mode,dice_mean,dice_std\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            r.margin,
            r.mode.as_str(),
            r.dice_mean,
            r.dice_std
        ));
    }
    out
}
