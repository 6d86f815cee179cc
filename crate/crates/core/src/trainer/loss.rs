//! Assembly of the training objective for one sample.
//!
//! ```text
//! L = L_O + lambda * sum_l psi_t(lines_l - sum_{p in s_l} s(p))
//!         + psi_t(eps |box| - sum_p s(p)) + psi_t(sum_p s(p) - |box|)
//! ```
//!
//! `L_O` is either the masked cross-entropy on outside pixels or
//! `psi_t(sum of outside probabilities)`. The mode decides which terms are
//! present; penalty mode swaps every `psi_t` for `w * max(0, z)^2`.

use crate::autodiff::{Tape, Value};
use crate::barrier::{psi_tilde, quadratic_penalty};
use crate::boxprior::{self, BoxSupervision, LabelMask};
use crate::model::PredictionMap;

use super::{TrainConfig, TrainError, TrainMode};

/// The objective plus the raw constraint residuals used for logging.
#[derive(Debug, Clone)]
pub struct LossTerms {
    pub total: Value,
    pub tightness: Vec<f64>,
    pub emptiness: f64,
    pub size_lower: f64,
    pub size_upper: f64,
}

impl LossTerms {
    pub fn tightness_satisfied(&self) -> usize {
        self.tightness.iter().filter(|z| **z <= 0.0).count()
    }

    pub fn size_ok(&self) -> bool {
        self.size_lower <= 0.0 && self.size_upper <= 0.0
    }
}

fn finite(tape: &Tape, v: Value, term: &str) -> Result<Value, TrainError> {
    let x = tape.scalar(v);
    if x.is_finite() {
        Ok(v)
    } else {
        Err(TrainError::NonFinite {
            term: term.to_string(),
            value: x,
        })
    }
}

pub fn loss_eq6(
    tape: &mut Tape,
    pred: &PredictionMap,
    sup: &BoxSupervision,
    mask: &LabelMask,
    cfg: &TrainConfig,
    t: f64,
) -> Result<LossTerms, TrainError> {
    let barrier = |tape: &mut Tape, z: Value| {
        if cfg.penalty_mode {
            quadratic_penalty(tape, z, cfg.penalty_weight)
        } else {
            psi_tilde(tape, z, t)
        }
    };

    let tight = boxprior::tightness_residuals(tape, pred, &sup.segments)?;
    let empty = boxprior::emptiness_residual(tape, pred, &sup.outside)?;
    let (lower, upper) = boxprior::size_residuals(tape, pred, &sup.bbox, cfg.eps)?;

    let mut terms: Vec<Value> = Vec::with_capacity(4);
    let mode = cfg.mode;
    if mode == TrainMode::FullSupervision {
        let ce = boxprior::full_ce(tape, pred, mask)?;
        terms.push(finite(tape, ce, "full cross-entropy")?);
    }
    if mode == TrainMode::MceTightnessSize {
        let mce = boxprior::masked_ce(tape, pred, &sup.outside)?;
        terms.push(finite(tape, mce, "masked cross-entropy")?);
    }
    if matches!(mode, TrainMode::EmptinessTightnessSize | TrainMode::TightnessEmptinessOnly) {
        let e = barrier(tape, empty.value);
        terms.push(finite(tape, e, "emptiness barrier")?);
    }
    if mode != TrainMode::FullSupervision {
        let mut acc: Option<Value> = None;
        for (i, r) in tight.iter().enumerate() {
            let b = barrier(tape, r.value);
            finite(tape, b, &format!("tightness barrier #{i}"))?;
            acc = Some(match acc {
                Some(a) => tape.add(a, b)?,
                None => b,
            });
        }
        if let Some(sum) = acc {
            terms.push(tape.scalar_mul(sum, cfg.lambda));
        }
    }
    if matches!(
        mode,
        TrainMode::MceTightnessSize | TrainMode::EmptinessTightnessSize | TrainMode::TightnessSizeOnly
    ) {
        let lo = barrier(tape, lower.value);
        terms.push(finite(tape, lo, "size lower-bound barrier")?);
        let up = barrier(tape, upper.value);
        terms.push(finite(tape, up, "size upper-bound barrier")?);
    }

    let mut total = terms[0];
    for &v in &terms[1..] {
        total = tape.add(total, v)?;
    }
    Ok(LossTerms {
        total: finite(tape, total, "total loss")?,
        tightness: tight.iter().map(|r| tape.scalar(r.value)).collect(),
        emptiness: tape.scalar(empty.value),
        size_lower: tape.scalar(lower.value),
        size_upper: tape.scalar(upper.value),
    })
}
