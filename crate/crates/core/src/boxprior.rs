//! Supervision derived from a bounding-box annotation.
//!
//! A box splits the image into the pixels inside it and the pixels outside
//! it. Outside pixels are certainly background. Inside, the tightness prior
//! says every band of `w` consecutive rows (or columns) crosses at least `w`
//! foreground pixels, and the total foreground size is bounded by the box
//! area from above and by a fraction `eps` of it from below.
//!
//! Every constraint is expressed as a residual `z` on the tape with the
//! convention "satisfied iff `z <= 0`".

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Tensor, Value};
use crate::model::PredictionMap;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoxError {
    #[error("box {0:?} is empty or does not fit a {1}x{2} image")]
    OutOfFrame(BoundingBox, usize, usize),
    #[error("segment width must be at least 1")]
    ZeroSegmentWidth,
    #[error("eps must lie in [0, 1), got {0}")]
    InvalidEps(f64),
    #[error("mask is {mask_h}x{mask_w} but prediction is {pred_h}x{pred_w}")]
    MaskShape {
        mask_h: usize,
        mask_w: usize,
        pred_h: usize,
        pred_w: usize,
    },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Axis-aligned box, half-open on `bottom` and `right`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundingBox {
    pub top: usize,
    pub left: usize,
    pub bottom: usize,
    pub right: usize,
}

impl BoundingBox {
    pub fn new(top: usize, left: usize, bottom: usize, right: usize) -> Self {
        Self {
            top,
            left,
            bottom,
            right,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(0, 0, height, width)
    }

    pub fn height(&self) -> usize {
        self.bottom - self.top
    }

    pub fn width(&self) -> usize {
        self.right - self.left
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.top..self.bottom).contains(&row) && (self.left..self.right).contains(&col)
    }

    pub fn check(&self, height: usize, width: usize) -> Result<(), BoxError> {
        if self.top < self.bottom && self.bottom <= height && self.left < self.right && self.right <= width {
            Ok(())
        } else {
            Err(BoxError::OutOfFrame(*self, height, width))
        }
    }
}

/// Binary ground-truth mask, row-major, values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMask {
    /// Builds a mask; any non-zero byte is treated as foreground.
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Option<Self> {
        (data.len() == height * width).then(|| Self {
            height,
            width,
            data: data.into_iter().map(|v| u8::from(v != 0)).collect(),
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    /// Thresholds probabilities: a pixel is foreground when `p > threshold`.
    pub fn from_probs(height: usize, width: usize, probs: &[f64], threshold: f64) -> Self {
        assert_eq!(probs.len(), height * width);
        Self {
            height,
            width,
            data: probs.iter().map(|&p| u8::from(p > threshold)).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.data[row * self.width + col] = u8::from(on);
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v != 0).count()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

/// Flat indices inside and outside `bbox` for an `height x width` image.
pub fn partition(
    bbox: &BoundingBox,
    height: usize,
    width: usize,
) -> Result<(Vec<usize>, Vec<usize>), BoxError> {
    bbox.check(height, width)?;
    let mut inside = Vec::with_capacity(bbox.area());
    let mut outside = Vec::with_capacity(height * width - bbox.area());
    for r in 0..height {
        for c in 0..width {
            if bbox.contains(r, c) {
                inside.push(r * width + c);
            } else {
                outside.push(r * width + c);
            }
        }
    }
    Ok((inside, outside))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// A band of full-width rows.
    Horizontal,
    /// A band of full-height columns.
    Vertical,
}

/// A band of consecutive rows or columns of a box.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub orientation: Orientation,
    /// Number of parallel lines in the band, which is also its lower bound.
    pub lines: usize,
    pub indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSet {
    pub segments: Vec<Segment>,
    pub width: usize,
}

impl SegmentSet {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter()
    }
}

/// Tiles the box rows top-to-bottom and its columns left-to-right into
/// bands of `w` lines. When a side is not a multiple of `w` the last band
/// keeps the leftover lines, and its bound is that smaller count.
///
/// `image_width` is the row stride used for flat indices.
pub fn build_segments(bbox: &BoundingBox, w: usize, image_width: usize) -> Result<SegmentSet, BoxError> {
    if w == 0 {
        return Err(BoxError::ZeroSegmentWidth);
    }
    let mut segments = Vec::new();
    let mut start = bbox.top;
    while start < bbox.bottom {
        let end = (start + w).min(bbox.bottom);
        let indices = (start..end)
            .flat_map(|r| (bbox.left..bbox.right).map(move |c| r * image_width + c))
            .collect();
        segments.push(Segment {
            orientation: Orientation::Horizontal,
            lines: end - start,
            indices,
        });
        start = end;
    }
    let mut start = bbox.left;
    while start < bbox.right {
        let end = (start + w).min(bbox.right);
        let indices = (bbox.top..bbox.bottom)
            .flat_map(|r| (start..end).map(move |c| r * image_width + c))
            .collect();
        segments.push(Segment {
            orientation: Orientation::Vertical,
            lines: end - start,
            indices,
        });
        start = end;
    }
    Ok(SegmentSet { segments, width: w })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ConstraintKind {
    Tightness,
    Emptiness,
    SizeLower,
    SizeUpper,
}

/// A constraint `value <= 0` recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstraintResidual {
    pub value: Value,
    pub kind: ConstraintKind,
}

impl ConstraintResidual {
    pub fn is_satisfied(&self, tape: &Tape) -> bool {
        tape.scalar(self.value) <= 0.0
    }
}

/// One residual per segment: `lines - sum of probabilities in the segment`.
pub fn tightness_residuals(
    tape: &mut Tape,
    pred: &PredictionMap,
    segs: &SegmentSet,
) -> Result<Vec<ConstraintResidual>, BoxError> {
    segs.iter()
        .map(|seg| {
            let mass = tape.masked_sum(pred.probs, &seg.indices)?;
            let neg = tape.scalar_mul(mass, -1.0);
            Ok(ConstraintResidual {
                value: tape.add_scalar(neg, seg.lines as f64),
                kind: ConstraintKind::Tightness,
            })
        })
        .collect()
}

/// Predicted foreground mass outside the box; the bound is exactly zero.
pub fn emptiness_residual(
    tape: &mut Tape,
    pred: &PredictionMap,
    outside: &[usize],
) -> Result<ConstraintResidual, BoxError> {
    Ok(ConstraintResidual {
        value: tape.masked_sum(pred.probs, outside)?,
        kind: ConstraintKind::Emptiness,
    })
}

/// Residuals of `eps |box| <= sum over the image <= |box|`, returned as
/// `(lower, upper)`.
pub fn size_residuals(
    tape: &mut Tape,
    pred: &PredictionMap,
    bbox: &BoundingBox,
    eps: f64,
) -> Result<(ConstraintResidual, ConstraintResidual), BoxError> {
    if !(0.0..1.0).contains(&eps) {
        return Err(BoxError::InvalidEps(eps));
    }
    let area = bbox.area() as f64;
    let total = tape.sum(pred.probs);
    let neg = tape.scalar_mul(total, -1.0);
    let lower = tape.add_scalar(neg, eps * area);
    let upper = tape.add_scalar(total, -area);
    Ok((
        ConstraintResidual {
            value: lower,
            kind: ConstraintKind::SizeLower,
        },
        ConstraintResidual {
            value: upper,
            kind: ConstraintKind::SizeUpper,
        },
    ))
}

/// Cross-entropy restricted to the outside pixels, all labelled background:
/// `-sum log(1 - s(p))`, computed from logits as `sum softplus(x)`.
pub fn masked_ce(tape: &mut Tape, pred: &PredictionMap, outside: &[usize]) -> Result<Value, BoxError> {
    let sp = tape.softplus(pred.logits);
    Ok(tape.masked_sum(sp, outside)?)
}

/// Binary cross-entropy summed over the whole image,
/// `sum softplus(x) - y x`, which equals `-[y log s + (1-y) log(1-s)]`.
pub fn full_ce(tape: &mut Tape, pred: &PredictionMap, mask: &LabelMask) -> Result<Value, BoxError> {
    if (mask.height(), mask.width()) != (pred.height, pred.width) {
        return Err(BoxError::MaskShape {
            mask_h: mask.height(),
            mask_w: mask.width(),
            pred_h: pred.height,
            pred_w: pred.width,
        });
    }
    let y = tape.constant(Tensor::new(vec![pred.height, pred.width], mask.as_f64())?);
    let sp = tape.softplus(pred.logits);
    let spsum = tape.sum(sp);
    let yx = tape.mul(pred.logits, y)?;
    let yxsum = tape.sum(yx);
    Ok(tape.sub(spsum, yxsum)?)
}

/// Everything the trainer needs from one box, computed once per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxSupervision {
    pub bbox: BoundingBox,
    pub inside: Vec<usize>,
    pub outside: Vec<usize>,
    pub segments: SegmentSet,
}

impl BoxSupervision {
    pub fn new(bbox: BoundingBox, height: usize, width: usize, w: usize) -> Result<Self, BoxError> {
        let (inside, outside) = partition(&bbox, height, width)?;
        let segments = build_segments(&bbox, w, width)?;
        Ok(Self {
            bbox,
            inside,
            outside,
            segments,
        })
    }
}
