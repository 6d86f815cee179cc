//! Weakly supervised binary segmentation from bounding boxes.
//!
//! A small encoder-decoder network is trained from box annotations alone:
//! every row and column band of the box must contain some foreground
//! (tightness), nothing outside the box may be foreground (emptiness), and
//! the foreground area must stay within a fraction of the box. The
//! inequality constraints are enforced through a log-barrier extension.
//!
//! * [`autodiff`]: reverse-mode differentiation over f64 tensors.
//! * [`model`]: the segmentation network and checkpoints.
//! * [`boxprior`]: boxes, masks, segment construction and constraint residuals.
//! * [`barrier`]: the log-barrier extension, quadratic penalty and schedule.
//! * [`synthdata`]: synthetic image/mask/box generation and on-disk format.
//! * [`trainer`]: the training loop, metrics, ablations and margin sweep.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod barrier;
pub mod boxprior;
pub mod model;
pub mod synthdata;
pub mod trainer;
