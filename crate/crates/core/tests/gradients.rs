//! Reverse-mode gradients against central finite differences.

mod common;

use boxseg::autodiff::{Tape, Tensor};
use boxseg::model::{ModelConfig, SegModel};
use boxseg::trainer::TrainMode;
use common::{random, H};

#[test]
fn elementwise_ops() {
    common::elementwise_ops().unwrap();
}

#[test]
fn sigmoid_derivative_at_point_three() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(0.3));
    let y = tape.sigmoid(x);
    let g = tape.backward(y).unwrap().wrt(x).item();
    let s = 1.0 / (1.0 + (-0.3f64).exp());
    let numeric = (1.0 / (1.0 + (-0.3 - H).exp()) - 1.0 / (1.0 + (-0.3 + H).exp())) / (2.0 * H);
    assert!((g - s * (1.0 - s)).abs() < 1e-6);
    assert!((g - numeric).abs() < 1e-6);
}

#[test]
fn convolution() {
    common::convolution().unwrap();
}

#[test]
fn spatial_ops() {
    common::spatial_ops().unwrap();
}

#[test]
fn barrier_ops() {
    common::barrier_ops().unwrap();
}

#[test]
fn objective_gradient_emptiness() {
    common::objective(TrainMode::EmptinessTightnessSize, false, 5.0, 200).unwrap();
}

#[test]
fn objective_gradient_masked_ce() {
    common::objective(TrainMode::MceTightnessSize, false, 1.0, 200).unwrap();
}

#[test]
fn objective_gradient_penalty() {
    common::objective(TrainMode::TightnessEmptinessOnly, true, 1.0, 200).unwrap();
}

#[test]
fn objective_gradient_full_supervision() {
    common::objective(TrainMode::FullSupervision, false, 1.0, 200).unwrap();
}

#[test]
fn gradients_are_linear_in_the_loss() {
    let x0 = random(&[2, 3], -1.0, 1.0, 30);
    let grad_of = |which: u8| {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let sq = tape.mul(x, x).unwrap();
        let a = tape.sum(sq);
        let s = tape.sigmoid(x);
        let b = tape.sum(s);
        let loss = match which {
            0 => a,
            1 => b,
            _ => tape.add(a, b).unwrap(),
        };
        tape.backward(loss).unwrap().wrt(x)
    };
    let (ga, gb, gab) = (grad_of(0), grad_of(1), grad_of(2));
    for k in 0..6 {
        assert!((ga.data()[k] + gb.data()[k] - gab.data()[k]).abs() < 1e-12);
    }
}

#[test]
fn repeated_tapes_are_bit_identical() {
    let run = || {
        let model = SegModel::build(&ModelConfig { zero_head: false, seed: 3, ..ModelConfig::default() }).unwrap();
        let image = random(&[16, 16], 0.0, 1.0, 31);
        let mut tape = Tape::new();
        let (params, pred) = model.forward(&mut tape, &image).unwrap();
        let loss = tape.sum(pred.probs);
        let g = tape.backward(loss).unwrap();
        let mut bits: Vec<u64> = tape.value(pred.probs).data().iter().map(|v| v.to_bits()).collect();
        for p in params {
            bits.extend(g.wrt(p).data().iter().map(|v| v.to_bits()));
        }
        bits
    };
    assert_eq!(run(), run());
}
