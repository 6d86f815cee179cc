//! Finite-difference oracles shared by the gradient tests and the
//! acceptance run.
#![allow(dead_code)]

use boxseg::autodiff::{Tape, Tensor, Value};
use boxseg::barrier::{psi_tilde, quadratic_penalty};
use boxseg::boxprior::{BoundingBox, BoxSupervision, LabelMask};
use boxseg::model::{ModelConfig, SegModel};
use boxseg::trainer::{loss_eq6, TrainConfig, TrainMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-3;
pub const REL: f64 = 1e-4;
pub const ABS: f64 = 1e-6;
// small enough that ReLU and max-pool switches inside the stencil are rare
pub const E2E_H: f64 = 1e-5;
pub const E2E_REL: f64 = 1e-3;

pub fn random(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub fn close(analytic: f64, numeric: f64, rel: f64, abs: f64) -> bool {
    (analytic - numeric).abs() <= abs.max(rel * analytic.abs().max(numeric.abs()))
}

/// Builds `op` on fresh leaves, contracts its output with a fixed random
/// weight tensor, and compares every input coordinate's gradient with a
/// central difference. Returns the number of coordinates checked.
pub fn check<F>(name: &str, inputs: &[Tensor], op: F) -> Result<usize, String>
where
    F: Fn(&mut Tape, &[Value]) -> Value,
{
    let eval = |inputs: &[Tensor]| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let leaves: Vec<Value> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = op(&mut tape, &leaves);
        let shape = tape.value(out).shape().to_vec();
        let weights = tape.constant(random(&shape, -1.0, 1.0, 99));
        let prod = tape.mul(out, weights).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        (tape.scalar(loss), leaves.iter().map(|&v| grads.wrt(v)).collect())
    };
    let (_, analytic) = eval(inputs);
    let mut n = 0;
    for (i, input) in inputs.iter().enumerate() {
        for k in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= H;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * H);
            let a = analytic[i].data()[k];
            if !close(a, numeric, REL, ABS) {
                return Err(format!("{name}: input {i} coordinate {k}: analytic {a} vs numeric {numeric}"));
            }
            n += 1;
        }
    }
    Ok(n)
}

pub fn elementwise_ops() -> Result<usize, String> {
    let a = random(&[3, 4], -2.0, 2.0, 1);
    let b = random(&[3, 4], -2.0, 2.0, 2);
    let s = Tensor::scalar(0.7);
    let mut n = 0;
    n += check("add", &[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]).unwrap())?;
    n += check("sub", &[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]).unwrap())?;
    n += check("mul", &[a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]).unwrap())?;
    n += check("scalar broadcast", &[s, b], |t, v| t.mul(v[0], v[1]).unwrap())?;
    n += check("scalar_mul", std::slice::from_ref(&a), |t, v| t.scalar_mul(v[0], -2.5))?;
    n += check("add_scalar", std::slice::from_ref(&a), |t, v| t.add_scalar(v[0], 3.0))?;
    n += check("sum", std::slice::from_ref(&a), |t, v| t.sum(v[0]))?;
    n += check("masked_sum", std::slice::from_ref(&a), |t, v| t.masked_sum(v[0], &[0, 5, 11]).unwrap())?;
    n += check("sigmoid", std::slice::from_ref(&a), |t, v| t.sigmoid(v[0]))?;
    n += check("softplus", &[a], |t, v| t.softplus(v[0]))?;
    // keep clear of the kink at zero
    let away = random(&[3, 4], 0.1, 2.0, 3);
    let signs = Tensor::new(vec![3, 4], (0..12).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()).unwrap();
    n += check("relu", std::slice::from_ref(&away), |t, v| {
        let s = t.constant(signs.clone());
        let x = t.mul(v[0], s).unwrap();
        t.relu(x)
    })?;
    n += check("log", &[away], |t, v| t.log(v[0]).unwrap())?;
    Ok(n)
}

pub fn convolution() -> Result<usize, String> {
    let x = random(&[1, 2, 5, 5], -1.0, 1.0, 4);
    let k = random(&[3, 2, 3, 3], -1.0, 1.0, 5);
    let b = random(&[3], -1.0, 1.0, 6);
    let mut n = 0;
    for padding in [0, 1] {
        n += check(&format!("conv2d pad {padding}"), &[x.clone(), k.clone(), b.clone()], |t, v| {
            t.conv2d(v[0], v[1], v[2], padding).unwrap()
        })?;
    }
    let x = random(&[2, 3, 4, 6], -1.0, 1.0, 7);
    let k = random(&[2, 3, 1, 1], -1.0, 1.0, 8);
    let b = random(&[2], -1.0, 1.0, 9);
    n += check("conv2d 1x1 batch 2", &[x, k, b], |t, v| t.conv2d(v[0], v[1], v[2], 0).unwrap())?;
    Ok(n)
}

pub fn spatial_ops() -> Result<usize, String> {
    // distinct values so no pooling window has a tie within the step size
    let mut x = random(&[2, 2, 4, 4], 0.0, 1.0, 10);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v += i as f64 * 0.01;
    }
    let y = random(&[2, 3, 4, 4], -1.0, 1.0, 11);
    let mut n = 0;
    n += check("maxpool2d", std::slice::from_ref(&x), |t, v| t.maxpool2d(v[0], 2).unwrap())?;
    n += check("upsample", std::slice::from_ref(&x), |t, v| t.upsample_nearest(v[0], 2).unwrap())?;
    n += check("concat", &[x.clone(), y], |t, v| t.concat_channels(&[v[0], v[1]]).unwrap())?;
    n += check("select_batch", std::slice::from_ref(&x), |t, v| t.select_batch(v[0], 1).unwrap())?;
    n += check("reshape", &[x], |t, v| t.reshape(v[0], &[4, 16]).unwrap())?;
    Ok(n)
}

pub fn barrier_ops() -> Result<usize, String> {
    let mut n = 0;
    for (z, t) in [(-3.0, 1.0), (-0.5, 1.0), (0.2, 1.0), (4.0, 5.0), (-0.01, 5.0), (-1.0, 25.0)] {
        n += check(&format!("psi_tilde z={z} t={t}"), &[Tensor::scalar(z)], |tape, v| psi_tilde(tape, v[0], t))?;
    }
    for z in [-1.0, 0.5, 3.0] {
        n += check(&format!("quadratic z={z}"), &[Tensor::scalar(z)], |tape, v| {
            quadratic_penalty(tape, v[0], 0.7)
        })?;
    }
    Ok(n)
}

/// Full objective on an 8x8 sample, differentiated with respect to
/// `coords` randomly chosen model parameters. Returns how many coordinates
/// were skipped because a kink fell inside the stencil.
pub fn objective(mode: TrainMode, penalty_mode: bool, t: f64, coords: usize) -> Result<usize, String> {
    let model_cfg = ModelConfig {
        zero_head: false,
        head_bias: 0.0,
        seed: 21,
        ..ModelConfig::default()
    };
    let mut model = SegModel::build(&model_cfg).unwrap();
    let cfg = TrainConfig {
        mode,
        penalty_mode,
        w: 2,
        lambda: 0.5,
        ..TrainConfig::default()
    };
    let image = random(&[8, 8], 0.0, 1.0, 22);
    let bbox = BoundingBox::new(2, 1, 7, 6);
    let mut mask = LabelMask::empty(8, 8);
    for r in 3..6 {
        for c in 2..5 {
            mask.set(r, c, true);
        }
    }
    let sup = BoxSupervision::new(bbox, 8, 8, cfg.w).unwrap();

    let loss_of = |model: &SegModel| -> (f64, Vec<Tensor>) {
        let mut tape = Tape::new();
        let (params, pred) = model.forward(&mut tape, &image).unwrap();
        let terms = loss_eq6(&mut tape, &pred, &sup, &mask, &cfg, t).unwrap();
        let g = tape.backward(terms.total).unwrap();
        (tape.scalar(terms.total), params.iter().map(|&p| g.wrt(p)).collect())
    };
    let (_, grads) = loss_of(&model);

    let sizes: Vec<usize> = model.params().iter().map(Tensor::len).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut checked = 0;
    let mut skipped = 0;
    while checked < coords {
        let mut flat = rng.random_range(0..total);
        let mut p = 0;
        while flat >= sizes[p] {
            flat -= sizes[p];
            p += 1;
        }
        let orig = model.params()[p].data()[flat];
        let mut at = |x: f64| {
            model.params_mut()[p].data_mut()[flat] = x;
            loss_of(&model).0
        };
        let (lp, lm) = (at(orig + E2E_H), at(orig - E2E_H));
        let (lph, lmh) = (at(orig + E2E_H / 2.0), at(orig - E2E_H / 2.0));
        model.params_mut()[p].data_mut()[flat] = orig;
        let l0 = loss_of(&model).0;
        // if the one-sided slopes disagree, a ReLU or max-pool switch
        // happened inside the stencil and the central difference is not a
        // derivative
        let right = (lp - l0) / E2E_H;
        let left = (l0 - lm) / E2E_H;
        let right_half = (lph - l0) / (E2E_H / 2.0);
        let left_half = (l0 - lmh) / (E2E_H / 2.0);
        if !close(right, left, 1e-2, 1e-5) || !close(right_half, right, 1e-2, 1e-5) || !close(left_half, left, 1e-2, 1e-5) {
            skipped += 1;
            if skipped >= coords / 4 {
                return Err(format!("{mode:?}: {skipped} coordinates sit on a kink"));
            }
            continue;
        }
        let numeric = (lp - lm) / (2.0 * E2E_H);
        let analytic = grads[p].data()[flat];
        if !close(analytic, numeric, E2E_REL, ABS) {
            return Err(format!("{mode:?} param {p}[{flat}]: analytic {analytic} vs numeric {numeric}"));
        }
        checked += 1;
    }
    Ok(skipped)
}
