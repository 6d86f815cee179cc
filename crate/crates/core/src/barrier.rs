//! Log-barrier extension, its time schedule, and the quadratic-penalty
//! baseline.
//!
//! For an inequality constraint `z <= 0` the extension is
//!
//! ```text
//! psi_t(z) = -(1/t) log(-z)                    if z <= -1/t^2
//!            t z - (1/t) log(1/t^2) + 1/t      otherwise
//! ```
//!
//! It is defined for every real `z`, including violated constraints, and is
//! C1 at the junction `z = -1/t^2` where both branches have slope `t`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Value};

/// Value of the log-barrier extension at `z` for barrier parameter `t > 0`.
pub fn psi_tilde_value(z: f64, t: f64) -> f64 {
    if z <= -1.0 / (t * t) {
        -(-z).ln() / t
    } else {
        t * z - (1.0 / (t * t)).ln() / t + 1.0 / t
    }
}

/// Derivative of [`psi_tilde_value`] with respect to `z`.
pub fn psi_tilde_derivative(z: f64, t: f64) -> f64 {
    if z <= -1.0 / (t * t) {
        -1.0 / (t * z)
    } else {
        t
    }
}

/// Records `psi_t(z)` on the tape.
pub fn psi_tilde(tape: &mut Tape, z: Value, t: f64) -> Value {
    debug_assert!(t > 0.0, "barrier parameter must be positive");
    tape.pointwise(z, |v| (psi_tilde_value(v, t), psi_tilde_derivative(v, t)))
}

pub fn quadratic_penalty_value(z: f64, weight: f64) -> f64 {
    let v = z.max(0.0);
    weight * v * v
}

/// Records `weight * max(0, z)^2` on the tape. Satisfied constraints get a
/// zero gradient.
pub fn quadratic_penalty(tape: &mut Tape, z: Value, weight: f64) -> Value {
    tape.pointwise(z, |v| {
        (quadratic_penalty_value(v, weight), 2.0 * weight * v.max(0.0))
    })
}

/// Exponential raise of the barrier parameter, capped at `t_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierSchedule {
    pub t_init: f64,
    /// Multiplier applied once per epoch.
    pub growth: f64,
    pub t_max: f64,
}

impl Default for BarrierSchedule {
    fn default() -> Self {
        Self {
            t_init: 1.0,
            growth: 1.1,
            t_max: 1.0,
        }
    }
}

impl BarrierSchedule {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.t_init > 0.0 && self.t_init.is_finite()) {
            return Err(format!("t_init must be positive, got {}", self.t_init));
        }
        if !(self.growth >= 1.0 && self.growth.is_finite()) {
            return Err(format!("t growth must be >= 1, got {}", self.growth));
        }
        if !(self.t_max >= self.t_init) {
            return Err(format!(
                "t_max ({}) must be at least t_init ({})",
                self.t_max, self.t_init
            ));
        }
        Ok(())
    }

    /// `min(t_init * growth^epoch, t_max)`.
    pub fn t_at(&self, epoch: usize) -> f64 {
        let exp = i32::try_from(epoch).unwrap_or(i32::MAX);
        (self.t_init * self.growth.powi(exp)).min(self.t_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn grad_at(z: f64, f: impl Fn(&mut Tape, Value) -> Value) -> (f64, f64) {
        let mut tape = Tape::new();
        let zv = tape.leaf(Tensor::scalar(z));
        let out = f(&mut tape, zv);
        let g = tape.backward(out).unwrap();
        (tape.scalar(out), g.wrt(zv).item())
    }

    #[test]
    fn reference_values() {
        assert_eq!(psi_tilde_value(-1.0, 1.0), 0.0);
        assert_eq!(psi_tilde_value(0.0, 1.0), 1.0);
    }

    #[test]
    fn junction_branches_agree() {
        for t in [1.0f64, 5.0, 25.0] {
            let z = -1.0 / (t * t);
            let log_branch = -(-z).ln() / t;
            let lin_branch = t * z - (1.0 / (t * t)).ln() / t + 1.0 / t;
            let expected = -(1.0 / (t * t)).ln() / t;
            assert!((log_branch - expected).abs() < 1e-12);
            assert!((lin_branch - expected).abs() < 1e-12);
            // derivative of the log branch -1/(t z) at the junction is t
            assert!((-1.0 / (t * z) - t).abs() < 1e-9);
        }
    }

    #[test]
    fn tape_gradient_follows_branches() {
        let (v, d) = grad_at(-1.0, |tp, z| psi_tilde(tp, z, 1.0));
        assert_eq!(v, 0.0);
        assert_eq!(d, 1.0);
        let (_, d) = grad_at(3.0, |tp, z| psi_tilde(tp, z, 7.0));
        assert_eq!(d, 7.0);
        let (_, d) = grad_at(-2.0, |tp, z| psi_tilde(tp, z, 4.0));
        assert!((d - 1.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn penalty_definition() {
        let (v, d) = grad_at(-3.0, |tp, z| quadratic_penalty(tp, z, 1.0));
        assert_eq!((v, d), (0.0, 0.0));
        let (v, d) = grad_at(2.0, |tp, z| quadratic_penalty(tp, z, 1.0));
        assert_eq!((v, d), (4.0, 4.0));
        let (_, d) = grad_at(2.0, |tp, z| quadratic_penalty(tp, z, 0.5));
        assert_eq!(d, 2.0);
    }

    #[test]
    fn schedule() {
        let s = BarrierSchedule {
            t_init: 1.0,
            growth: 1.1,
            t_max: 100.0,
        };
        assert_eq!(s.t_at(0), 1.0);
        assert!((s.t_at(2) - 1.21).abs() < 1e-12);
        assert_eq!(s.t_at(10_000), 100.0);
        let d = BarrierSchedule::default();
        assert_eq!(d.t_at(0), 1.0);
        assert_eq!(d.t_at(8), 1.0);
        let sharp = BarrierSchedule {
            t_init: 2.0,
            growth: 2.0,
            t_max: 10.0,
        };
        assert_eq!(sharp.t_at(2), 8.0);
        assert_eq!(sharp.t_at(3), 10.0);
        assert!(BarrierSchedule { growth: 0.9, ..s }.validate().is_err());
        assert!(BarrierSchedule { t_init: 0.0, ..s }.validate().is_err());
    }
}
