//! Embedded Dormand–Prince 5(4) stepping with PI step-size control.
//!
//! One generic driver serves both the peakon ODE system and the rescaled
//! collision system. The right-hand sides are smooth away from collisions
//! (and the rescaled system is smooth through them), so an explicit
//! fifth-order pair with error-based step control is the right tool; no
//! stiffness handling is needed.

use crate::error::{Error, Result};

/// Hard floor on the step size; below this the driver reports underflow.
pub const MIN_STEP: f64 = 1e-14;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;

// Dormand–Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b (5th order) minus b̂ (4th order): error coefficients.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Result of one accepted adaptive step.
pub struct AcceptedStep {
    pub y: Vec<f64>,
    pub t: f64,
    /// Scaled error-norm estimate of the accepted step (≤ 1 by construction).
    pub error_estimate: f64,
}

/// Adaptive driver state: current step size plus the PI controller memory.
pub struct EmbeddedStepper {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    h: Option<f64>,
    facold: f64,
}

impl EmbeddedStepper {
    pub fn new(rel_tol: f64, abs_tol: f64, max_step: f64) -> Self {
        EmbeddedStepper { rel_tol, abs_tol, max_step, h: None, facold: 1e-4 }
    }

    /// Propose the step size for the next attempt (the controller still
    /// rejects and shrinks it if the error demands).
    pub fn set_step(&mut self, h: f64) {
        self.h = Some(h);
    }

    fn initial_step(&self, y: &[f64], f0: &[f64]) -> f64 {
        let ynorm = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let fnorm = f0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (0.01 * (1.0 + ynorm) / (1.0 + fnorm)).min(self.max_step).max(MIN_STEP * 100.0)
    }

    /// Advance one accepted step from (t, y), never past `t_stop`.
    ///
    /// `admissible` vetoes a candidate state (e.g. crest ordering flipped);
    /// a veto rejects the step and halves h. `rhs` writes dy/dt into its
    /// third argument.
    pub fn step<F>(
        &mut self,
        rhs: &F,
        t: f64,
        y: &[f64],
        t_stop: f64,
        admissible: &dyn Fn(&[f64]) -> bool,
    ) -> Result<AcceptedStep>
    where
        F: Fn(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        let mut k1 = vec![0.0; n];
        rhs(t, y, &mut k1);
        let mut h = match self.h {
            Some(h) => h,
            None => self.initial_step(y, &k1),
        };
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut k5 = vec![0.0; n];
        let mut k6 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        let mut work = vec![0.0; n];
        let mut y_new = vec![0.0; n];

        loop {
            let hs = h.min(t_stop - t).min(self.max_step);
            if hs < MIN_STEP {
                return Err(Error::StepSizeUnderflow { t, h: hs });
            }

            for i in 0..n {
                work[i] = y[i] + hs * A21 * k1[i];
            }
            rhs(t + hs / 5.0, &work, &mut k2);
            for i in 0..n {
                work[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
            }
            rhs(t + 3.0 * hs / 10.0, &work, &mut k3);
            for i in 0..n {
                work[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            rhs(t + 4.0 * hs / 5.0, &work, &mut k4);
            for i in 0..n {
                work[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            rhs(t + 8.0 * hs / 9.0, &work, &mut k5);
            for i in 0..n {
                work[i] =
                    y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            rhs(t + hs, &work, &mut k6);
            for i in 0..n {
                y_new[i] =
                    y[i] + hs * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
            }
            rhs(t + hs, &y_new, &mut k7);

            let mut err_sq = 0.0;
            for i in 0..n {
                let e = hs
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.abs_tol + self.rel_tol * y[i].abs().max(y_new[i].abs());
                err_sq += (e / sc) * (e / sc);
            }
            let err = (err_sq / n as f64).sqrt();

            if err <= 1.0 && admissible(&y_new) {
                let fac11 = err.max(1e-10).powf(EXPO1);
                let fac = (fac11 / self.facold.powf(BETA) / SAFETY).clamp(0.2, 10.0);
                self.facold = err.max(1e-4);
                self.h = Some((hs / fac).min(self.max_step));
                let snap = t_stop.is_finite()
                    && (t_stop - t) - hs <= f64::EPSILON * t_stop.abs().max(1.0);
                let t_new = if snap { t_stop } else { t + hs };
                return Ok(AcceptedStep { y: std::mem::take(&mut y_new), t: t_new, error_estimate: err });
            }

            h = if err > 1.0 {
                hs * (SAFETY * err.powf(-EXPO1)).clamp(0.1, 0.9)
            } else {
                // admissibility veto despite a small error estimate: halve
                hs * 0.5
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_on_constant_rhs() {
        let mut st = EmbeddedStepper::new(1e-9, 1e-12, 0.25);
        let rhs = |_t: f64, _y: &[f64], dy: &mut [f64]| {
            dy[0] = 2.0;
        };
        let mut t = 0.0;
        let mut y = vec![1.0];
        while t < 1.0 {
            let s = st.step(&rhs, t, &y, 1.0, &|_| true).unwrap();
            t = s.t;
            y = s.y;
        }
        assert!((y[0] - 3.0).abs() < 1e-13, "constant flow must be exact, got {}", y[0]);
        assert_eq!(t, 1.0);
    }

    #[test]
    fn fifth_order_on_exponential() {
        // single fixed-size steps: local error should scale like h^6
        let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[0];
        };
        let mut errs = Vec::new();
        for &h in &[0.1, 0.05] {
            let mut st = EmbeddedStepper::new(1e30, 1e30, h); // never reject
            st.set_step(h);
            let s = st.step(&rhs, 0.0, &[1.0], h, &|_| true).unwrap();
            errs.push((s.y[0] - h.exp()).abs());
        }
        let rate = (errs[0] / errs[1]).log2();
        assert!(rate > 5.3 && rate < 6.7, "local order ~6, got 2^{rate:.2}");
    }

    #[test]
    fn tolerance_controls_global_error() {
        // y' = cos t, y(0) = 0, y(10) = sin 10
        let rhs = |t: f64, _y: &[f64], dy: &mut [f64]| {
            dy[0] = t.cos();
        };
        let mut st = EmbeddedStepper::new(1e-10, 1e-12, 1.0);
        let mut t = 0.0;
        let mut y = vec![0.0];
        while t < 10.0 {
            let s = st.step(&rhs, t, &y, 10.0, &|_| true).unwrap();
            t = s.t;
            y = s.y;
        }
        assert!((y[0] - 10.0f64.sin()).abs() < 1e-8);
    }

    #[test]
    fn underflow_reported() {
        let rhs = |_t: f64, _y: &[f64], dy: &mut [f64]| {
            dy[0] = 1.0;
        };
        let mut st = EmbeddedStepper::new(1e-9, 1e-12, 1.0);
        // admissibility never satisfied -> endless halving -> underflow
        let r = st.step(&rhs, 0.0, &[0.0], 1.0, &|_| false);
        assert!(matches!(r, Err(Error::StepSizeUnderflow { .. })));
    }
}
