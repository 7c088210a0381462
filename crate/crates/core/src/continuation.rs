//! Energy-conserving continuation through a binary peakon–antipeakon
//! collision.
//!
//! At a collision the strengths of the colliding pair blow up while their
//! crests merge, but the variables
//!
//!   z = p₂ + p₁,  w = 2 arctan(p₂ - p₁),  η = q₂ + q₁,  ζ = (p₂ - p₁)²(q₂ - q₁)
//!
//! stay finite and obey a locally Lipschitz ODE through the interaction.
//! This module evaluates that system (and its symmetric 2-peakon reduction
//! ζ = p²q, ω = arctan p) in numerically stable form, enters it from a
//! detected [`CollisionEvent`], and exits back to ordinary peakon
//! coordinates once the cluster has re-separated.
//!
//! The right-hand sides here are the exact reduction of the peakon ODE
//! system under the change of variables: every formula was re-derived from
//! the Hamiltonian system and cross-checked numerically against it, since
//! expressions of the form tanᵏ(w/2)·O(sᵐ) with s = ζ/tan²(w/2) are easy to
//! get wrong. All such products are factored into powers of ζ and cot(w/2)
//! so that nothing multiplies a huge factor by a vanishing one.
//!
//! Branch convention: w lives in (0, 2π). 2 arctan(p₂ - p₁) is shifted by
//! +2π when negative, so an approaching pair (p₂ - p₁ → -∞) enters at
//! w slightly above π, crosses w = π at the collision instant (ẇ = -1
//! there), and exits below π with the strength difference flipped.

use crate::dynamics::{CollisionEvent, IntegratorSettings};
use crate::error::{Error, Result};
use crate::field::{MultipeakonState, Peakon};
use crate::ode::EmbeddedStepper;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Series/direct switch for the stable kernels.
pub const KERNEL_SERIES_CUT: f64 = 1e-4;

/// Admissibility window for w during continuation.
const W_MIN: f64 = 0.05;
const W_MAX: f64 = 2.0 * PI - 0.05;

/// Rescaled-time budget for reaching separation.
const CONTINUATION_TIME_BUDGET: f64 = 50.0;

/// Stable evaluation of the exponential combinations appearing in the
/// rescaled right-hand sides, with a Taylor branch for |s| below
/// [`KERNEL_SERIES_CUT`].
#[derive(Debug, Clone, Copy)]
pub struct StableKernels {
    pub s: f64,
    /// e^{-s}
    pub em: f64,
    /// (1 - e^{-s}) / s
    pub k1: f64,
    /// (1 - e^{-s} - s e^{-s}) / s²
    pub k2: f64,
    /// sinh(s/2)
    pub sinh_half: f64,
    /// cosh(s/2)
    pub cosh_half: f64,
    /// sinh(s/2) / (s/2)
    pub sinhc_half: f64,
}

impl StableKernels {
    pub fn eval(s: f64) -> Self {
        if s.abs() < KERNEL_SERIES_CUT {
            Self::eval_series(s)
        } else {
            Self::eval_direct(s)
        }
    }

    /// Taylor branch: truncation error below 1e-20 relative at the cut.
    pub fn eval_series(s: f64) -> Self {
        let k1 = 1.0 + s * (-0.5 + s * (1.0 / 6.0 + s * (-1.0 / 24.0 + s / 120.0)));
        let k2 = 0.5 + s * (-1.0 / 3.0 + s * (0.125 + s * (-1.0 / 30.0 + s / 144.0)));
        let h = 0.5 * s;
        let h2 = h * h;
        let sinhc = 1.0 + h2 / 6.0 + h2 * h2 / 120.0;
        StableKernels {
            s,
            em: (-s).exp(),
            k1,
            k2,
            sinh_half: h * sinhc,
            cosh_half: 1.0 + h2 * (0.5 + h2 / 24.0),
            sinhc_half: sinhc,
        }
    }

    /// Direct branch. k2 is the delicate one: for moderate s it is computed
    /// as e^{-s}(e^s - 1 - s)/s² with a compensated series for e^s - 1 - s,
    /// and for large s from the defining expression where no cancellation
    /// remains.
    pub fn eval_direct(s: f64) -> Self {
        let em = (-s).exp();
        let k1 = -(-s).exp_m1() / s;
        let k2 = if s.abs() < 0.5 {
            // e^s - 1 - s = Σ_{k>=2} s^k / k!
            let mut term = 0.5 * s * s;
            let mut sum = term;
            for k in 3..30 {
                term *= s / k as f64;
                sum += term;
                if term.abs() <= f64::EPSILON * sum.abs() {
                    break;
                }
            }
            em * sum / (s * s)
        } else {
            (1.0 - em - s * em) / (s * s)
        };
        let h = 0.5 * s;
        let sinh_half = h.sinh();
        StableKernels {
            s,
            em,
            k1,
            k2,
            sinh_half,
            cosh_half: h.cosh(),
            sinhc_half: if h == 0.0 { 1.0 } else { sinh_half / h },
        }
    }
}

/// Rescaled coordinates of the symmetric peakon–antipeakon pair
/// u = p e^{-|x+q|} - p e^{-|x-q|}: ζ = p²q, ω = arctan p.
///
/// ω crosses π/2 at the collision with ω̇ = 1 there, while p = tan ω blows
/// up through ±∞ and q = ζ cot²ω touches zero.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SymmetricRescaledState {
    pub zeta: f64,
    pub omega: f64,
    pub t: f64,
}

/// Right-hand side of the symmetric rescaled flow, (dζ/dt, dω/dt).
///
/// With the gap g = 2 ζ cot²ω between the two crests:
///
///   ζ̇ = -tan³ω (1 - e^{-g} - g e^{-g}) = -4 ζ² cot(ω) k2(g),
///   ω̇ = sin²ω e^{-g},
///
/// which is the exact image of q̇ = -p(1 - e^{-2q}), ṗ = p² e^{-2q} under
/// the change of variables and is smooth at ω = π/2 (ζ̇ → 0, ω̇ → 1).
pub fn rhs_symmetric(state: &SymmetricRescaledState) -> (f64, f64) {
    let (sin, cos) = state.omega.sin_cos();
    let cot = cos / sin;
    let g = 2.0 * state.zeta * cot * cot;
    let k = StableKernels::eval(g);
    let dzeta = -4.0 * state.zeta * state.zeta * cot * k.k2;
    let domega = sin * sin * k.em;
    (dzeta, domega)
}

/// Rescaled coordinates of a general binary collision cluster plus
/// spectator peakons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RescaledCollisionState {
    /// p₂ + p₁ of the cluster.
    pub z: f64,
    /// 2 arctan(p₂ - p₁), mapped into (0, 2π); collision at w = π.
    pub w: f64,
    /// q₂ + q₁ (twice the cluster position).
    pub eta: f64,
    /// (p₂ - p₁)² (q₂ - q₁) ≥ 0; continuous through the collision.
    pub zeta: f64,
    /// Peakons outside the cluster, in crest order.
    pub spectators: Vec<Peakon>,
    pub t: f64,
}

impl RescaledCollisionState {
    /// Crest gap q₂ - q₁ = ζ / tan²(w/2) of the cluster.
    pub fn gap(&self) -> f64 {
        let t = (0.5 * self.w).tan();
        self.zeta / (t * t)
    }
}

/// Time derivative of every field of [`RescaledCollisionState`].
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledDerivative {
    pub dz: f64,
    pub dw: f64,
    pub deta: f64,
    pub dzeta: f64,
    /// (dq, dp) per spectator, in the state's spectator order.
    pub dspectators: Vec<(f64, f64)>,
}

/// Right-hand side of the general rescaled system.
///
/// Cluster–spectator couplings carry the factor e^{-|q_j - η/2|}, resolved
/// by the side ε_j = sign(q_j - η/2) of each spectator relative to the
/// cluster position η/2; the two sides mirror each other as forced by the
/// original peakon system.
pub fn rhs_general(state: &RescaledCollisionState) -> Result<RescaledDerivative> {
    let w = state.w;
    if !(w > 0.0 && w < 2.0 * PI) {
        return Err(Error::Domain(format!("w = {w} outside (0, 2pi)")));
    }
    let half = 0.5 * w;
    let tan_half = half.tan();
    let (sin_half, cos_half) = half.sin_cos();
    let z = state.z;
    let zeta = state.zeta;
    let s = zeta / (tan_half * tan_half);
    if s.abs() > 500.0 {
        return Err(Error::Domain(format!("cluster gap {s:.3e} outside the admissible neighborhood")));
    }
    let k = StableKernels::eval(s);

    // Stable groupings: T sinh(s/2) = (ζ / 2T) sinhc, T² sinh(s/2) = (ζ/2) sinhc,
    // T³ (1 - e^{-s} - s e^{-s}) = (ζ²/T) k2.
    let t_sinh = 0.5 * zeta / tan_half * k.sinhc_half;
    let t2_sinh = 0.5 * zeta * k.sinhc_half;
    let sin_w = w.sin();
    let cos_half_sq = cos_half * cos_half;

    let mut dw = (z * z * cos_half_sq - sin_half * sin_half) * k.em;
    let mut dz = 0.0;
    let mut deta = z * (1.0 + k.em);
    let mut dzeta = z * z * zeta / tan_half * k.em + zeta * zeta / tan_half * k.k2;

    let cluster_pos = 0.5 * state.eta;
    let gap = s;
    let m = state.spectators.len();
    let mut dspectators = vec![(0.0, 0.0); m];

    for (j, spec) in state.spectators.iter().enumerate() {
        let offset = spec.q - cluster_pos;
        if 2.0 * offset.abs() <= gap {
            return Err(Error::SpectatorOverlap { index: j, t: state.t });
        }
        let eps = if offset > 0.0 { 1.0 } else { -1.0 };
        let d = (-offset.abs()).exp();
        let pj = spec.p;

        dz -= pj * d * (eps * z * k.cosh_half + t_sinh);
        dw -= pj * d * (2.0 * z * cos_half_sq * k.sinh_half + eps * sin_w * k.cosh_half);
        deta += 2.0 * k.cosh_half * pj * d;
        dzeta += 2.0 * pj * d * (eps * (t2_sinh - zeta * k.cosh_half) - z * zeta / tan_half * k.sinh_half);

        // spectator's own motion: cluster coupling plus ordinary pair terms
        let mut dq = d * (z * k.cosh_half + eps * t_sinh) + pj;
        let mut dp = pj * d * (eps * z * k.cosh_half + t_sinh);
        for (kk, other) in state.spectators.iter().enumerate() {
            if kk == j {
                continue;
            }
            let diff = spec.q - other.q;
            let e = (-diff.abs()).exp();
            dq += other.p * e;
            if diff > 0.0 {
                dp += pj * other.p * e;
            } else if diff < 0.0 {
                dp -= pj * other.p * e;
            }
        }
        dspectators[j] = (dq, dp);
    }

    Ok(RescaledDerivative { dz, dw, deta, dzeta, dspectators })
}

/// Map a detected collision into the rescaled coordinates.
///
/// Initial data: z and η from the pair at handoff, ζ = e_τ (the variable is
/// continuous through the collision, so the handoff value seeds it), and
/// w = 2 arctan(p₂ - p₁) shifted into (0, 2π).
pub fn enter_rescaled(event: &CollisionEvent) -> Result<RescaledCollisionState> {
    if !(event.e_tau > 0.0) {
        return Err(Error::BadCollisionData(format!(
            "concentrated energy e_tau must be positive, got {}",
            event.e_tau
        )));
    }
    let [a, b] = event.pair;
    let p_diff = b.p - a.p;
    let mut w = 2.0 * p_diff.atan();
    if w < 0.0 {
        w += 2.0 * PI;
    }
    if w == 0.0 {
        return Err(Error::BadCollisionData("colliding pair with equal strengths".into()));
    }
    Ok(RescaledCollisionState {
        z: a.p + b.p,
        w,
        eta: a.q + b.q,
        zeta: event.e_tau,
        spectators: event.spectators.clone(),
        t: event.tau,
    })
}

/// Invert the rescaled coordinates back to separated peakons.
///
/// Requires the cluster gap ζ/tan²(w/2) to have reached `gap_min` and w to
/// be bounded away from 0 and 2π so the strength difference tan(w/2) is
/// recoverable.
pub fn exit_rescaled(state: &RescaledCollisionState, gap_min: f64) -> Result<MultipeakonState> {
    let half = 0.5 * state.w;
    let t = half.tan();
    if !t.is_finite() || t == 0.0 || !(state.w > 1e-6 && state.w < 2.0 * PI - 1e-6) {
        return Err(Error::Domain(format!("w = {} too close to the branch ends", state.w)));
    }
    let gap = state.zeta / (t * t);
    if !(gap >= gap_min) {
        return Err(Error::NotYetSeparated { gap, gap_min });
    }
    let p1 = 0.5 * (state.z - t);
    let p2 = 0.5 * (state.z + t);
    let q1 = 0.5 * (state.eta - gap);
    let q2 = 0.5 * (state.eta + gap);
    let mut peakons = state.spectators.clone();
    peakons.push(Peakon::new(q1, p1));
    peakons.push(Peakon::new(q2, p2));
    MultipeakonState::from_unsorted(state.t, peakons)
}

/// One recorded point of the rescaled flow (for trace output).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContinuationSample {
    pub t: f64,
    pub z: f64,
    pub w: f64,
    pub eta: f64,
    pub zeta: f64,
    pub spectators: Vec<Peakon>,
}

fn pack(state: &RescaledCollisionState) -> Vec<f64> {
    let mut y = vec![state.z, state.w, state.eta, state.zeta];
    y.extend(state.spectators.iter().map(|s| s.q));
    y.extend(state.spectators.iter().map(|s| s.p));
    y
}

fn unpack(t: f64, y: &[f64]) -> RescaledCollisionState {
    let m = (y.len() - 4) / 2;
    let spectators =
        (0..m).map(|j| Peakon::new(y[4 + j], y[4 + m + j])).collect();
    RescaledCollisionState { z: y[0], w: y[1], eta: y[2], zeta: y[3], spectators, t }
}

/// Integrate the rescaled system from a collision event until the cluster
/// has re-separated to `settings.handoff_gap`, then return to peakon
/// coordinates. Records the rescaled trajectory at every accepted step.
pub fn continue_through_collision_traced(
    event: &CollisionEvent,
    settings: &IntegratorSettings,
) -> Result<(MultipeakonState, Vec<ContinuationSample>)> {
    settings.validate()?;
    let entry = enter_rescaled(event)?;
    let gap_min = settings.handoff_gap;
    let m = entry.spectators.len();
    let t0 = entry.t;

    let mut stepper = EmbeddedStepper::new(settings.rel_tol, settings.abs_tol, settings.max_step);
    let mut y = pack(&entry);
    let mut t = t0;
    let mut trace = Vec::new();
    let record = |trace: &mut Vec<ContinuationSample>, t: f64, y: &[f64]| {
        let st = unpack(t, y);
        trace.push(ContinuationSample {
            t,
            z: st.z,
            w: st.w,
            eta: st.eta,
            zeta: st.zeta,
            spectators: st.spectators,
        });
    };
    record(&mut trace, t, &y);

    let overlap = std::cell::Cell::new(false);
    let rhs = |tt: f64, y: &[f64], dy: &mut [f64]| {
        let st = unpack(tt, y);
        match rhs_general(&st) {
            Ok(d) => {
                dy[0] = d.dz;
                dy[1] = d.dw;
                dy[2] = d.deta;
                dy[3] = d.dzeta;
                for j in 0..m {
                    dy[4 + j] = d.dspectators[j].0;
                    dy[4 + m + j] = d.dspectators[j].1;
                }
            }
            Err(_) => {
                overlap.set(true);
                dy.fill(0.0);
            }
        }
    };
    let admissible = |y: &[f64]| -> bool {
        y.iter().all(|v| v.is_finite()) && y[1] > W_MIN && y[1] < W_MAX && y[3] > 0.0
    };

    let exited = |y: &[f64]| -> bool {
        let half = 0.5 * y[1];
        let tan = half.tan();
        y[1] < PI && y[3] / (tan * tan) >= gap_min
    };

    while !exited(&y) {
        if t - t0 > CONTINUATION_TIME_BUDGET {
            return Err(Error::ContinuationStalled { elapsed: t - t0, w: y[1] });
        }
        let s = stepper.step(&rhs, t, &y, f64::INFINITY, &admissible)?;
        if overlap.get() {
            let st = unpack(s.t, &s.y);
            return Err(rhs_general(&st).err().unwrap_or(Error::ContinuationStalled {
                elapsed: s.t - t0,
                w: s.y[1],
            }));
        }
        t = s.t;
        y = s.y;
        record(&mut trace, t, &y);
    }

    let final_state = unpack(t, &y);
    Ok((exit_rescaled(&final_state, gap_min)?, trace))
}

/// As [`continue_through_collision_traced`], without keeping the trace.
pub fn continue_through_collision(
    event: &CollisionEvent,
    settings: &IntegratorSettings,
) -> Result<MultipeakonState> {
    continue_through_collision_traced(event, settings).map(|(s, _)| s)
}

/// Integrate the symmetric (ζ, ω) flow until the pair has re-separated to
/// `gap_min` past the collision, returning the final rescaled state.
pub fn continue_symmetric(
    start: &SymmetricRescaledState,
    gap_min: f64,
    settings: &IntegratorSettings,
) -> Result<SymmetricRescaledState> {
    settings.validate()?;
    let mut st = EmbeddedStepper::new(settings.rel_tol, settings.abs_tol, settings.max_step);
    let mut y = vec![start.zeta, start.omega];
    let mut t = start.t;
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let s = SymmetricRescaledState { zeta: y[0], omega: y[1], t: 0.0 };
        let (dzeta, domega) = rhs_symmetric(&s);
        dy[0] = dzeta;
        dy[1] = domega;
    };
    let gap_of = |y: &[f64]| {
        let cot = y[1].cos() / y[1].sin();
        2.0 * y[0] * cot * cot
    };
    while !(y[1] > std::f64::consts::FRAC_PI_2 && gap_of(&y) >= gap_min) {
        if t - start.t > CONTINUATION_TIME_BUDGET {
            return Err(Error::ContinuationStalled { elapsed: t - start.t, w: y[1] });
        }
        let s = st.step(&rhs, t, &y, f64::INFINITY, &|y| {
            y.iter().all(|v| v.is_finite()) && y[1] > 0.0 && y[1] < PI
        })?;
        t = s.t;
        y = s.y;
    }
    Ok(SymmetricRescaledState { zeta: y[0], omega: y[1], t })
}

/// Peakon pair encoded by a symmetric rescaled state: crests at ∓ζcot²ω
/// with strengths ±tan ω (left strength tan ω, right the negative).
pub fn pair_from_symmetric(state: &SymmetricRescaledState) -> Result<MultipeakonState> {
    let tan = state.omega.tan();
    if tan == 0.0 || !tan.is_finite() {
        return Err(Error::Domain("omega at a branch end".into()));
    }
    let q = state.zeta / (tan * tan);
    MultipeakonState::from_unsorted(
        state.t,
        vec![Peakon::new(-q, tan), Peakon::new(q, -tan)],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn kernels_series_matches_direct_at_cut() {
        for &s in &[KERNEL_SERIES_CUT, -KERNEL_SERIES_CUT] {
            let a = StableKernels::eval_series(s);
            let b = StableKernels::eval_direct(s);
            assert_relative_eq!(a.k1, b.k1, max_relative = 1e-12);
            assert_relative_eq!(a.k2, b.k2, max_relative = 1e-12);
            assert_relative_eq!(a.sinh_half, b.sinh_half, max_relative = 1e-12);
            assert_relative_eq!(a.cosh_half, b.cosh_half, max_relative = 1e-12);
            assert_relative_eq!(a.sinhc_half, b.sinhc_half, max_relative = 1e-12);
        }
    }

    #[test]
    fn kernels_limits_at_zero() {
        let k = StableKernels::eval(0.0);
        assert_eq!(k.em, 1.0);
        assert_eq!(k.k1, 1.0);
        assert_eq!(k.k2, 0.5);
        assert_eq!(k.sinh_half, 0.0);
        assert_eq!(k.cosh_half, 1.0);
        assert_eq!(k.sinhc_half, 1.0);
    }

    #[test]
    fn kernels_against_reference_values() {
        let k = StableKernels::eval(0.7);
        assert_relative_eq!(k.em, (-0.7f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(k.k1, (1.0 - (-0.7f64).exp()) / 0.7, max_relative = 1e-14);
        assert_relative_eq!(
            k.k2,
            (1.0 - (-0.7f64).exp() - 0.7 * (-0.7f64).exp()) / 0.49,
            max_relative = 1e-13
        );
    }

    #[test]
    fn symmetric_rhs_at_collision_point() {
        let s = SymmetricRescaledState { zeta: 0.25, omega: FRAC_PI_2, t: 0.0 };
        let (dzeta, domega) = rhs_symmetric(&s);
        assert_relative_eq!(domega, 1.0, max_relative = 1e-14);
        assert!(dzeta.abs() < 1e-15, "dzeta = {dzeta}");
    }

    #[test]
    fn symmetric_rhs_at_zero_zeta() {
        let s = SymmetricRescaledState { zeta: 0.0, omega: std::f64::consts::FRAC_PI_4, t: 0.0 };
        let (dzeta, domega) = rhs_symmetric(&s);
        assert_eq!(dzeta, 0.0);
        assert_relative_eq!(domega, 0.5, max_relative = 1e-15);
    }

    #[test]
    fn symmetric_rhs_matches_naive_formula_away_from_pi_half() {
        let s = SymmetricRescaledState { zeta: 0.25, omega: 1.2, t: 0.0 };
        let (dzeta, domega) = rhs_symmetric(&s);
        let cot = 1.2f64.cos() / 1.2f64.sin();
        let g = 2.0 * 0.25 * cot * cot;
        let naive_dzeta = -(1.2f64.tan().powi(3)) * (1.0 - (-g).exp() - g * (-g).exp());
        let naive_domega = 1.2f64.sin().powi(2) * (-g).exp();
        assert_relative_eq!(dzeta, naive_dzeta, max_relative = 1e-10);
        assert_relative_eq!(domega, naive_domega, max_relative = 1e-10);
    }

    #[test]
    fn symmetric_rhs_reduces_raw_pair_dynamics() {
        // (q, p) -> (ζ, ω): the rescaled field must equal the pushforward of
        // q̇ = -p(1 - e^{-2q}), ṗ = p² e^{-2q}.
        for &(q, p) in &[(0.4f64, 1.3f64), (0.05, 3.0), (1.2, 0.3)] {
            let zeta = p * p * q;
            let omega = p.atan();
            let (dzeta, domega) = rhs_symmetric(&SymmetricRescaledState { zeta, omega, t: 0.0 });
            let dq = -p * (1.0 - (-2.0 * q).exp());
            let dp = p * p * (-2.0 * q).exp();
            let dzeta_raw = 2.0 * p * dp * q + p * p * dq;
            let domega_raw = dp / (1.0 + p * p);
            assert_relative_eq!(dzeta, dzeta_raw, max_relative = 1e-11, epsilon = 1e-13);
            assert_relative_eq!(domega, domega_raw, max_relative = 1e-11);
        }
    }

    fn event_for_pair(p: f64, gap: f64, spectators: Vec<Peakon>) -> CollisionEvent {
        let q = 0.5 * gap;
        CollisionEvent {
            tau: 0.0,
            indices: (0, 1),
            q_bar: 0.0,
            e_tau: (2.0 * p).powi(2) * gap,
            pair: [Peakon::new(-q, p), Peakon::new(q, -p)],
            spectators,
        }
    }

    #[test]
    fn enter_rescaled_branch_convention() {
        // peakon 1 = (-Q, P), peakon 2 = (Q, -P): p2 - p1 = -2P < 0 maps to
        // w in (pi, 2pi); zeta = (2P)² · 2Q = 8 P² Q.
        let (p, q) = (22.0, 5e-4);
        let ev = event_for_pair(p, 2.0 * q, vec![]);
        let rs = enter_rescaled(&ev).unwrap();
        assert_eq!(rs.z, 0.0);
        assert_eq!(rs.eta, 0.0);
        assert_relative_eq!(rs.zeta, 8.0 * p * p * q, max_relative = 1e-14);
        assert!(rs.w > PI && rs.w < 2.0 * PI, "w = {}", rs.w);
        assert_relative_eq!(rs.w, 2.0 * (-2.0 * p).atan() + 2.0 * PI, max_relative = 1e-14);
    }

    #[test]
    fn enter_rescaled_keeps_spectators() {
        let spec = vec![Peakon::new(-7.0, 0.3), Peakon::new(9.0, -0.2)];
        let ev = event_for_pair(10.0, 1e-3, spec.clone());
        let rs = enter_rescaled(&ev).unwrap();
        assert_eq!(rs.spectators, spec);
    }

    #[test]
    fn enter_rescaled_rejects_zero_energy() {
        let mut ev = event_for_pair(10.0, 1e-3, vec![]);
        ev.e_tau = 0.0;
        assert!(matches!(enter_rescaled(&ev), Err(Error::BadCollisionData(_))));
    }

    #[test]
    fn exit_enter_round_trip() {
        let ev = event_for_pair(15.0, 2e-3, vec![Peakon::new(6.0, 0.4)]);
        let rs = enter_rescaled(&ev).unwrap();
        let back = exit_rescaled(&rs, 1e-3).unwrap();
        let again = ev.pre_collision_state().unwrap();
        for (a, b) in back.peakons.iter().zip(&again.peakons) {
            assert_relative_eq!(a.q, b.q, max_relative = 1e-12, epsilon = 1e-15);
            assert_relative_eq!(a.p, b.p, max_relative = 1e-12);
        }
    }

    #[test]
    fn exit_rescaled_not_yet_separated() {
        let ev = event_for_pair(15.0, 2e-4, vec![]);
        let rs = enter_rescaled(&ev).unwrap();
        assert!(matches!(
            exit_rescaled(&rs, 1e-3),
            Err(Error::NotYetSeparated { .. })
        ));
    }

    #[test]
    fn general_rhs_at_w_pi() {
        let rs = RescaledCollisionState {
            z: 0.0,
            w: PI,
            eta: 0.0,
            zeta: 2.0,
            spectators: vec![],
            t: 0.0,
        };
        let d = rhs_general(&rs).unwrap();
        assert_relative_eq!(d.dw, -1.0, max_relative = 1e-12);
        assert_eq!(d.deta, 0.0);
        assert!(d.dzeta.abs() < 1e-12, "dzeta = {}", d.dzeta);
    }

    #[test]
    fn general_rhs_eta_static_for_symmetric_data() {
        let ev = event_for_pair(20.0, 1e-3, vec![]);
        let rs = enter_rescaled(&ev).unwrap();
        let d = rhs_general(&rs).unwrap();
        assert!(d.deta.abs() < 1e-14, "eta must stay 0 for z = 0, got {}", d.deta);
        assert!(d.dz.abs() < 1e-14);
    }

    #[test]
    fn general_rhs_matches_hsys_pushforward() {
        // 4-peakon state: left spectator, approaching cluster, right spectator
        let q = [-4.0, -0.15, 0.2, 3.5];
        let p = [0.4, 1.3, -0.9, -0.3];
        let rs = RescaledCollisionState {
            z: p[1] + p[2],
            w: 2.0 * (p[2] - p[1]).atan() + 2.0 * PI,
            eta: q[1] + q[2],
            zeta: (p[2] - p[1]).powi(2) * (q[2] - q[1]),
            spectators: vec![Peakon::new(q[0], p[0]), Peakon::new(q[3], p[3])],
            t: 0.0,
        };
        let d = rhs_general(&rs).unwrap();

        // reference: raw peakon system on all four
        let state = MultipeakonState::new(
            0.0,
            q.iter().zip(&p).map(|(&qq, &pp)| Peakon::new(qq, pp)).collect(),
        )
        .unwrap();
        let (dq, dp) = crate::dynamics::rhs_hsys(&state).unwrap();
        let dz = dp[1] + dp[2];
        let dpdiff = dp[2] - dp[1];
        let pdiff = p[2] - p[1];
        let dw = 2.0 * dpdiff / (1.0 + pdiff * pdiff);
        let deta = dq[1] + dq[2];
        let dzeta = 2.0 * pdiff * dpdiff * (q[2] - q[1]) + pdiff * pdiff * (dq[2] - dq[1]);

        assert_relative_eq!(d.dz, dz, max_relative = 1e-12, epsilon = 1e-14);
        assert_relative_eq!(d.dw, dw, max_relative = 1e-12, epsilon = 1e-14);
        assert_relative_eq!(d.deta, deta, max_relative = 1e-12, epsilon = 1e-14);
        assert_relative_eq!(d.dzeta, dzeta, max_relative = 1e-12, epsilon = 1e-14);
        assert_relative_eq!(d.dspectators[0].0, dq[0], max_relative = 1e-12);
        assert_relative_eq!(d.dspectators[0].1, dp[0], max_relative = 1e-12);
        assert_relative_eq!(d.dspectators[1].0, dq[3], max_relative = 1e-12);
        assert_relative_eq!(d.dspectators[1].1, dp[3], max_relative = 1e-12);
    }

    #[test]
    fn spectator_coupling_decays_exponentially() {
        let make = |dist: f64| {
            let ev = event_for_pair(20.0, 1e-3, vec![Peakon::new(dist, 0.5)]);
            let rs = enter_rescaled(&ev).unwrap();
            let d = rhs_general(&rs).unwrap();
            // η̇ picks up 2 cosh(s/2) p_j e^{-dist} from the spectator
            d.deta
        };
        let c1 = make(3.0);
        let c2 = make(6.0);
        // doubling the distance squares the coupling factor e^{-d}
        assert_relative_eq!(c2, c1 * (-3.0f64).exp(), max_relative = 1e-10);
        assert_relative_eq!(c2 / c1, (-3.0f64).exp(), max_relative = 1e-10);
    }

    #[test]
    fn spectator_overlap_detected() {
        let ev = event_for_pair(20.0, 1e-3, vec![Peakon::new(1e-5, 0.5)]);
        let rs = enter_rescaled(&ev).unwrap();
        assert!(matches!(rhs_general(&rs), Err(Error::SpectatorOverlap { .. })));
    }

    #[test]
    fn continuation_conserves_pair_energy() {
        // E_pair = p²(1 - e^{-gap}) = 0.5 with gap = 1e-3
        let gap = 1e-3f64;
        let p = (0.5 / (1.0 - (-gap).exp())).sqrt();
        let ev = event_for_pair(p, gap, vec![]);
        let out = continue_through_collision(&ev, &IntegratorSettings::default()).unwrap();
        assert_eq!(out.len(), 2);
        let gap_out = out.peakons[1].q - out.peakons[0].q;
        let e_pair_out = out.peakons[0].p.powi(2) * (1.0 - (-gap_out).exp());
        assert_relative_eq!(e_pair_out, 0.5, max_relative = 1e-8);
        // antisymmetry preserved, strengths flipped sign
        assert_relative_eq!(out.peakons[0].q, -out.peakons[1].q, max_relative = 1e-9, epsilon = 1e-12);
        assert_relative_eq!(out.peakons[0].p, -out.peakons[1].p, max_relative = 1e-9);
        assert!(out.peakons[0].p < 0.0, "left peakon exits negative");
        assert!(out.t > ev.tau);
    }

    #[test]
    fn continuation_matches_symmetric_route() {
        // integrate both rescaled systems through the collision to the same
        // fixed time and compare the reconstructed peakon pairs
        let gap = 1e-3f64;
        let p = (0.5 / (1.0 - (-gap).exp())).sqrt();
        let ev = event_for_pair(p, gap, vec![]);
        let entry = enter_rescaled(&ev).unwrap();
        let t_final = 0.4;

        let rhs_g = |tt: f64, y: &[f64], dy: &mut [f64]| {
            let st = unpack(tt, y);
            let d = rhs_general(&st).unwrap();
            dy[0] = d.dz;
            dy[1] = d.dw;
            dy[2] = d.deta;
            dy[3] = d.dzeta;
        };
        let mut stepper = EmbeddedStepper::new(1e-12, 1e-14, 0.05);
        let mut y = pack(&entry);
        let mut t = entry.t;
        while t < t_final {
            let s = stepper.step(&rhs_g, t, &y, t_final, &|_| true).unwrap();
            t = s.t;
            y = s.y;
        }
        let general = exit_rescaled(&unpack(t, &y), 0.0).unwrap();

        let rhs_s = |_tt: f64, y: &[f64], dy: &mut [f64]| {
            let s = SymmetricRescaledState { zeta: y[0], omega: y[1], t: 0.0 };
            let (dzeta, domega) = rhs_symmetric(&s);
            dy[0] = dzeta;
            dy[1] = domega;
        };
        let mut stepper = EmbeddedStepper::new(1e-12, 1e-14, 0.05);
        let mut ys = vec![p * p * (0.5 * gap), p.atan()];
        let mut ts = 0.0;
        while ts < t_final {
            let s = stepper.step(&rhs_s, ts, &ys, t_final, &|_| true).unwrap();
            ts = s.t;
            ys = s.y;
        }
        let pair =
            pair_from_symmetric(&SymmetricRescaledState { zeta: ys[0], omega: ys[1], t: ts }).unwrap();

        for (a, b) in general.peakons.iter().zip(&pair.peakons) {
            assert_relative_eq!(a.q, b.q, max_relative = 1e-8, epsilon = 1e-10);
            assert_relative_eq!(a.p, b.p, max_relative = 1e-8, epsilon = 1e-10);
        }
    }
}
