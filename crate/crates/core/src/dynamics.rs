//! The multipeakon Hamiltonian ODE system with adaptive stepping and
//! binary-collision detection.
//!
//! Between collisions the crest/strength coefficients obey
//!
//!   q̇_i = Σ_j p_j e^{-|q_i - q_j|},
//!   ṗ_i = p_i Σ_j p_j sign(q_i - q_j) e^{-|q_i - q_j|},
//!
//! a Hamiltonian system for H = ½ Σ p_i p_j e^{-|q_i - q_j|}. When two
//! adjacent crests close in with blowing strengths the integrator hands off
//! to the rescaled continuation module; the handoff point is configuration,
//! not physics, because the rescaled variables are continuous through it.

use crate::error::{Error, Result};
use crate::field::{DecayParameters, FieldDiagnostics, MultipeakonState, Peakon};
use crate::ode::EmbeddedStepper;
use serde::{Deserialize, Serialize};

/// Adaptive-integration and collision-trigger configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Adjacent-gap threshold below which a growing pair is handed off.
    pub handoff_gap: f64,
    /// Any strength beyond this magnitude forces a handoff.
    pub strength_blowup: f64,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_step: 0.1,
            handoff_gap: 1e-3,
            strength_blowup: 1e6,
        }
    }
}

impl IntegratorSettings {
    pub fn validate(&self) -> Result<()> {
        let all = [self.rel_tol, self.abs_tol, self.max_step, self.handoff_gap, self.strength_blowup];
        if all.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("integrator settings must all be positive and finite".into()));
        }
        if self.rel_tol > 1e-3 || self.abs_tol > 1e-3 {
            return Err(Error::Config("integrator tolerances must be <= 1e-3".into()));
        }
        Ok(())
    }
}

/// A detected binary interaction, with everything the continuation needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollisionEvent {
    /// Handoff time.
    pub tau: f64,
    /// Adjacent crest indices (i, i+1) of the colliding pair.
    pub indices: (usize, usize),
    /// Collision position estimate (midpoint of the pair at handoff).
    pub q_bar: f64,
    /// Concentrated-energy estimate (p_{i+1} - p_i)² (q_{i+1} - q_i) at handoff.
    pub e_tau: f64,
    /// The colliding pair at handoff, in crest order.
    pub pair: [Peakon; 2],
    /// Every peakon not in the pair, in crest order.
    pub spectators: Vec<Peakon>,
}

impl CollisionEvent {
    /// The full state at the handoff time (pair merged with spectators).
    pub fn pre_collision_state(&self) -> Result<MultipeakonState> {
        let mut pk = self.spectators.clone();
        pk.extend_from_slice(&self.pair);
        MultipeakonState::from_unsorted(self.tau, pk)
    }
}

/// One sampled point of a trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub state: MultipeakonState,
    pub diagnostics: FieldDiagnostics,
}

/// How a simulation ended.
#[derive(Debug, Clone)]
pub enum Outcome {
    Completed(MultipeakonState),
    CollisionDetected(CollisionEvent),
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub samples: Vec<TrajectorySample>,
    pub outcome: Outcome,
}

impl Simulation {
    pub fn final_state(&self) -> Result<MultipeakonState> {
        match &self.outcome {
            Outcome::Completed(s) => Ok(s.clone()),
            Outcome::CollisionDetected(ev) => ev.pre_collision_state(),
        }
    }
}

/// Sampling cadence and the decay weight used for per-sample diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct SamplingConfig {
    /// Sample every `sample_dt` time units; `None` records endpoints only.
    pub sample_dt: Option<f64>,
    pub alpha: DecayParameters,
}

impl SamplingConfig {
    pub fn endpoints_only(alpha: DecayParameters) -> Self {
        SamplingConfig { sample_dt: None, alpha }
    }

    pub fn every(sample_dt: f64, alpha: DecayParameters) -> Self {
        SamplingConfig { sample_dt: Some(sample_dt), alpha }
    }
}

/// Right-hand side of the peakon system. Requires strictly positive gaps;
/// coincident crests belong to the collision path, not to smooth evolution.
pub fn rhs_hsys(state: &MultipeakonState) -> Result<(Vec<f64>, Vec<f64>)> {
    if state.len() > 1 && state.peakons.windows(2).any(|w| w[1].q - w[0].q <= 0.0) {
        return Err(Error::DegenerateState("zero crest gap in rhs evaluation".into()));
    }
    let n = state.len();
    let q = state.positions();
    let p = state.strengths();
    let mut dq = vec![0.0; n];
    let mut dp = vec![0.0; n];
    rhs_raw(&q, &p, &mut dq, &mut dp);
    Ok((dq, dp))
}

/// Unvalidated kernel shared with the stepper; well-defined for any q with
/// the sign(0) = 0 convention.
pub(crate) fn rhs_raw(q: &[f64], p: &[f64], dq: &mut [f64], dp: &mut [f64]) {
    let n = q.len();
    for i in 0..n {
        let mut su = 0.0;
        let mut sx = 0.0;
        for j in 0..n {
            let d = q[i] - q[j];
            let e = (-d.abs()).exp();
            su += p[j] * e;
            if d > 0.0 {
                sx += p[j] * e;
            } else if d < 0.0 {
                sx -= p[j] * e;
            }
        }
        dq[i] = su;
        dp[i] = p[i] * sx;
    }
}

pub(crate) fn pack(state: &MultipeakonState) -> Vec<f64> {
    let mut y = state.positions();
    y.extend(state.strengths());
    y
}

fn unpack(t: f64, y: &[f64]) -> Result<MultipeakonState> {
    let n = y.len() / 2;
    let peakons = (0..n).map(|i| Peakon::new(y[i], y[n + i])).collect();
    MultipeakonState::new(t, peakons)
}

fn ordering_ok(y: &[f64]) -> bool {
    let n = y.len() / 2;
    y[..n].windows(2).all(|w| w[1] >= w[0]) && y.iter().all(|v| v.is_finite())
}

/// One accepted adaptive step of the embedded 5(4) pair.
///
/// Returns the advanced state and the scaled local error estimate of the
/// accepted step. Crest ordering is enforced: a step that would flip two
/// crests is rejected and retried at half the size.
pub fn step(state: &MultipeakonState, settings: &IntegratorSettings) -> Result<(MultipeakonState, f64)> {
    settings.validate()?;
    if state.len() > 1 && state.peakons.windows(2).any(|w| w[1].q - w[0].q <= settings.handoff_gap) {
        return Err(Error::DegenerateState(
            "step requires all gaps above the handoff threshold".into(),
        ));
    }
    let mut stepper = EmbeddedStepper::new(settings.rel_tol, settings.abs_tol, settings.max_step);
    let y = pack(state);
    let n = state.len();
    let rhs = move |_t: f64, y: &[f64], dy: &mut [f64]| {
        let (q, p) = y.split_at(n);
        let (dq, dp) = dy.split_at_mut(n);
        rhs_raw(q, p, dq, dp);
    };
    let s = stepper.step(&rhs, state.t, &y, f64::INFINITY, &ordering_ok)?;
    Ok((unpack(s.t, &s.y)?, s.error_estimate))
}

/// Time reversal: u(t, x) -> -u(-t, x) maps solutions to solutions, so
/// negating every strength and the clock produces the reversed flow.
pub fn reverse(state: &MultipeakonState) -> MultipeakonState {
    MultipeakonState {
        t: -state.t,
        peakons: state.peakons.iter().map(|pk| Peakon::new(pk.q, -pk.p)).collect(),
    }
}

/// Per-pair trigger bookkeeping: |p_{i+1} - p_i| is recorded when the gap
/// first drops below 10x the handoff gap; triggering requires growth beyond
/// that baseline, so pairs that merely drift close without strength blow-up
/// keep evolving.
struct TriggerState {
    baseline: Vec<Option<f64>>,
}

impl TriggerState {
    fn new(n: usize) -> Self {
        TriggerState { baseline: vec![None; n.saturating_sub(1)] }
    }

    fn check(&mut self, y: &[f64], t: f64, settings: &IntegratorSettings) -> Result<Option<usize>> {
        let n = y.len() / 2;
        let (q, p) = y.split_at(n);
        let mut fired: Vec<usize> = Vec::new();
        for i in 0..n.saturating_sub(1) {
            let gap = q[i + 1] - q[i];
            let dp = (p[i + 1] - p[i]).abs();
            if gap >= 10.0 * settings.handoff_gap {
                self.baseline[i] = None;
            } else if self.baseline[i].is_none() {
                self.baseline[i] = Some(dp);
            }
            let growing = self.baseline[i].map_or(false, |b| dp > b);
            let blowup =
                p[i].abs() > settings.strength_blowup || p[i + 1].abs() > settings.strength_blowup;
            if (gap < settings.handoff_gap && growing) || blowup || gap <= 0.0 {
                fired.push(i);
            }
        }
        match fired.len() {
            0 => Ok(None),
            1 => Ok(Some(fired[0])),
            _ => {
                if fired.windows(2).any(|w| w[1] - w[0] > 1) {
                    let a = fired[0];
                    let b = *fired.iter().find(|&&j| j > a + 1).unwrap();
                    return Err(Error::SimultaneousCollision { pairs: ((a, a + 1), (b, b + 1)), t });
                }
                // overlapping pairs share a peakon: keep the tighter gap
                let best = fired
                    .into_iter()
                    .min_by(|&a, &b| {
                        (q[a + 1] - q[a]).partial_cmp(&(q[b + 1] - q[b])).unwrap()
                    })
                    .unwrap();
                Ok(Some(best))
            }
        }
    }
}

fn make_event(y: &[f64], t: f64, pair: usize) -> CollisionEvent {
    let n = y.len() / 2;
    let (q, p) = y.split_at(n);
    let (i, j) = (pair, pair + 1);
    let spectators =
        (0..n).filter(|k| *k != i && *k != j).map(|k| Peakon::new(q[k], p[k])).collect();
    CollisionEvent {
        tau: t,
        indices: (i, j),
        q_bar: 0.5 * (q[i] + q[j]),
        e_tau: (p[j] - p[i]).powi(2) * (q[j] - q[i]),
        pair: [Peakon::new(q[i], p[i]), Peakon::new(q[j], p[j])],
        spectators,
    }
}

/// Integrate until `t_end` or until a collision trigger fires.
///
/// Samples are recorded at `state.t + k * sample_dt` (the integrator lands
/// on sample times exactly) plus the final time. On a trigger, the returned
/// event carries the handoff pair, the spectators and the concentrated
/// energy estimate; no sample is emitted at the trigger time itself.
pub fn simulate(
    state: &MultipeakonState,
    t_end: f64,
    settings: &IntegratorSettings,
    sampling: &SamplingConfig,
) -> Result<Simulation> {
    settings.validate()?;
    if !(t_end > state.t) {
        return Err(Error::Config(format!("t_end must exceed state.t = {}", state.t)));
    }
    if let Some(dt) = sampling.sample_dt {
        if !(dt > 0.0) {
            return Err(Error::Config("sample_dt must be positive".into()));
        }
    }

    let n = state.len();
    let mut trigger = TriggerState::new(n);
    let mut y = pack(state);
    let mut t = state.t;
    let mut samples = Vec::new();

    let sample_times: Vec<f64> = match sampling.sample_dt {
        Some(dt) => {
            let mut ts: Vec<f64> = Vec::new();
            let mut k = 1u64;
            loop {
                let tk = state.t + dt * k as f64;
                if tk >= t_end - 1e-12 * t_end.abs().max(1.0) {
                    break;
                }
                ts.push(tk);
                k += 1;
            }
            ts.push(t_end);
            ts
        }
        None => vec![t_end],
    };

    let push_sample = |samples: &mut Vec<TrajectorySample>, t: f64, y: &[f64]| -> Result<()> {
        let st = unpack(t, y)?;
        let diagnostics = st.weighted_diagnostics(sampling.alpha)?;
        samples.push(TrajectorySample { t, state: st, diagnostics });
        Ok(())
    };

    push_sample(&mut samples, t, &y)?;
    if let Some(pair) = trigger.check(&y, t, settings)? {
        return Ok(Simulation {
            samples,
            outcome: Outcome::CollisionDetected(make_event(&y, t, pair)),
        });
    }

    let mut stepper = EmbeddedStepper::new(settings.rel_tol, settings.abs_tol, settings.max_step);
    let rhs = move |_t: f64, y: &[f64], dy: &mut [f64]| {
        let (q, p) = y.split_at(n);
        let (dq, dp) = dy.split_at_mut(n);
        rhs_raw(q, p, dq, dp);
    };

    let mut next_sample = 0usize;
    while t < t_end {
        let t_stop = sample_times[next_sample];
        let s = stepper.step(&rhs, t, &y, t_stop, &ordering_ok)?;
        t = s.t;
        y = s.y;
        let at_sample = t == t_stop;
        if let Some(pair) = trigger.check(&y, t, settings)? {
            return Ok(Simulation {
                samples,
                outcome: Outcome::CollisionDetected(make_event(&y, t, pair)),
            });
        }
        if at_sample {
            push_sample(&mut samples, t, &y)?;
            next_sample += 1;
            if next_sample >= sample_times.len() {
                break;
            }
        }
    }

    let final_state = unpack(t, &y)?;
    Ok(Simulation { samples, outcome: Outcome::Completed(final_state) })
}
