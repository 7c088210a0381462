//! Transport-based distance between decaying H¹ fields.
//!
//! Each function u is lifted to the measure with density 1 + u_x² on its
//! graph manifold (x, u(x), 2 arctan u_x(x)) ⊂ ℝ²×S¹. A transport plan ψ is
//! an increasing piecewise-linear reparametrization of ℝ with identity
//! tails; the functional
//!
//!   J^ψ(u,v) = ∫ d^♦(X^u(x), X^v(ψ(x))) φ₁(x) (1+u_x²) dx
//!            + ∫ |1+u_x²(x) - (1+v_x²(ψ(x))) ψ'(x)| dx
//!
//! charges the capped graph distance on the mass actually matched plus the
//! mass defect. The infimum over plans is approximated from above by a
//! seeded deterministic search; every downstream consumer treats the result
//! as an upper bound, and the comparison inequalities are asserted as
//! orderings only.

use crate::error::{Error, Result};
use crate::field::{FieldEvaluator, MultipeakonState, Peakon};
use crate::quad::{integrate_partition, partition_with_tails, sign_change_roots, tail_radius, QuadConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Slope floor keeping every plan strictly increasing and invertible.
pub const MIN_SLOPE: f64 = 1e-9;

/// A point of the graph manifold: position, value, slope angle
/// θ = 2 arctan(u_x) ∈ (-π, π].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphPoint {
    pub x: f64,
    pub u: f64,
    pub theta: f64,
}

impl GraphPoint {
    /// Lift of the state at x (u_x by the sign(0) = 0 convention at crests).
    pub fn lift(state: &MultipeakonState, x: f64) -> GraphPoint {
        let u = state.evaluate_u(x);
        let ux = state.evaluate_ux(x);
        GraphPoint { x, u, theta: 2.0 * ux.atan() }
    }
}

/// Capped ground metric: min{|Δx| + |Δu| + |Δθ|_circle, 1}.
pub fn d_diamond(a: &GraphPoint, b: &GraphPoint) -> f64 {
    let dtheta = (a.theta - b.theta).abs();
    let circ = dtheta.min(2.0 * PI - dtheta);
    ((a.x - b.x).abs() + (a.u - b.u).abs() + circ).min(1.0)
}

/// Monotone piecewise-linear transport plan with identity tails.
///
/// Knots are strictly increasing in both coordinates with every segment
/// slope at least [`MIN_SLOPE`]; the first and last knots sit on the
/// diagonal so the identity tails attach continuously. An empty knot list
/// is the identity plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct TransportPlan {
    knots: Vec<(f64, f64)>,
}

impl TryFrom<Vec<[f64; 2]>> for TransportPlan {
    type Error = Error;
    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        TransportPlan::from_knots(v.into_iter().map(|k| (k[0], k[1])).collect())
    }
}

impl From<TransportPlan> for Vec<[f64; 2]> {
    fn from(p: TransportPlan) -> Vec<[f64; 2]> {
        p.knots.iter().map(|&(x, y)| [x, y]).collect()
    }
}

impl TransportPlan {
    pub fn identity() -> Self {
        TransportPlan { knots: Vec::new() }
    }

    pub fn from_knots(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.iter().any(|k| !k.0.is_finite() || !k.1.is_finite()) {
            return Err(Error::Domain("plan knots must be finite".into()));
        }
        if let (Some(first), Some(last)) = (knots.first(), knots.last()) {
            if first.0 != first.1 || last.0 != last.1 {
                return Err(Error::Domain(
                    "boundary knots must lie on the diagonal for continuous identity tails".into(),
                ));
            }
        }
        for w in knots.windows(2) {
            let dx = w[1].0 - w[0].0;
            let dy = w[1].1 - w[0].1;
            if !(dx > 0.0) || !(dy >= MIN_SLOPE * dx) {
                return Err(Error::Domain(format!(
                    "plan must increase strictly with slope >= {MIN_SLOPE}: segment {:?} -> {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(TransportPlan { knots })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn is_identity(&self) -> bool {
        self.knots.is_empty()
    }

    /// ψ(x).
    pub fn apply(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if n == 0 || x <= self.knots[0].0 || x >= self.knots[n - 1].0 {
            return x;
        }
        let idx = self.knots.partition_point(|k| k.0 <= x) - 1;
        let (x0, y0) = self.knots[idx];
        let (x1, y1) = self.knots[idx + 1];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    /// ψ'(x); on knots the right-segment slope, in the tails 1.
    pub fn derivative(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if n == 0 || x < self.knots[0].0 || x >= self.knots[n - 1].0 {
            return 1.0;
        }
        let idx = (self.knots.partition_point(|k| k.0 <= x)).clamp(1, n - 1) - 1;
        let (x0, y0) = self.knots[idx];
        let (x1, y1) = self.knots[idx + 1];
        (y1 - y0) / (x1 - x0)
    }

    /// ψ^{-1}(y) (plans are strictly increasing).
    pub fn inverse(&self, y: f64) -> f64 {
        let n = self.knots.len();
        if n == 0 || y <= self.knots[0].1 || y >= self.knots[n - 1].1 {
            return y;
        }
        let idx = self.knots.partition_point(|k| k.1 <= y) - 1;
        let (x0, y0) = self.knots[idx];
        let (x1, y1) = self.knots[idx + 1];
        x0 + (x1 - x0) * (y - y0) / (y1 - y0)
    }
}

/// Split of J^ψ into its transported-distance and mass-defect parts.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlanEvaluation {
    pub j_value: f64,
    pub transport_cost: f64,
    pub mass_mismatch: f64,
}

/// Mass-matching weights at x:
/// φ₁ = min{1, (1+v_x²(ψx)) ψ' / (1+u_x²)}, φ₂ = min{1, (1+u_x²) / ((1+v_x²(ψx)) ψ')}.
///
/// max(φ₁, φ₂) = 1 pointwise, and φ₁·(1+u_x²) = φ₂·(1+v_x²(ψx))·ψ' whenever
/// the transported density exceeds neither side.
pub fn phi_weights(
    u: &MultipeakonState,
    v: &MultipeakonState,
    plan: &TransportPlan,
    x: f64,
) -> (f64, f64) {
    let ux = u.evaluate_ux(x);
    let y = plan.apply(x);
    let vx = v.evaluate_ux(y);
    let mu = 1.0 + ux * ux;
    let mv = (1.0 + vx * vx) * plan.derivative(x).max(MIN_SLOPE);
    ((mv / mu).min(1.0), (mu / mv).min(1.0))
}

struct JIntegrand<'a> {
    ev_u: &'a FieldEvaluator,
    ev_v: &'a FieldEvaluator,
    plan: &'a TransportPlan,
}

impl JIntegrand<'_> {
    /// (transport density, signed mass defect) at x.
    fn parts(&self, x: f64) -> (f64, f64) {
        let (u, ux) = self.ev_u.u_ux(x);
        let y = self.plan.apply(x);
        let dpsi = self.plan.derivative(x).max(MIN_SLOPE);
        let (v, vx) = self.ev_v.u_ux(y);
        let mu = 1.0 + ux * ux;
        let mv = (1.0 + vx * vx) * dpsi;
        let a = GraphPoint { x, u, theta: 2.0 * ux.atan() };
        let b = GraphPoint { x: y, u: v, theta: 2.0 * vx.atan() };
        (d_diamond(&a, &b) * mu.min(mv), mu - mv)
    }
}

fn metric_partition(
    u: &MultipeakonState,
    v: &MultipeakonState,
    plan: &TransportPlan,
    integrand: &JIntegrand,
) -> Vec<f64> {
    let mut core: Vec<f64> = u.positions();
    for q in v.positions() {
        core.push(plan.inverse(q));
    }
    for k in plan.knots() {
        core.push(k.0);
    }
    core.sort_by(|a, b| a.partial_cmp(b).unwrap());
    core.dedup();
    // kinks of the mass-defect absolute value inside each cell
    let mut refined = core.clone();
    for w in core.windows(2) {
        if w[1] > w[0] {
            refined.extend(sign_change_roots(&|x| integrand.parts(x).1, w[0], w[1], 8));
        }
    }
    let su: f64 = u.peakons.iter().map(|p| p.p.abs()).sum();
    let sv: f64 = v.peakons.iter().map(|p| p.p.abs()).sum();
    let m = (su + sv + 3.0).powi(2);
    let radius = tail_radius(m, 1.0, m.max(1.0));
    partition_with_tails(&refined, radius, radius, 1.0)
}

/// J^ψ(u, v) by adaptive quadrature on the partition induced by crests of u,
/// plan knots, and ψ-preimages of crests of v; the identity tails are cut
/// where the exponential decay bound falls below the quadrature floor.
pub fn j_functional(
    u: &MultipeakonState,
    v: &MultipeakonState,
    plan: &TransportPlan,
) -> Result<PlanEvaluation> {
    let ev_u = FieldEvaluator::new(u);
    let ev_v = FieldEvaluator::new(v);
    let integrand = JIntegrand { ev_u: &ev_u, ev_v: &ev_v, plan };
    let pts = metric_partition(u, v, plan, &integrand);
    let cfg = QuadConfig { rel_tol: 1e-9, abs_tol: 1e-13, max_depth: 36 };
    let transport_cost = integrate_partition(&|x| integrand.parts(x).0, &pts, &cfg)?;
    let mass_mismatch = integrate_partition(&|x| integrand.parts(x).1.abs(), &pts, &cfg)?;
    Ok(PlanEvaluation { j_value: transport_cost + mass_mismatch, transport_cost, mass_mismatch })
}

/// Multipeakon encoding of u - v: union of crests with v's strengths negated.
pub fn difference_state(u: &MultipeakonState, v: &MultipeakonState) -> MultipeakonState {
    let mut peakons: Vec<Peakon> = u.peakons.clone();
    peakons.extend(v.peakons.iter().map(|p| Peakon::new(p.q, -p.p)));
    MultipeakonState::from_unsorted(0.0, peakons).expect("difference of valid states")
}

/// Quadrature L¹ distance ∫ |u - v| dx.
pub fn l1_distance(u: &MultipeakonState, v: &MultipeakonState) -> Result<f64> {
    let diff = difference_state(u, v);
    let ev = FieldEvaluator::new(&diff);
    let scale: f64 = diff.peakons.iter().map(|p| p.p.abs()).sum();
    if scale == 0.0 {
        return Ok(0.0);
    }
    let qs = diff.positions();
    let mut core = qs.clone();
    for w in qs.windows(2) {
        if w[1] > w[0] {
            core.extend(sign_change_roots(&|x| ev.u(x), w[0], w[1], 8));
        }
    }
    let radius = tail_radius(scale, 1.0, scale.max(1.0));
    let pts = partition_with_tails(&core, radius, radius, 1.0);
    integrate_partition(&|x| ev.u(x).abs(), &pts, &QuadConfig::default())
}

/// Quadrature H¹ distance ‖u - v‖_{H¹} = sqrt(E(u - v)).
pub fn h1_distance(u: &MultipeakonState, v: &MultipeakonState) -> Result<f64> {
    Ok(difference_state(u, v).energy_h1()?.max(0.0).sqrt())
}

/// Monotone plan matching each crest of u to the nearest crest of v,
/// bracketed by diagonal knots outside both supports.
fn crest_matching_plan(u: &MultipeakonState, v: &MultipeakonState) -> Result<TransportPlan> {
    let qu = u.positions();
    let qv = v.positions();
    let lo = qu[0].min(qv[0]) - 4.0;
    let hi = qu[qu.len() - 1].max(qv[qv.len() - 1]) + 4.0;
    let mut knots = vec![(lo, lo)];
    let mut prev_x = lo;
    let mut prev_y = lo;
    for &q in &qu {
        if q <= prev_x + 1e-9 {
            continue;
        }
        let nearest = qv
            .iter()
            .cloned()
            .min_by(|a, b| (a - q).abs().partial_cmp(&(b - q).abs()).unwrap())
            .unwrap();
        let span = q - prev_x;
        let y = nearest.clamp(prev_y + MIN_SLOPE * span, (hi - 1e-9).min(prev_y + 1e6));
        if y >= hi {
            continue;
        }
        knots.push((q, y));
        prev_x = q;
        prev_y = y;
    }
    knots.push((hi, hi));
    // the clamp above keeps y below hi; re-check global monotonicity
    if knots.windows(2).any(|w| !(w[1].1 - w[0].1 >= MIN_SLOPE * (w[1].0 - w[0].0))) {
        return TransportPlan::from_knots(vec![(lo, lo), (hi, hi)]);
    }
    TransportPlan::from_knots(knots)
}

/// Identity plan with optimizable knots at the crests of both states, so
/// coordinate descent can move mass between every pair of features.
fn identity_with_knots(u: &MultipeakonState, v: &MultipeakonState) -> Result<TransportPlan> {
    let qu = u.positions();
    let qv = v.positions();
    let lo = qu[0].min(qv[0]) - 3.0;
    let hi = qu[qu.len() - 1].max(qv[qv.len() - 1]) + 3.0;
    let mut xs: Vec<f64> = qu.iter().chain(qv.iter()).cloned().collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let mut knots = vec![(lo, lo)];
    for &q in &xs {
        if q > lo + 1e-9 && q < hi - 1e-9 {
            knots.push((q, q));
        }
    }
    knots.push((hi, hi));
    TransportPlan::from_knots(knots)
}

struct Search<'a> {
    u: &'a MultipeakonState,
    v: &'a MultipeakonState,
    evals_left: usize,
}

impl Search<'_> {
    fn eval(&mut self, plan: &TransportPlan) -> Result<Option<PlanEvaluation>> {
        if self.evals_left == 0 {
            return Ok(None);
        }
        self.evals_left -= 1;
        Ok(Some(j_functional(self.u, self.v, plan)?))
    }
}

/// Deterministic seeded upper-bound search for J(u, v) = inf_ψ J^ψ(u, v).
///
/// Candidates are the identity and a monotone crest-matching plan, refined
/// by cyclic golden-section descent on the interior knot images with knot
/// insertion on the costliest segment. The returned value is an upper bound
/// on the infimum: the identity plan is always admissible, so the search
/// never fails. `budget` caps the number of functional evaluations.
pub fn minimize_j(
    u: &MultipeakonState,
    v: &MultipeakonState,
    budget: usize,
    seed: u64,
) -> Result<(TransportPlan, PlanEvaluation)> {
    minimize_j_warm(u, v, budget, seed, &[])
}

/// [`minimize_j`] with extra warm-start candidate plans (used to transport
/// the previous best plan along a trajectory).
pub fn minimize_j_warm(
    u: &MultipeakonState,
    v: &MultipeakonState,
    budget: usize,
    seed: u64,
    warm: &[TransportPlan],
) -> Result<(TransportPlan, PlanEvaluation)> {
    let mut search = Search { u, v, evals_left: budget.max(1) };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let identity = TransportPlan::identity();
    let mut best_eval = j_functional(u, v, &identity)?;
    search.evals_left = search.evals_left.saturating_sub(1);
    let mut best_plan = identity;

    if best_eval.j_value <= 1e-14 {
        return Ok((best_plan, best_eval));
    }

    let mut candidates: Vec<TransportPlan> = vec![identity_with_knots(u, v)?];
    if let Ok(cm) = crest_matching_plan(u, v) {
        candidates.push(cm);
    }
    candidates.extend_from_slice(warm);
    for cand in candidates {
        if let Some(e) = search.eval(&cand)? {
            if e.j_value < best_eval.j_value {
                best_eval = e;
                best_plan = cand;
            }
        }
    }

    // descend on the best plan that actually has interior knots
    let mut plan = if best_plan.is_identity() { identity_with_knots(u, v)? } else { best_plan.clone() };
    let mut plan_eval = if plan == best_plan { best_eval } else { j_functional(u, v, &plan)? };

    while search.evals_left > 0 {
        let before = plan_eval.j_value;
        coordinate_pass(&mut search, &mut plan, &mut plan_eval)?;
        if plan_eval.j_value < best_eval.j_value {
            best_eval = plan_eval;
            best_plan = plan.clone();
        }
        let improved = (before - plan_eval.j_value) > 1e-6 * before.abs().max(1e-12);
        if !improved {
            // try enriching the plan; if that stalls too, jitter one knot
            if !insert_knot(&mut search, &mut plan, &mut plan_eval)? {
                if !jitter(&mut search, &mut rng, &mut plan, &mut plan_eval)? {
                    break;
                }
            }
            if plan_eval.j_value < best_eval.j_value {
                best_eval = plan_eval;
                best_plan = plan.clone();
            }
        }
    }

    Ok((best_plan, best_eval))
}

/// One cyclic golden-section pass over the interior knot images.
fn coordinate_pass(
    search: &mut Search,
    plan: &mut TransportPlan,
    plan_eval: &mut PlanEvaluation,
) -> Result<()> {
    let n = plan.knots.len();
    if n < 3 {
        return Ok(());
    }
    for j in 1..n - 1 {
        if search.evals_left == 0 {
            return Ok(());
        }
        let (x_prev, y_prev) = plan.knots[j - 1];
        let (x_next, y_next) = plan.knots[j + 1];
        let x_j = plan.knots[j].0;
        let lo = y_prev + MIN_SLOPE * (x_j - x_prev).max(1e-12) * 2.0;
        let hi = y_next - MIN_SLOPE * (x_next - x_j).max(1e-12) * 2.0;
        if !(hi > lo) {
            continue;
        }
        let mut trial = plan.clone();
        let mut eval_at = |y: f64, search: &mut Search| -> Result<Option<f64>> {
            trial.knots[j].1 = y;
            Ok(search.eval(&trial)?.map(|e| e.j_value))
        };
        // golden-section over [lo, hi], seeded with the current image
        let gr = 0.618_033_988_749_894_8;
        let mut a = lo;
        let mut b = hi;
        let mut x1 = b - gr * (b - a);
        let mut x2 = a + gr * (b - a);
        let mut f1 = match eval_at(x1, search)? {
            Some(v) => v,
            None => return Ok(()),
        };
        let mut f2 = match eval_at(x2, search)? {
            Some(v) => v,
            None => return Ok(()),
        };
        for _ in 0..14 {
            if search.evals_left == 0 {
                break;
            }
            if f1 <= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - gr * (b - a);
                f1 = match eval_at(x1, search)? {
                    Some(v) => v,
                    None => break,
                };
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + gr * (b - a);
                f2 = match eval_at(x2, search)? {
                    Some(v) => v,
                    None => break,
                };
            }
        }
        let (y_best, f_best) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
        if f_best < plan_eval.j_value {
            plan.knots[j].1 = y_best;
            *plan_eval = j_functional(search.u, search.v, plan)?;
        }
    }
    Ok(())
}

/// Insert a midpoint knot on the segment with the largest sampled local
/// cost. Returns false when no insertion improved the value.
fn insert_knot(
    search: &mut Search,
    plan: &mut TransportPlan,
    plan_eval: &mut PlanEvaluation,
) -> Result<bool> {
    let n = plan.knots.len();
    if n < 2 || n > 40 || search.evals_left == 0 {
        return Ok(false);
    }
    let ev_u = FieldEvaluator::new(search.u);
    let ev_v = FieldEvaluator::new(search.v);
    let integrand = JIntegrand { ev_u: &ev_u, ev_v: &ev_v, plan };
    let mut worst = (0usize, f64::NEG_INFINITY);
    for j in 0..n - 1 {
        let (x0, _) = plan.knots[j];
        let (x1, _) = plan.knots[j + 1];
        let width = x1 - x0;
        if width < 1e-6 {
            continue;
        }
        let mut cost = 0.0;
        for frac in [0.25, 0.5, 0.75] {
            let (t, m) = integrand.parts(x0 + frac * width);
            cost += t + m.abs();
        }
        cost *= width;
        if cost > worst.1 {
            worst = (j, cost);
        }
    }
    let (j, _) = worst;
    let (x0, _) = plan.knots[j];
    let (x1, _) = plan.knots[j + 1];
    let mid = 0.5 * (x0 + x1);
    let mut trial = plan.clone();
    trial.knots.insert(j + 1, (mid, trial.apply(mid)));
    if let Some(e) = search.eval(&trial)? {
        if e.j_value <= plan_eval.j_value {
            *plan = trial;
            *plan_eval = e;
            return Ok(true);
        }
    }
    Ok(false)
}

/// Perturb one random interior knot image within its slack; keep only
/// improvements. Returns false if nothing improved.
fn jitter(
    search: &mut Search,
    rng: &mut ChaCha8Rng,
    plan: &mut TransportPlan,
    plan_eval: &mut PlanEvaluation,
) -> Result<bool> {
    let n = plan.knots.len();
    if n < 3 || search.evals_left == 0 {
        return Ok(false);
    }
    for _ in 0..4 {
        let j = rng.gen_range(1..n - 1);
        let (_, y_prev) = plan.knots[j - 1];
        let (_, y_next) = plan.knots[j + 1];
        let y = plan.knots[j].1;
        let slack = (y_next - y_prev) * 0.1;
        let dy = rng.gen_range(-slack..slack);
        let y_new = (y + dy).clamp(y_prev + 1e-9, y_next - 1e-9);
        let mut trial = plan.clone();
        trial.knots[j].1 = y_new;
        if let Some(e) = search.eval(&trial)? {
            if e.j_value < plan_eval.j_value {
                *plan = trial;
                *plan_eval = e;
                return Ok(true);
            }
        } else {
            return Ok(false);
        }
    }
    Ok(false)
}
