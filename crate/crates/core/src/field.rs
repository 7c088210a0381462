//! Multipeakon fields: evaluation of u and u_x, energies, the nonlocal
//! convolution source P and its derivative, and the weighted diagnostics
//! behind the a-priori bounds.
//!
//! A multipeakon is u(x) = Σ_i p_i e^{-|x - q_i|} with crests q_1 ≤ … ≤ q_N.
//! The convention sign(0) = 0 applies everywhere a crest is evaluated, so
//! u_x vanishes at its own crest and self-interaction drops out of the ODEs.

use crate::error::{Error, Result};
use crate::quad::{
    integrate_cell, integrate_partition, max_on_points, partition_with_tails, sign_change_roots,
    tail_radius, QuadConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A single peaked wave: crest position `q`, strength `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peakon {
    pub q: f64,
    pub p: f64,
}

impl Peakon {
    pub fn new(q: f64, p: f64) -> Self {
        Peakon { q, p }
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.p.is_finite()
    }
}

/// Exponential decay class parameter: weight e^{α|x|} with 0 < α < 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct DecayParameters {
    alpha: f64,
}

impl DecayParameters {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("decay exponent must lie in (0, 1), got {alpha}")));
        }
        Ok(DecayParameters { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl TryFrom<f64> for DecayParameters {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        DecayParameters::new(v)
    }
}

impl From<DecayParameters> for f64 {
    fn from(d: DecayParameters) -> f64 {
        d.alpha
    }
}

/// Full dynamical state: sorted peakons plus the current time.
///
/// Serialized as `{"t": number, "peakons": [{"q": .., "p": ..}, ..]}` with
/// crests ascending; this format is shared by every module and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawState")]
pub struct MultipeakonState {
    pub t: f64,
    pub peakons: Vec<Peakon>,
}

#[derive(Deserialize)]
struct RawState {
    t: f64,
    peakons: Vec<Peakon>,
}

impl TryFrom<RawState> for MultipeakonState {
    type Error = Error;
    fn try_from(raw: RawState) -> Result<Self> {
        MultipeakonState::new(raw.t, raw.peakons)
    }
}

impl MultipeakonState {
    /// Validates the structural invariants: at least one peakon, finite
    /// fields, crests sorted ascending (coincident crests are permitted).
    pub fn new(t: f64, peakons: Vec<Peakon>) -> Result<Self> {
        if peakons.is_empty() {
            return Err(Error::DegenerateState("state must contain at least one peakon".into()));
        }
        if !t.is_finite() || peakons.iter().any(|pk| !pk.is_finite()) {
            return Err(Error::DegenerateState("non-finite peakon data".into()));
        }
        if peakons.windows(2).any(|w| w[0].q > w[1].q) {
            return Err(Error::DegenerateState("crests must be sorted ascending".into()));
        }
        Ok(MultipeakonState { t, peakons })
    }

    /// Sorts by crest position, then validates.
    pub fn from_unsorted(t: f64, mut peakons: Vec<Peakon>) -> Result<Self> {
        peakons.sort_by(|a, b| a.q.partial_cmp(&b.q).unwrap_or(std::cmp::Ordering::Equal));
        MultipeakonState::new(t, peakons)
    }

    pub fn len(&self) -> usize {
        self.peakons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peakons.is_empty()
    }

    pub fn positions(&self) -> Vec<f64> {
        self.peakons.iter().map(|pk| pk.q).collect()
    }

    pub fn strengths(&self) -> Vec<f64> {
        self.peakons.iter().map(|pk| pk.p).collect()
    }

    /// u(x) = Σ p_i e^{-|x - q_i|}, by the direct sum.
    pub fn evaluate_u(&self, x: f64) -> f64 {
        self.peakons.iter().map(|pk| pk.p * (-(x - pk.q).abs()).exp()).sum()
    }

    /// u_x(x) = Σ -p_i sign(x - q_i) e^{-|x - q_i|} with sign(0) = 0, so the
    /// value at a crest is the mean of the one-sided slopes.
    pub fn evaluate_ux(&self, x: f64) -> f64 {
        self.peakons
            .iter()
            .map(|pk| -pk.p * sign0(x - pk.q) * (-(x - pk.q).abs()).exp())
            .sum()
    }

    /// H(q, p) = ½ Σ_{i,j} p_i p_j e^{-|q_i - q_j|} (double sum, i = j included).
    pub fn hamiltonian(&self) -> f64 {
        let mut h = 0.0;
        for a in &self.peakons {
            for b in &self.peakons {
                h += a.p * b.p * (-(a.q - b.q).abs()).exp();
            }
        }
        0.5 * h
    }

    /// Quadrature H¹ energy E = ∫ (u² + u_x²) dx.
    ///
    /// For multipeakons this equals 2 Σ_{i,j} p_i p_j e^{-|q_i - q_j|} = 4H
    /// identically; the operation nevertheless integrates, so the closed form
    /// stays available as an independent check.
    pub fn energy_h1(&self) -> Result<f64> {
        let ev = FieldEvaluator::new(self);
        let scale = self.strength_scale();
        if scale == 0.0 {
            return Ok(0.0);
        }
        let m = 2.0 * scale * scale;
        let r = tail_radius(m, 2.0, m.max(1.0));
        let pts = partition_with_tails(&self.positions(), r, r, 1.0);
        integrate_partition(
            &|x| {
                let (u, ux) = ev.u_ux(x);
                u * u + ux * ux
            },
            &pts,
            &QuadConfig::default(),
        )
    }

    /// Nonlocal source P(x) = ½ (e^{-|·|} * (u² + u_x²/2))(x); always ≥ 0.
    pub fn convolution_p(&self, x: f64) -> Result<f64> {
        self.convolve(x, false)
    }

    /// P_x(x) = -½ ∫ sign(x - y) e^{-|x - y|} (u² + u_x²/2)(y) dy; satisfies
    /// |P_x| ≤ P pointwise.
    pub fn convolution_px(&self, x: f64) -> Result<f64> {
        self.convolve(x, true)
    }

    fn convolve(&self, x: f64, derivative: bool) -> Result<f64> {
        let ev = FieldEvaluator::new(self);
        let scale = self.strength_scale();
        if scale == 0.0 {
            return Ok(0.0);
        }
        let density = move |y: f64| {
            let (u, ux) = ev.u_ux(y);
            u * u + 0.5 * ux * ux
        };
        // Integrand decays at rate 3 beyond both the crest hull and x
        // (rate 2 from the density, rate 1 from the kernel).
        let m = 1.5 * scale * scale;
        let r = tail_radius(m, 3.0, m.max(1.0));
        let mut core = self.positions();
        core.push(x);
        let pts = partition_with_tails(&core, r, r, 1.0);
        let f = move |y: f64| {
            let kernel = (-(x - y).abs()).exp();
            let k = if derivative { -sign0(x - y) * kernel } else { kernel };
            0.5 * k * density(y)
        };
        integrate_partition(&f, &pts, &QuadConfig::default())
    }

    /// (max_x u²(x), E): the two sides of the sup-norm estimate
    /// ‖u²‖_∞ ≤ ‖u‖²_{H¹}.
    pub fn sobolev_sup_check(&self) -> Result<(f64, f64)> {
        let ev = FieldEvaluator::new(self);
        let grid = self.sup_grid();
        let (lhs, _) = max_on_points(&grid, &|x| {
            let u = ev.u(x);
            u * u
        });
        Ok((lhs, self.energy_h1()?))
    }

    /// Weighted energy C^{α,u} = ∫ (u² + u_x²) e^{α|x|} dx.
    pub fn weighted_energy(&self, decay: DecayParameters) -> Result<f64> {
        let alpha = decay.alpha();
        let ev = FieldEvaluator::new(self);
        let scale = self.strength_scale();
        if scale == 0.0 {
            return Ok(0.0);
        }
        let qs = self.positions();
        let hull = qs[0].abs().max(qs[qs.len() - 1].abs());
        let m = 2.0 * scale * scale * (alpha * hull).exp();
        let r = tail_radius(m, 2.0 - alpha, m.max(1.0));
        let mut core = qs.clone();
        core.push(0.0);
        let pts = partition_with_tails(&core, r, r, 1.0);
        integrate_partition(
            &|x| {
                let (u, ux) = ev.u_ux(x);
                (u * u + ux * ux) * (alpha * x.abs()).exp()
            },
            &pts,
            &QuadConfig::default(),
        )
    }

    /// All six diagnostics of the a-priori bound suite at one state.
    pub fn weighted_diagnostics(&self, decay: DecayParameters) -> Result<FieldDiagnostics> {
        let alpha = decay.alpha();
        let ev = FieldEvaluator::new(self);
        let scale = self.strength_scale();

        let weighted_energy = self.weighted_energy(decay)?;
        let energy_h1 = self.energy_h1()?;
        let grid = self.sup_grid();

        let (sup_weighted_u, _) = max_on_points(&grid, &|x| {
            let u = ev.u(x);
            u * u * (alpha * x.abs()).exp()
        });

        let l1_ux = self.l1_ux(&ev, scale)?;
        let sweep = ConvolutionSweep::compute(self, &ev, &grid)?;
        let mut sup_weighted_p = 0.0f64;
        for (k, &x) in grid.iter().enumerate() {
            sup_weighted_p = sup_weighted_p.max(sweep.px(k).abs() * (alpha * x.abs()).exp());
        }

        Ok(FieldDiagnostics {
            hamiltonian: self.hamiltonian(),
            energy_h1,
            weighted_energy,
            sup_weighted_u,
            l1_ux,
            sup_weighted_p,
        })
    }

    /// sup_x P(x) e^{α|x|}: base value of the Gronwall envelope for the
    /// weighted convolution bound.
    pub fn sup_weighted_p_kernel(&self, decay: DecayParameters) -> Result<f64> {
        let alpha = decay.alpha();
        let ev = FieldEvaluator::new(self);
        let grid = self.sup_grid();
        let sweep = ConvolutionSweep::compute(self, &ev, &grid)?;
        let mut sup = 0.0f64;
        for (k, &x) in grid.iter().enumerate() {
            sup = sup.max(sweep.p(k) * (alpha * x.abs()).exp());
        }
        Ok(sup)
    }

    fn l1_ux(&self, ev: &FieldEvaluator, scale: f64) -> Result<f64> {
        if scale == 0.0 {
            return Ok(0.0);
        }
        let r = tail_radius(scale, 1.0, scale.max(1.0));
        let qs = self.positions();
        let mut core = qs.clone();
        // |u_x| kinks where u_x crosses zero inside an inter-crest interval.
        for w in qs.windows(2) {
            if w[1] > w[0] {
                core.extend(sign_change_roots(&|x| ev.ux(x), w[0], w[1], 16));
            }
        }
        let pts = partition_with_tails(&core, r, r, 1.0);
        integrate_partition(&|x| ev.ux(x).abs(), &pts, &QuadConfig::default())
    }

    /// Σ |p_i|: scale used for tail truncation bounds.
    fn strength_scale(&self) -> f64 {
        self.peakons.iter().map(|pk| pk.p.abs()).sum()
    }

    /// Evaluation grid for suprema: crests, 64 uniform points per inter-crest
    /// interval, dense 8-unit tail grids, and the weight kink at 0.
    pub(crate) fn sup_grid(&self) -> Vec<f64> {
        let qs = self.positions();
        let mut grid = qs.clone();
        grid.push(0.0);
        for w in qs.windows(2) {
            let width = w[1] - w[0];
            if width > 0.0 {
                for k in 1..64 {
                    grid.push(w[0] + width * k as f64 / 64.0);
                }
            }
        }
        let first = qs[0];
        let last = qs[qs.len() - 1];
        for k in 1..=64 {
            grid.push(first - 8.0 * k as f64 / 64.0);
            grid.push(last + 8.0 * k as f64 / 64.0);
        }
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        grid
    }
}

/// Diagnostics of one state: the Hamiltonian, the H¹ energy, and the
/// weighted quantities bounded by the a-priori estimates.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FieldDiagnostics {
    /// H = ½ Σ p_i p_j e^{-|q_i - q_j|}.
    pub hamiltonian: f64,
    /// E = ∫ (u² + u_x²) dx (quadrature).
    pub energy_h1: f64,
    /// I = ∫ (u² + u_x²) e^{α|x|} dx.
    pub weighted_energy: f64,
    /// sup_x u²(x) e^{α|x|}.
    pub sup_weighted_u: f64,
    /// ‖u_x‖_{L¹}.
    pub l1_ux: f64,
    /// K = sup_x |P_x(x)| e^{α|x|}.
    pub sup_weighted_p: f64,
}

/// Closed form of ∫ e^{α|x|} e^{-|x - y|} dx for |α| < 1:
///
///   (2α/(1-α²)) e^{-|y|} + (2/(1-α²)) e^{α|y|}
///
/// Serves as the independent oracle for the quadrature engine.
pub fn kernel_weight_integral(alpha: f64, y: f64) -> Result<f64> {
    if !(alpha.abs() < 1.0) {
        return Err(Error::Domain(format!(
            "kernel weight integral diverges for |alpha| >= 1, got {alpha}"
        )));
    }
    let denom = 1.0 - alpha * alpha;
    Ok(2.0 * alpha / denom * (-y.abs()).exp() + 2.0 / denom * (alpha * y.abs()).exp())
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// O(log N) evaluator for u and u_x built on scaled prefix sums.
///
/// With A_k = Σ_{i≤k} p_i e^{q_i - q_k} and B_k = Σ_{i≥k} p_i e^{q_k - q_i},
/// both computed by a recurrence whose factors e^{q_k - q_{k+1}} never
/// exceed 1, the value at q_k ≤ x ≤ q_{k+1} is
/// u = A_k e^{q_k - x} + B_{k+1} e^{x - q_{k+1}} without large exponentials.
pub struct FieldEvaluator {
    q: Vec<f64>,
    p: Vec<f64>,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl FieldEvaluator {
    pub fn new(state: &MultipeakonState) -> Self {
        let q = state.positions();
        let p = state.strengths();
        let n = q.len();
        let mut left = vec![0.0; n];
        let mut right = vec![0.0; n];
        left[0] = p[0];
        for k in 1..n {
            left[k] = left[k - 1] * (q[k - 1] - q[k]).exp() + p[k];
        }
        right[n - 1] = p[n - 1];
        for k in (0..n - 1).rev() {
            right[k] = right[k + 1] * (q[k] - q[k + 1]).exp() + p[k];
        }
        FieldEvaluator { q, p, left, right }
    }

    pub fn u(&self, x: f64) -> f64 {
        self.u_ux(x).0
    }

    pub fn ux(&self, x: f64) -> f64 {
        self.u_ux(x).1
    }

    /// (u(x), u_x(x)) in one pass, sign(0) = 0 at crests.
    pub fn u_ux(&self, x: f64) -> (f64, f64) {
        let n = self.q.len();
        let below = self.q.partition_point(|&qi| qi < x);
        let at_or_below = self.q.partition_point(|&qi| qi <= x);
        let left_part = if below > 0 { self.left[below - 1] * (self.q[below - 1] - x).exp() } else { 0.0 };
        let right_part =
            if at_or_below < n { self.right[at_or_below] * (x - self.q[at_or_below]).exp() } else { 0.0 };
        let coincident: f64 = self.p[below..at_or_below].iter().sum();
        (left_part + coincident + right_part, -left_part + right_part)
    }
}

/// Cumulative evaluation of P and P_x on a sorted grid.
///
/// Writing L(x) = ∫_{-∞}^{x} e^{y-x} g(y) dy and R(x) = ∫_x^∞ e^{x-y} g(y) dy
/// with g = u² + u_x²/2 gives P = (L + R)/2 and P_x = -(L - R)/2. L and R
/// obey one-cell recurrences, so the whole grid costs one local quadrature
/// per cell instead of one full convolution per point.
struct ConvolutionSweep {
    l: Vec<f64>,
    r: Vec<f64>,
}

impl ConvolutionSweep {
    fn compute(state: &MultipeakonState, ev: &FieldEvaluator, grid: &[f64]) -> Result<ConvolutionSweep> {
        let n = grid.len();
        let scale = state.strength_scale();
        if scale == 0.0 || n == 0 {
            return Ok(ConvolutionSweep { l: vec![0.0; n], r: vec![0.0; n] });
        }
        let density = |y: f64| {
            let (u, ux) = ev.u_ux(y);
            u * u + 0.5 * ux * ux
        };
        let cfg = QuadConfig { rel_tol: 1e-12, abs_tol: 1e-16, max_depth: 40 };

        // Local moments per cell, both orientations, in parallel.
        let cells: Vec<(f64, f64)> = grid.windows(2).map(|w| (w[0], w[1])).collect();
        let moments: Vec<Result<(f64, f64)>> = cells
            .par_iter()
            .map(|&(a, b)| {
                let fwd = integrate_cell(&|y| ((y - b) * 1.0).exp() * density(y), a, b, &cfg)?;
                let bwd = integrate_cell(&|y| ((a - y) * 1.0).exp() * density(y), a, b, &cfg)?;
                Ok((fwd, bwd))
            })
            .collect();
        let mut fwd = Vec::with_capacity(cells.len());
        let mut bwd = Vec::with_capacity(cells.len());
        for m in moments {
            let (f, b) = m?;
            fwd.push(f);
            bwd.push(b);
        }

        // Tail seeds beyond the grid ends; density decays at rate 2 there,
        // the kernel adds 1.
        let m_bound = 1.5 * scale * scale;
        let r_tail = tail_radius(m_bound, 3.0, m_bound.max(1.0));
        let x0 = grid[0];
        let xn = grid[n - 1];
        let seed_l =
            integrate_cell(&|y| (y - x0).exp() * density(y), x0 - r_tail, x0, &QuadConfig::default())?;
        let seed_r =
            integrate_cell(&|y| (xn - y).exp() * density(y), xn, xn + r_tail, &QuadConfig::default())?;

        let mut l = vec![0.0; n];
        let mut r = vec![0.0; n];
        l[0] = seed_l;
        for k in 1..n {
            l[k] = l[k - 1] * (grid[k - 1] - grid[k]).exp() + fwd[k - 1];
        }
        r[n - 1] = seed_r;
        for k in (0..n - 1).rev() {
            r[k] = r[k + 1] * (grid[k] - grid[k + 1]).exp() + bwd[k];
        }
        Ok(ConvolutionSweep { l, r })
    }

    fn p(&self, k: usize) -> f64 {
        0.5 * (self.l[k] + self.r[k])
    }

    fn px(&self, k: usize) -> f64 {
        -0.5 * (self.l[k] - self.r[k])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single(p: f64) -> MultipeakonState {
        MultipeakonState::new(0.0, vec![Peakon::new(0.0, p)]).unwrap()
    }

    fn pair() -> MultipeakonState {
        MultipeakonState::new(0.0, vec![Peakon::new(-1.0, 1.0), Peakon::new(1.0, -1.0)]).unwrap()
    }

    #[test]
    fn u_at_crest_and_offset() {
        let s = single(1.0);
        assert_eq!(s.evaluate_u(0.0), 1.0);
        assert_relative_eq!(s.evaluate_u(2.0), (-2.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn u_antisymmetric_pair_vanishes_at_center() {
        assert_eq!(pair().evaluate_u(0.0), 0.0);
    }

    #[test]
    fn ux_values() {
        let s = single(1.0);
        assert_relative_eq!(s.evaluate_ux(1.0), -(-1.0f64).exp(), max_relative = 1e-15);
        assert_eq!(s.evaluate_ux(0.0), 0.0, "sign(0) = 0 at the crest");
        assert_relative_eq!(
            pair().evaluate_ux(0.0),
            -2.0 * (-1.0f64).exp(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn hamiltonian_values() {
        assert_eq!(single(1.0).hamiltonian(), 0.5);
        assert_relative_eq!(pair().hamiltonian(), 1.0 - (-2.0f64).exp(), max_relative = 1e-15);
        assert_eq!(single(0.0).hamiltonian(), 0.0);
    }

    #[test]
    fn energy_single_peakon_is_two() {
        assert_relative_eq!(single(1.0).energy_h1().unwrap(), 2.0, max_relative = 1e-10);
    }

    #[test]
    fn energy_zero_state() {
        assert_eq!(single(0.0).energy_h1().unwrap(), 0.0);
    }

    #[test]
    fn energy_well_separated_pair() {
        let s = MultipeakonState::new(
            0.0,
            vec![Peakon::new(-5.0, 1.0), Peakon::new(5.0, 1.0)],
        )
        .unwrap();
        // E = 2 Σ p_i p_j e^{-|q_i-q_j|} = 4 + 4 e^{-10}
        let expected = 4.0 + 4.0 * (-10.0f64).exp();
        assert_relative_eq!(s.energy_h1().unwrap(), expected, max_relative = 1e-10);
    }

    #[test]
    fn energy_matches_kernel_identity() {
        let s = MultipeakonState::new(
            0.0,
            vec![Peakon::new(-0.7, 0.8), Peakon::new(0.2, -0.5), Peakon::new(1.4, 1.1)],
        )
        .unwrap();
        let closed: f64 = s
            .peakons
            .iter()
            .flat_map(|a| s.peakons.iter().map(move |b| a.p * b.p * (-(a.q - b.q).abs()).exp()))
            .sum();
        assert_relative_eq!(s.energy_h1().unwrap(), 2.0 * closed, max_relative = 1e-9);
        assert_relative_eq!(s.energy_h1().unwrap(), 4.0 * s.hamiltonian(), max_relative = 1e-9);
    }

    #[test]
    fn convolution_p_values() {
        assert_relative_eq!(single(1.0).convolution_p(0.0).unwrap(), 0.5, max_relative = 1e-10);
        assert_eq!(single(0.0).convolution_p(3.7).unwrap(), 0.0);
        assert_relative_eq!(single(2.0).convolution_p(0.0).unwrap(), 2.0, max_relative = 1e-10);
    }

    #[test]
    fn convolution_p_closed_form_profile() {
        // For the unit peakon, P(x) = e^{-|x|} - e^{-2|x|}/2.
        let s = single(1.0);
        for &x in &[0.0f64, 0.4, 1.0, 2.5, -1.3] {
            let expected = (-x.abs()).exp() - 0.5 * (-2.0 * x.abs()).exp();
            assert_relative_eq!(s.convolution_p(x).unwrap(), expected, max_relative = 1e-9);
        }
    }

    #[test]
    fn convolution_px_values() {
        let s = single(1.0);
        assert!(s.convolution_px(0.0).unwrap().abs() < 1e-12, "even density, odd kernel");
        // P_x(x) = e^{-2x} - e^{-x} for x > 0.
        let expected = (-2.0f64).exp() - (-1.0f64).exp();
        assert_relative_eq!(s.convolution_px(1.0).unwrap(), expected, max_relative = 1e-9);
        assert!(s.convolution_px(40.0).unwrap().abs() < 1e-15, "decay at infinity");
    }

    #[test]
    fn px_bounded_by_p() {
        let s = MultipeakonState::new(
            0.0,
            vec![Peakon::new(-1.2, 0.9), Peakon::new(0.3, -0.6), Peakon::new(2.0, 0.4)],
        )
        .unwrap();
        for &x in &[-3.0, -1.2, 0.0, 0.3, 1.1, 2.0, 4.5] {
            let p = s.convolution_p(x).unwrap();
            let px = s.convolution_px(x).unwrap();
            assert!(px.abs() <= p + 1e-9, "|Px| = {px} > P = {p} at x = {x}");
        }
    }

    #[test]
    fn kernel_weight_values() {
        assert_relative_eq!(kernel_weight_integral(0.5, 0.0).unwrap(), 4.0, max_relative = 1e-15);
        assert_relative_eq!(kernel_weight_integral(0.0, 0.0).unwrap(), 2.0, max_relative = 1e-15);
        let expected = 4.0 / 3.0 * (-2.0f64).exp() + 8.0 / 3.0 * 1.0f64.exp();
        assert_relative_eq!(kernel_weight_integral(0.5, 2.0).unwrap(), expected, max_relative = 1e-15);
        assert!(kernel_weight_integral(1.0, 0.0).is_err());
        assert!(kernel_weight_integral(-1.2, 0.0).is_err());
    }

    #[test]
    fn weighted_diagnostics_single_peakon() {
        let d = single(1.0).weighted_diagnostics(DecayParameters::new(0.5).unwrap()).unwrap();
        assert_relative_eq!(d.weighted_energy, 8.0 / 3.0, max_relative = 1e-9);
        assert_relative_eq!(d.energy_h1, 2.0, max_relative = 1e-9);
        assert_relative_eq!(d.sup_weighted_u, 1.0, max_relative = 1e-12);
        assert_relative_eq!(d.l1_ux, 2.0, max_relative = 1e-9);
        assert!(d.sup_weighted_u <= 2.0 * d.weighted_energy);
        assert!(d.energy_h1 <= d.weighted_energy);
        // sup |Px| e^{α|x|} peaks at x = ln 3 with value 3^{-1/2} - 3^{-3/2}.
        let expected_k = 3.0f64.powf(-0.5) - 3.0f64.powf(-1.5);
        assert_relative_eq!(d.sup_weighted_p, expected_k, max_relative = 1e-3);
    }

    #[test]
    fn weighted_diagnostics_zero_state() {
        let d = single(0.0).weighted_diagnostics(DecayParameters::new(0.3).unwrap()).unwrap();
        assert_eq!(d.hamiltonian, 0.0);
        assert_eq!(d.energy_h1, 0.0);
        assert_eq!(d.weighted_energy, 0.0);
        assert_eq!(d.sup_weighted_u, 0.0);
        assert_eq!(d.l1_ux, 0.0);
        assert_eq!(d.sup_weighted_p, 0.0);
    }

    #[test]
    fn sobolev_check_values() {
        let (lhs, rhs) = single(1.0).sobolev_sup_check().unwrap();
        assert_relative_eq!(lhs, 1.0, max_relative = 1e-12);
        assert_relative_eq!(rhs, 2.0, max_relative = 1e-9);
        let (l0, r0) = single(0.0).sobolev_sup_check().unwrap();
        assert_eq!((l0, r0), (0.0, 0.0));
    }

    #[test]
    fn evaluator_matches_direct_sum() {
        let s = MultipeakonState::new(
            0.0,
            vec![
                Peakon::new(-2.0, 0.3),
                Peakon::new(-0.5, -1.1),
                Peakon::new(-0.5, 0.4),
                Peakon::new(1.7, 0.9),
            ],
        )
        .unwrap();
        let ev = FieldEvaluator::new(&s);
        for k in -40..=40 {
            let x = k as f64 * 0.17;
            let (u, ux) = ev.u_ux(x);
            assert_relative_eq!(u, s.evaluate_u(x), max_relative = 1e-13, epsilon = 1e-14);
            assert_relative_eq!(ux, s.evaluate_ux(x), max_relative = 1e-13, epsilon = 1e-14);
        }
        // exactly at crests, including the coincident pair
        for &x in &[-2.0, -0.5, 1.7] {
            let (u, ux) = ev.u_ux(x);
            assert_relative_eq!(u, s.evaluate_u(x), max_relative = 1e-13);
            assert_relative_eq!(ux, s.evaluate_ux(x), max_relative = 1e-13, epsilon = 1e-14);
        }
    }

    #[test]
    fn finite_difference_relation() {
        let s = MultipeakonState::new(
            0.0,
            vec![Peakon::new(-1.0, 0.7), Peakon::new(0.8, -0.4)],
        )
        .unwrap();
        // away from crests: central difference converges at O(h²) -> O(h) is easy
        for &x in &[-2.1, -0.3, 0.2, 1.5] {
            for &h in &[1e-4, 1e-5] {
                let fd = (s.evaluate_u(x + h) - s.evaluate_u(x - h)) / (2.0 * h);
                assert!((fd - s.evaluate_ux(x)).abs() < 10.0 * h, "x = {x}, h = {h}");
            }
        }
        // at a crest: O(1)-bounded mismatch (the two one-sided slopes differ)
        let h = 1e-6;
        let fd = (s.evaluate_u(-1.0 + h) - s.evaluate_u(-1.0 - h)) / (2.0 * h);
        assert!((fd - s.evaluate_ux(-1.0)).abs() < 1.0);
    }

    #[test]
    fn state_validation() {
        assert!(MultipeakonState::new(0.0, vec![]).is_err());
        assert!(MultipeakonState::new(
            0.0,
            vec![Peakon::new(1.0, 1.0), Peakon::new(0.0, 1.0)]
        )
        .is_err());
        assert!(MultipeakonState::new(0.0, vec![Peakon::new(f64::NAN, 1.0)]).is_err());
        // coincident crests allowed statically
        assert!(MultipeakonState::new(
            0.0,
            vec![Peakon::new(0.0, 1.0), Peakon::new(0.0, -1.0)]
        )
        .is_ok());
    }

    #[test]
    fn state_json_round_trip() {
        let s = pair();
        let js = serde_json::to_string(&s).unwrap();
        assert!(js.contains("\"t\""), "{js}");
        assert!(js.contains("\"peakons\""), "{js}");
        let back: MultipeakonState = serde_json::from_str(&js).unwrap();
        assert_eq!(back, s);
        // unsorted input is rejected at deserialization
        let bad = r#"{"t":0.0,"peakons":[{"q":1.0,"p":1.0},{"q":0.0,"p":1.0}]}"#;
        assert!(serde_json::from_str::<MultipeakonState>(bad).is_err());
    }
}
