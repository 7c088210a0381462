use thiserror::Error;

/// Errors produced by the numerical kernels and the scenario runner.
#[derive(Debug, Error)]
pub enum Error {
    /// Adaptive quadrature could not reach the requested tolerance within
    /// its subdivision budget.
    #[error("quadrature failure on [{a}, {b}]: {detail}")]
    QuadratureFailure { a: f64, b: f64, detail: String },

    /// An argument lies outside the admissible domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The peakon configuration violates a structural precondition
    /// (unsorted crests, zero gap where a strict gap is required, NaN).
    #[error("degenerate state: {0}")]
    DegenerateState(String),

    /// The adaptive step controller pushed the step below the hard floor.
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepSizeUnderflow { t: f64, h: f64 },

    /// Two disjoint adjacent pairs triggered the collision detector in the
    /// same step. Generic data produce binary collisions; exact ties must be
    /// broken by perturbing the initial data.
    #[error("simultaneous collision of pairs ({0}, {1}) and ({2}, {3}) at t = {t}", .pairs.0.0, .pairs.0.1, .pairs.1.0, .pairs.1.1)]
    SimultaneousCollision { pairs: ((usize, usize), (usize, usize)), t: f64 },

    /// A collision event that cannot seed the rescaled system.
    #[error("bad collision data: {0}")]
    BadCollisionData(String),

    /// The rescaled state cannot yet be mapped back to separated peakons.
    #[error("cluster not yet separated: gap {gap:e} < required {gap_min:e}")]
    NotYetSeparated { gap: f64, gap_min: f64 },

    /// A spectator crest entered the collision cluster interval.
    #[error("spectator {index} entered the collision cluster at t = {t}")]
    SpectatorOverlap { index: usize, t: f64 },

    /// The rescaled flow failed to reach separation within its budget.
    #[error("continuation stalled after {elapsed} time units (w = {w})")]
    ContinuationStalled { elapsed: f64, w: f64 },

    /// An iterative search exhausted its hard budget.
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    /// A stability run requires both solutions to stay collision-free.
    #[error("collision during stability run ({which} solution) at t = {t}")]
    CollisionDuringStabilityRun { which: &'static str, t: f64 },

    /// Scenario configuration rejected before any computation.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by invalid configuration rather than by the
    /// numerics; the CLI maps these to exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
