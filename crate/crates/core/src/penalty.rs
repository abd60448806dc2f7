//! Scalar sparsity penalties and their proximity operators.
//!
//! Everything downstream (singular-value thresholding, the proximal gradient
//! solver, the optimality diagnostics) is built on the scalar problem
//!
//! ```text
//! prox(t, eta) = argmin_x  R(x) + (eta / 2) (x - t)^2,    eta > 0
//! ```
//!
//! for one of three penalties acting on a real scalar:
//!
//! * hard:  R(x) = 1 if x != 0 else 0            (counting "norm")
//! * soft:  R(x) = |x|                           (absolute value)
//! * lq:    R(x) = |x|^q with 0 < q < 1          (bridge family)
//!
//! All three prox maps are odd, monotone in `t`, and shrink toward zero. The
//! hard and lq maps are discontinuous: outputs are either exactly zero or at
//! least a jump height `beta(eta)` in magnitude, with the switch at a
//! threshold `tau(eta) >= beta(eta)`. [`ThresholdInfo`] exposes both numbers.
//!
//! [`prox_oracle`] is an independent brute-force check: it minimizes the same
//! objective by scanning a dense grid and is used by the test suite to verify
//! every closed form here. It shares no code with [`Penalty::prox`].

use thiserror::Error;

/// Errors from penalty construction, evaluation, and the grid oracle.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PenaltyError {
    /// The lq exponent must lie strictly between 0 and 1.
    #[error("lq exponent must lie strictly inside (0, 1), got {0}")]
    InvalidExponent(f64),
    /// First derivative requested at the origin, where none of the penalties
    /// is differentiable.
    #[error("penalty derivative is undefined at x = 0")]
    DerivativeAtZero,
    /// Second derivative requested at a non-positive point.
    #[error("penalty second derivative requires x > 0, got {0}")]
    SecondDerivativeDomain(f64),
    /// The oracle grid is empty or has lo >= hi.
    #[error("oracle grid is empty or inverted: lo = {lo}, hi = {hi}, n = {n}")]
    InvalidGrid { lo: f64, hi: f64, n: usize },
    /// The oracle grid does not bracket both the origin and the query point,
    /// so the scan could not contain the minimizer.
    #[error("oracle grid [{lo}, {hi}] must contain 0 and the query t = {t}")]
    GridDoesNotCover { lo: f64, hi: f64, t: f64 },
}

/// Jump geometry of a prox map at a given `eta`.
///
/// Outputs of magnitude below `beta` never occur: the prox range is
/// `{0} ∪ [beta, ∞)` in magnitude. Inputs with `|t| <= tau` map to zero,
/// inputs with `|t| > tau` map to the nonzero branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdInfo {
    /// Dead-zone half-width: `prox(t) = 0` exactly when `|t| <= tau`.
    pub tau: f64,
    /// Smallest nonzero output magnitude (0 for the soft penalty, whose prox
    /// is continuous).
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Hard,
    Soft,
    Lq { q: f64 },
}

/// A scalar penalty choice. Construct with [`Penalty::hard`],
/// [`Penalty::soft`], or the validated [`Penalty::lq`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalty {
    kind: Kind,
}

/// Residual tolerance for the lq prox Newton solve, |h(x) - t| <= this.
const NEWTON_RESIDUAL_TOL: f64 = 1e-12;
/// Iteration cap for the lq prox Newton solve before bisection takes over.
const NEWTON_MAX_STEPS: usize = 100;

impl Penalty {
    /// The counting penalty R(x) = 1 for x != 0, 0 at x = 0.
    pub const fn hard() -> Self {
        Penalty { kind: Kind::Hard }
    }

    /// The absolute-value penalty R(x) = |x|.
    pub const fn soft() -> Self {
        Penalty { kind: Kind::Soft }
    }

    /// The bridge penalty R(x) = |x|^q. Rejects exponents outside (0, 1);
    /// the endpoints are the hard and soft penalties, not lq.
    pub fn lq(q: f64) -> Result<Self, PenaltyError> {
        if !(q > 0.0 && q < 1.0) {
            return Err(PenaltyError::InvalidExponent(q));
        }
        Ok(Penalty {
            kind: Kind::Lq { q },
        })
    }

    /// The lq exponent, if this is an lq penalty.
    pub fn q(&self) -> Option<f64> {
        match self.kind {
            Kind::Lq { q } => Some(q),
            _ => None,
        }
    }

    /// Short lowercase name: "hard", "soft", or "lq".
    pub fn name(&self) -> &'static str {
        match self.kind {
            Kind::Hard => "hard",
            Kind::Soft => "soft",
            Kind::Lq { .. } => "lq",
        }
    }

    /// True for penalties whose prox map jumps (hard and lq); false for soft,
    /// whose prox is continuous with `beta = 0`.
    pub fn has_jump(&self) -> bool {
        !matches!(self.kind, Kind::Soft)
    }

    /// Penalty value R(x). Always finite and nonnegative.
    pub fn value(&self, x: f64) -> f64 {
        match self.kind {
            Kind::Hard => {
                if x == 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
            Kind::Soft => x.abs(),
            Kind::Lq { q } => x.abs().powf(q),
        }
    }

    /// First derivative R'(x) on the smooth branch x != 0.
    ///
    /// The hard penalty is locally constant away from the origin, so its
    /// derivative there is 0. Errors at x = 0 for every penalty.
    pub fn deriv(&self, x: f64) -> Result<f64, PenaltyError> {
        if x == 0.0 {
            return Err(PenaltyError::DerivativeAtZero);
        }
        Ok(match self.kind {
            Kind::Hard => 0.0,
            Kind::Soft => x.signum(),
            Kind::Lq { q } => q * x.abs().powf(q - 1.0) * x.signum(),
        })
    }

    /// Second derivative R''(x) for x > 0.
    ///
    /// Hard and soft are locally linear away from the origin (R'' = 0); lq
    /// has R''(x) = q (q - 1) x^(q-2) < 0, the curvature that drives the
    /// local-minimum conditions in the diagnostics module.
    pub fn second_deriv(&self, x: f64) -> Result<f64, PenaltyError> {
        if x <= 0.0 {
            return Err(PenaltyError::SecondDerivativeDomain(x));
        }
        Ok(match self.kind {
            Kind::Hard | Kind::Soft => 0.0,
            Kind::Lq { q } => q * (q - 1.0) * x.powf(q - 2.0),
        })
    }

    /// Dead-zone threshold `tau` and jump height `beta` at parameter `eta`.
    ///
    /// * hard: tau = beta = sqrt(2 / eta)
    /// * soft: tau = 1 / eta, beta = 0
    /// * lq:   beta = (2 (1 - q) / eta)^(1 / (2 - q)),
    ///         tau  = beta + q beta^(q-1) / eta
    pub fn threshold_info(&self, eta: f64) -> ThresholdInfo {
        assert!(eta > 0.0, "prox parameter eta must be positive, got {eta}");
        match self.kind {
            Kind::Hard => {
                let tau = (2.0 / eta).sqrt();
                ThresholdInfo { tau, beta: tau }
            }
            Kind::Soft => ThresholdInfo {
                tau: 1.0 / eta,
                beta: 0.0,
            },
            Kind::Lq { q } => {
                let beta = (2.0 * (1.0 - q) / eta).powf(1.0 / (2.0 - q));
                let tau = beta + q * beta.powf(q - 1.0) / eta;
                ThresholdInfo { tau, beta }
            }
        }
    }

    /// Proximity operator: the global minimizer of R(x) + (eta/2)(x - t)^2.
    ///
    /// Ties at the jump threshold `|t| = tau` resolve to 0, so the zero
    /// branch is closed. Odd in `t`: prox(-t) = -prox(t).
    pub fn prox(&self, t: f64, eta: f64) -> f64 {
        assert!(eta > 0.0, "prox parameter eta must be positive, got {eta}");
        match self.kind {
            Kind::Hard => {
                if t.abs() <= (2.0 / eta).sqrt() {
                    0.0
                } else {
                    t
                }
            }
            Kind::Soft => {
                let shrunk = (t.abs() - 1.0 / eta).max(0.0);
                if shrunk == 0.0 {
                    // Avoid -0.0 for negative t inside the dead zone.
                    0.0
                } else {
                    t.signum() * shrunk
                }
            }
            Kind::Lq { q } => {
                let info = self.threshold_info(eta);
                let magnitude = t.abs();
                if magnitude <= info.tau {
                    0.0
                } else {
                    t.signum() * lq_prox_branch(q, eta, magnitude, info.beta)
                }
            }
        }
    }
}

/// Nonzero branch of the lq prox: the root of `h(x) = q x^(q-1)/eta + x = t`
/// on `[beta, t]`, for `t > tau(eta)`.
///
/// `h` is strictly increasing and convex there, so Newton from `x0 = t`
/// (which overshoots the root from above) converges monotonically. If a
/// floating-point step ever leaves the bracket, or the iteration cap is hit
/// first, plain bisection on `[beta, t]` finishes the job.
fn lq_prox_branch(q: f64, eta: f64, t: f64, beta: f64) -> f64 {
    debug_assert!(t > 0.0);
    let h = |x: f64| q * x.powf(q - 1.0) / eta + x;
    let mut x = t;
    for _ in 0..NEWTON_MAX_STEPS {
        let residual = h(x) - t;
        if residual.abs() <= NEWTON_RESIDUAL_TOL {
            return x;
        }
        let slope = 1.0 + q * (q - 1.0) * x.powf(q - 2.0) / eta;
        let next = x - residual / slope;
        if !(beta..=t).contains(&next) {
            return lq_prox_bisect(&h, t, beta);
        }
        x = next;
    }
    lq_prox_bisect(&h, t, beta)
}

/// Bisection fallback for the lq prox root on `[beta, t]`.
fn lq_prox_bisect(h: &dyn Fn(f64) -> f64, t: f64, beta: f64) -> f64 {
    let (mut lo, mut hi) = (beta, t);
    // 200 halvings reduce any double-precision bracket below one ulp.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) < t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Brute-force prox by exhaustive scan of `n + 1` equally spaced points on
/// `[lo, hi]`. Ties break toward smaller `|x|`, matching the closed forms'
/// tie rule at the jump threshold.
///
/// This is the test oracle for [`Penalty::prox`]; it never calls it.
pub fn prox_oracle(
    penalty: Penalty,
    t: f64,
    eta: f64,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<f64, PenaltyError> {
    ProxOracleGrid::new(penalty, lo, hi, n)?.minimize(t, eta)
}

/// Reusable grid for [`prox_oracle`]: penalty values are precomputed once per
/// grid point, so sweeping many `(t, eta)` queries against the same grid
/// costs one fused multiply-add per point per query instead of a `powf`.
#[derive(Debug, Clone)]
pub struct ProxOracleGrid {
    lo: f64,
    hi: f64,
    step: f64,
    penalty_values: Vec<f64>,
}

impl ProxOracleGrid {
    /// Tabulates R over `n + 1` points spanning `[lo, hi]`.
    pub fn new(penalty: Penalty, lo: f64, hi: f64, n: usize) -> Result<Self, PenaltyError> {
        if n == 0 || !(lo < hi) {
            return Err(PenaltyError::InvalidGrid { lo, hi, n });
        }
        let step = (hi - lo) / n as f64;
        let penalty_values = (0..=n).map(|i| penalty.value(lo + i as f64 * step)).collect();
        Ok(ProxOracleGrid {
            lo,
            hi,
            step,
            penalty_values,
        })
    }

    /// Grid spacing; the oracle answer is exact to within one step.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Scans the whole grid for the minimizer of R(x) + (eta/2)(x - t)^2.
    pub fn minimize(&self, t: f64, eta: f64) -> Result<f64, PenaltyError> {
        assert!(eta > 0.0, "prox parameter eta must be positive, got {eta}");
        if !(self.lo <= 0.0 && 0.0 <= self.hi) || !(self.lo <= t && t <= self.hi) {
            return Err(PenaltyError::GridDoesNotCover {
                lo: self.lo,
                hi: self.hi,
                t,
            });
        }
        let half_eta = 0.5 * eta;
        let mut best_x = self.lo;
        let diff0 = self.lo - t;
        let mut best_obj = self.penalty_values[0] + half_eta * diff0 * diff0;
        for (i, &r) in self.penalty_values.iter().enumerate().skip(1) {
            let x = self.lo + i as f64 * self.step;
            let diff = x - t;
            let obj = r + half_eta * diff * diff;
            if obj < best_obj || (obj == best_obj && x.abs() < best_x.abs()) {
                best_obj = obj;
                best_x = x;
            }
        }
        Ok(best_x)
    }
}
