//! Proximal gradient descent for penalized matrix completion.
//!
//! Given entries of a matrix observed on an index set and a spectral penalty,
//! the solver minimizes
//!
//! ```text
//! F(X) = 1/2 ||Y - P(X)||_F^2 + lambda * sum_i R(sigma_i(X))
//! ```
//!
//! where `P` zeroes everything outside the observed set and `Y` holds the
//! observed values. Each iteration takes a gradient step on the data-fit term
//! and a spectral prox step on the penalty:
//!
//! ```text
//! X_{k+1} = svt(X_k - (1/L) (P(X_k) - Y),  penalty,  L / lambda)
//! ```
//!
//! With `L > 1` (the data-fit gradient is 1-Lipschitz) the objective
//! decreases by at least `(L - 1)/2 * ||X_{k+1} - X_k||_F^2` per iteration,
//! the iteration converges, and for the jumpy penalties (hard, lq) the rank
//! and the singular-vector support freeze after finitely many steps. The
//! test suite checks those statements numerically rather than assuming them.

use std::time::Instant;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::penalty::Penalty;
use crate::svt::{full_svd, svt_with_factors, SvdFactors, SvtError};

/// Errors from data construction, configuration, and the solve entry points.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    /// Values and mask (or iterate and data) shapes differ.
    #[error("shape mismatch: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    /// No entry is observed; there is nothing to fit.
    #[error("mask observes no entries")]
    EmptyMask,
    /// Every entry is observed. The completion model expects a proper
    /// observation set; use [`ObservedMatrix::fully_observed`] when the
    /// denoising variant is genuinely wanted.
    #[error("mask observes every entry; use ObservedMatrix::fully_observed for complete data")]
    FullMask,
    /// Observed values must be finite.
    #[error("observed values contain non-finite entries")]
    NonFiniteValues,
    /// The step/prox parameter must exceed 1 for the descent guarantees.
    #[error("proximal parameter L must exceed 1, got {0}")]
    InvalidProximalParam(f64),
    /// Penalty weight must be positive and finite.
    #[error("lambda must be positive and finite, got {0}")]
    InvalidLambda(f64),
    /// Stopping tolerance must be positive.
    #[error("tolerance must be positive, got {0}")]
    InvalidTol(f64),
    /// At least one iteration must be allowed.
    #[error("max_iters must be at least 1")]
    InvalidMaxIters,
    /// A `Given` initializer had the wrong shape.
    #[error("initial matrix shape {0}x{1} does not match data shape {2}x{3}")]
    InitShapeMismatch(usize, usize, usize, usize),
    /// Spectral machinery failed (non-finite input or SVD breakdown) outside
    /// the iteration loop, where no partial trace exists yet.
    #[error(transparent)]
    Svt(#[from] SvtError),
}

/// Partially observed data: values on an observation mask, zeros elsewhere.
///
/// Construction zeroes unobserved entries of `values` regardless of input,
/// so two `ObservedMatrix` instances with the same mask and the same observed
/// values are identical matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedMatrix {
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
}

impl ObservedMatrix {
    /// Builds the standard completion setting: at least one entry observed
    /// and at least one missing.
    pub fn new(values: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self, SolverError> {
        if values.shape() != mask.shape() {
            return Err(SolverError::ShapeMismatch(
                values.nrows(),
                values.ncols(),
                mask.nrows(),
                mask.ncols(),
            ));
        }
        let observed = mask.iter().filter(|&&b| b).count();
        if observed == mask.len() && !mask.is_empty() {
            return Err(SolverError::FullMask);
        }
        Self::build(values, mask, observed)
    }

    /// Builds the fully observed (denoising) variant explicitly. The descent
    /// and fixed-point properties still hold; only the completion-specific
    /// discussion of unobserved entries becomes vacuous.
    pub fn fully_observed(values: DMatrix<f64>) -> Result<Self, SolverError> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        let observed = mask.len();
        Self::build(values, mask, observed)
    }

    fn build(mut values: DMatrix<f64>, mask: DMatrix<bool>, observed: usize) -> Result<Self, SolverError> {
        if observed == 0 {
            return Err(SolverError::EmptyMask);
        }
        values.zip_apply(&mask, |v, keep| {
            if !keep {
                *v = 0.0;
            }
        });
        if values.iter().any(|x| !x.is_finite()) {
            return Err(SolverError::NonFiniteValues);
        }
        Ok(ObservedMatrix { values, mask })
    }

    /// Observed values with zeros at unobserved positions.
    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    /// The observation mask.
    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    /// (rows, cols).
    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    /// Number of observed entries.
    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Projection onto the observed set: copies `x` where observed, zero
    /// elsewhere.
    pub fn project(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        out.zip_apply(&self.mask, |v, keep| {
            if !keep {
                *v = 0.0;
            }
        });
        out
    }
}

/// Starting point for the iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    /// Start from the zero matrix.
    #[default]
    Zero,
    /// Start from the soft-penalty (nuclear-norm) solution of the same
    /// problem, the usual convex warm start for the nonconvex penalties.
    WarmNuclear,
    /// Start from a caller-supplied matrix of matching shape.
    Given(DMatrix<f64>),
}

/// Everything the solver needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Spectral penalty applied to the singular values.
    pub penalty: Penalty,
    /// Penalty weight, > 0.
    pub lambda: f64,
    /// Proximal parameter L, strictly > 1; the gradient step is 1/L and the
    /// prox parameter is L/lambda.
    pub proximal_param: f64,
    /// Stop when the normalized step `||X_{k+1} - X_k||_F / sqrt(m n)` drops
    /// below this.
    pub tol: f64,
    /// Iteration cap.
    pub max_iters: usize,
    /// Starting point.
    pub init: Init,
    /// Recorded for provenance of runs; the iteration itself is
    /// deterministic and draws no randomness.
    pub seed: u64,
}

/// Default proximal parameter; barely above the descent threshold.
pub const DEFAULT_PROXIMAL_PARAM: f64 = 1.1;
/// Default normalized-step stopping tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Default iteration cap.
pub const DEFAULT_MAX_ITERS: usize = 5000;

impl SolverConfig {
    /// Config with validated `penalty`/`lambda` and the documented defaults:
    /// L = 1.1, tol = 1e-8, max_iters = 5000, seed 0, and the init that suits
    /// the penalty (zero for soft, warm nuclear for hard and lq).
    pub fn new(penalty: Penalty, lambda: f64) -> Result<Self, SolverError> {
        let init = if penalty.has_jump() {
            Init::WarmNuclear
        } else {
            Init::Zero
        };
        let cfg = SolverConfig {
            penalty,
            lambda,
            proximal_param: DEFAULT_PROXIMAL_PARAM,
            tol: DEFAULT_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            init,
            seed: 0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks the numeric invariants; [`solve`] calls this first.
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(SolverError::InvalidLambda(self.lambda));
        }
        if !(self.proximal_param > 1.0) || !self.proximal_param.is_finite() {
            return Err(SolverError::InvalidProximalParam(self.proximal_param));
        }
        if !(self.tol > 0.0) {
            return Err(SolverError::InvalidTol(self.tol));
        }
        if self.max_iters == 0 {
            return Err(SolverError::InvalidMaxIters);
        }
        Ok(())
    }

    /// Prox parameter of the spectral threshold step, `L / lambda`.
    pub fn prox_eta(&self) -> f64 {
        self.proximal_param / self.lambda
    }

    fn with(mut self, f: impl FnOnce(&mut Self)) -> Self {
        f(&mut self);
        self
    }

    /// Replaces the stopping tolerance.
    pub fn with_tol(self, tol: f64) -> Self {
        self.with(|c| c.tol = tol)
    }

    /// Replaces the iteration cap.
    pub fn with_max_iters(self, max_iters: usize) -> Self {
        self.with(|c| c.max_iters = max_iters)
    }

    /// Replaces the initializer.
    pub fn with_init(self, init: Init) -> Self {
        self.with(|c| c.init = init)
    }

    /// Replaces the proximal parameter L.
    pub fn with_proximal_param(self, proximal_param: f64) -> Self {
        self.with(|c| c.proximal_param = proximal_param)
    }

    /// Replaces the recorded seed.
    pub fn with_seed(self, seed: u64) -> Self {
        self.with(|c| c.seed = seed)
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// Iteration counter; 0 is the starting point.
    pub iter: usize,
    /// Objective F at this iterate, recomputed from scratch.
    pub objective: f64,
    /// Normalized step from the previous iterate,
    /// `||X_k - X_{k-1}||_F / sqrt(m n)`; infinity at iteration 0, which has
    /// no predecessor.
    pub gap: f64,
    /// Numerical rank of the iterate at the shared tolerance.
    pub rank: usize,
    /// Smallest nonzero singular value of the iterate, 0 for a zero matrix.
    pub sigma_min: f64,
    /// Wall-clock milliseconds since the solve started. Excluded from the
    /// determinism guarantee; everything else in the record is reproducible
    /// bit for bit per (data, config) within one build.
    pub elapsed_ms: f64,
}

/// Complete log of a solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IterationTrace {
    /// One record per iterate, starting with iteration 0.
    pub records: Vec<IterationRecord>,
    /// Whether the run stopped because the gap dropped below tolerance.
    pub converged: bool,
}

impl IterationTrace {
    /// Number of records (iterations performed plus the starting point).
    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// True when no records were logged.
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Number of PGD steps actually taken.
    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    /// Gap of the final record, if any.
    pub fn last_gap(&self) -> Option<f64> {
        self.records.last().map(|r| r.gap)
    }
}

/// Why the iteration stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum Termination {
    /// Normalized step dropped below `tol`.
    Converged,
    /// Iteration cap reached first.
    MaxIterations,
    /// The spectral step or the objective broke down numerically; the result
    /// holds the last good iterate and the trace up to the failure.
    NumericalFailure(String),
}

/// Solution, full trace, and stopping reason.
#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Final (or last good) iterate.
    pub solution: DMatrix<f64>,
    /// Per-iteration log, including the starting point.
    pub trace: IterationTrace,
    /// Stopping reason.
    pub termination: Termination,
}

impl SolveResult {
    /// True when the run stopped by tolerance.
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// Objective `F(X) = 1/2 ||Y - P(X)||_F^2 + lambda * sum_i R(sigma_i(X))`,
/// recomputed from scratch (fresh SVD) for auditability.
///
/// The penalty sum runs over the rank-resolved spectrum: singular values at
/// or below the shared rank tolerance are exact zeros of the underlying
/// iterate, distinguishable from zero only by rounding, and the jumpy
/// penalties would otherwise amplify that rounding (hard counts a full
/// lambda per phantom value; lq has unbounded slope at zero).
pub fn objective(x: &DMatrix<f64>, data: &ObservedMatrix, cfg: &SolverConfig) -> Result<f64, SolverError> {
    check_shape(x, data)?;
    let sigma = full_svd(x)?.sigma;
    Ok(data_fit(x, data) + cfg.lambda * penalty_term(&sigma, cfg.penalty))
}

/// Penalty sum over the retained spectrum (see [`objective`]).
fn penalty_term(sigma: &nalgebra::DVector<f64>, penalty: Penalty) -> f64 {
    let rank = crate::svt::numerical_rank(sigma);
    sigma.iter().take(rank).map(|&s| penalty.value(s)).sum()
}

/// Smooth part `1/2 ||Y - P(X)||_F^2`.
fn data_fit(x: &DMatrix<f64>, data: &ObservedMatrix) -> f64 {
    let residual = data.project(x) - data.values();
    0.5 * residual.norm_squared()
}

/// Gradient of the smooth part, `P(X) - Y`, supported on the observed set.
pub fn grad_g(x: &DMatrix<f64>, data: &ObservedMatrix) -> Result<DMatrix<f64>, SolverError> {
    check_shape(x, data)?;
    Ok(data.project(x) - data.values())
}

/// One PGD update: gradient step of length 1/L, then spectral prox at
/// `eta = L / lambda`.
pub fn pgd_step(x: &DMatrix<f64>, data: &ObservedMatrix, cfg: &SolverConfig) -> Result<DMatrix<f64>, SolverError> {
    cfg.validate()?;
    Ok(pgd_step_with_factors(x, data, cfg)?.0)
}

/// [`pgd_step`] keeping the output's factorization, whose spectrum comes
/// straight from the prox (killed values exactly zero), so the solve loop
/// can log rank and objective without decomposing the iterate again.
fn pgd_step_with_factors(
    x: &DMatrix<f64>,
    data: &ObservedMatrix,
    cfg: &SolverConfig,
) -> Result<(DMatrix<f64>, SvdFactors), SolverError> {
    let descended = x - grad_g(x, data)? / cfg.proximal_param;
    Ok(svt_with_factors(&descended, cfg.penalty, cfg.prox_eta())?)
}

/// Tolerance floor for the internal warm-start solve; an initializer only
/// needs moderate accuracy, and the convex solve converges slowly at small
/// lambda.
const WARM_START_TOL: f64 = 1e-6;
/// Iteration cap for the internal warm-start solve.
const WARM_START_MAX_ITERS: usize = 2_000;

/// Soft-penalty solution of the same problem from zero: the convex warm
/// start used by `Init::WarmNuclear`. Same lambda and L, but run to
/// moderate accuracy and capped — a starting point does not need the final
/// tolerance, and hitting the cap is fine (the partial solution is still a
/// good initializer).
pub fn warm_start_nuclear(data: &ObservedMatrix, cfg: &SolverConfig) -> Result<DMatrix<f64>, SolverError> {
    let soft_cfg = SolverConfig {
        penalty: Penalty::soft(),
        init: Init::Zero,
        tol: cfg.tol.max(WARM_START_TOL),
        max_iters: cfg.max_iters.min(WARM_START_MAX_ITERS),
        ..cfg.clone()
    };
    Ok(solve(data, &soft_cfg)?.solution)
}

/// Runs PGD until the normalized step drops below `cfg.tol` or the iteration
/// cap is reached. Numerical breakdowns terminate the loop but still return
/// the last good iterate and the trace accumulated so far.
pub fn solve(data: &ObservedMatrix, cfg: &SolverConfig) -> Result<SolveResult, SolverError> {
    cfg.validate()?;
    let (m, n) = data.shape();
    let mut x = match &cfg.init {
        Init::Zero => DMatrix::zeros(m, n),
        Init::WarmNuclear => warm_start_nuclear(data, cfg)?,
        Init::Given(x0) => {
            if x0.shape() != data.shape() {
                return Err(SolverError::InitShapeMismatch(x0.nrows(), x0.ncols(), m, n));
            }
            x0.clone()
        }
    };

    let start = Instant::now();
    let scale = ((m * n) as f64).sqrt();
    let mut trace = IterationTrace::default();
    let mut termination = Termination::MaxIterations;

    match iterate_stats(&x, data, cfg) {
        Ok((obj, rank, sigma_min)) => trace.records.push(IterationRecord {
            iter: 0,
            objective: obj,
            gap: f64::INFINITY,
            rank,
            sigma_min,
            elapsed_ms: elapsed_ms(start),
        }),
        Err(e) => return Err(e),
    }

    for k in 1..=cfg.max_iters {
        let (next, factors) = match pgd_step_with_factors(&x, data, cfg) {
            Ok(step) => step,
            Err(e) => {
                termination = Termination::NumericalFailure(e.to_string());
                break;
            }
        };
        let gap = (&next - &x).norm() / scale;
        let obj = data_fit(&next, data) + cfg.lambda * penalty_term(&factors.sigma, cfg.penalty);
        let (rank, sigma_min) = (factors.rank(), factors.sigma_min_nonzero());
        x = next;
        trace.records.push(IterationRecord {
            iter: k,
            objective: obj,
            gap,
            rank,
            sigma_min,
            elapsed_ms: elapsed_ms(start),
        });
        if !obj.is_finite() || !gap.is_finite() {
            termination = Termination::NumericalFailure(format!(
                "non-finite state at iteration {k}: objective {obj}, gap {gap}"
            ));
            break;
        }
        if gap < cfg.tol {
            termination = Termination::Converged;
            break;
        }
    }

    trace.converged = termination == Termination::Converged;
    Ok(SolveResult {
        solution: x,
        trace,
        termination,
    })
}

/// Objective, rank, and smallest nonzero singular value of one iterate,
/// sharing a single decomposition.
fn iterate_stats(x: &DMatrix<f64>, data: &ObservedMatrix, cfg: &SolverConfig) -> Result<(f64, usize, f64), SolverError> {
    let factors = full_svd(x)?;
    let obj = data_fit(x, data) + cfg.lambda * penalty_term(&factors.sigma, cfg.penalty);
    Ok((obj, factors.rank(), factors.sigma_min_nonzero()))
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn check_shape(x: &DMatrix<f64>, data: &ObservedMatrix) -> Result<(), SolverError> {
    if x.shape() != data.shape() {
        let (m, n) = data.shape();
        return Err(SolverError::ShapeMismatch(x.nrows(), x.ncols(), m, n));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Rank-one 4x4 outer product with one corner unobserved.
    fn small_problem() -> (DMatrix<f64>, ObservedMatrix) {
        let u = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]);
        let v = DVector::from_vec(vec![2.0, -1.0, 1.0, 3.0]);
        let truth = &u * v.transpose();
        let mut mask = DMatrix::from_element(4, 4, true);
        mask[(3, 3)] = false;
        mask[(1, 2)] = false;
        mask[(0, 1)] = false;
        let data = ObservedMatrix::new(truth.clone(), mask).unwrap();
        (truth, data)
    }

    #[test]
    fn observed_matrix_zeroes_unobserved_entries() {
        let values = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mut mask = DMatrix::from_element(2, 2, true);
        mask[(0, 1)] = false;
        let data = ObservedMatrix::new(values, mask).unwrap();
        assert_eq!(data.values()[(0, 1)], 0.0);
        assert_eq!(data.values()[(0, 0)], 1.0);
        assert_eq!(data.observed_count(), 3);
    }

    #[test]
    fn observed_matrix_rejects_degenerate_masks() {
        let values = DMatrix::zeros(2, 2);
        let none = DMatrix::from_element(2, 2, false);
        assert_eq!(
            ObservedMatrix::new(values.clone(), none).unwrap_err(),
            SolverError::EmptyMask
        );
        let all = DMatrix::from_element(2, 2, true);
        assert_eq!(
            ObservedMatrix::new(values.clone(), all).unwrap_err(),
            SolverError::FullMask
        );
        assert!(ObservedMatrix::fully_observed(values).is_ok());
        let tall = DMatrix::zeros(3, 2);
        let wide_mask = DMatrix::from_element(2, 3, true);
        assert!(matches!(
            ObservedMatrix::new(tall, wide_mask),
            Err(SolverError::ShapeMismatch(3, 2, 2, 3))
        ));
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        let p = Penalty::soft();
        assert!(matches!(
            SolverConfig::new(p, 0.0),
            Err(SolverError::InvalidLambda(_))
        ));
        let cfg = SolverConfig::new(p, 1.0).unwrap();
        assert!(matches!(
            cfg.clone().with_proximal_param(1.0).validate(),
            Err(SolverError::InvalidProximalParam(_))
        ));
        assert!(matches!(
            cfg.clone().with_tol(0.0).validate(),
            Err(SolverError::InvalidTol(0.0))
        ));
        assert!(matches!(
            cfg.clone().with_max_iters(0).validate(),
            Err(SolverError::InvalidMaxIters)
        ));
        assert_eq!(cfg.proximal_param, DEFAULT_PROXIMAL_PARAM);
        assert_eq!(cfg.tol, DEFAULT_TOL);
        assert_eq!(cfg.max_iters, DEFAULT_MAX_ITERS);
    }

    #[test]
    fn default_init_tracks_penalty_kind() {
        assert_eq!(SolverConfig::new(Penalty::soft(), 1.0).unwrap().init, Init::Zero);
        assert_eq!(
            SolverConfig::new(Penalty::hard(), 1.0).unwrap().init,
            Init::WarmNuclear
        );
        assert_eq!(
            SolverConfig::new(Penalty::lq(0.5).unwrap(), 1.0).unwrap().init,
            Init::WarmNuclear
        );
    }

    #[test]
    fn objective_matches_hand_computation() {
        // X = diag(2, 0), Y observes only the (0,0) entry as 3.
        let mut mask = DMatrix::from_element(2, 2, false);
        mask[(0, 0)] = true;
        let mut values = DMatrix::zeros(2, 2);
        values[(0, 0)] = 3.0;
        let data = ObservedMatrix::new(values, mask).unwrap();
        let x = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.0]));
        let cfg = SolverConfig::new(Penalty::soft(), 0.5).unwrap();
        // data fit: 1/2 (2 - 3)^2 = 0.5; penalty: 0.5 * (2 + 0) = 1.
        let f = objective(&x, &data, &cfg).unwrap();
        assert!((f - 1.5).abs() < 1e-14, "objective was {f}");
    }

    #[test]
    fn gradient_is_supported_on_observed_set() {
        let (_, data) = small_problem();
        let x = DMatrix::from_element(4, 4, 1.0);
        let g = grad_g(&x, &data).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if !data.mask()[(i, j)] {
                    assert_eq!(g[(i, j)], 0.0, "gradient leaked outside the mask at ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn pgd_step_from_zero_dies_when_spectrum_is_subcritical() {
        // From X = 0 the step is svt(Y / L, penalty, L / lambda); if every
        // singular value of Y / L sits at or below tau, the step returns 0.
        let y = DMatrix::from_row_slice(2, 3, &[0.1, 0.0, 0.02, 0.0, 0.05, 0.0]);
        let mut mask = DMatrix::from_element(2, 3, true);
        mask[(1, 2)] = false;
        let data = ObservedMatrix::new(y, mask).unwrap();
        let cfg = SolverConfig::new(Penalty::hard(), 1.0)
            .unwrap()
            .with_init(Init::Zero);
        // tau = sqrt(2 lambda / L) ~ 1.35 far above ||Y||/L.
        let next = pgd_step(&DMatrix::zeros(2, 3), &data, &cfg).unwrap();
        assert_eq!(next.norm(), 0.0);
        // And solve() from zero stops immediately with a zero solution.
        let result = solve(&data, &cfg).unwrap();
        assert!(result.converged());
        assert_eq!(result.solution.norm(), 0.0);
        assert_eq!(result.trace.steps(), 1);
    }

    #[test]
    fn solve_recovers_rank_one_noiseless_completion() {
        let (truth, data) = small_problem();
        let cfg = SolverConfig::new(Penalty::lq(0.5).unwrap(), 1e-3)
            .unwrap()
            .with_tol(1e-12)
            .with_max_iters(20_000);
        let result = solve(&data, &cfg).unwrap();
        assert!(result.converged(), "terminated by {:?}", result.termination);
        let rel_err = (&result.solution - &truth).norm() / truth.norm();
        assert!(
            rel_err < 1e-4,
            "rank-1 completion should be near-exact, got rel_err {rel_err}"
        );
    }

    #[test]
    fn solve_objective_is_nonincreasing_and_trace_is_consistent() {
        let (_, data) = small_problem();
        let cfg = SolverConfig::new(Penalty::lq(0.5).unwrap(), 0.01)
            .unwrap()
            .with_tol(1e-10)
            .with_max_iters(5000);
        let result = solve(&data, &cfg).unwrap();
        let objectives: Vec<f64> = result.trace.records.iter().map(|r| r.objective).collect();
        for w in objectives.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-10,
                "objective increased: {} -> {}",
                w[0],
                w[1]
            );
        }
        assert_eq!(result.trace.records[0].gap, f64::INFINITY);
        assert_eq!(result.trace.records[0].iter, 0);
        let last = result.trace.records.last().unwrap();
        assert!(last.gap < cfg.tol);
        assert!(result.trace.converged);
    }

    #[test]
    fn fully_observed_soft_run_matches_one_shot_threshold() {
        // With every entry observed, the soft-penalty minimizer is the
        // one-shot spectral shrinkage of Y with threshold lambda.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let y = DMatrix::from_fn(5, 4, |_, _| rng.gen_range(-2.0..2.0));
        let data = ObservedMatrix::fully_observed(y.clone()).unwrap();
        let lambda = 0.4;
        let cfg = SolverConfig::new(Penalty::soft(), lambda)
            .unwrap()
            .with_tol(1e-13)
            .with_max_iters(50_000);
        let result = solve(&data, &cfg).unwrap();
        assert!(result.converged());
        let one_shot = crate::svt::svt(&y, Penalty::soft(), 1.0 / lambda).unwrap();
        let diff = (&result.solution - &one_shot).norm();
        assert!(
            diff < 1e-6,
            "iterative and one-shot soft solutions differ by {diff}"
        );
    }

    #[test]
    fn converged_solution_is_a_fixed_point_of_the_step() {
        let (_, data) = small_problem();
        for penalty in [Penalty::hard(), Penalty::soft(), Penalty::lq(0.5).unwrap()] {
            let cfg = SolverConfig::new(penalty, 0.05)
                .unwrap()
                .with_tol(1e-12)
                .with_max_iters(50_000);
            let result = solve(&data, &cfg).unwrap();
            assert!(result.converged(), "{} run did not converge", penalty.name());
            let stepped = pgd_step(&result.solution, &data, &cfg).unwrap();
            let drift = (&stepped - &result.solution).norm();
            assert!(
                drift < 1e-10,
                "{}: converged point moved by {drift} under one more step",
                penalty.name()
            );
        }
    }

    #[test]
    fn warm_start_matches_explicit_soft_solve() {
        let (_, data) = small_problem();
        let cfg = SolverConfig::new(Penalty::lq(0.3).unwrap(), 0.1).unwrap();
        let warm = warm_start_nuclear(&data, &cfg).unwrap();
        let soft_cfg = SolverConfig {
            penalty: Penalty::soft(),
            init: Init::Zero,
            tol: cfg.tol.max(WARM_START_TOL),
            max_iters: cfg.max_iters.min(WARM_START_MAX_ITERS),
            ..cfg.clone()
        };
        let direct = solve(&data, &soft_cfg).unwrap().solution;
        assert_eq!(
            warm, direct,
            "warm start must be the moderate-accuracy soft solve, bit for bit"
        );
    }

    #[test]
    fn solve_is_deterministic_within_a_build() {
        let (_, data) = small_problem();
        let cfg = SolverConfig::new(Penalty::lq(0.5).unwrap(), 0.02).unwrap();
        let a = solve(&data, &cfg).unwrap();
        let b = solve(&data, &cfg).unwrap();
        assert_eq!(a.solution, b.solution);
        assert_eq!(a.trace.records.len(), b.trace.records.len());
        for (ra, rb) in a.trace.records.iter().zip(&b.trace.records) {
            assert_eq!(ra.objective, rb.objective);
            assert_eq!(ra.gap, rb.gap);
            assert_eq!(ra.rank, rb.rank);
            assert_eq!(ra.sigma_min, rb.sigma_min);
        }
    }

    #[test]
    fn solve_reports_max_iterations_distinctly() {
        let (_, data) = small_problem();
        let cfg = SolverConfig::new(Penalty::soft(), 0.01)
            .unwrap()
            .with_tol(1e-15)
            .with_max_iters(3);
        let result = solve(&data, &cfg).unwrap();
        assert_eq!(result.termination, Termination::MaxIterations);
        assert!(!result.converged());
        assert_eq!(result.trace.steps(), 3, "trace should still hold all iterations");
    }

    #[test]
    fn solve_rejects_mismatched_given_init() {
        let (_, data) = small_problem();
        let cfg = SolverConfig::new(Penalty::soft(), 0.1)
            .unwrap()
            .with_init(Init::Given(DMatrix::zeros(2, 2)));
        assert!(matches!(
            solve(&data, &cfg),
            Err(SolverError::InitShapeMismatch(2, 2, 4, 4))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn per_iteration_decrease_bound_holds(seed in 0u64..1000) {
            // F(X_{k+1}) <= F(X_k) - (L-1)/2 ||X_{k+1} - X_k||_F^2 on random
            // small instances, for every penalty.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = {
                let u = DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
                let v = DMatrix::from_fn(5, 2, |_, _| rng.gen_range(-1.0..1.0));
                u * v.transpose()
            };
            let mask = DMatrix::from_fn(6, 5, |_, _| rng.gen_bool(0.6));
            if !mask.iter().any(|&b| b) || mask.iter().all(|&b| b) {
                return Ok(());
            }
            let data = ObservedMatrix::new(truth, mask).unwrap();
            let scale = (30f64).sqrt();
            for penalty in [Penalty::hard(), Penalty::soft(), Penalty::lq(0.5).unwrap()] {
                let cfg = SolverConfig::new(penalty, 0.05)
                    .unwrap()
                    .with_init(Init::Zero)
                    .with_tol(1e-9)
                    .with_max_iters(400);
                let result = solve(&data, &cfg).unwrap();
                let required = (cfg.proximal_param - 1.0) / 2.0;
                for w in result.trace.records.windows(2) {
                    let step_sq = (w[1].gap * scale).powi(2);
                    prop_assert!(
                        w[1].objective <= w[0].objective - required * step_sq + 1e-10,
                        "{}: insufficient decrease at iter {}",
                        penalty.name(),
                        w[1].iter
                    );
                }
            }
        }
    }
}
