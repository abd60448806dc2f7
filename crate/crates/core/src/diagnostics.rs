//! Post-solve optimality checks and convergence-rate estimation.
//!
//! A converged run of the solver gives a candidate stationary point; this
//! module measures how good that candidate is:
//!
//! * [`stationarity_residual`] — norm of the combined gradient at the point,
//!   restricted to the fixed-rank tangent space where the penalty gradient
//!   lives. Near zero at a genuine fixed point.
//! * [`check_conditions`] — the scalar curvature conditions on the smallest
//!   retained singular value that certify a local (or restricted strictly
//!   local) minimizer: `R''(sigma_r) >= 0` and `1 + lambda R''(sigma_r) > 0`.
//! * [`estimate_rate`] — least-squares slope of the log step-size over the
//!   tail of a trace, turning "eventually linear convergence" into a number.
//! * [`assert_rank_freeze`] — verifies the rank stopped changing and finds
//!   the iteration where its final value first appeared.
//!
//! The gradient and Hessian of the spectral penalty are exposed directly
//! ([`grad_penalty_matrix`], [`hessian_penalty_eigs`]) so tests can check
//! them against finite differences instead of trusting the formulas.

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::penalty::{Penalty, PenaltyError};
use crate::solver::{grad_g, IterationTrace, ObservedMatrix, SolverConfig, SolverError};
use crate::svt::{full_svd, SvtError};

/// Errors from the diagnostics entry points.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    /// The matrix is numerically zero; spectral derivatives need rank >= 1.
    #[error("matrix has numerical rank zero; no retained spectrum to differentiate")]
    RankZero,
    /// A trace was too short for the requested analysis.
    #[error("trace too short: need at least {needed} records, got {got}")]
    TraceTooShort { needed: usize, got: usize },
    /// Rate and freeze analysis expect a run that stopped by tolerance.
    #[error("trace did not terminate by tolerance")]
    NotConverged,
    /// The last ten recorded ranks are not all equal, so there is no frozen
    /// rank to report.
    #[error("rank still changing over the last {0} recorded iterations")]
    UnstableTailRank(usize),
    /// Fewer than two usable (positive, finite) gaps in the fit window.
    #[error("not enough positive finite gaps to fit a rate")]
    DegenerateGaps,
    #[error(transparent)]
    Svt(#[from] SvtError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
}

/// Scalar optimality certificate at a candidate solution.
///
/// `sigma_min` is the smallest retained singular value; `r_second` is
/// `R''(sigma_min)`. `local_min_ok` is the sufficient condition
/// `R''(sigma_min) >= 0` (always true for hard and soft, whose second
/// derivative vanishes off the origin). `restricted_ok` is the weaker
/// curvature condition `1 + lambda R''(sigma_min) > 0` certifying a strictly
/// local minimizer among matrices of the same rank. The two `lq_*` fields
/// are present only for lq: the largest lambda keeping `restricted_ok` true
/// at this point, and the guaranteed lower bound on surviving singular
/// values implied by the prox jump height.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub sigma_min: f64,
    pub r_second: f64,
    pub local_min_ok: bool,
    pub restricted_ok: bool,
    pub lq_lambda_bound: Option<f64>,
    pub lq_sigma_floor: Option<f64>,
}

/// Empirical linear-rate estimate from the tail of a trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateEstimate {
    /// Estimated contraction factor `exp(slope of log gap)`.
    pub rho_hat: f64,
    /// Iteration indices (first, last) of the fitted window.
    pub window: (usize, usize),
    /// Coefficient of determination of the log-linear fit.
    pub r_squared: f64,
    /// True when the fit used at least 10 points, explained at least 90% of
    /// the variance, and the estimated factor is a genuine contraction
    /// (strictly inside (0, 1)). Otherwise `rho_hat` is reported but should
    /// not be read as a rate.
    pub conclusive: bool,
}

/// Fit quality and size thresholds for calling a rate estimate conclusive.
const RATE_MIN_POINTS: usize = 10;
const RATE_MIN_R_SQUARED: f64 = 0.9;
/// A rate fit uses at most this many trailing points, where the iteration
/// has settled into its asymptotic regime.
const RATE_WINDOW_CAP: usize = 100;
/// Tail length over which the rank must be constant to count as frozen.
const FREEZE_TAIL: usize = 10;

/// Gradient of the spectral penalty at `x`, restricted to the retained
/// spectrum: `U_r diag(R'(sigma_i)) V_r^T`.
///
/// Errors on numerically zero `x` (no retained singular values).
pub fn grad_penalty_matrix(x: &DMatrix<f64>, penalty: Penalty) -> Result<DMatrix<f64>, DiagnosticsError> {
    let factors = full_svd(x)?;
    let rank = factors.rank();
    if rank == 0 {
        return Err(DiagnosticsError::RankZero);
    }
    let u_r = factors.u.columns(0, rank);
    let v_r = factors.v.columns(0, rank);
    let mut scaled = u_r.clone_owned();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= penalty.deriv(factors.sigma[j])?;
    }
    Ok(scaled * v_r.transpose())
}

/// The `r^2` curvature eigenvalues of the restricted spectral penalty at
/// `x`: all pairwise sums `R''(sigma_i) + R''(sigma_j)` over the retained
/// spectrum, in row-major pair order.
pub fn hessian_penalty_eigs(x: &DMatrix<f64>, penalty: Penalty) -> Result<Vec<f64>, DiagnosticsError> {
    let factors = full_svd(x)?;
    let rank = factors.rank();
    if rank == 0 {
        return Err(DiagnosticsError::RankZero);
    }
    let second: Vec<f64> = (0..rank)
        .map(|i| penalty.second_deriv(factors.sigma[i]))
        .collect::<Result<_, _>>()?;
    let mut eigs = Vec::with_capacity(rank * rank);
    for &si in &second {
        for &sj in &second {
            eigs.push(si + sj);
        }
    }
    Ok(eigs)
}

/// Norm of the combined gradient at `x`, normalized by `max(1, ||x||_F)`.
///
/// The data-fit gradient is projected onto the tangent space of the
/// fixed-rank manifold at `x` before being combined with the penalty
/// gradient, which already lies in that space; the optimality system of the
/// rank-restricted objective lives there, and components orthogonal to it
/// correspond to spectrum the threshold step has (correctly) discarded.
pub fn stationarity_residual(
    x: &DMatrix<f64>,
    data: &ObservedMatrix,
    cfg: &SolverConfig,
) -> Result<f64, DiagnosticsError> {
    let factors = full_svd(x)?;
    let rank = factors.rank();
    if rank == 0 {
        return Err(DiagnosticsError::RankZero);
    }
    let gradient = grad_g(x, data)?;
    let u_r = factors.u.columns(0, rank).clone_owned();
    let v_r = factors.v.columns(0, rank).clone_owned();
    // P_T(Z) = U U^T Z + Z V V^T - U U^T Z V V^T for the retained factors.
    let ut_z = u_r.transpose() * &gradient;
    let z_v = &gradient * &v_r;
    let projected = &u_r * &ut_z + &z_v * v_r.transpose() - &u_r * (ut_z * &v_r) * v_r.transpose();
    let penalty_grad = grad_penalty_matrix(x, cfg.penalty)?;
    let residual = (projected + cfg.lambda * penalty_grad).norm();
    Ok(residual / x.norm().max(1.0))
}

/// Evaluates the scalar curvature conditions at `x` under `cfg` (see
/// [`ConditionReport`]).
pub fn check_conditions(x: &DMatrix<f64>, cfg: &SolverConfig) -> Result<ConditionReport, DiagnosticsError> {
    let factors = full_svd(x)?;
    let rank = factors.rank();
    if rank == 0 {
        return Err(DiagnosticsError::RankZero);
    }
    let sigma_min = factors.sigma[rank - 1];
    let r_second = cfg.penalty.second_deriv(sigma_min)?;
    let (lq_lambda_bound, lq_sigma_floor) = match cfg.penalty.q() {
        Some(q) => {
            let bound = sigma_min.powf(2.0 - q) / (q * (1.0 - q));
            let floor = cfg.penalty.threshold_info(cfg.prox_eta()).beta;
            (Some(bound), Some(floor))
        }
        None => (None, None),
    };
    Ok(ConditionReport {
        sigma_min,
        r_second,
        local_min_ok: r_second >= 0.0,
        restricted_ok: 1.0 + cfg.lambda * r_second > 0.0,
        lq_lambda_bound,
        lq_sigma_floor,
    })
}

/// Index where the final constant-rank run begins, provided the last
/// [`FREEZE_TAIL`] ranks agree.
fn freeze_start(trace: &IterationTrace) -> Result<usize, DiagnosticsError> {
    let records = &trace.records;
    if records.len() < FREEZE_TAIL {
        return Err(DiagnosticsError::TraceTooShort {
            needed: FREEZE_TAIL,
            got: records.len(),
        });
    }
    let final_rank = records[records.len() - 1].rank;
    if records[records.len() - FREEZE_TAIL..]
        .iter()
        .any(|r| r.rank != final_rank)
    {
        return Err(DiagnosticsError::UnstableTailRank(FREEZE_TAIL));
    }
    let start = records
        .iter()
        .rposition(|r| r.rank != final_rank)
        .map_or(0, |i| i + 1);
    Ok(start)
}

/// Verifies the rank froze and returns `(k_star, rank)`: the first iteration
/// holding the final rank, and that rank. Requires a tolerance-terminated
/// trace whose last [`FREEZE_TAIL`] ranks agree.
pub fn assert_rank_freeze(trace: &IterationTrace) -> Result<(usize, usize), DiagnosticsError> {
    if !trace.converged {
        return Err(DiagnosticsError::NotConverged);
    }
    let start = freeze_start(trace)?;
    Ok((trace.records[start].iter, trace.records.last().expect("nonempty").rank))
}

/// Fits `log(gap_k) ~ a + s k` over the post-freeze tail (at most the last
/// [`RATE_WINDOW_CAP`] records with positive finite gaps) and reports
/// `rho_hat = exp(s)` with the fit quality. Needs at least 20 records after
/// the rank freeze.
pub fn estimate_rate(trace: &IterationTrace) -> Result<RateEstimate, DiagnosticsError> {
    let start = freeze_start(trace)?;
    let post_freeze = trace.records.len() - start;
    if post_freeze < 20 {
        return Err(DiagnosticsError::TraceTooShort {
            needed: 20,
            got: post_freeze,
        });
    }
    let usable: Vec<(f64, f64)> = trace.records[start..]
        .iter()
        .filter(|r| r.iter > 0 && r.gap.is_finite() && r.gap > 0.0)
        .map(|r| (r.iter as f64, r.gap.ln()))
        .collect();
    let tail = &usable[usable.len().saturating_sub(RATE_WINDOW_CAP)..];
    if tail.len() < 2 {
        return Err(DiagnosticsError::DegenerateGaps);
    }

    let n = tail.len() as f64;
    let mean_x = tail.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = tail.iter().map(|p| p.1).sum::<f64>() / n;
    let var_x: f64 = tail.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let cov_xy: f64 = tail.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = cov_xy / var_x;
    let ss_tot: f64 = tail.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = tail
        .iter()
        .map(|p| (p.1 - (mean_y + slope * (p.0 - mean_x))).powi(2))
        .sum();
    let r_squared = if ss_tot <= 1e-30 {
        if ss_res <= 1e-30 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };

    let rho_hat = slope.exp();
    let points = tail.len();
    Ok(RateEstimate {
        rho_hat,
        window: (tail[0].0 as usize, tail[points - 1].0 as usize),
        r_squared,
        conclusive: points >= RATE_MIN_POINTS
            && r_squared >= RATE_MIN_R_SQUARED
            && rho_hat > 0.0
            && rho_hat < 1.0,
    })
}
