//! Low-rank matrix completion by proximal gradient descent with nonconvex
//! spectral penalties.
//!
//! Given partial observations `Y` of a matrix on an index set with mask
//! `P`, the solver minimizes
//!
//! ```text
//! F(X) = 1/2 ||Y - P(X)||_F^2 + lambda * sum_i R(sigma_i(X))
//! ```
//!
//! where `R` is a scalar penalty applied to each singular value: hard
//! thresholding, soft thresholding (the nuclear norm), or the lq
//! quasi-norm `|x|^q` with `0 < q < 1`. Each iteration takes a gradient
//! step of size `1/L` on the data-fit term and then applies generalized
//! singular value thresholding — the scalar proximity operator of `R`
//! mapped over the spectrum.
//!
//! Module map:
//!
//! * [`penalty`] — scalar penalties, their derivatives, closed-form prox
//!   maps, and a brute-force grid oracle for testing them.
//! * [`svt`] — SVD plumbing and the spectral thresholding step.
//! * [`solver`] — the observed-data container, configuration, and the
//!   proximal gradient loop with its iteration trace.
//! * [`diagnostics`] — post-solve stationarity and curvature checks, rank
//!   freeze detection, and empirical linear-rate estimation.
//! * [`dataio`] — synthetic problem generation, exact-SNR noise, recovery
//!   metrics, and binary PGM image I/O.

pub mod dataio;
pub mod diagnostics;
pub mod penalty;
pub mod solver;
pub mod svt;

pub use dataio::{
    metrics, observe, random_mask, read_pgm, synth_low_rank, write_pgm, DataError, Metrics,
    SyntheticSpec,
};
pub use diagnostics::{
    assert_rank_freeze, check_conditions, estimate_rate, stationarity_residual, ConditionReport,
    DiagnosticsError, RateEstimate,
};
pub use penalty::{Penalty, PenaltyError, ThresholdInfo};
pub use solver::{
    solve, Init, IterationRecord, IterationTrace, ObservedMatrix, SolveResult, SolverConfig,
    SolverError, Termination,
};
pub use svt::{full_svd, numerical_rank, svt, truncate_spectrum, SvdFactors, SvtError};
