//! Problem generation and measurement.
//!
//! Everything the experiments need around the solver: uniform observation
//! masks, synthetic low-rank ground truth, exact-SNR Gaussian noise,
//! recovery metrics (relative error and PSNR), and binary PGM image I/O
//! for grayscale inpainting runs.
//!
//! All generators are deterministic functions of an explicit `u64` seed;
//! the same seed reproduces the same mask, matrix, and noise bit-for-bit
//! within one build.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fs;
use std::path::Path;
use thiserror::Error;

use crate::solver::{ObservedMatrix, SolverError};

/// Errors from generation, measurement, and image I/O.
#[derive(Debug, Error)]
pub enum DataError {
    /// Matrix dimensions must both be positive.
    #[error("matrix dimensions must be positive, got {m}x{n}")]
    InvalidDimensions { m: usize, n: usize },
    /// Target rank must sit in `[1, min(m, n)]`.
    #[error("rank {rank} outside [1, {max}]")]
    InvalidRank { rank: usize, max: usize },
    /// Observation fraction must be strictly inside (0, 1).
    #[error("observation fraction must lie strictly inside (0, 1), got {0}")]
    InvalidObsFraction(f64),
    /// A mask needs at least two cells so it can be nonempty and proper.
    #[error("mask over {m}x{n} matrix cannot be both nonempty and proper")]
    MaskTooSmall { m: usize, n: usize },
    /// Finite-SNR noise needs a nonzero signal to scale against.
    #[error("cannot target a finite SNR against a zero signal")]
    ZeroSignal,
    /// Metrics need operands of identical shape.
    #[error("shape mismatch: estimate is {est_rows}x{est_cols}, truth is {truth_rows}x{truth_cols}")]
    ShapeMismatch {
        est_rows: usize,
        est_cols: usize,
        truth_rows: usize,
        truth_cols: usize,
    },
    /// Relative error is undefined against a zero reference.
    #[error("relative error is undefined for a zero truth matrix")]
    ZeroTruth,
    /// The PSNR peak must be a positive finite value.
    #[error("PSNR peak must be positive and finite, got {0}")]
    InvalidPeak(f64),
    /// Image data must be finite before quantization.
    #[error("matrix contains non-finite values")]
    NonFiniteValues,
    /// A PGM file failed to parse; `field` names the offending part.
    #[error("invalid PGM {field}: {detail}")]
    PgmParse { field: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Recipe for a random low-rank completion problem.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub m: usize,
    pub n: usize,
    /// Rank of the ground truth, in `[1, min(m, n)]`.
    pub rank: usize,
    /// Fraction of entries observed, strictly inside (0, 1).
    pub obs_fraction: f64,
    /// Signal-to-noise ratio on the observed entries, in dB;
    /// `f64::INFINITY` means noiseless.
    pub snr_db: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.m == 0 || self.n == 0 {
            return Err(DataError::InvalidDimensions { m: self.m, n: self.n });
        }
        let max = self.m.min(self.n);
        if self.rank == 0 || self.rank > max {
            return Err(DataError::InvalidRank { rank: self.rank, max });
        }
        if !(self.obs_fraction > 0.0 && self.obs_fraction < 1.0) {
            return Err(DataError::InvalidObsFraction(self.obs_fraction));
        }
        Ok(())
    }
}

/// A generated problem: the ground truth and its observed projection.
#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    /// Exact low-rank matrix the solver is asked to recover.
    pub truth: DMatrix<f64>,
    /// Masked, possibly noisy observations of `truth`.
    pub data: ObservedMatrix,
}

/// Recovery quality of an estimate against the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Metrics {
    /// `||estimate - truth||_F / ||truth||_F`.
    pub rel_err: f64,
    /// `10 log10(peak^2 m n / ||estimate - truth||_F^2)`; infinite on an
    /// exact match (exactly when `rel_err` is zero).
    pub psnr_db: f64,
}

/// Uniform observation mask with exactly `round(fraction * m * n)` observed
/// cells (clamped into `[1, m*n - 1]` so the mask is always nonempty and
/// proper), chosen without replacement. Deterministic per seed.
pub fn random_mask(
    m: usize,
    n: usize,
    fraction: f64,
    seed: u64,
) -> Result<DMatrix<bool>, DataError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DataError::InvalidObsFraction(fraction));
    }
    let cells = m * n;
    if cells < 2 {
        return Err(DataError::MaskTooSmall { m, n });
    }
    let count = ((fraction * cells as f64).round() as usize).clamp(1, cells - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = DMatrix::from_element(m, n, false);
    for cell in sample(&mut rng, cells, count) {
        // Cells are numbered row-major: cell = row * n + col.
        mask[(cell / n, cell % n)] = true;
    }
    Ok(mask)
}

/// Draws the random orthogonal model `M = A B^T` with `A` (m x rank) and
/// `B` (n x rank) standard normal, masks it, and adds observed-entry noise
/// at exactly `spec.snr_db`.
///
/// Sub-streams are derived from `spec.seed`: the factors use `seed`, the
/// mask `seed + 1`, the noise `seed + 2`, so the truth is unchanged when
/// only the observation model varies. The factor matrices fill column by
/// column and the noise fills observed cells in row-major order; together
/// with the seeded generator this makes the whole pipeline reproducible
/// bit-for-bit.
///
/// The SNR here is measured on the observed entries only — the energy ratio
/// `||P(M)||_F^2 / ||P(noise)||_F^2` — since unobserved noise never reaches
/// the solver. The realized noise is rescaled to hit the target exactly
/// rather than in expectation.
pub fn synth_low_rank(spec: &SyntheticSpec) -> Result<SyntheticProblem, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut factor = |rows: usize| {
        let mut f = DMatrix::<f64>::zeros(rows, spec.rank);
        for c in 0..spec.rank {
            for r in 0..rows {
                f[(r, c)] = rng.sample(StandardNormal);
            }
        }
        f
    };
    let left = factor(spec.m);
    let right = factor(spec.n);
    let truth = &left * right.transpose();

    let data = observe(&truth, spec.obs_fraction, spec.snr_db, spec.seed)?;
    Ok(SyntheticProblem { truth, data })
}

/// Masks an arbitrary ground truth and corrupts the observed entries with
/// Gaussian noise at exactly `snr_db` (energy ratio on the observed set;
/// infinite means noiseless). This is the observation model shared by
/// synthetic and image problems.
///
/// Sub-streams follow the [`synth_low_rank`] convention: the mask is drawn
/// from `seed + 1` and the noise from `seed + 2`, observed cells in
/// row-major order.
pub fn observe(
    truth: &DMatrix<f64>,
    obs_fraction: f64,
    snr_db: f64,
    seed: u64,
) -> Result<ObservedMatrix, DataError> {
    let (m, n) = truth.shape();
    let mask = random_mask(m, n, obs_fraction, seed.wrapping_add(1))?;
    let mut observed = truth.clone();
    if snr_db.is_finite() {
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
        let mut draws = Vec::new();
        let mut signal_energy = 0.0;
        let mut noise_energy = 0.0;
        for r in 0..m {
            for c in 0..n {
                if mask[(r, c)] {
                    let draw: f64 = noise_rng.sample(StandardNormal);
                    draws.push(((r, c), draw));
                    signal_energy += truth[(r, c)] * truth[(r, c)];
                    noise_energy += draw * draw;
                }
            }
        }
        if signal_energy == 0.0 {
            return Err(DataError::ZeroSignal);
        }
        let scale = (signal_energy / noise_energy).sqrt() * 10f64.powf(-snr_db / 20.0);
        for ((r, c), draw) in draws {
            observed[(r, c)] += scale * draw;
        }
    }
    Ok(ObservedMatrix::new(observed, mask)?)
}

/// Adds i.i.d. Gaussian noise to the whole matrix, rescaled so the
/// full-matrix energy ratio `||x||_F^2 / ||noise||_F^2` equals
/// `10^(snr_db/10)` exactly. An infinite SNR returns `x` unchanged.
pub fn add_noise(x: &DMatrix<f64>, snr_db: f64, seed: u64) -> Result<DMatrix<f64>, DataError> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(x.clone());
    }
    let signal = x.norm();
    if signal == 0.0 {
        return Err(DataError::ZeroSignal);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = DMatrix::<f64>::zeros(x.nrows(), x.ncols());
    for c in 0..x.ncols() {
        for r in 0..x.nrows() {
            noise[(r, c)] = rng.sample(StandardNormal);
        }
    }
    let scale = signal / noise.norm() * 10f64.powf(-snr_db / 20.0);
    Ok(x + scale * noise)
}

/// Relative error and PSNR of `estimate` against `truth` at the given peak
/// value (255 for 8-bit images; `truth.amax()` is the usual choice for
/// synthetic data).
pub fn metrics(
    estimate: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    peak: f64,
) -> Result<Metrics, DataError> {
    if estimate.shape() != truth.shape() {
        return Err(DataError::ShapeMismatch {
            est_rows: estimate.nrows(),
            est_cols: estimate.ncols(),
            truth_rows: truth.nrows(),
            truth_cols: truth.ncols(),
        });
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(DataError::InvalidPeak(peak));
    }
    let truth_norm = truth.norm();
    if truth_norm == 0.0 {
        return Err(DataError::ZeroTruth);
    }
    let err_norm = (estimate - truth).norm();
    let cells = (truth.nrows() * truth.ncols()) as f64;
    let psnr_db = if err_norm == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak * cells / (err_norm * err_norm)).log10()
    };
    Ok(Metrics {
        rel_err: err_norm / truth_norm,
        psnr_db,
    })
}

/// Reads a binary (P5) PGM image with maxval 255 into a matrix of
/// `height` rows by `width` columns, pixel values as `0.0..=255.0`.
pub fn read_pgm(path: &Path) -> Result<DMatrix<f64>, DataError> {
    parse_pgm(&fs::read(path)?)
}

fn parse_pgm(bytes: &[u8]) -> Result<DMatrix<f64>, DataError> {
    let mut pos = 0usize;

    // Header tokens are separated by whitespace; '#' starts a comment that
    // runs to end of line.
    let mut next_token = |field: &'static str| -> Result<&[u8], DataError> {
        loop {
            match bytes.get(pos) {
                None => {
                    return Err(DataError::PgmParse {
                        field,
                        detail: "unexpected end of header".into(),
                    })
                }
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        Ok(&bytes[start..pos])
    };

    let magic = next_token("magic")?;
    if magic != b"P5" {
        return Err(DataError::PgmParse {
            field: "magic",
            detail: format!("expected P5, got {:?}", String::from_utf8_lossy(magic)),
        });
    }
    let mut dimension = |field: &'static str| -> Result<usize, DataError> {
        let token = next_token(field)?;
        std::str::from_utf8(token)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&v| v > 0)
            .ok_or_else(|| DataError::PgmParse {
                field,
                detail: format!("not a positive integer: {:?}", String::from_utf8_lossy(token)),
            })
    };
    let width = dimension("width")?;
    let height = dimension("height")?;
    let maxval = dimension("maxval")?;
    if maxval != 255 {
        return Err(DataError::PgmParse {
            field: "maxval",
            detail: format!("only 255 supported, got {maxval}"),
        });
    }

    // Exactly one whitespace byte separates the header from the payload.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => {
            return Err(DataError::PgmParse {
                field: "payload",
                detail: "missing separator after maxval".into(),
            })
        }
    }
    let needed = width * height;
    let payload = &bytes[pos..];
    if payload.len() < needed {
        return Err(DataError::PgmParse {
            field: "payload",
            detail: format!("expected {needed} pixel bytes, found {}", payload.len()),
        });
    }
    Ok(DMatrix::from_fn(height, width, |r, c| {
        payload[r * width + c] as f64
    }))
}

/// Writes the matrix as a binary (P5) PGM image with maxval 255, rounding
/// each value to the nearest integer and clamping into `[0, 255]`.
pub fn write_pgm(matrix: &DMatrix<f64>, path: &Path) -> Result<(), DataError> {
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(DataError::NonFiniteValues);
    }
    let (rows, cols) = matrix.shape();
    if rows == 0 || cols == 0 {
        return Err(DataError::InvalidDimensions { m: rows, n: cols });
    }
    let mut bytes = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    bytes.reserve(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            bytes.push(matrix[(r, c)].round().clamp(0.0, 255.0) as u8);
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}
