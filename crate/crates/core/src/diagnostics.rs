//! Chain quality (ESS, multivariate ESS, time-normalised ESS) and prediction
//! quality (Q², PVA).
//!
//! The ESS uses the absolute value of the autocorrelation sum, so negative
//! correlation is penalised like positive correlation. The sum stops at the
//! first lag whose autocorrelation is within the `2/sqrt(n)` white-noise band.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::TruncatedGaussian;
use crate::samplers::SampleChain;
use crate::scalar::Real;

fn check_path(path: &[f64]) -> Result<(f64, f64)> {
    if path.len() < 2 {
        return Err(Error::Undefined("ESS needs at least two draws".into()));
    }
    if path.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("path contains non-finite values".into()));
    }
    let n = path.len() as f64;
    let mean = path.iter().sum::<f64>() / n;
    let var = path.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 || var <= 1e-28 * mean * mean {
        return Err(Error::Undefined("constant path".into()));
    }
    Ok((mean, var))
}

/// Sum of sample autocorrelations up to (excluding) the first lag inside the
/// white-noise band.
fn autocorrelation_sum(path: &[f64]) -> Result<f64> {
    let (mean, var) = check_path(path)?;
    let n = path.len();
    let centered: Vec<f64> = path.iter().map(|x| x - mean).collect();
    let band = 2.0 / (n as f64).sqrt();
    let mut sum = 0.0;
    for lag in 1..n {
        let cov: f64 = centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64;
        let rho = cov / var;
        if rho.abs() < band {
            break;
        }
        sum += rho;
    }
    Ok(sum)
}

/// Effective sample size `n / (1 + 2 |sum rho_k|)`.
pub fn ess(path: &[f64]) -> Result<f64> {
    let s = autocorrelation_sum(path)?;
    Ok(path.len() as f64 / (1.0 + 2.0 * s.abs()))
}

/// Classic `n / (1 + 2 sum rho_k)` with the same truncation; can exceed `n`.
pub fn ess_classic(path: &[f64]) -> Result<f64> {
    let s = autocorrelation_sum(path)?;
    Ok(path.len() as f64 / (1.0 + 2.0 * s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MvEss {
    pub value: f64,
    /// Number of directions the determinant ratio was taken over.
    pub dim: usize,
    /// True when directions were dropped because the batch-means estimate
    /// could not support the full non-degenerate subspace.
    pub reduced: bool,
}

/// Multivariate ESS `n (det S / det B)^{1/p}` with `S` the sample covariance
/// and `B` the batch-means long-run covariance (batch size `floor(sqrt(n))`),
/// over the `p` non-degenerate principal directions.
pub fn mv_ess(draws: &DMatrix<f64>) -> Result<MvEss> {
    let (n, q) = draws.shape();
    if n < 4 || q == 0 {
        return Err(Error::Undefined("mvESS needs at least four draws".into()));
    }
    let mean = draws.row_mean();
    let mut centered = draws.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = cov.symmetric_eigen();
    let max = eig.eigenvalues.max();
    if !(max > 0.0) {
        return Err(Error::Undefined("all coordinates are constant".into()));
    }
    let mut dirs: Vec<usize> = (0..q).filter(|&i| eig.eigenvalues[i] > 1e-10 * max).collect();
    dirs.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let batch = (n as f64).sqrt().floor() as usize;
    let batches = n / batch;
    let mut reduced = false;
    if dirs.len() >= batches {
        dirs.truncate(batches - 1);
        reduced = true;
    }
    let p = dirs.len();
    if p == 0 {
        return Err(Error::Undefined("too few batches for mvESS".into()));
    }
    let proj = DMatrix::from_fn(q, p, |i, k| eig.eigenvectors[(i, dirs[k])]);
    let scores = centered.rows(0, batches * batch) * &proj;
    let mut means = DMatrix::zeros(batches, p);
    for b in 0..batches {
        let block = scores.rows(b * batch, batch);
        means.row_mut(b).copy_from(&block.row_mean());
    }
    let grand = means.row_mean();
    for mut row in means.row_iter_mut() {
        row -= &grand;
    }
    let long_run = means.transpose() * &means * (batch as f64 / (batches as f64 - 1.0));
    let lr_eig = long_run.symmetric_eigen();
    if lr_eig.eigenvalues.iter().any(|&v| v <= 0.0) {
        return Err(Error::Undefined("singular batch-means covariance".into()));
    }
    let log_det_s: f64 = dirs.iter().map(|&i| eig.eigenvalues[i].ln()).sum();
    let log_det_b: f64 = lr_eig.eigenvalues.iter().map(|v| v.ln()).sum();
    Ok(MvEss {
        value: n as f64 * ((log_det_s - log_det_b) / p as f64).exp(),
        dim: p,
        reduced,
    })
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssReport {
    pub n_samples: usize,
    /// `None` for coordinates that never move (e.g. knots pinned by data).
    pub per_coordinate: Vec<Option<f64>>,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
    pub mv_ess: Option<MvEss>,
    pub wall_seconds: f64,
    /// `q10 / wall_seconds`.
    pub tn_ess: f64,
}

/// ESS summary of the columns of `draws` (one draw per row).
pub fn ess_report(draws: &DMatrix<f64>, wall_seconds: f64) -> Result<EssReport> {
    let n = draws.nrows();
    if n < 2 {
        return Err(Error::Undefined("ESS needs at least two draws".into()));
    }
    let mut per_coordinate = Vec::with_capacity(draws.ncols());
    for col in draws.column_iter() {
        let path: Vec<f64> = col.iter().copied().collect();
        per_coordinate.push(match ess(&path) {
            Ok(v) => Some(v),
            Err(Error::Undefined(_)) => None,
            Err(e) => return Err(e),
        });
    }
    let mut values: Vec<f64> = per_coordinate.iter().flatten().copied().collect();
    if values.is_empty() {
        return Err(Error::Undefined("every coordinate is constant".into()));
    }
    values.sort_by(f64::total_cmp);
    let q10 = quantile_sorted(&values, 0.1);
    Ok(EssReport {
        n_samples: n,
        q10,
        q50: quantile_sorted(&values, 0.5),
        q90: quantile_sorted(&values, 0.9),
        mv_ess: mv_ess(draws).ok(),
        wall_seconds,
        tn_ess: q10 / wall_seconds,
        per_coordinate,
    })
}

/// ESS summary of a chain on knot values when the target has a lift, on `eta` otherwise.
pub fn chain_ess_report<T: Real>(chain: &SampleChain<T>, target: &TruncatedGaussian<T>) -> Result<EssReport> {
    let draws = chain.xi_draws(target).unwrap_or_else(|| chain.draws.clone());
    ess_report(&draws.map(|v| v.as_f64()), chain.wall_seconds)
}

fn check_pair(z: &[f64], zhat: &[f64]) -> Result<()> {
    if z.len() != zhat.len() {
        return Err(Error::DimensionMismatch {
            what: "predictions",
            expected: z.len(),
            got: zhat.len(),
        });
    }
    if z.iter().chain(zhat).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite test or predicted values".into()));
    }
    Ok(())
}

/// `Q^2 = 1 - sum (zhat - z)^2 / sum (zbar - z)^2`.
pub fn q2(z: &[f64], zhat: &[f64]) -> Result<f64> {
    check_pair(z, zhat)?;
    if z.len() < 2 {
        return Err(Error::Undefined("Q2 needs at least two test points".into()));
    }
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    let den: f64 = z.iter().map(|v| (v - mean).powi(2)).sum();
    if den == 0.0 {
        return Err(Error::Undefined("test values are all equal".into()));
    }
    let num: f64 = z.iter().zip(zhat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(1.0 - num / den)
}

/// `PVA = |log mean((z - zhat)^2 / var)|`; `+inf` when every residual is zero.
pub fn pva(z: &[f64], zhat: &[f64], var: &[f64]) -> Result<f64> {
    check_pair(z, zhat)?;
    if var.len() != z.len() {
        return Err(Error::DimensionMismatch {
            what: "predictive variances",
            expected: z.len(),
            got: var.len(),
        });
    }
    if z.is_empty() {
        return Err(Error::Undefined("PVA needs at least one test point".into()));
    }
    if var.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("predictive variances must be positive".into()));
    }
    let ratio: f64 = z
        .iter()
        .zip(zhat)
        .zip(var)
        .map(|((a, b), v)| (a - b).powi(2) / v)
        .sum::<f64>()
        / z.len() as f64;
    Ok(if ratio == 0.0 { f64::INFINITY } else { ratio.ln().abs() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub q2: f64,
    pub pva: f64,
    pub residuals: Vec<f64>,
    pub variances: Vec<f64>,
}

pub fn prediction_report(z: &[f64], zhat: &[f64], var: &[f64]) -> Result<PredictionReport> {
    Ok(PredictionReport {
        q2: q2(z, zhat)?,
        pva: pva(z, zhat, var)?,
        residuals: z.iter().zip(zhat).map(|(a, b)| a - b).collect(),
        variances: var.to_vec(),
    })
}
