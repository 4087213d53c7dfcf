//! Gaussian box probabilities `P(lower <= X <= upper)`, `X ~ N(mean, cov)`.
//!
//! Sequential conditional importance sampling (GHK) on a pivoted Cholesky
//! factor, with the variable ordering chosen greedily so that the tightest
//! conditional interval comes first. Directions with no conditional variance
//! are kept as indicator factors, so singular covariances are allowed.

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{check_len, Error, Result};
use crate::scalar::Real;

pub const DEFAULT_ORTHANT_DRAWS: usize = 10_000;
/// Conditional variances below this fraction of the largest variance are zero.
const DEGENERATE_VARIANCE: f64 = 1e-10;
/// Slack allowed on deterministic rows.
const INDICATOR_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrthantMethod {
    /// All rows vacuous: exact.
    Exact,
    Ghk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthantEstimate {
    pub log_prob: f64,
    /// Standard error of the probability estimate (not of its log).
    pub std_error: f64,
    pub n_draws: usize,
    pub method: OrthantMethod,
}

impl OrthantEstimate {
    pub fn prob(&self) -> f64 {
        self.log_prob.exp()
    }

    /// Delta-method standard error of `log_prob`.
    pub fn log_std_error(&self) -> f64 {
        if self.log_prob == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            self.std_error / self.prob()
        }
    }
}

fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

fn density(x: f64) -> f64 {
    if x.is_infinite() {
        0.0
    } else {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }
}

/// `log(Phi(b) - Phi(a))` and the quantile map `u -> Phi^{-1}(Phi(a) + u (Phi(b) - Phi(a)))`,
/// computed on the upper tail when `a > 0` to keep precision.
struct Interval {
    flip: bool,
    lo: f64,
    width: f64,
}

impl Interval {
    fn new(a: f64, b: f64) -> Self {
        if a > 0.0 {
            // Survival function is decreasing: Q(b) <= Q(a).
            let (qa, qb) = (0.5 * erfc(a / SQRT_2), 0.5 * erfc(b / SQRT_2));
            Self { flip: true, lo: qb, width: (qa - qb).max(0.0) }
        } else {
            let (pa, pb) = (phi(a), phi(b));
            Self { flip: false, lo: pa, width: (pb - pa).max(0.0) }
        }
    }

    fn quantile(&self, u: f64, a: f64, b: f64) -> f64 {
        let p = (self.lo + u * self.width).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
        let x = if self.flip {
            SQRT_2 * erfc_inv(2.0 * p)
        } else {
            -SQRT_2 * erfc_inv(2.0 * p)
        };
        if x.is_nan() {
            a.max(b.min(0.0))
        } else {
            x.clamp(a, b)
        }
    }
}

/// Reordered lower-triangular factor: `rows[k]` holds original row `order[k]`.
struct Factor {
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// `l[k][j]` for `j < rank` (column `k` is the diagonal for `k < rank`).
    l: Vec<Vec<f64>>,
    rank: usize,
}

fn pivoted_factor(cov: &DMatrix<f64>, a: &[f64], b: &[f64]) -> Factor {
    let d = a.len();
    let max_var = (0..d).fold(0.0f64, |m, i| m.max(cov[(i, i)]));
    let tol = DEGENERATE_VARIANCE * max_var.max(f64::MIN_POSITIVE);
    let mut order: Vec<usize> = (0..d).collect();
    let mut l = vec![vec![0.0; d]; d];
    let mut resid: Vec<f64> = (0..d).map(|i| cov[(i, i)]).collect();
    let mut expect: Vec<f64> = Vec::with_capacity(d);
    let mut rank = 0;
    for k in 0..d {
        // Tightest conditional interval among the remaining rows.
        let mut best: Option<(usize, f64)> = None;
        for p in k..d {
            let i = order[p];
            if resid[i] <= tol {
                continue;
            }
            let s = resid[i].sqrt();
            let shift: f64 = (0..k).map(|j| l[i][j] * expect[j]).sum();
            let width = Interval::new((a[i] - shift) / s, (b[i] - shift) / s).width;
            if best.is_none_or(|(_, w)| width < w) {
                best = Some((p, width));
            }
        }
        let Some((p, _)) = best else { break };
        order.swap(k, p);
        let i = order[k];
        let s = resid[i].sqrt();
        l[i][k] = s;
        for &r in &order[k + 1..] {
            let dot: f64 = (0..k).map(|j| l[r][j] * l[i][j]).sum();
            l[r][k] = (cov[(r, i)] - dot) / s;
            resid[r] -= l[r][k] * l[r][k];
        }
        let shift: f64 = (0..k).map(|j| l[i][j] * expect[j]).sum();
        let (lo, hi) = ((a[i] - shift) / s, (b[i] - shift) / s);
        let width = Interval::new(lo, hi).width;
        let mean = if width > 0.0 {
            (density(lo) - density(hi)) / width
        } else {
            lo.max(hi.min(0.0))
        };
        expect.push(mean.clamp(lo, hi));
        rank += 1;
    }
    Factor {
        lower: order.iter().map(|&i| a[i]).collect(),
        upper: order.iter().map(|&i| b[i]).collect(),
        l: order.iter().map(|&i| l[i][..rank].to_vec()).collect(),
        rank,
    }
}

/// Monte Carlo estimate of `log P(lower <= X <= upper)` for `X ~ N(mean, cov)`.
/// Deterministic given `seed`; the same seed yields common random numbers
/// across calls of the same dimension.
pub fn log_orthant_prob<T: Real>(
    mean: &DVector<T>,
    cov: &DMatrix<T>,
    lower: &DVector<T>,
    upper: &DVector<T>,
    n_draws: usize,
    seed: u64,
) -> Result<OrthantEstimate> {
    let d = mean.len();
    check_len("covariance rows", d, cov.nrows())?;
    check_len("covariance columns", d, cov.ncols())?;
    check_len("lower bounds", d, lower.len())?;
    check_len("upper bounds", d, upper.len())?;
    if n_draws == 0 {
        return Err(Error::InvalidArgument("n_draws must be at least 1".into()));
    }
    let keep: Vec<usize> = (0..d)
        .filter(|&i| lower[i] > T::neg_inf() || upper[i] < T::inf())
        .collect();
    for &i in &keep {
        if !(lower[i] <= upper[i]) {
            return Err(Error::InvalidArgument(format!(
                "row {i}: lower bound exceeds upper bound"
            )));
        }
    }
    if keep.is_empty() {
        return Ok(OrthantEstimate {
            log_prob: 0.0,
            std_error: 0.0,
            n_draws: 0,
            method: OrthantMethod::Exact,
        });
    }
    let a: Vec<f64> = keep.iter().map(|&i| (lower[i] - mean[i]).as_f64()).collect();
    let b: Vec<f64> = keep.iter().map(|&i| (upper[i] - mean[i]).as_f64()).collect();
    let sub = DMatrix::from_fn(keep.len(), keep.len(), |i, j| {
        0.5 * (cov[(keep[i], keep[j])] + cov[(keep[j], keep[i])]).as_f64()
    });
    if sub.iter().any(|v| !v.is_finite()) || a.iter().chain(&b).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("non-finite orthant inputs".into()));
    }
    let f = pivoted_factor(&sub, &a, &b);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_w = Vec::with_capacity(n_draws);
    let mut w = vec![0.0; f.rank];
    for _ in 0..n_draws {
        let mut lw = 0.0;
        for k in 0..f.rank {
            let shift: f64 = (0..k).map(|j| f.l[k][j] * w[j]).sum();
            let s = f.l[k][k];
            let (lo, hi) = ((f.lower[k] - shift) / s, (f.upper[k] - shift) / s);
            let iv = Interval::new(lo, hi);
            let u: f64 = rng.random();
            if iv.width <= 0.0 {
                lw = f64::NEG_INFINITY;
                break;
            }
            lw += iv.width.ln();
            w[k] = iv.quantile(u, lo, hi);
        }
        if lw > f64::NEG_INFINITY {
            for k in f.rank..f.lower.len() {
                let v: f64 = (0..f.rank).map(|j| f.l[k][j] * w[j]).sum();
                let tol = INDICATOR_TOL * (1.0 + v.abs());
                if v < f.lower[k] - tol || v > f.upper[k] + tol {
                    lw = f64::NEG_INFINITY;
                    break;
                }
            }
        }
        log_w.push(lw);
    }
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(OrthantEstimate {
            log_prob: f64::NEG_INFINITY,
            std_error: f64::INFINITY,
            n_draws,
            method: OrthantMethod::Ghk,
        });
    }
    let n = n_draws as f64;
    let scaled: Vec<f64> = log_w.iter().map(|&x| (x - max).exp()).collect();
    let mean_scaled = scaled.iter().sum::<f64>() / n;
    let var = if n_draws > 1 {
        scaled.iter().map(|&x| (x - mean_scaled).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let log_prob = (max + mean_scaled.ln()).min(0.0);
    Ok(OrthantEstimate {
        log_prob,
        std_error: max.exp() * (var / n).sqrt(),
        n_draws,
        method: OrthantMethod::Ghk,
    })
}
