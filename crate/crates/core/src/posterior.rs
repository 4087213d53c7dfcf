//! Conditioning on the interpolation equalities and the truncated target on
//! `eta = Lambda xi`.
//!
//! The conditional covariance is singular (the data pin some directions), and
//! `Lambda Sigma Lambda^T` is singular whenever there are more rows than knots.
//! Every target therefore carries a whitened factorization `eta = mean + F z`,
//! `z ~ N(0, I_r)`, with `r` the numerical rank. Samplers and the MAP solver
//! work on `z`; conditional targets also keep the exact map `z -> xi`.

use nalgebra::{DMatrix, DVector};

use crate::constraints::LinearConstraintSystem;
use crate::error::{check_len, Error, Result};
use crate::kernels::{cholesky_with_escalation, GramMatrix};
use crate::scalar::Real;

/// Eigenvalues below this fraction of the largest one are treated as zero.
pub const EIGEN_CUTOFF: f64 = 1e-10;
/// Rows of the whitened factor below this fraction of the largest row norm are
/// treated as deterministic.
pub const FIXED_ROW_CUTOFF: f64 = 1e-7;

/// Gaussian law of the knot values given `Phi xi = y`.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian<T: Real> {
    mean: DVector<T>,
    cov: DMatrix<T>,
    extra_jitter: T,
    data_quad: T,
}

impl<T: Real> ConditionalGaussian<T> {
    pub fn new(mean: DVector<T>, cov: DMatrix<T>) -> Result<Self> {
        check_len("covariance rows", mean.len(), cov.nrows())?;
        check_len("covariance columns", mean.len(), cov.ncols())?;
        Ok(Self {
            mean,
            cov: symmetrize(cov),
            extra_jitter: T::zero(),
            data_quad: T::zero(),
        })
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<T> {
        &self.cov
    }

    /// Jitter added to `Phi Gamma Phi^T` beyond the prior's own (zero unless
    /// the plain factorization failed).
    pub fn extra_jitter(&self) -> T {
        self.extra_jitter
    }

    /// `y^T (Phi Gamma Phi^T)^{-1} y`, the prior quadratic form of the mean.
    pub fn data_quad(&self) -> T {
        self.data_quad
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Conditions `xi ~ N(0, Gamma)` on `Phi xi = y`.
///
/// `jitter` is the first diagonal increment tried if `Phi Gamma Phi^T` is not
/// numerically positive definite; it doubles on each retry.
pub fn condition_on_data<T: Real>(
    prior: &GramMatrix<T>,
    interp: &DMatrix<T>,
    y: &DVector<T>,
    jitter: T,
) -> Result<ConditionalGaussian<T>> {
    let gamma = prior.values();
    let m = gamma.nrows();
    let n = interp.nrows();
    check_len("basis matrix columns", m, interp.ncols())?;
    check_len("observations", n, y.len())?;
    if n > m {
        return Err(Error::InvalidArgument(format!(
            "{n} observations exceed the {m} knot values"
        )));
    }
    if y.iter().any(|v| !v.finite()) {
        return Err(Error::InvalidArgument("observations must be finite".into()));
    }
    if n == 0 {
        return ConditionalGaussian::new(DVector::zeros(m), gamma.clone());
    }
    let gp = gamma * interp.transpose(); // M x n
    let k = symmetrize(interp * &gp);
    let base = if jitter > T::zero() {
        jitter
    } else {
        let scale = (0..n).fold(T::zero(), |s, i| s + k[(i, i)]) / T::from_count(n);
        T::lit(1e-10) * scale.max(T::eps())
    };
    let (chol, extra) = cholesky_with_escalation(&k, base)?;
    let alpha = chol.solve(y);
    let data_quad = y.dot(&alpha);
    let mean = &gp * alpha;
    // Sigma = Gamma - W^T W with W = L^{-1} (Gamma Phi^T)^T.
    let w = chol
        .l()
        .solve_lower_triangular(&gp.transpose())
        .ok_or_else(|| Error::IllConditioned("singular Cholesky factor".into()))?;
    let cov = symmetrize(gamma - w.transpose() * w);
    Ok(ConditionalGaussian {
        mean,
        cov,
        extra_jitter: extra,
        data_quad,
    })
}

/// Exact map from whitened coordinates to knot values: `xi = center + basis z`.
#[derive(Debug, Clone)]
pub struct Lift<T: Real> {
    pub center: DVector<T>,
    pub basis: DMatrix<T>,
}

impl<T: Real> Lift<T> {
    pub fn apply(&self, z: &DVector<T>) -> DVector<T> {
        &self.center + &self.basis * z
    }
}

/// `N(mean, cov)` restricted to `lower <= eta <= upper`, with its whitened
/// factorization.
#[derive(Debug, Clone)]
pub struct TruncatedGaussian<T: Real> {
    mean: DVector<T>,
    cov: DMatrix<T>,
    lower: DVector<T>,
    upper: DVector<T>,
    factor: DMatrix<T>,
    walls: Vec<usize>,
    fixed: Vec<usize>,
    lift: Option<Lift<T>>,
}

impl<T: Real> TruncatedGaussian<T> {
    /// Target with covariance factored by its own eigendecomposition.
    pub fn new(
        mean: DVector<T>,
        cov: DMatrix<T>,
        lower: DVector<T>,
        upper: DVector<T>,
    ) -> Result<Self> {
        let q = mean.len();
        check_len("covariance rows", q, cov.nrows())?;
        check_len("covariance columns", q, cov.ncols())?;
        let cov = symmetrize(cov);
        let factor = whitening_factor(&cov);
        Self::assemble(mean, cov, lower, upper, factor, None)
    }

    /// Target on `eta = Lambda xi` induced by a conditional Gaussian.
    pub fn from_conditional(
        cond: &ConditionalGaussian<T>,
        sys: &LinearConstraintSystem<T>,
    ) -> Result<Self> {
        check_len("constraint system width", cond.dim(), sys.dim())?;
        let lambda = sys.matrix();
        let basis = whitening_factor(cond.cov());
        let factor = lambda * &basis;
        let mean = lambda * cond.mean();
        let cov = symmetrize(lambda * cond.cov() * lambda.transpose());
        let lift = Lift {
            center: cond.mean().clone(),
            basis,
        };
        Self::assemble(
            mean,
            cov,
            sys.lower().clone(),
            sys.upper().clone(),
            factor,
            Some(lift),
        )
    }

    fn assemble(
        mean: DVector<T>,
        cov: DMatrix<T>,
        lower: DVector<T>,
        upper: DVector<T>,
        mut factor: DMatrix<T>,
        lift: Option<Lift<T>>,
    ) -> Result<Self> {
        let q = mean.len();
        check_len("lower bounds", q, lower.len())?;
        check_len("upper bounds", q, upper.len())?;
        for k in 0..q {
            if !(lower[k] <= upper[k]) {
                return Err(Error::InvalidArgument(format!(
                    "row {k}: lower bound {} exceeds upper bound {}",
                    lower[k], upper[k]
                )));
            }
        }
        if mean.iter().any(|v| !v.finite()) || cov.iter().any(|v| !v.finite()) {
            return Err(Error::InvalidArgument("target moments must be finite".into()));
        }
        let norms: Vec<T> = (0..q).map(|k| factor.row(k).norm()).collect();
        let max_norm = norms.iter().fold(T::zero(), |a, &b| a.max(b));
        let cutoff = T::lit(FIXED_ROW_CUTOFF) * max_norm;
        let mut walls = Vec::new();
        let mut fixed = Vec::new();
        for k in 0..q {
            if norms[k] <= cutoff {
                factor.row_mut(k).fill(T::zero());
                fixed.push(k);
                let tol = T::lit(1e-9) * (T::one() + mean[k].abs());
                if mean[k] < lower[k] - tol || mean[k] > upper[k] + tol {
                    return Err(Error::Infeasible {
                        row: k,
                        active: Vec::new(),
                    });
                }
            } else if lower[k].finite() || upper[k].finite() {
                walls.push(k);
            }
        }
        Ok(Self {
            mean,
            cov,
            lower,
            upper,
            factor,
            walls,
            fixed,
            lift,
        })
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<T> {
        &self.cov
    }

    pub fn lower(&self) -> &DVector<T> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<T> {
        &self.upper
    }

    /// Whitened factor `F` (q x r), `cov = F F^T` up to the eigenvalue cutoff.
    pub fn factor(&self) -> &DMatrix<T> {
        &self.factor
    }

    /// Rows with a finite bound and a non-degenerate factor row.
    pub fn walls(&self) -> &[usize] {
        &self.walls
    }

    /// Rows whose value does not vary under the target.
    pub fn fixed_rows(&self) -> &[usize] {
        &self.fixed
    }

    pub fn lift(&self) -> Option<&Lift<T>> {
        self.lift.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Dimension `r` of the whitened coordinates.
    pub fn latent_dim(&self) -> usize {
        self.factor.ncols()
    }

    pub fn eta(&self, z: &DVector<T>) -> DVector<T> {
        &self.mean + &self.factor * z
    }

    /// Knot values for latent coordinates, when the target came from a conditional.
    pub fn xi(&self, z: &DVector<T>) -> Option<DVector<T>> {
        self.lift.as_ref().map(|l| l.apply(z))
    }

    /// Largest bound violation of `eta` over all rows.
    pub fn max_violation(&self, eta: &DVector<T>) -> T {
        (0..self.dim()).fold(T::neg_inf(), |w, k| {
            w.max(self.lower[k] - eta[k]).max(eta[k] - self.upper[k])
        })
    }

    pub fn is_feasible(&self, eta: &DVector<T>, tol: T) -> bool {
        eta.len() == self.dim() && self.max_violation(eta) <= tol
    }
}

/// Builds the truncated target `TN(Lambda mu, Lambda Sigma Lambda^T, l, u)`.
pub fn truncated_target<T: Real>(
    cond: &ConditionalGaussian<T>,
    sys: &LinearConstraintSystem<T>,
) -> Result<TruncatedGaussian<T>> {
    TruncatedGaussian::from_conditional(cond, sys)
}

/// Least-squares solution of `Lambda xi = eta` and its residual norm.
pub fn back_solve<T: Real>(
    sys: &LinearConstraintSystem<T>,
    eta: &DVector<T>,
) -> Result<(DVector<T>, T)> {
    BackSolver::new(sys)?.solve(eta)
}

/// Reusable QR factorization of `Lambda` for repeated back-solves.
#[derive(Debug, Clone)]
pub struct BackSolver<T: Real> {
    lambda: DMatrix<T>,
    q: DMatrix<T>,
    r: DMatrix<T>,
}

impl<T: Real> BackSolver<T> {
    pub fn new(sys: &LinearConstraintSystem<T>) -> Result<Self> {
        let lambda = sys.matrix().clone();
        let qr = lambda.clone().qr();
        Ok(Self {
            q: qr.q(),
            r: qr.r(),
            lambda,
        })
    }

    pub fn solve(&self, eta: &DVector<T>) -> Result<(DVector<T>, T)> {
        check_len("eta", self.lambda.nrows(), eta.len())?;
        let rhs = self.q.transpose() * eta;
        let xi = self
            .r
            .solve_upper_triangular(&rhs)
            .ok_or_else(|| Error::InvalidSystem("constraint matrix is rank deficient".into()))?;
        let residual = (&self.lambda * &xi - eta).norm();
        let scale = eta.norm().max(T::one());
        if residual > T::lit(1e-6) * scale {
            return Err(Error::InconsistentEta {
                residual: residual.as_f64(),
            });
        }
        Ok((xi, residual))
    }
}

pub(crate) fn symmetrize<T: Real>(m: DMatrix<T>) -> DMatrix<T> {
    let half = T::lit(0.5);
    (&m + m.transpose()) * half
}

/// `V sqrt(D)` over the eigenpairs above the relative cutoff, largest first.
pub(crate) fn whitening_factor<T: Real>(cov: &DMatrix<T>) -> DMatrix<T> {
    let q = cov.nrows();
    if q == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = cov.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(T::zero(), |a, &b| a.max(b));
    let rel = T::lit(EIGEN_CUTOFF).max(T::lit(10.0) * T::eps());
    let cutoff = rel * max;
    let mut keep: Vec<usize> = (0..q)
        .filter(|&i| max > T::zero() && eig.eigenvalues[i] > cutoff)
        .collect();
    keep.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut f = DMatrix::zeros(q, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        // Fix the sign so the largest entry is positive; keeps output stable.
        let col = eig.eigenvectors.column(i);
        let pivot = col.iter().fold(T::zero(), |p, &v| if v.abs() > p.abs() { v } else { p });
        let sign = if pivot < T::zero() { -T::one() } else { T::one() };
        for row in 0..q {
            f[(row, c)] = col[row] * s * sign;
        }
    }
    f
}
