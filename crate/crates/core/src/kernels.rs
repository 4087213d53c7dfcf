//! Stationary covariance families and Gram matrix assembly.
//!
//! Two-dimensional kernels are anisotropic tensor products of the 1D
//! correlation functions, scaled once by the variance.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::scalar::Real;

/// Relative jitter added to Gram diagonals by default (times the variance).
pub const DEFAULT_RELATIVE_JITTER: f64 = 1e-10;
/// Number of jitter doublings attempted before a factorization is declared failed.
pub const JITTER_ATTEMPTS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// Squared exponential, `exp(-r^2 / 2)`.
    #[serde(alias = "se")]
    SquaredExponential,
    /// Matérn with smoothness 5/2.
    #[serde(alias = "matern")]
    Matern52,
}

impl KernelFamily {
    /// Correlation at scaled distance `r = |x - x'| / theta`.
    #[inline]
    pub fn correlation<T: Real>(self, r: T) -> T {
        match self {
            KernelFamily::SquaredExponential => (-(r * r) / T::lit(2.0)).exp(),
            KernelFamily::Matern52 => {
                let s5 = T::lit(5.0).sqrt() * r;
                (T::one() + s5 + T::lit(5.0 / 3.0) * r * r) * (-s5).exp()
            }
        }
    }
}

/// Covariance parameters: family, variance `sigma^2` and one lengthscale per input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams<T> {
    family: KernelFamily,
    variance: T,
    lengthscales: Vec<T>,
}

impl<T: Real> KernelParams<T> {
    pub fn new(family: KernelFamily, variance: T, lengthscales: Vec<T>) -> Result<Self> {
        if !(variance > T::zero()) || !variance.finite() {
            return Err(Error::InvalidArgument(format!(
                "kernel variance must be positive and finite, got {variance}"
            )));
        }
        if lengthscales.is_empty() || lengthscales.len() > 2 {
            return Err(Error::InvalidArgument(format!(
                "expected 1 or 2 lengthscales, got {}",
                lengthscales.len()
            )));
        }
        if let Some(bad) = lengthscales.iter().find(|&&t| !(t > T::zero()) || !t.finite()) {
            return Err(Error::InvalidArgument(format!(
                "lengthscales must be positive and finite, got {bad}"
            )));
        }
        Ok(Self {
            family,
            variance,
            lengthscales,
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn variance(&self) -> T {
        self.variance
    }

    pub fn lengthscales(&self) -> &[T] {
        &self.lengthscales
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Jitter used for Gram matrices built from these parameters.
    pub fn default_jitter(&self) -> T {
        T::lit(DEFAULT_RELATIVE_JITTER) * self.variance
    }

    /// Evaluates `k(x, x')`.
    pub fn eval(&self, x: &[T], y: &[T]) -> Result<T> {
        check_len("point dimension", self.dim(), x.len())?;
        check_len("point dimension", self.dim(), y.len())?;
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[T], y: &[T]) -> T {
        let mut k = self.variance;
        for ((&a, &b), &theta) in x.iter().zip(y).zip(&self.lengthscales) {
            k *= self.family.correlation((a - b).abs() / theta);
        }
        k
    }

    /// Gram matrix over `points` with `jitter` added to the diagonal.
    pub fn gram<P: AsRef<[T]>>(&self, points: &[P], jitter: T) -> Result<GramMatrix<T>> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("gram: empty point list".into()));
        }
        if jitter < T::zero() {
            return Err(Error::InvalidArgument("gram: negative jitter".into()));
        }
        for p in points {
            check_len("point dimension", self.dim(), p.as_ref().len())?;
        }
        Ok(GramMatrix::from_symmetric_fn(points.len(), jitter, |i, j| {
            self.eval_unchecked(points[i].as_ref(), points[j].as_ref())
        }))
    }

    /// Cross-covariance matrix `k(a_i, b_j)`.
    pub fn cross<P: AsRef<[T]>, Q: AsRef<[T]>>(&self, a: &[P], b: &[Q]) -> Result<DMatrix<T>> {
        for p in a.iter().map(AsRef::as_ref).chain(b.iter().map(AsRef::as_ref)) {
            check_len("point dimension", self.dim(), p.len())?;
        }
        Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| {
            self.eval_unchecked(a[i].as_ref(), b[j].as_ref())
        }))
    }
}

/// Symmetric covariance matrix with the jitter already added to its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix<T: Real> {
    values: DMatrix<T>,
    jitter: T,
}

impl<T: Real> GramMatrix<T> {
    fn from_symmetric_fn(n: usize, jitter: T, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut values = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = f(i, j);
                values[(i, j)] = v;
                values[(j, i)] = v;
            }
            values[(j, j)] += jitter;
        }
        Self { values, jitter }
    }

    /// Wraps an explicit matrix. The matrix is symmetrized.
    pub fn from_matrix(values: DMatrix<T>, jitter: T) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::InvalidArgument("gram matrix must be square".into()));
        }
        let mut values = (&values + values.transpose()) * T::lit(0.5);
        for i in 0..values.nrows() {
            values[(i, i)] += jitter;
        }
        Ok(Self { values, jitter })
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Cholesky factor, doubling an extra diagonal jitter on failure.
    ///
    /// Returns the factor and the extra jitter that was needed (zero if none).
    pub fn cholesky(&self) -> Result<(Cholesky<T, Dyn>, T)> {
        let scale = diag_scale(&self.values);
        let base = self.jitter.max(T::lit(DEFAULT_RELATIVE_JITTER) * scale);
        cholesky_with_escalation(&self.values, base)
    }
}

fn diag_scale<T: Real>(m: &DMatrix<T>) -> T {
    let mut s = T::zero();
    for i in 0..m.nrows() {
        s = s.max(m[(i, i)].abs());
    }
    if s > T::zero() {
        s
    } else {
        T::one()
    }
}

/// Factorizes `m`, retrying with `base * 2^k` added to the diagonal
/// (`k = 0..JITTER_ATTEMPTS`) when the plain factorization fails.
pub(crate) fn cholesky_with_escalation<T: Real>(
    m: &DMatrix<T>,
    base: T,
) -> Result<(Cholesky<T, Dyn>, T)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, T::zero()));
    }
    let mut extra = base;
    for _ in 0..JITTER_ATTEMPTS {
        let mut a = m.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += extra;
        }
        if let Some(c) = Cholesky::new(a) {
            return Ok((c, extra));
        }
        extra *= T::lit(2.0);
    }
    Err(Error::IllConditioned(format!(
        "Cholesky failed after {JITTER_ATTEMPTS} jitter doublings (last jitter {extra:e})"
    )))
}
