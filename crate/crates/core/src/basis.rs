//! Knot grids and piecewise-linear (hat) bases in one and two dimensions.
//!
//! In 2D the coefficient vector is ordered with the first axis running
//! fastest: flat index `j2 * m1 + j1` holds the value at `(t1[j1], t2[j2])`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::scalar::Real;

/// Default number of knots for 1D models.
pub const DEFAULT_KNOTS_1D: usize = 100;
/// Default knots per axis for 2D models.
pub const DEFAULT_KNOTS_2D: (usize, usize) = (30, 30);

/// Interpolation matrix `Phi` with `Phi[i, j] = phi_j(x_i)`.
pub type BasisMatrix<T> = DMatrix<T>;

/// Strictly increasing knots on `[0, 1]` for each input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotGrid<T> {
    axes: Vec<Vec<T>>,
}

impl<T: Real> KnotGrid<T> {
    /// Validates explicit knot vectors (one per dimension).
    pub fn new(axes: Vec<Vec<T>>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidArgument(format!(
                "knot grids support 1 or 2 dimensions, got {}",
                axes.len()
            )));
        }
        for (k, t) in axes.iter().enumerate() {
            if t.len() < 2 {
                return Err(Error::InvalidArgument(format!("axis {k}: need at least 2 knots")));
            }
            if t[0] != T::zero() || t[t.len() - 1] != T::one() {
                return Err(Error::InvalidArgument(format!(
                    "axis {k}: knots must start at 0 and end at 1"
                )));
            }
            if t.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::InvalidArgument(format!(
                    "axis {k}: knots must be strictly increasing"
                )));
            }
        }
        Ok(Self { axes })
    }

    /// `m` equally spaced knots `t_j = j / (m - 1)`.
    pub fn uniform(m: usize) -> Result<Self> {
        Self::new(vec![uniform_axis(m)?])
    }

    /// Tensor grid of `m1 x m2` equally spaced knots.
    pub fn uniform_2d(m1: usize, m2: usize) -> Result<Self> {
        Self::new(vec![uniform_axis(m1)?, uniform_axis(m2)?])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, k: usize) -> &[T] {
        &self.axes[k]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    /// Total number of basis functions `M`.
    pub fn size(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    /// Flat coefficient index of the multi-index `(j1[, j2])`.
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        match idx {
            [j] => *j,
            [j1, j2] => j2 * self.axes[0].len() + j1,
            _ => panic!("flat_index: expected 1 or 2 indices"),
        }
    }

    /// Knot locations in coefficient order.
    pub fn knot_points(&self) -> Vec<Vec<T>> {
        match self.axes.as_slice() {
            [t] => t.iter().map(|&x| vec![x]).collect(),
            [t1, t2] => t2
                .iter()
                .flat_map(|&b| t1.iter().map(move |&a| vec![a, b]))
                .collect(),
            _ => unreachable!(),
        }
    }

    /// 1D hat function `phi_j` on axis `axis`, with the half-width taken from
    /// the adjacent knot spacing on each side.
    pub fn axis_hat(&self, axis: usize, j: usize, x: T) -> Result<T> {
        let t = &self.axes[axis];
        if j >= t.len() {
            return Err(Error::InvalidArgument(format!(
                "knot index {j} out of range (axis {axis} has {} knots)",
                t.len()
            )));
        }
        if !x.finite() {
            return Err(Error::InvalidArgument("hat evaluation at a non-finite point".into()));
        }
        let left = if j > 0 { t[j] - t[j - 1] } else { t[1] - t[0] };
        let right = if j + 1 < t.len() { t[j + 1] - t[j] } else { left };
        let width = if x < t[j] { left } else { right };
        let r = (x - t[j]).abs() / width;
        Ok(if r <= T::one() { T::one() - r } else { T::zero() })
    }

    /// Basis function with flat index `j` evaluated at `x` (tensorized in 2D).
    pub fn hat_eval(&self, j: usize, x: &[T]) -> Result<T> {
        check_len("point dimension", self.dim(), x.len())?;
        if j >= self.size() {
            return Err(Error::InvalidArgument(format!(
                "basis index {j} out of range ({} functions)",
                self.size()
            )));
        }
        let m1 = self.axes[0].len();
        match x {
            [a] => self.axis_hat(0, j, *a),
            [a, b] => Ok(self.axis_hat(0, j % m1, *a)? * self.axis_hat(1, j / m1, *b)?),
            _ => unreachable!(),
        }
    }

    /// The (at most two) nonzero hat weights on one axis for `x` in `[0, 1]`.
    fn axis_weights(&self, axis: usize, x: T) -> Result<[(usize, T); 2]> {
        let t = &self.axes[axis];
        if !(x >= T::zero() && x <= T::one()) {
            return Err(Error::InvalidArgument(format!(
                "point coordinate {x} outside [0, 1] on axis {axis}; rescale inputs first"
            )));
        }
        // Last knot index with t[i] <= x, capped so that i + 1 is valid.
        let i = t.partition_point(|&k| k <= x).saturating_sub(1).min(t.len() - 2);
        let w = (x - t[i]) / (t[i + 1] - t[i]);
        Ok([(i, T::one() - w), (i + 1, w)])
    }

    /// Sparse row of `Phi` for one point, as `(flat index, weight)` pairs.
    pub fn basis_row(&self, x: &[T]) -> Result<Vec<(usize, T)>> {
        check_len("point dimension", self.dim(), x.len())?;
        let w1 = self.axis_weights(0, x[0])?;
        if self.dim() == 1 {
            return Ok(w1.to_vec());
        }
        let w2 = self.axis_weights(1, x[1])?;
        let m1 = self.axes[0].len();
        let mut row = Vec::with_capacity(4);
        for &(j2, b) in &w2 {
            for &(j1, a) in &w1 {
                row.push((j2 * m1 + j1, a * b));
            }
        }
        Ok(row)
    }

    /// Interpolation matrix for a design inside `[0, 1]^d`.
    pub fn interp_matrix<P: AsRef<[T]>>(&self, design: &[P]) -> Result<BasisMatrix<T>> {
        let mut phi = DMatrix::zeros(design.len(), self.size());
        for (i, p) in design.iter().enumerate() {
            for (j, w) in self.basis_row(p.as_ref())? {
                phi[(i, j)] += w;
            }
        }
        Ok(phi)
    }

    /// Evaluates the piecewise-(bi)linear function with knot values `xi` at `x`.
    pub fn eval(&self, xi: &DVector<T>, x: &[T]) -> Result<T> {
        check_len("coefficient vector", self.size(), xi.len())?;
        Ok(self
            .basis_row(x)?
            .into_iter()
            .fold(T::zero(), |acc, (j, w)| acc + w * xi[j]))
    }
}

fn uniform_axis<T: Real>(m: usize) -> Result<Vec<T>> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 knots, got {m}")));
    }
    let step = T::one() / T::from_count(m - 1);
    let mut t: Vec<T> = (0..m).map(|j| T::from_count(j) * step).collect();
    t[m - 1] = T::one();
    Ok(t)
}

/// Affine map between an input box and the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitScaling<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Real> UnitScaling<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        check_len("scaling bounds", lower.len(), upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| !(u > l) || !l.finite() || !u.finite()) {
            return Err(Error::InvalidArgument(
                "input domain bounds must be finite with lower < upper".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            lower: vec![T::zero(); dim],
            upper: vec![T::one(); dim],
        }
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Maps a point to the unit cube. Round-off just outside `[0, 1]` is clamped.
    pub fn to_unit(&self, x: &[T]) -> Result<Vec<T>> {
        check_len("point dimension", self.dim(), x.len())?;
        let slack = T::lit(1e-12);
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| {
                let s = (v - l) / (u - l);
                if s < -slack || s > T::one() + slack || !s.finite() {
                    Err(Error::InvalidArgument(format!(
                        "point coordinate {v} outside the input domain [{l}, {u}]"
                    )))
                } else {
                    Ok(s.max(T::zero()).min(T::one()))
                }
            })
            .collect()
    }

    pub fn from_unit(&self, s: &[T]) -> Vec<T> {
        s.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| l + v * (u - l))
            .collect()
    }
}
