//! Linear inequality systems `l <= Lambda xi <= u` on the knot values.
//!
//! Builders cover boundedness, monotonicity and convexity, their stacking,
//! a reduced bounded-monotone encoding, interval-wise activation and per-axis
//! monotonicity on 2D grids. Infinite bounds are kept as `±inf`.
//! Rows added only to make `Lambda` injective are labelled [`RowKind::Padding`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::KnotGrid;
use crate::error::{check_len, Error, Result};
use crate::scalar::Real;

/// Absolute tolerance used by default in feasibility checks.
pub const DEFAULT_FEASIBILITY_TOL: f64 = 1e-9;
/// Relative singular value threshold for numerical rank.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Bound,
    Monotone,
    Convex,
    Custom,
    Padding,
}

/// Provenance of one constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowLabel {
    pub kind: RowKind,
    /// Interval id for interval-wise constraints.
    pub interval: Option<usize>,
    /// Grid axis for differences taken along one axis of a 2D grid.
    pub axis: Option<usize>,
}

impl RowLabel {
    pub fn of(kind: RowKind) -> Self {
        Self {
            kind,
            interval: None,
            axis: None,
        }
    }
}

/// A shape restriction applied to a contiguous run of knots.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape<T> {
    Bounds { lower: T, upper: T },
    Monotone,
    Convex,
}

/// One interval of an interval-wise constraint specification.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalPiece<T> {
    pub start: T,
    pub end: T,
    pub shapes: Vec<Shape<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraintSystem<T: Real> {
    matrix: DMatrix<T>,
    lower: DVector<T>,
    upper: DVector<T>,
    labels: Vec<RowLabel>,
}

struct RowBuilder<T: Real> {
    m: usize,
    rows: Vec<(Vec<(usize, T)>, T, T, RowLabel)>,
}

impl<T: Real> RowBuilder<T> {
    fn new(m: usize) -> Self {
        Self { m, rows: Vec::new() }
    }

    fn push(&mut self, entries: Vec<(usize, T)>, lower: T, upper: T, label: RowLabel) {
        self.rows.push((entries, lower, upper, label));
    }

    fn finish(self) -> LinearConstraintSystem<T> {
        let q = self.rows.len();
        let mut matrix = DMatrix::zeros(q, self.m);
        let mut lower = DVector::zeros(q);
        let mut upper = DVector::zeros(q);
        let mut labels = Vec::with_capacity(q);
        for (k, (entries, l, u, label)) in self.rows.into_iter().enumerate() {
            for (j, v) in entries {
                matrix[(k, j)] += v;
            }
            lower[k] = l;
            upper[k] = u;
            labels.push(label);
        }
        LinearConstraintSystem {
            matrix,
            lower,
            upper,
            labels,
        }
    }
}

fn check_bounds<T: Real>(lower: T, upper: T) -> Result<()> {
    if lower.partial_cmp(&lower).is_none() || upper.partial_cmp(&upper).is_none() {
        return Err(Error::InvalidArgument("constraint bounds must not be NaN".into()));
    }
    if lower == T::inf() || upper == T::neg_inf() {
        return Err(Error::InvalidArgument(format!(
            "unsatisfiable bounds [{lower}, {upper}]"
        )));
    }
    if lower > upper {
        return Err(Error::InvalidArgument(format!(
            "lower bound {lower} exceeds upper bound {upper}"
        )));
    }
    Ok(())
}

impl<T: Real> LinearConstraintSystem<T> {
    /// Custom system. Rows are labelled [`RowKind::Custom`]; the system must be
    /// of full column rank.
    pub fn custom(matrix: DMatrix<T>, lower: DVector<T>, upper: DVector<T>) -> Result<Self> {
        let labels = vec![RowLabel::of(RowKind::Custom); matrix.nrows()];
        Self::new(matrix, lower, upper, labels)
    }

    /// Validated constructor.
    pub fn new(
        matrix: DMatrix<T>,
        lower: DVector<T>,
        upper: DVector<T>,
        labels: Vec<RowLabel>,
    ) -> Result<Self> {
        let q = matrix.nrows();
        check_len("lower bounds", q, lower.len())?;
        check_len("upper bounds", q, upper.len())?;
        check_len("row labels", q, labels.len())?;
        if matrix.iter().any(|v| !v.finite()) {
            return Err(Error::InvalidArgument("constraint matrix must be finite".into()));
        }
        for k in 0..q {
            check_bounds(lower[k], upper[k])?;
        }
        let sys = Self {
            matrix,
            lower,
            upper,
            labels,
        };
        sys.check_rank()?;
        Ok(sys)
    }

    /// `lower <= xi_j <= upper` for every knot.
    pub fn bounds(m: usize, lower: T, upper: T) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("bounds: empty coefficient vector".into()));
        }
        check_bounds(lower, upper)?;
        let mut b = RowBuilder::new(m);
        for j in 0..m {
            b.push(vec![(j, T::one())], lower, upper, RowLabel::of(RowKind::Bound));
        }
        Ok(b.finish())
    }

    /// Non-decreasing knot values. The first row is a vacuous padding row on `xi_1`.
    pub fn monotonicity(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!(
                "monotonicity needs at least 2 knots, got {m}"
            )));
        }
        let mut b = RowBuilder::new(m);
        b.push(vec![(0, T::one())], T::neg_inf(), T::inf(), RowLabel::of(RowKind::Padding));
        for j in 1..m {
            b.push(
                vec![(j - 1, -T::one()), (j, T::one())],
                T::zero(),
                T::inf(),
                RowLabel::of(RowKind::Monotone),
            );
        }
        Ok(b.finish())
    }

    /// Non-negative second differences. The first two rows are padding rows on `xi_1`, `xi_2`.
    pub fn convexity(m: usize) -> Result<Self> {
        if m < 3 {
            return Err(Error::InvalidArgument(format!(
                "convexity needs at least 3 knots, got {m}"
            )));
        }
        let mut b = RowBuilder::new(m);
        for j in 0..2 {
            b.push(vec![(j, T::one())], T::neg_inf(), T::inf(), RowLabel::of(RowKind::Padding));
        }
        for j in 2..m {
            b.push(
                vec![(j - 2, T::one()), (j - 1, -T::lit(2.0)), (j, T::one())],
                T::zero(),
                T::inf(),
                RowLabel::of(RowKind::Convex),
            );
        }
        Ok(b.finish())
    }

    /// Bounded and non-decreasing with `m + 1` rows: `lower <= xi_1`, the `m - 1`
    /// increments, and `xi_m <= upper`.
    pub fn reduced_bounded_monotone(m: usize, lower: T, upper: T) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!(
                "bounded monotonicity needs at least 2 knots, got {m}"
            )));
        }
        check_bounds(lower, upper)?;
        let mut b = RowBuilder::new(m);
        b.push(vec![(0, T::one())], lower, T::inf(), RowLabel::of(RowKind::Bound));
        for j in 1..m {
            b.push(
                vec![(j - 1, -T::one()), (j, T::one())],
                T::zero(),
                T::inf(),
                RowLabel::of(RowKind::Monotone),
            );
        }
        b.push(vec![(m - 1, T::one())], T::neg_inf(), upper, RowLabel::of(RowKind::Bound));
        Ok(b.finish())
    }

    /// Per-axis non-decreasing constraints on a 2D tensor grid: differences
    /// along each selected axis on every line of knots, then rank padding.
    pub fn monotonicity_2d(grid: &KnotGrid<T>, axes: &[usize]) -> Result<Self> {
        if grid.dim() != 2 {
            return Err(Error::InvalidArgument("monotonicity_2d needs a 2D grid".into()));
        }
        if axes.is_empty() || axes.iter().any(|&a| a > 1) {
            return Err(Error::InvalidArgument("axes must be a non-empty subset of {0, 1}".into()));
        }
        let counts = grid.counts();
        let (m1, m2) = (counts[0], counts[1]);
        let mut b = RowBuilder::new(grid.size());
        let mut axes = axes.to_vec();
        axes.sort_unstable();
        axes.dedup();
        for &axis in &axes {
            let label = RowLabel {
                kind: RowKind::Monotone,
                interval: None,
                axis: Some(axis),
            };
            for j2 in 0..m2 {
                for j1 in 0..m1 {
                    let prev = match axis {
                        0 if j1 > 0 => grid.flat_index(&[j1 - 1, j2]),
                        1 if j2 > 0 => grid.flat_index(&[j1, j2 - 1]),
                        _ => continue,
                    };
                    let cur = grid.flat_index(&[j1, j2]);
                    b.push(vec![(prev, -T::one()), (cur, T::one())], T::zero(), T::inf(), label);
                }
            }
        }
        b.finish().pad_to_full_rank()
    }

    /// Constraints restricted to the knots inside each (non-overlapping) interval,
    /// stacked and padded to full rank. Row labels carry the interval index.
    pub fn interval_constraints(grid: &KnotGrid<T>, pieces: &[IntervalPiece<T>]) -> Result<Self> {
        if grid.dim() != 1 {
            return Err(Error::InvalidArgument(
                "interval constraints are defined on 1D grids".into(),
            ));
        }
        if pieces.is_empty() {
            return Err(Error::InvalidArgument("interval constraints: no pieces given".into()));
        }
        for (i, p) in pieces.iter().enumerate() {
            if !(p.end > p.start) {
                return Err(Error::InvalidArgument(format!("interval {i} is empty")));
            }
            for (k, other) in pieces.iter().enumerate().skip(i + 1) {
                if p.start < other.end && other.start < p.end {
                    return Err(Error::InvalidArgument(format!(
                        "intervals {i} and {k} overlap"
                    )));
                }
            }
        }
        let t = grid.axis(0);
        let slack = T::lit(1e-12);
        let mut b = RowBuilder::new(grid.size());
        for (id, piece) in pieces.iter().enumerate() {
            let idx: Vec<usize> = (0..t.len())
                .filter(|&j| t[j] >= piece.start - slack && t[j] <= piece.end + slack)
                .collect();
            if idx.is_empty() {
                return Err(Error::InvalidArgument(format!("interval {id} contains no knots")));
            }
            let label = |kind| RowLabel {
                kind,
                interval: Some(id),
                axis: None,
            };
            for shape in &piece.shapes {
                match *shape {
                    Shape::Bounds { lower, upper } => {
                        check_bounds(lower, upper)?;
                        for &j in &idx {
                            b.push(vec![(j, T::one())], lower, upper, label(RowKind::Bound));
                        }
                    }
                    Shape::Monotone => {
                        if idx.len() < 2 {
                            return Err(Error::InvalidArgument(format!(
                                "interval {id}: monotonicity needs at least 2 knots"
                            )));
                        }
                        for w in idx.windows(2) {
                            b.push(
                                vec![(w[0], -T::one()), (w[1], T::one())],
                                T::zero(),
                                T::inf(),
                                label(RowKind::Monotone),
                            );
                        }
                    }
                    Shape::Convex => {
                        if idx.len() < 3 {
                            return Err(Error::InvalidArgument(format!(
                                "interval {id}: convexity needs at least 3 knots"
                            )));
                        }
                        for w in idx.windows(3) {
                            b.push(
                                vec![(w[0], T::one()), (w[1], -T::lit(2.0)), (w[2], T::one())],
                                T::zero(),
                                T::inf(),
                                label(RowKind::Convex),
                            );
                        }
                    }
                }
            }
        }
        b.finish().pad_to_full_rank()
    }

    /// Concatenates the rows of several systems on the same coefficient vector.
    pub fn stack(systems: &[&Self]) -> Result<Self> {
        let first = systems
            .first()
            .ok_or_else(|| Error::InvalidArgument("stack: no systems given".into()))?;
        let m = first.dim();
        for s in systems {
            check_len("stacked system width", m, s.dim())?;
        }
        let q: usize = systems.iter().map(|s| s.num_rows()).sum();
        let mut matrix = DMatrix::zeros(q, m);
        let mut lower = DVector::zeros(q);
        let mut upper = DVector::zeros(q);
        let mut labels = Vec::with_capacity(q);
        let mut k = 0;
        for s in systems {
            let r = s.num_rows();
            matrix.rows_mut(k, r).copy_from(&s.matrix);
            lower.rows_mut(k, r).copy_from(&s.lower);
            upper.rows_mut(k, r).copy_from(&s.upper);
            labels.extend_from_slice(&s.labels);
            k += r;
        }
        let sys = Self {
            matrix,
            lower,
            upper,
            labels,
        };
        sys.check_rank()?;
        Ok(sys)
    }

    /// Appends vacuous coordinate rows until `Lambda` has full column rank.
    pub fn pad_to_full_rank(self) -> Result<Self> {
        let m = self.dim();
        let null = null_space(&self.matrix);
        let k = null.ncols();
        if k == 0 {
            return Ok(self);
        }
        // Greedy column-pivoted Gram-Schmidt on the rows of the null basis
        // picks coordinates whose unit vectors complete the row space.
        let mut rows: Vec<DVector<T>> = (0..m).map(|j| null.row(j).transpose()).collect();
        let mut chosen = Vec::with_capacity(k);
        for _ in 0..k {
            let (best, norm) = rows
                .iter()
                .enumerate()
                .filter(|(j, _)| !chosen.contains(j))
                .map(|(j, r)| (j, r.norm()))
                .fold((usize::MAX, T::zero()), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best == usize::MAX || norm <= T::lit(1e-12) {
                break;
            }
            let dir = &rows[best] / norm;
            for r in rows.iter_mut() {
                let c = r.dot(&dir);
                r.axpy(-c, &dir, T::one());
            }
            chosen.push(best);
        }
        chosen.sort_unstable();
        let mut b = RowBuilder::new(m);
        for j in chosen {
            b.push(vec![(j, T::one())], T::neg_inf(), T::inf(), RowLabel::of(RowKind::Padding));
        }
        let padding = b.finish();
        Self::stack(&[&self, &padding])
    }

    fn check_rank(&self) -> Result<()> {
        let m = self.dim();
        if self.num_rows() < m {
            return Err(Error::InvalidSystem(format!(
                "{} rows cannot have rank {m}",
                self.num_rows()
            )));
        }
        let r = self.rank();
        if r < m {
            return Err(Error::InvalidSystem(format!("constraint matrix has rank {r} < {m}")));
        }
        Ok(())
    }

    /// Numerical rank of `Lambda` (singular values above `RANK_TOL * max`).
    pub fn rank(&self) -> usize {
        numerical_rank(&self.matrix)
    }

    /// `true` iff `l - tol <= Lambda xi <= u + tol` row-wise.
    pub fn is_feasible(&self, xi: &DVector<T>, tol: T) -> bool {
        xi.len() == self.dim() && self.max_violation(xi) <= tol
    }

    /// Largest bound violation of `Lambda xi` (zero or negative when feasible).
    pub fn max_violation(&self, xi: &DVector<T>) -> T {
        let eta = &self.matrix * xi;
        let mut worst = T::neg_inf();
        for k in 0..eta.len() {
            let v = (self.lower[k] - eta[k]).max(eta[k] - self.upper[k]);
            worst = worst.max(v);
        }
        worst
    }

    /// Rows with both bounds infinite.
    pub fn is_vacuous_row(&self, k: usize) -> bool {
        self.lower[k] == T::neg_inf() && self.upper[k] == T::inf()
    }

    pub fn is_vacuous(&self) -> bool {
        (0..self.num_rows()).all(|k| self.is_vacuous_row(k))
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn lower(&self) -> &DVector<T> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<T> {
        &self.upper
    }

    pub fn labels(&self) -> &[RowLabel] {
        &self.labels
    }

    /// Number of inequalities `q`.
    pub fn num_rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of knot values `M`.
    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }
}

pub(crate) fn singular_values<T: Real>(a: &DMatrix<T>) -> DVector<T> {
    if a.nrows() > a.ncols() {
        // Same singular values, smaller SVD.
        let r = a.clone().qr().r();
        r.singular_values()
    } else {
        a.singular_values()
    }
}

pub(crate) fn numerical_rank<T: Real>(a: &DMatrix<T>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let s = singular_values(a);
    let max = s.iter().fold(T::zero(), |m, &v| m.max(v));
    if max == T::zero() {
        return 0;
    }
    let tol = T::lit(RANK_TOL) * max;
    s.iter().filter(|&&v| v > tol).count()
}

/// Orthonormal basis of the right null space (columns).
fn null_space<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    let m = a.ncols();
    let gram = a.transpose() * a;
    let eig = gram.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(T::zero(), |x, &v| x.max(v));
    // Squared singular values: compare against the squared relative threshold,
    // floored at round-off level of the Gram matrix.
    let tol = (T::lit(RANK_TOL * RANK_TOL) * max).max(T::lit(1e-13) * max);
    let cols: Vec<usize> = (0..m).filter(|&j| eig.eigenvalues[j] <= tol).collect();
    DMatrix::from_fn(m, cols.len(), |i, c| eig.eigenvectors[(i, cols[c])])
}
