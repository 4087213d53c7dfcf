//! Posterior mode under interpolation equalities and linear inequalities.
//!
//! In the whitened coordinates of a [`TruncatedGaussian`] the equalities are
//! already eliminated and the problem becomes
//! `min |z|^2  s.t.  l <= g + F z <= u`, a QP with identity Hessian. It is
//! solved with the Goldfarb-Idnani dual active-set method, which starts from
//! the unconstrained minimum and adds violated constraints one at a time. The
//! dual method also certifies infeasibility: a violated constraint that can be
//! neither reached nor traded against active ones proves the set is empty.

use nalgebra::{DMatrix, DVector};

use crate::constraints::LinearConstraintSystem;
use crate::error::{Error, Result};
use crate::kernels::GramMatrix;
use crate::posterior::{condition_on_data, truncated_target, ConditionalGaussian, TruncatedGaussian};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapOptions {
    pub max_iterations: usize,
    /// Allowed violation of a constraint, relative to `1 + |bound|`.
    pub feasibility_tol: f64,
    /// Convergence is reported as failed if the KKT residual exceeds this.
    pub kkt_tol: f64,
}

impl Default for MapOptions {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            feasibility_tol: 1e-10,
            kkt_tol: 1e-6,
        }
    }
}

/// Mode of a truncated target in its whitened coordinates.
#[derive(Debug, Clone)]
pub struct LatentMode<T: Real> {
    pub z: DVector<T>,
    pub eta: DVector<T>,
    /// Target rows whose bound is active at the mode.
    pub active_rows: Vec<usize>,
    pub multipliers: Vec<T>,
    pub kkt_residual: T,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct MapResult<T: Real> {
    pub xi: DVector<T>,
    /// `Lambda xi`.
    pub nu: DVector<T>,
    /// `xi^T Gamma^{-1} xi`.
    pub objective: T,
    pub kkt_residual: T,
    pub iterations: usize,
    /// Whitened coordinates of the mode in the conditional target.
    pub latent: DVector<T>,
}

/// MAP of the knot values: `min xi^T Gamma^{-1} xi` subject to `Phi xi = y`
/// and the rows of `sys`.
pub fn solve_map<T: Real>(
    prior: &GramMatrix<T>,
    interp: &DMatrix<T>,
    y: &DVector<T>,
    sys: &LinearConstraintSystem<T>,
    opts: &MapOptions,
) -> Result<MapResult<T>> {
    let cond = condition_on_data(prior, interp, y, prior.jitter())?;
    let target = truncated_target(&cond, sys)?;
    map_from_target(&cond, &target, sys, opts)
}

/// MAP for a target already built from `cond` and `sys`.
pub fn map_from_target<T: Real>(
    cond: &ConditionalGaussian<T>,
    target: &TruncatedGaussian<T>,
    sys: &LinearConstraintSystem<T>,
    opts: &MapOptions,
) -> Result<MapResult<T>> {
    let mode = solve_latent_mode(target, opts)?;
    let xi = target
        .xi(&mode.z)
        .ok_or_else(|| Error::InvalidArgument("target has no map to knot values".into()))?;
    let nu = sys.matrix() * &xi;
    Ok(MapResult {
        objective: cond.data_quad() + mode.z.norm_squared(),
        nu,
        xi,
        kkt_residual: mode.kkt_residual,
        iterations: mode.iterations,
        latent: mode.z,
    })
}

/// One-sided constraint `normal . z >= rhs` tied to a target row.
struct Side<T: Real> {
    normal: DVector<T>,
    rhs: T,
    row: usize,
    tol: T,
}

fn sides<T: Real>(target: &TruncatedGaussian<T>, opts: &MapOptions) -> Vec<Side<T>> {
    let f = target.factor();
    let g = target.mean();
    let mut out = Vec::new();
    for &k in target.walls() {
        let a: DVector<T> = f.row(k).transpose();
        let (l, u) = (target.lower()[k], target.upper()[k]);
        if l.finite() {
            out.push(Side {
                normal: a.clone(),
                rhs: l - g[k],
                row: k,
                tol: T::lit(opts.feasibility_tol) * (T::one() + l.abs()),
            });
        }
        if u.finite() {
            out.push(Side {
                normal: -a,
                rhs: g[k] - u,
                row: k,
                tol: T::lit(opts.feasibility_tol) * (T::one() + u.abs()),
            });
        }
    }
    out
}

/// Factorization `J^T N_active = [R; 0]` with `J` orthogonal.
struct ActiveSet<T: Real> {
    j: DMatrix<T>,
    r: DMatrix<T>,
    idx: Vec<usize>,
    mult: Vec<T>,
}

impl<T: Real> ActiveSet<T> {
    fn new(n: usize) -> Self {
        Self {
            j: DMatrix::identity(n, n),
            r: DMatrix::zeros(n, n),
            idx: Vec::new(),
            mult: Vec::new(),
        }
    }

    fn len(&self) -> usize {
        self.idx.len()
    }

    fn rotate_j_cols(&mut self, a: usize, b: usize, c: T, s: T) {
        for i in 0..self.j.nrows() {
            let (x, y) = (self.j[(i, a)], self.j[(i, b)]);
            self.j[(i, a)] = c * x + s * y;
            self.j[(i, b)] = c * y - s * x;
        }
    }

    /// Appends a constraint whose transformed normal is `d = J^T n`.
    fn add(&mut self, mut d: DVector<T>, which: usize, mult: T) {
        let qa = self.len();
        let n = d.len();
        for k in (qa + 1..n).rev() {
            let h = d[k - 1].hypot(d[k]);
            if h == T::zero() {
                continue;
            }
            let (c, s) = (d[k - 1] / h, d[k] / h);
            d[k - 1] = h;
            d[k] = T::zero();
            self.rotate_j_cols(k - 1, k, c, s);
        }
        for i in 0..=qa {
            self.r[(i, qa)] = d[i];
        }
        self.idx.push(which);
        self.mult.push(mult);
    }

    fn drop(&mut self, pos: usize) {
        let qa = self.len();
        for col in pos..qa - 1 {
            for i in 0..qa {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..qa {
            self.r[(i, qa - 1)] = T::zero();
        }
        for j in pos..qa - 1 {
            let (a, b) = (self.r[(j, j)], self.r[(j + 1, j)]);
            let h = a.hypot(b);
            if h == T::zero() {
                continue;
            }
            let (c, s) = (a / h, b / h);
            for col in j..qa - 1 {
                let (x, y) = (self.r[(j, col)], self.r[(j + 1, col)]);
                self.r[(j, col)] = c * x + s * y;
                self.r[(j + 1, col)] = c * y - s * x;
            }
            self.r[(j + 1, j)] = T::zero();
            self.rotate_j_cols(j, j + 1, c, s);
        }
        self.idx.remove(pos);
        self.mult.remove(pos);
    }

    /// Primal step `z = J_2 d_2` and dual step `R^{-1} d_1` for normal `n`.
    fn directions(&self, n: &DVector<T>) -> (DVector<T>, DVector<T>) {
        let qa = self.len();
        let dim = n.len();
        let d = self.j.transpose() * n;
        let mut z = DVector::zeros(dim);
        for k in qa..dim {
            z.axpy(d[k], &self.j.column(k), T::one());
        }
        let mut r = DVector::zeros(qa);
        for i in (0..qa).rev() {
            let mut acc = d[i];
            for k in i + 1..qa {
                acc -= self.r[(i, k)] * r[k];
            }
            r[i] = acc / self.r[(i, i)];
        }
        (z, r)
    }
}

/// Mode of `target` in whitened coordinates by the dual active-set method.
pub fn solve_latent_mode<T: Real>(
    target: &TruncatedGaussian<T>,
    opts: &MapOptions,
) -> Result<LatentMode<T>> {
    let cons = sides(target, opts);
    let (z, act, iterations) = min_norm_point(target.latent_dim(), &cons, opts)?;
    let slack = |c: &Side<T>, z: &DVector<T>| c.normal.dot(z) - c.rhs;

    // Stationarity z = sum u_i n_i, complementarity and primal feasibility.
    let mut grad = z.clone();
    let mut kkt = T::zero();
    for (k, &i) in act.idx.iter().enumerate() {
        grad.axpy(-act.mult[k], &cons[i].normal, T::one());
        kkt = kkt.max((act.mult[k] * slack(&cons[i], &z)).abs());
        kkt = kkt.max(-act.mult[k]);
    }
    kkt = kkt.max(grad.amax());
    for c in &cons {
        kkt = kkt.max(-slack(c, &z));
    }
    let scale = T::one() + z.amax();
    let kkt_residual = kkt / scale;
    if kkt_residual > T::lit(opts.kkt_tol) {
        return Err(Error::NonConvergence {
            iterations,
            best: z.iter().map(|v| v.as_f64()).collect(),
        });
    }
    let mut order: Vec<usize> = (0..act.len()).collect();
    order.sort_by_key(|&k| cons[act.idx[k]].row);
    Ok(LatentMode {
        eta: target.eta(&z),
        active_rows: order.iter().map(|&k| cons[act.idx[k]].row).collect(),
        multipliers: order.iter().map(|&k| act.mult[k]).collect(),
        z,
        kkt_residual,
        iterations,
    })
}

/// Goldfarb-Idnani dual active set for `min |z|^2` subject to `cons`.
fn min_norm_point<T: Real>(
    dim: usize,
    cons: &[Side<T>],
    opts: &MapOptions,
) -> Result<(DVector<T>, ActiveSet<T>, usize)> {
    let mut z = DVector::<T>::zeros(dim);
    let mut act = ActiveSet::new(dim);
    let tiny = T::lit(1e3) * T::eps();
    let mut iterations = 0usize;

    let slack = |c: &Side<T>, z: &DVector<T>| c.normal.dot(z) - c.rhs;

    loop {
        // Most violated inactive constraint, lowest index on ties.
        let mut pick: Option<(usize, T)> = None;
        for (i, c) in cons.iter().enumerate() {
            if act.idx.contains(&i) {
                continue;
            }
            let s = slack(c, &z);
            if s < -c.tol && pick.is_none_or(|(_, best)| s < best) {
                pick = Some((i, s));
            }
        }
        let Some((p, mut sp)) = pick else { break };
        let np = &cons[p].normal;
        let mut up = T::zero();
        loop {
            iterations += 1;
            if iterations > opts.max_iterations {
                return Err(Error::NonConvergence {
                    iterations,
                    best: z.iter().map(|v| v.as_f64()).collect(),
                });
            }
            let (step, dual) = act.directions(np);
            let mut t1 = T::inf();
            let mut drop_at = None;
            for k in 0..dual.len() {
                if dual[k] > tiny {
                    let ratio = act.mult[k] / dual[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }
            let zn = step.dot(np);
            let scale = np.norm_squared().max(T::eps());
            let t2 = if step.amax() > tiny && zn > tiny * scale {
                -sp / zn
            } else {
                T::inf()
            };
            if !t1.finite() && !t2.finite() {
                let mut active: Vec<usize> = act.idx.iter().map(|&i| cons[i].row).collect();
                active.sort_unstable();
                active.dedup();
                return Err(Error::Infeasible {
                    row: cons[p].row,
                    active,
                });
            }
            let t = t1.min(t2);
            if t2.finite() {
                z.axpy(t, &step, T::one());
            }
            for k in 0..dual.len() {
                act.mult[k] -= t * dual[k];
            }
            up += t;
            if t2 <= t1 {
                let d = act.j.transpose() * np;
                act.add(d, p, up);
                break;
            }
            act.drop(drop_at.expect("finite partial step has a blocking constraint"));
            sp = slack(&cons[p], &z);
            if sp >= -cons[p].tol {
                break;
            }
        }
    }
    Ok((z, act, iterations))
}

/// A point with every wall slack strictly positive: the minimum-norm point of
/// the walls pushed inward by a margin, halved from 0.1 until the tightened
/// set is non-empty. Two-sided rows give up at most a quarter of their width.
pub(crate) fn interior_point<T: Real>(target: &TruncatedGaussian<T>) -> Result<DVector<T>> {
    let opts = MapOptions::default();
    let base = sides(target, &opts);
    let widths: Vec<T> = base
        .iter()
        .map(|c| target.upper()[c.row] - target.lower()[c.row])
        .collect();
    let mut margin = 0.1;
    while margin >= 1e-9 {
        let tightened: Vec<Side<T>> = base
            .iter()
            .zip(&widths)
            .map(|(c, &w)| {
                let shift = (T::lit(margin) * c.normal.norm()).min(T::lit(0.25) * w);
                Side {
                    normal: c.normal.clone(),
                    rhs: c.rhs + shift,
                    row: c.row,
                    tol: T::zero(),
                }
            })
            .collect();
        if let Ok((z, _, _)) = min_norm_point(target.latent_dim(), &tightened, &opts) {
            if base.iter().all(|c| c.normal.dot(&z) - c.rhs > T::zero()) {
                return Ok(z);
            }
        }
        margin *= 0.5;
    }
    Err(Error::InvalidArgument(
        "no strictly feasible start state: the constraint set has empty interior".into(),
    ))
}
