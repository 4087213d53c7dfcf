//! Log-likelihood of covariance parameters, with and without the inequality
//! constraints, and multistart maximization over a parameter box.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::KnotGrid;
use crate::constraints::LinearConstraintSystem;
use crate::error::{check_len, Error, Result};
use crate::kernels::{cholesky_with_escalation, KernelFamily, KernelParams};
use crate::orthant::{log_orthant_prob, DEFAULT_ORTHANT_DRAWS};
use crate::posterior::{condition_on_data, symmetrize};
use crate::scalar::Real;

/// Gaussian log-likelihood `-1/2 log det K - 1/2 y^T K^{-1} y - n/2 log 2 pi`
/// with `K = Phi Gamma Phi^T`.
pub fn log_likelihood<T: Real>(
    params: &KernelParams<T>,
    grid: &KnotGrid<T>,
    interp: &DMatrix<T>,
    y: &DVector<T>,
) -> Result<T> {
    check_len("basis matrix columns", grid.size(), interp.ncols())?;
    check_len("observations", interp.nrows(), y.len())?;
    let n = y.len();
    if n == 0 {
        return Ok(T::zero());
    }
    let gamma = params.gram(&grid.knot_points(), params.default_jitter())?;
    let k = symmetrize(interp * gamma.values() * interp.transpose());
    let (chol, _) = cholesky_with_escalation(&k, params.default_jitter())?;
    let l = chol.l();
    let half_log_det = (0..n).fold(T::zero(), |s, i| s + l[(i, i)].ln());
    let w = l
        .solve_lower_triangular(y)
        .ok_or_else(|| Error::IllConditioned("singular Cholesky factor".into()))?;
    let half_log_2pi = T::lit(0.5 * (2.0 * PI).ln());
    Ok(-half_log_det - T::lit(0.5) * w.norm_squared() - T::from_count(n) * half_log_2pi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrthantConfig {
    pub n_draws: usize,
    /// Common random number seed shared by every evaluation.
    pub seed: u64,
}

impl Default for OrthantConfig {
    fn default() -> Self {
        Self {
            n_draws: DEFAULT_ORTHANT_DRAWS,
            seed: 0,
        }
    }
}

/// Log-likelihood plus `log P(l <= Lambda xi <= u | data) - log P(l <= Lambda xi <= u)`.
/// Either probability being zero gives `-inf`.
pub fn constrained_log_likelihood<T: Real>(
    params: &KernelParams<T>,
    grid: &KnotGrid<T>,
    interp: &DMatrix<T>,
    y: &DVector<T>,
    sys: &LinearConstraintSystem<T>,
    orthant: &OrthantConfig,
) -> Result<T> {
    let ll = log_likelihood(params, grid, interp, y)?;
    if sys.is_vacuous() {
        return Ok(ll);
    }
    check_len("constraint system width", grid.size(), sys.dim())?;
    let gamma = params.gram(&grid.knot_points(), params.default_jitter())?;
    let lambda = sys.matrix();
    let cond = condition_on_data(&gamma, interp, y, params.default_jitter())?;
    let post = log_orthant_prob(
        &(lambda * cond.mean()),
        &symmetrize(lambda * cond.cov() * lambda.transpose()),
        sys.lower(),
        sys.upper(),
        orthant.n_draws,
        orthant.seed,
    )?;
    if post.log_prob == f64::NEG_INFINITY {
        return Ok(T::neg_inf());
    }
    let prior = log_orthant_prob(
        &DVector::zeros(sys.num_rows()),
        &symmetrize(lambda * gamma.values() * lambda.transpose()),
        sys.lower(),
        sys.upper(),
        orthant.n_draws,
        orthant.seed,
    )?;
    if prior.log_prob == f64::NEG_INFINITY {
        return Ok(T::neg_inf());
    }
    Ok(ll + T::lit(post.log_prob - prior.log_prob))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Mle,
    Cmle,
}

/// Box of admissible covariance parameters and the multistart policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDomain {
    pub variance: (f64, f64),
    pub lengthscales: Vec<(f64, f64)>,
    pub starts: usize,
    pub max_evaluations: usize,
    /// Random Latin hypercubes scored for the maximin start design.
    pub lhs_candidates: usize,
}

impl ParamDomain {
    pub fn new(variance: (f64, f64), lengthscales: Vec<(f64, f64)>) -> Result<Self> {
        let d = Self {
            variance,
            lengthscales,
            starts: 10,
            max_evaluations: 500,
            lhs_candidates: 100,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        for &(lo, hi) in std::iter::once(&self.variance).chain(&self.lengthscales) {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "parameter interval [{lo}, {hi}] must satisfy 0 < lo <= hi < inf"
                )));
            }
        }
        if self.lengthscales.is_empty() || self.lengthscales.len() > 2 {
            return Err(Error::InvalidArgument("one or two lengthscales expected".into()));
        }
        if self.starts == 0 || self.max_evaluations == 0 {
            return Err(Error::InvalidArgument("starts and max_evaluations must be positive".into()));
        }
        Ok(())
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        std::iter::once(self.variance).chain(self.lengthscales.iter().copied()).collect()
    }

    fn contains(&self, p: &[f64]) -> bool {
        self.bounds().iter().zip(p).all(|(&(lo, hi), &v)| v >= lo && v <= hi)
    }
}

/// One multistart run: parameters are `[variance, lengthscales...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationResult {
    pub family: KernelFamily,
    pub variance: f64,
    pub lengthscales: Vec<f64>,
    pub value: f64,
    pub method: Objective,
    pub trace: Vec<StartTrace>,
    /// Orthant settings used by the constrained objective.
    pub orthant: Option<OrthantConfig>,
}

impl EstimationResult {
    pub fn params<T: Real>(&self) -> Result<KernelParams<T>> {
        KernelParams::new(
            self.family,
            T::lit(self.variance),
            self.lengthscales.iter().map(|&v| T::lit(v)).collect(),
        )
    }
}

/// Data and model pieces shared by every objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EstimationProblem<'a, T: Real> {
    pub family: KernelFamily,
    pub grid: &'a KnotGrid<T>,
    pub interp: &'a DMatrix<T>,
    pub y: &'a DVector<T>,
    pub system: Option<&'a LinearConstraintSystem<T>>,
    pub orthant: OrthantConfig,
}

impl<T: Real> EstimationProblem<'_, T> {
    /// Objective at `[variance, lengthscales...]`; numerical failures map to `-inf`.
    pub fn evaluate(&self, objective: Objective, p: &[f64]) -> f64 {
        let Ok(params) = KernelParams::new(self.family, T::lit(p[0]), p[1..].iter().map(|&v| T::lit(v)).collect())
        else {
            return f64::NEG_INFINITY;
        };
        let value = match (objective, self.system) {
            (Objective::Cmle, Some(sys)) => {
                constrained_log_likelihood(&params, self.grid, self.interp, self.y, sys, &self.orthant)
            }
            _ => log_likelihood(&params, self.grid, self.interp, self.y),
        };
        match value {
            Ok(v) if !v.as_f64().is_nan() => v.as_f64(),
            _ => f64::NEG_INFINITY,
        }
    }
}

/// Latin hypercube in `[0,1]^dim` with the largest minimum pairwise distance
/// among `candidates` random designs.
pub fn maximin_lhs<R: Rng + ?Sized>(n: usize, dim: usize, candidates: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut best: Vec<Vec<f64>> = Vec::new();
    let mut best_score = f64::NEG_INFINITY;
    for _ in 0..candidates.max(1) {
        let mut design = vec![vec![0.0; dim]; n];
        for j in 0..dim {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(rng);
            for (i, &p) in perm.iter().enumerate() {
                design[i][j] = (p as f64 + rng.random::<f64>()) / n as f64;
            }
        }
        let mut score = f64::INFINITY;
        for a in 0..n {
            for b in a + 1..n {
                let d: f64 = design[a].iter().zip(&design[b]).map(|(x, y)| (x - y).powi(2)).sum();
                score = score.min(d);
            }
        }
        if score > best_score {
            best_score = score;
            best = design;
        }
    }
    best
}

/// Nelder-Mead minimisation of `f` over `[0,1]^dim`, projecting every trial
/// point onto the box. Returns the best point, value and evaluation count.
pub(crate) fn nelder_mead_box<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    max_evals: usize,
) -> (Vec<f64>, f64, usize) {
    let dim = start.len();
    let clamp = |x: Vec<f64>| -> Vec<f64> { x.into_iter().map(|v| v.clamp(0.0, 1.0)).collect() };
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let x0 = clamp(start.to_vec());
    let v0 = eval(&x0, &mut evals);
    simplex.push((x0.clone(), v0));
    if dim == 0 {
        return (x0, v0, evals);
    }
    for j in 0..dim {
        let mut x = x0.clone();
        x[j] = if x[j] + 0.1 <= 1.0 { x[j] + 0.1 } else { x[j] - 0.1 };
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| {
        s.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    };
    while evals < max_evals {
        order(&mut simplex);
        let (best, worst) = (simplex[0].1, simplex[dim].1);
        let spread = simplex
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (worst - best).abs() <= 1e-10 * (1.0 + best.abs()) && spread < 1e-6 || spread < 1e-10 {
            break;
        }
        let centroid: Vec<f64> = (0..dim)
            .map(|j| simplex[..dim].iter().map(|(x, _)| x[j]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            clamp(
                centroid
                    .iter()
                    .zip(&simplex[dim].0)
                    .map(|(c, w)| c + t * (w - c))
                    .collect(),
            )
        };
        let xr = along(-1.0);
        let vr = eval(&xr, &mut evals);
        if vr < simplex[0].1 {
            let xe = along(-2.0);
            let ve = eval(&xe, &mut evals);
            simplex[dim] = if ve < vr { (xe, ve) } else { (xr, vr) };
        } else if vr < simplex[dim - 1].1 {
            simplex[dim] = (xr, vr);
        } else {
            let xc = if vr < worst { along(-0.5) } else { along(0.5) };
            let vc = eval(&xc, &mut evals);
            if vc < vr.min(worst) {
                simplex[dim] = (xc, vc);
            } else {
                let x_best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = x_best.iter().zip(&s.0).map(|(b, x)| b + 0.5 * (x - b)).collect();
                    let v = eval(&x, &mut evals);
                    *s = (x, v);
                }
            }
        }
    }
    order(&mut simplex);
    let (x, v) = simplex.swap_remove(0);
    (x, v, evals)
}

/// Multistart maximization of the (constrained) log-likelihood.
pub fn maximize<T: Real + Send + Sync>(
    objective: Objective,
    domain: &ParamDomain,
    problem: &EstimationProblem<'_, T>,
    seed: u64,
) -> Result<EstimationResult> {
    domain.validate()?;
    if domain.lengthscales.len() != problem.grid.dim() {
        return Err(Error::DimensionMismatch {
            what: "lengthscale intervals",
            expected: problem.grid.dim(),
            got: domain.lengthscales.len(),
        });
    }
    if objective == Objective::Cmle && problem.system.is_none() {
        return Err(Error::InvalidArgument("constrained estimation needs a constraint system".into()));
    }
    let bounds = domain.bounds();
    let free: Vec<usize> = (0..bounds.len()).filter(|&i| bounds[i].1 > bounds[i].0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = maximin_lhs(domain.starts, free.len(), domain.lhs_candidates, &mut rng);
    let to_params = |u: &[f64]| -> Vec<f64> {
        let mut p: Vec<f64> = bounds.iter().map(|b| b.0).collect();
        for (k, &i) in free.iter().enumerate() {
            let (lo, hi) = bounds[i];
            p[i] = (lo + u[k] * (hi - lo)).clamp(lo, hi);
        }
        p
    };
    let trace: Vec<StartTrace> = starts
        .par_iter()
        .map(|u0| {
            let (u, v, evaluations) = nelder_mead_box(
                |u| -problem.evaluate(objective, &to_params(u)),
                u0,
                domain.max_evaluations,
            );
            StartTrace {
                start: to_params(u0),
                end: to_params(&u),
                value: -v,
                evaluations,
            }
        })
        .collect();
    let mut best: Option<usize> = None;
    for (i, t) in trace.iter().enumerate() {
        if t.value.is_finite() && best.is_none_or(|b| t.value > trace[b].value) {
            best = Some(i);
        }
    }
    let best = best.ok_or(Error::EstimationFailure)?;
    let end = trace[best].end.clone();
    debug_assert!(domain.contains(&end));
    Ok(EstimationResult {
        family: problem.family,
        variance: end[0],
        lengthscales: end[1..].to_vec(),
        value: trace[best].value,
        method: objective,
        orthant: (objective == Objective::Cmle).then_some(problem.orthant),
        trace,
    })
}
