//! Samplers for truncated Gaussian targets.
//!
//! All four samplers run in the whitened coordinates `z` of a
//! [`TruncatedGaussian`], where the untruncated law is `N(0, I_r)` and every
//! finite bound is a linear wall `n . z + c >= 0`. Draws are reported both as
//! `eta = mean + F z` and as `z`; conditional targets also lift `z` to knot
//! values exactly.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;
use std::io::{self, Write};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map_solver::interior_point;
use crate::posterior::TruncatedGaussian;
use crate::scalar::Real;

/// Slack tolerance accepted for a start state or a trajectory end point.
pub const STATE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Rsm,
    Gibbs,
    Mh,
    Hmc,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 4] = [Self::Rsm, Self::Gibbs, Self::Mh, Self::Hmc];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rsm => "rsm",
            Self::Gibbs => "gibbs",
            Self::Mh => "mh",
            Self::Hmc => "hmc",
        }
    }
}

impl std::fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rsm" => Ok(Self::Rsm),
            "gibbs" => Ok(Self::Gibbs),
            "mh" => Ok(Self::Mh),
            "hmc" => Ok(Self::Hmc),
            other => Err(Error::InvalidArgument(format!("unknown sampler '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    pub n_samples: usize,
    pub seed: u64,
    /// Stream index; chains with the same seed and different streams are independent.
    pub chain: u64,
    /// Discarded iterations (Gibbs scans, MH steps, HMC trajectories).
    pub burn_in: usize,
    /// Keep every `thinning`-th iteration after burn-in (Gibbs, MH, HMC).
    pub thinning: usize,
    /// MH proposal scale: the proposal covariance is `step_scale` times the target's.
    pub step_scale: f64,
    /// HMC integration time per trajectory.
    pub travel_time: f64,
    pub max_bounces: usize,
    /// RSM: total proposals allowed; MH: consecutive rejections allowed.
    pub rejection_cap: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Hmc,
            n_samples: 1000,
            seed: 0,
            chain: 0,
            burn_in: 1000,
            thinning: 1,
            step_scale: 1.0,
            travel_time: FRAC_PI_2,
            max_bounces: 10_000,
            rejection_cap: 1_000_000,
        }
    }
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind, n_samples: usize, seed: u64) -> Self {
        Self {
            kind,
            n_samples,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidArgument("thinning must be at least 1".into()));
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::InvalidArgument("step_scale must be positive".into()));
        }
        if !(self.travel_time > 0.0 && self.travel_time.is_finite()) {
            return Err(Error::InvalidArgument("travel_time must be positive".into()));
        }
        if self.rejection_cap == 0 {
            return Err(Error::InvalidArgument("rejection_cap must be at least 1".into()));
        }
        Ok(())
    }

    /// Generator for this configuration's seed and stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.chain);
        rng
    }
}

/// Counters for recoverable numerical events.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerWarnings {
    /// HMC trajectories stopped at a wall after `max_bounces` reflections.
    pub truncated_trajectories: usize,
    /// HMC end states rejected for violating a wall beyond round-off.
    pub numerical_rejects: usize,
    /// Gibbs updates skipped because the conditional interval was empty.
    pub skipped_updates: usize,
}

#[derive(Debug, Clone)]
pub struct SampleChain<T: Real> {
    pub kind: SamplerKind,
    /// One draw of `eta` per row.
    pub draws: DMatrix<T>,
    /// The same draws in whitened coordinates.
    pub latent: DMatrix<T>,
    pub accepted: usize,
    pub proposed: usize,
    pub wall_seconds: f64,
    /// Latent start state.
    pub start: DVector<T>,
    pub config: SamplerConfig,
    pub warnings: SamplerWarnings,
}

/// JSON-friendly chain metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainSummary {
    pub kind: SamplerKind,
    pub n_samples: usize,
    pub accepted: usize,
    pub proposed: usize,
    pub acceptance_rate: f64,
    pub wall_seconds: f64,
    pub warnings: SamplerWarnings,
    pub config: SamplerConfig,
}

impl<T: Real> SampleChain<T> {
    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Knot-value draws (one per row) for targets built from a conditional.
    pub fn xi_draws(&self, target: &TruncatedGaussian<T>) -> Option<DMatrix<T>> {
        let lift = target.lift()?;
        let mut out = &self.latent * lift.basis.transpose();
        for mut row in out.row_iter_mut() {
            row += lift.center.transpose();
        }
        Some(out)
    }

    pub fn summary(&self) -> ChainSummary {
        ChainSummary {
            kind: self.kind,
            n_samples: self.len(),
            accepted: self.accepted,
            proposed: self.proposed,
            acceptance_rate: self.acceptance_rate(),
            wall_seconds: self.wall_seconds,
            warnings: self.warnings,
            config: self.config.clone(),
        }
    }

    /// Writes the `eta` draws as CSV with the given column labels
    /// (`eta_1..eta_q` when `labels` is `None`).
    pub fn write_csv<W: Write>(&self, mut out: W, labels: Option<&[String]>) -> io::Result<()> {
        write_matrix_csv(&mut out, &self.draws, labels, "eta")
    }
}

/// CSV rendering shared by chain outputs; values use shortest round-trip form.
pub fn write_matrix_csv<T: Real, W: Write>(
    out: &mut W,
    m: &DMatrix<T>,
    labels: Option<&[String]>,
    prefix: &str,
) -> io::Result<()> {
    let header: Vec<String> = match labels {
        Some(l) => l.to_vec(),
        None => (1..=m.ncols()).map(|j| format!("{prefix}_{j}")).collect(),
    };
    if header.len() != m.ncols() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "label count mismatch"));
    }
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for i in 0..m.nrows() {
        line.clear();
        for j in 0..m.ncols() {
            if j > 0 {
                line.push(',');
            }
            let _ = write!(line, "{}", m[(i, j)]);
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Standard normal restricted to `[a, b]` with `a >= 0.6`: exponential
/// proposals with the optimal rate, or uniform ones on narrow intervals.
fn upper_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    if b - a < 2.0 / rate {
        return uniform_proposals(a, b, a * a, rng);
    }
    let exp = Exp::new(rate).expect("positive rate");
    loop {
        let z = a + exp.sample(rng);
        if z <= b && rng.random::<f64>() <= (-0.5 * (z - rate) * (z - rate)).exp() {
            return z;
        }
    }
}

/// Uniform proposals on `[a, b]` accepted with `exp((floor - z^2) / 2)`,
/// where `floor` is the minimum of `z^2` over the interval.
fn uniform_proposals<R: Rng + ?Sized>(a: f64, b: f64, floor: f64, rng: &mut R) -> f64 {
    loop {
        let z = rng.random_range(a..=b);
        if rng.random::<f64>() <= (0.5 * (floor - z * z)).exp() {
            return z;
        }
    }
}

/// Standard normal restricted to `[a, b]` with `0 <= a < b`.
fn positive_side<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if b * b - a * a <= 2.0 {
        return uniform_proposals(a, b, a * a, rng);
    }
    if a >= 0.6 {
        return upper_tail(a, b, rng);
    }
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let z = z.abs();
        if z >= a && z <= b {
            return z;
        }
    }
}

/// Standard normal restricted to `[a, b]`; every branch accepts with
/// probability above roughly 0.3.
fn std_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a >= 0.0 {
        return positive_side(a, b, rng);
    }
    if b <= 0.0 {
        return -positive_side(-b, -a, rng);
    }
    if b - a < 2.5 {
        return uniform_proposals(a, b, 0.0, rng);
    }
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z >= a && z <= b {
            return z;
        }
    }
}

/// One draw from `N(mean, sd^2)` restricted to `[a, b]`.
pub fn sample_truncated_1d<R: Rng + ?Sized>(
    mean: f64,
    sd: f64,
    a: f64,
    b: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(sd > 0.0 && sd.is_finite()) || !mean.is_finite() {
        return Err(Error::InvalidArgument(format!("bad normal parameters ({mean}, {sd})")));
    }
    if !(a < b) {
        return Err(Error::InvalidArgument(format!("empty interval [{a}, {b}]")));
    }
    let z = std_truncated((a - mean) / sd, (b - mean) / sd, rng);
    Ok((mean + sd * z).clamp(a, b))
}

/// One-sided walls `normals * z + offsets >= 0` in whitened coordinates.
struct Walls<T: Real> {
    normals: DMatrix<T>,
    offsets: DVector<T>,
}

impl<T: Real> Walls<T> {
    fn new(target: &TruncatedGaussian<T>) -> Self {
        let f = target.factor();
        let g = target.mean();
        let r = target.latent_dim();
        let mut rows: Vec<(DVector<T>, T)> = Vec::new();
        for &k in target.walls() {
            let a: DVector<T> = f.row(k).transpose();
            if target.lower()[k].finite() {
                rows.push((a.clone(), g[k] - target.lower()[k]));
            }
            if target.upper()[k].finite() {
                rows.push((-a, target.upper()[k] - g[k]));
            }
        }
        let normals = DMatrix::from_fn(rows.len(), r, |i, j| rows[i].0[j]);
        let offsets = DVector::from_iterator(rows.len(), rows.iter().map(|x| x.1));
        Self { normals, offsets }
    }

    fn len(&self) -> usize {
        self.offsets.len()
    }

    fn slacks(&self, z: &DVector<T>) -> DVector<T> {
        &self.normals * z + &self.offsets
    }

    fn min_slack(&self, z: &DVector<T>) -> T {
        self.slacks(z).iter().fold(T::inf(), |m, &v| m.min(v))
    }

    fn feasible(&self, z: &DVector<T>, tol: T) -> bool {
        self.len() == 0 || self.min_slack(z) >= -tol
    }
}

fn normal_vec<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<T> {
    DVector::from_fn(n, |_, _| T::lit(StandardNormal.sample(rng)))
}

struct Collector<T: Real> {
    eta: DMatrix<T>,
    latent: DMatrix<T>,
    filled: usize,
}

impl<T: Real> Collector<T> {
    fn new(n: usize, target: &TruncatedGaussian<T>) -> Self {
        Self {
            eta: DMatrix::zeros(n, target.dim()),
            latent: DMatrix::zeros(n, target.latent_dim()),
            filled: 0,
        }
    }

    fn push(&mut self, target: &TruncatedGaussian<T>, z: &DVector<T>) {
        let eta = target.eta(z);
        self.eta.row_mut(self.filled).copy_from(&eta.transpose());
        self.latent.row_mut(self.filled).copy_from(&z.transpose());
        self.filled += 1;
    }

    fn rows(m: &DMatrix<T>, n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| m.row(i).iter().map(|v| v.as_f64()).collect()).collect()
    }
}

fn check_start<T: Real>(target: &TruncatedGaussian<T>, walls: &Walls<T>, start: &DVector<T>) -> Result<()> {
    if start.len() != target.latent_dim() {
        return Err(Error::DimensionMismatch {
            what: "latent start state",
            expected: target.latent_dim(),
            got: start.len(),
        });
    }
    if !walls.feasible(start, T::lit(1e-9)) {
        return Err(Error::InvalidArgument(format!(
            "start state violates a bound by {:e}",
            -walls.min_slack(start).as_f64()
        )));
    }
    Ok(())
}

/// `start` itself when no wall is active there, otherwise a strictly interior
/// point (a vertex start would freeze coordinate updates and bounce paths).
fn interior_start<T: Real>(target: &TruncatedGaussian<T>, walls: &Walls<T>, start: &DVector<T>) -> Result<DVector<T>> {
    if walls.len() == 0 || walls.min_slack(start) > T::zero() {
        Ok(start.clone())
    } else {
        interior_point(target)
    }
}

/// Rejection sampling from the mode: proposals `z* + N(0, I)`, accepted with
/// probability `exp(-z*.(z - z*))`. The bound holds on the feasible set because
/// `z*` is the projection of the origin onto it.
pub fn run_rsm<T: Real, R: Rng + ?Sized>(
    target: &TruncatedGaussian<T>,
    mode: &DVector<T>,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SampleChain<T>> {
    cfg.validate()?;
    let clock = Instant::now();
    let walls = Walls::new(target);
    check_start(target, &walls, mode)?;
    let r = target.latent_dim();
    let mut out = Collector::new(cfg.n_samples, target);
    let mut proposed = 0usize;
    while out.filled < cfg.n_samples {
        if proposed >= cfg.rejection_cap {
            return Err(Error::LowAcceptance {
                accepted: out.filled,
                requested: cfg.n_samples,
                proposed,
                partial: Collector::rows(&out.eta, out.filled),
                partial_latent: Collector::rows(&out.latent, out.filled),
            });
        }
        proposed += 1;
        let z = mode + normal_vec::<T, _>(r, rng);
        let u: f64 = rng.random();
        if !walls.feasible(&z, T::zero()) {
            continue;
        }
        let log_ratio = (-mode.dot(&(&z - mode))).as_f64().min(0.0);
        if u.ln() <= log_ratio {
            out.push(target, &z);
        }
    }
    Ok(SampleChain {
        kind: SamplerKind::Rsm,
        accepted: out.filled,
        draws: out.eta,
        latent: out.latent,
        proposed,
        wall_seconds: clock.elapsed().as_secs_f64(),
        start: mode.clone(),
        config: cfg.clone(),
        warnings: SamplerWarnings::default(),
    })
}

/// `max` without NaN handling, for hot loops over finite-or-infinite values.
#[inline(always)]
fn fast_max(a: f64, b: f64) -> f64 {
    if a > b {
        a
    } else {
        b
    }
}

/// Constrained-row values kept in `f64` for the coordinate sweeps. Each
/// column lists `(row, normal, 1 / normal)` for the rows touching it.
struct GibbsState {
    columns: Vec<Vec<(usize, f64, f64)>>,
    rows: Vec<usize>,
    value: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl GibbsState {
    fn new<T: Real>(target: &TruncatedGaussian<T>, z: &DVector<T>) -> Self {
        let f = target.factor();
        let rows = target.walls().to_vec();
        let columns = (0..target.latent_dim())
            .map(|i| {
                rows.iter()
                    .enumerate()
                    .filter(|&(_, &k)| f[(k, i)] != T::zero())
                    .map(|(c, &k)| {
                        let n = f[(k, i)].as_f64();
                        (c, n, 1.0 / n)
                    })
                    .collect()
            })
            .collect();
        let lower = rows.iter().map(|&k| target.lower()[k].as_f64()).collect();
        let upper = rows.iter().map(|&k| target.upper()[k].as_f64()).collect();
        let mut state = Self {
            columns,
            rows,
            value: Vec::new(),
            lower,
            upper,
        };
        state.refresh(target, z);
        state
    }

    fn refresh<T: Real>(&mut self, target: &TruncatedGaussian<T>, z: &DVector<T>) {
        let f = target.factor();
        let g = target.mean();
        self.value = self
            .rows
            .iter()
            .map(|&k| (f.row(k).transpose().dot(z) + g[k]).as_f64())
            .collect();
    }

    fn scan<R: Rng + ?Sized>(&mut self, z: &mut [f64], rng: &mut R, warnings: &mut SamplerWarnings) {
        for (i, zi) in z.iter_mut().enumerate() {
            let col = &self.columns[i];
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for &(c, _, inv) in col {
                // Room to each bound along this coordinate; clamped at 0 against round-off.
                let down = -fast_max(self.value[c] - self.lower[c], 0.0) * inv;
                let up = fast_max(self.upper[c] - self.value[c], 0.0) * inv;
                let (a, b) = if inv > 0.0 { (down, up) } else { (up, down) };
                lo = fast_max(lo, a);
                hi = if b < hi { b } else { hi };
            }
            let (lo, hi) = (*zi + lo, *zi + hi);
            let new = if lo < hi {
                std_truncated(lo, hi, rng)
            } else if lo == hi {
                lo
            } else {
                warnings.skipped_updates += 1;
                continue;
            };
            let delta = new - *zi;
            *zi = new;
            for &(c, n, _) in col {
                self.value[c] += n * delta;
            }
        }
    }
}

/// Systematic-scan Gibbs sampler on the whitened coordinates.
pub fn run_gibbs<T: Real, R: Rng + ?Sized>(
    target: &TruncatedGaussian<T>,
    start: &DVector<T>,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SampleChain<T>> {
    cfg.validate()?;
    let clock = Instant::now();
    let walls = Walls::new(target);
    check_start(target, &walls, start)?;
    let start = interior_start(target, &walls, start)?;
    let mut state = GibbsState::new(target, &start);
    let mut z: Vec<f64> = start.iter().map(|v| v.as_f64()).collect();
    let mut warnings = SamplerWarnings::default();
    let mut out = Collector::new(cfg.n_samples, target);
    let total = cfg.burn_in + cfg.n_samples * cfg.thinning;
    for it in 0..total {
        state.scan(&mut z, rng, &mut warnings);
        let keep = it >= cfg.burn_in && (it - cfg.burn_in + 1).is_multiple_of(cfg.thinning);
        if keep || it % 64 == 63 {
            let zt = DVector::from_iterator(z.len(), z.iter().map(|&v| T::lit(v)));
            state.refresh(target, &zt);
            if keep {
                out.push(target, &zt);
            }
        }
    }
    Ok(SampleChain {
        kind: SamplerKind::Gibbs,
        draws: out.eta,
        latent: out.latent,
        accepted: total,
        proposed: total,
        wall_seconds: clock.elapsed().as_secs_f64(),
        start: start.clone(),
        config: cfg.clone(),
        warnings,
    })
}

/// Random-walk Metropolis with proposal covariance `step_scale` times the
/// target covariance; infeasible proposals are rejected.
pub fn run_mh<T: Real, R: Rng + ?Sized>(
    target: &TruncatedGaussian<T>,
    start: &DVector<T>,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SampleChain<T>> {
    cfg.validate()?;
    let clock = Instant::now();
    let walls = Walls::new(target);
    check_start(target, &walls, start)?;
    let r = target.latent_dim();
    let step = T::lit(cfg.step_scale.sqrt());
    let mut z = start.clone();
    let mut energy = z.norm_squared().as_f64() * 0.5;
    let mut out = Collector::new(cfg.n_samples, target);
    let (mut accepted, mut proposed, mut streak) = (0usize, 0usize, 0usize);
    let total = cfg.burn_in + cfg.n_samples * cfg.thinning;
    for it in 0..total {
        proposed += 1;
        let cand = &z + normal_vec::<T, _>(r, rng) * step;
        let u: f64 = rng.random();
        let mut moved = false;
        if walls.feasible(&cand, T::zero()) {
            let cand_energy = cand.norm_squared().as_f64() * 0.5;
            if u.ln() <= energy - cand_energy {
                z = cand;
                energy = cand_energy;
                moved = true;
            }
        }
        if moved {
            accepted += 1;
            streak = 0;
        } else {
            streak += 1;
            if streak >= cfg.rejection_cap {
                return Err(Error::StuckChain { rejections: streak });
            }
        }
        if it >= cfg.burn_in && (it - cfg.burn_in + 1).is_multiple_of(cfg.thinning) {
            out.push(target, &z);
        }
    }
    Ok(SampleChain {
        kind: SamplerKind::Mh,
        draws: out.eta,
        latent: out.latent,
        accepted,
        proposed,
        wall_seconds: clock.elapsed().as_secs_f64(),
        start: start.clone(),
        config: cfg.clone(),
        warnings: SamplerWarnings::default(),
    })
}

/// Position and velocity after time `t` of the dynamics `z'' = -z`.
pub fn harmonic_flow<T: Real>(z: &DVector<T>, v: &DVector<T>, t: T) -> (DVector<T>, DVector<T>) {
    let (s, c) = (t.sin(), t.cos());
    (z * c + v * s, v * c - z * s)
}

/// Reflects `v` across the hyperplane with normal `n`.
pub fn reflect<T: Real>(v: &DVector<T>, n: &DVector<T>) -> DVector<T> {
    let scale = T::lit(2.0) * v.dot(n) / n.norm_squared();
    v - n * scale
}

/// Earliest time in `(0, horizon]` at which `n . z(t) + c` crosses zero
/// downwards, where `n . z(t) = a cos t + b sin t`.
fn wall_hit(a: f64, b: f64, c: f64, horizon: f64) -> Option<f64> {
    let amp = a.hypot(b);
    if amp <= c || amp == 0.0 {
        return None;
    }
    let phase = b.atan2(a);
    let t = (phase + (-c / amp).clamp(-1.0, 1.0).acos()).rem_euclid(2.0 * PI);
    (t > 1e-10 && t <= horizon).then_some(t)
}

fn hmc_trajectory<T: Real, R: Rng + ?Sized>(
    walls: &Walls<T>,
    z: &DVector<T>,
    travel: f64,
    max_bounces: usize,
    rng: &mut R,
    warnings: &mut SamplerWarnings,
) -> DVector<T> {
    let mut pos = z.clone();
    let mut vel = normal_vec::<T, _>(z.len(), rng);
    let mut remaining = travel;
    let mut bounces = 0usize;
    loop {
        let a = &walls.normals * &pos;
        let b = &walls.normals * &vel;
        let mut hit: Option<(f64, usize)> = None;
        for k in 0..walls.len() {
            if let Some(t) = wall_hit(a[k].as_f64(), b[k].as_f64(), walls.offsets[k].as_f64(), remaining) {
                if hit.is_none_or(|(best, _)| t < best) {
                    hit = Some((t, k));
                }
            }
        }
        let Some((t, k)) = hit else {
            return harmonic_flow(&pos, &vel, T::lit(remaining)).0;
        };
        let (p, v) = harmonic_flow(&pos, &vel, T::lit(t));
        pos = p;
        bounces += 1;
        if bounces > max_bounces {
            warnings.truncated_trajectories += 1;
            return pos;
        }
        let normal: DVector<T> = walls.normals.row(k).transpose();
        vel = reflect(&v, &normal);
        remaining -= t;
    }
}

/// Exact Hamiltonian Monte Carlo with specular reflection at the walls.
pub fn run_hmc<T: Real, R: Rng + ?Sized>(
    target: &TruncatedGaussian<T>,
    start: &DVector<T>,
    cfg: &SamplerConfig,
    rng: &mut R,
) -> Result<SampleChain<T>> {
    cfg.validate()?;
    let clock = Instant::now();
    let walls = Walls::new(target);
    check_start(target, &walls, start)?;
    let mut warnings = SamplerWarnings::default();
    let mut z = interior_start(target, &walls, start)?;
    let tol = T::lit(STATE_TOL);
    let mut out = Collector::new(cfg.n_samples, target);
    let (mut accepted, mut proposed) = (0usize, 0usize);
    let total = cfg.burn_in + cfg.n_samples * cfg.thinning;
    for it in 0..total {
        proposed += 1;
        let next = hmc_trajectory(&walls, &z, cfg.travel_time, cfg.max_bounces, rng, &mut warnings);
        if walls.feasible(&next, tol) {
            z = next;
            accepted += 1;
        } else {
            warnings.numerical_rejects += 1;
        }
        if it >= cfg.burn_in && (it - cfg.burn_in + 1).is_multiple_of(cfg.thinning) {
            out.push(target, &z);
        }
    }
    Ok(SampleChain {
        kind: SamplerKind::Hmc,
        draws: out.eta,
        latent: out.latent,
        accepted,
        proposed,
        wall_seconds: clock.elapsed().as_secs_f64(),
        start: start.clone(),
        config: cfg.clone(),
        warnings,
    })
}

/// Runs the sampler selected by `cfg.kind`. `start` is the latent mode
/// (required by RSM, used as start state by the others).
pub fn sample<T: Real>(
    target: &TruncatedGaussian<T>,
    start: &DVector<T>,
    cfg: &SamplerConfig,
) -> Result<SampleChain<T>> {
    let mut rng = cfg.rng();
    match cfg.kind {
        SamplerKind::Rsm => run_rsm(target, start, cfg, &mut rng),
        SamplerKind::Gibbs => run_gibbs(target, start, cfg, &mut rng),
        SamplerKind::Mh => run_mh(target, start, cfg, &mut rng),
        SamplerKind::Hmc => run_hmc(target, start, cfg, &mut rng),
    }
}

/// Independent chains on streams `0..n_chains` of `cfg.seed`, run in parallel.
pub fn sample_chains<T: Real + Send + Sync>(
    target: &TruncatedGaussian<T>,
    start: &DVector<T>,
    cfg: &SamplerConfig,
    n_chains: usize,
) -> Vec<Result<SampleChain<T>>> {
    (0..n_chains as u64)
        .into_par_iter()
        .map(|chain| {
            let cfg = SamplerConfig {
                chain,
                ..cfg.clone()
            };
            sample(target, start, &cfg)
        })
        .collect()
}
