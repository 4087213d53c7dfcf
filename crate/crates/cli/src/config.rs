//! Run configuration (TOML). Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use lineqgp::{
    IntervalPiece, KernelFamily, KernelParams, KnotGrid, LinearConstraintSystem, Objective, OrthantConfig,
    ParamDomain, SamplerConfig, SamplerKind, Shape, UnitScaling,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Output directory; `--out` takes precedence.
    pub output: Option<PathBuf>,
    pub data: DataSpec,
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    pub kernel: KernelSpec,
    pub knots: KnotSpec,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub estimation: Option<EstimationSpec>,
    pub prediction: Option<PredictionSpec>,
    pub benchmark: Option<BenchmarkSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// CSV with header `x1[,x2],y`.
    pub train: PathBuf,
}

/// Input box mapped affinely onto the unit cube.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub variance: f64,
    pub lengthscales: Vec<f64>,
}

/// Either knot counts per axis (`m`) or explicit knot locations per axis (`axes`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnotSpec {
    pub m: Option<Vec<usize>>,
    pub axes: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    Bounds {
        #[serde(default = "neg_inf")]
        lower: f64,
        #[serde(default = "pos_inf")]
        upper: f64,
    },
    /// Non-decreasing along the listed axes (all axes when omitted).
    Monotone { axes: Option<Vec<usize>> },
    Convex,
    ReducedBoundedMonotone { lower: f64, upper: f64 },
    /// Shapes switched on over sub-intervals of a 1D domain.
    Interval { pieces: Vec<PieceSpec> },
    /// Rows of `matrix` (one per constraint) acting on the knot values.
    Custom {
        matrix: Vec<Vec<f64>>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSpec {
    pub start: f64,
    pub end: f64,
    pub shapes: Vec<ShapeSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    Bounds {
        #[serde(default = "neg_inf")]
        lower: f64,
        #[serde(default = "pos_inf")]
        upper: f64,
    },
    Monotone,
    Convex,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}

fn pos_inf() -> f64 {
    f64::INFINITY
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationSpec {
    pub method: Objective,
    pub variance: (f64, f64),
    pub lengthscales: Vec<(f64, f64)>,
    #[serde(default = "default_starts")]
    pub starts: usize,
    #[serde(default = "default_max_evaluations")]
    pub max_evaluations: usize,
    #[serde(default = "default_lhs_candidates")]
    pub lhs_candidates: usize,
    #[serde(default = "default_orthant_draws")]
    pub orthant_draws: usize,
}

fn default_starts() -> usize {
    10
}

fn default_max_evaluations() -> usize {
    500
}

fn default_lhs_candidates() -> usize {
    100
}

fn default_orthant_draws() -> usize {
    lineqgp::orthant::DEFAULT_ORTHANT_DRAWS
}

/// Prediction points: a CSV file with header `x1[,x2]`, or a regular grid
/// with `n` points per axis spanning the domain.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionSpec {
    pub points: Option<PathBuf>,
    pub n: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    pub targets: Vec<BenchmarkTarget>,
    /// One entry per sampler row; seeds come from the run seed.
    pub samplers: Vec<SamplerConfig>,
    /// Run cells on the thread pool (CPU times then include contention).
    #[serde(default)]
    pub parallel: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkTarget {
    pub name: String,
    pub constraints: Vec<ConstraintSpec>,
}

impl RunConfig {
    /// Parses and validates a config file; relative paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.train = base.join(&cfg.data.train);
        if let Some(p) = cfg.prediction.as_mut().and_then(|p| p.points.as_mut()) {
            *p = base.join(&*p);
        }
        if let Some(out) = cfg.output.as_mut() {
            *out = base.join(&*out);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let dim = self.dim()?;
        if let Some(d) = &self.domain {
            if d.lower.len() != dim || d.upper.len() != dim {
                return Err(CliError::Input(format!("domain bounds must have {dim} entries")));
            }
            UnitScaling::new(d.lower.clone(), d.upper.clone())?;
        }
        if self.kernel.lengthscales.len() != dim {
            return Err(CliError::Input(format!("kernel needs {dim} lengthscale(s)")));
        }
        self.kernel_params()?;
        self.grid()?;
        self.sampler.validate()?;
        if let Some(p) = &self.prediction {
            match (&p.points, &p.n) {
                (Some(_), None) => {}
                (None, Some(n)) if n.len() == dim && n.iter().all(|&k| k >= 1) => {}
                _ => {
                    return Err(CliError::Input(format!(
                        "prediction needs either `points` or `n` with {dim} positive count(s)"
                    )))
                }
            }
        }
        if let Some(e) = &self.estimation {
            self.param_domain(e)?;
        }
        if let Some(b) = &self.benchmark {
            if b.targets.is_empty() || b.samplers.is_empty() {
                return Err(CliError::Input("benchmark needs at least one target and one sampler".into()));
            }
            for s in &b.samplers {
                s.validate()?;
            }
        }
        Ok(())
    }

    /// Input dimension (1 or 2), from the knot specification.
    pub fn dim(&self) -> Result<usize, CliError> {
        let d = match (&self.knots.m, &self.knots.axes) {
            (Some(m), None) => m.len(),
            (None, Some(a)) => a.len(),
            _ => return Err(CliError::Input("knots need exactly one of `m` or `axes`".into())),
        };
        if d == 0 || d > 2 {
            return Err(CliError::Input("one or two input dimensions are supported".into()));
        }
        Ok(d)
    }

    pub fn scaling(&self) -> Result<UnitScaling<f64>, CliError> {
        match &self.domain {
            Some(d) => Ok(UnitScaling::new(d.lower.clone(), d.upper.clone())?),
            None => Ok(UnitScaling::identity(self.dim()?)),
        }
    }

    pub fn grid(&self) -> Result<KnotGrid<f64>, CliError> {
        match (&self.knots.m, &self.knots.axes) {
            (Some(m), None) => match m.as_slice() {
                [m] => Ok(KnotGrid::uniform(*m)?),
                [m1, m2] => Ok(KnotGrid::uniform_2d(*m1, *m2)?),
                _ => Err(CliError::Input("one or two knot counts expected".into())),
            },
            (None, Some(axes)) => {
                let scaling = self.scaling()?;
                let unit = axes
                    .iter()
                    .enumerate()
                    .map(|(k, axis)| {
                        axis.iter()
                            .map(|&t| {
                                let (l, u) = (scaling.lower()[k], scaling.upper()[k]);
                                let s = (t - l) / (u - l);
                                if (-1e-12..=1.0 + 1e-12).contains(&s) {
                                    Ok(s.clamp(0.0, 1.0))
                                } else {
                                    Err(CliError::Input(format!("knot {t} outside the domain on axis {k}")))
                                }
                            })
                            .collect::<Result<Vec<f64>, CliError>>()
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(KnotGrid::new(unit)?)
            }
            _ => Err(CliError::Input("knots need exactly one of `m` or `axes`".into())),
        }
    }

    pub fn kernel_params(&self) -> Result<KernelParams<f64>, CliError> {
        Ok(KernelParams::new(
            self.kernel.family,
            self.kernel.variance,
            self.kernel.lengthscales.clone(),
        )?)
    }

    pub fn param_domain(&self, e: &EstimationSpec) -> Result<ParamDomain, CliError> {
        let domain = ParamDomain {
            variance: e.variance,
            lengthscales: e.lengthscales.clone(),
            starts: e.starts,
            max_evaluations: e.max_evaluations,
            lhs_candidates: e.lhs_candidates,
        };
        domain.validate()?;
        if e.orthant_draws == 0 {
            return Err(CliError::Input("orthant_draws must be positive".into()));
        }
        Ok(domain)
    }

    pub fn orthant(&self, e: &EstimationSpec, seed: u64) -> OrthantConfig {
        OrthantConfig {
            n_draws: e.orthant_draws,
            seed,
        }
    }

    /// Sampler settings with the run seed applied.
    pub fn sampler_config(&self, seed: u64) -> SamplerConfig {
        SamplerConfig {
            seed,
            ..self.sampler.clone()
        }
    }
}

pub fn sampler_label(cfg: &SamplerConfig) -> String {
    match cfg.kind {
        SamplerKind::Gibbs => format!("thinning = {}", cfg.thinning),
        SamplerKind::Mh => format!("eta = {}", cfg.step_scale),
        SamplerKind::Hmc if cfg.thinning > 1 => format!("thinning = {}", cfg.thinning),
        _ => "-".into(),
    }
}

/// Stacks the listed builders on `grid`. An empty list gives a vacuous system.
pub fn build_system(
    specs: &[ConstraintSpec],
    grid: &KnotGrid<f64>,
    scaling: &UnitScaling<f64>,
) -> Result<LinearConstraintSystem<f64>, CliError> {
    let m = grid.size();
    let one_d = |what: &str| -> Result<usize, CliError> {
        if grid.dim() == 1 {
            Ok(m)
        } else {
            Err(CliError::Input(format!("{what} constraints are only defined on 1D grids")))
        }
    };
    let mut parts = Vec::with_capacity(specs.len().max(1));
    for spec in specs {
        parts.push(match spec {
            ConstraintSpec::Bounds { lower, upper } => LinearConstraintSystem::bounds(m, *lower, *upper)?,
            ConstraintSpec::Monotone { axes } => {
                if grid.dim() == 1 && axes.as_ref().is_none_or(|a| a == &[0]) {
                    LinearConstraintSystem::monotonicity(m)?
                } else {
                    let all: Vec<usize> = (0..grid.dim()).collect();
                    LinearConstraintSystem::monotonicity_2d(grid, axes.as_deref().unwrap_or(&all))?
                }
            }
            ConstraintSpec::Convex => LinearConstraintSystem::convexity(one_d("convexity")?)?,
            ConstraintSpec::ReducedBoundedMonotone { lower, upper } => {
                LinearConstraintSystem::reduced_bounded_monotone(one_d("reduced bounded-monotone")?, *lower, *upper)?
            }
            ConstraintSpec::Interval { pieces } => {
                one_d("interval")?;
                let to_unit = |x: f64| -> Result<f64, CliError> { Ok(scaling.to_unit(&[x])?[0]) };
                let pieces = pieces
                    .iter()
                    .map(|p| {
                        Ok(IntervalPiece {
                            start: to_unit(p.start)?,
                            end: to_unit(p.end)?,
                            shapes: p
                                .shapes
                                .iter()
                                .map(|s| match *s {
                                    ShapeSpec::Bounds { lower, upper } => Shape::Bounds { lower, upper },
                                    ShapeSpec::Monotone => Shape::Monotone,
                                    ShapeSpec::Convex => Shape::Convex,
                                })
                                .collect(),
                        })
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                LinearConstraintSystem::interval_constraints(grid, &pieces)?
            }
            ConstraintSpec::Custom { matrix, lower, upper } => {
                if matrix.iter().any(|r| r.len() != m) {
                    return Err(CliError::Input(format!("custom constraint rows need {m} entries")));
                }
                let rows = matrix.len();
                let a = DMatrix::from_fn(rows, m, |i, j| matrix[i][j]);
                LinearConstraintSystem::custom(a, DVector::from_vec(lower.clone()), DVector::from_vec(upper.clone()))?
            }
        });
    }
    if parts.is_empty() {
        parts.push(LinearConstraintSystem::bounds(m, f64::NEG_INFINITY, f64::INFINITY)?);
    }
    let refs: Vec<&LinearConstraintSystem<f64>> = parts.iter().collect();
    Ok(LinearConstraintSystem::stack(&refs)?)
}
