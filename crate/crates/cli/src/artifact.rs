//! Fitted-model JSON written by `fit` and read by `sample` and `predict`.

use lineqgp::{ConstrainedGp, KernelParams, KnotGrid, LinearConstraintSystem, MapResult, RowLabel, UnitScaling};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::KernelSpec;
use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub format: u32,
    pub domain_lower: Vec<f64>,
    pub domain_upper: Vec<f64>,
    /// Knot locations per axis in unit coordinates.
    pub knots: Vec<Vec<f64>>,
    pub kernel: KernelSpec,
    /// Training inputs in unit coordinates.
    pub design: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub system: SystemArtifact,
    /// Mean of the knot values given the data, before truncation.
    pub conditional_mean: Vec<f64>,
    pub extra_jitter: f64,
    /// Dimension of the sampled (whitened) space.
    pub latent_dim: usize,
    pub map: MapSummary,
}

/// Infinite bounds are stored as `null`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemArtifact {
    pub digest: String,
    pub matrix: Vec<Vec<f64>>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
    pub labels: Vec<RowLabel>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSummary {
    pub xi: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub active_rows: Vec<usize>,
    pub max_violation: f64,
}

/// SHA-256 over the shape, matrix (row-major) and bounds in little-endian bytes.
pub fn system_digest(sys: &LinearConstraintSystem<f64>) -> String {
    let mut h = Sha256::new();
    h.update((sys.num_rows() as u64).to_le_bytes());
    h.update((sys.dim() as u64).to_le_bytes());
    for i in 0..sys.num_rows() {
        for j in 0..sys.dim() {
            h.update(sys.matrix()[(i, j)].to_le_bytes());
        }
    }
    for v in sys.lower().iter().chain(sys.upper().iter()) {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl SystemArtifact {
    pub fn from_system(sys: &LinearConstraintSystem<f64>) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        Self {
            digest: system_digest(sys),
            matrix: sys.matrix().row_iter().map(|r| r.iter().copied().collect()).collect(),
            lower: sys.lower().iter().map(|&v| finite(v)).collect(),
            upper: sys.upper().iter().map(|&v| finite(v)).collect(),
            labels: sys.labels().to_vec(),
        }
    }

    pub fn to_system(&self) -> Result<LinearConstraintSystem<f64>, CliError> {
        let q = self.matrix.len();
        let m = self.matrix.first().map_or(0, Vec::len);
        if self.matrix.iter().any(|r| r.len() != m) {
            return Err(CliError::Input("model: ragged constraint matrix".into()));
        }
        let sys = LinearConstraintSystem::new(
            DMatrix::from_fn(q, m, |i, j| self.matrix[i][j]),
            DVector::from_iterator(q, self.lower.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY))),
            DVector::from_iterator(q, self.upper.iter().map(|v| v.unwrap_or(f64::INFINITY))),
            self.labels.clone(),
        )?;
        if system_digest(&sys) != self.digest {
            return Err(CliError::Input("model: constraint system digest mismatch".into()));
        }
        Ok(sys)
    }
}

/// Rows whose value at the mode sits on a bound.
fn active_rows(sys: &LinearConstraintSystem<f64>, nu: &DVector<f64>) -> Vec<usize> {
    let near = |v: f64, b: f64| b.is_finite() && (v - b).abs() <= 1e-9 * (1.0 + b.abs());
    (0..sys.num_rows())
        .filter(|&k| near(nu[k], sys.lower()[k]) || near(nu[k], sys.upper()[k]))
        .collect()
}

impl ModelArtifact {
    pub fn new(gp: &ConstrainedGp<f64>, kernel: KernelSpec, scaling: &UnitScaling<f64>, map: &MapResult<f64>) -> Self {
        let grid = gp.grid();
        Self {
            format: FORMAT_VERSION,
            domain_lower: scaling.lower().to_vec(),
            domain_upper: scaling.upper().to_vec(),
            knots: (0..grid.dim()).map(|k| grid.axis(k).to_vec()).collect(),
            kernel,
            design: gp.design().to_vec(),
            y: gp.observations().iter().copied().collect(),
            system: SystemArtifact::from_system(gp.system()),
            conditional_mean: gp.conditional().mean().iter().copied().collect(),
            extra_jitter: gp.conditional().extra_jitter(),
            latent_dim: gp.target().latent_dim(),
            map: MapSummary {
                xi: map.xi.iter().copied().collect(),
                objective: map.objective,
                kkt_residual: map.kkt_residual,
                iterations: map.iterations,
                active_rows: active_rows(gp.system(), &map.nu),
                max_violation: gp.system().max_violation(&map.xi),
            },
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read model {}: {e}", path.display())))?;
        let art: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Input(format!("model {}: {e}", path.display())))?;
        if art.format != FORMAT_VERSION {
            return Err(CliError::Input(format!("model format {} is not supported", art.format)));
        }
        Ok(art)
    }

    pub fn scaling(&self) -> Result<UnitScaling<f64>, CliError> {
        Ok(UnitScaling::new(self.domain_lower.clone(), self.domain_upper.clone())?)
    }

    /// Rebuilds the model; the result is bitwise the one `fit` saw.
    pub fn model(&self) -> Result<ConstrainedGp<f64>, CliError> {
        let grid = KnotGrid::new(self.knots.clone())?;
        let kernel = KernelParams::new(self.kernel.family, self.kernel.variance, self.kernel.lengthscales.clone())?;
        let y = DVector::from_vec(self.y.clone());
        Ok(ConstrainedGp::new(grid, kernel, self.design.clone(), y, self.system.to_system()?)?)
    }
}
