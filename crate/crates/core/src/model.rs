//! End-to-end constrained model: knots, kernel, data and constraint system,
//! with MAP, sampling and pointwise prediction.

use nalgebra::{DMatrix, DVector};

use crate::basis::KnotGrid;
use crate::constraints::LinearConstraintSystem;
use crate::diagnostics::quantile_sorted;
use crate::error::{check_len, Error, Result};
use crate::kernels::{GramMatrix, KernelParams};
use crate::map_solver::{map_from_target, MapOptions, MapResult};
use crate::posterior::{condition_on_data, truncated_target, ConditionalGaussian, TruncatedGaussian};
use crate::samplers::{sample, SampleChain, SamplerConfig};
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct ConstrainedGp<T: Real> {
    grid: KnotGrid<T>,
    kernel: KernelParams<T>,
    design: Vec<Vec<T>>,
    y: DVector<T>,
    system: LinearConstraintSystem<T>,
    interp: DMatrix<T>,
    prior: GramMatrix<T>,
    cond: ConditionalGaussian<T>,
    target: TruncatedGaussian<T>,
}

/// Pointwise posterior summaries from a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T: Real> {
    pub mean: Vec<T>,
    pub variance: Vec<T>,
    pub q05: Vec<T>,
    pub q95: Vec<T>,
}

impl<T: Real> ConstrainedGp<T> {
    /// `design` points live in the unit cube of the grid's dimension.
    pub fn new(
        grid: KnotGrid<T>,
        kernel: KernelParams<T>,
        design: Vec<Vec<T>>,
        y: DVector<T>,
        system: LinearConstraintSystem<T>,
    ) -> Result<Self> {
        check_len("kernel dimension", grid.dim(), kernel.dim())?;
        check_len("observations", design.len(), y.len())?;
        check_len("constraint system width", grid.size(), system.dim())?;
        let interp = grid.interp_matrix(&design)?;
        let prior = kernel.gram(&grid.knot_points(), kernel.default_jitter())?;
        let cond = condition_on_data(&prior, &interp, &y, kernel.default_jitter())?;
        let target = truncated_target(&cond, &system)?;
        Ok(Self {
            grid,
            kernel,
            design,
            y,
            system,
            interp,
            prior,
            cond,
            target,
        })
    }

    pub fn grid(&self) -> &KnotGrid<T> {
        &self.grid
    }

    pub fn kernel(&self) -> &KernelParams<T> {
        &self.kernel
    }

    pub fn design(&self) -> &[Vec<T>] {
        &self.design
    }

    pub fn observations(&self) -> &DVector<T> {
        &self.y
    }

    pub fn system(&self) -> &LinearConstraintSystem<T> {
        &self.system
    }

    pub fn interp(&self) -> &DMatrix<T> {
        &self.interp
    }

    pub fn prior(&self) -> &GramMatrix<T> {
        &self.prior
    }

    pub fn conditional(&self) -> &ConditionalGaussian<T> {
        &self.cond
    }

    pub fn target(&self) -> &TruncatedGaussian<T> {
        &self.target
    }

    pub fn map(&self, opts: &MapOptions) -> Result<MapResult<T>> {
        map_from_target(&self.cond, &self.target, &self.system, opts)
    }

    /// Samples starting from (or, for RSM, centred at) the MAP.
    pub fn sample(&self, map: &MapResult<T>, cfg: &SamplerConfig) -> Result<SampleChain<T>> {
        sample(&self.target, &map.latent, cfg)
    }

    /// Knot-value draws of a chain, one per row.
    pub fn xi_draws(&self, chain: &SampleChain<T>) -> DMatrix<T> {
        chain
            .xi_draws(&self.target)
            .expect("conditional targets always carry a lift")
    }

    /// Piecewise-linear value of knot vector `xi` at each point.
    pub fn eval(&self, xi: &DVector<T>, points: &[Vec<T>]) -> Result<Vec<T>> {
        points.iter().map(|x| self.grid.eval(xi, x)).collect()
    }

    /// Mean, variance and 5%/95% quantiles of the interpolant over the draws.
    pub fn predict(&self, xi_draws: &DMatrix<T>, points: &[Vec<T>]) -> Result<Prediction<T>> {
        let n = xi_draws.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("cannot predict from an empty chain".into()));
        }
        check_len("draw width", self.grid.size(), xi_draws.ncols())?;
        let mut out = Prediction {
            mean: Vec::with_capacity(points.len()),
            variance: Vec::with_capacity(points.len()),
            q05: Vec::with_capacity(points.len()),
            q95: Vec::with_capacity(points.len()),
        };
        let mut values = vec![0.0f64; n];
        for x in points {
            let row = self.grid.basis_row(x)?;
            for (i, v) in values.iter_mut().enumerate() {
                *v = row
                    .iter()
                    .fold(T::zero(), |acc, &(j, w)| acc + w * xi_draws[(i, j)])
                    .as_f64();
            }
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = if n > 1 {
                values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)
            } else {
                0.0
            };
            values.sort_by(f64::total_cmp);
            out.mean.push(T::lit(mean));
            out.variance.push(T::lit(var));
            out.q05.push(T::lit(quantile_sorted(&values, 0.05)));
            out.q95.push(T::lit(quantile_sorted(&values, 0.95)));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;
    use crate::samplers::SamplerKind;

    #[test]
    fn bounded_monotone_pipeline() {
        let m = 30;
        let grid = KnotGrid::uniform(m).unwrap();
        let kernel = KernelParams::new(KernelFamily::SquaredExponential, 1.0, vec![0.2]).unwrap();
        let design: Vec<Vec<f64>> = (0..5).map(|i| vec![0.1 + 0.2 * i as f64]).collect();
        let y = DVector::from_iterator(5, design.iter().map(|x| x[0] * x[0]));
        let system = LinearConstraintSystem::stack(&[
            &LinearConstraintSystem::bounds(m, 0.0, 1.0).unwrap(),
            &LinearConstraintSystem::monotonicity(m).unwrap(),
        ])
        .unwrap();
        let gp = ConstrainedGp::new(grid, kernel, design.clone(), y.clone(), system).unwrap();
        let map = gp.map(&MapOptions::default()).unwrap();
        let chain = gp.sample(&map, &SamplerConfig::new(SamplerKind::Hmc, 500, 1)).unwrap();
        let xi = gp.xi_draws(&chain);
        for row in xi.row_iter() {
            assert!(gp.system().is_feasible(&row.transpose(), 1e-9));
        }
        let pred = gp.predict(&xi, &design).unwrap();
        for i in 0..5 {
            assert!((pred.mean[i] - y[i]).abs() < 1e-6);
            assert!(pred.q95[i] - pred.q05[i] < 1e-6);
        }
        let grid_pts: Vec<Vec<f64>> = (0..=20).map(|i| vec![i as f64 / 20.0]).collect();
        let pred = gp.predict(&xi, &grid_pts).unwrap();
        assert!(pred.q05.iter().all(|&v| v >= -1e-9));
        assert!(pred.q95.iter().all(|&v| v <= 1.0 + 1e-9));
        assert!(pred.mean.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        assert!(gp.predict(&DMatrix::zeros(0, 30), &grid_pts).is_err());
    }
}
