//! Gaussian process regression under linear inequality constraints.
//!
//! The latent function is approximated by a piecewise-linear interpolant of
//! its values at a grid of knots. Shape information (bounds, monotonicity,
//! convexity) becomes a system of linear inequalities on those knot values,
//! and the posterior of the knot values is a truncated Gaussian that can be
//! maximised, sampled and integrated.
//!
//! Numerical types are generic over [`Real`] (`f32` or `f64`); the aliases at
//! the crate root fix the scalar for the common cases.

pub mod basis;
pub mod constraints;
pub mod diagnostics;
pub mod error;
pub mod kernels;
pub mod likelihood;
pub mod map_solver;
pub mod model;
pub mod orthant;
pub mod posterior;
pub mod samplers;
pub mod scalar;

pub use basis::{KnotGrid, UnitScaling};
pub use constraints::{IntervalPiece, LinearConstraintSystem, RowKind, RowLabel, Shape};
pub use diagnostics::{ess, ess_report, mv_ess, pva, q2, EssReport, PredictionReport};
pub use error::{Error, Result};
pub use kernels::{GramMatrix, KernelFamily, KernelParams};
pub use likelihood::{
    constrained_log_likelihood, log_likelihood, maximize, EstimationProblem, EstimationResult, Objective,
    OrthantConfig, ParamDomain,
};
pub use map_solver::{solve_latent_mode, solve_map, LatentMode, MapOptions, MapResult};
pub use model::{ConstrainedGp, Prediction};
pub use orthant::{log_orthant_prob, OrthantEstimate};
pub use posterior::{back_solve, condition_on_data, truncated_target, ConditionalGaussian, TruncatedGaussian};
pub use samplers::{sample, sample_truncated_1d, SampleChain, SamplerConfig, SamplerKind, SamplerWarnings};
pub use scalar::Real;

pub type KnotGrid64 = KnotGrid<f64>;
pub type KernelParams64 = KernelParams<f64>;
pub type ConstraintSystem64 = LinearConstraintSystem<f64>;
pub type TruncatedGaussian64 = TruncatedGaussian<f64>;
pub type SampleChain64 = SampleChain<f64>;
pub type ConstrainedGp64 = ConstrainedGp<f64>;

pub type KnotGrid32 = KnotGrid<f32>;
pub type KernelParams32 = KernelParams<f32>;
pub type ConstraintSystem32 = LinearConstraintSystem<f32>;
pub type TruncatedGaussian32 = TruncatedGaussian<f32>;
pub type SampleChain32 = SampleChain<f32>;
pub type ConstrainedGp32 = ConstrainedGp<f32>;
