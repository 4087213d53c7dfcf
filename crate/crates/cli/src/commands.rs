//! The five workflows. Data outputs are deterministic given config, seed and
//! inputs; timings go to separate files.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use lineqgp::diagnostics::{chain_ess_report, EssReport, MvEss};
use lineqgp::samplers::write_matrix_csv;
use lineqgp::{
    maximize, ConstrainedGp, EstimationProblem, MapOptions, SampleChain, SamplerConfig, SamplerKind,
    SamplerWarnings, UnitScaling,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::artifact::ModelArtifact;
use crate::config::{build_system, sampler_label, ConstraintSpec, RunConfig};
use crate::error::CliError;
use crate::io::{create, read_chain, read_numeric_csv, read_observations, write_json};

/// Settings shared by every command after flag overrides.
pub struct Context {
    pub config: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub quiet: bool,
}

impl Context {
    pub fn new(config: RunConfig, seed: Option<u64>, out: Option<PathBuf>, quiet: bool) -> Result<Self, CliError> {
        let seed = seed.or(config.seed).unwrap_or(0);
        let out = out.or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&out)
            .map_err(|e| CliError::Input(format!("cannot create output directory {}: {e}", out.display())))?;
        Ok(Self {
            config,
            seed,
            out,
            quiet,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// Training data mapped to the unit cube.
fn training_data(cfg: &RunConfig, scaling: &UnitScaling<f64>) -> Result<(Vec<Vec<f64>>, DVector<f64>), CliError> {
    let (x, y) = read_observations(&cfg.data.train, cfg.dim()?)?;
    let unit = x
        .iter()
        .enumerate()
        .map(|(i, p)| {
            scaling
                .to_unit(p)
                .map_err(|e| CliError::Input(format!("{} line {}: {e}", cfg.data.train.display(), i + 2)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((unit, DVector::from_vec(y)))
}

fn build_model(cfg: &RunConfig, constraints: &[ConstraintSpec]) -> Result<ConstrainedGp<f64>, CliError> {
    let scaling = cfg.scaling()?;
    let grid = cfg.grid()?;
    let (design, y) = training_data(cfg, &scaling)?;
    let system = build_system(constraints, &grid, &scaling)?;
    Ok(ConstrainedGp::new(grid, cfg.kernel_params()?, design, y, system)?)
}

#[derive(Serialize)]
struct FitTiming {
    build_seconds: f64,
    map_seconds: f64,
}

pub fn fit(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let clock = Instant::now();
    let gp = build_model(cfg, &cfg.constraints)?;
    let build_seconds = clock.elapsed().as_secs_f64();
    let clock = Instant::now();
    let map = gp.map(&MapOptions::default())?;
    let map_seconds = clock.elapsed().as_secs_f64();
    let art = ModelArtifact::new(&gp, cfg.kernel.clone(), &cfg.scaling()?, &map);
    write_json(&ctx.path("model.json"), &art)?;
    write_json(
        &ctx.path("fit_timing.json"),
        &FitTiming {
            build_seconds,
            map_seconds,
        },
    )?;
    ctx.say(format!(
        "fit: {} knots, {} rows, {} observations; MAP objective {:.6e}, {} active rows -> {}",
        gp.grid().size(),
        gp.system().num_rows(),
        gp.observations().len(),
        art.map.objective,
        art.map.active_rows.len(),
        ctx.path("model.json").display()
    ));
    Ok(())
}

/// ESS summary without timing fields.
#[derive(Serialize)]
struct EssSummary {
    n_samples: usize,
    per_coordinate: Vec<Option<f64>>,
    q10: f64,
    q50: f64,
    q90: f64,
    mv_ess: Option<MvEss>,
}

impl From<&EssReport> for EssSummary {
    fn from(r: &EssReport) -> Self {
        Self {
            n_samples: r.n_samples,
            per_coordinate: r.per_coordinate.clone(),
            q10: r.q10,
            q50: r.q50,
            q90: r.q90,
            mv_ess: r.mv_ess,
        }
    }
}

#[derive(Serialize)]
struct Diagnostics {
    sampler: SamplerKind,
    config: SamplerConfig,
    n_samples: usize,
    accepted: usize,
    proposed: usize,
    acceptance_rate: f64,
    warnings: SamplerWarnings,
    /// Largest constraint violation over all draws.
    max_violation: f64,
    latent_dim: usize,
    /// `null` when fewer than two draws or every coordinate is constant.
    ess: Option<EssSummary>,
}

#[derive(Serialize)]
struct SampleTiming {
    wall_seconds: f64,
    tn_ess: Option<f64>,
}

fn max_violation(gp: &ConstrainedGp<f64>, xi: &DMatrix<f64>) -> f64 {
    xi.row_iter()
        .map(|r| gp.system().max_violation(&r.transpose()))
        .fold(0.0, f64::max)
}

pub fn sample(ctx: &Context, model: &Path) -> Result<(), CliError> {
    let art = ModelArtifact::load(model)?;
    let gp = art.model()?;
    let map = gp.map(&MapOptions::default())?;
    let cfg = ctx.config.sampler_config(ctx.seed);
    let chain = gp.sample(&map, &cfg)?;
    let xi = gp.xi_draws(&chain);
    let mut out = create(&ctx.path("chain.csv"))?;
    write_matrix_csv(&mut out, &xi, None, "xi")?;
    out.flush()?;
    let report = chain_ess_report(&chain, gp.target()).ok();
    let diag = Diagnostics {
        sampler: chain.kind,
        config: cfg,
        n_samples: chain.len(),
        accepted: chain.accepted,
        proposed: chain.proposed,
        acceptance_rate: chain.acceptance_rate(),
        warnings: chain.warnings,
        max_violation: max_violation(&gp, &xi),
        latent_dim: gp.target().latent_dim(),
        ess: report.as_ref().map(EssSummary::from),
    };
    write_json(&ctx.path("diagnostics.json"), &diag)?;
    write_json(
        &ctx.path("sample_timing.json"),
        &SampleTiming {
            wall_seconds: chain.wall_seconds,
            tn_ess: report.as_ref().map(|r| r.tn_ess),
        },
    )?;
    ctx.say(format!(
        "sample: {} {} draws, acceptance {:.4}, ESS q10 {} -> {}",
        chain.kind,
        chain.len(),
        chain.acceptance_rate(),
        report.map_or("-".into(), |r| format!("{:.0}", r.q10)),
        ctx.path("chain.csv").display()
    ));
    Ok(())
}

/// Prediction points in input coordinates.
fn prediction_points(cfg: &RunConfig, scaling: &UnitScaling<f64>) -> Result<Vec<Vec<f64>>, CliError> {
    let spec = cfg
        .prediction
        .as_ref()
        .ok_or_else(|| CliError::Input("config has no [prediction] section".into()))?;
    let dim = scaling.dim();
    if let Some(path) = &spec.points {
        let (_, rows) = read_numeric_csv(path, dim)?;
        return Ok(rows);
    }
    let n = spec.n.as_ref().expect("validated");
    let axis = |k: usize| -> Vec<f64> {
        let c = n[k];
        (0..c)
            .map(|i| if c == 1 { 0.5 } else { i as f64 / (c - 1) as f64 })
            .map(|s| scaling.from_unit(&vec![s; dim])[k])
            .collect()
    };
    Ok(match dim {
        1 => axis(0).into_iter().map(|x| vec![x]).collect(),
        _ => {
            let (a, b) = (axis(0), axis(1));
            a.iter().flat_map(|&x1| b.iter().map(move |&x2| vec![x1, x2])).collect()
        }
    })
}

pub fn predict(ctx: &Context, model: &Path, chain: &Path) -> Result<(), CliError> {
    let art = ModelArtifact::load(model)?;
    let gp = art.model()?;
    let scaling = art.scaling()?;
    let xi = read_chain(chain, gp.grid().size())?;
    if xi.nrows() == 0 {
        return Err(CliError::Input(format!("{}: chain has no draws", chain.display())));
    }
    let points = prediction_points(&ctx.config, &scaling)?;
    let unit = points
        .iter()
        .map(|p| scaling.to_unit(p))
        .collect::<Result<Vec<_>, _>>()?;
    let pred = gp.predict(&xi, &unit)?;
    let map_curve = gp.eval(&DVector::from_vec(art.map.xi.clone()), &unit)?;
    let mut out = create(&ctx.path("prediction.csv"))?;
    let mut header: Vec<String> = (1..=scaling.dim()).map(|k| format!("x{k}")).collect();
    header.extend(["mean", "q05", "q95", "map"].map(String::from));
    writeln!(out, "{}", header.join(","))?;
    for (i, p) in points.iter().enumerate() {
        let mut line = String::new();
        for v in p
            .iter()
            .chain([pred.mean[i], pred.q05[i], pred.q95[i], map_curve[i]].iter())
        {
            if !line.is_empty() {
                line.push(',');
            }
            let _ = write!(line, "{v}");
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    ctx.say(format!(
        "predict: {} points from {} draws -> {}",
        points.len(),
        xi.nrows(),
        ctx.path("prediction.csv").display()
    ));
    Ok(())
}

#[derive(Serialize)]
struct EstimateTiming {
    wall_seconds: f64,
}

pub fn estimate(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let spec = cfg
        .estimation
        .as_ref()
        .ok_or_else(|| CliError::Input("config has no [estimation] section".into()))?;
    let domain = cfg.param_domain(spec)?;
    let scaling = cfg.scaling()?;
    let grid = cfg.grid()?;
    let (design, y) = training_data(cfg, &scaling)?;
    let interp = grid.interp_matrix(&design)?;
    let system = build_system(&cfg.constraints, &grid, &scaling)?;
    let problem = EstimationProblem {
        family: cfg.kernel.family,
        grid: &grid,
        interp: &interp,
        y: &y,
        system: Some(&system),
        orthant: cfg.orthant(spec, ctx.seed),
    };
    let clock = Instant::now();
    let result = maximize(spec.method, &domain, &problem, ctx.seed)?;
    write_json(&ctx.path("estimation.json"), &result)?;
    write_json(
        &ctx.path("estimate_timing.json"),
        &EstimateTiming {
            wall_seconds: clock.elapsed().as_secs_f64(),
        },
    )?;
    ctx.say(format!(
        "estimate: variance {:.6}, lengthscales {:?}, objective {:.6} -> {}",
        result.variance,
        result.lengthscales,
        result.value,
        ctx.path("estimation.json").display()
    ));
    Ok(())
}

/// One (target, sampler) cell of the benchmark table.
struct Cell {
    target: String,
    sampler: SamplerKind,
    hyperparameter: String,
    outcome: Result<(SampleChain<f64>, Option<EssReport>), String>,
}

fn run_cell(gp: &Result<ConstrainedGp<f64>, String>, cfg: &SamplerConfig) -> Result<(SampleChain<f64>, Option<EssReport>), String> {
    let gp = gp.as_ref().map_err(Clone::clone)?;
    let map = gp.map(&MapOptions::default()).map_err(|e| e.to_string())?;
    let chain = gp.sample(&map, cfg).map_err(|e| e.to_string())?;
    let report = chain_ess_report(&chain, gp.target()).ok();
    Ok((chain, report))
}

pub fn benchmark(ctx: &Context) -> Result<(), CliError> {
    let cfg = &ctx.config;
    let spec = cfg
        .benchmark
        .as_ref()
        .ok_or_else(|| CliError::Input("config has no [benchmark] section".into()))?;
    let models: Vec<(String, Result<ConstrainedGp<f64>, String>)> = spec
        .targets
        .iter()
        .map(|t| match build_model(cfg, &t.constraints) {
            Err(CliError::Input(msg)) => Err(CliError::Input(format!("target '{}': {msg}", t.name))),
            other => Ok((t.name.clone(), other.map_err(|e| e.to_string()))),
        })
        .collect::<Result<_, _>>()?;
    let jobs: Vec<(usize, SamplerConfig)> = (0..models.len())
        .flat_map(|t| {
            spec.samplers.iter().map(move |s| {
                (
                    t,
                    SamplerConfig {
                        seed: ctx.seed,
                        ..s.clone()
                    },
                )
            })
        })
        .collect();
    let run = |(t, s): &(usize, SamplerConfig)| Cell {
        target: models[*t].0.clone(),
        sampler: s.kind,
        hyperparameter: sampler_label(s),
        outcome: run_cell(&models[*t].1, s),
    };
    let cells: Vec<Cell> = if spec.parallel {
        jobs.par_iter().map(run).collect()
    } else {
        jobs.iter().map(run).collect()
    };
    let mut table = csv::Writer::from_writer(create(&ctx.path("benchmark.csv"))?);
    let mut timing = csv::Writer::from_writer(create(&ctx.path("benchmark_timing.csv"))?);
    table.write_record([
        "target",
        "sampler",
        "hyperparameter",
        "status",
        "n_samples",
        "acceptance_rate",
        "ess_q10",
        "ess_q50",
        "ess_q90",
        "mv_ess",
    ])
    .map_err(csv_io)?;
    timing
        .write_record(["target", "sampler", "cpu_seconds", "tn_ess"])
        .map_err(csv_io)?;
    let dash = || "-".to_string();
    for c in &cells {
        let name = c.sampler.name().to_string();
        match &c.outcome {
            Ok((chain, report)) => {
                let fmt = |f: fn(&EssReport) -> f64| report.as_ref().map_or_else(dash, |r| f(r).to_string());
                table
                    .write_record([
                        c.target.clone(),
                        name.clone(),
                        c.hyperparameter.clone(),
                        "ok".into(),
                        chain.len().to_string(),
                        chain.acceptance_rate().to_string(),
                        fmt(|r| r.q10),
                        fmt(|r| r.q50),
                        fmt(|r| r.q90),
                        report
                            .as_ref()
                            .and_then(|r| r.mv_ess)
                            .map_or_else(dash, |m| m.value.to_string()),
                    ])
                    .map_err(csv_io)?;
                timing
                    .write_record([
                        c.target.clone(),
                        name,
                        chain.wall_seconds.to_string(),
                        fmt(|r| r.tn_ess),
                    ])
                    .map_err(csv_io)?;
            }
            Err(msg) => {
                ctx.say(format!("benchmark: {} / {}: {msg}", c.target, name));
                table
                    .write_record([
                        c.target.clone(),
                        name.clone(),
                        c.hyperparameter.clone(),
                        format!("failed: {msg}"),
                        dash(),
                        dash(),
                        dash(),
                        dash(),
                        dash(),
                        dash(),
                    ])
                    .map_err(csv_io)?;
                timing.write_record([c.target.clone(), name, dash(), dash()]).map_err(csv_io)?;
            }
        }
    }
    table.flush()?;
    timing.flush()?;
    ctx.say(format!(
        "benchmark: {} cells -> {}",
        cells.len(),
        ctx.path("benchmark.csv").display()
    ));
    Ok(())
}

fn csv_io(e: csv::Error) -> CliError {
    CliError::Io(e.into())
}
