use clap::Args;
use serde::Serialize;
use varinfer::distributions::{mixture_logpdf, normal_logpdf, GaussianParams, MixtureParams};
use varinfer::divergence::{forward_kl_quadrature, i_projection, m_projection, reverse_kl_quadrature, IProjectionConfig};

use super::{names, require};
use crate::error::CliError;
use crate::output::{Csv, OutDir};
use crate::settings::Settings;
use crate::Common;

pub const DEFAULT_TARGET: &str = "0.5:-3:1,0.5:3:1";

#[derive(Debug, Args)]
pub struct KlprojArgs {
    #[command(flatten)]
    pub common: Common,
    /// Target mixture as comma-separated weight:mean:var triples [default: 0.5:-3:1,0.5:3:1]
    #[arg(long, allow_hyphen_values = true)]
    pub target: Option<String>,
    /// Initial mean of the first reverse-KL fit [default: -2]
    #[arg(long, allow_negative_numbers = true)]
    pub init_a_mean: Option<f64>,
    /// Initial variance of the first reverse-KL fit [default: 1]
    #[arg(long)]
    pub init_a_var: Option<f64>,
    /// Initial mean of the second reverse-KL fit [default: 2]
    #[arg(long, allow_negative_numbers = true)]
    pub init_b_mean: Option<f64>,
    /// Initial variance of the second reverse-KL fit [default: 1]
    #[arg(long)]
    pub init_b_var: Option<f64>,
    /// Gradient steps of each reverse-KL fit [default: 2000]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Step size of each reverse-KL fit [default: 0.05]
    #[arg(long)]
    pub step_size: Option<f64>,
    /// Left end of the density grid [default: -10]
    #[arg(long, allow_negative_numbers = true)]
    pub grid_min: Option<f64>,
    /// Right end of the density grid [default: 10]
    #[arg(long, allow_negative_numbers = true)]
    pub grid_max: Option<f64>,
    /// Points in the density grid [default: 401]
    #[arg(long)]
    pub grid_points: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct KlprojSettings {
    pub target: MixtureParams,
    pub inits: [(f64, f64); 2],
    pub projection: IProjectionConfig,
    pub grid: (f64, f64, usize),
}

/// Parses `w:mean:var,w:mean:var,…`.
pub fn parse_target(spec: &str) -> Result<MixtureParams, CliError> {
    let parts = spec
        .split(',')
        .map(|triple| {
            let fields: Vec<&str> = triple.trim().split(':').collect();
            let nums: Vec<f64> = fields
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::Validation(format!("target component {triple:?}: expected weight:mean:var")))?;
            match nums[..] {
                [w, m, v] => Ok((w, m, v)),
                _ => Err(CliError::Validation(format!("target component {triple:?}: expected weight:mean:var"))),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MixtureParams::univariate(&parts)?)
}

pub fn resolve(a: &KlprojArgs, s: &mut Settings) -> Result<KlprojSettings, CliError> {
    let target: String = s.get("target", a.target.clone(), DEFAULT_TARGET.to_string())?;
    let inits = [
        (s.get("init-a-mean", a.init_a_mean, -2.0)?, s.get("init-a-var", a.init_a_var, 1.0)?),
        (s.get("init-b-mean", a.init_b_mean, 2.0)?, s.get("init-b-var", a.init_b_var, 1.0)?),
    ];
    let projection = IProjectionConfig {
        steps: s.get("steps", a.steps, 2000)?,
        step_size: s.get("step-size", a.step_size, 0.05)?,
    };
    let grid = (
        s.get("grid-min", a.grid_min, -10.0)?,
        s.get("grid-max", a.grid_max, 10.0)?,
        s.get("grid-points", a.grid_points, 401)?,
    );
    let target = parse_target(&target)?;
    for (m, v) in inits {
        require(m.is_finite() && v > 0.0 && v.is_finite(), || format!("invalid init mean {m}, var {v}"))?;
    }
    require(projection.steps >= 1, || "steps must be at least 1".into())?;
    require(projection.step_size > 0.0, || "step-size must be positive".into())?;
    require(grid.0 < grid.1 && grid.2 >= 2, || "grid needs grid-min < grid-max and at least 2 points".into())?;
    Ok(KlprojSettings {
        target,
        inits,
        projection,
        grid,
    })
}

#[derive(Serialize)]
struct Component {
    weight: f64,
    mean: f64,
    var: f64,
}

#[derive(Serialize)]
struct FitSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    init_mean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    init_var: Option<f64>,
    mean: f64,
    var: f64,
    /// `KL(target ‖ fit)`.
    forward_kl: f64,
    /// `KL(fit ‖ target)`.
    reverse_kl: f64,
}

#[derive(Serialize)]
struct Summary {
    target: Vec<Component>,
    m_projection: FitSummary,
    i_projection_a: FitSummary,
    i_projection_b: FitSummary,
}

fn summarize(target: &MixtureParams, fit: &GaussianParams, init: Option<(f64, f64)>) -> Result<FitSummary, CliError> {
    Ok(FitSummary {
        init_mean: init.map(|i| i.0),
        init_var: init.map(|i| i.1),
        mean: fit.mean()[0],
        var: fit.var()[0],
        forward_kl: forward_kl_quadrature(target, fit)?,
        reverse_kl: reverse_kl_quadrature(fit, target)?,
    })
}

pub fn execute(k: &KlprojSettings, out: &OutDir) -> Result<(Vec<String>, String), CliError> {
    let m = m_projection(&k.target)?;
    let fits = k
        .inits
        .iter()
        .map(|&(mean, var)| i_projection(&k.target, &GaussianParams::univariate(mean, var)?, k.projection))
        .collect::<Result<Vec<_>, _>>()?;

    let (lo, hi, n) = k.grid;
    let mut csv = Csv::new(&["x", "target", "m_projection", "i_projection_a", "i_projection_b"]);
    let density = |g: &GaussianParams, x: f64| normal_logpdf(x, g.mean()[0], g.var()[0]).exp();
    for p in 0..n {
        let x = lo + (hi - lo) * p as f64 / (n - 1) as f64;
        csv.float_row(
            None,
            &[
                x,
                mixture_logpdf(x, &k.target)?.exp(),
                density(&m, x),
                density(&fits[0].fit, x),
                density(&fits[1].fit, x),
            ],
        );
    }
    out.write("density.csv", &csv.finish())?;

    let summary = Summary {
        target: k
            .target
            .weights()
            .iter()
            .zip(k.target.components())
            .map(|(w, c)| Component {
                weight: *w,
                mean: c.mean()[0],
                var: c.var()[0],
            })
            .collect(),
        m_projection: summarize(&k.target, &m, None)?,
        i_projection_a: summarize(&k.target, &fits[0].fit, Some(k.inits[0]))?,
        i_projection_b: summarize(&k.target, &fits[1].fit, Some(k.inits[1]))?,
    };
    out.write_json("summary.json", &summary)?;
    let line = format!(
        "klproj: m-projection N({:.4}, {:.4}); i-projections N({:.4}, {:.4}) and N({:.4}, {:.4})",
        summary.m_projection.mean,
        summary.m_projection.var,
        summary.i_projection_a.mean,
        summary.i_projection_a.var,
        summary.i_projection_b.mean,
        summary.i_projection_b.var
    );
    Ok((names(&["density.csv", "summary.json"]), line))
}
