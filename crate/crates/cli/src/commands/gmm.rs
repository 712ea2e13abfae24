use clap::Args;
use serde::Serialize;
use varinfer::cavi::{cavi_fit, generate_gmm, match_clusters, CaviConfig};
use varinfer::distributions::normal_logpdf;
use varinfer::nn::fmt_f64;
use varinfer::trace::RunTrace;
use varinfer::Rng;

use super::{names, require};
use crate::error::CliError;
use crate::output::{trace_csv, Csv, OutDir};
use crate::settings::Settings;
use crate::Common;

#[derive(Debug, Args)]
pub struct GmmArgs {
    #[command(flatten)]
    pub common: Common,
    /// Number of mixture components [default: 3]
    #[arg(long)]
    pub k: Option<usize>,
    /// Points drawn per component [default: 1000]
    #[arg(long)]
    pub n_per_component: Option<usize>,
    /// Prior variance of the component means [default: 25]
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Maximum CAVI sweeps [default: 1000]
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Stop once the ELBO changes by less than this [default: 1e-6]
    #[arg(long)]
    pub tol: Option<f64>,
    /// Points in the density grid [default: 400]
    #[arg(long)]
    pub grid_points: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct GmmSettings {
    pub k: usize,
    pub n_per_component: usize,
    pub sigma2: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub grid_points: usize,
}

pub fn resolve(a: &GmmArgs, s: &mut Settings) -> Result<GmmSettings, CliError> {
    let g = GmmSettings {
        k: s.get("k", a.k, 3)?,
        n_per_component: s.get("n-per-component", a.n_per_component, 1000)?,
        sigma2: s.get("sigma2", a.sigma2, 25.0)?,
        max_iters: s.get("max-iters", a.max_iters, 1000)?,
        tol: s.get("tol", a.tol, 1e-6)?,
        grid_points: s.get("grid-points", a.grid_points, 400)?,
    };
    require(g.k >= 1, || "k must be at least 1".into())?;
    require(g.n_per_component >= 1, || "n-per-component must be at least 1".into())?;
    require(g.sigma2 > 0.0 && g.sigma2.is_finite(), || "sigma2 must be positive".into())?;
    require(g.max_iters >= 1, || "max-iters must be at least 1".into())?;
    require(g.tol >= 0.0, || "tol must be nonnegative".into())?;
    require(g.grid_points >= 2, || "grid-points must be at least 2".into())?;
    Ok(g)
}

#[derive(Serialize)]
struct Fit<'a> {
    k: usize,
    sigma2: f64,
    iterations: usize,
    converged: bool,
    initial_elbo: f64,
    final_elbo: f64,
    m: &'a [f64],
    s2: &'a [f64],
    mixing_weights: Vec<f64>,
    true_means: &'a [f64],
    /// `matched_true_component[j]` is the true component fitted by component `j`.
    matched_true_component: Option<Vec<usize>>,
    max_mean_error: Option<f64>,
    assignments: Vec<usize>,
}

pub fn execute(g: &GmmSettings, seed: u64, out: &OutDir) -> Result<(Vec<String>, String), CliError> {
    let mut rng = Rng::new(seed);
    let data = generate_gmm(&mut rng, g.k, g.n_per_component, g.sigma2)?;
    let config = CaviConfig {
        max_iters: g.max_iters,
        tol: g.tol,
    };
    let (state, cavi) = cavi_fit(&data.x, g.k, g.sigma2, config, &mut rng)?;
    if !state.m.iter().chain(&state.s2).all(|v| v.is_finite()) {
        return Err(CliError::Numerical("CAVI produced non-finite parameters".into()));
    }

    let mut csv = Csv::new(&["x", "true_cluster"]);
    for (x, c) in data.x.iter().zip(&data.true_assignments) {
        csv.row(&[fmt_f64(*x), c.to_string()]);
    }
    out.write("dataset.csv", &csv.finish())?;

    let mut trace = RunTrace::new("gmm", seed);
    for (i, elbo) in cavi.elbo_per_iter.iter().enumerate() {
        trace.push(i + 1, vec![("elbo".into(), *elbo)])?;
    }
    out.write("elbo_trace.csv", &trace_csv(&trace, "iteration", &["elbo"]))?;

    let n = data.x.len() as f64;
    let weights: Vec<f64> = (0..g.k)
        .map(|j| (0..data.x.len()).map(|i| state.phi_row(i)[j]).sum::<f64>() / n)
        .collect();
    let perm = if g.k <= 8 { Some(match_clusters(&state.m, &data.true_means)?) } else { None };
    let max_err = perm.as_ref().map(|p| {
        p.iter()
            .enumerate()
            .map(|(j, &t)| (state.m[j] - data.true_means[t]).abs())
            .fold(0.0, f64::max)
    });
    let fit = Fit {
        k: g.k,
        sigma2: g.sigma2,
        iterations: cavi.iterations_run,
        converged: cavi.converged,
        initial_elbo: cavi.initial_elbo,
        final_elbo: *cavi.elbo_per_iter.last().expect("at least one sweep"),
        m: &state.m,
        s2: &state.s2,
        mixing_weights: weights.clone(),
        true_means: &data.true_means,
        matched_true_component: perm,
        max_mean_error: max_err,
        assignments: state.hard_assignments(),
    };
    out.write_json("fit.json", &fit)?;

    let lo = data.x.iter().copied().fold(f64::INFINITY, f64::min) - 3.0;
    let hi = data.x.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0;
    let mut header = vec!["x".to_string()];
    header.extend((0..g.k).map(|j| format!("comp_{j}")));
    header.push("total".into());
    let mut csv = Csv::new(&header);
    for p in 0..g.grid_points {
        let x = lo + (hi - lo) * p as f64 / (g.grid_points - 1) as f64;
        let comps: Vec<f64> = (0..g.k).map(|j| weights[j] * normal_logpdf(x, state.m[j], 1.0).exp()).collect();
        let mut row = vec![x];
        row.extend(&comps);
        row.push(comps.iter().sum());
        csv.float_row(None, &row);
    }
    out.write("density_grid.csv", &csv.finish())?;

    let summary = format!(
        "gmm: {} sweeps, converged={}, final ELBO {:.6}",
        cavi.iterations_run, cavi.converged, fit.final_elbo
    );
    Ok((names(&["dataset.csv", "elbo_trace.csv", "fit.json", "density_grid.csv"]), summary))
}
