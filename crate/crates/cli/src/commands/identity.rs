use clap::Args;
use serde::Serialize;
use varinfer::distributions::{CategoricalParams, GaussianParams};
use varinfer::oracle::{conjugate_elbo, conjugate_log_evidence, elbo_kl_identity, ConjugateModel, DiscreteJoint};
use varinfer::Rng;

use super::{names, require};
use crate::error::CliError;
use crate::output::OutDir;
use crate::settings::Settings;
use crate::Common;

/// Largest residual tolerated before the check fails.
pub const IDENTITY_TOL: f64 = 1e-10;

#[derive(Debug, Args)]
pub struct IdentityArgs {
    #[command(flatten)]
    pub common: Common,
    /// Random models per check [default: 200]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Largest number of latent states in a random discrete model [default: 8]
    #[arg(long)]
    pub max_states: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct IdentitySettings {
    pub trials: usize,
    pub max_states: usize,
}

pub fn resolve(a: &IdentityArgs, s: &mut Settings) -> Result<IdentitySettings, CliError> {
    let v = IdentitySettings {
        trials: s.get("trials", a.trials, 200)?,
        max_states: s.get("max-states", a.max_states, 8)?,
    };
    require(v.trials >= 1, || "trials must be at least 1".into())?;
    require(v.max_states >= 2, || "max-states must be at least 2".into())?;
    Ok(v)
}

#[derive(Debug, Serialize)]
pub struct TrialEntry {
    pub trial: usize,
    pub n_z: usize,
    pub n_x: usize,
    /// `|ELBO + KL − log p(x)|` for a random `q` on the discrete model.
    pub identity_residual: f64,
    /// `ELBO − log p(x)` for a random Gaussian `q` on the conjugate model; never positive.
    pub conjugate_bound_excess: f64,
    /// `|ELBO − log p(x)|` at the exact posterior of the conjugate model.
    pub posterior_gap: f64,
}

#[derive(Debug, Serialize)]
pub struct IdentityReport {
    pub trials: usize,
    pub tolerance: f64,
    pub max_identity_residual: f64,
    pub max_conjugate_bound_excess: f64,
    pub max_posterior_gap: f64,
    pub passed: bool,
    pub entries: Vec<TrialEntry>,
}

fn random_probs(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| -rng.uniform_open().ln()).collect()
}

fn trial(rng: &mut Rng, index: usize, max_states: usize) -> Result<TrialEntry, CliError> {
    let n_z = 2 + rng.below(max_states - 1);
    let n_x = 1 + rng.below(4);
    let table = random_probs(rng, n_z * n_x);
    let total: f64 = table.iter().sum();
    let joint = DiscreteJoint::new(n_z, n_x, table.into_iter().map(|p| p / total).collect())?;
    let x = rng.below(n_x);
    let q = CategoricalParams::from_weights(random_probs(rng, n_z))?;
    let r = elbo_kl_identity(&joint, x, &q)?;
    let identity_residual = (r.elbo + r.kl - r.log_evidence).abs();

    let model = ConjugateModel::new((4.0 * rng.uniform() - 2.0).exp())?;
    let spread = (1.0 + model.prior_var()).sqrt();
    let data: Vec<f64> = (0..1 + rng.below(10)).map(|_| spread * rng.standard_normal()).collect();
    let evidence = conjugate_log_evidence(&model, &data)?;
    let q = GaussianParams::univariate(2.0 * rng.standard_normal(), (5.0 * rng.uniform() - 3.0).exp())?;
    let conjugate_bound_excess = conjugate_elbo(&model, &data, &q)? - evidence;
    let posterior_gap = (conjugate_elbo(&model, &data, &model.posterior(&data)?)? - evidence).abs();
    Ok(TrialEntry {
        trial: index,
        n_z,
        n_x,
        identity_residual,
        conjugate_bound_excess,
        posterior_gap,
    })
}

pub fn run_suite(seed: u64, settings: &IdentitySettings) -> Result<IdentityReport, CliError> {
    let mut rng = Rng::new(seed);
    let entries = (0..settings.trials)
        .map(|i| trial(&mut rng, i, settings.max_states))
        .collect::<Result<Vec<_>, _>>()?;
    let max = |f: fn(&TrialEntry) -> f64| entries.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let max_identity_residual = max(|e| e.identity_residual);
    let max_conjugate_bound_excess = max(|e| e.conjugate_bound_excess);
    let max_posterior_gap = max(|e| e.posterior_gap);
    let passed = max_identity_residual < IDENTITY_TOL
        && max_conjugate_bound_excess <= IDENTITY_TOL
        && max_posterior_gap < IDENTITY_TOL;
    Ok(IdentityReport {
        trials: settings.trials,
        tolerance: IDENTITY_TOL,
        max_identity_residual,
        max_conjugate_bound_excess,
        max_posterior_gap,
        passed,
        entries,
    })
}

pub fn execute(s: &IdentitySettings, seed: u64, out: &OutDir) -> Result<(Vec<String>, String), CliError> {
    let report = run_suite(seed, s)?;
    out.write_json("report.json", &report)?;
    let line = format!(
        "identity-check: {} trials, max residual {:.3e}, max bound excess {:.3e}, max posterior gap {:.3e}",
        report.trials, report.max_identity_residual, report.max_conjugate_bound_excess, report.max_posterior_gap
    );
    if !report.passed {
        return Err(CliError::Numerical(format!("identity violated: {line}")));
    }
    Ok((names(&["report.json"]), line))
}
