use clap::Args;
use serde::Serialize;
use varinfer::nn::Matrix;
use varinfer::vae::{
    generate, gradient_check, reconstruct, standard_normal_matrix, train_vae, two_pattern_dataset, vae_to_string,
    LikelihoodKind, VaeConfig, VaeModel, VaeObjective,
};
use varinfer::Rng;

use super::{names, require};
use crate::error::CliError;
use crate::output::{matrix_csv, trace_csv, OutDir};
use crate::settings::Settings;
use crate::Common;

/// Runs abort when the pre-training gradient check exceeds this.
pub const GRADCHECK_LIMIT: f64 = 1e-3;
const GRADCHECK_ROWS: usize = 8;

#[derive(Debug, Args)]
pub struct VaeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training epochs [default: 200]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Latent samples per data point [default: 1]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Weight on the KL term [default: 1]
    #[arg(long)]
    pub beta: Option<f64>,
    /// KL target C in the penalty beta * |KL - C| [default: 0]
    #[arg(long)]
    pub capacity: Option<f64>,
    /// Adam learning rate [default: 0.005]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Latent dimension [default: 2]
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Hidden width of encoder and decoder [default: 32]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Number of training images [default: 200]
    #[arg(long)]
    pub n_data: Option<usize>,
    /// Pixel flip probability of the dataset [default: 0.05]
    #[arg(long)]
    pub flip: Option<f64>,
    /// bernoulli or gaussian-unit-var [default: bernoulli]
    #[arg(long)]
    pub likelihood: Option<LikelihoodKind>,
    /// Images generated from the prior after training [default: 16]
    #[arg(long)]
    pub n_generate: Option<usize>,
    /// Training images reconstructed after training [default: 16]
    #[arg(long)]
    pub n_recon: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct VaeSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub objective: VaeObjective,
    pub lr: f64,
    pub latent_dim: usize,
    pub hidden: usize,
    pub n_data: usize,
    pub flip: f64,
    pub likelihood: LikelihoodKind,
    pub n_generate: usize,
    pub n_recon: usize,
}

pub fn resolve(a: &VaeArgs, s: &mut Settings) -> Result<VaeSettings, CliError> {
    let v = VaeSettings {
        epochs: s.get("epochs", a.epochs, 200)?,
        batch_size: s.get("batch-size", a.batch_size, 16)?,
        objective: VaeObjective {
            samples: s.get("samples", a.samples, 1)?,
            beta: s.get("beta", a.beta, 1.0)?,
            capacity: s.get("capacity", a.capacity, 0.0)?,
        },
        lr: s.get("lr", a.lr, 5e-3)?,
        latent_dim: s.get("latent-dim", a.latent_dim, 2)?,
        hidden: s.get("hidden", a.hidden, 32)?,
        n_data: s.get("n-data", a.n_data, 200)?,
        flip: s.get("flip", a.flip, 0.05)?,
        likelihood: s.get("likelihood", a.likelihood, LikelihoodKind::Bernoulli)?,
        n_generate: s.get("n-generate", a.n_generate, 16)?,
        n_recon: s.get("n-recon", a.n_recon, 16)?,
    };
    v.objective.validate()?;
    require(v.batch_size >= 1, || "batch-size must be at least 1".into())?;
    require(v.lr >= 0.0 && v.lr.is_finite(), || "lr must be nonnegative".into())?;
    require(v.latent_dim >= 1 && v.hidden >= 1, || "latent-dim and hidden must be positive".into())?;
    require(v.n_data >= 1, || "n-data must be at least 1".into())?;
    require((0.0..=1.0).contains(&v.flip), || "flip must lie in [0, 1]".into())?;
    Ok(v)
}

/// Everything a run derives from the seed before training. The streams for
/// data, initialization, the gradient check, training and the output dumps
/// are split from one generator so they do not overlap.
pub struct VaeRun {
    pub data: Matrix,
    pub model: VaeModel,
    pub check_rng: Rng,
    pub train_seed: u64,
    pub output_rng: Rng,
}

pub fn prepare(v: &VaeSettings, seed: u64) -> Result<VaeRun, CliError> {
    let mut master = Rng::new(seed);
    let data = two_pattern_dataset(&mut master.split(), v.n_data, v.flip)?;
    let model = VaeModel::init(&mut master.split(), data.cols(), v.latent_dim, v.hidden, v.likelihood)?;
    Ok(VaeRun {
        data,
        model,
        check_rng: master.split(),
        train_seed: master.next_u64(),
        output_rng: master.split(),
    })
}

#[derive(Serialize)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    pub limit: f64,
    pub batch_rows: usize,
    pub passed: bool,
}

pub fn execute(v: &VaeSettings, seed: u64, out: &OutDir) -> Result<(Vec<String>, String), CliError> {
    let VaeRun {
        data,
        model,
        mut check_rng,
        train_seed,
        mut output_rng,
    } = prepare(v, seed)?;

    let rows: Vec<usize> = (0..data.rows().min(GRADCHECK_ROWS)).collect();
    let batch = data.select_rows(&rows);
    let noise: Vec<Matrix> = (0..v.objective.samples)
        .map(|_| standard_normal_matrix(&mut check_rng, batch.rows(), v.latent_dim))
        .collect();
    let err = gradient_check(&model, &batch, &noise, &v.objective, 1e-5)?;
    let report = GradcheckReport {
        max_relative_error: err,
        limit: GRADCHECK_LIMIT,
        batch_rows: batch.rows(),
        passed: err <= GRADCHECK_LIMIT,
    };
    out.write_json("gradcheck.json", &report)?;
    if !report.passed {
        return Err(CliError::Numerical(format!(
            "gradient check failed: max relative error {err:e} exceeds {GRADCHECK_LIMIT:e}"
        )));
    }

    let config = VaeConfig {
        epochs: v.epochs,
        batch_size: v.batch_size,
        objective: v.objective,
        seed: train_seed,
        lr: v.lr,
    };
    let (model, trace) = train_vae(model, &data, &config)?;
    out.write("trace.csv", &trace_csv(&trace, "epoch", &["loss", "recon", "kl", "total_elbo"]))?;
    out.write("checkpoint.txt", &vae_to_string(&model))?;
    out.write("dataset.csv", &matrix_csv(&data, "x"))?;
    let samples = generate(&model, &mut output_rng, v.n_generate)?;
    out.write("samples.csv", &matrix_csv(&samples, "p"))?;
    let recon_rows: Vec<usize> = (0..data.rows().min(v.n_recon)).collect();
    let recon = reconstruct(&model, &mut output_rng, &data.select_rows(&recon_rows))?;
    out.write("reconstructions.csv", &matrix_csv(&recon, "p"))?;

    let summary = match trace.records.last() {
        Some(r) => format!(
            "vae: {} epochs, final loss {:.6} (recon {:.6}, kl {:.6}), gradient check {err:.2e}",
            v.epochs,
            r.metric("loss").unwrap_or(f64::NAN),
            r.metric("recon").unwrap_or(f64::NAN),
            r.metric("kl").unwrap_or(f64::NAN)
        ),
        None => format!("vae: no training epochs, gradient check {err:.2e}"),
    };
    Ok((
        names(&["gradcheck.json", "trace.csv", "checkpoint.txt", "dataset.csv", "samples.csv", "reconstructions.csv"]),
        summary,
    ))
}
