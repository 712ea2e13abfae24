use clap::Args;
use varinfer::nn::Matrix;
use varinfer::vae::standard_normal_matrix;
use varinfer::vaegan::{
    generate_vaegan, gradient_check, reconstruct_vaegan, train_vaegan, two_moons, vaegan_to_string, VaeGanConfig,
    VaeGanModel,
};
use varinfer::Rng;

use super::vae::{GradcheckReport, GRADCHECK_LIMIT};
use super::{names, require};
use crate::error::CliError;
use crate::output::{matrix_csv, trace_csv, OutDir};
use crate::settings::Settings;
use crate::Common;

const GRADCHECK_ROWS: usize = 8;

#[derive(Debug, Args)]
pub struct VaeganArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training epochs [default: 500]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Weight of the feature reconstruction term in the decoder update [default: 1]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Encoder learning rate [default: 0.001]
    #[arg(long)]
    pub lr_enc: Option<f64>,
    /// Decoder learning rate [default: 0.001]
    #[arg(long)]
    pub lr_dec: Option<f64>,
    /// Discriminator learning rate [default: 0.001]
    #[arg(long)]
    pub lr_dis: Option<f64>,
    /// Latent dimension [default: 2]
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Hidden width of all three networks [default: 16]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Number of training points [default: 200]
    #[arg(long)]
    pub n_data: Option<usize>,
    /// Standard deviation of the jitter on the two moons [default: 0.08]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Points generated from the prior after training [default: 200]
    #[arg(long)]
    pub n_generate: Option<usize>,
    /// Training points reconstructed after training [default: 200]
    #[arg(long)]
    pub n_recon: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct VaeganSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub lrs: [f64; 3],
    pub latent_dim: usize,
    pub hidden: usize,
    pub n_data: usize,
    pub noise: f64,
    pub n_generate: usize,
    pub n_recon: usize,
}

pub fn resolve(a: &VaeganArgs, s: &mut Settings) -> Result<VaeganSettings, CliError> {
    let v = VaeganSettings {
        epochs: s.get("epochs", a.epochs, 500)?,
        batch_size: s.get("batch-size", a.batch_size, 32)?,
        gamma: s.get("gamma", a.gamma, 1.0)?,
        lrs: [
            s.get("lr-enc", a.lr_enc, 1e-3)?,
            s.get("lr-dec", a.lr_dec, 1e-3)?,
            s.get("lr-dis", a.lr_dis, 1e-3)?,
        ],
        latent_dim: s.get("latent-dim", a.latent_dim, 2)?,
        hidden: s.get("hidden", a.hidden, 16)?,
        n_data: s.get("n-data", a.n_data, 200)?,
        noise: s.get("noise", a.noise, 0.08)?,
        n_generate: s.get("n-generate", a.n_generate, 200)?,
        n_recon: s.get("n-recon", a.n_recon, 200)?,
    };
    require(v.gamma >= 0.0 && v.gamma.is_finite(), || "gamma must be nonnegative".into())?;
    require(v.lrs.iter().all(|l| *l >= 0.0 && l.is_finite()), || "learning rates must be nonnegative".into())?;
    require(v.batch_size >= 1, || "batch-size must be at least 1".into())?;
    require(v.latent_dim >= 1 && v.hidden >= 1, || "latent-dim and hidden must be positive".into())?;
    require(v.n_data >= 1, || "n-data must be at least 1".into())?;
    require(v.noise >= 0.0 && v.noise.is_finite(), || "noise must be nonnegative".into())?;
    Ok(v)
}

/// Seed-derived state of a run, split into non-overlapping streams.
pub struct VaeganRun {
    pub data: Matrix,
    pub model: VaeGanModel,
    pub check_rng: Rng,
    pub train_seed: u64,
    pub output_rng: Rng,
}

pub fn prepare(v: &VaeganSettings, seed: u64) -> Result<VaeganRun, CliError> {
    let mut master = Rng::new(seed);
    let data = two_moons(&mut master.split(), v.n_data, v.noise)?;
    let model = VaeGanModel::init(&mut master.split(), data.cols(), v.latent_dim, v.hidden)?;
    Ok(VaeganRun {
        data,
        model,
        check_rng: master.split(),
        train_seed: master.next_u64(),
        output_rng: master.split(),
    })
}

pub fn execute(v: &VaeganSettings, seed: u64, out: &OutDir) -> Result<(Vec<String>, String), CliError> {
    let VaeganRun {
        data,
        model,
        mut check_rng,
        train_seed,
        mut output_rng,
    } = prepare(v, seed)?;

    let rows: Vec<usize> = (0..data.rows().min(GRADCHECK_ROWS)).collect();
    let batch = data.select_rows(&rows);
    let eps = standard_normal_matrix(&mut check_rng, batch.rows(), v.latent_dim);
    let z_prior = standard_normal_matrix(&mut check_rng, batch.rows(), v.latent_dim);
    let err = gradient_check(&model, &batch, &eps, &z_prior, v.gamma, 1e-5)?;
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

    let config = VaeGanConfig {
        epochs: v.epochs,
        batch_size: v.batch_size,
        gamma: v.gamma,
        seed: train_seed,
        lrs: v.lrs,
    };
    let (model, trace) = train_vaegan(model, &data, &config)?;
    let metrics = ["l_prior", "l_llike", "l_gan", "dis_real", "dis_recon", "dis_prior"];
    out.write("trace.csv", &trace_csv(&trace, "epoch", &metrics))?;
    out.write("checkpoint.txt", &vaegan_to_string(&model, v.gamma))?;
    out.write("dataset.csv", &matrix_csv(&data, "x"))?;
    let samples = generate_vaegan(&model, &mut output_rng, v.n_generate)?;
    out.write("samples.csv", &matrix_csv(&samples, "x"))?;
    let recon_rows: Vec<usize> = (0..data.rows().min(v.n_recon)).collect();
    let recon = reconstruct_vaegan(&model, &mut output_rng, &data.select_rows(&recon_rows))?;
    out.write("reconstructions.csv", &matrix_csv(&recon, "x"))?;

    let summary = match trace.records.last() {
        Some(r) => format!(
            "vaegan: {} epochs, final L_prior {:.6}, L_llike {:.6}, L_GAN {:.6}, gradient check {err:.2e}",
            v.epochs,
            r.metric("l_prior").unwrap_or(f64::NAN),
            r.metric("l_llike").unwrap_or(f64::NAN),
            r.metric("l_gan").unwrap_or(f64::NAN)
        ),
        None => format!("vaegan: no training epochs, gradient check {err:.2e}"),
    };
    Ok((
        names(&["gradcheck.json", "trace.csv", "checkpoint.txt", "dataset.csv", "samples.csv", "reconstructions.csv"]),
        summary,
    ))
}
