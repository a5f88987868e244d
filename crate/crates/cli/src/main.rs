use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use coupled_vae::cost::{BernoulliDecoder, Decoder, GaussianDecoder};
use coupled_vae::data::{binarize, make_grid25, read_idx_images, BinarizeMode, GridSpec};
use coupled_vae::dists::{write_points_csv, EmpiricalMeasure, LatentSampler};
use coupled_vae::eval::{high_density_ratio, mmd_rbf, MetricsReport};
use coupled_vae::numcore::{seeded, Tensor2};
use coupled_vae::train::{train, DualOptimizer, EncoderNet, ModelPrior, Strategy, TrainConfig, TrainedModel};
use coupled_vae::Error;

#[derive(Parser)]
#[command(
    name = "cvae",
    version,
    about = "Variational autoencoders trained by entropic optimal transport"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the 25-Gaussian grid or a binarized IDX image set as CSV.
    GenerateData(GenerateArgs),
    /// Train a model and write checkpoint, diagnostics and config echo.
    Train(TrainArgs),
    /// Decode prior codes.
    Sample(SampleArgs),
    /// Posterior-mean latent codes of a dataset.
    Encode(EncodeArgs),
    /// Mixture and prior-matching metrics as JSON.
    Evaluate(EvaluateArgs),
    /// Train and evaluate over a list of epsilons.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// 5x5 grid of isotropic Gaussians.
    #[arg(long, conflicts_with = "idx")]
    grid25: bool,
    /// IDX image file to binarize.
    #[arg(long)]
    idx: Option<PathBuf>,
    #[arg(long, default_value_t = 2560)]
    max_count: usize,
    #[arg(long, value_enum, default_value_t = Binarize::Threshold)]
    binarize: Binarize,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = 300)]
    per_component: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Grid means; defaults to `<out stem>.means.csv`.
    #[arg(long)]
    means_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Binarize {
    Threshold,
    Scale,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Primal,
    Dual,
    Sinkhorn,
    BaselineVae,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Primal => Strategy::Primal,
            StrategyArg::Dual => Strategy::Dual,
            StrategyArg::Sinkhorn => Strategy::SinkhornDiscrete,
            StrategyArg::BaselineVae => Strategy::BaselineVae,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Likelihood {
    Gaussian,
    Bernoulli,
}

#[derive(Clone, Copy, ValueEnum)]
enum DualOptArg {
    Sgd,
    Scaled,
    Adam,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = StrategyArg::Dual)]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.5)]
    lr_u: f64,
    #[arg(long, default_value_t = 1e-3)]
    lr_theta: f64,
    #[arg(long, default_value_t = 2)]
    inner_iters: usize,
    #[arg(long, default_value_t = 128)]
    batch_m: usize,
    #[arg(long, default_value_t = 128)]
    batch_n: usize,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    dz: usize,
    #[arg(long, value_enum, default_value_t = Likelihood::Gaussian)]
    likelihood: Likelihood,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "128,128,128")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 64)]
    posterior_samples: usize,
    #[arg(long, value_enum, default_value_t = DualOptArg::Scaled)]
    dual_optimizer: DualOptArg,
    /// Potential steps on the final decoder after training (dual, primal).
    #[arg(long, default_value_t = 0)]
    refine_steps: usize,
    /// Number of categories for the sinkhorn strategy.
    #[arg(long, default_value_t = 10)]
    atoms: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Draw observations instead of decoded means.
    #[arg(long)]
    observe: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1024)]
    posterior_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct MetricArgs {
    /// Mixture means; enables the high-density ratio.
    #[arg(long)]
    means: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    /// Generated samples scored against the means.
    #[arg(long, default_value_t = 2000)]
    n_samples: usize,
    /// Aggregate-posterior and prior draws for the MMD.
    #[arg(long, default_value_t = 2000)]
    n_mmd: usize,
    /// Prior codes shared by all aggregate-posterior draws.
    #[arg(long, default_value_t = 8000)]
    mmd_pool: usize,
    /// Score decoded means instead of observation draws.
    #[arg(long)]
    decoded_means: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Training data; required for the MMD.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Score these samples instead of generating from the checkpoint.
    #[arg(long)]
    samples: Option<PathBuf>,
    #[command(flatten)]
    metrics: MetricArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,1.0")]
    epsilons: Vec<f64>,
    #[command(flatten)]
    metrics: MetricArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 1,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_tensor_csv(path: &Path, t: &Tensor2) -> CliResult<()> {
    let f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    Ok(write_points_csv(f, t, None)?)
}

fn read_tensor_csv(path: &Path) -> CliResult<Tensor2> {
    Ok(EmpiricalMeasure::read_csv(path)?.points().clone())
}

fn cmd_generate(a: GenerateArgs) -> CliResult<()> {
    if let Some(idx) = &a.idx {
        let images = read_idx_images(idx, a.max_count)?;
        let mode = match a.binarize {
            Binarize::Threshold => BinarizeMode::Threshold,
            Binarize::Scale => BinarizeMode::MeanScale,
        };
        binarize(&images, mode)?.write_csv(&a.out, false)?;
        return Ok(());
    }
    if !a.grid25 {
        return Err(CliError {
            code: 2,
            message: "choose a dataset: --grid25 or --idx <PATH>".into(),
        });
    }
    let spec = GridSpec {
        sigma: a.sigma,
        samples_per_component: a.per_component,
        seed: a.seed,
        ..GridSpec::default()
    };
    let g = make_grid25(&spec)?;
    g.data.write_csv(&a.out, false)?;
    let means_path = a.means_out.unwrap_or_else(|| a.out.with_extension("means.csv"));
    write_tensor_csv(&means_path, &g.means)
}

fn train_config(m: &ModelArgs, epsilon: f64) -> TrainConfig {
    TrainConfig {
        strategy: m.strategy.into(),
        epsilon,
        lr_u: m.lr_u,
        lr_theta: m.lr_theta,
        inner_iters: m.inner_iters,
        batch_m: m.batch_m,
        batch_n: m.batch_n,
        epochs: m.epochs,
        seed: m.seed,
        posterior_samples: m.posterior_samples,
        refine_steps: m.refine_steps,
        dual_optimizer: match m.dual_optimizer {
            DualOptArg::Sgd => DualOptimizer::Sgd,
            DualOptArg::Scaled => DualOptimizer::Scaled,
            DualOptArg::Adam => DualOptimizer::Adam,
        },
        ..TrainConfig::default()
    }
}

fn fit(m: &ModelArgs, data: &EmpiricalMeasure, epsilon: f64) -> CliResult<TrainedModel> {
    let cfg = train_config(m, epsilon);
    cfg.validate()?;
    let mut rng = seeded(m.seed);
    let x_dim = data.dim();
    let decoder = match m.likelihood {
        Likelihood::Gaussian => Decoder::Gaussian(GaussianDecoder::init(m.dz, &m.hidden, x_dim, m.seed)?),
        Likelihood::Bernoulli => Decoder::Bernoulli(BernoulliDecoder::init(m.dz, &m.hidden, x_dim, m.seed)?),
    };
    let (prior, encoder) = match cfg.strategy {
        Strategy::SinkhornDiscrete => (ModelPrior::random_atoms(m.atoms, m.dz, &mut rng)?, None),
        Strategy::BaselineVae => (
            ModelPrior::standard(m.dz),
            Some(EncoderNet::init(x_dim, &m.hidden, m.dz, m.seed.wrapping_add(1))?),
        ),
        _ => (ModelPrior::standard(m.dz), None),
    };
    Ok(train(&cfg, data, prior, decoder, encoder, &mut rng)?)
}

fn save_run(model: &TrainedModel, dir: &Path) -> CliResult<()> {
    create_dir(dir)?;
    model.save_checkpoint(dir.join("checkpoint.txt"))?;
    model.save_diagnostics(dir.join("diagnostics.csv"))?;
    write_text(&dir.join("config.txt"), &model.config.echo())
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let data = EmpiricalMeasure::read_csv(&a.model.data)?;
    let model = fit(&a.model, &data, a.model.epsilon)?;
    save_run(&model, &a.out)
}

fn cmd_sample(a: SampleArgs) -> CliResult<()> {
    let model = TrainedModel::load_checkpoint(&a.checkpoint)?;
    let x = model.generate(a.n, a.observe, &mut seeded(a.seed))?;
    write_tensor_csv(&a.out, &x)
}

fn cmd_encode(a: EncodeArgs) -> CliResult<()> {
    let model = TrainedModel::load_checkpoint(&a.checkpoint)?;
    let data = EmpiricalMeasure::read_csv(&a.data)?;
    let rep = model.latent_representation(&data, a.posterior_samples, &mut seeded(a.seed))?;
    write_tensor_csv(&a.out, &rep.means)
}

fn metrics(
    model: Option<&TrainedModel>,
    data: Option<&EmpiricalMeasure>,
    samples: Option<Tensor2>,
    m: &MetricArgs,
    seed: u64,
) -> CliResult<MetricsReport> {
    let mut report = MetricsReport::empty(seed);
    let mut rng = seeded(seed);
    let samples = match (samples, model) {
        (Some(s), _) => Some(s),
        (None, Some(model)) if m.means.is_some() => Some(model.generate(m.n_samples, !m.decoded_means, &mut rng)?),
        _ => None,
    };
    if let (Some(means), Some(s)) = (&m.means, &samples) {
        let means = read_tensor_csv(means)?;
        let mix = high_density_ratio(s, &means, m.sigma, 4.0)?;
        report.high_density_ratio = Some(mix.high_density_ratio);
        report.std_within_modes = Some(mix.std_within_modes);
    }
    if let (Some(model), Some(data)) = (model, data) {
        let agg = model.aggregate_posterior(data, m.n_mmd, m.mmd_pool, &mut rng)?;
        let prior = model.prior.sample_codes(m.n_mmd, &mut rng)?.z;
        let mmd = mmd_rbf(&agg.z, &prior, None)?;
        report.mmd = Some(mmd.value);
        report.mmd_bandwidth = Some(mmd.bandwidth);
        report.ess_min = agg.ess_min.is_finite().then_some(agg.ess_min);
    }
    Ok(report)
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult<()> {
    let model = a.checkpoint.as_deref().map(TrainedModel::load_checkpoint).transpose()?;
    let data = a.data.as_deref().map(EmpiricalMeasure::read_csv).transpose()?;
    let samples = a.samples.as_deref().map(read_tensor_csv).transpose()?;
    if model.is_none() && samples.is_none() {
        return Err(CliError {
            code: 2,
            message: "evaluate needs --checkpoint or --samples".into(),
        });
    }
    let report = metrics(model.as_ref(), data.as_ref(), samples, &a.metrics, a.seed)?;
    report.save_json(&a.out)?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> CliResult<()> {
    let data = EmpiricalMeasure::read_csv(&a.model.data)?;
    create_dir(&a.out)?;
    let mut table = String::from("epsilon,high_density_ratio,std_within_modes,mmd,mmd_bandwidth,ess_min\n");
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for &eps in &a.epsilons {
        let model = fit(&a.model, &data, eps)?;
        let dir = a.out.join(format!("eps-{eps}"));
        save_run(&model, &dir)?;
        let report = metrics(Some(&model), Some(&data), None, &a.metrics, a.model.seed)?;
        report.save_json(dir.join("metrics.json"))?;
        table.push_str(&format!(
            "{eps},{},{},{},{},{}\n",
            opt(report.high_density_ratio),
            opt(report.std_within_modes),
            opt(report.mmd),
            opt(report.mmd_bandwidth),
            opt(report.ess_min)
        ));
    }
    write_text(&a.out.join("sweep.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::GenerateData(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Encode(a) => cmd_encode(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
