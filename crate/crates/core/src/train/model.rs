use std::path::Path;

use rand::RngCore;

use super::config::{Strategy, TrainConfig};
use crate::cost::{BernoulliDecoder, Decoder, GaussianDecoder};
use crate::dists::{AtomPrior, CategoricalPrior, EmpiricalMeasure, GaussianPrior, LatentBatch, LatentSampler};
use crate::eot::SemiDualPotential;
use crate::error::{Error, Result};
use crate::eval::{aggregate_posterior_sample, latent_representation, AggregateSample, LatentRepresentation};
use crate::numcore::checkpoint::fmt_f64;
use crate::numcore::rng::fill_standard_normal;
use crate::numcore::{MlpParams, Tensor2, TextDocument};

/// Latent prior of a model: continuous Gaussian or categorical atoms.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelPrior {
    Gaussian(GaussianPrior),
    Atoms(AtomPrior),
}

impl ModelPrior {
    pub fn standard(dim: usize) -> Self {
        ModelPrior::Gaussian(GaussianPrior::standard(dim))
    }

    /// Uniform categorical prior with atoms drawn from `N(0, I)`.
    pub fn random_atoms(k: usize, dim: usize, rng: &mut dyn RngCore) -> Result<Self> {
        let mut atoms = vec![0.0; k * dim];
        fill_standard_normal(rng, &mut atoms);
        Ok(ModelPrior::Atoms(AtomPrior::new(
            CategoricalPrior::uniform(k)?,
            Tensor2::new(k, dim, atoms)?,
        )?))
    }

    fn as_sampler(&self) -> &dyn LatentSampler {
        match self {
            ModelPrior::Gaussian(p) => p,
            ModelPrior::Atoms(p) => p,
        }
    }

    fn write_to(&self, doc: &mut TextDocument) {
        match self {
            ModelPrior::Gaussian(p) => {
                doc.push_param("prior", "gaussian");
                doc.push_vector("prior_mean", p.mean());
                doc.push_vector("prior_std", p.std());
            }
            ModelPrior::Atoms(p) => {
                doc.push_param("prior", "atoms");
                doc.push_vector("prior_probs", p.prior.probs());
                doc.push_tensor("prior_atoms", &p.atoms);
            }
        }
    }

    fn read_from(doc: &TextDocument) -> Result<Self> {
        match doc.param("prior")? {
            "gaussian" => Ok(ModelPrior::Gaussian(GaussianPrior::new(
                doc.vector("prior_mean")?.to_vec(),
                doc.vector("prior_std")?.to_vec(),
            )?)),
            "atoms" => Ok(ModelPrior::Atoms(AtomPrior::new(
                CategoricalPrior::new(doc.vector("prior_probs")?.to_vec())?,
                doc.tensor("prior_atoms")?.clone(),
            )?)),
            other => Err(Error::Parse {
                line: 0,
                message: format!("unknown prior {other:?}"),
            }),
        }
    }
}

impl LatentSampler for ModelPrior {
    fn latent_dim(&self) -> usize {
        self.as_sampler().latent_dim()
    }

    fn sample_codes(&self, n: usize, rng: &mut dyn RngCore) -> Result<LatentBatch> {
        self.as_sampler().sample_codes(n, rng)
    }

    fn enumerate(&self) -> Option<LatentBatch> {
        self.as_sampler().enumerate()
    }

    fn code_mean(&self) -> Vec<f64> {
        self.as_sampler().code_mean()
    }
}

/// Amortized Gaussian posterior `q_φ(z|x) = N(μ(x), diag σ²(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderNet {
    /// `d_x → … → 2·d_z`, mean first.
    pub net: MlpParams,
    pub log_var_floor: f64,
}

impl EncoderNet {
    pub fn init(x_dim: usize, hidden: &[usize], z_dim: usize, seed: u64) -> Result<Self> {
        let mut sizes = vec![x_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * z_dim);
        Ok(Self {
            net: MlpParams::init(&sizes, seed)?,
            log_var_floor: crate::cost::DEFAULT_LOG_VAR_FLOOR,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.net.output_dim() / 2
    }

    /// Posterior means and clamped log-variances.
    pub fn encode(&self, x: &Tensor2) -> Result<(Tensor2, Tensor2)> {
        let raw = self.net.predict(x)?;
        Ok(self.split(&raw))
    }

    pub(crate) fn split(&self, raw: &Tensor2) -> (Tensor2, Tensor2) {
        let d = self.latent_dim();
        let mean = Tensor2::from_fn(raw.rows(), d, |i, k| raw.get(i, k)).expect("finite");
        let lv = Tensor2::from_fn(raw.rows(), d, |i, k| raw.get(i, d + k).max(self.log_var_floor)).expect("finite");
        (mean, lv)
    }

    /// One reparameterized draw per row.
    pub fn sample(&self, x: &Tensor2, rng: &mut dyn RngCore) -> Result<Tensor2> {
        let (mean, lv) = self.encode(x)?;
        let mut noise = vec![0.0; mean.rows() * mean.cols()];
        fill_standard_normal(rng, &mut noise);
        Tensor2::from_fn(mean.rows(), mean.cols(), |i, k| {
            mean.get(i, k) + (0.5 * lv.get(i, k)).exp() * noise[i * mean.cols() + k]
        })
    }
}

/// Closed-form `KL(N(μ, diag e^{lv}) ‖ N(0, I))`.
pub fn gaussian_kl(mean: &[f64], log_var: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(log_var)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochDiagnostics {
    pub epoch: usize,
    /// Semi-dual objective (dual, primal), entropic primal value (sinkhorn),
    /// or negative ELBO (baseline).
    pub objective: f64,
    /// Norm of the potential gradient, or of the decoder gradient where no
    /// potential is trained.
    pub grad_norm: f64,
    pub marginal_violation: f64,
    pub ess_min: f64,
    pub decoder_loss: f64,
}

pub const DIAGNOSTICS_HEADER: [&str; 6] = [
    "epoch",
    "objective",
    "grad_norm",
    "marginal_violation",
    "ess_min",
    "decoder_loss",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub decoder: Decoder,
    /// Empty for the baseline.
    pub potential: SemiDualPotential,
    pub prior: ModelPrior,
    pub encoder: Option<EncoderNet>,
    pub history: Vec<EpochDiagnostics>,
    pub config: TrainConfig,
}

impl TrainedModel {
    pub fn latent_dim(&self) -> usize {
        self.decoder.latent_dim()
    }

    pub fn to_document(&self) -> TextDocument {
        let mut doc = TextDocument::new();
        self.config.write_to(&mut doc);
        doc.push_param("likelihood", self.decoder.kind());
        match &self.decoder {
            Decoder::Gaussian(d) => doc.push_f64("log_var_floor", d.log_var_floor),
            Decoder::Bernoulli(d) => doc.push_f64("logit_clamp", d.logit_clamp),
        }
        doc.push_mlp("decoder", self.decoder.net());
        doc.push_vector("u", &self.potential.u);
        self.prior.write_to(&mut doc);
        if let Some(enc) = &self.encoder {
            doc.push_f64("encoder_log_var_floor", enc.log_var_floor);
            doc.push_mlp("encoder", &enc.net);
        }
        doc
    }

    pub fn from_document(doc: &TextDocument) -> Result<Self> {
        let config = TrainConfig::read_from(doc)?;
        let net = doc.mlp("decoder")?.clone();
        let decoder = match doc.param("likelihood")? {
            "gaussian" => Decoder::Gaussian(GaussianDecoder {
                net,
                log_var_floor: doc.parse_param("log_var_floor")?,
            }),
            "bernoulli" => Decoder::Bernoulli(BernoulliDecoder {
                net,
                logit_clamp: doc.parse_param("logit_clamp")?,
            }),
            other => {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("unknown likelihood {other:?}"),
                })
            }
        };
        let potential = SemiDualPotential::new(doc.vector("u")?.to_vec(), config.epsilon)?;
        let prior = ModelPrior::read_from(doc)?;
        let encoder = match doc.opt_mlp("encoder") {
            Some(net) => Some(EncoderNet {
                net: net.clone(),
                log_var_floor: doc.parse_param("encoder_log_var_floor")?,
            }),
            None => None,
        };
        if prior.latent_dim() != decoder.latent_dim() {
            return Err(Error::shape(
                format!("prior of dimension {}", decoder.latent_dim()),
                prior.latent_dim(),
            ));
        }
        Ok(Self {
            decoder,
            potential,
            prior,
            encoder,
            history: Vec::new(),
            config,
        })
    }

    pub fn checkpoint_text(&self) -> String {
        self.to_document().to_text()
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_document().save(path)
    }

    /// Restores everything except the training history.
    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_document(&TextDocument::load(path)?)
    }

    pub fn write_diagnostics<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(DIAGNOSTICS_HEADER)?;
        for d in &self.history {
            w.write_record([
                d.epoch.to_string(),
                fmt_f64(d.objective),
                fmt_f64(d.grad_norm),
                fmt_f64(d.marginal_violation),
                fmt_f64(d.ess_min),
                fmt_f64(d.decoder_loss),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<diagnostics>", e))?;
        Ok(())
    }

    pub fn save_diagnostics(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_diagnostics(f)
    }

    fn check_data(&self, data: &EmpiricalMeasure) -> Result<()> {
        if data.dim() != self.decoder.data_dim() {
            return Err(Error::shape(
                format!("data of dimension {}", self.decoder.data_dim()),
                data.dim(),
            ));
        }
        if self.encoder.is_none() && self.potential.len() != data.len() {
            return Err(Error::shape(
                format!("{} data points (size of the potential)", self.potential.len()),
                data.len(),
            ));
        }
        Ok(())
    }

    /// `n` codes from `q(z|x) p_D(x)`: through the encoder for the baseline,
    /// by importance resampling of a `pool_size` prior pool otherwise.
    pub fn aggregate_posterior(
        &self,
        data: &EmpiricalMeasure,
        n: usize,
        pool_size: usize,
        rng: &mut dyn RngCore,
    ) -> Result<AggregateSample> {
        self.check_data(data)?;
        match &self.encoder {
            Some(enc) => {
                let idx: Vec<usize> = (0..n).map(|_| data.sample_index(rng)).collect();
                let x = data.points().select_rows(&idx);
                Ok(AggregateSample {
                    z: enc.sample(&x, rng)?,
                    ess_min: f64::NAN,
                    degenerate: 0,
                })
            }
            None => aggregate_posterior_sample(&self.potential, &self.decoder, data, &self.prior, n, pool_size, rng),
        }
    }

    /// `E[z | x_i]` per data point.
    pub fn latent_representation(
        &self,
        data: &EmpiricalMeasure,
        posterior_samples: usize,
        rng: &mut dyn RngCore,
    ) -> Result<LatentRepresentation> {
        self.check_data(data)?;
        match &self.encoder {
            Some(enc) => Ok(LatentRepresentation {
                means: enc.encode(data.points())?.0,
                ess: vec![f64::NAN; data.len()],
            }),
            None => latent_representation(
                &self.potential,
                &self.decoder,
                data,
                &self.prior,
                posterior_samples,
                rng,
            ),
        }
    }

    /// Prior codes pushed through the decoder: means, or one observation
    /// draw per code.
    pub fn generate(&self, n: usize, observe: bool, rng: &mut dyn RngCore) -> Result<Tensor2> {
        let z = self.prior.sample_codes(n, rng)?.z;
        if observe {
            self.decoder.sample_observation(&z, rng)
        } else {
            self.decoder.decode_mean(&z)
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.config.strategy
    }
}
