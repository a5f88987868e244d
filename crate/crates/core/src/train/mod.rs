//! Training loops.
//!
//! | Strategy | Potential update | Decoder update |
//! |----------|------------------|----------------|
//! | [`Strategy::Dual`] | `K` ascent steps on the semi-dual | plan-weighted cost over fresh prior codes |
//! | [`Strategy::Primal`] | same | importance-weighted reconstruction of a data minibatch |
//! | [`Strategy::SinkhornDiscrete`] | exact Sinkhorn solve | `K` steps on the frozen plan, atoms learned jointly |
//! | [`Strategy::BaselineVae`] | none | one ELBO step with the reparameterization trick |
//!
//! A [`Trainer`] advances one epoch at a time, so intermediate models can be
//! inspected; [`train`] runs a whole configuration.

mod config;
mod model;

pub use config::{DualOptimizer, Strategy, TrainConfig};
pub use model::{gaussian_kl, EncoderNet, EpochDiagnostics, ModelPrior, TrainedModel, DIAGNOSTICS_HEADER};

use rand::RngCore;

use crate::cost::Decoder;
use crate::dists::{EmpiricalMeasure, LatentBatch, LatentSampler};
use crate::eot::sinkhorn::{DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::eot::{
    effective_sample_size, semidual_eval, semidual_eval_with_plan, sinkhorn_warm, PosteriorBatch, SemiDualEval,
    SemiDualPotential,
};
use crate::error::{Error, Result};
use crate::numcore::{clip_global_norm, AdamState, MlpGrads, Tensor2};

/// Codes for one step: the whole support of a finite prior, else `n` draws.
pub fn draw_codes(prior: &dyn LatentSampler, n: usize, rng: &mut dyn RngCore) -> Result<LatentBatch> {
    match prior.enumerate() {
        Some(b) => Ok(b),
        None => prior.sample_codes(n, rng),
    }
}

/// Semi-dual objective at `(u, θ)` on a fixed code batch and its gradient in
/// the decoder parameters, `Σ_j ν_j Σ_i π(x_i|z_j) ∇_θ c(x_i, z_j)`.
///
/// Returns the objective, the gradient and the minimum ESS of the per-code
/// plan weights.
pub fn dual_decoder_gradient(
    u: &SemiDualPotential,
    decoder: &Decoder,
    data: &EmpiricalMeasure,
    batch: &LatentBatch,
) -> Result<(f64, MlpGrads, f64)> {
    let costs = decoder.cost_matrix(data, &batch.z)?;
    let (eval, mut w) = semidual_eval_with_plan(u, &costs, data.weights(), &batch.weights)?;
    let objective = eval.objective;
    let mut ess_min = f64::INFINITY;
    for (j, &nu) in batch.weights.iter().enumerate() {
        let row = w.row_mut(j);
        ess_min = ess_min.min(effective_sample_size(row));
        row.iter_mut().for_each(|v| *v *= nu);
    }
    let wb = decoder.weighted_backward(data.points(), &batch.z, &w)?;
    Ok((objective, wb.grads, ess_min))
}

/// Decoder step of the primal strategy.
#[derive(Debug, Clone)]
pub struct PrimalGradient {
    /// `(1/B) Σ_b Σ_j w_bj c(x_b, z_j)`.
    pub loss: f64,
    pub grads: MlpGrads,
    pub ess_min: f64,
    /// Data points whose weights have ESS below 2.
    pub degenerate: usize,
}

/// Importance-weighted reconstruction gradient for the data points `idx`,
/// every point reweighting the same prior codes toward `q(z | x_i)`.
pub fn primal_decoder_gradient(
    u: &SemiDualPotential,
    decoder: &Decoder,
    data: &EmpiricalMeasure,
    idx: &[usize],
    codes: LatentBatch,
) -> Result<PrimalGradient> {
    if idx.is_empty() {
        return Err(Error::InvalidArgument("empty data batch".into()));
    }
    let pb = PosteriorBatch::new(u, decoder, data, codes)?;
    let bm = idx.len();
    let mut w = Tensor2::zeros(pb.batch.len(), bm);
    let mut degenerate = 0;
    let mut ess_min = f64::INFINITY;
    for (b, &i) in idx.iter().enumerate() {
        let s = pb.sample_for(i)?;
        ess_min = ess_min.min(s.ess);
        if s.is_degenerate() {
            degenerate += 1;
        }
        for (j, v) in s.normalized_weights.iter().enumerate() {
            w.set(j, b, v / bm as f64);
        }
    }
    let points = data.points().select_rows(idx);
    let wb = decoder.weighted_backward(&points, &pb.batch.z, &w)?;
    Ok(PrimalGradient {
        loss: wb.weighted_cost,
        grads: wb.grads,
        ess_min,
        degenerate,
    })
}

/// Negative ELBO of a batch and its gradients.
#[derive(Debug, Clone)]
pub struct ElboGradient {
    /// Mean `c(x, z)` at the reparameterized codes.
    pub reconstruction: f64,
    /// Mean `KL(q(z|x) ‖ N(0, I))`.
    pub kl: f64,
    pub decoder_grads: MlpGrads,
    pub encoder_grads: MlpGrads,
}

/// Gradients of `mean_b [c(x_b, μ_b + σ_b ⊙ ξ_b) + KL_b]` for fixed noise
/// `ξ` (row-major, `B x d_z`).
pub fn elbo_gradient(decoder: &Decoder, encoder: &EncoderNet, x: &Tensor2, noise: &[f64]) -> Result<ElboGradient> {
    let bm = x.rows();
    let dz = encoder.latent_dim();
    if noise.len() != bm * dz {
        return Err(Error::shape(format!("{} noise values", bm * dz), noise.len()));
    }
    let inv = 1.0 / bm as f64;
    let (raw, cache) = encoder.net.forward(x)?;
    let (mean, lv) = encoder.split(&raw);
    let z = Tensor2::from_fn(bm, dz, |i, k| {
        mean.get(i, k) + (0.5 * lv.get(i, k)).exp() * noise[i * dz + k]
    })?;
    let wb = decoder.paired_backward(x, &z, &vec![inv; bm])?;
    let kl = (0..bm).map(|i| gaussian_kl(mean.row(i), lv.row(i))).sum::<f64>() * inv;
    let mut grad_raw = Tensor2::zeros(bm, 2 * dz);
    for i in 0..bm {
        for k in 0..dz {
            let gz = wb.grad_latent.get(i, k);
            grad_raw.set(i, k, gz + mean.get(i, k) * inv);
            if raw.get(i, dz + k) > encoder.log_var_floor {
                let sd = (0.5 * lv.get(i, k)).exp();
                grad_raw.set(
                    i,
                    dz + k,
                    gz * 0.5 * sd * noise[i * dz + k] + 0.5 * (sd * sd - 1.0) * inv,
                );
            }
        }
    }
    let (encoder_grads, _) = encoder.net.backward(&cache, &grad_raw)?;
    Ok(ElboGradient {
        reconstruction: wb.weighted_cost,
        kl,
        decoder_grads: wb.grads,
        encoder_grads,
    })
}

struct PotentialStepper {
    kind: DualOptimizer,
    adam: AdamState,
    lr: f64,
    epsilon: f64,
}

impl PotentialStepper {
    fn new(cfg: &TrainConfig, m: usize) -> Self {
        Self {
            kind: cfg.dual_optimizer,
            adam: AdamState::new(m),
            lr: cfg.lr_u,
            epsilon: cfg.epsilon,
        }
    }

    fn ascend(&mut self, u: &mut [f64], grad: &[f64], mu: &[f64]) -> Result<()> {
        match self.kind {
            DualOptimizer::Sgd => u.iter_mut().zip(grad).for_each(|(ui, g)| *ui += self.lr * g),
            DualOptimizer::Scaled => {
                let s = self.lr * self.epsilon;
                for ((ui, g), m) in u.iter_mut().zip(grad).zip(mu) {
                    *ui += s * g / m;
                }
            }
            DualOptimizer::Adam => {
                let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                self.adam.step(u, &neg, self.lr)?;
            }
        }
        Ok(())
    }
}

/// Training state advanced one epoch at a time.
pub struct Trainer<'a> {
    config: TrainConfig,
    data: &'a EmpiricalMeasure,
    decoder: Decoder,
    u: SemiDualPotential,
    prior: ModelPrior,
    encoder: Option<EncoderNet>,
    stepper: PotentialStepper,
    /// Over the decoder parameters followed by atoms or encoder parameters.
    adam: AdamState,
    history: Vec<EpochDiagnostics>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        config: TrainConfig,
        data: &'a EmpiricalMeasure,
        prior: ModelPrior,
        decoder: Decoder,
        encoder: Option<EncoderNet>,
    ) -> Result<Self> {
        config.validate()?;
        if data.dim() != decoder.data_dim() {
            return Err(Error::shape(
                format!("data of dimension {}", decoder.data_dim()),
                data.dim(),
            ));
        }
        if prior.latent_dim() != decoder.latent_dim() {
            return Err(Error::shape(
                format!("prior of dimension {}", decoder.latent_dim()),
                prior.latent_dim(),
            ));
        }
        let extra = match (config.strategy, &prior, &encoder) {
            (Strategy::SinkhornDiscrete, ModelPrior::Atoms(a), _) => a.atoms.rows() * a.atoms.cols(),
            (Strategy::SinkhornDiscrete, ModelPrior::Gaussian(_), _) => {
                return Err(Error::InvalidArgument(
                    "the sinkhorn strategy needs a categorical prior".into(),
                ))
            }
            (Strategy::BaselineVae, ModelPrior::Gaussian(_), Some(enc)) => {
                if enc.net.input_dim() != data.dim() || enc.latent_dim() != decoder.latent_dim() {
                    return Err(Error::shape(
                        format!("encoder {} -> {}", data.dim(), decoder.latent_dim()),
                        format!("{} -> {}", enc.net.input_dim(), enc.latent_dim()),
                    ));
                }
                enc.net.param_count()
            }
            (Strategy::BaselineVae, _, _) => {
                return Err(Error::InvalidArgument(
                    "the baseline needs a Gaussian prior and an encoder".into(),
                ))
            }
            _ => 0,
        };
        let m = if config.strategy == Strategy::BaselineVae {
            0
        } else {
            data.len()
        };
        Ok(Self {
            stepper: PotentialStepper::new(&config, m),
            adam: AdamState::new(decoder.net().param_count() + extra),
            u: SemiDualPotential::zeros(m, config.epsilon)?,
            config,
            data,
            decoder,
            prior,
            encoder,
            history: Vec::new(),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> &[EpochDiagnostics] {
        &self.history
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn potential(&self) -> &SemiDualPotential {
        &self.u
    }

    /// Copy of the current state as a model.
    pub fn snapshot(&self) -> TrainedModel {
        TrainedModel {
            decoder: self.decoder.clone(),
            potential: self.u.clone(),
            prior: self.prior.clone(),
            encoder: self.encoder.clone(),
            history: self.history.clone(),
            config: self.config.clone(),
        }
    }

    pub fn into_model(self) -> TrainedModel {
        TrainedModel {
            decoder: self.decoder,
            potential: self.u,
            prior: self.prior,
            encoder: self.encoder,
            history: self.history,
            config: self.config,
        }
    }

    /// `K` potential steps with the decoder frozen. Returns the evaluation
    /// preceding the last step.
    pub fn potential_steps(&mut self, rng: &mut dyn RngCore) -> Result<SemiDualEval> {
        let mut last = None;
        for _ in 0..self.config.inner_iters {
            last = Some(self.potential_step(rng)?);
        }
        Ok(last.expect("inner_iters is positive"))
    }

    fn potential_step(&mut self, rng: &mut dyn RngCore) -> Result<SemiDualEval> {
        let mu = self.data.weights();
        let batch = draw_codes(&self.prior, self.config.batch_n, rng)?;
        let costs = self.decoder.cost_matrix(self.data, &batch.z)?;
        let eval = semidual_eval(&self.u, &costs, mu, &batch.weights)?;
        self.stepper.ascend(&mut self.u.u, &eval.grad, mu)?;
        Ok(eval)
    }

    /// `steps` potential steps with the decoder frozen. A no-op for the
    /// strategies without a semi-dual potential.
    pub fn refine_potential(&mut self, steps: usize, rng: &mut dyn RngCore) -> Result<()> {
        if !matches!(self.config.strategy, Strategy::Dual | Strategy::Primal) {
            return Ok(());
        }
        for _ in 0..steps {
            let eval = self.potential_step(rng)?;
            if !eval.objective.is_finite() {
                return Err(Error::NonFinite("refined potential objective".into()));
            }
        }
        Ok(())
    }

    fn descend(&mut self, params: &mut [f64], grads: &mut [f64]) -> Result<f64> {
        let norm = clip_global_norm(grads, self.config.clip_norm);
        if self.config.lr_theta > 0.0 {
            self.adam.step(params, grads, self.config.lr_theta)?;
        }
        Ok(norm)
    }

    fn decoder_step(&mut self, grads: MlpGrads) -> Result<f64> {
        let mut params = self.decoder.net().to_flat();
        let mut g = grads.into_flat();
        let norm = self.descend(&mut params, &mut g)?;
        self.decoder.net_mut().set_flat(&params)?;
        Ok(norm)
    }

    fn epoch_dual(&mut self, rng: &mut dyn RngCore) -> Result<EpochDiagnostics> {
        let eval = self.potential_steps(rng)?;
        let batch = draw_codes(&self.prior, self.config.batch_n, rng)?;
        let (loss, grads, ess_min) = dual_decoder_gradient(&self.u, &self.decoder, self.data, &batch)?;
        self.decoder_step(grads)?;
        Ok(EpochDiagnostics {
            epoch: self.history.len() + 1,
            objective: eval.objective,
            grad_norm: eval.grad_norm(),
            marginal_violation: eval.marginal_violation(),
            ess_min,
            decoder_loss: loss,
        })
    }

    fn epoch_primal(&mut self, rng: &mut dyn RngCore) -> Result<EpochDiagnostics> {
        let eval = self.potential_steps(rng)?;
        let idx: Vec<usize> = (0..self.config.batch_m).map(|_| self.data.sample_index(rng)).collect();
        let codes = draw_codes(&self.prior, self.config.posterior_samples, rng)?;
        let step = primal_decoder_gradient(&self.u, &self.decoder, self.data, &idx, codes)?;
        if 2 * step.degenerate > idx.len() {
            return Err(Error::DegenerateWeights {
                degenerate: step.degenerate,
                total: idx.len(),
            });
        }
        self.decoder_step(step.grads)?;
        Ok(EpochDiagnostics {
            epoch: self.history.len() + 1,
            objective: eval.objective,
            grad_norm: eval.grad_norm(),
            marginal_violation: eval.marginal_violation(),
            ess_min: step.ess_min,
            decoder_loss: step.loss,
        })
    }

    fn epoch_sinkhorn(&mut self) -> Result<EpochDiagnostics> {
        let ModelPrior::Atoms(prior) = &self.prior else {
            unreachable!("checked in Trainer::new")
        };
        let probs = prior.prior.probs().to_vec();
        let mut atoms = prior.atoms.clone();
        let eps = self.config.epsilon;
        let costs = self.decoder.cost_matrix(self.data, &atoms)?;
        let res = sinkhorn_warm(
            &costs,
            self.data.weights(),
            &probs,
            eps,
            DEFAULT_TOL,
            DEFAULT_MAX_ITER,
            Some(&self.u.u),
        )?;
        let objective = res.plan.primal_value(&costs, eps);
        let ess_min = (0..self.data.len())
            .map(|i| effective_sample_size(&res.plan.conditional_given_data(i)))
            .fold(f64::INFINITY, f64::min);
        let w = res.plan.pi.transpose();
        self.u.u = res.potentials.u;
        let n_theta = self.decoder.net().param_count();
        let mut grad_norm = 0.0;
        let mut loss = f64::NAN;
        for _ in 0..self.config.inner_iters {
            let wb = self.decoder.weighted_backward(self.data.points(), &atoms, &w)?;
            loss = wb.weighted_cost;
            let mut params = self.decoder.net().to_flat();
            params.extend_from_slice(atoms.data());
            let mut g = wb.grads.into_flat();
            g.extend_from_slice(wb.grad_latent.data());
            grad_norm = self.descend(&mut params, &mut g)?;
            self.decoder.net_mut().set_flat(&params[..n_theta])?;
            atoms.data_mut().copy_from_slice(&params[n_theta..]);
        }
        if let ModelPrior::Atoms(prior) = &mut self.prior {
            prior.atoms = atoms;
        }
        Ok(EpochDiagnostics {
            epoch: self.history.len() + 1,
            objective,
            grad_norm,
            marginal_violation: res.marginal_violation,
            ess_min,
            decoder_loss: loss,
        })
    }

    fn epoch_vae(&mut self, rng: &mut dyn RngCore) -> Result<EpochDiagnostics> {
        let enc = self.encoder.as_ref().expect("checked in Trainer::new");
        let idx: Vec<usize> = (0..self.config.batch_m).map(|_| self.data.sample_index(rng)).collect();
        let x = self.data.points().select_rows(&idx);
        let mut noise = vec![0.0; idx.len() * enc.latent_dim()];
        crate::numcore::rng::fill_standard_normal(rng, &mut noise);
        let eg = elbo_gradient(&self.decoder, enc, &x, &noise)?;
        let n_theta = self.decoder.net().param_count();
        let mut params = self.decoder.net().to_flat();
        params.extend(enc.net.to_flat());
        let mut g = eg.decoder_grads.into_flat();
        g.extend(eg.encoder_grads.into_flat());
        let grad_norm = self.descend(&mut params, &mut g)?;
        self.decoder.net_mut().set_flat(&params[..n_theta])?;
        self.encoder
            .as_mut()
            .expect("checked in Trainer::new")
            .net
            .set_flat(&params[n_theta..])?;
        Ok(EpochDiagnostics {
            epoch: self.history.len() + 1,
            objective: eg.reconstruction + eg.kl,
            grad_norm,
            marginal_violation: f64::NAN,
            ess_min: f64::NAN,
            decoder_loss: eg.reconstruction,
        })
    }

    /// Runs one epoch and appends its diagnostics.
    ///
    /// Non-finite values abort with [`Error::Diverged`], carrying the last
    /// logged diagnostics.
    pub fn run_epoch(&mut self, rng: &mut dyn RngCore) -> Result<&EpochDiagnostics> {
        let epoch = self.history.len() + 1;
        let res = match self.config.strategy {
            Strategy::Dual => self.epoch_dual(rng),
            Strategy::Primal => self.epoch_primal(rng),
            Strategy::SinkhornDiscrete => self.epoch_sinkhorn(),
            Strategy::BaselineVae => self.epoch_vae(rng),
        };
        let diverged = |reason: String, last: Option<&EpochDiagnostics>| Error::Diverged {
            epoch,
            reason: match last {
                Some(d) => format!("{reason}; last diagnostics {d:?}"),
                None => reason,
            },
        };
        let d = match res {
            Ok(d) => d,
            Err(e @ Error::NonFinite(_)) => return Err(diverged(e.to_string(), self.history.last())),
            Err(e) => return Err(e),
        };
        if !d.objective.is_finite() || !d.decoder_loss.is_finite() {
            return Err(diverged(format!("non-finite loss {d:?}"), self.history.last()));
        }
        self.history.push(d);
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn run(mut self, rng: &mut dyn RngCore) -> Result<TrainedModel> {
        while self.history.len() < self.config.epochs {
            self.run_epoch(rng)?;
        }
        self.refine_potential(self.config.refine_steps, rng)?;
        Ok(self.into_model())
    }
}

fn expect_strategy(config: &TrainConfig, s: Strategy) -> Result<()> {
    if config.strategy != s {
        return Err(Error::InvalidArgument(format!(
            "configuration is for {}, not {}",
            config.strategy, s
        )));
    }
    Ok(())
}

/// Potential ascent alternating with plan-weighted decoder steps.
pub fn train_dual(
    config: &TrainConfig,
    data: &EmpiricalMeasure,
    prior: ModelPrior,
    decoder0: Decoder,
    rng: &mut dyn RngCore,
) -> Result<TrainedModel> {
    expect_strategy(config, Strategy::Dual)?;
    Trainer::new(config.clone(), data, prior, decoder0, None)?.run(rng)
}

/// Potential ascent alternating with importance-weighted reconstruction.
pub fn train_primal(
    config: &TrainConfig,
    data: &EmpiricalMeasure,
    prior: ModelPrior,
    decoder0: Decoder,
    rng: &mut dyn RngCore,
) -> Result<TrainedModel> {
    expect_strategy(config, Strategy::Primal)?;
    Trainer::new(config.clone(), data, prior, decoder0, None)?.run(rng)
}

/// Exact plans against learned categorical atoms.
pub fn train_sinkhorn_discrete(
    config: &TrainConfig,
    data: &EmpiricalMeasure,
    prior: ModelPrior,
    decoder0: Decoder,
    rng: &mut dyn RngCore,
) -> Result<TrainedModel> {
    expect_strategy(config, Strategy::SinkhornDiscrete)?;
    Trainer::new(config.clone(), data, prior, decoder0, None)?.run(rng)
}

/// Evidence-lower-bound training with an amortized encoder.
pub fn train_vae_baseline(
    config: &TrainConfig,
    data: &EmpiricalMeasure,
    prior: ModelPrior,
    decoder0: Decoder,
    encoder0: EncoderNet,
    rng: &mut dyn RngCore,
) -> Result<TrainedModel> {
    expect_strategy(config, Strategy::BaselineVae)?;
    Trainer::new(config.clone(), data, prior, decoder0, Some(encoder0))?.run(rng)
}

/// Dispatches on `config.strategy`.
pub fn train(
    config: &TrainConfig,
    data: &EmpiricalMeasure,
    prior: ModelPrior,
    decoder0: Decoder,
    encoder0: Option<EncoderNet>,
    rng: &mut dyn RngCore,
) -> Result<TrainedModel> {
    Trainer::new(config.clone(), data, prior, decoder0, encoder0)?.run(rng)
}

#[cfg(test)]
mod tests;
