//! Posterior `q(z | x_i)` as a reweighted prior.
//!
//! At a semi-dual potential `u` the coupling has density
//! `π(x_i, z) ∝ exp((u_i + u^{c,ε}(z) − c(x_i, z))/ε) μ_i p(z)`, so codes drawn
//! from the prior become draws from `q(z | x_i)` after weighting by
//! `exp((u_i + u^{c,ε}(z) − c(x_i, z))/ε)`. Weights are always
//! self-normalized, which removes any constant in the exponent.
//!
//! The c,ε-transform values depend only on the codes, so [`PosteriorBatch`]
//! computes them once and reuses them for every data point.

use rand::Rng;

use super::semidual::{semidual_eval, SemiDualPotential};
use super::{effective_sample_size, softmax_into};
use crate::cost::{CostMatrix, Decoder};
use crate::dists::{EmpiricalMeasure, LatentBatch, LatentSampler};
use crate::error::{Error, Result};
use crate::numcore::Tensor2;

/// Below this effective sample size a weighted sample is flagged degenerate.
pub const DEGENERATE_ESS: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLatentSample {
    pub z: Tensor2,
    /// `(u_i + u^{c,ε}(z_j) − c(x_i, z_j))/ε`.
    pub log_weights: Vec<f64>,
    pub normalized_weights: Vec<f64>,
    pub ess: f64,
    pub atom_ids: Option<Vec<usize>>,
}

impl WeightedLatentSample {
    pub fn is_degenerate(&self) -> bool {
        self.ess < DEGENERATE_ESS
    }

    /// Self-normalized estimate of `E[z | x]`.
    pub fn mean(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.z.cols()];
        for (row, w) in self.z.row_iter().zip(&self.normalized_weights) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += w * v;
            }
        }
        out
    }
}

/// Codes, their costs to every data point, and cached c,ε-transforms.
#[derive(Debug, Clone)]
pub struct PosteriorBatch {
    pub batch: LatentBatch,
    pub costs: CostMatrix,
    pub transforms: Vec<f64>,
    epsilon: f64,
    u: Vec<f64>,
}

impl PosteriorBatch {
    pub fn new(u: &SemiDualPotential, decoder: &Decoder, data: &EmpiricalMeasure, batch: LatentBatch) -> Result<Self> {
        let costs = decoder.cost_matrix(data, &batch.z)?;
        Self::from_costs(u, data.weights(), batch, costs)
    }

    pub fn from_costs(u: &SemiDualPotential, mu: &[f64], batch: LatentBatch, costs: CostMatrix) -> Result<Self> {
        let eval = semidual_eval(u, &costs, mu, &batch.weights)?;
        Ok(Self {
            batch,
            costs,
            transforms: eval.transforms,
            epsilon: u.epsilon,
            u: u.u.clone(),
        })
    }

    pub fn log_weights(&self, i: usize) -> Vec<f64> {
        (0..self.batch.len())
            .map(|j| (self.u[i] + self.transforms[j] - self.costs.get(i, j)) / self.epsilon)
            .collect()
    }

    /// Self-normalized weights of the codes for data point `i`, including
    /// the base weights of the batch.
    pub fn normalized_weights(&self, i: usize) -> Vec<f64> {
        let a: Vec<f64> = self
            .log_weights(i)
            .iter()
            .zip(&self.batch.weights)
            .map(|(l, b)| l + b.ln())
            .collect();
        let mut w = vec![0.0; a.len()];
        softmax_into(&a, &mut w);
        w
    }

    pub fn sample_for(&self, i: usize) -> Result<WeightedLatentSample> {
        if i >= self.costs.m() {
            return Err(Error::InvalidArgument(format!(
                "data index {i} out of range 0..{}",
                self.costs.m()
            )));
        }
        let log_weights = self.log_weights(i);
        let normalized_weights = self.normalized_weights(i);
        let ess = effective_sample_size(&normalized_weights);
        Ok(WeightedLatentSample {
            z: self.batch.z.clone(),
            log_weights,
            normalized_weights,
            ess,
            atom_ids: self.batch.atom_ids.clone(),
        })
    }
}

/// Draws `n` codes from the prior and weights them toward `q(z | x_i)`.
#[allow(clippy::too_many_arguments)]
pub fn posterior_importance_sample(
    u: &SemiDualPotential,
    decoder: &Decoder,
    data: &EmpiricalMeasure,
    i: usize,
    prior: &dyn LatentSampler,
    n: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<WeightedLatentSample> {
    if i >= data.len() {
        return Err(Error::InvalidArgument(format!(
            "data index {i} out of range 0..{}",
            data.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "posterior sample size must be at least 1".into(),
        ));
    }
    let batch = prior.sample_codes(n, rng)?;
    PosteriorBatch::new(u, decoder, data, batch)?.sample_for(i)
}

/// Systematic resampling of a single index.
pub fn resample_one<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen::<f64>() * weights.iter().sum::<f64>();
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}
