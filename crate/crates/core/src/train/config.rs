use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numcore::TextDocument;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Importance-weighted reconstruction under the dual posterior.
    Primal,
    /// Decoder steps weighted by the conditional plan of the semi-dual.
    Dual,
    /// Exact Sinkhorn plans against a categorical prior with learned atoms.
    SinkhornDiscrete,
    /// Amortized encoder trained on the evidence lower bound.
    BaselineVae,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Primal => "primal",
            Strategy::Dual => "dual",
            Strategy::SinkhornDiscrete => "sinkhorn",
            Strategy::BaselineVae => "baseline-vae",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "primal" => Ok(Strategy::Primal),
            "dual" => Ok(Strategy::Dual),
            "sinkhorn" => Ok(Strategy::SinkhornDiscrete),
            "baseline-vae" => Ok(Strategy::BaselineVae),
            _ => Err(Error::InvalidArgument(format!("unknown strategy {s:?}"))),
        }
    }
}

/// Update rule for the semi-dual potential.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DualOptimizer {
    /// `u ← u + lr · ∇L`.
    Sgd,
    /// `u_i ← u_i + lr · ε · ∇L_i / μ_i`, a first-order Sinkhorn step when
    /// `lr = 1`.
    Scaled,
    /// Adam on `−∇L`.
    Adam,
}

impl DualOptimizer {
    pub fn name(self) -> &'static str {
        match self {
            DualOptimizer::Sgd => "sgd",
            DualOptimizer::Scaled => "scaled",
            DualOptimizer::Adam => "adam",
        }
    }
}

impl FromStr for DualOptimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(DualOptimizer::Sgd),
            "scaled" => Ok(DualOptimizer::Scaled),
            "adam" => Ok(DualOptimizer::Adam),
            _ => Err(Error::InvalidArgument(format!("unknown dual optimizer {s:?}"))),
        }
    }
}

/// Hyperparameters of one training run.
///
/// An epoch is one outer iteration: `inner_iters` potential steps followed
/// by one decoder step (`inner_iters` decoder steps on a frozen plan for
/// [`Strategy::SinkhornDiscrete`], one ELBO step for the baseline).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub strategy: Strategy,
    pub epsilon: f64,
    pub lr_u: f64,
    /// Zero freezes the decoder.
    pub lr_theta: f64,
    pub inner_iters: usize,
    /// Data points per decoder step (primal and baseline).
    pub batch_m: usize,
    /// Prior codes per step.
    pub batch_n: usize,
    pub epochs: usize,
    pub seed: u64,
    pub posterior_samples: usize,
    pub dual_optimizer: DualOptimizer,
    pub clip_norm: f64,
    /// Potential steps on the final decoder after the last epoch (dual and
    /// primal only). The potential lags a moving decoder; these steps let it
    /// catch up before posteriors are read from it.
    pub refine_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Dual,
            epsilon: 0.5,
            lr_u: 0.5,
            lr_theta: 1e-3,
            inner_iters: 50,
            batch_m: 256,
            batch_n: 256,
            epochs: 100,
            seed: 0,
            posterior_samples: 64,
            dual_optimizer: DualOptimizer::Scaled,
            clip_norm: 10.0,
            refine_steps: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        };
        pos("epsilon", self.epsilon)?;
        pos("lr_u", self.lr_u)?;
        pos("clip_norm", self.clip_norm)?;
        if !(self.lr_theta >= 0.0) || !self.lr_theta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lr_theta must be non-negative, got {}",
                self.lr_theta
            )));
        }
        for (name, v) in [
            ("inner_iters", self.inner_iters),
            ("batch_m", self.batch_m),
            ("batch_n", self.batch_n),
            ("epochs", self.epochs),
            ("posterior_samples", self.posterior_samples),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn write_to(&self, doc: &mut TextDocument) {
        doc.push_param("strategy", self.strategy);
        doc.push_f64("epsilon", self.epsilon);
        doc.push_f64("lr_u", self.lr_u);
        doc.push_f64("lr_theta", self.lr_theta);
        doc.push_param("inner_iters", self.inner_iters);
        doc.push_param("batch_m", self.batch_m);
        doc.push_param("batch_n", self.batch_n);
        doc.push_param("epochs", self.epochs);
        doc.push_param("seed", self.seed);
        doc.push_param("posterior_samples", self.posterior_samples);
        doc.push_param("dual_optimizer", self.dual_optimizer.name());
        doc.push_f64("clip_norm", self.clip_norm);
        doc.push_param("refine_steps", self.refine_steps);
    }

    pub fn read_from(doc: &TextDocument) -> Result<Self> {
        let cfg = Self {
            strategy: doc.param("strategy")?.parse()?,
            epsilon: doc.parse_param("epsilon")?,
            lr_u: doc.parse_param("lr_u")?,
            lr_theta: doc.parse_param("lr_theta")?,
            inner_iters: doc.parse_param("inner_iters")?,
            batch_m: doc.parse_param("batch_m")?,
            batch_n: doc.parse_param("batch_n")?,
            epochs: doc.parse_param("epochs")?,
            seed: doc.parse_param("seed")?,
            posterior_samples: doc.parse_param("posterior_samples")?,
            dual_optimizer: doc.param("dual_optimizer")?.parse()?,
            clip_norm: doc.parse_param("clip_norm")?,
            refine_steps: doc.parse_param("refine_steps")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolved configuration as `key value` lines.
    pub fn echo(&self) -> String {
        let mut doc = TextDocument::new();
        self.write_to(&mut doc);
        doc.to_text()
    }
}
