//! Sample-quality and prior-matching metrics.

use std::io::Write;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::cost::Decoder;
use crate::dists::{EmpiricalMeasure, LatentSampler};
use crate::eot::posterior::DEGENERATE_ESS;
use crate::eot::{effective_sample_size, resample_one, PosteriorBatch, SemiDualPotential};
use crate::error::{Error, Result};
use crate::numcore::Tensor2;

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureMetrics {
    /// Fraction of samples within `k·σ` (Euclidean) of their nearest mean.
    pub high_density_ratio: f64,
    /// `sqrt(Σ ‖x − μ_assigned‖² / (N·d))`.
    pub std_within_modes: f64,
    pub samples_assigned: Vec<usize>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn high_density_ratio(samples: &Tensor2, means: &Tensor2, sigma: f64, k: f64) -> Result<MixtureMetrics> {
    if samples.rows() == 0 {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    if means.rows() == 0 {
        return Err(Error::InvalidArgument("no mixture means".into()));
    }
    if samples.cols() != means.cols() {
        return Err(Error::shape(
            format!("samples of dimension {}", means.cols()),
            samples.cols(),
        ));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let radius2 = (k * sigma) * (k * sigma);
    let mut inside = 0usize;
    let mut total_sq = 0.0;
    let mut assigned = Vec::with_capacity(samples.rows());
    for x in samples.row_iter() {
        let (best, d2) = means
            .row_iter()
            .enumerate()
            .map(|(c, m)| (c, sq_dist(x, m)))
            .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        if d2 <= radius2 {
            inside += 1;
        }
        total_sq += d2;
        assigned.push(best);
    }
    let n = samples.rows() as f64;
    Ok(MixtureMetrics {
        high_density_ratio: inside as f64 / n,
        std_within_modes: (total_sq / (n * samples.cols() as f64)).sqrt(),
        samples_assigned: assigned,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdEstimate {
    /// Unbiased MMD² estimate; may be slightly negative.
    pub value: f64,
    pub bandwidth: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// Median of the pairwise Euclidean distances among all rows of `a` and `b`.
pub fn median_bandwidth(a: &Tensor2, b: &Tensor2) -> Result<f64> {
    let pooled: Vec<&[f64]> = a.row_iter().chain(b.row_iter()).collect();
    let n = pooled.len();
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(pooled[i], pooled[j]));
        }
    }
    if d.is_empty() {
        return Err(Error::DegenerateBandwidth);
    }
    let mid = d.len() / 2;
    let (_, &mut upper, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let med2 = if d.len() % 2 == 1 {
        upper
    } else {
        let lower = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    };
    let h = med2.sqrt();
    if !(h > 0.0) {
        return Err(Error::DegenerateBandwidth);
    }
    Ok(h)
}

/// Unbiased MMD² with kernel `exp(−‖a − b‖² / (2h²))`. Without a bandwidth
/// the pooled median distance is used.
pub fn mmd_rbf(a: &Tensor2, b: &Tensor2, bandwidth: Option<f64>) -> Result<MmdEstimate> {
    if a.cols() != b.cols() {
        return Err(Error::shape(format!("dimension {}", a.cols()), b.cols()));
    }
    let (na, nb) = (a.rows(), b.rows());
    if na < 2 || nb < 2 {
        return Err(Error::InvalidArgument(
            "MMD needs at least two points per sample".into(),
        ));
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {h}"))),
        None => median_bandwidth(a, b)?,
    };
    let g = -1.0 / (2.0 * h * h);
    let within = |t: &Tensor2| {
        let mut s = 0.0;
        for i in 0..t.rows() {
            for j in i + 1..t.rows() {
                s += (g * sq_dist(t.row(i), t.row(j))).exp();
            }
        }
        2.0 * s / (t.rows() * (t.rows() - 1)) as f64
    };
    let mut cross = 0.0;
    for x in a.row_iter() {
        for y in b.row_iter() {
            cross += (g * sq_dist(x, y)).exp();
        }
    }
    let value = within(a) + within(b) - 2.0 * cross / (na * nb) as f64;
    Ok(MmdEstimate {
        value,
        bandwidth: h,
        n_a: na,
        n_b: nb,
    })
}

/// Codes drawn by ancestral sampling of `q(z | x) p_D(x)`.
#[derive(Debug, Clone)]
pub struct AggregateSample {
    pub z: Tensor2,
    pub ess_min: f64,
    /// Draws whose importance weights had ESS below 2.
    pub degenerate: usize,
}

/// For each draw: pick `x_i ~ μ` and resample one code of a shared pool of
/// `pool_size` prior codes with weights `q(z | x_i)`. A prior with finite
/// support is enumerated instead, which makes every conditional exact.
///
/// The pool is drawn once because each code's c,ε-transform needs its cost
/// to every data point. Draws landing on the same pool code are identical,
/// so `pool_size` should be several times `n`.
pub fn aggregate_posterior_sample(
    u: &SemiDualPotential,
    decoder: &Decoder,
    data: &EmpiricalMeasure,
    prior: &dyn LatentSampler,
    n: usize,
    pool_size: usize,
    rng: &mut dyn RngCore,
) -> Result<AggregateSample> {
    if pool_size == 0 {
        return Err(Error::InvalidArgument("pool_size must be positive".into()));
    }
    let batch = match prior.enumerate() {
        Some(b) => b,
        None => prior.sample_codes(pool_size, rng)?,
    };
    let pb = PosteriorBatch::new(u, decoder, data, batch)?;
    let mut z = Tensor2::zeros(n, prior.latent_dim());
    let mut ess_min = f64::INFINITY;
    let mut degenerate = 0;
    for k in 0..n {
        let i = data.sample_index(rng);
        let w = pb.normalized_weights(i);
        let ess = effective_sample_size(&w);
        ess_min = ess_min.min(ess);
        if ess < DEGENERATE_ESS {
            degenerate += 1;
        }
        let j = resample_one(&w, rng);
        z.row_mut(k).copy_from_slice(pb.batch.z.row(j));
    }
    Ok(AggregateSample { z, ess_min, degenerate })
}

#[derive(Debug, Clone)]
pub struct LatentRepresentation {
    /// Row `i` estimates `E[z | x_i]`.
    pub means: Tensor2,
    pub ess: Vec<f64>,
}

impl LatentRepresentation {
    pub fn ess_min(&self) -> f64 {
        self.ess.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Posterior means from one shared batch of `posterior_samples` prior codes
/// (or the enumerated support of a discrete prior).
pub fn latent_representation(
    u: &SemiDualPotential,
    decoder: &Decoder,
    data: &EmpiricalMeasure,
    prior: &dyn LatentSampler,
    posterior_samples: usize,
    rng: &mut dyn RngCore,
) -> Result<LatentRepresentation> {
    let batch = match prior.enumerate() {
        Some(b) => b,
        None => prior.sample_codes(posterior_samples, rng)?,
    };
    let pb = PosteriorBatch::new(u, decoder, data, batch)?;
    let mut means = Tensor2::zeros(data.len(), prior.latent_dim());
    let mut ess = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let s = pb.sample_for(i)?;
        means.row_mut(i).copy_from_slice(&s.mean());
        ess.push(s.ess);
    }
    Ok(LatentRepresentation { means, ess })
}

/// Machine-readable metrics; absent values serialize as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub high_density_ratio: Option<f64>,
    pub std_within_modes: Option<f64>,
    pub mmd: Option<f64>,
    pub mmd_bandwidth: Option<f64>,
    pub ess_min: Option<f64>,
    pub seed: u64,
}

impl MetricsReport {
    pub fn empty(seed: u64) -> Self {
        Self {
            high_density_ratio: None,
            std_within_modes: None,
            mmd: None,
            mmd_bandwidth: None,
            ess_min: None,
            seed,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// `key value` lines in field order.
    pub fn to_text(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| format!("{x}"));
        format!(
            "high_density_ratio {}\nstd_within_modes {}\nmmd {}\nmmd_bandwidth {}\ness_min {}\nseed {}\n",
            f(self.high_density_ratio),
            f(self.std_within_modes),
            f(self.mmd),
            f(self.mmd_bandwidth),
            f(self.ess_min),
            self.seed
        )
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_json()?.as_bytes())
            .map_err(|e| Error::io(path, e))?;
        f.write_all(b"\n").map_err(|e| Error::io(path, e))
    }
}
