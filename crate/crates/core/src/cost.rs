//! The decoder as a transport cost.
//!
//! A decoder network maps a latent code `z` to the parameters of a
//! likelihood `p_θ(x|z)`, and the transport cost between a data point and a
//! code is `c_θ(x, z) = −log p_θ(x|z)`:
//!
//! | Likelihood | Network head | Cost |
//! |------------|--------------|------|
//! | Gaussian | `[μ (d_x), log σ² (d_x)]` | `Σ_k (x_k − μ_k)² / 2σ_k² + log √(2π σ_k²)` |
//! | Bernoulli | logits `l (d_x)` | `Σ_k softplus(l_k) − x_k l_k` |
//!
//! The Gaussian log-variance is clamped from below at `log_var_floor`
//! (gradient zero below the floor) and Bernoulli logits are clamped to
//! `±logit_clamp`. For a Gaussian decoder `c(·, z)` is a convex quadratic in
//! `x` whose minimum `Σ_k log √(2π σ_k²)` sits at `x = μ(z)`; see
//! [`GaussianDecoder::prop1_minimum`].

use rand::Rng;

use crate::dists::EmpiricalMeasure;
use crate::error::{Error, Result};
use crate::numcore::rng::box_muller;
use crate::numcore::{dot, MlpGrads, MlpParams, Tensor2};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

pub const DEFAULT_LOG_VAR_FLOOR: f64 = -10.0;
pub const DEFAULT_LOGIT_CLAMP: f64 = 15.0;

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDecoder {
    pub net: MlpParams,
    pub log_var_floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliDecoder {
    pub net: MlpParams,
    pub logit_clamp: f64,
}

/// Per-code quantities that make one cost evaluation a short loop.
#[derive(Debug, Clone)]
enum Head {
    Gaussian {
        mean: Vec<f64>,
        log_var: Vec<f64>,
        inv_two_var: Vec<f64>,
        log_norm: f64,
        /// Whether each raw log-variance sits above the floor.
        active: Vec<bool>,
    },
    Bernoulli {
        logits: Vec<f64>,
        softplus_sum: f64,
        active: Vec<bool>,
    },
}

impl Head {
    #[inline]
    fn cost(&self, x: &[f64]) -> f64 {
        match self {
            Head::Gaussian {
                mean,
                inv_two_var,
                log_norm,
                ..
            } => {
                let mut q = 0.0;
                for ((xv, m), a) in x.iter().zip(mean).zip(inv_two_var) {
                    let d = xv - m;
                    q += d * d * a;
                }
                q + log_norm
            }
            Head::Bernoulli {
                logits, softplus_sum, ..
            } => softplus_sum - dot(x, logits),
        }
    }

    /// `out[i] = c(points[i])`, with the same arithmetic as [`Head::cost`].
    fn costs_into(&self, points: &Tensor2, out: &mut [f64]) {
        let d = points.cols();
        match self {
            Head::Gaussian {
                mean,
                inv_two_var,
                log_norm,
                ..
            } if d == 2 => {
                let (m0, m1, a0, a1) = (mean[0], mean[1], inv_two_var[0], inv_two_var[1]);
                for (o, x) in out.iter_mut().zip(points.data().chunks_exact(2)) {
                    let d0 = x[0] - m0;
                    let d1 = x[1] - m1;
                    *o = d0 * d0 * a0 + d1 * d1 * a1 + log_norm;
                }
            }
            _ => {
                for (o, x) in out.iter_mut().zip(points.row_iter()) {
                    *o = self.cost(x);
                }
            }
        }
    }

    /// Adds `Σ_i w_i ∂c(x_i)/∂head` into `out` and returns `Σ_i w_i c(x_i)`.
    fn accumulate_weighted(&self, points: &Tensor2, w: &[f64], out: &mut [f64]) -> f64 {
        let mut total = 0.0;
        match self {
            Head::Gaussian {
                mean,
                inv_two_var,
                log_norm,
                active,
                ..
            } if points.cols() == 2 => {
                let (m0, m1, a0, a1) = (mean[0], mean[1], inv_two_var[0], inv_two_var[1]);
                let (mut gm0, mut gm1, mut gl0, mut gl1) = (0.0, 0.0, 0.0, 0.0);
                for (x, &wi) in points.data().chunks_exact(2).zip(w) {
                    if wi == 0.0 {
                        continue;
                    }
                    let d0 = x[0] - m0;
                    let d1 = x[1] - m1;
                    let q0 = d0 * d0 * a0;
                    let q1 = d1 * d1 * a1;
                    total += wi * (q0 + q1 + log_norm);
                    gm0 -= wi * 2.0 * d0 * a0;
                    gm1 -= wi * 2.0 * d1 * a1;
                    gl0 += wi * (0.5 - q0);
                    gl1 += wi * (0.5 - q1);
                }
                out[0] += gm0;
                out[1] += gm1;
                if active[0] {
                    out[2] += gl0;
                }
                if active[1] {
                    out[3] += gl1;
                }
            }
            Head::Bernoulli {
                logits,
                softplus_sum,
                active,
            } => {
                // Σ_i w_i (σ(l) − x_i) = σ(l) Σ_i w_i − Σ_i w_i x_i
                let mut w_sum = 0.0;
                let mut wx = vec![0.0; logits.len()];
                for (x, &wi) in points.row_iter().zip(w) {
                    if wi == 0.0 {
                        continue;
                    }
                    w_sum += wi;
                    total += wi * (softplus_sum - dot(x, logits));
                    for (acc, xv) in wx.iter_mut().zip(x) {
                        *acc += wi * xv;
                    }
                }
                for k in 0..logits.len() {
                    if active[k] {
                        out[k] += w_sum * sigmoid(logits[k]) - wx[k];
                    }
                }
            }
            _ => {
                for (x, &wi) in points.row_iter().zip(w) {
                    if wi == 0.0 {
                        continue;
                    }
                    total += wi * self.cost(x);
                    self.accumulate_grad(x, wi, out);
                }
            }
        }
        total
    }

    /// Adds `weight · ∂c(x)/∂head` into `out`.
    fn accumulate_grad(&self, x: &[f64], weight: f64, out: &mut [f64]) {
        match self {
            Head::Gaussian {
                mean,
                inv_two_var,
                active,
                ..
            } => {
                let d_x = mean.len();
                let (gm, glv) = out.split_at_mut(d_x);
                for k in 0..d_x {
                    let d = x[k] - mean[k];
                    gm[k] -= weight * 2.0 * d * inv_two_var[k];
                    if active[k] {
                        glv[k] += weight * (0.5 - d * d * inv_two_var[k]);
                    }
                }
            }
            Head::Bernoulli { logits, active, .. } => {
                for k in 0..logits.len() {
                    if active[k] {
                        out[k] += weight * (sigmoid(logits[k]) - x[k]);
                    }
                }
            }
        }
    }
}

/// Decoder network together with its likelihood family.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoder {
    Gaussian(GaussianDecoder),
    Bernoulli(BernoulliDecoder),
}

/// Transport costs between `m` data points and `n` latent codes.
///
/// Stored latent-major (`n x m`): row `j` holds `c(x_i, z_j)` for every `i`,
/// which is the access pattern of every c,ε-transform.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    by_latent: Tensor2,
}

impl CostMatrix {
    /// From an `m x n` data-major matrix.
    pub fn from_data_major(values: &Tensor2) -> Self {
        Self {
            by_latent: values.transpose(),
        }
    }

    /// From an `n x m` latent-major matrix.
    pub fn from_latent_major(by_latent: Tensor2) -> Self {
        Self { by_latent }
    }

    /// Number of data points.
    pub fn m(&self) -> usize {
        self.by_latent.cols()
    }

    /// Number of latent codes.
    pub fn n(&self) -> usize {
        self.by_latent.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.by_latent.get(j, i)
    }

    /// Costs from every data point to code `j`.
    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        self.by_latent.row(j)
    }

    pub fn latent_major(&self) -> &Tensor2 {
        &self.by_latent
    }

    /// `m x n` copy, entry `(i, j)` = `c(x_i, z_j)`.
    pub fn values(&self) -> Tensor2 {
        self.by_latent.transpose()
    }

    pub fn select_rows(&self, idx: &[usize]) -> CostMatrix {
        let n = self.n();
        let mut data = Vec::with_capacity(n * idx.len());
        for j in 0..n {
            let col = self.column(j);
            data.extend(idx.iter().map(|&i| col[i]));
        }
        CostMatrix {
            by_latent: Tensor2::new(n, idx.len(), data).expect("subset of finite costs"),
        }
    }
}

/// Weighted cost gradients from [`Decoder::weighted_backward`].
#[derive(Debug, Clone)]
pub struct WeightedBackward {
    pub grads: MlpGrads,
    /// Gradient with respect to each latent code (`n x d_z`).
    pub grad_latent: Tensor2,
    /// `Σ_j Σ_i w_ji c(x_i, z_j)`.
    pub weighted_cost: f64,
}

impl GaussianDecoder {
    /// Builds `z_dim → hidden… → 2·x_dim` with He initialization.
    pub fn init(z_dim: usize, hidden: &[usize], x_dim: usize, seed: u64) -> Result<Self> {
        let mut sizes = vec![z_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * x_dim);
        Ok(Self {
            net: MlpParams::init(&sizes, seed)?,
            log_var_floor: DEFAULT_LOG_VAR_FLOOR,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.net.output_dim() / 2
    }

    fn head(&self, raw: &[f64]) -> Head {
        let d = raw.len() / 2;
        let mean = raw[..d].to_vec();
        let mut log_var = Vec::with_capacity(d);
        let mut active = Vec::with_capacity(d);
        for &r in &raw[d..] {
            active.push(r > self.log_var_floor);
            log_var.push(r.max(self.log_var_floor));
        }
        let inv_two_var = log_var.iter().map(|lv| 0.5 * (-lv).exp()).collect();
        let log_norm = log_var.iter().map(|lv| 0.5 * lv + HALF_LN_2PI).sum();
        Head::Gaussian {
            mean,
            log_var,
            inv_two_var,
            log_norm,
            active,
        }
    }

    /// `(argmin_x c(x, z), min_x c(x, z)) = (μ(z), Σ log √(2π σ²(z)))`.
    pub fn prop1_minimum(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        let raw = self.net.predict(&Tensor2::new(1, z.len(), z.to_vec())?)?;
        match self.head(raw.row(0)) {
            Head::Gaussian { mean, log_norm, .. } => Ok((mean, log_norm)),
            Head::Bernoulli { .. } => unreachable!(),
        }
    }

    /// Mean and clamped log-variance of `p(x|z)` for each code.
    pub fn mean_and_log_var(&self, z: &Tensor2) -> Result<(Tensor2, Tensor2)> {
        let raw = self.net.predict(z)?;
        let d = self.data_dim();
        let mut mean = Tensor2::zeros(z.rows(), d);
        let mut lv = Tensor2::zeros(z.rows(), d);
        for j in 0..z.rows() {
            let row = raw.row(j);
            mean.row_mut(j).copy_from_slice(&row[..d]);
            for (o, r) in lv.row_mut(j).iter_mut().zip(&row[d..]) {
                *o = r.max(self.log_var_floor);
            }
        }
        Ok((mean, lv))
    }
}

impl BernoulliDecoder {
    /// Builds `z_dim → hidden… → x_dim` logits with He initialization.
    pub fn init(z_dim: usize, hidden: &[usize], x_dim: usize, seed: u64) -> Result<Self> {
        let mut sizes = vec![z_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(x_dim);
        Ok(Self {
            net: MlpParams::init(&sizes, seed)?,
            logit_clamp: DEFAULT_LOGIT_CLAMP,
        })
    }

    pub fn data_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn head(&self, raw: &[f64]) -> Head {
        let c = self.logit_clamp;
        let active = raw.iter().map(|r| r.abs() < c).collect();
        let logits: Vec<f64> = raw.iter().map(|r| r.clamp(-c, c)).collect();
        let softplus_sum = logits.iter().map(|l| softplus(*l)).sum();
        Head::Bernoulli {
            logits,
            softplus_sum,
            active,
        }
    }
}

impl From<GaussianDecoder> for Decoder {
    fn from(d: GaussianDecoder) -> Self {
        Decoder::Gaussian(d)
    }
}

impl From<BernoulliDecoder> for Decoder {
    fn from(d: BernoulliDecoder) -> Self {
        Decoder::Bernoulli(d)
    }
}

impl Decoder {
    pub fn net(&self) -> &MlpParams {
        match self {
            Decoder::Gaussian(d) => &d.net,
            Decoder::Bernoulli(d) => &d.net,
        }
    }

    pub fn net_mut(&mut self) -> &mut MlpParams {
        match self {
            Decoder::Gaussian(d) => &mut d.net,
            Decoder::Bernoulli(d) => &mut d.net,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.net().input_dim()
    }

    pub fn data_dim(&self) -> usize {
        match self {
            Decoder::Gaussian(d) => d.data_dim(),
            Decoder::Bernoulli(d) => d.data_dim(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Decoder::Gaussian(_) => "gaussian",
            Decoder::Bernoulli(_) => "bernoulli",
        }
    }

    pub fn as_gaussian(&self) -> Option<&GaussianDecoder> {
        match self {
            Decoder::Gaussian(d) => Some(d),
            Decoder::Bernoulli(_) => None,
        }
    }

    fn head(&self, raw: &[f64]) -> Head {
        match self {
            Decoder::Gaussian(d) => d.head(raw),
            Decoder::Bernoulli(d) => d.head(raw),
        }
    }

    fn heads(&self, z: &Tensor2) -> Result<Vec<Head>> {
        if z.cols() != self.latent_dim() {
            return Err(Error::shape(
                format!("codes of dimension {}", self.latent_dim()),
                z.cols(),
            ));
        }
        let raw = self.net().predict(z)?;
        Ok(raw.row_iter().map(|r| self.head(r)).collect())
    }

    fn check_x(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.data_dim() {
            return Err(Error::shape(
                format!("observation of dimension {}", self.data_dim()),
                x.len(),
            ));
        }
        Ok(())
    }

    /// `c_θ(x, z) = −log p_θ(x|z)`.
    pub fn cost_eval(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        self.check_x(x)?;
        let zt = Tensor2::new(1, z.len(), z.to_vec())?;
        let heads = self.heads(&zt)?;
        let c = heads[0].cost(x);
        if !c.is_finite() {
            return Err(Error::NonFinite("cost".into()));
        }
        Ok(c)
    }

    /// All costs `c(x_i, z_j)`, one decoder forward per code.
    pub fn cost_matrix(&self, data: &EmpiricalMeasure, z: &Tensor2) -> Result<CostMatrix> {
        self.cost_matrix_points(data.points(), z)
    }

    pub fn cost_matrix_points(&self, points: &Tensor2, z: &Tensor2) -> Result<CostMatrix> {
        if points.cols() != self.data_dim() {
            return Err(Error::shape(
                format!("data of dimension {}", self.data_dim()),
                points.cols(),
            ));
        }
        let heads = self.heads(z)?;
        let m = points.rows();
        let mut data = vec![0.0; heads.len() * m];
        if m > 0 {
            for (h, row) in heads.iter().zip(data.chunks_exact_mut(m)) {
                h.costs_into(points, row);
            }
        }
        let by_latent = Tensor2::new(heads.len(), m, data).map_err(|_| Error::NonFinite("cost matrix".into()))?;
        Ok(CostMatrix { by_latent })
    }

    /// Gradient of `weight · c_θ(x, z)` with respect to the decoder parameters.
    pub fn cost_backward(&self, x: &[f64], z: &[f64], weight: f64) -> Result<MlpGrads> {
        if !weight.is_finite() {
            return Err(Error::NonFinite("cost weight".into()));
        }
        self.check_x(x)?;
        let zt = Tensor2::new(1, z.len(), z.to_vec())?;
        let w = Tensor2::new(1, 1, vec![weight])?;
        let points = Tensor2::new(1, x.len(), x.to_vec())?;
        Ok(self.weighted_backward(&points, &zt, &w)?.grads)
    }

    /// Gradient of `Σ_j Σ_i w_ji c(x_i, z_j)` for a latent-major weight
    /// matrix `w` (`n x m`). One forward and one backward pass per batch.
    pub fn weighted_backward(&self, points: &Tensor2, z: &Tensor2, w: &Tensor2) -> Result<WeightedBackward> {
        if points.cols() != self.data_dim() {
            return Err(Error::shape(
                format!("data of dimension {}", self.data_dim()),
                points.cols(),
            ));
        }
        if w.shape() != (z.rows(), points.rows()) {
            return Err(Error::shape(
                format!("weights {}x{}", z.rows(), points.rows()),
                format!("{}x{}", w.rows(), w.cols()),
            ));
        }
        let net = self.net();
        let (raw, cache) = net.forward(z)?;
        let mut grad_head = Tensor2::zeros(z.rows(), net.output_dim());
        let mut weighted_cost = 0.0;
        for j in 0..z.rows() {
            let head = self.head(raw.row(j));
            weighted_cost += head.accumulate_weighted(points, w.row(j), grad_head.row_mut(j));
        }
        if !weighted_cost.is_finite() || !grad_head.all_finite() {
            return Err(Error::NonFinite("weighted cost".into()));
        }
        let (grads, grad_latent) = net.backward(&cache, &grad_head)?;
        Ok(WeightedBackward {
            grads,
            grad_latent,
            weighted_cost,
        })
    }

    /// Gradient of `Σ_j weights_j c(x_j, z_j)` over matched pairs.
    pub fn paired_backward(&self, points: &Tensor2, z: &Tensor2, weights: &[f64]) -> Result<WeightedBackward> {
        if points.rows() != z.rows() || weights.len() != z.rows() {
            return Err(Error::shape(
                format!("{} paired rows", z.rows()),
                format!("{} points, {} weights", points.rows(), weights.len()),
            ));
        }
        self.check_x(points.row(0))?;
        let net = self.net();
        let (raw, cache) = net.forward(z)?;
        let mut grad_head = Tensor2::zeros(z.rows(), net.output_dim());
        let mut weighted_cost = 0.0;
        for (j, &w) in weights.iter().enumerate() {
            let head = self.head(raw.row(j));
            weighted_cost += w * head.cost(points.row(j));
            head.accumulate_grad(points.row(j), w, grad_head.row_mut(j));
        }
        if !weighted_cost.is_finite() || !grad_head.all_finite() {
            return Err(Error::NonFinite("paired cost".into()));
        }
        let (grads, grad_latent) = net.backward(&cache, &grad_head)?;
        Ok(WeightedBackward {
            grads,
            grad_latent,
            weighted_cost,
        })
    }

    /// `E[x | z]`: Gaussian means or Bernoulli probabilities.
    pub fn decode_mean(&self, z: &Tensor2) -> Result<Tensor2> {
        let heads = self.heads(z)?;
        let d = self.data_dim();
        let mut out = Tensor2::zeros(z.rows(), d);
        for (j, h) in heads.iter().enumerate() {
            match h {
                Head::Gaussian { mean, .. } => out.row_mut(j).copy_from_slice(mean),
                Head::Bernoulli { logits, .. } => {
                    for (o, l) in out.row_mut(j).iter_mut().zip(logits) {
                        *o = sigmoid(*l);
                    }
                }
            }
        }
        Ok(out)
    }

    /// One draw from `p(x|z)` per code.
    pub fn sample_observation<R: Rng + ?Sized>(&self, z: &Tensor2, rng: &mut R) -> Result<Tensor2> {
        let heads = self.heads(z)?;
        let d = self.data_dim();
        let mut out = Tensor2::zeros(z.rows(), d);
        for (j, h) in heads.iter().enumerate() {
            let row = out.row_mut(j);
            match h {
                Head::Gaussian { mean, log_var, .. } => {
                    for k in 0..d {
                        let eps = box_muller(rng).0;
                        row[k] = mean[k] + (0.5 * log_var[k]).exp() * eps;
                    }
                }
                Head::Bernoulli { logits, .. } => {
                    for k in 0..d {
                        let u: f64 = rng.gen();
                        row[k] = if u < sigmoid(logits[k]) { 1.0 } else { 0.0 };
                    }
                }
            }
        }
        Ok(out)
    }
}
