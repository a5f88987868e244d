use super::sinkhorn::DualPotentialPair;
use super::{log_sum_exp, log_weights, softmax_into};
use crate::cost::{CostMatrix, Decoder};
use crate::dists::{EmpiricalMeasure, LatentBatch};
use crate::error::{Error, Result};
use crate::numcore::Tensor2;

/// Exponents above this are clamped in [`dual_objective`].
pub const DUAL_EXP_CLAMP: f64 = 30.0;

/// Semi-dual variable: one entry per data point.
///
/// Only differences between entries matter; `u + s·1` yields the same
/// objective and conditional plans. Compare potentials after
/// [`SemiDualPotential::centered`].
#[derive(Debug, Clone, PartialEq)]
pub struct SemiDualPotential {
    pub u: Vec<f64>,
    pub epsilon: f64,
}

impl SemiDualPotential {
    pub fn zeros(m: usize, epsilon: f64) -> Result<Self> {
        Self::new(vec![0.0; m], epsilon)
    }

    pub fn new(u: Vec<f64>, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("potential".into()));
        }
        Ok(Self { u, epsilon })
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// Copy shifted to mean zero.
    pub fn centered(&self) -> Vec<f64> {
        let mean = self.u.iter().sum::<f64>() / self.u.len() as f64;
        self.u.iter().map(|v| v - mean).collect()
    }
}

/// `u^{c,ε}(z) = −ε log Σ_i μ_i exp((u_i − c_i)/ε)`.
pub fn c_eps_transform(u: &[f64], cost_column: &[f64], mu: &[f64], epsilon: f64) -> Result<f64> {
    if u.len() != cost_column.len() || u.len() != mu.len() {
        return Err(Error::shape(
            format!("{} potentials, costs and weights", u.len()),
            format!("{} costs, {} weights", cost_column.len(), mu.len()),
        ));
    }
    let a: Vec<f64> = (0..u.len())
        .map(|i| mu[i].ln() + (u[i] - cost_column[i]) / epsilon)
        .collect();
    Ok(-epsilon * log_sum_exp(&a))
}

/// Softmax over data points of `(u_i − c_i)/ε` with base weights `μ`:
/// the conditional plan `π(x_i | z)`.
pub fn conditional_plan_weights(u: &[f64], cost_column: &[f64], mu: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if u.len() != cost_column.len() || u.len() != mu.len() {
        return Err(Error::shape(format!("{} entries", u.len()), cost_column.len()));
    }
    let a: Vec<f64> = (0..u.len())
        .map(|i| mu[i].ln() + (u[i] - cost_column[i]) / epsilon)
        .collect();
    let mut w = vec![0.0; u.len()];
    softmax_into(&a, &mut w);
    Ok(w)
}

/// Conditional plan at a single code, evaluating the decoder.
pub fn conditional_plan_weights_at(
    u: &SemiDualPotential,
    decoder: &Decoder,
    data: &EmpiricalMeasure,
    z: &[f64],
) -> Result<Vec<f64>> {
    let zt = Tensor2::new(1, z.len(), z.to_vec())?;
    let costs = decoder.cost_matrix(data, &zt)?;
    conditional_plan_weights(&u.u, costs.column(0), data.weights(), u.epsilon)
}

/// Semi-dual value, gradient and the per-code quantities behind them.
#[derive(Debug, Clone)]
pub struct SemiDualEval {
    pub objective: f64,
    /// `μ_i − Σ_j ν_j w_ji`.
    pub grad: Vec<f64>,
    /// `u^{c,ε}(z_j)` for every code.
    pub transforms: Vec<f64>,
}

impl SemiDualEval {
    pub fn grad_norm(&self) -> f64 {
        self.grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// `‖grad‖_∞`, the largest data-marginal violation of the implied plan.
    pub fn marginal_violation(&self) -> f64 {
        self.grad.iter().fold(0.0, |a, g| a.max(g.abs()))
    }
}

fn check_dims(u: &SemiDualPotential, costs: &CostMatrix, mu: &[f64], nu: &[f64]) -> Result<()> {
    if u.len() != costs.m() || mu.len() != costs.m() {
        return Err(Error::shape(
            format!("{} data points", costs.m()),
            format!("{} potentials, {} weights", u.len(), mu.len()),
        ));
    }
    if nu.len() != costs.n() {
        return Err(Error::shape(format!("{} latent weights", costs.n()), nu.len()));
    }
    Ok(())
}

/// Objective `Σ_j ν_j [⟨u, μ⟩ + u^{c,ε}(z_j)]` and its gradient in `u`,
/// from precomputed costs.
pub fn semidual_eval(u: &SemiDualPotential, costs: &CostMatrix, mu: &[f64], nu: &[f64]) -> Result<SemiDualEval> {
    eval_into(u, costs, mu, nu, None)
}

/// [`semidual_eval`] plus the latent-major `n x m` plan weights of
/// [`plan_weight_matrix`], from one pass over the costs.
pub fn semidual_eval_with_plan(
    u: &SemiDualPotential,
    costs: &CostMatrix,
    mu: &[f64],
    nu: &[f64],
) -> Result<(SemiDualEval, Tensor2)> {
    let mut plan = Tensor2::zeros(costs.n(), costs.m());
    let eval = eval_into(u, costs, mu, nu, Some(&mut plan))?;
    Ok((eval, plan))
}

fn eval_into(
    u: &SemiDualPotential,
    costs: &CostMatrix,
    mu: &[f64],
    nu: &[f64],
    mut plan: Option<&mut Tensor2>,
) -> Result<SemiDualEval> {
    check_dims(u, costs, mu, nu)?;
    let eps = u.epsilon;
    let m = costs.m();
    let log_mu = log_weights(mu);
    let mean_u: f64 = u.u.iter().zip(mu).map(|(a, b)| a * b).sum();
    let mut grad = mu.to_vec();
    let mut transforms = Vec::with_capacity(costs.n());
    let mut a = vec![0.0; m];
    let mut scratch = vec![0.0; m];
    let mut objective = 0.0;
    for (j, &nu_j) in nu.iter().enumerate() {
        let col = costs.column(j);
        for i in 0..m {
            a[i] = log_mu[i] + (u.u[i] - col[i]) / eps;
        }
        let w = match plan.as_deref_mut() {
            Some(p) => p.row_mut(j),
            None => &mut scratch[..],
        };
        let lse = softmax_into(&a, w);
        let t = -eps * lse;
        transforms.push(t);
        objective += nu_j * (mean_u + t);
        for (g, wi) in grad.iter_mut().zip(w.iter()) {
            *g -= nu_j * wi;
        }
    }
    if !objective.is_finite() {
        return Err(Error::NonFinite("semi-dual objective".into()));
    }
    Ok(SemiDualEval {
        objective,
        grad,
        transforms,
    })
}

/// Latent-major `n x m` matrix of conditional plans `π(x_i | z_j)`.
pub fn plan_weight_matrix(u: &SemiDualPotential, costs: &CostMatrix, mu: &[f64]) -> Result<Tensor2> {
    if u.len() != costs.m() || mu.len() != costs.m() {
        return Err(Error::shape(format!("{} data points", costs.m()), u.len()));
    }
    let m = costs.m();
    let log_mu = log_weights(mu);
    let mut out = Tensor2::zeros(costs.n(), m);
    let mut a = vec![0.0; m];
    for j in 0..costs.n() {
        let col = costs.column(j);
        for i in 0..m {
            a[i] = log_mu[i] + (u.u[i] - col[i]) / u.epsilon;
        }
        softmax_into(&a, out.row_mut(j));
    }
    Ok(out)
}

/// Monte Carlo (or exact, for an enumerated batch) semi-dual objective.
pub fn semidual_objective(
    u: &SemiDualPotential,
    decoder: &Decoder,
    data: &EmpiricalMeasure,
    batch: &LatentBatch,
) -> Result<f64> {
    let costs = decoder.cost_matrix(data, &batch.z)?;
    Ok(semidual_eval(u, &costs, data.weights(), &batch.weights)?.objective)
}

pub fn semidual_grad_u(
    u: &SemiDualPotential,
    decoder: &Decoder,
    data: &EmpiricalMeasure,
    batch: &LatentBatch,
) -> Result<Vec<f64>> {
    let costs = decoder.cost_matrix(data, &batch.z)?;
    Ok(semidual_eval(u, &costs, data.weights(), &batch.weights)?.grad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualObjective {
    pub value: f64,
    /// Some exponent exceeded [`DUAL_EXP_CLAMP`] and was clamped.
    pub clamped: bool,
}

/// `Σ_ij μ_i ν_j [u_i + v_j − ε exp((u_i + v_j − c_ij)/ε)]`.
pub fn dual_objective(pair: &DualPotentialPair, costs: &CostMatrix, mu: &[f64], nu: &[f64]) -> Result<DualObjective> {
    if pair.u.len() != costs.m() || mu.len() != costs.m() || pair.v.len() != costs.n() || nu.len() != costs.n() {
        return Err(Error::shape(
            format!("{}x{} problem", costs.m(), costs.n()),
            format!(
                "u {}, v {}, mu {}, nu {}",
                pair.u.len(),
                pair.v.len(),
                mu.len(),
                nu.len()
            ),
        ));
    }
    let eps = pair.epsilon;
    let mut value = 0.0;
    let mut clamped = false;
    for (j, &nu_j) in nu.iter().enumerate() {
        let col = costs.column(j);
        let mut inner = 0.0;
        for i in 0..costs.m() {
            let mut e = (pair.u[i] + pair.v[j] - col[i]) / eps;
            if e > DUAL_EXP_CLAMP {
                e = DUAL_EXP_CLAMP;
                clamped = true;
            }
            inner += mu[i] * (pair.u[i] + pair.v[j] - eps * e.exp());
        }
        value += nu_j * inner;
    }
    Ok(DualObjective { value, clamped })
}

/// Dual objective evaluated on decoder costs.
pub fn dual_objective_at(
    pair: &DualPotentialPair,
    decoder: &Decoder,
    data: &EmpiricalMeasure,
    batch: &LatentBatch,
) -> Result<DualObjective> {
    let costs = decoder.cost_matrix(data, &batch.z)?;
    dual_objective(pair, &costs, data.weights(), &batch.weights)
}
