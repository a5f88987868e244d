use super::{log_sum_exp, log_weights};
use crate::cost::CostMatrix;
use crate::error::{Error, Result};
use crate::numcore::Tensor2;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Coupling of two discrete measures.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePlan {
    /// `m x n`, entry `(i, j)` the mass moved from data `i` to latent `j`.
    pub pi: Tensor2,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

impl DiscretePlan {
    pub fn row_sums(&self) -> Vec<f64> {
        self.pi.row_iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.pi.cols()];
        for r in self.pi.row_iter() {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }

    /// `max(‖rows − μ‖_∞, ‖cols − ν‖_∞)`.
    pub fn marginal_violation(&self) -> f64 {
        let r = self
            .row_sums()
            .iter()
            .zip(&self.mu)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let c = self
            .col_sums()
            .iter()
            .zip(&self.nu)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        r.max(c)
    }

    /// `⟨π, c⟩`.
    pub fn transport_cost(&self, cost: &CostMatrix) -> f64 {
        let mut s = 0.0;
        for i in 0..self.pi.rows() {
            for j in 0..self.pi.cols() {
                s += self.pi.get(i, j) * cost.get(i, j);
            }
        }
        s
    }

    /// `KL(π ‖ μ⊗ν)`, with `0 log 0 = 0`.
    pub fn kl_to_product(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.pi.rows() {
            for j in 0..self.pi.cols() {
                let p = self.pi.get(i, j);
                if p > 0.0 {
                    s += p * (p / (self.mu[i] * self.nu[j])).ln();
                }
            }
        }
        s
    }

    /// `⟨π, c⟩ + ε KL(π ‖ μ⊗ν)`.
    pub fn primal_value(&self, cost: &CostMatrix, epsilon: f64) -> f64 {
        self.transport_cost(cost) + epsilon * self.kl_to_product()
    }

    /// Column `j` divided by `ν_j`: `π(x_i | z_j)`.
    pub fn conditional_given_latent(&self, j: usize) -> Vec<f64> {
        (0..self.pi.rows()).map(|i| self.pi.get(i, j) / self.nu[j]).collect()
    }

    /// Row `i` divided by `μ_i`: `π(z_j | x_i)`.
    pub fn conditional_given_data(&self, i: usize) -> Vec<f64> {
        self.pi.row(i).iter().map(|p| p / self.mu[i]).collect()
    }
}

/// Potentials `(u, v)` with plan `π_ij = μ_i ν_j exp((u_i + v_j − c_ij)/ε)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentialPair {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub plan: DiscretePlan,
    pub potentials: DualPotentialPair,
    pub iterations: usize,
    pub converged: bool,
    pub marginal_violation: f64,
}

fn validate_marginal(w: &[f64], len: usize, name: &str) -> Result<()> {
    if w.len() != len {
        return Err(Error::shape(format!("{name} of length {len}"), w.len()));
    }
    if w.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("{name} must be strictly positive")));
    }
    Ok(())
}

/// Log-domain Sinkhorn from zero potentials.
pub fn sinkhorn(
    cost: &CostMatrix,
    mu: &[f64],
    nu: &[f64],
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SinkhornResult> {
    sinkhorn_warm(cost, mu, nu, epsilon, tol, max_iter, None)
}

/// Log-domain Sinkhorn started from `init_u`.
///
/// Each sweep sets `v` so that column sums equal `ν`, then `u` so that row
/// sums equal `μ`; it stops once the column violation left by the `u` update
/// falls below `tol`. Hitting `max_iter` is not an error: the result is
/// returned with `converged = false`.
pub fn sinkhorn_warm(
    cost: &CostMatrix,
    mu: &[f64],
    nu: &[f64],
    epsilon: f64,
    tol: f64,
    max_iter: usize,
    init_u: Option<&[f64]>,
) -> Result<SinkhornResult> {
    let (m, n) = (cost.m(), cost.n());
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    validate_marginal(mu, m, "mu")?;
    validate_marginal(nu, n, "nu")?;
    let log_mu = log_weights(mu);
    let log_nu = log_weights(nu);
    let data_major = cost.values();

    let mut u = match init_u {
        Some(u0) if u0.len() == m => u0.to_vec(),
        Some(u0) => return Err(Error::shape(format!("initial u of length {m}"), u0.len())),
        None => vec![0.0; m],
    };
    let mut v = vec![0.0; n];
    let mut buf_m = vec![0.0; m];
    let mut buf_n = vec![0.0; n];

    let update_v = |u: &[f64], v: &mut [f64], buf: &mut [f64]| {
        for (j, vj) in v.iter_mut().enumerate() {
            let col = cost.column(j);
            for i in 0..m {
                buf[i] = log_mu[i] + (u[i] - col[i]) / epsilon;
            }
            *vj = -epsilon * log_sum_exp(buf);
        }
    };
    let update_u = |v: &[f64], u: &mut [f64], buf: &mut [f64]| {
        for (i, ui) in u.iter_mut().enumerate() {
            let row = data_major.row(i);
            for j in 0..n {
                buf[j] = log_nu[j] + (v[j] - row[j]) / epsilon;
            }
            *ui = -epsilon * log_sum_exp(buf);
        }
    };
    let col_violation = |u: &[f64], v: &[f64]| -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..n {
            let col = cost.column(j);
            let s: f64 = (0..m)
                .map(|i| (log_mu[i] + log_nu[j] + (u[i] + v[j] - col[i]) / epsilon).exp())
                .sum();
            worst = worst.max((s - nu[j]).abs());
        }
        worst
    };

    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        update_v(&u, &mut v, &mut buf_m);
        update_u(&v, &mut u, &mut buf_n);
        iterations += 1;
        let violation = col_violation(&u, &v);
        if !violation.is_finite() {
            return Err(Error::NonFinite("Sinkhorn potentials".into()));
        }
        if violation < tol {
            converged = true;
            break;
        }
    }

    let pi = Tensor2::from_fn(m, n, |i, j| {
        (log_mu[i] + log_nu[j] + (u[i] + v[j] - data_major.get(i, j)) / epsilon).exp()
    })?;
    let plan = DiscretePlan {
        pi,
        mu: mu.to_vec(),
        nu: nu.to_vec(),
    };
    let marginal_violation = plan.marginal_violation();
    if marginal_violation < tol {
        converged = true;
    }
    Ok(SinkhornResult {
        plan,
        potentials: DualPotentialPair { u, v, epsilon },
        iterations,
        converged,
        marginal_violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::seeded;
    use rand::Rng;

    fn cm(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_data_major(&Tensor2::from_rows(rows).unwrap())
    }

    #[test]
    fn one_by_one_plan() {
        let r = sinkhorn(&cm(&[&[3.7]]), &[1.0], &[1.0], 0.1, 1e-12, 100).unwrap();
        assert!((r.plan.pi.get(0, 0) - 1.0).abs() < 1e-15);
        assert!(r.converged);
    }

    #[test]
    fn large_epsilon_gives_independent_coupling() {
        let c = cm(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let eps = 100.0;
        let r = sinkhorn(&c, &[0.5, 0.5], &[0.5, 0.5], eps, 1e-12, 1000).unwrap();
        // symmetric 2x2: π11 / π12 = exp(1/ε), so π11 = ½ e^{1/ε} / (1 + e^{1/ε})
        let k = (1.0f64 / eps).exp();
        let diag = 0.5 * k / (1.0 + k);
        assert!((r.plan.pi.get(0, 0) - diag).abs() < 1e-12);
        assert!((r.plan.pi.get(0, 1) - (0.5 - diag)).abs() < 1e-12);
        for v in r.plan.pi.data() {
            assert!((v - 0.25).abs() < 2e-3, "{v}");
        }
    }

    #[test]
    fn marginals_hold_at_convergence() {
        let mut rng = seeded(3);
        let c = Tensor2::from_fn(6, 4, |_, _| rng.gen::<f64>() * 3.0).unwrap();
        let mu = [0.1, 0.2, 0.1, 0.3, 0.2, 0.1];
        let nu = [0.4, 0.3, 0.2, 0.1];
        let r = sinkhorn(&CostMatrix::from_data_major(&c), &mu, &nu, 0.2, 1e-10, 10_000).unwrap();
        assert!(r.converged);
        assert!(r.marginal_violation < 1e-10);
    }

    #[test]
    fn max_iter_flags_non_convergence() {
        let c = cm(&[&[0.0, 5.0], &[5.0, 0.0], &[1.0, 2.0]]);
        let r = sinkhorn(&c, &[0.2, 0.5, 0.3], &[0.6, 0.4], 0.01, 1e-14, 1).unwrap();
        assert_eq!(r.iterations, 1);
        assert!(!r.converged);
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = cm(&[&[0.0, 1.0]]);
        assert!(sinkhorn(&c, &[1.0], &[0.5, 0.5], 0.0, 1e-9, 10).is_err());
        assert!(sinkhorn(&c, &[1.0], &[1.0, 0.0], 0.1, 1e-9, 10).is_err());
        assert!(sinkhorn(&c, &[1.0], &[1.0], 0.1, 1e-9, 10).is_err());
    }
}
