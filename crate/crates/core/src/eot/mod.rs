//! Entropic optimal transport between an empirical data measure and a latent
//! prior.
//!
//! For marginals `μ` (data, `m` atoms) and `ν` (latent) and a cost `c`, the
//! entropic problem
//!
//! ```text
//! OT_ε(μ, ν) = min_{π ∈ U(μ,ν)} ⟨π, c⟩ + ε KL(π ‖ μ⊗ν)
//! ```
//!
//! has the dual
//!
//! ```text
//! max_{u,v} ⟨u, μ⟩ + ⟨v, ν⟩ − ε ∫ exp((u(x) + v(z) − c(x,z)) / ε) dμ dν  (+ ε at the optimum)
//! ```
//!
//! and, after eliminating `v` with the c,ε-transform
//! `u^{c,ε}(z) = −ε log Σ_i μ_i exp((u_i − c(x_i, z)) / ε)`, the semi-dual
//!
//! ```text
//! L(u) = E_{z∼ν} [ ⟨u, μ⟩ + u^{c,ε}(z) ],
//! ```
//!
//! a smooth concave function of the finite vector `u ∈ R^m`. Its gradient is
//! `μ_i − E_z[w_i(z)]` where `w(z)` is the softmax of `(u − c(·,z))/ε`
//! weighted by `μ`: the conditional plan `π(x_i | z)`.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`sinkhorn`] | log-domain Sinkhorn for discrete × discrete problems |
//! | [`semidual`] | c,ε-transform, semi-dual objective and gradient, full dual objective |
//! | [`posterior`] | importance sampling from `q(z | x_i)` |
//!
//! All exponentials go through max-subtracted log-sum-exp.

pub mod posterior;
pub mod semidual;
pub mod sinkhorn;

pub use posterior::{posterior_importance_sample, resample_one, PosteriorBatch, WeightedLatentSample};
pub use semidual::{
    c_eps_transform, conditional_plan_weights, dual_objective, plan_weight_matrix, semidual_eval,
    semidual_eval_with_plan, semidual_grad_u, semidual_objective, DualObjective, SemiDualEval, SemiDualPotential,
};
pub use sinkhorn::{sinkhorn, sinkhorn_warm, DiscretePlan, DualPotentialPair, SinkhornResult};

/// Terms this far below the maximum are dropped from sums of exponentials;
/// `e^{-60}` is below `f64` resolution relative to the leading term.
const EXP_CUTOFF: f64 = -60.0;

#[inline]
fn shifted_exp(d: f64) -> f64 {
    if d < EXP_CUTOFF {
        0.0
    } else {
        d.exp()
    }
}

/// `log Σ_k exp(a_k)`; `-inf` for an empty slice.
#[inline]
pub fn log_sum_exp(a: &[f64]) -> f64 {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + a.iter().map(|v| shifted_exp(v - max)).sum::<f64>().ln()
}

/// Softmax of `a` written into `out`; returns `log Σ exp(a)`.
#[inline]
pub fn softmax_into(a: &[f64], out: &mut [f64]) -> f64 {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, v) in out.iter_mut().zip(a) {
        *o = shifted_exp(v - max);
        total += *o;
    }
    let inv = 1.0 / total;
    out.iter_mut().for_each(|o| *o *= inv);
    max + total.ln()
}

/// Effective sample size `1 / Σ w²` of normalized weights.
pub fn effective_sample_size(w: &[f64]) -> f64 {
    1.0 / w.iter().map(|x| x * x).sum::<f64>()
}

pub(crate) fn log_weights(w: &[f64]) -> Vec<f64> {
    w.iter().map(|x| x.ln()).collect()
}
