use proptest::prelude::*;

use coupled_vae::cost::{CostMatrix, Decoder, GaussianDecoder};
use coupled_vae::data::{parse_idx_images, IdxImageSet};
use coupled_vae::eot::{
    c_eps_transform, conditional_plan_weights, effective_sample_size, log_sum_exp, semidual_eval, sinkhorn,
    SemiDualPotential,
};
use coupled_vae::eval::{high_density_ratio, mmd_rbf};
use coupled_vae::numcore::Tensor2;

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    })
}

fn costs(m: usize, n: usize) -> impl Strategy<Value = Tensor2> {
    prop::collection::vec(0.0f64..5.0, m * n).prop_map(move |v| Tensor2::new(m, n, v).unwrap())
}

/// Exact optimal transport cost of a 2×2 problem. Couplings form a segment
/// parameterised by `π_00`, and the cost is linear along it.
fn exact_2x2(c: &[f64], rows: &[f64], cols: &[f64]) -> f64 {
    let cost = |t: f64| c[0] * t + c[1] * (rows[0] - t) + c[2] * (cols[0] - t) + c[3] * (rows[1] - cols[0] + t);
    let lo = (cols[0] - rows[1]).max(0.0);
    let hi = rows[0].min(cols[0]);
    cost(lo).min(cost(hi))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn plan_weights_form_a_distribution(
        (u, c, mu) in (1usize..20).prop_flat_map(|m| (
            prop::collection::vec(-10.0f64..10.0, m),
            prop::collection::vec(0.0f64..50.0, m),
            simplex(m),
        )),
        log_eps in -4.0f64..3.0,
    ) {
        let w = conditional_plan_weights(&u, &c, &mu, 10f64.powf(log_eps)).unwrap();
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transform_is_a_soft_minimum(
        (u, c, mu) in (1usize..12).prop_flat_map(|m| (
            prop::collection::vec(-3.0f64..3.0, m),
            prop::collection::vec(0.0f64..10.0, m),
            simplex(m),
        )),
        eps in 0.01f64..10.0,
    ) {
        // min_i (c_i − u_i) ≤ u^{c,ε} ≤ Σ_i μ_i (c_i − u_i)
        let t = c_eps_transform(&u, &c, &mu, eps).unwrap();
        let d: Vec<f64> = c.iter().zip(&u).map(|(c, u)| c - u).collect();
        let hard = d.iter().copied().fold(f64::INFINITY, f64::min);
        let avg: f64 = d.iter().zip(&mu).map(|(d, m)| d * m).sum();
        prop_assert!(t >= hard - 1e-9, "{t} < {hard}");
        prop_assert!(t <= avg + 1e-9, "{t} > {avg}");
    }

    #[test]
    fn transform_shifts_with_the_potential(
        (u, c, mu) in (1usize..12).prop_flat_map(|m| (
            prop::collection::vec(-3.0f64..3.0, m),
            prop::collection::vec(0.0f64..10.0, m),
            simplex(m),
        )),
        a in -5.0f64..5.0,
        eps in 0.05f64..5.0,
    ) {
        let t0 = c_eps_transform(&u, &c, &mu, eps).unwrap();
        let shifted: Vec<f64> = u.iter().map(|v| v + a).collect();
        let t1 = c_eps_transform(&shifted, &c, &mu, eps).unwrap();
        prop_assert!((t1 - (t0 - a)).abs() < 1e-9);
    }

    #[test]
    fn semidual_objective_is_gauge_invariant(
        c in costs(5, 4),
        mu in simplex(5),
        nu in simplex(4),
        a in -3.0f64..3.0,
        eps in 0.1f64..3.0,
    ) {
        let cm = CostMatrix::from_data_major(&c);
        let u0 = SemiDualPotential::new(vec![0.3, -0.1, 0.0, 0.7, -0.5], eps).unwrap();
        let u1 = SemiDualPotential::new(u0.u.iter().map(|v| v + a).collect(), eps).unwrap();
        let e0 = semidual_eval(&u0, &cm, &mu, &nu).unwrap();
        let e1 = semidual_eval(&u1, &cm, &mu, &nu).unwrap();
        prop_assert!((e0.objective - e1.objective).abs() < 1e-9);
        prop_assert!(e0.grad.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn sinkhorn_matches_both_marginals(
        c in costs(6, 5),
        mu in simplex(6),
        nu in simplex(5),
        eps in 0.05f64..2.0,
    ) {
        let cm = CostMatrix::from_data_major(&c);
        let r = sinkhorn(&cm, &mu, &nu, eps, 1e-11, 100_000).unwrap();
        prop_assert!(r.converged);
        prop_assert!(r.plan.marginal_violation() < 1e-10);
        prop_assert!(r.plan.pi.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn entropic_cost_is_at_least_the_exact_optimum_of_a_2x2(
        c in prop::collection::vec(0.0f64..5.0, 4),
        eps in 0.05f64..2.0,
    ) {
        let t = Tensor2::new(2, 2, c.clone()).unwrap();
        let cm = CostMatrix::from_data_major(&t);
        let r = sinkhorn(&cm, &[0.5, 0.5], &[0.5, 0.5], eps, 1e-12, 100_000).unwrap();
        // At small ε Sinkhorn can stop short of exact marginals, so compare
        // with the optimum for the marginals the plan actually has.
        let rows = r.plan.row_sums();
        let cols = r.plan.col_sums();
        let exact = exact_2x2(&c, &rows, &cols);
        prop_assert!(r.plan.transport_cost(&cm) >= exact - 1e-12);
        prop_assert!(r.plan.marginal_violation() < 1e-5);
    }

    #[test]
    fn log_sum_exp_is_stable(v in prop::collection::vec(-800.0f64..800.0, 1..30), shift in -500.0f64..500.0) {
        let a = log_sum_exp(&v);
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        prop_assert!(a.is_finite());
        prop_assert!((log_sum_exp(&shifted) - (a + shift)).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn ess_lies_between_one_and_n(w in prop::collection::vec(0.0f64..1.0, 1..50)) {
        prop_assume!(w.iter().sum::<f64>() > 1e-9);
        let s: f64 = w.iter().sum();
        let w: Vec<f64> = w.iter().map(|v| v / s).collect();
        let ess = effective_sample_size(&w);
        prop_assert!(ess >= 1.0 - 1e-9 && ess <= w.len() as f64 + 1e-9);
    }

    #[test]
    fn gaussian_cost_never_undercuts_its_minimum(
        seed in 0u64..1000,
        z in prop::collection::vec(-3.0f64..3.0, 2),
        x in prop::collection::vec(-5.0f64..5.0, 3),
    ) {
        let g = GaussianDecoder::init(2, &[6], 3, seed).unwrap();
        let (_, c_min) = g.prop1_minimum(&z).unwrap();
        let c = Decoder::Gaussian(g).cost_eval(&x, &z).unwrap();
        prop_assert!(c >= c_min - 1e-9);
    }

    #[test]
    fn idx_round_trips(count in 0usize..4, rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
        let pixels: Vec<u8> = (0..count * rows * cols).map(|k| (seed.wrapping_mul(k as u64 + 7) >> 13) as u8).collect();
        let set = IdxImageSet::new(count, rows, cols, pixels).unwrap();
        prop_assert_eq!(parse_idx_images(&set.to_bytes(), usize::MAX).unwrap(), set);
    }

    #[test]
    fn mmd_is_symmetric(a in prop::collection::vec(-2.0f64..2.0, 20), b in prop::collection::vec(-2.0f64..2.0, 16)) {
        let ta = Tensor2::new(10, 2, a).unwrap();
        let tb = Tensor2::new(8, 2, b).unwrap();
        let ab = mmd_rbf(&ta, &tb, Some(0.7)).unwrap().value;
        let ba = mmd_rbf(&tb, &ta, Some(0.7)).unwrap().value;
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn samples_on_the_means_are_all_high_density(k in 1usize..6, reps in 1usize..4) {
        let means = Tensor2::from_fn(k, 2, |i, j| (i * 3 + j) as f64).unwrap();
        let samples = Tensor2::from_fn(k * reps, 2, |i, j| means.get(i % k, j)).unwrap();
        let m = high_density_ratio(&samples, &means, 0.05, 4.0).unwrap();
        prop_assert_eq!(m.high_density_ratio, 1.0);
        prop_assert_eq!(m.std_within_modes, 0.0);
    }
}
