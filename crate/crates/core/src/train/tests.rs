use super::*;
use crate::cost::{Decoder, GaussianDecoder};
use crate::dists::{AtomPrior, CategoricalPrior};
use crate::eot::sinkhorn;
use crate::numcore::rng::standard_normal_vec;
use crate::numcore::seeded;

fn points(m: usize, seed: u64) -> EmpiricalMeasure {
    EmpiricalMeasure::from_rows(Tensor2::new(m, 2, standard_normal_vec(&mut seeded(seed), 2 * m)).unwrap()).unwrap()
}

fn decoder(seed: u64) -> Decoder {
    Decoder::Gaussian(GaussianDecoder::init(2, &[8], 2, seed).unwrap())
}

fn atom_prior(probs: Vec<f64>, seed: u64) -> ModelPrior {
    let k = probs.len();
    let atoms = Tensor2::new(k, 2, standard_normal_vec(&mut seeded(seed), 2 * k)).unwrap();
    ModelPrior::Atoms(AtomPrior::new(CategoricalPrior::new(probs).unwrap(), atoms).unwrap())
}

fn frozen(eps: f64, iters: usize, opt: DualOptimizer, lr_u: f64) -> TrainConfig {
    TrainConfig {
        strategy: Strategy::Dual,
        epsilon: eps,
        lr_u,
        lr_theta: 0.0,
        inner_iters: iters,
        epochs: 1,
        dual_optimizer: opt,
        ..TrainConfig::default()
    }
}

#[test]
fn inner_loop_ascent_is_monotone() {
    let data = points(8, 1);
    let prior = atom_prior(vec![0.1, 0.2, 0.3, 0.4], 2);
    let cfg = frozen(0.3, 1, DualOptimizer::Sgd, 0.3 * 0.5 / 0.125);
    let mut t = Trainer::new(cfg, &data, prior, decoder(3), None).unwrap();
    let mut last = f64::NEG_INFINITY;
    for _ in 0..300 {
        let e = t.potential_steps(&mut seeded(0)).unwrap();
        assert!(e.objective >= last - 1e-12, "{} < {last}", e.objective);
        last = e.objective;
    }
}

#[test]
fn frozen_decoder_recovers_sinkhorn_potential() {
    let data = points(8, 4);
    let prior = atom_prior(vec![0.1, 0.2, 0.3, 0.4], 5);
    let dec = decoder(6);
    let eps = 0.5;
    let ModelPrior::Atoms(ap) = &prior else { unreachable!() };
    let costs = dec.cost_matrix(&data, &ap.atoms).unwrap();
    let s = sinkhorn(&costs, data.weights(), ap.prior.probs(), eps, 1e-14, 100_000).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        ..frozen(eps, 2000, DualOptimizer::Scaled, 1.0)
    };
    let model = train_dual(&cfg, &data, prior, dec.clone(), &mut seeded(7)).unwrap();
    assert_eq!(model.decoder, dec);
    let a = model.potential.centered();
    let su = SemiDualPotential::new(s.potentials.u.clone(), eps).unwrap().centered();
    let dev = a.iter().zip(&su).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(dev < 1e-4, "{dev}");
}

#[test]
fn phases_touch_only_their_own_variables() {
    let data = points(10, 8);
    let cfg = TrainConfig {
        inner_iters: 3,
        batch_n: 16,
        lr_theta: 1e-2,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(cfg, &data, ModelPrior::standard(2), decoder(9), None).unwrap();
    let dec0 = t.decoder().clone();
    t.potential_steps(&mut seeded(1)).unwrap();
    assert_eq!(t.decoder(), &dec0);
    let u0 = t.potential().clone();
    assert!(u0.u.iter().any(|v| *v != 0.0));
    let batch = draw_codes(&ModelPrior::standard(2), 16, &mut seeded(2)).unwrap();
    let (_, g, _) = dual_decoder_gradient(t.potential(), t.decoder(), &data, &batch).unwrap();
    t.decoder_step(g).unwrap();
    assert_eq!(t.potential(), &u0);
    assert_ne!(t.decoder(), &dec0);
}

#[test]
fn dual_decoder_gradient_matches_finite_differences() {
    let data = points(6, 10);
    let dec = decoder(11);
    let u = SemiDualPotential::new(vec![0.3, -0.2, 0.1, 0.0, 0.5, -0.4], 0.7).unwrap();
    let batch = draw_codes(&ModelPrior::standard(2), 5, &mut seeded(12)).unwrap();
    let (_, g, _) = dual_decoder_gradient(&u, &dec, &data, &batch).unwrap();
    let theta = dec.net().to_flat();
    let f = |p: &[f64]| {
        let mut d = dec.clone();
        d.net_mut().set_flat(p)?;
        let costs = d.cost_matrix(&data, &batch.z)?;
        Ok(semidual_eval(&u, &costs, data.weights(), &batch.weights)?.objective)
    };
    let r = crate::numcore::grad_check(f, &theta, g.as_slice(), 1e-6, 1e-4).unwrap();
    assert!(r.passed(), "{r:?}");
}

#[test]
fn primal_single_point_uses_uniform_weights() {
    let data = points(1, 13);
    let dec = decoder(14);
    let u = SemiDualPotential::zeros(1, 0.2).unwrap();
    let codes = draw_codes(&ModelPrior::standard(2), 32, &mut seeded(15)).unwrap();
    let step = primal_decoder_gradient(&u, &dec, &data, &[0], codes.clone()).unwrap();
    assert!((step.ess_min - 32.0).abs() < 1e-9);
    let w = Tensor2::from_fn(32, 1, |_, _| 1.0 / 32.0).unwrap();
    let direct = dec.weighted_backward(data.points(), &codes.z, &w).unwrap();
    let diff = step
        .grads
        .as_slice()
        .iter()
        .zip(direct.grads.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-14);
}

#[test]
fn primal_gradient_matches_sinkhorn_plan_gradient() {
    let data = points(8, 16);
    let prior = atom_prior(vec![0.25; 4], 17);
    let dec = decoder(18);
    let eps = 0.5;
    let ModelPrior::Atoms(ap) = &prior else { unreachable!() };
    let costs = dec.cost_matrix(&data, &ap.atoms).unwrap();
    let s = sinkhorn(&costs, data.weights(), ap.prior.probs(), eps, 1e-14, 100_000).unwrap();
    let u = SemiDualPotential::new(s.potentials.u.clone(), eps).unwrap();
    let all: Vec<usize> = (0..8).collect();
    let step = primal_decoder_gradient(&u, &dec, &data, &all, ap_batch(&prior)).unwrap();
    let oracle = dec
        .weighted_backward(data.points(), &ap.atoms, &s.plan.pi.transpose())
        .unwrap();
    let diff = step
        .grads
        .as_slice()
        .iter()
        .zip(oracle.grads.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-9, "{diff}");
    assert!((step.loss - s.plan.transport_cost(&costs)).abs() < 1e-9);
}

fn ap_batch(prior: &ModelPrior) -> LatentBatch {
    prior.enumerate().unwrap()
}

#[test]
fn primal_aborts_on_degenerate_weights() {
    let data = points(50, 19);
    let cfg = TrainConfig {
        strategy: Strategy::Primal,
        epsilon: 1e-3,
        inner_iters: 1,
        batch_m: 20,
        posterior_samples: 16,
        ..TrainConfig::default()
    };
    let err = train_primal(&cfg, &data, ModelPrior::standard(2), decoder(20), &mut seeded(0)).unwrap_err();
    assert!(matches!(err, Error::DegenerateWeights { .. }), "{err}");
}

#[test]
fn sinkhorn_single_atom_column_is_mu() {
    let data = EmpiricalMeasure::with_weights(points(5, 21).points().clone(), vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
    let cfg = TrainConfig {
        strategy: Strategy::SinkhornDiscrete,
        epsilon: 0.5,
        inner_iters: 2,
        epochs: 3,
        ..TrainConfig::default()
    };
    let model = train_sinkhorn_discrete(&cfg, &data, atom_prior(vec![1.0], 22), decoder(23), &mut seeded(0)).unwrap();
    for d in &model.history {
        assert!(d.marginal_violation < 1e-8);
    }
    // with the decoder frozen the stored potential belongs to the final costs
    let still = TrainConfig { lr_theta: 0.0, ..cfg };
    let model = train_sinkhorn_discrete(&still, &data, atom_prior(vec![1.0], 22), decoder(23), &mut seeded(0)).unwrap();
    let u = &model.potential;
    let ModelPrior::Atoms(ap) = &model.prior else {
        unreachable!()
    };
    let costs = model.decoder.cost_matrix(&data, &ap.atoms).unwrap();
    let w = crate::eot::conditional_plan_weights(&u.u, costs.column(0), data.weights(), u.epsilon).unwrap();
    for (a, b) in w.iter().zip(data.weights()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn sinkhorn_marginals_and_descent_on_frozen_plan() {
    let data = points(12, 24);
    let cfg = TrainConfig {
        strategy: Strategy::SinkhornDiscrete,
        epsilon: 0.3,
        lr_theta: 1e-4,
        inner_iters: 20,
        epochs: 1,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(cfg, &data, atom_prior(vec![0.2, 0.3, 0.5], 25), decoder(26), None).unwrap();
    let d = *t.run_epoch(&mut seeded(0)).unwrap();
    assert!(d.marginal_violation < 1e-8);
    // re-solve and watch the plan-weighted cost across decoder steps
    let ModelPrior::Atoms(ap) = &t.prior else {
        unreachable!()
    };
    let costs = t.decoder.cost_matrix(&data, &ap.atoms).unwrap();
    let s = sinkhorn(&costs, data.weights(), ap.prior.probs(), 0.3, 1e-12, 10_000).unwrap();
    let w = s.plan.pi.transpose();
    let mut atoms = ap.atoms.clone();
    let mut last = f64::INFINITY;
    for _ in 0..30 {
        let wb = t.decoder.weighted_backward(data.points(), &atoms, &w).unwrap();
        assert!(wb.weighted_cost <= last + 1e-12, "{} > {last}", wb.weighted_cost);
        last = wb.weighted_cost;
        let n_theta = t.decoder.net().param_count();
        let mut p = t.decoder.net().to_flat();
        p.extend_from_slice(atoms.data());
        let mut g = wb.grads.into_flat();
        g.extend_from_slice(wb.grad_latent.data());
        t.descend(&mut p, &mut g).unwrap();
        t.decoder.net_mut().set_flat(&p[..n_theta]).unwrap();
        atoms.data_mut().copy_from_slice(&p[n_theta..]);
    }
}

#[test]
fn vae_elbo_decomposition_and_requirements() {
    let data = points(40, 27);
    let cfg = TrainConfig {
        strategy: Strategy::BaselineVae,
        batch_m: 16,
        epochs: 20,
        lr_theta: 1e-2,
        ..TrainConfig::default()
    };
    let enc = EncoderNet::init(2, &[8], 2, 28).unwrap();
    let model = train_vae_baseline(
        &cfg,
        &data,
        ModelPrior::standard(2),
        decoder(29),
        enc.clone(),
        &mut seeded(1),
    )
    .unwrap();
    assert_eq!(model.history.len(), 20);
    for d in &model.history {
        // negative ELBO = reconstruction + KL ≥ reconstruction
        assert!(d.objective >= d.decoder_loss);
    }
    assert!(train(&cfg, &data, ModelPrior::standard(2), decoder(29), None, &mut seeded(1)).is_err());
    let wrong = TrainConfig {
        strategy: Strategy::Dual,
        ..cfg.clone()
    };
    assert!(train_vae_baseline(&wrong, &data, ModelPrior::standard(2), decoder(29), enc, &mut seeded(1)).is_err());
}

#[test]
fn elbo_gradients_match_finite_differences() {
    let data = points(6, 30);
    let dec = decoder(31);
    let enc = EncoderNet::init(2, &[5], 2, 32).unwrap();
    let noise = standard_normal_vec(&mut seeded(33), 12);
    let x = data.points();
    let eg = elbo_gradient(&dec, &enc, x, &noise).unwrap();
    assert!(eg.kl >= 0.0);
    let loss = |d: &Decoder, e: &EncoderNet| -> Result<f64> {
        let r = elbo_gradient(d, e, x, &noise)?;
        Ok(r.reconstruction + r.kl)
    };
    let f_phi = |p: &[f64]| {
        let mut e = enc.clone();
        e.net.set_flat(p)?;
        loss(&dec, &e)
    };
    let r = crate::numcore::grad_check(f_phi, &enc.net.to_flat(), eg.encoder_grads.as_slice(), 1e-6, 1e-4).unwrap();
    assert!(r.passed(), "{r:?}");
    let f_theta = |p: &[f64]| {
        let mut d = dec.clone();
        d.net_mut().set_flat(p)?;
        loss(&d, &enc)
    };
    let r = crate::numcore::grad_check(f_theta, &dec.net().to_flat(), eg.decoder_grads.as_slice(), 1e-6, 1e-4).unwrap();
    assert!(r.passed(), "{r:?}");
}

#[test]
fn runs_are_deterministic() {
    let data = points(30, 34);
    let cfg = TrainConfig {
        inner_iters: 3,
        batch_n: 16,
        epochs: 4,
        seed: 5,
        ..TrainConfig::default()
    };
    let a = train_dual(&cfg, &data, ModelPrior::standard(2), decoder(35), &mut seeded(5)).unwrap();
    let b = train_dual(&cfg, &data, ModelPrior::standard(2), decoder(35), &mut seeded(5)).unwrap();
    assert_eq!(a.checkpoint_text(), b.checkpoint_text());
    let mut da = Vec::new();
    let mut db = Vec::new();
    a.write_diagnostics(&mut da).unwrap();
    b.write_diagnostics(&mut db).unwrap();
    assert_eq!(da, db);
    assert_eq!(String::from_utf8(da).unwrap().lines().count(), 5);
}

#[test]
fn epoch_prefix_matches_shorter_run() {
    let data = points(20, 36);
    let cfg = TrainConfig {
        inner_iters: 2,
        batch_n: 8,
        epochs: 3,
        ..TrainConfig::default()
    };
    let mut rng = seeded(1);
    let mut t = Trainer::new(cfg.clone(), &data, ModelPrior::standard(2), decoder(37), None).unwrap();
    t.run_epoch(&mut rng).unwrap();
    let one = train_dual(
        &TrainConfig { epochs: 1, ..cfg },
        &data,
        ModelPrior::standard(2),
        decoder(37),
        &mut seeded(1),
    )
    .unwrap();
    assert_eq!(
        t.snapshot().checkpoint_text().replace("epochs 3", "epochs 1"),
        one.checkpoint_text()
    );
}

#[test]
fn refinement_fits_the_potential_to_the_final_decoder() {
    let data = points(8, 40);
    let prior = atom_prior(vec![0.1, 0.2, 0.3, 0.4], 41);
    let eps = 0.5;
    let cfg = TrainConfig {
        lr_theta: 1e-2,
        epochs: 3,
        refine_steps: 2000,
        ..frozen(eps, 1, DualOptimizer::Scaled, 1.0)
    };
    let model = train_dual(&cfg, &data, prior.clone(), decoder(42), &mut seeded(43)).unwrap();
    assert_ne!(model.decoder, decoder(42));
    let ModelPrior::Atoms(ap) = &prior else { unreachable!() };
    let costs = model.decoder.cost_matrix(&data, &ap.atoms).unwrap();
    let s = sinkhorn(&costs, data.weights(), ap.prior.probs(), eps, 1e-14, 100_000).unwrap();
    let a = model.potential.centered();
    let su = SemiDualPotential::new(s.potentials.u.clone(), eps).unwrap().centered();
    let dev = a.iter().zip(&su).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(dev < 1e-4, "{dev}");
    assert_eq!(model.history.len(), 3);
}
