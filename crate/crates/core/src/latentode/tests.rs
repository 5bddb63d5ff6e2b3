use proptest::prelude::*;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::{gen_springs, SpringKind};
use crate::diffcore::max_relative_error;
use crate::odeint::solve_forward_on_tape;

fn toy_config(encoder: EncoderKind, field_activation: Activation, substeps: usize) -> LatentOdeConfig {
    LatentOdeConfig {
        encoder,
        encoder_hidden: 5,
        latent_dim: 4,
        field_hidden_layers: 2,
        field_hidden: 6,
        field_activation,
        readout_hidden: 5,
        readout_activation: Activation::Relu,
        observation_std: 0.1,
        substeps,
        t0: 0.0,
    }
}

fn zeroed(params: &ParamSet) -> ParamSet {
    params.zeros_like()
}

fn random_sequence(rng: &mut ChaCha8Rng, t: usize) -> Tensor {
    let data = (0..t * FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![t, FEATURES], data).unwrap()
}

fn batch_of(seqs: &[Tensor], times: Vec<f64>) -> SequenceBatch {
    let t = seqs[0].rows();
    let steps = (0..t)
        .map(|k| {
            let rows: Vec<f64> = seqs.iter().flat_map(|s| s.row(k).to_vec()).collect();
            Tensor::new(vec![seqs.len(), FEATURES], rows).unwrap()
        })
        .collect();
    SequenceBatch {
        indices: (0..seqs.len()).collect(),
        times,
        steps,
    }
}

#[test]
fn zero_weights_give_standard_posterior() {
    let model = LatentOde::new(LatentOdeConfig::spring()).unwrap();
    let params = zeroed(&model.init_params(0).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = model.encode(&params, &random_sequence(&mut rng, 20)).unwrap();
    assert!(p.mu.data().iter().all(|&v| v == 0.0));
    assert!(p.logvar.data().iter().all(|&v| v == 0.0));
}

#[test]
fn paper_configs_have_four_latent_dims() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_sequence(&mut rng, 10);
    for cfg in [LatentOdeConfig::spiral(), LatentOdeConfig::spring(), LatentOdeConfig::solar()] {
        let model = LatentOde::new(cfg).unwrap();
        let p = model.encode(&model.init_params(3).unwrap(), &x).unwrap();
        assert_eq!(p.mu.shape(), &[4]);
        assert_eq!(p.logvar.shape(), &[4]);
    }
}

#[test]
fn encoder_is_order_sensitive() {
    let model = LatentOde::new(LatentOdeConfig::spiral()).unwrap();
    let params = model.init_params(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random_sequence(&mut rng, 12);
    let mut swapped = x.clone();
    let (a, b) = (x.row(2).to_vec(), x.row(9).to_vec());
    assert_ne!(a, b);
    swapped.data_mut()[4..6].copy_from_slice(&b);
    swapped.data_mut()[18..20].copy_from_slice(&a);
    let p = model.encode(&params, &x).unwrap();
    let q = model.encode(&params, &swapped).unwrap();
    assert_ne!(p.mu, q.mu);
}

#[test]
fn encode_rejects_empty_sequence() {
    let model = LatentOde::new(LatentOdeConfig::desk()).unwrap();
    let params = model.init_params(0).unwrap();
    assert!(model.encode_batch(&params, &[]).is_err());
}

#[test]
fn reparameterize_cases() {
    let p = PosteriorParams {
        mu: Tensor::vector(vec![0.5, -1.0, 2.0, 0.0]),
        logvar: Tensor::vector(vec![0.3, -2.0, 1.0, 0.0]),
    };
    assert_eq!(reparameterize(&p, &Tensor::zeros(&[4])).unwrap(), p.mu);

    let unit = PosteriorParams {
        mu: p.mu.clone(),
        logvar: Tensor::zeros(&[4]),
    };
    let e = Tensor::vector(vec![0.1, 0.2, -0.3, 0.4]);
    let z = reparameterize(&unit, &e).unwrap();
    for i in 0..4 {
        assert!((z.data()[i] - (p.mu.data()[i] + e.data()[i])).abs() < 1e-15);
    }
}

#[test]
fn reparameterized_samples_have_posterior_mean() {
    let n = 100_000;
    let p = PosteriorParams {
        mu: Tensor::vector(vec![0.5, -1.0, 2.0, 0.0]),
        logvar: Tensor::vector(vec![0.3, -2.0, 1.0, 0.0]),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut sums = [0.0; 4];
    for _ in 0..n {
        let z = reparameterize(&p, &sample_eps(&mut rng, 1, 4)).unwrap();
        for (s, v) in sums.iter_mut().zip(z.data()) {
            *s += v;
        }
    }
    for i in 0..4 {
        let sigma = (0.5 * p.logvar.data()[i]).exp();
        let mean = sums[i] / n as f64;
        assert!((mean - p.mu.data()[i]).abs() < 3.0 * sigma / (n as f64).sqrt(), "coordinate {i}: {mean}");
    }
}

#[test]
fn decode_single_point_is_readout() {
    let model = LatentOde::new(LatentOdeConfig::desk()).unwrap();
    let params = model.init_params(7).unwrap();
    let z0 = Tensor::vector(vec![0.2, -0.1, 0.4, 0.3]);
    let out = model.decode(&params, &z0, &[0.0]).unwrap();
    let direct = model.readout_values(&params, &z0.clone().reshape(vec![1, 4]).unwrap()).unwrap();
    assert_eq!(out, direct);
}

#[test]
fn decode_shape_and_determinism() {
    let model = LatentOde::new(LatentOdeConfig::desk()).unwrap();
    let params = model.init_params(8).unwrap();
    let z0 = Tensor::vector(vec![0.2, -0.1, 0.4, 0.3]);
    for times in [vec![0.5], vec![-1.0, 0.0, 1.0], (0..37).map(|k| k as f64 * 0.1 - 1.2).collect::<Vec<_>>()] {
        let a = model.decode(&params, &z0, &times).unwrap();
        assert_eq!(a.shape(), &[times.len(), 2]);
        assert_eq!(a, model.decode(&params, &z0, &times).unwrap());
    }
}

#[test]
fn zero_field_decodes_constant() {
    let model = LatentOde::new(LatentOdeConfig::desk()).unwrap();
    let mut params = model.init_params(9).unwrap();
    for (name, t) in params.iter_mut() {
        if name.starts_with("ode.") {
            t.data_mut().fill(0.0);
        }
    }
    let z0 = Tensor::vector(vec![0.2, -0.1, 0.4, 0.3]);
    let out = model.decode(&params, &z0, &[-2.0, -0.5, 0.0, 1.0, 3.0]).unwrap();
    for k in 1..out.rows() {
        assert_eq!(out.row(k), out.row(0));
    }
}

#[test]
fn decode_has_prefix_property() {
    let model = LatentOde::new(LatentOdeConfig::desk()).unwrap();
    let params = model.init_params(10).unwrap();
    let z0 = Tensor::vector(vec![0.5, 0.1, -0.4, 0.3]);
    let grid: Vec<f64> = (0..20).map(|k| -1.0 + 0.25 * k as f64).collect();
    let mut longer = grid.clone();
    longer.push(4.5);
    let a = model.decode(&params, &z0, &grid).unwrap();
    let b = model.decode(&params, &z0, &longer).unwrap();
    assert_eq!(a.data(), &b.data()[..a.numel()]);
}

#[test]
fn backward_decode_retraces_to_z0() {
    let mut cfg = LatentOdeConfig::desk();
    cfg.substeps = 50;
    let model = LatentOde::new(cfg).unwrap();
    let params = model.init_params(11).unwrap();
    let z0 = Tensor::new(vec![1, 4], vec![0.5, 0.1, -0.4, 0.3]).unwrap();
    let back = model.latent_path(&params, &z0, &[-1.0, 0.0]).unwrap();
    let fwd = integrate(&model.field, &back[0], &[-1.0, 0.0], &params.subset("ode."), 50).unwrap();
    for (a, b) in fwd[1].data().iter().zip(z0.data()) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn kl_closed_forms() {
    let zero = PosteriorParams {
        mu: Tensor::zeros(&[4]),
        logvar: Tensor::zeros(&[4]),
    };
    assert_eq!(zero.kl(), 0.0);
    let shifted = PosteriorParams {
        mu: Tensor::vector(vec![1.0, 0.0, 0.0, 0.0]),
        logvar: Tensor::zeros(&[4]),
    };
    assert!((shifted.kl() - 0.5).abs() < 1e-15);
}

#[test]
fn kl_matches_monte_carlo_log_ratio() {
    let p = PosteriorParams {
        mu: Tensor::vector(vec![1.0, 0.0, 0.0, 0.0]),
        logvar: Tensor::zeros(&[4]),
    };
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let eps = sample_eps(&mut rng, 1, 4);
        let z = reparameterize(&p, &eps).unwrap();
        // log q(z) − log p(z); the normalising constants cancel.
        let mut r = 0.0;
        for i in 0..4 {
            let (m, lv) = (p.mu.data()[i], p.logvar.data()[i]);
            let zi = z.data()[i];
            r += -0.5 * lv - 0.5 * (zi - m).powi(2) / lv.exp() + 0.5 * zi * zi;
        }
        samples.push(r);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((mean - p.kl()).abs() < 3.0 * se, "mc {mean} vs {} (se {se})", p.kl());
}

#[test]
fn perfect_reconstruction_loglik() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random_sequence(&mut rng, 200);
    let p = PosteriorParams {
        mu: Tensor::zeros(&[4]),
        logvar: Tensor::zeros(&[4]),
    };
    let parts = elbo(&x, &x, &p, 0.1).unwrap();
    let expect = 400.0 * (1.0 / (0.1 * (2.0 * std::f64::consts::PI).sqrt())).ln();
    assert!((parts.reconstruction_loglik - expect).abs() < 1e-9);
    assert_eq!(parts.elbo, parts.reconstruction_loglik);
    assert!(elbo(&x, &x, &p, 0.0).is_err());
    assert!(elbo(&x, &x, &p, -1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_non_negative(mu in prop::collection::vec(-20.0f64..20.0, 4), lv in prop::collection::vec(-10.0f64..10.0, 4)) {
        let p = PosteriorParams { mu: Tensor::vector(mu), logvar: Tensor::vector(lv) };
        prop_assert!(p.kl() >= 0.0);
    }
}

/// Mean −ELBO with every stage recorded on one tape, including each RK4 stage.
fn tape_oracle(model: &LatentOde, params: &ParamSet, batch: &SequenceBatch, eps: &Tensor) -> (f64, ParamSet) {
    let mut tape = Tape::new();
    let bound = tape.bind(params, true);
    let (mu, logvar) = model.encode_on_tape(&mut tape, &batch.steps, &bound).unwrap();
    let half = tape.scale(logvar, 0.5).unwrap();
    let std = tape.exp(half).unwrap();
    let e = tape.constant(eps.clone());
    let noise = tape.mul(std, e).unwrap();
    let z0 = tape.add(mu, noise).unwrap();

    let states = solve_forward_on_tape(&mut tape, &model.field, z0, &batch.times, &bound, model.config.substeps).unwrap();
    let sigma = model.config.observation_std;
    let mut total = tape.scalar(0.0);
    for (z, x) in states.iter().zip(&batch.steps) {
        let r = model.readout.forward(&mut tape, *z, &bound).unwrap();
        let xv = tape.constant(x.clone());
        let d = tape.sub(r, xv).unwrap();
        let d2 = tape.square(d).unwrap();
        let s = tape.sum(d2).unwrap();
        let s = tape.scale(s, 0.5 / (sigma * sigma)).unwrap();
        let c = -(x.numel() as f64) * gaussian_log_norm(sigma);
        let s = tape.add_scalar(s, c).unwrap();
        total = tape.add(total, s).unwrap();
    }
    let mu2 = tape.square(mu).unwrap();
    let var = tape.exp(logvar).unwrap();
    let k = tape.add(mu2, var).unwrap();
    let k = tape.sub(k, logvar).unwrap();
    let k = tape.add_scalar(k, -1.0).unwrap();
    let k = tape.sum(k).unwrap();
    let k = tape.scale(k, 0.5).unwrap();
    let total = tape.add(total, k).unwrap();
    let loss = tape.scale(total, 1.0 / batch.len() as f64).unwrap();
    let value = tape.value(loss).item().unwrap();
    (value, tape.backward(loss, &bound).unwrap())
}

#[test]
fn pipeline_gradient_matches_tape_oracle() {
    let cases = [
        (EncoderKind::Rnn, Activation::Elu),
        (EncoderKind::Lstm, Activation::Elu),
        (EncoderKind::Lstm, Activation::Tanh),
    ];
    for (seed, (enc, act)) in cases.into_iter().enumerate() {
        let model = LatentOde::new(toy_config(enc, act, 40)).unwrap();
        let params = model.init_params(20 + seed as u64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(30 + seed as u64);
        let seqs: Vec<Tensor> = (0..2).map(|_| random_sequence(&mut rng, 3)).collect();
        let batch = batch_of(&seqs, vec![0.0, 0.4, 0.8]);
        let eps = sample_eps(&mut rng, 2, 4);
        let (loss, grads) = model.loss_and_grads(&params, &batch, &eps).unwrap();
        let (oracle_loss, oracle) = tape_oracle(&model, &params, &batch, &eps);
        assert!((loss.loss - oracle_loss).abs() < 1e-9 * oracle_loss.abs().max(1.0));
        let err = max_relative_error(&grads, &oracle, 1e-3);
        assert!(err < 1e-4, "{enc:?}/{act:?}: relative error {err}");
    }
}

#[test]
fn pipeline_handles_grid_after_t0() {
    let model = LatentOde::new(toy_config(EncoderKind::Lstm, Activation::Elu, 40)).unwrap();
    let params = model.init_params(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let seqs = vec![random_sequence(&mut rng, 3)];
    let batch = batch_of(&seqs, vec![0.3, 0.5, 0.9]);
    let eps = sample_eps(&mut rng, 1, 4);
    let (loss, grads) = model.loss_and_grads(&params, &batch, &eps).unwrap();
    let fd = crate::diffcore::finite_diff(
        |p| Ok(model.loss_and_grads(p, &batch, &eps)?.0.loss),
        &params,
        1e-6,
    )
    .unwrap();
    assert!(loss.loss.is_finite());
    assert!(max_relative_error(&grads, &fd, 1e-2) < 1e-4);
}

#[test]
fn zero_learning_rate_repeats_loss() {
    let model = LatentOde::new(LatentOdeConfig::desk()).unwrap();
    let mut params = model.init_params(5).unwrap();
    let ds = gen_springs(&[SpringKind::Undamped], 4, 1).unwrap();
    let batch = ds.batch(&[0, 1, 2, 3]).unwrap();
    let mut adam = Adam::new(&params, 0.0);
    let rng = ChaCha8Rng::seed_from_u64(6);
    let a = model.train_step(&mut params, &batch, &mut adam, &mut rng.clone()).unwrap();
    let b = model.train_step(&mut params, &batch, &mut adam, &mut rng.clone()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn divergence_reports_sample_index() {
    let mut cfg = LatentOdeConfig::desk();
    cfg.field_activation = Activation::Identity;
    let model = LatentOde::new(cfg).unwrap();
    let mut params = model.init_params(5).unwrap();
    // dz/dt = 50·z blows up within the training window.
    for (name, t) in params.iter_mut() {
        if name.starts_with("ode.") {
            let eye = name.ends_with("weight");
            t.data_mut().fill(0.0);
            if eye {
                let cols = t.cols();
                for i in 0..t.rows().min(cols) {
                    t.data_mut()[i * cols + i] = if name.starts_with("ode.0") { 50.0 } else { 1.0 };
                }
            }
        }
    }
    let ds = gen_springs(&[SpringKind::Undamped], 6, 1).unwrap();
    let batch = ds.batch(&[4, 2]).unwrap();
    let mut adam = Adam::new(&params, 0.001);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let err = model.train_step(&mut params, &batch, &mut adam, &mut rng).unwrap_err();
    assert!(err.is_divergence(), "{err}");
    match err {
        Error::IntegrationDiverged { row: Some(r), .. } => assert!(r == 4 || r == 2),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn overfitting_one_spring_halves_the_loss() {
    let ds = gen_springs(&[SpringKind::Undamped], 2, 1).unwrap();
    let ds = crate::data::subsample(&ds, 100).unwrap().observed;
    let batch = ds.batch(&[0]).unwrap();
    let model = LatentOde::new(LatentOdeConfig::desk()).unwrap();
    let mut params = model.init_params(1).unwrap();
    let mut adam = crate::train::Adam::new(&params, 0.01);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let start = model.evaluate(&params, &batch).unwrap().loss;
    for _ in 0..500 {
        model.train_step(&mut params, &batch, &mut adam, &mut rng).unwrap();
    }
    let end = model.evaluate(&params, &batch).unwrap().loss;
    assert!(end < start - 0.5 * start.abs(), "{start} -> {end}");
}
