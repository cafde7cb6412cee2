use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use eqssm::data::{simulate_pendulum, split_half, Normalizer, PendulumSpec, Sequence};
use eqssm::eval::nrmse;
use eqssm::ssm::{train, Model, ModelConfig};

fn pendulum_train() -> Sequence {
    let seq = simulate_pendulum(&PendulumSpec::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    split_half(&seq, ModelConfig::default().max_lag()).unwrap().0
}

#[test]
fn zero_epochs_keeps_the_initial_parameters() {
    let cfg = ModelConfig {
        epochs: 0,
        ..ModelConfig::default()
    };
    let train_seq = pendulum_train();
    let norm = Normalizer::fit(std::slice::from_ref(&train_seq));
    let mut model = Model::new(&cfg).unwrap();
    let before = model.to_records();
    let out = train(&mut model, &[norm.apply(&train_seq)], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(out.trace.is_empty());
    assert_eq!(model.to_records(), before);
}

#[test]
fn same_seed_gives_the_same_trace() {
    let cfg = ModelConfig {
        epochs: 25,
        ..ModelConfig::default()
    };
    let train_seq = pendulum_train();
    let norm = Normalizer::fit(std::slice::from_ref(&train_seq));
    let data = [norm.apply(&train_seq)];
    let run = |seed: u64| {
        let mut model = Model::new(&cfg).unwrap();
        let out = train(&mut model, &data, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (out.trace, model.to_records())
    };
    let (a, pa) = run(3);
    let (b, pb) = run(3);
    let (c, _) = run(4);
    assert_eq!(a.len(), 25);
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(pa, pb);
    assert_ne!(a, c);
}

#[test]
fn default_training_reconstructs_the_pendulum() {
    let cfg = ModelConfig::default();
    let train_seq = pendulum_train();
    let norm = Normalizer::fit(std::slice::from_ref(&train_seq));
    let normed = norm.apply(&train_seq);
    let mut model = Model::new(&cfg).unwrap();
    let out = train(&mut model, std::slice::from_ref(&normed), &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
    assert_eq!(out.trace.len(), cfg.epochs);
    let first = out.trace[..10].iter().sum::<f64>() / 10.0;
    let last = out.trace[out.trace.len() - 10..].iter().sum::<f64>() / 10.0;
    assert!(last < first, "loss did not decrease: {first} -> {last}");

    let mu = out.phi.store.get(out.phi.ids[0].0);
    let recon = model.emission_mean(mu).unwrap();
    let recon: DMatrix<f64> = norm.invert_values(&recon.transpose());
    let err = nrmse(&recon, &train_seq.values, &train_seq.mask).unwrap();
    assert!(err < 10.0, "train reconstruction NRMSE {err:.3}%");
}

#[test]
fn sequences_with_the_wrong_joint_count_are_rejected() {
    let cfg = ModelConfig {
        epochs: 1,
        ..ModelConfig::default()
    };
    let seq = Sequence::new("two", 0.05, DMatrix::zeros(10, 6)).unwrap();
    let mut model = Model::new(&cfg).unwrap();
    assert!(train(&mut model, &[seq], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}
