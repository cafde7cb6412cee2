//! Rolling prediction with randomly hidden entries: the model still emits a
//! prediction for every entry, and the error on the observed entries is
//! compared with the fully observed run.
//!
//! Run with `cargo run --release --example missing_data [fraction]`.

use eqssm::data::{mask_random, simulate_pendulum, split_half, Normalizer, PendulumSpec};
use eqssm::eval::{nrmse_from, predict};
use eqssm::ssm::{train, Model, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> eqssm::Result<()> {
    let fraction: f64 = std::env::args().nth(1).map_or(0.3, |s| s.parse().expect("fraction in [0, 1]"));
    let cfg = ModelConfig::default();
    let seq = simulate_pendulum(&PendulumSpec::default(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let (train_seq, test_seq) = split_half(&seq, cfg.max_lag())?;
    let norm = Normalizer::fit(std::slice::from_ref(&train_seq));
    let mut model = Model::new(&cfg)?;
    train(&mut model, &[norm.apply(&train_seq)], &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;

    let full = predict(&model, &norm, &test_seq)?;
    let base = nrmse_from(&full.predicted, &test_seq.values, &test_seq.mask, full.warmup)?;
    println!("fully observed: NRMSE {base:.3}%");
    for seed in 0..5 {
        let masked = mask_random(&test_seq, fraction, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let pred = predict(&model, &norm, &masked)?;
        let err = nrmse_from(&pred.predicted, &masked.values, &masked.mask, pred.warmup)?;
        // error of the filled-in values against the hidden truth
        let mut sq = 0.0;
        let mut n = 0;
        for t in pred.warmup..masked.len() {
            for c in 0..masked.values.ncols() {
                if !masked.mask[(t, c)] {
                    sq += (pred.predicted[(t, c)] - test_seq.values[(t, c)]).powi(2);
                    n += 1;
                }
            }
        }
        println!(
            "draw {seed}: {:.0}% hidden, NRMSE on observed {err:.3}% ({:.2}x), RMSE on hidden {:.4}",
            100.0 * fraction,
            err / base,
            (sq / n.max(1) as f64).sqrt()
        );
    }
    Ok(())
}
