//! Full pendulum experiment: train the equivariant model and the ablation on
//! the first half of a simulated trajectory, then compare rolling-prediction
//! NRMSE on the second half and on 10 randomly z-rotated copies.
//!
//! Run with `cargo run --release --example train_pendulum [epochs] [out_dir]`.
//! Predictions, plot series and a checkpoint go to `out_dir`
//! (default `target/pendulum`).

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::time::Instant;

use eqssm::data::{make_rotated_testset, simulate_pendulum, split_half, Normalizer, PendulumSpec};
use eqssm::diff::checkpoint;
use eqssm::equivariant::Variant;
use eqssm::eval::{evaluate, read_prediction_csv, write_plot_series, write_prediction_csv, Table};
use eqssm::ssm::{train, Model, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> eqssm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).map_or(Ok(1000), |s| s.parse()).expect("epochs must be an integer");
    let out_dir = PathBuf::from(args.get(2).map_or("target/pendulum", String::as_str));
    std::fs::create_dir_all(&out_dir)?;

    let seq = simulate_pendulum(&PendulumSpec::default(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let (train_seq, test_seq) = split_half(&seq, ModelConfig::default().max_lag())?;
    let rotated = make_rotated_testset(&test_seq, 10, &mut ChaCha8Rng::seed_from_u64(1));
    let norm = Normalizer::fit(std::slice::from_ref(&train_seq));

    for variant in [Variant::Equivariant, Variant::Ablation] {
        let cfg = ModelConfig { variant, epochs, ..ModelConfig::default() };
        let mut model = Model::new(&cfg)?;
        let start = Instant::now();
        let out = train(&mut model, &[norm.apply(&train_seq)], &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
        println!(
            "{variant}: {} parameters, {epochs} epochs in {:.1}s, final loss {:.2}",
            model.num_parameters(),
            start.elapsed().as_secs_f64(),
            out.trace.last().copied().unwrap_or(f64::NAN)
        );
        let report = evaluate(&model, &norm, "pendulum", &test_seq, &rotated)?;
        print!("{}", Table(&report.rows()));
        let agreement = (0..rotated.len()).map(|i| report.state_agreement(i)).fold(1.0, f64::min);
        println!("lowest state agreement with the unrotated run: {:.1}%\n", 100.0 * agreement);

        let mut records = model.to_records();
        records.push(norm.to_record());
        checkpoint::save(out_dir.join(format!("{variant}.ck")), &records)?;
        let pred_path = out_dir.join(format!("{variant}_predictions.csv"));
        write_prediction_csv(BufWriter::new(File::create(&pred_path)?), &report.regular.prediction, &test_seq)?;
        let rows = read_prediction_csv(File::open(&pred_path)?)?;
        let plot_dir = out_dir.join(format!("{variant}_plots"));
        std::fs::create_dir_all(&plot_dir)?;
        write_plot_series(&plot_dir, &rows)?;
    }
    println!("outputs in {}", out_dir.display());
    Ok(())
}
