//! Pendulum simulation, energy conservation, train/test split, rotations,
//! random masking and the trajectory CSV format.
//!
//! Run with `cargo run --example pendulum_data`.

use eqssm::data::{
    load_csv, mask_random, pendulum_energy, rotate_sequence, save_csv, simulate_pendulum, split_half, PendulumSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> eqssm::Result<()> {
    let spec = PendulumSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let seq = simulate_pendulum(&spec, &mut rng)?;
    println!("{} steps of {} joint(s), dt = {}", seq.len(), seq.joints(), seq.dt);

    // the bob starts at rest, so its highest point is the release height;
    // an energy-conserving integrator never climbs above it
    let e0 = pendulum_energy(&spec, spec.theta0, spec.omega0);
    let top = seq.values.column(2).max();
    println!("energy {e0:.3}, highest bob height {top:.6} (release height {:.6})", -spec.length * spec.theta0.cos());

    let (train, test) = split_half(&seq, 2)?;
    println!("split: {} train / {} test", train.len(), test.len());

    let rotated = rotate_sequence(&test, 1.0);
    let r0 = test.values.row(10).norm();
    let r1 = rotated.values.row(10).norm();
    println!("rotation keeps the distance to the pivot: {r0:.6} vs {r1:.6}");

    let masked = mask_random(&test, 0.3, &mut rng)?;
    println!("masked {} of {} entries", test.observed_count() - masked.observed_count(), test.observed_count());

    let path = std::env::temp_dir().join("eqssm_pendulum_test.csv");
    save_csv(&path, &masked)?;
    let back = load_csv(&path, seq.dt)?;
    println!("CSV round trip exact: {}", back.mask == masked.mask && back.values.iter().zip(masked.values.iter()).all(|(a, b)| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan())));
    println!("first lines of {}:", path.display());
    for line in std::fs::read_to_string(&path)?.lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
