//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eqssm::data::{make_rotated_testset, mask_random, simulate_pendulum, split_half, Normalizer, PendulumSpec, Sequence};
use eqssm::diff::gradcheck::{five_point_difference, max_relative_error};
use eqssm::diff::{Backend, Eval, Graph};
use eqssm::equivariant::{EquivariantBasis, Variant};
use eqssm::eval::{evaluate, nrmse_from, predict, EvalReport};
use eqssm::lie::{expm, rep_from_signature, MatrixGroup, RepKind, RepSignature, Representation};
use eqssm::ssm::{sequence_elbo, train, Model, ModelConfig};

use common::{
    averaged_fixed_space, elbo_oracle, gaussian, jitter_parameters, max_principal_angle, micro_config, random_rotation,
    signature_action,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn basis_correctness() -> Outcome {
    let group = Arc::new(MatrixGroup::so(3).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let samples: Vec<_> = (0..64).map(|_| random_rotation(3, &mut rng)).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for (si, so, want) in [("1x1", "1x1", 1), ("1x0", "1x0", 1), ("1x1", "1x0", 0), ("2x1", "2x1", 4)] {
        let (a, b): (RepSignature, RepSignature) = (si.parse().unwrap(), so.parse().unwrap());
        let basis = EquivariantBasis::solve(&rep_from_signature(group.clone(), &a), &rep_from_signature(group.clone(), &b)).unwrap();
        let oracle = averaged_fixed_space(&samples, &a, &b);
        let angle = max_principal_angle(basis.q(), &oracle);
        pass &= basis.rank() == want && oracle.ncols() == want && angle < 1e-3;
        parts.push(format!("{si}->{so} r={} oracle={} angle={angle:.1e}", basis.rank(), oracle.ncols()));
    }
    outcome(pass, parts.join("; "))
}

fn equivariance_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = Model::new(&ModelConfig::default()).unwrap();
    jitter_parameters(&mut model, 0.3, &mut rng);
    let cfg = model.config().clone();
    let rel = |a: &DMatrix<f64>, b: &DMatrix<f64>| (a - b).amax() / b.amax().max(1.0);
    let (mut emission, mut mean, mut sigma, mut switch) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..100 {
        let g = random_rotation(3, &mut rng);
        let rho = signature_action(model.latent_signature(), &g);
        let z = gaussian(cfg.latent_dim, 1, 1.0, &mut rng);
        let lhs = model.emission_mean(&(&rho * &z)).unwrap();
        let rhs = signature_action(model.observed_signature(), &g) * model.emission_mean(&z).unwrap();
        emission = emission.max(rel(&lhs, &rhs));
        let hist: Vec<_> = cfg.lags.iter().map(|_| gaussian(cfg.latent_dim, 1, 1.0, &mut rng)).collect();
        let rot: Vec<_> = hist.iter().map(|h| &rho * h).collect();
        for s in 0..cfg.states {
            let (m0, s0) = model.transition(s, &hist).unwrap();
            let (m1, s1) = model.transition(s, &rot).unwrap();
            mean = mean.max(rel(&m1, &(&rho * m0)));
            sigma = sigma.max((s1 - s0).amax());
            let p0 = model.switch_probs(s, &z).unwrap();
            let p1 = model.switch_probs(s, &(&rho * &z)).unwrap();
            switch = switch.max((p1 - p0).amax());
        }
    }
    outcome(
        emission < 1e-6 && mean < 1e-6 && sigma < 1e-8 && switch < 1e-8,
        format!("100 trials: emission {emission:.1e}, transition mean {mean:.1e}, sigma {sigma:.1e}, switch {switch:.1e}"),
    )
}

fn exp_correspondence() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for n in [2, 3] {
        let group = Arc::new(MatrixGroup::so(n).unwrap());
        let base = Representation::base(group.clone());
        let mut reps: Vec<Representation> = ["1x0", "1x1", "1x2", "1x3", "2x0,3x1,1x2"]
            .iter()
            .map(|s| rep_from_signature(group.clone(), &s.parse().unwrap()))
            .collect();
        reps.push(base.dual());
        reps.push(base.tensor(&base.dual()).unwrap());
        reps.push(Representation::new(group.clone(), RepKind::tensor_power(2)).dual());
        let mut rng = ChaCha8Rng::seed_from_u64(3 + n as u64);
        for rep in &reps {
            count += 1;
            for _ in 0..50 {
                let coeffs: Vec<f64> = (0..group.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
                let a = group.algebra_element(&coeffs).unwrap();
                let err = (rep.rho(&expm(&a)).unwrap() - expm(&rep.drho(&a).unwrap())).norm();
                worst = worst.max(err / rep.size() as f64);
            }
        }
    }
    outcome(worst <= 1e-7, format!("{count} reps x 50 samples, max error/size {worst:.1e}"))
}

fn gradient_correctness() -> Outcome {
    let cfg = ModelConfig {
        train_sigma_x: true,
        ..micro_config(2, vec![1, 2], 11)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut model = Model::new(&cfg).unwrap();
    jitter_parameters(&mut model, 0.2, &mut rng);
    let t_len = 5;
    let x = gaussian(3, t_len, 0.5, &mut rng);
    let w = DMatrix::from_fn(3, t_len, |_, _| if rng.random_bool(0.8) { 1.0 } else { 0.0 });
    let x = x.component_mul(&w);
    let mu = gaussian(3, t_len, 0.5, &mut rng);
    let rho = gaussian(3, t_len, 0.3, &mut rng).add_scalar(-1.0);
    let eps = gaussian(3, t_len, 1.0, &mut rng);
    let loss = |m: &Model, mu: &DMatrix<f64>, rho: &DMatrix<f64>| {
        let b = Eval::new(m.store());
        let bound = m.bind(&b);
        b.scalar(&sequence_elbo(&b, &bound, &cfg.lags, &x, &w, mu, rho, &eps).unwrap().loss)
    };
    let g = Graph::new(model.store());
    let bound = model.bind(&g);
    let (muv, rhov) = (g.constant(mu.clone()), g.constant(rho.clone()));
    let e = sequence_elbo(&g, &bound, &cfg.lags, &x, &w, &muv, &rhov, &eps).unwrap();
    let (grads, theta) = g.backward(e.loss).unwrap();
    let h = 1e-3;
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = model.store().ids().collect();
    for (id, analytic) in ids.iter().zip(&theta) {
        let base = model.store().get(*id).clone();
        let fd = five_point_difference(&base, h, |p| {
            let mut probe = model.clone();
            probe.store_mut().set(*id, p.clone()).unwrap();
            loss(&probe, &mu, &rho)
        });
        worst = worst.max(max_relative_error(analytic, &fd, 1e-6));
    }
    worst = worst.max(max_relative_error(&grads.wrt(muv), &five_point_difference(&mu, h, |p| loss(&model, p, &rho)), 1e-6));
    worst = worst.max(max_relative_error(&grads.wrt(rhov), &five_point_difference(&rho, h, |p| loss(&model, &mu, p)), 1e-6));
    outcome(
        worst < 1e-4,
        format!("{} parameter tensors + mu, rho; max relative error {worst:.1e}", ids.len()),
    )
}

fn elbo_oracle_equivalence() -> Outcome {
    let cfg = micro_config(2, vec![1], 21);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = Model::new(&cfg).unwrap();
    jitter_parameters(&mut model, 0.2, &mut rng);
    let t_len = 3;
    let x = gaussian(3, t_len, 0.5, &mut rng);
    let w = DMatrix::from_element(3, t_len, 1.0);
    let mu = gaussian(3, t_len, 0.5, &mut rng);
    let rho = gaussian(3, t_len, 0.3, &mut rng).add_scalar(-1.0);
    let eps = gaussian(3, t_len, 1.0, &mut rng);
    let b = Eval::new(model.store());
    let bound = model.bind(&b);
    let got = sequence_elbo(&b, &bound, &cfg.lags, &x, &w, &mu, &rho, &eps).unwrap().terms(&b);
    let want = elbo_oracle(&model, &x, &w, &mu, &rho, &eps);
    let diff = [
        got.reconstruction - want.reconstruction,
        got.discrete_kl - want.discrete_kl,
        got.continuous_kl - want.continuous_kl,
        got.elbo - want.elbo(),
    ]
    .iter()
    .fold(0.0f64, |a, d| a.max(d.abs()));
    outcome(diff < 1e-10, format!("T=3 K=3 S=2: ELBO {:.6} vs oracle {:.6}, max term diff {diff:.1e}", got.elbo, want.elbo()))
}

fn transition_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut model = Model::new(&ModelConfig::default()).unwrap();
    jitter_parameters(&mut model, 0.3, &mut rng);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let g = random_rotation(3, &mut rng);
        let hist = vec![gaussian(3, 1, 1.0, &mut rng), gaussian(3, 1, 1.0, &mut rng)];
        let z = gaussian(3, 1, 1.0, &mut rng);
        let rot: Vec<_> = hist.iter().map(|h| &g * h).collect();
        for s in 0..2 {
            let r0 = (&z - model.transition(s, &hist).unwrap().0).norm();
            let r1 = (&g * &z - model.transition(s, &rot).unwrap().0).norm();
            worst = worst.max((r0 - r1).abs());
        }
    }
    outcome(worst < 1e-8, format!("100 trials, max residual-norm difference {worst:.1e}"))
}

struct Trained {
    model: Model,
    norm: Normalizer,
    report: EvalReport,
    test: Sequence,
    seconds: f64,
}

fn train_and_evaluate(variant: Variant, train_seq: &Sequence, test: &Sequence, rotated: &[(f64, Sequence)]) -> Trained {
    let cfg = ModelConfig {
        variant,
        ..ModelConfig::default()
    };
    let start = Instant::now();
    let norm = Normalizer::fit(std::slice::from_ref(train_seq));
    let mut model = Model::new(&cfg).unwrap();
    train(&mut model, &[norm.apply(train_seq)], &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
    let report = evaluate(&model, &norm, "pendulum", test, rotated).unwrap();
    Trained {
        model,
        norm,
        report,
        test: test.clone(),
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Regular-test NRMSE of the default pendulum run was 0.724%; this bound
/// catches regressions without tying the check to exact float output.
const PILOT_NRMSE_BOUND: f64 = 1.0;

fn pendulum_generalization(eq: &Trained) -> Outcome {
    let regular = eq.report.regular.nrmse;
    let worst = eq.report.rotated.iter().map(|r| r.nrmse).fold(0.0, f64::max);
    let ratio = worst / regular;
    outcome(
        regular <= 15.0 && regular <= PILOT_NRMSE_BOUND && ratio <= 1.5 && eq.report.rotated.len() == 10,
        format!(
            "regular {regular:.3}%, rotated mean {:.3}%, worst {worst:.3}% (ratio {ratio:.3}), {:.0}s",
            eq.report.mean_rotated().unwrap(),
            eq.seconds
        ),
    )
}

fn ablation_contrast(ab: &Trained) -> Outcome {
    let regular = ab.report.regular.nrmse;
    let mean = ab.report.mean_rotated().unwrap();
    let best = ab.report.rotated.iter().map(|r| r.nrmse).fold(f64::INFINITY, f64::min);
    outcome(
        mean >= 3.0 * regular,
        format!(
            "regular {regular:.3}%, rotated mean {mean:.3}% (ratio {:.1}), best rotated {best:.3}%",
            mean / regular
        ),
    )
}

fn state_consistency(eq: &Trained) -> Outcome {
    let agreement: Vec<f64> = (0..eq.report.rotated.len()).map(|i| eq.report.state_agreement(i)).collect();
    let worst = agreement.iter().copied().fold(1.0, f64::min);
    outcome(worst >= 0.95, format!("min argmax agreement over 10 rotations {:.1}%", 100.0 * worst))
}

fn run_cli(dir: &Path, args: &[&str]) -> bool {
    let status = Command::new(env!("CARGO_BIN_EXE_eqssm"))
        .args(args)
        .current_dir(dir)
        .stdout(std::process::Stdio::null())
        .status()
        .expect("spawn eqssm");
    status.success()
}

fn cli_pipeline(dir: &Path) -> bool {
    run_cli(dir, &["simulate", "-o", "pendulum.csv", "--split"])
        && run_cli(dir, &["train", "pendulum_train.csv", "--seed", "0", "--checkpoint", "model.ck", "--trace", "trace.csv"])
        && run_cli(
            dir,
            &[
                "evaluate", "--seed", "0", "--checkpoint", "model.ck", "pendulum_test.csv", "--rotate", "10", "--dataset",
                "pendulum", "--results", "results.csv",
            ],
        )
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    if !cli_pipeline(a.path()) || !cli_pipeline(b.path()) {
        return outcome(false, "pipeline command failed".into());
    }
    let mut same = true;
    let mut parts = Vec::new();
    for f in ["model.ck", "results.csv", "trace.csv"] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        same &= x == y;
        parts.push(format!("{f} {} bytes {}", x.len(), if x == y { "identical" } else { "DIFFER" }));
    }
    outcome(same, format!("simulate/train/evaluate twice: {}", parts.join(", ")))
}

fn missing_data(eq: &Trained) -> Outcome {
    let base = eq.report.regular.nrmse;
    let mut ratios = Vec::new();
    let mut filled = true;
    let mut hidden = 0;
    for seed in 11..16 {
        let masked = mask_random(&eq.test, 0.3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        hidden = eq.test.observed_count() - masked.observed_count();
        let pred = predict(&eq.model, &eq.norm, &masked).unwrap();
        filled &= pred.predicted.iter().all(|v| v.is_finite());
        let err = nrmse_from(&pred.predicted, &masked.values, &masked.mask, pred.warmup).unwrap();
        ratios.push(err / base);
    }
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    let best = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    outcome(
        filled && worst <= 2.0,
        format!(
            "{hidden} of {} entries hidden, 5 draws, all predictions finite: {filled}; observed-entry NRMSE / unmasked {base:.3}%: min {best:.2}, mean {mean:.2}, max {worst:.2}",
            eq.test.observed_count()
        ),
    )
}

fn main() {
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, o: Outcome| {
        println!("{} {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    record(1, "basis correctness", basis_correctness());
    record(2, "equivariance suite", equivariance_suite());
    record(3, "exp correspondence", exp_correspondence());
    record(4, "gradient correctness", gradient_correctness());
    record(5, "ELBO oracle equivalence", elbo_oracle_equivalence());
    record(6, "transition-likelihood invariance", transition_invariance());

    let seq = simulate_pendulum(&PendulumSpec::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let (train_seq, test_seq) = split_half(&seq, ModelConfig::default().max_lag()).unwrap();
    let rotated = make_rotated_testset(&test_seq, 10, &mut ChaCha8Rng::seed_from_u64(1));
    let eq = train_and_evaluate(Variant::Equivariant, &train_seq, &test_seq, &rotated);
    let ab = train_and_evaluate(Variant::Ablation, &train_seq, &test_seq, &rotated);
    record(7, "pendulum generalization", pendulum_generalization(&eq));
    record(8, "ablation contrast", ablation_contrast(&ab));
    record(9, "state consistency", state_consistency(&eq));
    record(10, "determinism", determinism());
    record(11, "missing-data handling", missing_data(&eq));

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "{} of {} criteria passed in {:.0}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
