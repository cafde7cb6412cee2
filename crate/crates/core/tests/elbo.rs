mod common;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use eqssm::diff::gradcheck::{five_point_difference, max_relative_error};
use eqssm::diff::{Backend, Eval, Graph};
use eqssm::ssm::{sequence_elbo, Model, ModelConfig};

use common::{elbo_oracle, gaussian, jitter_parameters, micro_config, random_rotation};

struct Instance {
    model: Model,
    x: DMatrix<f64>,
    w: DMatrix<f64>,
    mu: DMatrix<f64>,
    rho: DMatrix<f64>,
    eps: DMatrix<f64>,
}

fn instance(cfg: ModelConfig, t_len: usize, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::new(&cfg).unwrap();
    jitter_parameters(&mut model, 0.2, &mut rng);
    let dim = 3 * cfg.joints;
    let x = gaussian(dim, t_len, 0.5, &mut rng);
    let w = DMatrix::from_fn(dim, t_len, |_, _| if rng.random_bool(0.8) { 1.0 } else { 0.0 });
    let x = x.component_mul(&w);
    let k = cfg.latent_dim;
    Instance {
        model,
        x,
        w,
        mu: gaussian(k, t_len, 0.5, &mut rng),
        rho: gaussian(k, t_len, 0.3, &mut rng).add_scalar(-1.0),
        eps: gaussian(k, t_len, 1.0, &mut rng),
    }
}

fn loss(model: &Model, inst: &Instance, mu: &DMatrix<f64>, rho: &DMatrix<f64>) -> f64 {
    let b = Eval::new(model.store());
    let m = model.bind(&b);
    let e = sequence_elbo(&b, &m, &model.config().lags, &inst.x, &inst.w, mu, rho, &inst.eps).unwrap();
    b.scalar(&e.loss)
}

#[test]
fn elbo_gradient_matches_finite_differences() {
    let cfg = ModelConfig {
        train_sigma_x: true,
        ..micro_config(2, vec![1, 2], 11)
    };
    let inst = instance(cfg, 5, 1);
    let g = Graph::new(inst.model.store());
    let m = inst.model.bind(&g);
    let mu = g.constant(inst.mu.clone());
    let rho = g.constant(inst.rho.clone());
    let e = sequence_elbo(&g, &m, &inst.model.config().lags, &inst.x, &inst.w, &mu, &rho, &inst.eps).unwrap();
    let (grads, theta) = g.backward(e.loss).unwrap();

    let mut worst: f64 = 0.0;
    let h = 1e-3;
    let ids: Vec<_> = inst.model.store().ids().collect();
    for (id, analytic) in ids.iter().zip(&theta) {
        let base = inst.model.store().get(*id).clone();
        let fd = five_point_difference(&base, h, |p| {
            let mut probe = inst.model.clone();
            probe.store_mut().set(*id, p.clone()).unwrap();
            loss(&probe, &inst, &inst.mu, &inst.rho)
        });
        let err = max_relative_error(analytic, &fd, 1e-6);
        assert!(err < 1e-4, "{}: relative error {err:e}", inst.model.store().name(*id));
        worst = worst.max(err);
    }
    let fd_mu = five_point_difference(&inst.mu, h, |p| loss(&inst.model, &inst, p, &inst.rho));
    let fd_rho = five_point_difference(&inst.rho, h, |p| loss(&inst.model, &inst, &inst.mu, p));
    assert!(max_relative_error(&grads.wrt(mu), &fd_mu, 1e-6) < 1e-4);
    assert!(max_relative_error(&grads.wrt(rho), &fd_rho, 1e-6) < 1e-4);
    assert!(worst < 1e-4);
}

#[test]
fn elbo_matches_independent_oracle() {
    for (states, lags, t_len) in [(2, vec![1], 3), (2, vec![1, 2], 3), (3, vec![1, 2], 6), (1, vec![2], 4)] {
        let cfg = micro_config(states, lags, 21);
        let inst = instance(cfg, t_len, 2);
        let b = Eval::new(inst.model.store());
        let m = inst.model.bind(&b);
        let e = sequence_elbo(&b, &m, &inst.model.config().lags, &inst.x, &inst.w, &inst.mu, &inst.rho, &inst.eps).unwrap();
        let got = e.terms(&b);
        let want = elbo_oracle(&inst.model, &inst.x, &inst.w, &inst.mu, &inst.rho, &inst.eps);
        assert!((got.reconstruction - want.reconstruction).abs() < 1e-10);
        assert!(
            (got.discrete_kl - want.discrete_kl).abs() < 1e-10,
            "S={states}: {} vs {}",
            got.discrete_kl,
            want.discrete_kl
        );
        assert!((got.continuous_kl - want.continuous_kl).abs() < 1e-10);
        assert!((got.elbo - want.elbo()).abs() < 1e-10, "{} vs {}", got.elbo, want.elbo());
        assert!(got.discrete_kl > -1e-10 && got.continuous_kl > -1e-10);
        if states == 1 {
            assert!(got.discrete_kl.abs() < 1e-12);
        }
    }
}

#[test]
fn graph_and_eval_backends_agree_bitwise() {
    let inst = instance(micro_config(2, vec![1, 2], 5), 7, 3);
    let b = Eval::new(inst.model.store());
    let eb = inst.model.bind(&b);
    let e1 = sequence_elbo(&b, &eb, &[1, 2], &inst.x, &inst.w, &inst.mu, &inst.rho, &inst.eps).unwrap();
    let g = Graph::new(inst.model.store());
    let gb = inst.model.bind(&g);
    let (mu, rho) = (g.constant(inst.mu.clone()), g.constant(inst.rho.clone()));
    let e2 = sequence_elbo(&g, &gb, &[1, 2], &inst.x, &inst.w, &mu, &rho, &inst.eps).unwrap();
    assert_eq!(b.scalar(&e1.loss).to_bits(), g.scalar(&e2.loss).to_bits());
    assert_eq!(e1.q, e2.q);
}

#[test]
fn continuous_kl_vanishes_when_q_equals_the_prior() {
    // lags [1]; q(z_0) = N(0, I) and every later q(z_t) equal to the single
    // state's transition from the previous mean with eps = 0
    let cfg = micro_config(1, vec![1], 4);
    let model = Model::new(&cfg).unwrap();
    let t_len = 4;
    let mut mu = DMatrix::zeros(3, t_len);
    let mut sigma = DMatrix::from_element(3, t_len, 1.0);
    mu.set_column(0, &DMatrix::from_column_slice(3, 1, &[0.0, 0.0, 0.0]).column(0));
    for t in 1..t_len {
        let (m, s) = model.transition(0, &[mu.columns(t - 1, 1).into_owned()]).unwrap();
        mu.set_column(t, &m.column(0));
        sigma.set_column(t, &s.column(0));
    }
    let rho = sigma.map(eqssm::ssm::train::inverse_softplus);
    let x = DMatrix::zeros(3, t_len);
    let w = DMatrix::zeros(3, t_len);
    let b = Eval::new(model.store());
    let m = model.bind(&b);
    let e = sequence_elbo(&b, &m, &[1], &x, &w, &mu, &rho, &DMatrix::zeros(3, t_len)).unwrap();
    let terms = e.terms(&b);
    assert!(terms.continuous_kl.abs() < 1e-10, "{}", terms.continuous_kl);
    assert_eq!(terms.reconstruction, 0.0);
}

#[test]
fn transition_residual_and_likelihood_are_rotation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut model = Model::new(&ModelConfig::default()).unwrap();
    jitter_parameters(&mut model, 0.3, &mut rng);
    let b = Eval::new(model.store());
    let m = model.bind(&b);
    for _ in 0..100 {
        let g = random_rotation(3, &mut rng);
        let hist = vec![gaussian(3, 1, 1.0, &mut rng), gaussian(3, 1, 1.0, &mut rng)];
        let z = gaussian(3, 1, 1.0, &mut rng);
        let rot: Vec<_> = hist.iter().map(|h| &g * h).collect();
        for s in 0..2 {
            let r0 = &z - model.transition(s, &hist).unwrap().0;
            let r1 = &g * &z - model.transition(s, &rot).unwrap().0;
            assert!((r0.norm() - r1.norm()).abs() < 1e-8);
        }
        let l0 = m.transition_log_likelihood(&b, &z, &hist).unwrap();
        let l1 = m.transition_log_likelihood(&b, &(&g * &z), &rot).unwrap();
        assert!((l0 - l1).amax() < 1e-8);
        let q_prev = DMatrix::from_column_slice(2, 1, &[0.3, 0.7]);
        let p0 = model.q_state_posterior(&q_prev, &hist[0], &z, &hist).unwrap();
        let p1 = model.q_state_posterior(&q_prev, &rot[0], &(&g * &z), &rot).unwrap();
        assert!((p0 - p1).amax() < 1e-8);
    }
}

#[test]
fn state_posterior_edge_cases() {
    use eqssm::ssm::posterior_step;
    let store = eqssm::diff::ParamStore::new();
    let b = Eval::new(&store);
    let uniform = DMatrix::from_element(2, 1, 0.5);
    let log_pi = vec![uniform.map(f64::ln), uniform.map(f64::ln)];
    let same = DMatrix::from_element(2, 1, -1.3);
    let step = posterior_step(&b, &uniform, &log_pi, Some(&same)).unwrap();
    assert!((step.q.clone() - &uniform).amax() < 1e-12);
    let ruled_out = DMatrix::from_column_slice(2, 1, &[-1.0, -800.0]);
    let step = posterior_step(&b, &uniform, &log_pi, Some(&ruled_out)).unwrap();
    assert!((step.q[0] - 1.0).abs() < 1e-12 && step.q[1] < 1e-300);
    assert!(b.is_finite(&step.kl));
    // every state ruled out: the posterior falls back to the prior
    let none = DMatrix::from_element(2, 1, f64::NEG_INFINITY);
    let step = posterior_step(&b, &uniform, &log_pi, Some(&none)).unwrap();
    assert!((step.q - uniform).amax() < 1e-12);
}

#[test]
fn non_finite_loss_names_the_timestep() {
    let mut inst = instance(micro_config(2, vec![1], 3), 4, 4);
    inst.x[(1, 2)] = f64::NAN;
    let b = Eval::new(inst.model.store());
    let m = inst.model.bind(&b);
    let err = match sequence_elbo(&b, &m, &[1], &inst.x, &inst.w, &inst.mu, &inst.rho, &inst.eps) {
        Err(e) => e.to_string(),
        Ok(_) => panic!("expected an error"),
    };
    assert!(err.contains("timestep 2"), "{err}");
}
