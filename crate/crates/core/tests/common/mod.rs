//! Oracles and fixtures shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use eqssm::diff::kernels::softplus;
use eqssm::lie::RepSignature;
use eqssm::ssm::{Model, ModelConfig};

/// Haar-random rotation in SO(n) from the QR factorization of a Gaussian
/// matrix; independent of the crate's exponential map.
pub fn random_rotation<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            let c = -q.column(j);
            q.set_column(j, &c);
        }
    }
    if q.determinant() < 0.0 {
        let c = -q.column(0);
        q.set_column(0, &c);
    }
    q
}

/// Action of `g` on features laid out by `sig`: rank-`r` blocks transform
/// by the `r`-fold Kronecker power of `g`.
pub fn signature_action(sig: &RepSignature, g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let size = sig.size(n);
    let mut out = DMatrix::zeros(size, size);
    let mut offset = 0;
    for &(count, rank) in sig.terms() {
        let mut block = DMatrix::identity(1, 1);
        for _ in 0..rank {
            block = block.kronecker(g);
        }
        for _ in 0..count {
            let k = block.nrows();
            out.view_mut((offset, offset), (k, k)).copy_from(&block);
            offset += k;
        }
    }
    out
}

/// Orthonormal basis of the subspace fixed by every sample: eigenvectors
/// with eigenvalue above 1/2 of the symmetrized sample average of the
/// action on `vec(W)` (row-major), `W -> rho_out W rho_in^T`.
pub fn averaged_fixed_space(samples: &[DMatrix<f64>], sig_in: &RepSignature, sig_out: &RepSignature) -> DMatrix<f64> {
    let mut avg: Option<DMatrix<f64>> = None;
    for g in samples {
        let hom = signature_action(sig_out, g).kronecker(&signature_action(sig_in, g));
        avg = Some(match avg {
            None => hom,
            Some(a) => a + hom,
        });
    }
    let avg = avg.expect("at least one sample") / samples.len() as f64;
    let sym = (&avg + avg.transpose()) * 0.5;
    let dim = sym.nrows();
    let eig = sym.symmetric_eigen();
    let keep: Vec<usize> = (0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > 0.5).collect();
    let mut basis = DMatrix::zeros(dim, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        basis.set_column(k, &eig.eigenvectors.column(i));
    }
    basis
}

/// Largest principal angle between the column spans of two orthonormal bases.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() == 0 && b.ncols() == 0 {
        return 0.0;
    }
    if a.ncols() != b.ncols() {
        return std::f64::consts::FRAC_PI_2;
    }
    let s = (a.transpose() * b).singular_values();
    s.iter().map(|c| c.clamp(-1.0, 1.0).acos()).fold(0.0, f64::max)
}

/// Small model for the ELBO checks: narrow widths, `sigma_x = 0.1`.
pub fn micro_config(states: usize, lags: Vec<usize>, seed: u64) -> ModelConfig {
    ModelConfig {
        states,
        latent_dim: 3,
        lags,
        switch_width: 1,
        transition_width: 1,
        emission_width: 1,
        sigma_x: 0.1,
        seed,
        ..ModelConfig::default()
    }
}

pub fn gaussian<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

/// Random perturbation of every parameter so no bias sits at its zero init.
pub fn jitter_parameters<R: Rng>(model: &mut Model, std: f64, rng: &mut R) {
    let ids: Vec<_> = model.store().ids().collect();
    for id in ids {
        let v = model.store().get(id).clone();
        let noise = gaussian(v.nrows(), v.ncols(), std, rng);
        model.store_mut().set(id, v + noise).unwrap();
    }
}

/// Terms of the bound computed with plain loops over timesteps and states,
/// using the model's networks only as black-box functions.
#[derive(Debug, Clone, Copy)]
pub struct OracleTerms {
    pub reconstruction: f64,
    pub discrete_kl: f64,
    pub continuous_kl: f64,
}

impl OracleTerms {
    pub fn elbo(&self) -> f64 {
        self.reconstruction - self.discrete_kl - self.continuous_kl
    }
}

fn log_normal(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn kl_normal(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    (s2 / s1).ln() + (s1 * s1 + (m1 - m2) * (m1 - m2)) / (2.0 * s2 * s2) - 0.5
}

/// `x`, `w`: `(3 D) x T`; `mu`, `rho`, `eps`: `K x T`.
pub fn elbo_oracle(
    model: &Model,
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
    mu: &DMatrix<f64>,
    rho: &DMatrix<f64>,
    eps: &DMatrix<f64>,
) -> OracleTerms {
    let cfg = model.config();
    let (k, t_len) = mu.shape();
    let s_n = cfg.states;
    let max_lag = *cfg.lags.iter().max().unwrap();
    let sigma = rho.map(softplus);
    let z = mu + sigma.component_mul(eps);
    let col = |m: &DMatrix<f64>, t: usize| m.columns(t, 1).into_owned();
    let sx = model.sigma_x();

    let mut recon = 0.0;
    for t in 0..t_len {
        let xh = model.emission_mean(&col(&z, t)).unwrap();
        for i in 0..x.nrows() {
            if w[(i, t)] > 0.0 {
                recon += log_normal(x[(i, t)], xh[i], sx);
            }
        }
    }

    let mut cont = 0.0;
    for t in 0..max_lag.min(t_len) {
        for i in 0..k {
            cont += kl_normal(mu[(i, t)], sigma[(i, t)], 0.0, 1.0);
        }
    }

    let mut disc = 0.0;
    let mut q_prev = vec![1.0 / s_n as f64; s_n];
    for t in 1..t_len {
        let pis: Vec<DMatrix<f64>> = (0..s_n).map(|sp| model.switch_probs(sp, &col(&z, t - 1)).unwrap()).collect();
        let prior: Vec<f64> = (0..s_n).map(|s| (0..s_n).map(|sp| q_prev[sp] * pis[sp][s]).sum()).collect();
        let trans: Option<Vec<(DMatrix<f64>, DMatrix<f64>)>> = (t >= max_lag).then(|| {
            let hist: Vec<DMatrix<f64>> = cfg.lags.iter().map(|l| col(&z, t - l)).collect();
            (0..s_n).map(|s| model.transition(s, &hist).unwrap()).collect()
        });
        let q: Vec<f64> = match &trans {
            None => prior.clone(),
            Some(tr) => {
                let lik: Vec<f64> = tr
                    .iter()
                    .map(|(m, sd)| (0..k).map(|i| log_normal(z[(i, t)], m[i], sd[i])).sum::<f64>().exp())
                    .collect();
                let un: Vec<f64> = (0..s_n).map(|s| prior[s] * lik[s]).collect();
                let total: f64 = un.iter().sum();
                un.iter().map(|u| u / total).collect()
            }
        };
        for sp in 0..s_n {
            for s in 0..s_n {
                if q[s] > 0.0 {
                    disc += q_prev[sp] * q[s] * (q[s].ln() - pis[sp][s].ln());
                }
            }
        }
        if let Some(tr) = &trans {
            for (s, (m, sd)) in tr.iter().enumerate() {
                let kl: f64 = (0..k).map(|i| kl_normal(mu[(i, t)], sigma[(i, t)], m[i], sd[i])).sum();
                cont += q[s] * kl;
            }
        }
        q_prev = q;
    }
    OracleTerms {
        reconstruction: recon,
        discrete_kl: disc,
        continuous_kl: cont,
    }
}
