use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::elbo::{sequence_elbo, ElboTerms};
use super::model::Model;
use crate::data::Sequence;
use crate::diff::{AdamConfig, Backend, Eval, Graph, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::lie::RepSignature;

/// Initial variational standard deviation.
pub const PHI_SIGMA_INIT: f64 = 0.1;

/// `softplus^{-1}`.
pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Data-driven latent guess for one timestep: every rank-1 copy of the
/// latent starts at the mean of the fully observed joint positions, every
/// other channel at zero. `None` when no joint is fully observed.
pub fn latent_guess(latent: &RepSignature, row: &[f64], observed: &[bool]) -> Option<DMatrix<f64>> {
    let mut sum = [0.0; 3];
    let mut n = 0;
    for j in 0..row.len() / 3 {
        if (0..3).all(|a| observed[3 * j + a]) {
            for a in 0..3 {
                sum[a] += row[3 * j + a];
            }
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    let mut z = DMatrix::zeros(latent.size(3), 1);
    for b in latent.blocks(3).iter().filter(|b| b.rank == 1) {
        for a in 0..3 {
            z[b.offset + a] = sum[a] / n as f64;
        }
    }
    Some(z)
}

/// `K x T` initial means: [`latent_guess`] per timestep, carrying the previous
/// guess (or zero) through timesteps without a fully observed joint.
pub fn initial_means(latent: &RepSignature, seq: &Sequence) -> DMatrix<f64> {
    let k = latent.size(3);
    let mut mu = DMatrix::zeros(k, seq.len());
    let mut last = DMatrix::zeros(k, 1);
    for t in 0..seq.len() {
        let row: Vec<f64> = seq.values.row(t).iter().copied().collect();
        let obs: Vec<bool> = seq.mask.row(t).iter().copied().collect();
        if let Some(z) = latent_guess(latent, &row, &obs) {
            last = z;
        }
        mu.set_column(t, &last.column(0));
    }
    mu
}

/// Per-sequence, per-timestep variational parameters.
#[derive(Debug, Clone)]
pub struct Variational {
    pub store: ParamStore,
    /// `(mu, rho)` ids per sequence; `sigma = softplus(rho)`.
    pub ids: Vec<(ParamId, ParamId)>,
}

impl Variational {
    pub fn init(model: &Model, seqs: &[Sequence]) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut ids = Vec::with_capacity(seqs.len());
        let rho0 = inverse_softplus(PHI_SIGMA_INIT);
        for (n, seq) in seqs.iter().enumerate() {
            let mu = initial_means(model.latent_signature(), seq);
            let rho = DMatrix::from_element(mu.nrows(), mu.ncols(), rho0);
            ids.push((store.add(format!("seq{n}.mu"), mu)?, store.add(format!("seq{n}.rho"), rho)?));
        }
        Ok(Self { store, ids })
    }

    pub fn mean(&self, n: usize) -> &DMatrix<f64> {
        self.store.get(self.ids[n].0)
    }

    pub fn sigma(&self, n: usize) -> DMatrix<f64> {
        self.store.get(self.ids[n].1).map(crate::diff::kernels::softplus)
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub phi: Variational,
    /// Negative bound per epoch, evaluated before that epoch's update.
    pub trace: Vec<f64>,
    /// Terms of the final bound on each sequence with `eps = 0`.
    pub final_terms: Vec<ElboTerms>,
}

impl TrainOutput {
    /// Running minimum of the trace.
    pub fn smoothed_trace(&self) -> Vec<f64> {
        self.trace
            .iter()
            .scan(f64::INFINITY, |m, &x| {
                *m = m.min(x);
                Some(*m)
            })
            .collect()
    }
}

fn check_sequences(model: &Model, seqs: &[Sequence]) -> Result<()> {
    let cfg = model.config();
    for s in seqs {
        if s.joints() != cfg.joints {
            return Err(Error::Shape(format!(
                "sequence `{}` has {} joints, model expects {}",
                s.name,
                s.joints(),
                cfg.joints
            )));
        }
        if s.len() < cfg.max_lag() + 1 {
            return Err(Error::InvalidArgument(format!(
                "sequence `{}` has {} steps; at least {} are needed",
                s.name,
                s.len(),
                cfg.max_lag() + 1
            )));
        }
    }
    Ok(())
}

/// Noise-free bound terms per sequence.
pub fn evaluate_elbo(model: &Model, phi: &Variational, seqs: &[Sequence]) -> Result<Vec<ElboTerms>> {
    let b = Eval::new(model.store());
    let bound = model.bind(&b);
    seqs.iter()
        .enumerate()
        .map(|(n, seq)| {
            let (x, w) = seq.columns();
            let mu = phi.store.get(phi.ids[n].0);
            let rho = phi.store.get(phi.ids[n].1);
            let eps = DMatrix::zeros(mu.nrows(), mu.ncols());
            let e = sequence_elbo(&b, &bound, &model.config().lags, &x, &w, mu, rho, &eps)
                .map_err(|e| Error::NonFinite(format!("sequence `{}`: {e}", seq.name)))?;
            Ok(e.terms(&b))
        })
        .collect()
}

/// Full-batch joint optimization of `theta` (in `model`) and `phi` with
/// Adam, one fresh reparameterization draw per epoch.
pub fn train<R: Rng + ?Sized>(model: &mut Model, seqs: &[Sequence], rng: &mut R) -> Result<TrainOutput> {
    check_sequences(model, seqs)?;
    let mut phi = Variational::init(model, seqs)?;
    let cols: Vec<(DMatrix<f64>, DMatrix<f64>)> = seqs.iter().map(Sequence::columns).collect();
    let cfg = model.config().clone();
    let adam = AdamConfig::new(cfg.lr);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let g = Graph::new(model.store());
        let bound = model.bind(&g);
        let mut losses = Vec::with_capacity(seqs.len());
        let mut leaves = Vec::with_capacity(seqs.len());
        for (n, seq) in seqs.iter().enumerate() {
            let (mu_id, rho_id) = phi.ids[n];
            let mu = g.constant(phi.store.get(mu_id).clone());
            let rho = g.constant(phi.store.get(rho_id).clone());
            let (k, t) = phi.store.get(mu_id).shape();
            let eps = DMatrix::from_fn(k, t, |_, _| rng.sample(StandardNormal));
            let (x, w) = &cols[n];
            let e = sequence_elbo(&g, &bound, &cfg.lags, x, w, &mu, &rho, &eps)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, sequence `{}`: {e}", seq.name)))?;
            losses.push(e.loss);
            leaves.push((mu, rho));
        }
        let total = g.add_all(&losses);
        let value = g.scalar(&total);
        trace.push(value);
        let (grads, theta_grads) = g.backward(total)?;
        let phi_grads: Vec<DMatrix<f64>> = leaves.iter().flat_map(|(m, r)| [grads.wrt(*m), grads.wrt(*r)]).collect();
        model
            .store_mut()
            .adam_step(&theta_grads, &adam)
            .map_err(|e| Error::NonFinite(format!("epoch {epoch}: {e}")))?;
        phi.store
            .adam_step(&phi_grads, &adam)
            .map_err(|e| Error::NonFinite(format!("epoch {epoch}: {e}")))?;
        if epoch % 100 == 0 || epoch + 1 == cfg.epochs {
            log::info!("epoch {epoch}: loss {value:.4}");
        }
    }
    let final_terms = evaluate_elbo(model, &phi, seqs)?;
    Ok(TrainOutput {
        phi,
        trace,
        final_terms,
    })
}
