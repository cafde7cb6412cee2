use nalgebra::DMatrix;

use super::elbo::{gauss_logpdf_cols, kl_gauss_cols, posterior_step};
use super::model::Model;
use super::train::{inverse_softplus, latent_guess, PHI_SIGMA_INIT};
use crate::data::Sequence;
use crate::diff::{AdamConfig, Backend, Eval, Graph, ParamStore};
use crate::error::{Error, Result};

/// Variational state of one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct InferState {
    pub mu: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

fn argmax(v: &DMatrix<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Index of the largest entry (first on ties).
pub fn most_probable(q: &DMatrix<f64>) -> usize {
    argmax(q)
}

/// Everything about the prior of timestep `t = past.len()` that does not
/// depend on the new latent.
struct StepPrior {
    /// `(mean, sigma)` per state, or `None` before the first full lag window.
    transitions: Option<Vec<(DMatrix<f64>, DMatrix<f64>)>>,
    /// Log switch distributions out of each previous state; empty at `t = 0`.
    log_pi: Vec<DMatrix<f64>>,
    q_prev: Option<DMatrix<f64>>,
}

impl StepPrior {
    fn new(model: &Model, past: &[DMatrix<f64>], q_prev: Option<&DMatrix<f64>>) -> Result<Self> {
        let cfg = model.config();
        let t = past.len();
        let b = Eval::new(model.store());
        let m = model.bind(&b);
        let log_pi = if t > 0 {
            (0..cfg.states)
                .map(|s| m.switch_log_probs(&b, s, &past[t - 1]))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let transitions = if t >= cfg.max_lag() {
            let hist: Vec<DMatrix<f64>> = cfg.lags.iter().map(|l| past[t - l].clone()).collect();
            Some((0..cfg.states).map(|s| m.transition(&b, s, &hist)).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        let q_prev = match (t, q_prev) {
            (0, _) => None,
            (_, Some(q)) => Some(q.clone()),
            (_, None) => return Err(Error::InvalidArgument("q_prev is required after the first timestep".into())),
        };
        Ok(Self {
            transitions,
            log_pi,
            q_prev,
        })
    }

    /// Prior state probabilities `sum_s' q_prev[s'] pi^{s'}`.
    fn state_prior(&self, states: usize) -> DMatrix<f64> {
        match &self.q_prev {
            None => DMatrix::from_element(states, 1, 1.0 / states as f64),
            Some(q) => {
                let mut p = DMatrix::zeros(states, 1);
                for (s, lp) in self.log_pi.iter().enumerate() {
                    p += lp.map(f64::exp) * q[s];
                }
                p
            }
        }
    }

    /// Negative bound slice of this timestep plus `q(s_t)`.
    fn objective<B: Backend>(&self, b: &B, mu: &B::V, sigma: &B::V, states: usize) -> Result<(B::V, B::V)> {
        let (k, _) = b.shape(mu);
        let (q, disc) = match &self.q_prev {
            None => (b.constant(DMatrix::from_element(states, 1, 1.0 / states as f64)), None),
            Some(qp) => {
                let log_pi: Vec<B::V> = self.log_pi.iter().map(|l| b.constant(l.clone())).collect();
                let ll = match &self.transitions {
                    Some(tr) => {
                        let rows: Vec<B::V> = tr
                            .iter()
                            .map(|(m, s)| gauss_logpdf_cols(b, mu, &b.constant(m.clone()), &b.constant(s.clone())))
                            .collect();
                        Some(b.concat(&rows))
                    }
                    None => None,
                };
                let step = posterior_step(b, &b.constant(qp.clone()), &log_pi, ll.as_ref())?;
                (step.q, Some(step.kl))
            }
        };
        let cont = match &self.transitions {
            Some(tr) => {
                let rows: Vec<B::V> = tr
                    .iter()
                    .map(|(m, s)| kl_gauss_cols(b, mu, sigma, &b.constant(m.clone()), &b.constant(s.clone())))
                    .collect();
                b.sum(&b.mul(&q, &b.concat(&rows)))
            }
            None => {
                let zeros = b.constant(DMatrix::zeros(k, 1));
                let ones = b.constant(DMatrix::from_element(k, 1, 1.0));
                kl_gauss_cols(b, mu, sigma, &zeros, &ones)
            }
        };
        let kl = match disc {
            Some(d) => b.add(&cont, &d),
            None => cont,
        };
        Ok((kl, q))
    }
}

/// Fits the variational parameters of one new timestep with the generative
/// model frozen.
///
/// `past` holds the filtered latent means of all earlier timesteps and
/// `q_prev` the previous state posterior. The new mean starts at the
/// transition mean of the most probable state under the prior (or at the
/// data-driven guess before the first full lag window) and takes `steps`
/// Adam steps on this timestep's bound with the noise draw fixed at zero.
/// Adam uses one second-moment scalar per tensor, so the iterates rotate with
/// the data.
pub fn infer_step(
    model: &Model,
    past: &[DMatrix<f64>],
    q_prev: Option<&DMatrix<f64>>,
    x_new: &[f64],
    observed: &[bool],
    steps: usize,
    lr: f64,
) -> Result<InferState> {
    let cfg = model.config();
    let dim = 3 * cfg.joints;
    if x_new.len() != dim || observed.len() != dim {
        return Err(Error::Shape(format!("observation must have {dim} entries")));
    }
    let prior = StepPrior::new(model, past, q_prev)?;
    let (mu0, sigma0) = match &prior.transitions {
        Some(tr) => tr[argmax(&prior.state_prior(cfg.states))].clone(),
        None => {
            let guess = latent_guess(model.latent_signature(), x_new, observed)
                .or_else(|| past.last().cloned())
                .unwrap_or_else(|| DMatrix::zeros(cfg.latent_dim, 1));
            (guess, DMatrix::from_element(cfg.latent_dim, 1, PHI_SIGMA_INIT))
        }
    };
    let x = DMatrix::from_fn(dim, 1, |i, _| if observed[i] { x_new[i] } else { 0.0 });
    let w = DMatrix::from_fn(dim, 1, |i, _| if observed[i] { 1.0 } else { 0.0 });

    let mut local = ParamStore::new();
    let mu_id = local.add("mu", mu0)?;
    let rho_id = local.add("rho", sigma0.map(inverse_softplus))?;
    let adam = AdamConfig::new(lr).isotropic();
    for _ in 0..steps {
        let g = Graph::new(model.store());
        let m = model.bind(&g);
        let mu = g.constant(local.get(mu_id).clone());
        let rho = g.constant(local.get(rho_id).clone());
        let sigma = g.softplus(&rho);
        let x_hat = m.emission(&g, &mu);
        let resid = g.sum(&g.mul(&g.constant(w.clone()), &g.square(&g.sub(&g.constant(x.clone()), &x_hat))));
        let recon = g.div(&resid, &g.scale(&g.square(&m.sigma_x), 2.0));
        let (kl, _) = prior.objective(&g, &mu, &sigma, cfg.states)?;
        let loss = g.add(&recon, &kl);
        if !g.is_finite(&loss) {
            return Err(Error::NonFinite(format!("inference objective at timestep {}", past.len())));
        }
        let (grads, _) = g.backward(loss)?;
        local.adam_step(&[grads.wrt(mu), grads.wrt(rho)], &adam)?;
    }
    let b = Eval::new(model.store());
    let mu = local.get(mu_id).clone();
    let sigma = local.get(rho_id).map(crate::diff::kernels::softplus);
    let (_, q) = prior.objective(&b, &mu, &sigma, cfg.states)?;
    Ok(InferState { mu, sigma, q })
}

/// `d mu_x / d z` at `z`, `(3 D) x K`.
pub fn emission_jacobian(model: &Model, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let g = Graph::new(model.store());
    let m = model.bind(&g);
    let zv = g.leaf(z.clone());
    let y = m.emission(&g, &zv);
    let (rows, _) = g.shape(&y);
    let mut j = DMatrix::zeros(rows, z.nrows());
    for r in 0..rows {
        let (grads, _) = g.backward(g.slice(&y, r, 1))?;
        j.set_row(r, &grads.wrt(zv).transpose().row(0));
    }
    Ok(j)
}

/// Output of [`rolling_predict`], all in the units of the input sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `T x (3 D)`; rows before `warmup` are reconstructions, later rows
    /// one-step-ahead predictions.
    pub predicted: DMatrix<f64>,
    /// First-order predictive standard deviation, same layout.
    pub std: DMatrix<f64>,
    /// `S x T` filtered state posteriors.
    pub q: DMatrix<f64>,
    /// `argmax q(s_t)` per timestep.
    pub states: Vec<usize>,
    /// `K x T` filtered latent means.
    pub latent: DMatrix<f64>,
    /// Number of leading timesteps used only to start the filter.
    pub warmup: usize,
}

/// Rolling one-step-ahead prediction with the generative model frozen.
///
/// The first `max(lags)` timesteps only start the filter. After that, for
/// each `t`: `s = argmax pi^{argmax q(s_{t-1})}(z_{t-1})`, `z = ` the state-`s`
/// transition mean, `x = mu_x(z)`; then [`infer_step`] conditions on the true
/// `x_t`. The prediction for `t` only depends on observations before `t`.
pub fn rolling_predict(model: &Model, seq: &Sequence) -> Result<Prediction> {
    let cfg = model.config();
    let (t_len, dim) = (seq.len(), 3 * cfg.joints);
    if seq.joints() != cfg.joints {
        return Err(Error::Shape(format!(
            "sequence has {} joints, model expects {}",
            seq.joints(),
            cfg.joints
        )));
    }
    let warmup = cfg.max_lag();
    if t_len <= warmup {
        return Err(Error::InvalidArgument(format!(
            "test sequence needs more than {warmup} steps, has {t_len}"
        )));
    }
    let sx = model.sigma_x();
    let mut predicted = DMatrix::zeros(t_len, dim);
    let mut std = DMatrix::zeros(t_len, dim);
    let mut q = DMatrix::zeros(cfg.states, t_len);
    let mut states = Vec::with_capacity(t_len);
    let mut past: Vec<DMatrix<f64>> = Vec::with_capacity(t_len);
    let mut q_prev: Option<DMatrix<f64>> = None;
    for t in 0..t_len {
        let row: Vec<f64> = seq.values.row(t).iter().copied().collect();
        let obs: Vec<bool> = seq.mask.row(t).iter().copied().collect();
        if t >= warmup {
            let qp = q_prev.as_ref().expect("filter started");
            let s_prev = argmax(qp);
            let s_hat = argmax(&model.switch_probs(s_prev, &past[t - 1])?);
            let hist: Vec<DMatrix<f64>> = cfg.lags.iter().map(|l| past[t - l].clone()).collect();
            let (z_hat, z_sd) = model.transition(s_hat, &hist)?;
            let x_hat = model.emission_mean(&z_hat)?;
            let jac = emission_jacobian(model, &z_hat)?;
            let var = jac.map(|v| v * v) * z_sd.map(|v| v * v);
            for i in 0..dim {
                predicted[(t, i)] = x_hat[i];
                std[(t, i)] = (var[i] + sx * sx).sqrt();
            }
        }
        let state = infer_step(model, &past, q_prev.as_ref(), &row, &obs, cfg.infer_steps, cfg.infer_lr())?;
        if t < warmup {
            let x_rec = model.emission_mean(&state.mu)?;
            for i in 0..dim {
                predicted[(t, i)] = x_rec[i];
                std[(t, i)] = sx;
            }
        }
        q.set_column(t, &state.q.column(0));
        states.push(argmax(&state.q));
        past.push(state.mu);
        q_prev = Some(state.q);
    }
    let mut latent = DMatrix::zeros(cfg.latent_dim, t_len);
    for (t, z) in past.iter().enumerate() {
        latent.set_column(t, &z.column(0));
    }
    Ok(Prediction {
        predicted,
        std,
        q,
        states,
        latent,
        warmup,
    })
}
