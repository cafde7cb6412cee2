//! Evidence lower bound of one sequence, written once for any [`Backend`].
//!
//! Per timestep the bound is
//! `E_q[log p(x_t | z_t)] - E_{q(s_{t-1})} KL(q(s_t) || p(s_t | s_{t-1}, z_{t-1}))
//!  - sum_s q(s_t = s) KL(q(z_t) || p(z_t | z_{t-lags}, s))`,
//! with one reparameterized sample `z = mu + sigma * eps` per timestep.
//! `q(s_t)` is not free: it follows the mixture-prior times transition-likelihood
//! recursion of [`posterior_step`]. For `t < max(lags)` the latent prior is
//! `N(0, I)` and no likelihood enters `q(s_t)`; `q(s_0)` is uniform.

use nalgebra::DMatrix;

use super::model::BoundModel;
use crate::diff::Backend;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `1 x cols` row of column sums.
pub fn column_sums<B: Backend>(b: &B, m: &B::V) -> B::V {
    let (rows, _) = b.shape(m);
    b.matmul(&b.constant(DMatrix::from_element(1, rows, 1.0)), m)
}

/// `log N(x | mu, diag sigma^2)` of every column, as a `1 x cols` row.
pub fn gauss_logpdf_cols<B: Backend>(b: &B, x: &B::V, mu: &B::V, sigma: &B::V) -> B::V {
    let (rows, cols) = b.shape(x);
    let z = b.div(&b.sub(x, mu), sigma);
    let e = b.add(&b.scale(&b.square(&z), 0.5), &b.log(sigma));
    let row = b.scale(&column_sums(b, &e), -1.0);
    b.add(&row, &b.constant(DMatrix::from_element(1, cols, -0.5 * LN_2PI * rows as f64)))
}

/// `KL(N(mu1, sigma1^2) || N(mu2, sigma2^2))` of every column, as a `1 x cols` row.
pub fn kl_gauss_cols<B: Backend>(b: &B, mu1: &B::V, s1: &B::V, mu2: &B::V, s2: &B::V) -> B::V {
    let (rows, cols) = b.shape(mu1);
    let log_ratio = b.sub(&b.log(s2), &b.log(s1));
    let num = b.add(&b.square(s1), &b.square(&b.sub(mu1, mu2)));
    let frac = b.div(&num, &b.scale(&b.square(s2), 2.0));
    let row = column_sums(b, &b.add(&log_ratio, &frac));
    b.add(&row, &b.constant(DMatrix::from_element(1, cols, -0.5 * rows as f64)))
}

/// One step of the state-posterior recursion.
pub struct PosteriorStep<V> {
    pub q: V,
    pub log_q: V,
    /// `E_{q_prev}[KL(q || pi^{s'})]`.
    pub kl: V,
}

/// `q(s_t) ∝ (sum_s' q_prev[s'] pi^{s'}) * exp(ll)`, normalized in log space.
///
/// `log_pi[s']` is the `S x 1` log switch distribution out of state `s'`; `ll`
/// the `S x 1` transition log-likelihood of the current latent, if any. When
/// the normalized posterior is not finite the prior is used instead.
pub fn posterior_step<B: Backend>(
    b: &B,
    q_prev: &B::V,
    log_pi: &[B::V],
    ll: Option<&B::V>,
) -> Result<PosteriorStep<B::V>> {
    let states = log_pi.len();
    if b.shape(q_prev) != (states, 1) {
        return Err(Error::Shape(format!("q_prev must be {states} x 1")));
    }
    let weights: Vec<B::V> = (0..states).map(|s| b.slice(q_prev, s, 1)).collect();
    let mixture: Vec<B::V> = (0..states)
        .map(|s| b.scalar_mul(&weights[s], &b.exp(&log_pi[s])))
        .collect();
    let tiny = b.constant(DMatrix::from_element(states, 1, f64::MIN_POSITIVE));
    let log_prior = b.log(&b.add(&b.add_all(&mixture), &tiny));
    let log_q = match ll {
        Some(ll) => {
            let post = b.log_softmax(&b.add(&log_prior, ll));
            if b.is_finite(&post) {
                post
            } else {
                log::warn!("state posterior underflowed; falling back to the prior");
                log_prior
            }
        }
        None => log_prior,
    };
    let q = b.exp(&log_q);
    let neg_entropy = b.sum(&b.mul(&q, &log_q));
    let cross: Vec<B::V> = (0..states)
        .map(|s| b.scalar_mul(&weights[s], &b.sum(&b.mul(&q, &log_pi[s]))))
        .collect();
    let kl = b.sub(&neg_entropy, &b.add_all(&cross));
    Ok(PosteriorStep { q, log_q, kl })
}

/// Terms of the bound for one sequence. `loss = discrete_kl + continuous_kl - reconstruction`.
pub struct SequenceElbo<V> {
    pub loss: V,
    pub reconstruction: V,
    pub discrete_kl: V,
    pub continuous_kl: V,
    /// `q(s_t)` for every timestep.
    pub q: Vec<DMatrix<f64>>,
}

/// Plain-number view of [`SequenceElbo`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboTerms {
    pub reconstruction: f64,
    pub discrete_kl: f64,
    pub continuous_kl: f64,
    pub elbo: f64,
}

impl<V> SequenceElbo<V> {
    pub fn terms<B: Backend<V = V>>(&self, b: &B) -> ElboTerms {
        let r = b.scalar(&self.reconstruction);
        let d = b.scalar(&self.discrete_kl);
        let c = b.scalar(&self.continuous_kl);
        ElboTerms {
            reconstruction: r,
            discrete_kl: d,
            continuous_kl: c,
            elbo: r - d - c,
        }
    }
}

fn first_bad_column<B: Backend>(b: &B, row: &B::V, offset: usize) -> Option<usize> {
    let v = b.value(row);
    (0..v.ncols()).find(|&c| v.column(c).iter().any(|x| !x.is_finite())).map(|c| c + offset)
}

/// The bound of one sequence.
///
/// `x` and `w` are the `(3 D) x T` zero-filled observations and 0/1 weights,
/// `mu` and `rho` the `K x T` variational means and pre-softplus scales, and
/// `eps` the `K x T` standard-normal draw.
#[allow(clippy::too_many_arguments)]
pub fn sequence_elbo<B: Backend>(
    b: &B,
    m: &BoundModel<B::V>,
    lags: &[usize],
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
    mu: &B::V,
    rho: &B::V,
    eps: &DMatrix<f64>,
) -> Result<SequenceElbo<B::V>> {
    let (k, t_len) = b.shape(mu);
    if b.shape(rho) != (k, t_len) || eps.shape() != (k, t_len) {
        return Err(Error::Shape("mu, rho and eps must share one shape".into()));
    }
    if x.ncols() != t_len || w.shape() != x.shape() {
        return Err(Error::Shape(format!(
            "observations are {}x{}, latents cover {t_len} timesteps",
            x.nrows(),
            x.ncols()
        )));
    }
    let states = m.states();
    let max_lag = lags.iter().copied().max().unwrap_or(0);
    let sigma = b.softplus(rho);
    let z = b.add(mu, &b.mul(&sigma, &b.constant(eps.clone())));

    // reconstruction
    let x_hat = m.emission(b, &z);
    let resid = b.mul(&b.constant(w.clone()), &b.square(&b.sub(&b.constant(x.clone()), &x_hat)));
    let sx = &m.sigma_x;
    let coef = b.div(&b.constant_scalar(-0.5), &b.square(sx));
    let counts = DMatrix::from_fn(1, t_len, |_, c| w.column(c).sum());
    let norm = b.add(&b.log(sx), &b.constant_scalar(0.5 * LN_2PI));
    let recon_row = b.sub(
        &b.scalar_mul(&coef, &column_sums(b, &resid)),
        &b.scalar_mul(&norm, &b.constant(counts)),
    );
    let reconstruction = b.sum(&recon_row);

    // continuous KL against N(0, I) before the first full lag window
    let n_init = max_lag.min(t_len);
    let mut cont_parts = Vec::new();
    let mut init_row = None;
    if n_init > 0 {
        let mu0 = b.slice_cols(mu, 0, n_init);
        let s0 = b.slice_cols(&sigma, 0, n_init);
        let zeros = b.constant(DMatrix::zeros(k, n_init));
        let ones = b.constant(DMatrix::from_element(k, n_init, 1.0));
        let row = kl_gauss_cols(b, &mu0, &s0, &zeros, &ones);
        cont_parts.push(b.sum(&row));
        init_row = Some(row);
    }

    // transition terms for t >= max_lag
    let steps = t_len.saturating_sub(max_lag);
    let mut kl_t = None;
    let mut ll_t = None;
    if steps > 0 {
        let hist: Vec<B::V> = lags.iter().map(|l| b.slice_cols(&z, max_lag - l, steps)).collect();
        let z_now = b.slice_cols(&z, max_lag, steps);
        let mu_now = b.slice_cols(mu, max_lag, steps);
        let s_now = b.slice_cols(&sigma, max_lag, steps);
        let mut kl_rows = Vec::with_capacity(states);
        let mut ll_rows = Vec::with_capacity(states);
        for s in 0..states {
            let (mean, sd) = m.transition(b, s, &hist)?;
            kl_rows.push(kl_gauss_cols(b, &mu_now, &s_now, &mean, &sd));
            ll_rows.push(gauss_logpdf_cols(b, &z_now, &mean, &sd));
        }
        // S x steps, transposed so one timestep is one row
        kl_t = Some(b.transpose(&b.concat(&kl_rows)));
        ll_t = Some(b.transpose(&b.concat(&ll_rows)));
    }

    // switch log-probabilities out of every state, one timestep per row
    let log_pi_t: Vec<B::V> = if t_len > 1 {
        let z_prev = b.slice_cols(&z, 0, t_len - 1);
        (0..states)
            .map(|s| Ok(b.transpose(&m.switch_log_probs(b, s, &z_prev)?)))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let row_at = |mat: &B::V, r: usize| b.reshape(&b.slice(mat, r, 1), states, 1);
    let mut q_prev = b.constant(DMatrix::from_element(states, 1, 1.0 / states as f64));
    let mut q_vals = vec![b.value(&q_prev)];
    let mut disc_parts = Vec::with_capacity(t_len);
    let mut q_weighted = Vec::with_capacity(steps);
    for t in 1..t_len {
        let log_pi: Vec<B::V> = log_pi_t.iter().map(|lp| row_at(lp, t - 1)).collect();
        let ll = (t >= max_lag).then(|| row_at(ll_t.as_ref().expect("transition terms"), t - max_lag));
        let step = posterior_step(b, &q_prev, &log_pi, ll.as_ref())?;
        if !b.is_finite(&step.kl) {
            return Err(Error::NonFinite(format!("timestep {t}: discrete KL term")));
        }
        disc_parts.push(step.kl);
        if t >= max_lag {
            q_weighted.push(step.q.clone());
        }
        q_vals.push(b.value(&step.q));
        q_prev = step.q;
    }
    if let Some(kl_t) = &kl_t {
        let q_all = b.concat(&q_weighted);
        let kl_flat = b.reshape(kl_t, steps * states, 1);
        cont_parts.push(b.sum(&b.mul(&q_all, &kl_flat)));
    }

    let zero = || b.constant_scalar(0.0);
    let discrete_kl = if disc_parts.is_empty() { zero() } else { b.add_all(&disc_parts) };
    let continuous_kl = if cont_parts.is_empty() { zero() } else { b.add_all(&cont_parts) };
    let loss = b.sub(&b.add(&discrete_kl, &continuous_kl), &reconstruction);
    if !b.is_finite(&loss) {
        if let Some(t) = first_bad_column(b, &recon_row, 0) {
            return Err(Error::NonFinite(format!("timestep {t}: reconstruction term")));
        }
        if let Some(t) = init_row.as_ref().and_then(|r| first_bad_column(b, r, 0)) {
            return Err(Error::NonFinite(format!("timestep {t}: initial-prior KL term")));
        }
        if let Some(t) = kl_t.as_ref().and_then(|r| first_bad_column(b, &b.transpose(r), max_lag)) {
            return Err(Error::NonFinite(format!("timestep {t}: continuous KL term")));
        }
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(SequenceElbo {
        loss,
        reconstruction,
        discrete_kl,
        continuous_kl,
        q: q_vals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::{Eval, ParamStore};

    #[test]
    fn column_logpdf_and_kl_match_closed_forms() {
        let store = ParamStore::new();
        let b = Eval::new(&store);
        let x = DMatrix::from_column_slice(2, 2, &[0.3, -1.0, 2.0, 0.5]);
        let mu = DMatrix::from_column_slice(2, 2, &[0.0, 0.5, 1.0, 0.5]);
        let sd = DMatrix::from_column_slice(2, 2, &[1.0, 2.0, 0.5, 0.1]);
        let lp = gauss_logpdf_cols(&b, &x, &mu, &sd);
        let kl = kl_gauss_cols(&b, &x, &sd, &mu, &sd.map(|s| 2.0 * s));
        for c in 0..2 {
            let want: f64 = (0..2)
                .map(|i| {
                    let z = (x[(i, c)] - mu[(i, c)]) / sd[(i, c)];
                    -0.5 * z * z - sd[(i, c)].ln() - 0.5 * LN_2PI
                })
                .sum();
            assert!((lp[c] - want).abs() < 1e-12);
            let want_kl: f64 = (0..2)
                .map(|i| {
                    let d = x[(i, c)] - mu[(i, c)];
                    let s2 = 2.0 * sd[(i, c)];
                    2f64.ln() + (sd[(i, c)].powi(2) + d * d) / (2.0 * s2 * s2) - 0.5
                })
                .sum();
            assert!((kl[c] - want_kl).abs() < 1e-12);
        }
    }
}
