//! Log-densities, KL divergences and reparameterized sampling for diagonal
//! Gaussians and categoricals.

use nalgebra::DMatrix;

use super::backend::Backend;
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

fn check_positive<B: Backend>(b: &B, sigma: &B::V, what: &str) -> Result<()> {
    let v = b.value(sigma);
    if let Some(bad) = v.iter().find(|s| s.is_nan() || **s <= 0.0) {
        return Err(Error::InvalidArgument(format!("{what}: standard deviation {bad} is not positive")));
    }
    Ok(())
}

/// `sum_i log N(x_i | mu_i, sigma_i^2)`.
pub fn gauss_logpdf<B: Backend>(b: &B, x: &B::V, mu: &B::V, sigma: &B::V) -> Result<B::V> {
    check_positive(b, sigma, "gauss_logpdf")?;
    let (n, _) = b.value(x).shape();
    let z = b.div(&b.sub(x, mu), sigma);
    let quad = b.scale(&b.sum(&b.square(&z)), -0.5);
    let logs = b.sum(&b.log(sigma));
    let c = b.constant_scalar(-0.5 * LN_2PI * n as f64);
    Ok(b.add(&b.sub(&quad, &logs), &c))
}

/// [`gauss_logpdf`] restricted to entries where `weights` is 1 (0 elsewhere).
///
/// `x` must be finite everywhere; callers zero-fill unobserved entries.
pub fn masked_gauss_logpdf<B: Backend>(
    b: &B,
    x: &B::V,
    mu: &B::V,
    sigma: &B::V,
    weights: &DMatrix<f64>,
) -> Result<B::V> {
    check_positive(b, sigma, "masked_gauss_logpdf")?;
    let observed: f64 = weights.sum();
    let w = b.constant(weights.clone());
    let z = b.div(&b.sub(x, mu), sigma);
    let quad = b.scale(&b.sum(&b.mul(&w, &b.square(&z))), -0.5);
    let logs = b.sum(&b.mul(&w, &b.log(sigma)));
    let c = b.constant_scalar(-0.5 * LN_2PI * observed);
    Ok(b.add(&b.sub(&quad, &logs), &c))
}

/// `KL(N(mu1, sigma1^2) || N(mu2, sigma2^2))` summed over dimensions.
pub fn kl_gauss<B: Backend>(b: &B, mu1: &B::V, s1: &B::V, mu2: &B::V, s2: &B::V) -> Result<B::V> {
    check_positive(b, s1, "kl_gauss")?;
    check_positive(b, s2, "kl_gauss")?;
    let n = b.value(mu1).len();
    let log_ratio = b.sub(&b.log(s2), &b.log(s1));
    let num = b.add(&b.square(s1), &b.square(&b.sub(mu1, mu2)));
    let frac = b.div(&num, &b.scale(&b.square(s2), 2.0));
    let total = b.sum(&b.add(&log_ratio, &frac));
    Ok(b.add(&total, &b.constant_scalar(-0.5 * n as f64)))
}

/// `KL(p || q)` from log-probability vectors.
pub fn kl_cat_log<B: Backend>(b: &B, log_p: &B::V, log_q: &B::V) -> B::V {
    b.sum(&b.mul(&b.exp(log_p), &b.sub(log_p, log_q)))
}

/// `KL(p || q)` for probability vectors on the simplex.
pub fn kl_cat(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("kl_cat: lengths {} and {}", p.len(), q.len())));
    }
    for v in [p, q] {
        let total: f64 = v.iter().sum();
        if v.iter().any(|x| *x < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("kl_cat: {v:?} is not on the simplex")));
        }
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.ln()))
        .sum())
}

/// `mu + sigma * eps`.
pub fn reparam_sample<B: Backend>(b: &B, mu: &B::V, sigma: &B::V, eps: &DMatrix<f64>) -> B::V {
    let e = b.constant(eps.clone());
    b.add(mu, &b.mul(sigma, &e))
}
