//! Central finite differences, used to validate reverse-mode gradients.

use nalgebra::DMatrix;

/// Central-difference gradient of `f` with respect to every entry of `x`.
pub fn central_difference<F>(x: &DMatrix<f64>, h: f64, mut f: F) -> DMatrix<f64>
where
    F: FnMut(&DMatrix<f64>) -> f64,
{
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe[k];
        probe[k] = orig + h;
        let up = f(&probe);
        probe[k] = orig - h;
        let down = f(&probe);
        probe[k] = orig;
        g[k] = (up - down) / (2.0 * h);
    }
    g
}

/// Five-point stencil, error `O(h^4)`. A step near `1e-3` keeps both the
/// truncation error and the roundoff on large losses well below `1e-8`.
pub fn five_point_difference<F>(x: &DMatrix<f64>, h: f64, mut f: F) -> DMatrix<f64>
where
    F: FnMut(&DMatrix<f64>) -> f64,
{
    let mut g = DMatrix::zeros(x.nrows(), x.ncols());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe[k];
        let mut at = |d: f64| {
            probe[k] = orig + d;
            f(&probe)
        };
        let (p2, p1, m1, m2) = (at(2.0 * h), at(h), at(-h), at(-2.0 * h));
        probe[k] = orig;
        g[k] = (-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h);
    }
    g
}

/// Largest entrywise relative error `|a - b| / max(|a|, |b|, floor)`.
///
/// `floor` keeps entries whose true gradient is essentially zero from
/// dividing finite-difference roundoff by zero.
pub fn max_relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::diff::{Backend, Graph, ParamStore};
    use crate::lie::RepSignature;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type Op = fn(&Graph, &[crate::diff::Var]) -> crate::diff::Var;

    fn check(name: &str, shapes: &[(usize, usize)], positive: bool, op: Op) {
        let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 31 + 7);
        for _probe in 0..20 {
            let inputs: Vec<DMatrix<f64>> = shapes
                .iter()
                .map(|&(r, c)| {
                    DMatrix::from_fn(r, c, |_, _| {
                        let v: f64 = rng.random_range(-1.5..1.5);
                        if positive { v.abs() + 0.2 } else { v }
                    })
                })
                .collect();
            // random cotangent turns any output into a scalar
            let store = ParamStore::new();
            let g0 = Graph::new(&store);
            let vars: Vec<_> = inputs.iter().map(|m| g0.leaf(m.clone())).collect();
            let (r, c) = g0.tape().shape(op(&g0, &vars));
            let w = DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));

            let eval = |xs: &[DMatrix<f64>]| {
                let g = Graph::new(&store);
                let vs: Vec<_> = xs.iter().map(|m| g.leaf(m.clone())).collect();
                let y = op(&g, &vs);
                g.value(&y).component_mul(&w).sum()
            };
            let g = Graph::new(&store);
            let vs: Vec<_> = inputs.iter().map(|m| g.leaf(m.clone())).collect();
            let y = op(&g, &vs);
            let wy = g.sum(&g.mul(&y, &g.constant(w.clone())));
            let (grads, _) = g.backward(wy).unwrap();
            for (k, v) in vs.iter().enumerate() {
                let fd = central_difference(&inputs[k], 1e-5, |p| {
                    let mut xs = inputs.clone();
                    xs[k] = p.clone();
                    eval(&xs)
                });
                let err = max_relative_error(&grads.wrt(*v), &fd, 1e-6);
                assert!(err < 1e-4, "{name}: input {k} relative error {err:e}");
            }
        }
    }

    #[test]
    fn every_op_matches_finite_differences() {
        check("add", &[(3, 1), (3, 1)], false, |g, v| g.add(&v[0], &v[1]));
        check("sub", &[(3, 1), (3, 1)], false, |g, v| g.sub(&v[0], &v[1]));
        check("mul", &[(3, 2), (3, 2)], false, |g, v| g.mul(&v[0], &v[1]));
        check("div", &[(3, 1), (3, 1)], true, |g, v| g.div(&v[0], &v[1]));
        check("scale", &[(2, 2)], false, |g, v| g.scale(&v[0], -1.7));
        check("scalar_mul", &[(1, 1), (4, 1)], false, |g, v| g.scalar_mul(&v[0], &v[1]));
        check("matmul", &[(3, 4), (4, 2)], false, |g, v| g.matmul(&v[0], &v[1]));
        check("exp", &[(3, 1)], false, |g, v| g.exp(&v[0]));
        check("log", &[(3, 1)], true, |g, v| g.log(&v[0]));
        check("tanh", &[(3, 1)], false, |g, v| g.tanh(&v[0]));
        check("sigmoid", &[(3, 1)], false, |g, v| g.sigmoid(&v[0]));
        check("softplus", &[(3, 1)], false, |g, v| g.softplus(&v[0]));
        check("square", &[(3, 1)], false, |g, v| g.square(&v[0]));
        check("sum", &[(3, 2)], false, |g, v| g.sum(&v[0]));
        check("softmax", &[(4, 3)], false, |g, v| g.softmax(&v[0]));
        check("log_softmax", &[(4, 3)], false, |g, v| g.log_softmax(&v[0]));
        check("logsumexp", &[(4, 2)], false, |g, v| g.logsumexp(&v[0]));
        check("concat", &[(2, 1), (3, 1)], false, |g, v| g.concat(&[v[0], v[1], v[0]]));
        check("slice", &[(5, 1)], false, |g, v| g.slice(&v[0], 1, 3));
        check("reshape", &[(6, 1)], false, |g, v| g.reshape(&v[0], 2, 3));
        check("transpose", &[(2, 3)], false, |g, v| g.tape().transpose(v[0]));
        check("add_col", &[(3, 4), (3, 1)], false, |g, v| g.add_col(&v[0], &v[1]));
        check("invariant_features", &[(16, 3)], false, |g, v| {
            let sig = RepSignature::new(&[(1, 0), (2, 1), (1, 2)]);
            let blocks: Arc<[_]> = sig.blocks(3).into();
            g.invariant_features(&v[0], &blocks)
        });
        check("gate", &[(16, 2), (3, 2)], false, |g, v| {
            let sig = RepSignature::new(&[(1, 0), (2, 1), (1, 2)]);
            let blocks: Arc<[_]> = sig.blocks(3).into();
            g.gate(&v[0], &v[1], &blocks)
        });
    }

    #[test]
    fn distributions_match_finite_differences() {
        use crate::diff::dist;
        check("gauss_logpdf", &[(3, 1), (3, 1), (3, 1)], true, |g, v| {
            dist::gauss_logpdf(g, &v[0], &v[1], &v[2]).unwrap()
        });
        check("kl_gauss", &[(3, 1), (3, 1), (3, 1), (3, 1)], true, |g, v| {
            dist::kl_gauss(g, &v[0], &v[1], &v[2], &v[3]).unwrap()
        });
        check("kl_cat_log", &[(3, 1), (3, 1)], false, |g, v| {
            let lp = g.log_softmax(&v[0]);
            let lq = g.log_softmax(&v[1]);
            dist::kl_cat_log(g, &lp, &lq)
        });
    }

    #[test]
    fn relative_error_floor() {
        let a = DMatrix::from_element(1, 1, 1e-12);
        let b = DMatrix::from_element(1, 1, 2e-12);
        assert!(max_relative_error(&a, &b, 1e-6) < 1e-5);
        assert!(max_relative_error(&a, &b, 0.0) > 0.4);
    }
}
