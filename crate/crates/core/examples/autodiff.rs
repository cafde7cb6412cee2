//! Reverse-mode gradients on the graph backend, checked against finite
//! differences, then a few Adam steps on a least-squares fit.
//!
//! Run with `cargo run --example autodiff`.

use eqssm::diff::gradcheck::{central_difference, max_relative_error};
use eqssm::diff::{AdamConfig, Backend, Eval, Graph, ParamStore};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn loss<B: Backend>(b: &B, w: &B::V, x: &DMatrix<f64>, y: &DMatrix<f64>) -> B::V {
    let pred = b.tanh(&b.matmul(w, &b.constant(x.clone())));
    b.sum(&b.square(&b.sub(&pred, &b.constant(y.clone()))))
}

fn main() -> eqssm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = DMatrix::from_fn(3, 8, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let target = DMatrix::from_row_slice(2, 3, &[0.5, -0.3, 0.8, 0.1, 0.9, -0.6]);
    let y = (&target * &x).map(f64::tanh);

    let mut store = ParamStore::new();
    let w = store.add("w", DMatrix::from_element(2, 3, 0.1))?;

    let g = Graph::new(&store);
    let out = loss(&g, &g.param(w), &x, &y);
    let (_, grads) = g.backward(out)?;
    let fd = central_difference(store.get(w), 1e-6, |p| {
        let mut s = ParamStore::new();
        let id = s.add("w", p.clone()).unwrap();
        let e = Eval::new(&s);
        e.scalar(&loss(&e, &e.param(id), &x, &y))
    });
    println!("gradient vs finite differences: relative error {:.1e}", max_relative_error(&grads[0], &fd, 1e-8));

    let adam = AdamConfig::new(0.05);
    for step in 0..=600 {
        let g = Graph::new(&store);
        let out = loss(&g, &g.param(w), &x, &y);
        let value = g.scalar(&out);
        let (_, grads) = g.backward(out)?;
        store.adam_step(&grads, &adam)?;
        if step % 200 == 0 {
            println!("step {step:>3}: loss {value:.3e}");
        }
    }
    println!("fitted W = {}target W = {}", store.get(w), target);
    Ok(())
}
