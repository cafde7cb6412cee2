//! A small equivariant network (linear, gated nonlinearity, linear) and an
//! invariant head, checked against random rotations; the ablation variant
//! for contrast.
//!
//! Run with `cargo run --example equivariant_network`.

use std::sync::Arc;

use eqssm::diff::ParamStore;
use eqssm::equivariant::{build_network, BasisCache, LayerSpec, NetworkSpec, Variant};
use eqssm::lie::{rep_from_signature, sample_group_element, MatrixGroup, RepSignature};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> eqssm::Result<()> {
    let group = Arc::new(MatrixGroup::so(3)?);
    let cache = BasisCache::new(group.clone());
    let input = RepSignature::vectors(2);
    let hidden: RepSignature = "2x0,2x1,1x2".parse()?;
    let spec = NetworkSpec {
        name: "demo".into(),
        input: input.clone(),
        branches: 1,
        trunk: vec![
            LayerSpec::Linear { input: input.clone(), output: hidden.clone() },
            LayerSpec::Gate,
        ],
        heads: vec![
            vec![LayerSpec::Linear { input: hidden.clone(), output: RepSignature::vectors(1) }],
            vec![LayerSpec::InvariantHead { input: hidden.clone(), outputs: 2 }, LayerSpec::Softmax],
        ],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rep_in = rep_from_signature(group.clone(), &input);
    let x = DMatrix::from_fn(6, 1, |i, _| (i as f64 + 1.0).ln() - 1.0);

    for variant in [Variant::Equivariant, Variant::Ablation] {
        let mut store = ParamStore::new();
        let net = build_network(&spec, variant, &cache, &mut store, &mut rng)?;
        let mut worst_eq: f64 = 0.0;
        let mut worst_inv: f64 = 0.0;
        for _ in 0..20 {
            let g = sample_group_element(&group, &mut rng);
            let plain = net.eval(&store, std::slice::from_ref(&x))?;
            let rotated = net.eval(&store, &[rep_in.rho(&g)? * &x])?;
            worst_eq = worst_eq.max((&rotated[0] - &g * &plain[0]).amax());
            worst_inv = worst_inv.max((&rotated[1] - &plain[1]).amax());
        }
        println!(
            "{:<12} {:>4} parameters  vector head error {worst_eq:.1e}  invariant head error {worst_inv:.1e}",
            variant.to_string(),
            net.num_parameters(&store)
        );
    }
    Ok(())
}
