//! Equivariant weight and bias bases between representations, and a check
//! that projected weights commute with the group action.
//!
//! Run with `cargo run --example equivariant_basis`.

use std::sync::Arc;

use eqssm::diff::kernels::reshape;
use eqssm::equivariant::EquivariantBasis;
use eqssm::lie::{rep_from_signature, sample_group_element, MatrixGroup, RepSignature};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> eqssm::Result<()> {
    let so3 = Arc::new(MatrixGroup::so(3)?);
    let pairs = [("1x1", "1x1"), ("1x0", "1x0"), ("1x1", "1x0"), ("2x1", "2x1"), ("1x0,1x1", "1x1,1x2")];
    println!("{:<10} {:<10} {:>4} {:>4}", "in", "out", "r", "r_b");
    for (i, o) in pairs {
        let (si, so): (RepSignature, RepSignature) = (i.parse()?, o.parse()?);
        let b = EquivariantBasis::solve(&rep_from_signature(so3.clone(), &si), &rep_from_signature(so3.clone(), &so))?;
        println!("{i:<10} {o:<10} {:>4} {:>4}", b.rank(), b.bias_rank());
    }

    // project a random weight onto the equivariant subspace and test it
    let (si, so): (RepSignature, RepSignature) = ("1x0,1x1".parse()?, "1x1,1x2".parse()?);
    let (ri, ro) = (rep_from_signature(so3.clone(), &si), rep_from_signature(so3.clone(), &so));
    let b = EquivariantBasis::solve(&ri, &ro)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let v = DMatrix::from_fn(ro.size() * ri.size(), 1, |i, _| (i as f64 * 0.37).sin());
    let w = reshape(&b.project(&v)?, ro.size(), ri.size());
    let g = sample_group_element(&so3, &mut rng);
    let err = (ro.rho(&g)? * &w - &w * ri.rho(&g)?).norm();
    println!("|rho_out(g) W - W rho_in(g)| = {err:.2e}");

    // SO(2) has more freedom: rotations in the plane commute
    let so2 = Arc::new(MatrixGroup::so(2)?);
    let v1 = RepSignature::vectors(1);
    let b = EquivariantBasis::solve(&rep_from_signature(so2.clone(), &v1), &rep_from_signature(so2, &v1))?;
    println!("SO(2) vector -> vector: r = {}", b.rank());
    Ok(())
}
