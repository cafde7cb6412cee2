//! SO(3) generators, the exponential map and tensor representations.
//!
//! Run with `cargo run --example lie_groups`.

use std::sync::Arc;

use eqssm::lie::{expm, rep_from_signature, MatrixGroup, Representation};

fn main() -> eqssm::Result<()> {
    let group = Arc::new(MatrixGroup::so(3)?);
    println!("{} has {} generators", group.name(), group.dim());
    for (i, a) in group.generators().iter().enumerate() {
        println!("A{i} = {a}");
    }

    // rotation by pi/2 about z
    let g = group.exp_map(&[0.0, 0.0, std::f64::consts::FRAC_PI_2])?;
    group.check_element(&g)?;
    println!("exp(pi/2 A_z) = {g}");

    // rho(exp A) = exp(drho A) for a mixed signature
    let sig = "1x0,2x1,1x2".parse()?;
    let rep = rep_from_signature(group.clone(), &sig);
    let a = group.algebra_element(&[0.3, -1.1, 0.7])?;
    let lhs = rep.rho(&expm(&a))?;
    let rhs = expm(&rep.drho(&a)?);
    println!("signature {sig}: size {}, |rho(exp A) - exp(drho A)| = {:.2e}", rep.size(), (lhs - rhs).norm());

    // the dual of the base representation acts by the inverse transpose
    let base = Representation::base(group.clone());
    let dual = base.dual().rho(&g)?;
    let inv_t = g.clone().try_inverse().expect("rotation").transpose();
    println!("dual action matches g^-T: {:.2e}", (dual - inv_t).norm());
    Ok(())
}
