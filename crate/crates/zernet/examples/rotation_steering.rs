//! Rotating a function on the disk without resampling it: the coefficient
//! rotation matrix steers any expansion analytically, and rotations compose
//! exactly.
//!
//! Run with: cargo run --example rotation_steering

use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;
use zernet::zernike::{
    reconstruct, rotate_coefficients_in_place, rotation_matrix, CoefficientVector, DiskPoint,
    ZernikeBasisSet,
};
use zernet::Result;

fn main() -> Result<()> {
    let basis = ZernikeBasisSet::new(5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let coeffs: Vec<f64> = (0..basis.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a = CoefficientVector::new(coeffs.clone());

    // Steering identity: rotating the coefficients then evaluating at (r, θ)
    // matches evaluating the original expansion at (r, θ + Δθ).
    let dtheta = 0.73;
    let mut steered = coeffs.clone();
    rotate_coefficients_in_place(&basis, dtheta, &mut steered);
    let steered = CoefficientVector::new(steered);

    let mut worst = 0.0f64;
    for _ in 0..200 {
        let r = rng.gen_range(0.0..1.0);
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let at_rotated = reconstruct(
            &basis,
            &a,
            DiskPoint::new(r, (theta + dtheta) % std::f64::consts::TAU)?,
        )?;
        let from_steered = reconstruct(&basis, &steered, DiskPoint::new(r, theta)?)?;
        worst = worst.max((at_rotated - from_steered).abs());
    }
    println!("steering vs direct evaluation, 200 random points: max |diff| = {worst:.3e}");

    // Group law: R(α)·R(β) = R(α + β).
    let alpha = 1.1;
    let beta = -0.4;
    let composed = rotation_matrix(&basis, alpha) * rotation_matrix(&basis, beta);
    let direct = rotation_matrix(&basis, alpha + beta);
    let gap = (&composed - &direct).abs().max();
    println!("R({alpha})R({beta}) vs R({:.2}): max entry gap = {gap:.3e}", alpha + beta);

    // A full turn is the identity.
    let full = rotation_matrix(&basis, std::f64::consts::TAU);
    let mut id_gap = 0.0f64;
    for j in 0..basis.len() {
        for k in 0..basis.len() {
            let target = if j == k { 1.0 } else { 0.0 };
            id_gap = id_gap.max((full[(j, k)] - target).abs());
        }
    }
    println!("R(2π) vs identity: max entry gap = {id_gap:.3e}");
    Ok(())
}
