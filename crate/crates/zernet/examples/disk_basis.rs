//! Zernike basics on the unit disk: enumerate the basis, verify
//! orthonormality by quadrature, and round-trip a function through a
//! least-squares coefficient fit.
//!
//! Run with: cargo run --example disk_basis

use zernet::quadrature::DiskQuadrature;
use zernet::zernike::{
    fit_coefficients, reconstruct, DiskPoint, ZernikeBasisSet,
};
use zernet::Result;

fn main() -> Result<()> {
    let basis = ZernikeBasisSet::new(5)?;
    println!("basis up to order 5: {} functions", basis.len());
    for (j, idx) in basis.indices().iter().enumerate() {
        print!("  Z{j:<2} (n={}, m={:+})", idx.n(), idx.m());
        if (j + 1) % 3 == 0 {
            println!();
        }
    }
    println!();

    // Gram matrix under the disk measure r dr dtheta; orthonormal means
    // identity up to quadrature roundoff.
    let quad = DiskQuadrature::oracle();
    let mut worst = 0.0f64;
    for j in 0..basis.len() {
        for k in j..basis.len() {
            let g = quad.integrate(|r, theta| {
                let p = DiskPoint::new(r, theta).unwrap();
                basis.eval(j, p) * basis.eval(k, p)
            });
            let target = if j == k { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
    }
    println!("max Gram deviation from identity: {worst:.3e}");

    // A function with energy in several modes, sampled on a scattered grid.
    let f = |r: f64, theta: f64| {
        0.7 + 1.3 * r * (theta).cos() - 0.4 * r * r * (2.0 * theta).sin()
            + 0.2 * (2.0 * r * r - 1.0)
    };
    let mut points = Vec::new();
    let mut values = Vec::new();
    for i in 0..40 {
        for k in 0..12 {
            let r = (i as f64 + 0.5) / 40.0;
            let theta = 2.0 * std::f64::consts::PI * k as f64 / 12.0 + 0.05 * i as f64;
            points.push(DiskPoint::new(r, theta)?);
            values.push(f(r, theta));
        }
    }
    let fit = fit_coefficients(&basis, &points, &values)?;
    println!(
        "fit over {} samples: rank {}, {} coefficients",
        points.len(),
        fit.rank,
        fit.coefficients.len()
    );

    let mut err = 0.0f64;
    for i in 0..200 {
        let r = (i as f64 + 0.3) / 200.0;
        let theta = 2.6 * i as f64;
        let p = DiskPoint::new(r, theta % (2.0 * std::f64::consts::PI))?;
        err = err.max((reconstruct(&basis, &fit.coefficients, p)? - f(p.r(), p.theta())).abs());
    }
    println!("max reconstruction error on held-out points: {err:.3e}");
    Ok(())
}
