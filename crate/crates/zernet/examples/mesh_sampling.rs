//! Surface sampling and vertex transfer on a sphere: area-uniform points,
//! discrete mean curvature, and the round trip between vertex fields and
//! sample fields.
//!
//! Run with: cargo run --example mesh_sampling

use zernet::mesh::{
    icosphere, map_back_to_vertices, mean_curvature, normalize_area, sample_uniform,
    transfer_scalar,
};
use zernet::Result;

fn main() -> Result<()> {
    let (mesh, scale) = normalize_area(&icosphere(3, 1.0))?;
    println!(
        "icosphere: {} vertices, {} faces, scaled by {scale:.4} to total area {:.6}",
        mesh.vertex_count(),
        mesh.face_count(),
        mesh.total_area()
    );

    // A unit-area sphere has radius sqrt(1/4π), so its mean curvature is the
    // constant sqrt(4π) ≈ 3.5449 everywhere; the discrete operator should sit
    // close to that with little spread.
    let curvature = mean_curvature(&mesh);
    let mean = curvature.iter().sum::<f64>() / curvature.len() as f64;
    let var = curvature.iter().map(|k| (k - mean).powi(2)).sum::<f64>() / curvature.len() as f64;
    println!(
        "mean curvature: mean {mean:.4} (continuum {:.4}), spread {:.2}%",
        (4.0 * std::f64::consts::PI).sqrt(),
        100.0 * var.sqrt() / mean
    );

    let points = sample_uniform(&mesh, 4000, 7)?;
    println!("sampled {} area-uniform surface points", points.len());

    // Octant occupancy is a quick isotropy check; each should hold about 1/8
    // of the points.
    let mut octants = [0usize; 8];
    for p in &points.positions {
        let idx = usize::from(p.x > 0.0) | usize::from(p.y > 0.0) << 1 | usize::from(p.z > 0.0) << 2;
        octants[idx] += 1;
    }
    let lo = octants.iter().min().unwrap();
    let hi = octants.iter().max().unwrap();
    println!("octant occupancy: min {lo}, max {hi} (uniform would be {})", points.len() / 8);

    // Vertex -> sample -> vertex round trip of a smooth field.
    let field: Vec<f64> = mesh.vertices().iter().map(|v| v.x * v.x - v.y * v.z).collect();
    let at_samples = transfer_scalar(&mesh, &field, &points)?;
    let back = map_back_to_vertices(&points, &at_samples, &mesh)?;
    let mut err = 0.0f64;
    let spread = field.iter().cloned().fold(f64::MIN, f64::max)
        - field.iter().cloned().fold(f64::MAX, f64::min);
    for (a, b) in field.iter().zip(&back) {
        err = err.max((a - b).abs());
    }
    println!(
        "vertex field round trip: max error {err:.3e} ({:.2}% of field range)",
        100.0 * err / spread
    );
    Ok(())
}
