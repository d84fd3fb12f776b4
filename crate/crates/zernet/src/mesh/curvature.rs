//! Discrete mean curvature from the cotangent Laplacian.

use nalgebra::Vector3;

use super::TriangleMesh;

/// Per-vertex mean curvature magnitude.
///
/// `κ_i = ‖Σ_j (cot α_ij + cot β_ij)(x_j − x_i)‖ / (4 A_i)` with `A_i` the
/// barycentric one-ring area (one third of each incident face). On a sphere
/// of radius ρ this converges to 1/ρ.
pub fn mean_curvature(mesh: &TriangleMesh) -> Vec<f64> {
    let v = mesh.vertex_count();
    let mut laplacian = vec![Vector3::zeros(); v];
    let mut ring_area = vec![0.0f64; v];
    let verts = mesh.vertices();

    for (face, &area) in mesh.faces().iter().zip(mesh.face_areas()) {
        let [a, b, c] = *face;
        let third = area / 3.0;
        ring_area[a] += third;
        ring_area[b] += third;
        ring_area[c] += third;
        // Each corner's cotangent weights the opposite edge.
        for (apex, u, w) in [(a, b, c), (b, c, a), (c, a, b)] {
            let e1 = verts[u] - verts[apex];
            let e2 = verts[w] - verts[apex];
            let cross = e1.cross(&e2).norm();
            if cross <= 0.0 {
                continue;
            }
            let cot = e1.dot(&e2) / cross;
            let edge = verts[w] - verts[u];
            laplacian[u] += edge * cot;
            laplacian[w] -= edge * cot;
        }
    }

    laplacian
        .iter()
        .zip(&ring_area)
        .map(|(l, &a)| if a > 0.0 { l.norm() / (4.0 * a) } else { 0.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    fn mean_and_cov(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt() / mean)
    }

    #[test]
    fn unit_sphere_curvature_is_one() {
        let mesh = icosphere(4, 1.0);
        let k = mean_curvature(&mesh);
        let (mean, cov) = mean_and_cov(&k);
        assert!((mean - 1.0).abs() < 0.02, "mean curvature {mean}");
        assert!(cov < 0.05, "coefficient of variation {cov}");
    }

    #[test]
    fn curvature_scales_inversely_with_radius() {
        let mesh = icosphere(3, 2.0);
        let k = mean_curvature(&mesh);
        let (mean, cov) = mean_and_cov(&k);
        assert!((mean - 0.5).abs() < 0.02, "mean curvature {mean}");
        assert!(cov < 0.05, "coefficient of variation {cov}");
    }
}
