//! Triangle meshes: loading, normals, area normalization, uniform surface
//! sampling, field transfer, and discrete curvature.

mod curvature;
mod io;
mod primitives;
mod sample;

pub use curvature::mean_curvature;
pub use io::{
    load_mesh, read_field_file, write_field_csv, write_field_text, write_obj, write_ply,
};
pub use primitives::{icosphere, unit_cube};
pub use sample::{
    read_sample_set, sample_uniform, transfer_field, transfer_scalar, write_sample_set,
    map_back_to_vertices, SamplePointSet,
};

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Face areas below this fraction of the squared perimeter are treated as
/// degenerate; the ratio is scale invariant.
const DEGENERATE_AREA_RATIO: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    normals: Vec<Vector3<f64>>,
    face_areas: Vec<f64>,
}

impl TriangleMesh {
    /// Validates faces, rejects degenerate ones, and computes face areas and
    /// angle-weighted vertex normals.
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let v = vertices.len();
        let mut degenerate = Vec::new();
        let mut face_areas = Vec::with_capacity(faces.len());
        for (fi, face) in faces.iter().enumerate() {
            for &i in face {
                if i >= v {
                    return Err(Error::Geometry(format!(
                        "face {fi} references vertex {i}, mesh has {v} vertices"
                    )));
                }
            }
            let [a, b, c] = *face;
            if a == b || b == c || a == c {
                degenerate.push(fi);
                face_areas.push(0.0);
                continue;
            }
            let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
            let area = 0.5 * (pb - pa).cross(&(pc - pa)).norm();
            let perimeter = (pb - pa).norm() + (pc - pb).norm() + (pa - pc).norm();
            if area <= DEGENERATE_AREA_RATIO * perimeter * perimeter {
                degenerate.push(fi);
            }
            face_areas.push(area);
        }
        if !degenerate.is_empty() {
            return Err(Error::DegenerateFaces(degenerate));
        }
        let normals = angle_weighted_normals(&vertices, &faces);
        Ok(TriangleMesh {
            vertices,
            faces,
            normals,
            face_areas,
        })
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn vertex_normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn total_area(&self) -> f64 {
        self.face_areas.iter().sum()
    }

    /// SHA-256 over vertices and faces in storage order, for tying derived
    /// files to the exact mesh they came from.
    pub fn content_hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update((self.vertices.len() as u64).to_le_bytes());
        for v in &self.vertices {
            for c in [v.x, v.y, v.z] {
                hasher.update(c.to_le_bytes());
            }
        }
        hasher.update((self.faces.len() as u64).to_le_bytes());
        for face in &self.faces {
            for &i in face {
                hasher.update((i as u64).to_le_bytes());
            }
        }
        hasher.finalize().into()
    }

    /// Area-weighted centroid of the surface (not of the vertex cloud).
    pub fn surface_centroid(&self) -> Vector3<f64> {
        let mut num = Vector3::zeros();
        let mut den = 0.0;
        for (face, &area) in self.faces.iter().zip(&self.face_areas) {
            let c = (self.vertices[face[0]] + self.vertices[face[1]] + self.vertices[face[2]])
                / 3.0;
            num += c * area;
            den += area;
        }
        num / den
    }
}

fn angle_weighted_normals(vertices: &[Vector3<f64>], faces: &[[usize; 3]]) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    for face in faces {
        let [a, b, c] = *face;
        let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
        let fnormal = (pb - pa).cross(&(pc - pa));
        let fnormal = match fnormal.try_normalize(0.0) {
            Some(n) => n,
            None => continue,
        };
        let corners = [(a, pb - pa, pc - pa), (b, pc - pb, pa - pb), (c, pa - pc, pb - pc)];
        for (idx, u, v) in corners {
            let cosang = (u.dot(&v) / (u.norm() * v.norm())).clamp(-1.0, 1.0);
            acc[idx] += fnormal * cosang.acos();
        }
    }
    acc.into_iter()
        .map(|n| n.try_normalize(0.0).unwrap_or_else(|| Vector3::z()))
        .collect()
}

/// Uniformly scale the mesh about its surface centroid to total area 1.
///
/// Returns the scaled mesh and the linear scale factor applied, for mapping
/// results back to original coordinates.
pub fn normalize_area(mesh: &TriangleMesh) -> Result<(TriangleMesh, f64)> {
    let area = mesh.total_area();
    if area <= 0.0 {
        return Err(Error::ZeroArea);
    }
    let scale = 1.0 / area.sqrt();
    let centroid = mesh.surface_centroid();
    let vertices: Vec<Vector3<f64>> = mesh
        .vertices
        .iter()
        .map(|&p| centroid + (p - centroid) * scale)
        .collect();
    let scaled = TriangleMesh::new(vertices, mesh.faces.clone())?;
    Ok((scaled, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn single_triangle_area_and_normal() {
        let mesh = TriangleMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_relative_eq!(mesh.total_area(), 0.5);
        for n in mesh.vertex_normals() {
            assert_relative_eq!((n - Vector3::z()).norm(), 0.0);
        }
    }

    #[test]
    fn cube_area_and_corner_normals() {
        let mesh = unit_cube();
        assert_eq!(mesh.vertex_count(), 8);
        assert_eq!(mesh.face_count(), 12);
        assert_abs_diff_eq!(mesh.total_area(), 6.0, epsilon = 1e-12);
        // Angle weighting gives each corner the symmetric diagonal normal
        // regardless of how the quads were triangulated.
        for (v, n) in mesh.vertices().iter().zip(mesh.vertex_normals()) {
            let diag = (v - Vector3::new(0.5, 0.5, 0.5)).normalize();
            assert_abs_diff_eq!((n - diag).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_faces_rejected() {
        let verts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
        ];
        match TriangleMesh::new(verts.clone(), vec![[0, 1, 2]]) {
            Err(Error::DegenerateFaces(faces)) => assert_eq!(faces, vec![0]),
            other => panic!("expected degenerate-face error, got {other:?}"),
        }
        match TriangleMesh::new(verts, vec![[0, 1, 1]]) {
            Err(Error::DegenerateFaces(faces)) => assert_eq!(faces, vec![0]),
            other => panic!("expected degenerate-face error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_index_rejected() {
        let verts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        assert!(TriangleMesh::new(verts, vec![[0, 1, 3]]).is_err());
    }

    #[test]
    fn normalize_area_cube() {
        let mesh = unit_cube();
        let (scaled, scale) = normalize_area(&mesh).unwrap();
        assert_relative_eq!(scale, 1.0 / 6.0f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(scaled.total_area(), 1.0, epsilon = 1e-12);
        // Centroid is preserved by scaling about it.
        assert_abs_diff_eq!(
            (scaled.surface_centroid() - mesh.surface_centroid()).norm(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn normalize_area_idempotent() {
        let mesh = icosphere(2, 2.0);
        let (once, _) = normalize_area(&mesh).unwrap();
        assert_abs_diff_eq!(once.total_area(), 1.0, epsilon = 1e-9);
        let (twice, scale2) = normalize_area(&once).unwrap();
        assert_relative_eq!(scale2, 1.0, epsilon = 1e-12);
        for (a, b) in once.vertices().iter().zip(twice.vertices()) {
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn icosphere_counts_and_radius() {
        let mesh = icosphere(4, 1.0);
        assert_eq!(mesh.face_count(), 5120);
        assert_eq!(mesh.vertex_count(), 2562);
        for v in mesh.vertices() {
            assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-12);
        }
        // Sphere area approached from below by the inscribed polyhedron.
        let sphere_area = 4.0 * std::f64::consts::PI;
        assert!(mesh.total_area() < sphere_area);
        assert!(mesh.total_area() > 0.99 * sphere_area);
        // Normals point radially outward.
        for (v, n) in mesh.vertices().iter().zip(mesh.vertex_normals()) {
            assert!(n.dot(&v.normalize()) > 0.999);
        }
    }
}
