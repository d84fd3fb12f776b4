//! Uniform surface sampling, barycentric field transfer, and nearest-sample
//! map-back to mesh vertices.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Vector3;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TriangleMesh;
use crate::error::{Error, Result};
use crate::spatial::GridIndex;

/// Points sampled on a mesh surface, with their barycentric attachments and
/// interpolated normals. Named per-point fields ride along in `fields`.
#[derive(Debug, Clone)]
pub struct SamplePointSet {
    pub positions: Vec<Vector3<f64>>,
    pub face_indices: Vec<usize>,
    pub barycentric: Vec<[f64; 3]>,
    pub normals: Vec<Vector3<f64>>,
    pub fields: BTreeMap<String, Array2<f64>>,
}

impl SamplePointSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Point set without mesh attachments, for synthetic point clouds in
    /// tests and tools. Face indices and weights are filled with zeros.
    pub fn from_positions_normals(
        positions: Vec<Vector3<f64>>,
        normals: Vec<Vector3<f64>>,
    ) -> Result<Self> {
        if positions.len() != normals.len() {
            return Err(Error::LengthMismatch {
                expected: positions.len(),
                got: normals.len(),
                context: "normals per position".into(),
            });
        }
        let n = positions.len();
        Ok(SamplePointSet {
            positions,
            face_indices: vec![0; n],
            barycentric: vec![[1.0, 0.0, 0.0]; n],
            normals,
            fields: BTreeMap::new(),
        })
    }

    /// SHA-256 over the geometric content in storage order, for keying
    /// derived caches to the exact point set they were built from.
    pub fn content_hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update((self.positions.len() as u64).to_le_bytes());
        for p in &self.positions {
            for c in [p.x, p.y, p.z] {
                hasher.update(c.to_le_bytes());
            }
        }
        for &f in &self.face_indices {
            hasher.update((f as u64).to_le_bytes());
        }
        for b in &self.barycentric {
            for c in b {
                hasher.update(c.to_le_bytes());
            }
        }
        for n in &self.normals {
            for c in [n.x, n.y, n.z] {
                hasher.update(c.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}

/// Draw `count` points uniformly over the surface area.
///
/// Face choice is cumulative-area inverse-transform sampling; the position
/// within a face uses the square-root trick so the density stays uniform.
/// The generator is counter-based, so one seed gives one point stream on
/// every platform.
pub fn sample_uniform(mesh: &TriangleMesh, count: usize, rng_seed: u64) -> Result<SamplePointSet> {
    if count == 0 {
        return Err(Error::Usage("sample count must be at least 1".into()));
    }
    let total: f64 = mesh.total_area();
    if total <= 0.0 {
        return Err(Error::ZeroArea);
    }
    let mut cumulative = Vec::with_capacity(mesh.face_count());
    let mut acc = 0.0;
    for &a in mesh.face_areas() {
        acc += a;
        cumulative.push(acc);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut positions = Vec::with_capacity(count);
    let mut face_indices = Vec::with_capacity(count);
    let mut barycentric = Vec::with_capacity(count);
    let mut normals = Vec::with_capacity(count);
    for _ in 0..count {
        let u: f64 = rng.gen::<f64>() * total;
        let fi = cumulative.partition_point(|&c| c < u).min(mesh.face_count() - 1);
        let r1: f64 = rng.gen();
        let r2: f64 = rng.gen();
        let s = r1.sqrt();
        let w = [1.0 - s, s * (1.0 - r2), s * r2];
        let face = mesh.faces()[fi];
        let p = mesh.vertices()[face[0]] * w[0]
            + mesh.vertices()[face[1]] * w[1]
            + mesh.vertices()[face[2]] * w[2];
        let vn = mesh.vertex_normals();
        let n = (vn[face[0]] * w[0] + vn[face[1]] * w[1] + vn[face[2]] * w[2])
            .try_normalize(0.0)
            .unwrap_or_else(Vector3::z);
        positions.push(p);
        face_indices.push(fi);
        barycentric.push(w);
        normals.push(n);
    }
    Ok(SamplePointSet {
        positions,
        face_indices,
        barycentric,
        normals,
        fields: BTreeMap::new(),
    })
}

/// Interpolate per-vertex columns to the sample points through their
/// barycentric weights.
pub fn transfer_field(
    mesh: &TriangleMesh,
    vertex_values: &Array2<f64>,
    points: &SamplePointSet,
) -> Result<Array2<f64>> {
    if vertex_values.nrows() != mesh.vertex_count() {
        return Err(Error::LengthMismatch {
            expected: mesh.vertex_count(),
            got: vertex_values.nrows(),
            context: "vertex field rows".into(),
        });
    }
    let channels = vertex_values.ncols();
    let mut out = Array2::zeros((points.len(), channels));
    for (s, (&fi, w)) in points
        .face_indices
        .iter()
        .zip(&points.barycentric)
        .enumerate()
    {
        let face = mesh.faces()[fi];
        for c in 0..channels {
            out[(s, c)] = w[0] * vertex_values[(face[0], c)]
                + w[1] * vertex_values[(face[1], c)]
                + w[2] * vertex_values[(face[2], c)];
        }
    }
    Ok(out)
}

/// Single-channel convenience over `transfer_field`.
pub fn transfer_scalar(
    mesh: &TriangleMesh,
    vertex_values: &[f64],
    points: &SamplePointSet,
) -> Result<Vec<f64>> {
    let col = Array2::from_shape_vec((vertex_values.len(), 1), vertex_values.to_vec())
        .expect("column shape");
    Ok(transfer_field(mesh, &col, points)?.column(0).to_vec())
}

/// Assign each mesh vertex the value of its Euclidean-nearest sample point.
pub fn map_back_to_vertices(
    points: &SamplePointSet,
    values: &[f64],
    mesh: &TriangleMesh,
) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if values.len() != points.len() {
        return Err(Error::LengthMismatch {
            expected: points.len(),
            got: values.len(),
            context: "values per sample point".into(),
        });
    }
    let index = GridIndex::build(&points.positions);
    Ok(mesh
        .vertices()
        .iter()
        .map(|v| values[index.nearest(v)])
        .collect())
}

const SAMPLE_MAGIC: &[u8; 8] = b"ZNSAMPLE";
const SAMPLE_VERSION: u32 = 1;

/// Write a sample set with the content hash of the mesh it was drawn from.
pub fn write_sample_set(path: &Path, points: &SamplePointSet, mesh_hash: &[u8; 32]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(SAMPLE_MAGIC)?;
        w.write_u32::<LittleEndian>(SAMPLE_VERSION)?;
        w.write_u64::<LittleEndian>(points.len() as u64)?;
        w.write_all(mesh_hash)?;
        for p in &points.positions {
            for c in 0..3 {
                w.write_f64::<LittleEndian>(p[c])?;
            }
        }
        for &f in &points.face_indices {
            w.write_u64::<LittleEndian>(f as u64)?;
        }
        for b in &points.barycentric {
            for &c in b {
                w.write_f64::<LittleEndian>(c)?;
            }
        }
        for n in &points.normals {
            for c in 0..3 {
                w.write_f64::<LittleEndian>(n[c])?;
            }
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// Read a sample set and the stored mesh hash.
pub fn read_sample_set(path: &Path) -> Result<(SamplePointSet, [u8; 32])> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let fail = |message: &str| Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    };

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != SAMPLE_MAGIC {
        return Err(fail("not a sample-set file (bad magic)"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|e| Error::io(path, e))?;
    if version != SAMPLE_VERSION {
        return Err(fail(&format!("unsupported sample-set version {version}")));
    }
    let count = r.read_u64::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize;
    let mut mesh_hash = [0u8; 32];
    r.read_exact(&mut mesh_hash).map_err(|e| Error::io(path, e))?;

    let read_vec3s = |r: &mut BufReader<File>| -> Result<Vec<Vector3<f64>>> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let x = r.read_f64::<LittleEndian>().map_err(|e| Error::io(path, e))?;
            let y = r.read_f64::<LittleEndian>().map_err(|e| Error::io(path, e))?;
            let z = r.read_f64::<LittleEndian>().map_err(|e| Error::io(path, e))?;
            out.push(Vector3::new(x, y, z));
        }
        Ok(out)
    };

    let positions = read_vec3s(&mut r)?;
    let mut face_indices = Vec::with_capacity(count);
    for _ in 0..count {
        face_indices.push(r.read_u64::<LittleEndian>().map_err(|e| Error::io(path, e))? as usize);
    }
    let mut barycentric = Vec::with_capacity(count);
    for _ in 0..count {
        let mut b = [0.0; 3];
        for c in &mut b {
            *c = r.read_f64::<LittleEndian>().map_err(|e| Error::io(path, e))?;
        }
        barycentric.push(b);
    }
    let normals = read_vec3s(&mut r)?;

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::io(path, e))? != 0 {
        return Err(fail("trailing bytes after sample payload"));
    }
    Ok((
        SamplePointSet {
            positions,
            face_indices,
            barycentric,
            normals,
            fields: BTreeMap::new(),
        },
        mesh_hash,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{icosphere, unit_cube};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use tempfile::TempDir;

    #[test]
    fn samples_lie_on_their_faces() {
        let mesh = icosphere(2, 1.0);
        let points = sample_uniform(&mesh, 500, 7).unwrap();
        assert_eq!(points.len(), 500);
        for s in 0..points.len() {
            let w = points.barycentric[s];
            assert_relative_eq!(w[0] + w[1] + w[2], 1.0, epsilon = 1e-12);
            assert!(w.iter().all(|&wi| wi >= 0.0));
            let face = mesh.faces()[points.face_indices[s]];
            let rebuilt = mesh.vertices()[face[0]] * w[0]
                + mesh.vertices()[face[1]] * w[1]
                + mesh.vertices()[face[2]] * w[2];
            assert!((rebuilt - points.positions[s]).norm() < 1e-9);
            assert_relative_eq!(points.normals[s].norm(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let mesh = unit_cube();
        let a = sample_uniform(&mesh, 200, 42).unwrap();
        let b = sample_uniform(&mesh, 200, 42).unwrap();
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.face_indices, b.face_indices);
        let c = sample_uniform(&mesh, 200, 43).unwrap();
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn single_sample_and_zero_count() {
        let mesh = unit_cube();
        let one = sample_uniform(&mesh, 1, 0).unwrap();
        assert_eq!(one.len(), 1);
        assert!(sample_uniform(&mesh, 0, 0).is_err());
    }

    #[test]
    fn sampling_density_matches_face_areas() {
        // Chi-square goodness of fit over the cube's 12 equal-area faces,
        // critical value for 11 degrees of freedom at alpha = 0.01. Seeds are
        // fixed, so this is deterministic once verified.
        let mesh = unit_cube();
        let count = 2400;
        let expected = count as f64 / 12.0;
        for seed in 0..10u64 {
            let points = sample_uniform(&mesh, count, seed).unwrap();
            let mut hits = [0usize; 12];
            for &fi in &points.face_indices {
                hits[fi] += 1;
            }
            let chi2: f64 = hits
                .iter()
                .map(|&h| {
                    let d = h as f64 - expected;
                    d * d / expected
                })
                .sum();
            assert!(chi2 < 24.725, "seed {seed}: chi2 = {chi2:.2}");
        }
    }

    #[test]
    fn transfer_preserves_constant_and_linear_fields() {
        let mesh = icosphere(2, 1.5);
        let points = sample_uniform(&mesh, 300, 3).unwrap();

        let constant = vec![2.5; mesh.vertex_count()];
        let out = transfer_scalar(&mesh, &constant, &points).unwrap();
        for v in out {
            assert_relative_eq!(v, 2.5, epsilon = 1e-12);
        }

        let xs: Vec<f64> = mesh.vertices().iter().map(|v| v.x).collect();
        let out = transfer_scalar(&mesh, &xs, &points).unwrap();
        for (s, v) in out.iter().enumerate() {
            assert_abs_diff_eq!(*v, points.positions[s].x, epsilon = 1e-9);
        }
    }

    #[test]
    fn transfer_respects_vertex_value_bounds() {
        let mesh = icosphere(1, 1.0);
        let points = sample_uniform(&mesh, 400, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let field: Vec<f64> = (0..mesh.vertex_count())
            .map(|_| rng.gen_range(-3.0..3.0))
            .collect();
        let lo = field.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out = transfer_scalar(&mesh, &field, &points).unwrap();
        for v in out {
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }

    #[test]
    fn transfer_length_mismatch() {
        let mesh = unit_cube();
        let points = sample_uniform(&mesh, 10, 0).unwrap();
        assert!(transfer_scalar(&mesh, &[1.0; 5], &points).is_err());
    }

    #[test]
    fn map_back_single_sample_broadcasts() {
        let mesh = unit_cube();
        let points = sample_uniform(&mesh, 1, 0).unwrap();
        let out = map_back_to_vertices(&points, &[7.5], &mesh).unwrap();
        assert_eq!(out, vec![7.5; 8]);
    }

    #[test]
    fn map_back_identity_when_samples_sit_on_vertices() {
        let mesh = unit_cube();
        let positions = mesh.vertices().to_vec();
        let normals = mesh.vertex_normals().to_vec();
        let points = SamplePointSet::from_positions_normals(positions, normals).unwrap();
        let values: Vec<f64> = (0..8).map(|i| i as f64 * 10.0).collect();
        let out = map_back_to_vertices(&points, &values, &mesh).unwrap();
        assert_eq!(out, values);
    }

    #[test]
    fn map_back_tie_breaks_to_lowest_index() {
        let mesh = TriangleMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(2.0, 0.0, 0.0),
                Vector3::new(0.0, 2.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        // Two samples equidistant from every vertex listed high-value first.
        let points = SamplePointSet::from_positions_normals(
            vec![Vector3::new(1.0, 1.0, 1.0), Vector3::new(1.0, 1.0, -1.0)],
            vec![Vector3::z(), Vector3::z()],
        )
        .unwrap();
        let out = map_back_to_vertices(&points, &[1.0, 2.0], &mesh).unwrap();
        assert_eq!(out, vec![1.0; 3]);
    }

    #[test]
    fn map_back_matches_brute_force() {
        let mesh = icosphere(3, 1.0);
        let points = sample_uniform(&mesh, 700, 11).unwrap();
        let values: Vec<f64> = (0..points.len()).map(|i| i as f64).collect();
        let fast = map_back_to_vertices(&points, &values, &mesh).unwrap();
        for (v, got) in mesh.vertices().iter().zip(&fast) {
            let mut best = (f64::INFINITY, usize::MAX);
            for (i, p) in points.positions.iter().enumerate() {
                let d2 = (p - v).norm_squared();
                if d2 < best.0 {
                    best = (d2, i);
                }
            }
            assert_eq!(*got, values[best.1]);
        }
    }

    #[test]
    fn map_back_empty_point_set_errors() {
        let mesh = unit_cube();
        let points = SamplePointSet::from_positions_normals(vec![], vec![]).unwrap();
        assert!(matches!(
            map_back_to_vertices(&points, &[], &mesh),
            Err(Error::EmptyPointSet)
        ));
    }

    #[test]
    fn sample_set_file_roundtrip() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("samples.bin");
        let mesh = icosphere(1, 1.0);
        let points = sample_uniform(&mesh, 64, 13).unwrap();
        let hash = [7u8; 32];
        write_sample_set(&path, &points, &hash).unwrap();
        let (back, stored_hash) = read_sample_set(&path).unwrap();
        assert_eq!(stored_hash, hash);
        assert_eq!(back.positions, points.positions);
        assert_eq!(back.face_indices, points.face_indices);
        assert_eq!(back.barycentric, points.barycentric);
        assert_eq!(back.normals, points.normals);

        // Rewrite is byte-identical.
        let path2 = dir.path().join("samples2.bin");
        write_sample_set(&path2, &back, &stored_hash).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn sample_set_rejects_corrupt_files() {
        let dir = TempDir::new().unwrap();
        let bad_magic = dir.path().join("bad.bin");
        std::fs::write(&bad_magic, b"NOTMAGIC").unwrap();
        assert!(read_sample_set(&bad_magic).is_err());

        let path = dir.path().join("samples.bin");
        let mesh = unit_cube();
        let points = sample_uniform(&mesh, 16, 0).unwrap();
        write_sample_set(&path, &points, &[0u8; 32]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_sample_set(&path).is_err());
    }
}
