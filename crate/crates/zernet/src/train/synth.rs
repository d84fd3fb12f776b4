//! Synthetic benchmark data: randomly bumped spheres with mean curvature as
//! the regression target, written as a ready-to-train dataset directory.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::{icosphere, mean_curvature, normalize_area, write_field_csv, write_obj, TriangleMesh};
use crate::train::manifest::{Dataset, DatasetManifest, ManifestEntry};

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub count: usize,
    pub seed: u64,
    pub subdivisions: u32,
    /// Uniform bound on each spherical-harmonic bump coefficient.
    pub amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            count: 6,
            seed: 7,
            subdivisions: 4,
            amplitude: 0.12,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.count < 2 {
            return Err(Error::Usage(format!(
                "synthetic dataset needs at least 2 meshes for held-out folds, got {}",
                self.count
            )));
        }
        if self.subdivisions > 6 {
            return Err(Error::Usage(format!(
                "subdivision level {} is too fine (max 6)",
                self.subdivisions
            )));
        }
        if !(0.0..=0.3).contains(&self.amplitude) {
            return Err(Error::Usage(format!(
                "bump amplitude {} outside [0, 0.3]; larger bumps self-intersect",
                self.amplitude
            )));
        }
        Ok(())
    }
}

/// Real spherical harmonics for degrees 1 through 3, evaluated on a unit
/// direction. The degree-0 term is excluded so bumps average out to zero.
fn harmonic_bumps(dir: Vector3<f64>) -> [f64; 15] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let c1 = (3.0 / (4.0 * PI)).sqrt();
    let c2m2 = 0.5 * (15.0 / PI).sqrt();
    let c20 = 0.25 * (5.0 / PI).sqrt();
    let c22 = 0.25 * (15.0 / PI).sqrt();
    let c3m3 = 0.25 * (35.0 / (2.0 * PI)).sqrt();
    let c3m2 = 0.5 * (105.0 / PI).sqrt();
    let c3m1 = 0.25 * (21.0 / (2.0 * PI)).sqrt();
    let c30 = 0.25 * (7.0 / PI).sqrt();
    let c32 = 0.25 * (105.0 / PI).sqrt();
    [
        c1 * y,
        c1 * z,
        c1 * x,
        c2m2 * x * y,
        c2m2 * y * z,
        c20 * (3.0 * z * z - 1.0),
        c2m2 * x * z,
        c22 * (x * x - y * y),
        c3m3 * y * (3.0 * x * x - y * y),
        c3m2 * x * y * z,
        c3m1 * y * (5.0 * z * z - 1.0),
        c30 * (5.0 * z * z * z - 3.0 * z),
        c3m1 * x * (5.0 * z * z - 1.0),
        c32 * z * (x * x - y * y),
        c3m3 * x * (x * x - 3.0 * y * y),
    ]
}

fn bumped_sphere(subdivisions: u32, coeffs: &[f64; 15]) -> Result<TriangleMesh> {
    let base = icosphere(subdivisions, 1.0);
    let mut vertices = Vec::with_capacity(base.vertex_count());
    for v in base.vertices() {
        let dir = v.normalize();
        let radius: f64 = 1.0
            + coeffs
                .iter()
                .zip(harmonic_bumps(dir))
                .map(|(a, yv)| a * yv)
                .sum::<f64>();
        if radius <= 0.05 {
            return Err(Error::Domain(format!(
                "bump field drives radius to {radius:.3}; lower the amplitude"
            )));
        }
        vertices.push(dir * radius);
    }
    TriangleMesh::new(vertices, base.faces().to_vec())
}

/// Shift curvature away from zero so percentage metrics stay well defined.
pub fn positivity_offset(curvature: &[f64]) -> f64 {
    let n = curvature.len() as f64;
    let mean_abs = curvature.iter().map(|k| k.abs()).sum::<f64>() / n;
    let min = curvature.iter().cloned().fold(f64::INFINITY, f64::min);
    0.25 * mean_abs - min.min(0.0)
}

/// Generates `count` bumped spheres with per-vertex shifted mean curvature
/// targets, writes meshes, fields, and a manifest into `out_dir`, and returns
/// the manifest.
pub fn generate_synthetic(config: &SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut entries = Vec::with_capacity(config.count);

    for index in 0..config.count {
        let mut coeffs = [0.0f64; 15];
        for c in &mut coeffs {
            *c = if config.amplitude > 0.0 {
                rng.gen_range(-config.amplitude..config.amplitude)
            } else {
                0.0
            };
        }
        let bumped = bumped_sphere(config.subdivisions, &coeffs)?;
        let (normalized, _scale) = normalize_area(&bumped)?;
        let curvature = mean_curvature(&normalized);
        let offset = positivity_offset(&curvature);
        let target: Vec<f64> = curvature.iter().map(|k| k + offset).collect();

        let mesh_name = format!("mesh_{index:02}.obj");
        let field_name = format!("field_{index:02}.csv");
        write_obj(&out_dir.join(&mesh_name), &normalized)?;
        write_field_csv(&out_dir.join(&field_name), &target)?;
        entries.push(ManifestEntry {
            mesh: mesh_name.into(),
            field: field_name.into(),
            patches: Some(format!("patches_{index:02}.zpk").into()),
        });
    }

    let manifest = DatasetManifest::new(entries);
    Dataset::save(&manifest, &out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{load_mesh, read_field_file};

    fn quick_config(seed: u64) -> SynthConfig {
        SynthConfig {
            count: 2,
            seed,
            subdivisions: 2,
            amplitude: 0.12,
        }
    }

    #[test]
    fn generation_is_deterministic_bytes() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        generate_synthetic(&quick_config(11), dir_a.path()).unwrap();
        generate_synthetic(&quick_config(11), dir_b.path()).unwrap();

        for name in ["mesh_00.obj", "field_00.csv", "mesh_01.obj", "field_01.csv", "manifest.json"] {
            let a = fs::read(dir_a.path().join(name)).unwrap();
            let b = fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }

        let other = tempfile::tempdir().unwrap();
        generate_synthetic(&quick_config(12), other.path()).unwrap();
        let a = fs::read(dir_a.path().join("mesh_00.obj")).unwrap();
        let c = fs::read(other.path().join("mesh_00.obj")).unwrap();
        assert_ne!(a, c, "different seeds produced identical meshes");
    }

    #[test]
    fn zero_amplitude_gives_round_spheres() {
        let dir = tempfile::tempdir().unwrap();
        let config = SynthConfig {
            amplitude: 0.0,
            ..quick_config(3)
        };
        generate_synthetic(&config, dir.path()).unwrap();

        let mesh = load_mesh(&dir.path().join("mesh_00.obj")).unwrap();
        assert!((mesh.total_area() - 1.0).abs() < 1e-9);

        let k = mean_curvature(&mesh);
        let n = k.len() as f64;
        let mean = k.iter().sum::<f64>() / n;
        let cov = (k.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt() / mean;
        assert!(cov < 0.05, "curvature spread {cov} on an unbumped sphere");
    }

    #[test]
    fn dataset_loads_back_with_positive_targets() {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic(&quick_config(4), dir.path()).unwrap();

        let dataset = Dataset::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(dataset.len(), 2);
        for i in 0..dataset.len() {
            let mesh = load_mesh(&dataset.mesh_path(i)).unwrap();
            assert!((mesh.total_area() - 1.0).abs() < 1e-9);
            let field = read_field_file(&dataset.field_path(i), mesh.vertex_count()).unwrap();
            let min = field.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min > 0.0, "target field must stay positive, min {min}");
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let dir = tempfile::tempdir().unwrap();
        for config in [
            SynthConfig { count: 1, ..quick_config(0) },
            SynthConfig { amplitude: 0.9, ..quick_config(0) },
            SynthConfig { subdivisions: 9, ..quick_config(0) },
        ] {
            assert!(matches!(
                generate_synthetic(&config, dir.path()),
                Err(Error::Usage(_))
            ));
        }
    }

    #[test]
    fn bump_basis_is_orthonormal_on_the_sphere() {
        // Monte Carlo check of the harmonic normalization against the
        // uniform sphere measure.
        use rand::{Rng as _, SeedableRng as _};
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let samples = 200_000;
        let mut gram = [[0.0f64; 15]; 15];
        for _ in 0..samples {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let phi: f64 = rng.gen_range(0.0..2.0 * PI);
            let s = (1.0 - z * z).sqrt();
            let dir = Vector3::new(s * phi.cos(), s * phi.sin(), z);
            let y = harmonic_bumps(dir);
            for i in 0..15 {
                for j in i..15 {
                    gram[i][j] += y[i] * y[j];
                }
            }
        }
        let norm = 4.0 * PI / samples as f64;
        for i in 0..15 {
            for j in i..15 {
                let value = gram[i][j] * norm;
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (value - expect).abs() < 0.05,
                    "gram[{i}][{j}] = {value}"
                );
            }
        }
    }
}
