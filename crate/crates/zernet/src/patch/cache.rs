//! Versioned binary cache for a built `PatchSet`, so patch construction and
//! the pseudoinverse solves run once per sample set.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, Vector3};

use super::{LocalPatch, PatchConfig, PatchFrame, PatchOperator, PatchSet};
use crate::error::{Error, Result};
use crate::zernike::DiskPoint;

const PATCH_MAGIC: &[u8; 8] = b"ZNPATCH\0";
const PATCH_VERSION: u32 = 1;

/// Write a patch set keyed by the content hash of its sample-set file.
pub fn write_patch_set(path: &Path, set: &PatchSet, sample_hash: &[u8; 32]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    (|| -> std::io::Result<()> {
        w.write_all(PATCH_MAGIC)?;
        w.write_u32::<LittleEndian>(PATCH_VERSION)?;
        w.write_all(sample_hash)?;
        w.write_f64::<LittleEndian>(set.config.area_fraction)?;
        w.write_u64::<LittleEndian>(set.config.neighbor_k as u64)?;
        w.write_u64::<LittleEndian>(set.config.min_patch_points as u64)?;
        w.write_u64::<LittleEndian>(set.max_order as u64)?;
        w.write_f64::<LittleEndian>(set.r0)?;
        w.write_u64::<LittleEndian>(set.patches.len() as u64)?;
        let n = set.operators.first().map_or(0, |o| o.fit.nrows());
        w.write_u64::<LittleEndian>(n as u64)?;
        for p in &set.patches {
            w.write_u64::<LittleEndian>(p.member_count() as u64)?;
        }
        for p in &set.patches {
            w.write_u8(p.warn_sparse as u8)?;
        }
        for o in &set.operators {
            w.write_u8(o.rank_deficient as u8)?;
        }
        for (p, o) in set.patches.iter().zip(&set.operators) {
            for &m in &p.members {
                w.write_u64::<LittleEndian>(m as u64)?;
            }
            for d in &p.disk_coords {
                w.write_f64::<LittleEndian>(d.r())?;
                w.write_f64::<LittleEndian>(d.theta())?;
            }
            for axis in [p.frame.e1, p.frame.e2, p.frame.normal] {
                for c in 0..3 {
                    w.write_f64::<LittleEndian>(axis[c])?;
                }
            }
            for &v in o.fit.as_slice() {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        w.flush()
    })()
    .map_err(|e| Error::io(path, e))
}

/// Read a patch set and the sample-set hash it was built from.
pub fn read_patch_set(path: &Path) -> Result<(PatchSet, [u8; 32])> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let fail = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let ioerr = |e: std::io::Error| Error::io(path, e);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(ioerr)?;
    if &magic != PATCH_MAGIC {
        return Err(fail("not a patch-cache file (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(ioerr)?;
    if version != PATCH_VERSION {
        return Err(fail(format!("unsupported patch-cache version {version}")));
    }
    let mut sample_hash = [0u8; 32];
    r.read_exact(&mut sample_hash).map_err(ioerr)?;

    let area_fraction = r.read_f64::<LittleEndian>().map_err(ioerr)?;
    let neighbor_k = r.read_u64::<LittleEndian>().map_err(ioerr)? as usize;
    let min_patch_points = r.read_u64::<LittleEndian>().map_err(ioerr)? as usize;
    let max_order = r.read_u64::<LittleEndian>().map_err(ioerr)? as u32;
    let r0 = r.read_f64::<LittleEndian>().map_err(ioerr)?;
    let count = r.read_u64::<LittleEndian>().map_err(ioerr)? as usize;
    let n = r.read_u64::<LittleEndian>().map_err(ioerr)? as usize;

    let mut member_counts = Vec::with_capacity(count);
    for _ in 0..count {
        member_counts.push(r.read_u64::<LittleEndian>().map_err(ioerr)? as usize);
    }
    let mut warn_flags = Vec::with_capacity(count);
    for _ in 0..count {
        warn_flags.push(r.read_u8().map_err(ioerr)? != 0);
    }
    let mut rank_flags = Vec::with_capacity(count);
    for _ in 0..count {
        rank_flags.push(r.read_u8().map_err(ioerr)? != 0);
    }

    let mut patches = Vec::with_capacity(count);
    let mut operators = Vec::with_capacity(count);
    for x in 0..count {
        let m = member_counts[x];
        let mut members = Vec::with_capacity(m);
        for _ in 0..m {
            members.push(r.read_u64::<LittleEndian>().map_err(ioerr)? as usize);
        }
        let mut disk_coords = Vec::with_capacity(m);
        for _ in 0..m {
            let rad = r.read_f64::<LittleEndian>().map_err(ioerr)?;
            let theta = r.read_f64::<LittleEndian>().map_err(ioerr)?;
            disk_coords.push(DiskPoint::new(rad, theta)?);
        }
        let mut axes = [Vector3::zeros(); 3];
        for axis in &mut axes {
            for c in 0..3 {
                axis[c] = r.read_f64::<LittleEndian>().map_err(ioerr)?;
            }
        }
        let mut fit_data = Vec::with_capacity(n * m);
        for _ in 0..n * m {
            fit_data.push(r.read_f64::<LittleEndian>().map_err(ioerr)?);
        }
        let center = *members.first().ok_or_else(|| fail(format!("patch {x} has no members")))?;
        patches.push(LocalPatch {
            center,
            members,
            disk_coords,
            frame: PatchFrame {
                e1: axes[0],
                e2: axes[1],
                normal: axes[2],
            },
            warn_sparse: warn_flags[x],
        });
        operators.push(PatchOperator {
            fit: DMatrix::from_column_slice(n, m, &fit_data),
            rank_deficient: rank_flags[x],
        });
    }

    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(ioerr)? != 0 {
        return Err(fail("trailing bytes after patch payload".into()));
    }

    Ok((
        PatchSet {
            config: PatchConfig {
                area_fraction,
                neighbor_k,
                min_patch_points,
            },
            r0,
            max_order,
            patches,
            operators,
        },
        sample_hash,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{icosphere, normalize_area, sample_uniform};
    use crate::zernike::ZernikeBasisSet;
    use tempfile::TempDir;

    #[test]
    fn patch_cache_roundtrip_is_exact_and_deterministic() {
        let (mesh, _) = normalize_area(&icosphere(2, 1.0)).unwrap();
        let points = sample_uniform(&mesh, 500, 3).unwrap();
        let basis = ZernikeBasisSet::new(5).unwrap();
        let config = PatchConfig::new(0.15, 8, 42).unwrap();
        let set = PatchSet::build(&points, &config, &basis, 1.0).unwrap();

        let dir = TempDir::new().unwrap();
        let path = dir.path().join("patches.bin");
        let hash = [42u8; 32];
        write_patch_set(&path, &set, &hash).unwrap();
        let (back, stored) = read_patch_set(&path).unwrap();
        assert_eq!(stored, hash);
        assert_eq!(back.config, set.config);
        assert_eq!(back.r0, set.r0);
        assert_eq!(back.max_order, set.max_order);
        assert_eq!(back.len(), set.len());
        for (a, b) in set.patches.iter().zip(&back.patches) {
            assert_eq!(a.center, b.center);
            assert_eq!(a.members, b.members);
            assert_eq!(a.disk_coords, b.disk_coords);
            assert_eq!(a.frame, b.frame);
            assert_eq!(a.warn_sparse, b.warn_sparse);
        }
        for (a, b) in set.operators.iter().zip(&back.operators) {
            assert_eq!(a.fit, b.fit);
            assert_eq!(a.rank_deficient, b.rank_deficient);
        }

        let path2 = dir.path().join("patches2.bin");
        write_patch_set(&path2, &back, &stored).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn patch_cache_rejects_corruption() {
        let dir = TempDir::new().unwrap();
        let bad = dir.path().join("bad.bin");
        std::fs::write(&bad, b"WRONGMAG rest").unwrap();
        assert!(read_patch_set(&bad).is_err());

        let (mesh, _) = normalize_area(&icosphere(2, 1.0)).unwrap();
        let points = sample_uniform(&mesh, 400, 1).unwrap();
        let basis = ZernikeBasisSet::new(5).unwrap();
        let config = PatchConfig::new(0.18, 8, 42).unwrap();
        let set = PatchSet::build(&points, &config, &basis, 1.0).unwrap();
        let path = dir.path().join("patches.bin");
        write_patch_set(&path, &set, &[0u8; 32]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() / 2);
        std::fs::write(&path, &bytes).unwrap();
        assert!(read_patch_set(&path).is_err());
    }
}
