//! Geodesic-ball patches over a sampled surface and their Zernike patch
//! operators.
//!
//! Each sample point becomes the center of a geodesic ball of radius `r0`,
//! flattened to the unit disk (`r` = geodesic distance / r0, `θ` measured in
//! the center's tangent plane). The patch operator is the pseudoinverse of
//! the basis evaluation matrix at those disk coordinates, so member samples
//! of any scalar field map to Zernike coefficients by one matrix product.

mod cache;

pub use cache::{read_patch_set, write_patch_set};

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{DMatrix, Vector3};
use ndarray::{Array2, Array3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::SamplePointSet;
use crate::zernike::{eval_matrix, DiskPoint, ZernikeBasisSet, RANK_CUTOFF};

#[derive(Debug, Clone, PartialEq)]
pub struct PatchConfig {
    /// Fraction of total surface area covered by one patch.
    pub area_fraction: f64,
    /// Neighbor count for the geodesic graph.
    pub neighbor_k: usize,
    /// Patches with fewer members are flagged sparse; below the basis size
    /// they are an error.
    pub min_patch_points: usize,
}

impl PatchConfig {
    pub fn new(area_fraction: f64, neighbor_k: usize, min_patch_points: usize) -> Result<Self> {
        if !(area_fraction > 0.0 && area_fraction < 1.0) {
            return Err(Error::Domain(format!(
                "area_fraction {area_fraction} outside (0, 1)"
            )));
        }
        if neighbor_k == 0 {
            return Err(Error::Domain("neighbor_k must be at least 1".into()));
        }
        Ok(PatchConfig {
            area_fraction,
            neighbor_k,
            min_patch_points,
        })
    }

    /// Defaults: 1% patch area, 8 graph neighbors, sparsity floor at twice
    /// the basis size.
    pub fn default_for(basis: &ZernikeBasisSet) -> Self {
        PatchConfig {
            area_fraction: 0.01,
            neighbor_k: 8,
            min_patch_points: 2 * basis.len(),
        }
    }

    /// Flat-disk radius covering `area_fraction` of the total area.
    pub fn radius_for_area(&self, total_area: f64) -> f64 {
        (self.area_fraction * total_area / std::f64::consts::PI).sqrt()
    }
}

/// Symmetric k-nearest-neighbor graph with Euclidean edge weights, the
/// discrete carrier for geodesic distances.
pub struct GeodesicGraph {
    adjacency: Vec<Vec<(u32, f64)>>,
}

impl GeodesicGraph {
    pub fn build(points: &SamplePointSet, neighbor_k: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let index = crate::spatial::GridIndex::build(&points.positions);
        let knn: Vec<Vec<(usize, f64)>> = (0..points.len())
            .into_par_iter()
            .map(|i| index.k_nearest_of_point(i, neighbor_k))
            .collect();
        let mut adjacency: Vec<Vec<(u32, f64)>> = vec![Vec::new(); points.len()];
        for (i, neighbors) in knn.iter().enumerate() {
            for &(j, d) in neighbors {
                adjacency[i].push((j as u32, d));
                adjacency[j].push((i as u32, d));
            }
        }
        for adj in &mut adjacency {
            adj.sort_by(|a, b| a.0.cmp(&b.0));
            adj.dedup_by_key(|e| e.0);
        }
        Ok(GeodesicGraph { adjacency })
    }

    /// Dijkstra from `center`, truncated at `radius`. Returns `(index,
    /// distance)` pairs sorted by (distance, index); the center itself is
    /// included at distance 0.
    pub fn distances_within(&self, center: usize, radius: f64) -> Vec<(usize, f64)> {
        #[derive(PartialEq)]
        struct Node {
            dist: f64,
            idx: u32,
        }
        impl Eq for Node {}
        impl Ord for Node {
            fn cmp(&self, other: &Self) -> Ordering {
                // Reversed: BinaryHeap is a max-heap, we want smallest first.
                other
                    .dist
                    .partial_cmp(&self.dist)
                    .unwrap()
                    .then(other.idx.cmp(&self.idx))
            }
        }
        impl PartialOrd for Node {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }

        let mut dist = vec![f64::INFINITY; self.adjacency.len()];
        let mut heap = BinaryHeap::new();
        dist[center] = 0.0;
        heap.push(Node {
            dist: 0.0,
            idx: center as u32,
        });
        let mut out = Vec::new();
        while let Some(Node { dist: d, idx }) = heap.pop() {
            if d > dist[idx as usize] {
                continue;
            }
            out.push((idx as usize, d));
            for &(j, w) in &self.adjacency[idx as usize] {
                let nd = d + w;
                if nd <= radius && nd < dist[j as usize] {
                    dist[j as usize] = nd;
                    heap.push(Node { dist: nd, idx: j });
                }
            }
        }
        out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }
}

/// Orthonormal right-handed tangent frame at a patch center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchFrame {
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl PatchFrame {
    /// `e1` is global +X projected into the tangent plane, falling back to
    /// +Y when the normal is aligned with ±X; `e2 = normal × e1`.
    pub fn from_normal(normal: Vector3<f64>) -> Self {
        let n = normal.normalize();
        let project = |axis: Vector3<f64>| axis - n * n.dot(&axis);
        let e1 = match project(Vector3::x()).try_normalize(1e-6) {
            Some(e1) => e1,
            None => project(Vector3::y())
                .try_normalize(0.0)
                .expect("normal cannot align with both X and Y"),
        };
        let e2 = n.cross(&e1);
        PatchFrame { e1, e2, normal: n }
    }
}

/// One geodesic-ball patch in disk coordinates.
#[derive(Debug, Clone)]
pub struct LocalPatch {
    pub center: usize,
    /// Sample indices: center first, then sorted by (geodesic distance,
    /// index).
    pub members: Vec<usize>,
    pub disk_coords: Vec<DiskPoint>,
    pub frame: PatchFrame,
    /// Member count fell below `min_patch_points` (but not below the basis
    /// size, which is an error instead).
    pub warn_sparse: bool,
}

impl LocalPatch {
    /// Patch from bare disk coordinates with an identity frame, for
    /// synthetic-disk tests and operator verification. The first coordinate
    /// must be the center (0, 0).
    pub fn from_disk_coords(disk_coords: Vec<DiskPoint>) -> Result<Self> {
        let first = disk_coords
            .first()
            .ok_or_else(|| Error::EmptyPointSet)?;
        if first.r() != 0.0 {
            return Err(Error::Domain("first disk coordinate must be the center".into()));
        }
        Ok(LocalPatch {
            center: 0,
            members: (0..disk_coords.len()).collect(),
            disk_coords,
            frame: PatchFrame {
                e1: Vector3::x(),
                e2: Vector3::y(),
                normal: Vector3::z(),
            },
            warn_sparse: false,
        })
    }

    pub fn member_count(&self) -> usize {
        self.members.len()
    }
}

/// Build the patch around one center from its truncated geodesic distances.
pub fn build_patch(
    points: &SamplePointSet,
    graph: &GeodesicGraph,
    config: &PatchConfig,
    r0: f64,
    basis_len: usize,
    center: usize,
) -> Result<LocalPatch> {
    let reached = graph.distances_within(center, r0);
    if reached.len() < basis_len {
        return Err(Error::TooFewMembers {
            center,
            members: reached.len(),
            required: basis_len,
        });
    }
    let warn_sparse = reached.len() < config.min_patch_points;
    let frame = PatchFrame::from_normal(points.normals[center]);
    let center_pos = points.positions[center];

    let mut members = Vec::with_capacity(reached.len());
    let mut disk_coords = Vec::with_capacity(reached.len());
    members.push(center);
    disk_coords.push(DiskPoint::new(0.0, 0.0)?);
    for &(t, d) in reached.iter().filter(|&&(t, _)| t != center) {
        let v = points.positions[t] - center_pos;
        let theta = v.dot(&frame.e2).atan2(v.dot(&frame.e1));
        disk_coords.push(DiskPoint::new((d / r0).min(1.0), theta)?);
        members.push(t);
    }
    Ok(LocalPatch {
        center,
        members,
        disk_coords,
        frame,
        warn_sparse,
    })
}

/// Pseudoinverse of the basis evaluation matrix at a patch's disk
/// coordinates: maps member samples to Zernike coefficients.
#[derive(Debug, Clone)]
pub struct PatchOperator {
    /// N × member_count fit matrix.
    pub fit: DMatrix<f64>,
    pub rank_deficient: bool,
}

impl PatchOperator {
    pub fn apply(&self, member_values: &[f64]) -> Result<Vec<f64>> {
        if member_values.len() != self.fit.ncols() {
            return Err(Error::LengthMismatch {
                expected: self.fit.ncols(),
                got: member_values.len(),
                context: "member values vs fit matrix".into(),
            });
        }
        let mut out = vec![0.0; self.fit.nrows()];
        let cols = self.fit.as_slice();
        let n = self.fit.nrows();
        for (mi, &v) in member_values.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (o, &f) in out.iter_mut().zip(&cols[mi * n..(mi + 1) * n]) {
                *o += f * v;
            }
        }
        Ok(out)
    }
}

pub fn build_patch_operator(patch: &LocalPatch, basis: &ZernikeBasisSet) -> Result<PatchOperator> {
    if patch.member_count() < basis.len() {
        return Err(Error::Underdetermined {
            points: patch.member_count(),
            basis_len: basis.len(),
        });
    }
    let design = eval_matrix(basis, &patch.disk_coords)?;
    let svd = design.svd(true, true);
    let cutoff = RANK_CUTOFF * svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    let fit = svd
        .pseudo_inverse(cutoff)
        .map_err(|e| Error::Geometry(format!("pseudoinverse failed: {e}")))?;
    Ok(PatchOperator {
        fit,
        rank_deficient: rank < basis.len(),
    })
}

/// Express member positions in the patch frame, relative to the center:
/// `(v·e1, v·e2, v·normal)` per member. Translation-invariant; the center
/// maps to the origin.
pub fn normalize_and_align(positions: &[Vector3<f64>], patch: &LocalPatch) -> Vec<[f64; 3]> {
    let c = positions[patch.center];
    patch
        .members
        .iter()
        .map(|&t| {
            let v = positions[t] - c;
            [
                v.dot(&patch.frame.e1),
                v.dot(&patch.frame.e2),
                v.dot(&patch.frame.normal),
            ]
        })
        .collect()
}

fn check_patch_shapes(
    rows: usize,
    patches: &[LocalPatch],
    ops: &[PatchOperator],
) -> Result<()> {
    if patches.len() != rows || ops.len() != rows {
        return Err(Error::LengthMismatch {
            expected: rows,
            got: patches.len().min(ops.len()),
            context: "patches and operators per sample point".into(),
        });
    }
    Ok(())
}

/// Zernike coefficients of a per-point field over every patch.
///
/// `normalize` subtracts the center value from every member before fitting
/// (feature-patch normalization). Output is S × C × N.
pub fn extract_all(
    field: &Array2<f64>,
    patches: &[LocalPatch],
    ops: &[PatchOperator],
    normalize: bool,
) -> Result<Array3<f64>> {
    let (s, channels) = field.dim();
    check_patch_shapes(s, patches, ops)?;
    let n = if let Some(op) = ops.first() {
        op.fit.nrows()
    } else {
        return Err(Error::EmptyPointSet);
    };
    let mut out = Array3::zeros((s, channels, n));
    let out_slice = out.as_slice_mut().expect("standard layout");
    out_slice
        .par_chunks_mut(channels * n)
        .enumerate()
        .for_each(|(x, chunk)| {
            let patch = &patches[x];
            let fit = ops[x].fit.as_slice();
            for c in 0..channels {
                let center_val = if normalize {
                    field[(patch.center, c)]
                } else {
                    0.0
                };
                let coef = &mut chunk[c * n..(c + 1) * n];
                for (mi, &t) in patch.members.iter().enumerate() {
                    let v = field[(t, c)] - center_val;
                    if v == 0.0 {
                        continue;
                    }
                    for (o, &f) in coef.iter_mut().zip(&fit[mi * n..(mi + 1) * n]) {
                        *o += f * v;
                    }
                }
            }
        });
    Ok(out)
}

/// Coefficients of the frame-aligned member positions, the network's input
/// features: channel 0/1 are the tangent coordinates, channel 2 the signed
/// normal offset. Output is S × 3 × N.
pub fn extract_aligned_xyz(
    points: &SamplePointSet,
    patches: &[LocalPatch],
    ops: &[PatchOperator],
) -> Result<Array3<f64>> {
    check_patch_shapes(points.len(), patches, ops)?;
    let n = if let Some(op) = ops.first() {
        op.fit.nrows()
    } else {
        return Err(Error::EmptyPointSet);
    };
    let mut out = Array3::zeros((points.len(), 3, n));
    let out_slice = out.as_slice_mut().expect("standard layout");
    out_slice
        .par_chunks_mut(3 * n)
        .enumerate()
        .for_each(|(x, chunk)| {
            let aligned = normalize_and_align(&points.positions, &patches[x]);
            let fit = ops[x].fit.as_slice();
            for c in 0..3 {
                let coef = &mut chunk[c * n..(c + 1) * n];
                for (mi, a) in aligned.iter().enumerate() {
                    let v = a[c];
                    if v == 0.0 {
                        continue;
                    }
                    for (o, &f) in coef.iter_mut().zip(&fit[mi * n..(mi + 1) * n]) {
                        *o += f * v;
                    }
                }
            }
        });
    Ok(out)
}

/// All patches and operators of a sample set, plus build statistics.
pub struct PatchSet {
    pub config: PatchConfig,
    pub r0: f64,
    pub max_order: u32,
    pub patches: Vec<LocalPatch>,
    pub operators: Vec<PatchOperator>,
}

impl PatchSet {
    /// Build every patch and operator. `total_area` is the surface area the
    /// points were sampled from (1.0 after area normalization).
    pub fn build(
        points: &SamplePointSet,
        config: &PatchConfig,
        basis: &ZernikeBasisSet,
        total_area: f64,
    ) -> Result<PatchSet> {
        if config.min_patch_points < basis.len() {
            return Err(Error::Domain(format!(
                "min_patch_points {} below basis size {}",
                config.min_patch_points,
                basis.len()
            )));
        }
        let graph = GeodesicGraph::build(points, config.neighbor_k)?;
        let r0 = config.radius_for_area(total_area);
        let patches: Vec<LocalPatch> = (0..points.len())
            .into_par_iter()
            .map(|x| build_patch(points, &graph, config, r0, basis.len(), x))
            .collect::<Result<_>>()?;
        let operators: Vec<PatchOperator> = patches
            .par_iter()
            .map(|p| build_patch_operator(p, basis))
            .collect::<Result<_>>()?;
        Ok(PatchSet {
            config: config.clone(),
            r0,
            max_order: basis.max_order(),
            patches,
            operators,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn mean_members(&self) -> f64 {
        let total: usize = self.patches.iter().map(LocalPatch::member_count).sum();
        total as f64 / self.patches.len() as f64
    }

    pub fn sparse_count(&self) -> usize {
        self.patches.iter().filter(|p| p.warn_sparse).count()
    }

    pub fn rank_deficient_count(&self) -> usize {
        self.operators.iter().filter(|o| o.rank_deficient).count()
    }
}
