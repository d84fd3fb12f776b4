//! Uniform-grid bucket index for exact nearest-neighbor queries over a point
//! cloud. Queries expand cell rings outward and stop once no closer point
//! can exist, so results are exact; ties resolve to the lowest point index.

use nalgebra::Vector3;

pub(crate) struct GridIndex<'a> {
    points: &'a [Vector3<f64>],
    origin: Vector3<f64>,
    cell: f64,
    dims: [usize; 3],
    buckets: Vec<Vec<u32>>,
}

impl<'a> GridIndex<'a> {
    pub fn build(points: &'a [Vector3<f64>]) -> Self {
        assert!(!points.is_empty());
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = hi - lo;
        let max_extent = extent.max().max(1e-12);
        // Aim for a few points per bucket.
        let target = (points.len() as f64 / 4.0).cbrt().ceil().max(1.0);
        let cell = max_extent / target;
        let dims = [
            (extent.x / cell).floor() as usize + 1,
            (extent.y / cell).floor() as usize + 1,
            (extent.z / cell).floor() as usize + 1,
        ];
        let mut buckets = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for (i, p) in points.iter().enumerate() {
            let cx = (((p.x - lo.x) / cell).floor() as usize).min(dims[0] - 1);
            let cy = (((p.y - lo.y) / cell).floor() as usize).min(dims[1] - 1);
            let cz = (((p.z - lo.z) / cell).floor() as usize).min(dims[2] - 1);
            buckets[(cz * dims[1] + cy) * dims[0] + cx].push(i as u32);
        }
        GridIndex {
            points,
            origin: lo,
            cell,
            dims,
            buckets,
        }
    }

    fn cell_coords(&self, p: &Vector3<f64>) -> [i64; 3] {
        [
            (((p.x - self.origin.x) / self.cell).floor() as i64).clamp(0, self.dims[0] as i64 - 1),
            (((p.y - self.origin.y) / self.cell).floor() as i64).clamp(0, self.dims[1] as i64 - 1),
            (((p.z - self.origin.z) / self.cell).floor() as i64).clamp(0, self.dims[2] as i64 - 1),
        ]
    }

    pub fn nearest(&self, q: &Vector3<f64>) -> usize {
        let center = self.cell_coords(q);
        let max_ring = *self.dims.iter().max().unwrap() as i64;
        let mut best: Option<(f64, u32)> = None;
        for ring in 0..=max_ring {
            // A point found in ring k rules out rings whose closest cell face
            // is already farther away.
            if let Some((d2, _)) = best {
                let ring_gap = (ring - 1).max(0) as f64 * self.cell;
                if ring_gap * ring_gap > d2 {
                    break;
                }
            }
            self.for_ring(center, ring, |bucket| {
                for &i in bucket {
                    let d2 = (self.points[i as usize] - q).norm_squared();
                    let better = match best {
                        None => true,
                        Some((bd, bi)) => d2 < bd || (d2 == bd && i < bi),
                    };
                    if better {
                        best = Some((d2, i));
                    }
                }
            });
        }
        best.expect("nonempty point cloud").1 as usize
    }

    /// The `k` nearest points to `points[query]`, excluding the query point
    /// itself, ordered by (distance, index).
    pub fn k_nearest_of_point(&self, query: usize, k: usize) -> Vec<(usize, f64)> {
        let q = self.points[query];
        let center = self.cell_coords(&q);
        let max_ring = *self.dims.iter().max().unwrap() as i64;
        let mut found: Vec<(f64, u32)> = Vec::new();
        for ring in 0..=max_ring {
            if found.len() >= k {
                let kth = found[k - 1].0;
                let ring_gap = (ring - 1).max(0) as f64 * self.cell;
                if ring_gap * ring_gap > kth {
                    break;
                }
            }
            self.for_ring(center, ring, |bucket| {
                for &i in bucket {
                    if i as usize == query {
                        continue;
                    }
                    found.push(((self.points[i as usize] - q).norm_squared(), i));
                }
            });
            // Keeping only the best k is safe: the kth distance never gets
            // worse, so a dropped candidate can never re-enter.
            found.sort_by(|a, b| a.partial_cmp(b).unwrap());
            found.truncate(k);
        }
        found
            .into_iter()
            .map(|(d2, i)| (i as usize, d2.sqrt()))
            .collect()
    }

    fn for_ring(&self, center: [i64; 3], ring: i64, mut visit: impl FnMut(&[u32])) {
        let (d0, d1, d2) = (
            self.dims[0] as i64,
            self.dims[1] as i64,
            self.dims[2] as i64,
        );
        for dz in -ring..=ring {
            let z = center[2] + dz;
            if z < 0 || z >= d2 {
                continue;
            }
            for dy in -ring..=ring {
                let y = center[1] + dy;
                if y < 0 || y >= d1 {
                    continue;
                }
                // Interior rows only touch the ring at x = ±ring.
                let on_shell = dz.abs() == ring || dy.abs() == ring;
                let mut dx = -ring;
                while dx <= ring {
                    let x = center[0] + dx;
                    if x >= 0 && x < d0 {
                        visit(&self.buckets[((z * d1 + y) * d0 + x) as usize]);
                    }
                    dx += if on_shell || dx == ring { 1 } else { 2 * ring };
                }
            }
        }
    }
}
