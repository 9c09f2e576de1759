//! Exact nearest-neighbor queries over a uniform voxel grid.

use std::collections::HashMap;

use nalgebra::Vector3;

type Key = [i32; 3];

/// Uniform hash grid over a fixed point set. Queries are exact and return
/// neighbors sorted by `(distance, index)`, so results never depend on
/// hash iteration order.
#[derive(Debug, Clone)]
pub struct PointIndex<'a> {
    points: &'a [Vector3<f64>],
    cell: f64,
    cells: HashMap<Key, Vec<u32>>,
    lo: Key,
    hi: Key,
}

impl<'a> PointIndex<'a> {
    /// Builds a grid whose cell edge targets a few points per occupied cell.
    pub fn new(points: &'a [Vector3<f64>]) -> Self {
        let cell = Self::auto_cell_size(points);
        Self::with_cell_size(points, cell)
    }

    pub fn with_cell_size(points: &'a [Vector3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell size must be positive");
        let mut cells: HashMap<Key, Vec<u32>> = HashMap::new();
        let mut lo = [i32::MAX; 3];
        let mut hi = [i32::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let k = key(p, cell);
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
            cells.entry(k).or_default().push(i as u32);
        }
        PointIndex {
            points,
            cell,
            cells,
            lo,
            hi,
        }
    }

    fn auto_cell_size(points: &[Vector3<f64>]) -> f64 {
        if points.len() < 2 {
            return 1.0;
        }
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let ext = hi - lo;
        // Depth-image clouds are close to 2-manifolds: size cells from the
        // two largest extents.
        let mut e = [ext.x, ext.y, ext.z];
        e.sort_by(|a, b| b.total_cmp(a));
        let area = (e[0] * e[1]).max(e[0] * e[0] * 1e-6).max(1e-18);
        let c = (4.0 * area / points.len() as f64).sqrt();
        if c.is_finite() && c > 0.0 {
            c
        } else {
            1.0
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest points to `q` (including a point equal to `q`, if
    /// indexed), nearest first.
    pub fn knn(&self, q: &Vector3<f64>, k: usize) -> Vec<usize> {
        let k = k.min(self.points.len());
        if k == 0 {
            return Vec::new();
        }
        let c = key(q, self.cell);
        let max_ring = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap_or(0);
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(4 * k);
        let mut ring = 0i32;
        loop {
            self.visit_shell(c, ring, |i| {
                best.push(((self.points[i] - q).norm_squared(), i));
            });
            if best.len() >= k {
                best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                best.truncate(k);
                // Everything outside the visited block is at least
                // `ring * cell` away from q.
                let covered = ring as f64 * self.cell;
                if best[k - 1].0 <= covered * covered {
                    break;
                }
            }
            if ring >= max_ring {
                best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                best.truncate(k);
                break;
            }
            ring += 1;
        }
        best.into_iter().map(|(_, i)| i).collect()
    }

    /// All points within `radius` of `q` (inclusive), sorted by index.
    pub fn within(&self, q: &Vector3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if self.points.is_empty() || radius < 0.0 {
            return out;
        }
        let r2 = radius * radius;
        let lo = key(&(q - Vector3::repeat(radius)), self.cell);
        let hi = key(&(q + Vector3::repeat(radius)), self.cell);
        for x in lo[0].max(self.lo[0])..=hi[0].min(self.hi[0]) {
            for y in lo[1].max(self.lo[1])..=hi[1].min(self.hi[1]) {
                for z in lo[2].max(self.lo[2])..=hi[2].min(self.hi[2]) {
                    if let Some(ids) = self.cells.get(&[x, y, z]) {
                        for &i in ids {
                            let i = i as usize;
                            if (self.points[i] - q).norm_squared() <= r2 {
                                out.push(i);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    fn visit_shell(&self, c: Key, ring: i32, mut f: impl FnMut(usize)) {
        let mut take = |k: Key| {
            if let Some(ids) = self.cells.get(&k) {
                for &i in ids {
                    f(i as usize);
                }
            }
        };
        if ring == 0 {
            take(c);
            return;
        }
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                let on_face = dx.abs() == ring || dy.abs() == ring;
                if on_face {
                    for dz in -ring..=ring {
                        take([c[0] + dx, c[1] + dy, c[2] + dz]);
                    }
                } else {
                    take([c[0] + dx, c[1] + dy, c[2] - ring]);
                    take([c[0] + dx, c[1] + dy, c[2] + ring]);
                }
            }
        }
    }
}

#[inline]
fn key(p: &Vector3<f64>, cell: f64) -> Key {
    [
        (p.x / cell).floor() as i32,
        (p.y / cell).floor() as i32,
        (p.z / cell).floor() as i32,
    ]
}
