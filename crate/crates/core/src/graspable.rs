//! Full-contact cup positions on a surface: 1 mm surface rasters, binary
//! erosion by the cup disc, and the mapping back to image pixels.

use nalgebra::Rotation3;

use crate::geometry::{fit_plane, local_frame, PointCloud, Vec3};
use crate::segmentation::SurfaceSegment;

/// Edge length of one surface-mask cell, meters.
pub const CELL_SIZE: f64 = 0.001;
/// Cup diameter in cells.
pub const CUP_DIAMETER: usize = 18;
/// Cup radius, meters.
pub const CUP_RADIUS: f64 = 0.009;

// Empty border around the occupied cells so closing never touches the edge.
const PAD: usize = 2;

/// Binary disc of the vacuum cup on an 18x18 grid. Cell `(i, j)` belongs to
/// the disc iff `(i - 8.5)^2 + (j - 8.5)^2 <= 9^2`, i.e. its center lies
/// within the cup radius.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CupMask {
    pub size: usize,
    pub cells: Vec<bool>,
    /// Per disc row: `(row offset, first col offset, last col offset)`
    /// relative to the anchor cell.
    runs: Vec<(isize, isize, isize)>,
}

impl Default for CupMask {
    fn default() -> Self {
        CupMask::disc(CUP_DIAMETER)
    }
}

impl CupMask {
    /// Disc of the given diameter in cells. The anchor cell sits at offset
    /// `diameter / 2` in both axes, so the cup center is the anchor cell's
    /// lower corner.
    pub fn disc(diameter: usize) -> Self {
        let c = (diameter as f64 - 1.0) / 2.0;
        let r2 = (diameter as f64 / 2.0).powi(2);
        let mut cells = vec![false; diameter * diameter];
        for i in 0..diameter {
            for j in 0..diameter {
                let di = i as f64 - c;
                let dj = j as f64 - c;
                cells[i * diameter + j] = di * di + dj * dj <= r2;
            }
        }
        let anchor = (diameter / 2) as isize;
        let mut runs = Vec::new();
        for i in 0..diameter {
            let row = &cells[i * diameter..(i + 1) * diameter];
            if let (Some(a), Some(b)) = (row.iter().position(|&x| x), row.iter().rposition(|&x| x)) {
                runs.push((i as isize - anchor, a as isize - anchor, b as isize - anchor));
            }
        }
        CupMask {
            size: diameter,
            cells,
            runs,
        }
    }

    pub fn area_cells(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Disc cells as `(row, col)` offsets from the anchor.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let anchor = (self.size / 2) as isize;
        (0..self.size * self.size)
            .filter(|&k| self.cells[k])
            .map(|k| ((k / self.size) as isize - anchor, (k % self.size) as isize - anchor))
            .collect()
    }
}

/// A surface rasterized at 1 mm in the local frame of its plane.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMask {
    pub width: usize,
    pub height: usize,
    /// Row-major occupancy; rows follow local y, columns local x.
    pub occupied: Vec<bool>,
    /// Local (x, y) coordinates, meters, of the lower corner of cell (0, 0).
    pub origin: [f64; 2],
    /// Source-cloud point closest to each cell center, for cells that
    /// received at least one point. Cells filled only by closing have `None`.
    pub cell_to_point: Vec<Option<usize>>,
    /// `(point index, cell index)` for every projected point.
    pub point_cells: Vec<(usize, usize)>,
    /// Cloud-frame origin of the local frame (the plane point under the
    /// segment centroid).
    pub plane_origin: Vec3,
    /// Rotation from cloud frame to local frame (plane normal to `+z`).
    pub frame: Rotation3<f64>,
}

impl SurfaceMask {
    #[inline]
    pub fn get(&self, row: isize, col: isize) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.height
            && (col as usize) < self.width
            && self.occupied[row as usize * self.width + col as usize]
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&c| c).count()
    }

    /// Cloud-frame position of the cup center for anchor cell `(row, col)`.
    pub fn cup_center(&self, row: usize, col: usize) -> Vec3 {
        let local = Vec3::new(
            self.origin[0] + col as f64 * CELL_SIZE,
            self.origin[1] + row as f64 * CELL_SIZE,
            0.0,
        );
        self.plane_origin + self.frame.inverse() * local
    }

    /// Builds a mask directly from an occupancy grid (no source points).
    pub fn from_grid(width: usize, height: usize, occupied: Vec<bool>) -> Self {
        assert_eq!(occupied.len(), width * height);
        SurfaceMask {
            width,
            height,
            cell_to_point: vec![None; occupied.len()],
            occupied,
            origin: [0.0, 0.0],
            point_cells: Vec::new(),
            plane_origin: Vec3::zeros(),
            frame: Rotation3::identity(),
        }
    }
}

/// Projects a segment onto its least-squares plane and rasterizes it at
/// 1 mm, then applies a 3x3 morphological closing to fill sampling holes.
pub fn project_surface(segment: &SurfaceSegment, cloud: &PointCloud) -> SurfaceMask {
    let pts: Vec<Vec3> = segment.point_indices.iter().map(|&i| cloud.points[i]).collect();
    let (normal, plane_origin) = match fit_plane(&pts) {
        Ok(fit) => {
            let n = if fit.normal.dot(&segment.dominant_normal) < 0.0 {
                -fit.normal
            } else {
                fit.normal
            };
            (n, fit.project(&segment.centroid))
        }
        Err(_) => (segment.dominant_normal, segment.centroid),
    };
    let frame = local_frame(&normal);
    let local: Vec<(i64, i64, f64, f64)> = pts
        .iter()
        .map(|p| {
            let q = frame * (p - plane_origin);
            (
                (q.x / CELL_SIZE).floor() as i64,
                (q.y / CELL_SIZE).floor() as i64,
                q.x,
                q.y,
            )
        })
        .collect();
    let min_c = local.iter().map(|l| l.0).min().unwrap_or(0) - PAD as i64;
    let max_c = local.iter().map(|l| l.0).max().unwrap_or(0) + PAD as i64;
    let min_r = local.iter().map(|l| l.1).min().unwrap_or(0) - PAD as i64;
    let max_r = local.iter().map(|l| l.1).max().unwrap_or(0) + PAD as i64;
    let width = (max_c - min_c + 1) as usize;
    let height = (max_r - min_r + 1) as usize;
    let origin = [min_c as f64 * CELL_SIZE, min_r as f64 * CELL_SIZE];

    let mut occupied = vec![false; width * height];
    let mut cell_to_point: Vec<Option<usize>> = vec![None; width * height];
    let mut best_d2 = vec![f64::INFINITY; width * height];
    let mut point_cells = Vec::with_capacity(pts.len());
    for (k, &(cx, cy, qx, qy)) in local.iter().enumerate() {
        let cell = (cy - min_r) as usize * width + (cx - min_c) as usize;
        occupied[cell] = true;
        let center_x = (cx as f64 + 0.5) * CELL_SIZE;
        let center_y = (cy as f64 + 0.5) * CELL_SIZE;
        let d2 = (qx - center_x).powi(2) + (qy - center_y).powi(2);
        let src = segment.point_indices[k];
        // Ascending point order makes `<` keep the lower index on ties.
        if d2 < best_d2[cell] {
            best_d2[cell] = d2;
            cell_to_point[cell] = Some(src);
        }
        point_cells.push((src, cell));
    }
    let occupied = close3x3(&occupied, width, height);
    SurfaceMask {
        width,
        height,
        occupied,
        origin,
        cell_to_point,
        point_cells,
        plane_origin,
        frame,
    }
}

fn dilate3x3(grid: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for r in 0..h {
        for c in 0..w {
            if grid[r * w + c] {
                for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                    for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                        out[rr * w + cc] = true;
                    }
                }
            }
        }
    }
    out
}

fn erode3x3(grid: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            out[r * w + c] = (r - 1..=r + 1).all(|rr| (c - 1..=c + 1).all(|cc| grid[rr * w + cc]));
        }
    }
    out
}

/// Morphological closing with a 3x3 square; cells outside the grid count
/// as empty.
pub fn close3x3(grid: &[bool], w: usize, h: usize) -> Vec<bool> {
    let closed = erode3x3(&dilate3x3(grid, w, h), w, h);
    // Closing is extensive; the padding keeps original cells off the border,
    // but keep the originals regardless.
    closed.iter().zip(grid).map(|(a, b)| *a || *b).collect()
}

/// Anchor cells `(row, col)` where every cup-disc cell lands on an occupied
/// surface cell, i.e. where the convolution of the surface with the disc
/// equals the disc area. Row-major order.
pub fn full_contact_area(surface: &SurfaceMask, cup: &CupMask) -> Vec<(usize, usize)> {
    let (w, h) = (surface.width, surface.height);
    // prefix[r][c] = occupied cells in row r, columns < c.
    let mut prefix = vec![0u32; h * (w + 1)];
    for r in 0..h {
        for c in 0..w {
            prefix[r * (w + 1) + c + 1] = prefix[r * (w + 1) + c] + surface.occupied[r * w + c] as u32;
        }
    }
    let area = cup.area_cells() as u32;
    let mut out = Vec::new();
    for r in 0..h as isize {
        for c in 0..w as isize {
            let mut sum = 0u32;
            for &(dr, c0, c1) in &cup.runs {
                let rr = r + dr;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                let a = (c + c0).clamp(0, w as isize) as usize;
                let b = (c + c1 + 1).clamp(0, w as isize) as usize;
                let base = rr as usize * (w + 1);
                sum += prefix[base + b] - prefix[base + a];
            }
            if sum == area {
                out.push((r as usize, c as usize));
            }
        }
    }
    out
}

/// Pixel-level graspable area for a whole image.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspableAreaMap {
    pub width: usize,
    pub height: usize,
    pub graspable: Vec<bool>,
    /// Owning surface id per pixel (meaningful where `graspable`).
    pub owner: Vec<Option<u32>>,
    /// Graspable pixel indices per surface id, ascending.
    pub surface_pixels: Vec<Vec<usize>>,
    /// Graspable anchor cells per surface id.
    pub surface_cells: Vec<Vec<(usize, usize)>>,
}

impl GraspableAreaMap {
    pub fn empty(width: usize, height: usize) -> Self {
        GraspableAreaMap {
            width,
            height,
            graspable: vec![false; width * height],
            owner: vec![None; width * height],
            surface_pixels: Vec::new(),
            surface_cells: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.graspable.iter().filter(|&&g| g).count()
    }
}

/// Maps each surface's graspable cells back to image pixels.
///
/// A pixel becomes graspable when its point fell into a graspable cell.
/// Graspable cells that received no point (filled by closing) map to the
/// pixel of the nearest cell that did. Surface ids are positions in
/// `areas`.
pub fn remap_to_image(
    areas: &[(&SurfaceMask, &[(usize, usize)])],
    cloud: &PointCloud,
    width: usize,
    height: usize,
) -> GraspableAreaMap {
    let pixel_index = cloud
        .pixel_index
        .as_ref()
        .expect("remapping needs the source pixel of every point");
    let mut map = GraspableAreaMap::empty(width, height);
    for (sid, (mask, cells)) in areas.iter().enumerate() {
        let mut is_graspable = vec![false; mask.width * mask.height];
        for &(r, c) in cells.iter() {
            is_graspable[r * mask.width + c] = true;
        }
        let mut pixels = Vec::new();
        for &(point, cell) in &mask.point_cells {
            if is_graspable[cell] {
                let (row, col) = pixel_index[point];
                pixels.push(row * width + col);
            }
        }
        for &(r, c) in cells.iter() {
            if mask.cell_to_point[r * mask.width + c].is_none() {
                if let Some(point) = nearest_source(mask, r, c) {
                    let (row, col) = pixel_index[point];
                    pixels.push(row * width + col);
                }
            }
        }
        pixels.sort_unstable();
        pixels.dedup();
        for &p in &pixels {
            map.graspable[p] = true;
            map.owner[p] = Some(sid as u32);
        }
        map.surface_pixels.push(pixels);
        map.surface_cells.push(cells.to_vec());
    }
    map
}

/// Source point of the cell nearest to `(r, c)` that received a point;
/// ties go to the first cell in row-major order.
fn nearest_source(mask: &SurfaceMask, r: usize, c: usize) -> Option<usize> {
    let max_ring = mask.width.max(mask.height) as isize;
    let (r, c) = (r as isize, c as isize);
    let mut best: Option<(isize, usize, usize)> = None;
    for ring in 1..=max_ring {
        for rr in (r - ring)..=(r + ring) {
            for cc in (c - ring)..=(c + ring) {
                if (rr - r).abs() != ring && (cc - c).abs() != ring {
                    continue;
                }
                if rr < 0 || cc < 0 || rr >= mask.height as isize || cc >= mask.width as isize {
                    continue;
                }
                let idx = rr as usize * mask.width + cc as usize;
                if let Some(p) = mask.cell_to_point[idx] {
                    let d2 = (rr - r).pow(2) + (cc - c).pow(2);
                    if best.is_none_or(|(bd, bi, _)| d2 < bd || (d2 == bd && idx < bi)) {
                        best = Some((d2, idx, p));
                    }
                }
            }
        }
        // Cells on later rings are at least `ring + 1` away.
        if best.is_some_and(|(bd, _, _)| bd < (ring + 1) * (ring + 1)) {
            break;
        }
    }
    best.map(|(_, _, p)| p)
}
