//! Region-growing segmentation of an oriented point cloud into smooth,
//! near-planar surfaces.

use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fit_plane, local_frame, PointCloud, Vec3};
use crate::spatial::PointIndex;

/// Which normal a candidate neighbor is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalReference {
    /// The seed currently being expanded (the classic formulation).
    #[default]
    CurrentSeed,
    /// The first seed of the growing region.
    RegionSeed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionGrowParams {
    pub k: usize,
    /// Radians; must be below π/2.
    pub angle_threshold: f64,
    pub curvature_threshold: f64,
    pub min_segment_size: usize,
    #[serde(default)]
    pub normal_reference: NormalReference,
}

impl Default for RegionGrowParams {
    fn default() -> Self {
        RegionGrowParams {
            k: 30,
            angle_threshold: 10f64.to_radians(),
            curvature_threshold: 0.05,
            // Smallest point count that can cover the 18 mm cup disc at 1 mm.
            min_segment_size: 255,
            normal_reference: NormalReference::CurrentSeed,
        }
    }
}

impl RegionGrowParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.k > 0
            && self.angle_threshold > 0.0
            && self.angle_threshold < std::f64::consts::FRAC_PI_2
            && self.curvature_threshold > 0.0
            && self.min_segment_size > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("region growing parameters out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSegment {
    /// Indices into the source cloud, ascending.
    pub point_indices: Vec<usize>,
    pub centroid: Vec3,
    /// Unit normal of the segment's least-squares plane, facing the camera.
    pub dominant_normal: Vec3,
    /// Maps `dominant_normal` to `+z`.
    pub local_frame: Rotation3<f64>,
}

/// One admission decision, recorded when tracing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Admission {
    pub point: usize,
    pub reference: usize,
    pub angle: f64,
}

/// Segments `cloud` (which must carry normals and curvature).
///
/// Seeds are taken in ascending curvature order (ties by index). A neighbor
/// joins the region when the angle between its normal and the reference
/// normal is below `angle_threshold`, and is itself queued as a seed when
/// its curvature is below `curvature_threshold`. Regions smaller than
/// `min_segment_size` are dropped. Points with invalid normals never join.
pub fn region_grow(cloud: &PointCloud, params: &RegionGrowParams) -> Result<Vec<SurfaceSegment>> {
    grow(cloud, params, None)
}

/// Like [`region_grow`], also returning every admission with the angle that
/// justified it.
pub fn region_grow_traced(
    cloud: &PointCloud,
    params: &RegionGrowParams,
) -> Result<(Vec<SurfaceSegment>, Vec<Admission>)> {
    let mut log = Vec::new();
    let segs = grow(cloud, params, Some(&mut log))?;
    Ok((segs, log))
}

fn grow(
    cloud: &PointCloud,
    params: &RegionGrowParams,
    mut trace: Option<&mut Vec<Admission>>,
) -> Result<Vec<SurfaceSegment>> {
    params.validate()?;
    let normals = cloud.normals.as_ref().ok_or(Error::MissingNormals)?;
    if cloud.is_empty() {
        return Err(Error::TooFewPoints { needed: 1, got: 0 });
    }
    let n = cloud.len();
    let curvature: Vec<f64> = match &cloud.curvature {
        Some(c) => c.clone(),
        None => vec![0.0; n],
    };
    let valid: Vec<bool> = curvature.iter().map(|c| c.is_finite()).collect();
    let cos_thr = params.angle_threshold.cos();

    let mut order: Vec<usize> = (0..n).filter(|&i| valid[i]).collect();
    order.sort_by(|&a, &b| curvature[a].total_cmp(&curvature[b]).then(a.cmp(&b)));

    let index = PointIndex::new(&cloud.points);
    let mut assigned = vec![false; n];
    let mut segments = Vec::new();
    let mut queue = std::collections::VecDeque::new();

    for &start in &order {
        if assigned[start] {
            continue;
        }
        assigned[start] = true;
        let mut region = vec![start];
        queue.clear();
        queue.push_back(start);
        while let Some(seed) = queue.pop_front() {
            let reference = match params.normal_reference {
                NormalReference::CurrentSeed => seed,
                NormalReference::RegionSeed => start,
            };
            let rn = normals[reference];
            for nb in index.knn(&cloud.points[seed], params.k + 1) {
                if assigned[nb] || !valid[nb] {
                    continue;
                }
                let cos = rn.dot(&normals[nb]);
                if cos <= cos_thr {
                    continue;
                }
                assigned[nb] = true;
                region.push(nb);
                if let Some(log) = trace.as_deref_mut() {
                    log.push(Admission {
                        point: nb,
                        reference,
                        angle: cos.clamp(-1.0, 1.0).acos(),
                    });
                }
                if curvature[nb] < params.curvature_threshold {
                    queue.push_back(nb);
                }
            }
        }
        if region.len() >= params.min_segment_size {
            region.sort_unstable();
            segments.push(make_segment(cloud, region));
        }
    }
    Ok(segments)
}

fn make_segment(cloud: &PointCloud, point_indices: Vec<usize>) -> SurfaceSegment {
    let pts: Vec<Vec3> = point_indices.iter().map(|&i| cloud.points[i]).collect();
    let centroid = pts.iter().sum::<Vec3>() / pts.len() as f64;
    let normal = match fit_plane(&pts) {
        Ok(fit) => fit.normal,
        Err(_) => {
            let normals = cloud.normals.as_ref().expect("checked by caller");
            point_indices
                .iter()
                .map(|&i| normals[i])
                .sum::<Vec3>()
                .try_normalize(1e-12)
                .unwrap_or(-Vec3::z())
        }
    };
    let normal = if normal.dot(&centroid) > 0.0 { -normal } else { normal };
    SurfaceSegment {
        local_frame: local_frame(&normal),
        point_indices,
        centroid,
        dominant_normal: normal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::estimate_normals;

    fn grid_plane(n: usize, spacing: f64, z: f64) -> Vec<Vec3> {
        let mut pts = Vec::new();
        for i in 0..n {
            for j in 0..n {
                pts.push(Vec3::new(
                    (i as f64 - n as f64 / 2.0) * spacing,
                    (j as f64 - n as f64 / 2.0) * spacing,
                    z,
                ));
            }
        }
        pts
    }

    #[test]
    fn single_plane_is_one_segment() {
        let pts = grid_plane(71, 0.002, 0.6); // 5041 points
        let cloud = estimate_normals(&PointCloud::from_points(pts), 30).unwrap();
        let segs = region_grow(&cloud, &RegionGrowParams::default()).unwrap();
        assert_eq!(segs.len(), 1);
        assert!(segs[0].point_indices.len() as f64 >= 0.99 * cloud.len() as f64);
        assert!((segs[0].dominant_normal - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-9);
    }

    /// Two half-planes meeting at a 90 degree ridge, seen from above.
    fn dihedral() -> (Vec<Vec3>, Vec<u8>) {
        let mut pts = Vec::new();
        let mut which = Vec::new();
        let s = 0.002;
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for i in 1..=40 {
            for j in -40..=40 {
                let u = i as f64 * s;
                let y = j as f64 * s;
                // Plane A rises toward -x, plane B toward +x; ridge at x = 0.
                pts.push(Vec3::new(-u * h, y, 0.6 - u * h));
                which.push(0);
                pts.push(Vec3::new(u * h, y, 0.6 - u * h));
                which.push(1);
            }
        }
        (pts, which)
    }

    #[test]
    fn dihedral_splits_into_two_pure_segments() {
        let (pts, which) = dihedral();
        let cloud = estimate_normals(&PointCloud::from_points(pts), 30).unwrap();
        let params = RegionGrowParams {
            angle_threshold: 30f64.to_radians(),
            ..Default::default()
        };
        let (segs, log) = region_grow_traced(&cloud, &params).unwrap();
        assert_eq!(segs.len(), 2);
        for s in &segs {
            let first = which[s.point_indices[0]];
            assert!(s.point_indices.iter().all(|&i| which[i] == first));
        }
        assert_ne!(which[segs[0].point_indices[0]], which[segs[1].point_indices[0]]);
        assert!(log.iter().all(|a| a.angle < params.angle_threshold));
    }

    #[test]
    fn segments_are_disjoint_and_deterministic() {
        let (pts, _) = dihedral();
        let cloud = estimate_normals(&PointCloud::from_points(pts), 20).unwrap();
        let params = RegionGrowParams {
            min_segment_size: 10,
            ..Default::default()
        };
        let a = region_grow(&cloud, &params).unwrap();
        let b = region_grow(&cloud, &params).unwrap();
        assert_eq!(a, b);
        let mut seen = vec![false; cloud.len()];
        for s in &a {
            for &i in &s.point_indices {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
    }

    #[test]
    fn region_seed_reference_is_stricter_on_curves() {
        // A 30 mm cylinder lateral strip: the current-seed rule follows the
        // curve, the region-seed rule cannot bend past the threshold.
        let mut pts = Vec::new();
        for i in -30..=30 {
            let phi = i as f64 * 0.04;
            for j in 0..40 {
                pts.push(Vec3::new(0.03 * phi.sin(), j as f64 * 0.002, 0.6 - 0.03 * phi.cos()));
            }
        }
        let cloud = estimate_normals(&PointCloud::from_points(pts), 20).unwrap();
        let base = RegionGrowParams {
            min_segment_size: 10,
            ..Default::default()
        };
        let current = region_grow(&cloud, &base).unwrap();
        let fixed = region_grow(
            &cloud,
            &RegionGrowParams {
                normal_reference: NormalReference::RegionSeed,
                ..base
            },
        )
        .unwrap();
        assert_eq!(current.len(), 1);
        assert!(fixed.len() > 1);
    }

    #[test]
    fn missing_normals_and_bad_params() {
        let cloud = PointCloud::from_points(grid_plane(5, 0.01, 0.5));
        assert!(matches!(
            region_grow(&cloud, &RegionGrowParams::default()),
            Err(Error::MissingNormals)
        ));
        let cloud = estimate_normals(&cloud, 5).unwrap();
        let bad = RegionGrowParams {
            angle_threshold: 2.0,
            ..Default::default()
        };
        assert!(region_grow(&cloud, &bad).is_err());
    }

    #[test]
    fn small_regions_are_dropped() {
        let cloud = estimate_normals(&PointCloud::from_points(grid_plane(10, 0.002, 0.5)), 8).unwrap();
        assert!(region_grow(&cloud, &RegionGrowParams::default()).unwrap().is_empty());
    }
}
