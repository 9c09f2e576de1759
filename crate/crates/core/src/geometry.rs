//! Back-projection, PCA normals, local frames and total-least-squares planes.

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Unit, Vector3};

use crate::error::{Error, Result};
use crate::raster::{DepthImage, SegmentationMask};
use crate::spatial::PointIndex;

pub type Vec3 = Vector3<f64>;

/// Neighbor count used for normal estimation when none is configured.
pub const DEFAULT_NORMAL_K: usize = 30;

/// Camera-frame points with optional per-point attributes.
///
/// A point whose neighborhood was degenerate during normal estimation has a
/// NaN curvature; its normal is then only the view direction and must not
/// be trusted (see [`PointCloud::normal_is_valid`]).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    /// Surface variation `λ0 / (λ0 + λ1 + λ2)` from the normal PCA.
    pub curvature: Option<Vec<f64>>,
    /// Source pixel `(row, col)` of each point.
    pub pixel_index: Option<Vec<(usize, usize)>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vec3>) -> Self {
        PointCloud {
            points,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn normal_is_valid(&self, i: usize) -> bool {
        match (&self.normals, &self.curvature) {
            (Some(_), Some(c)) => c[i].is_finite(),
            (Some(_), None) => true,
            _ => false,
        }
    }

    /// Restricts the cloud to the given point indices (attributes follow).
    pub fn subset(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
            curvature: self
                .curvature
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
            pixel_index: self
                .pixel_index
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i]).collect()),
        }
    }
}

/// Plane `normal · x = offset` with the summed point-to-plane distance of
/// the points it was fitted to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFit {
    pub normal: Vec3,
    pub offset: f64,
    pub residual: f64,
    pub centroid: Vec3,
}

impl PlaneFit {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn project(&self, p: &Vec3) -> Vec3 {
        p - self.normal * self.signed_distance(p)
    }
}

/// One point per valid pixel (optionally restricted to `label` in `mask`):
/// `x = (u - cx) d / fx`, `y = (v - cy) d / fy`, `z = d`.
pub fn backproject(
    depth: &DepthImage,
    mask: Option<&SegmentationMask>,
    label: Option<u16>,
) -> Result<PointCloud> {
    depth.validate()?;
    if let Some(m) = mask {
        if m.width != depth.width || m.height != depth.height {
            return Err(Error::DimensionMismatch(format!(
                "segmentation {}x{} vs depth {}x{}",
                m.width, m.height, depth.width, depth.height
            )));
        }
    }
    let k = &depth.intrinsics;
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    for row in 0..depth.height {
        for col in 0..depth.width {
            let idx = row * depth.width + col;
            let d = depth.data[idx];
            if d <= 0.0 {
                continue;
            }
            if let (Some(m), Some(l)) = (mask, label) {
                if m.labels[idx] != l {
                    continue;
                }
            }
            points.push(Vec3::new(
                (col as f64 - k.cx) * d / k.fx,
                (row as f64 - k.cy) * d / k.fy,
                d,
            ));
            pixels.push((row, col));
        }
    }
    Ok(PointCloud {
        points,
        normals: None,
        curvature: None,
        pixel_index: Some(pixels),
    })
}

/// Covariance eigen-decomposition of a point set, eigenvalues ascending.
pub(crate) struct Pca {
    pub centroid: Vec3,
    pub values: [f64; 3],
    pub vectors: [Vec3; 3],
}

pub(crate) fn pca<'a>(points: impl Iterator<Item = &'a Vec3> + Clone) -> Option<Pca> {
    let mut n = 0usize;
    let mut sum = Vec3::zeros();
    for p in points.clone() {
        sum += p;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let centroid = sum / n as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.map(|i| eig.eigenvalues[i].max(0.0));
    let vectors = order.map(|i| eig.eigenvectors.column(i).normalize());
    Some(Pca {
        centroid,
        values,
        vectors,
    })
}

/// Fills `normals` and `curvature` from the PCA of each point's `k`
/// nearest neighbors (plus the point itself). Normals face the camera at
/// the origin: `n · p < 0`.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    if k < 3 {
        return Err(Error::InvalidParameter(format!(
            "normal estimation needs k >= 3, got {k}"
        )));
    }
    if cloud.len() < k + 1 {
        return Err(Error::TooFewPoints {
            needed: k + 1,
            got: cloud.len(),
        });
    }
    let index = PointIndex::new(&cloud.points);
    let mut normals = Vec::with_capacity(cloud.len());
    let mut curvature = Vec::with_capacity(cloud.len());
    for p in &cloud.points {
        let nb = index.knn(p, k + 1);
        let view = -p.normalize();
        let fit = pca(nb.iter().map(|&i| &cloud.points[i]));
        match fit {
            Some(f) if is_surface_like(&f.values) => {
                let mut n = f.vectors[0];
                if n.dot(p) > 0.0 {
                    n = -n;
                }
                normals.push(n);
                let total = f.values.iter().sum::<f64>();
                curvature.push(f.values[0] / total);
            }
            _ => {
                normals.push(if view.iter().all(|v| v.is_finite()) {
                    view
                } else {
                    Vec3::z()
                });
                curvature.push(f64::NAN);
            }
        }
    }
    Ok(PointCloud {
        points: cloud.points.clone(),
        normals: Some(normals),
        curvature: Some(curvature),
        pixel_index: cloud.pixel_index.clone(),
    })
}

// A normal is defined only when the neighborhood spans two directions.
fn is_surface_like(values: &[f64; 3]) -> bool {
    values[2] > 1e-24 && values[1] > 1e-10 * values[2]
}

/// Total-least-squares plane through `points`; the residual is the plain
/// sum of point-to-plane distances.
///
/// The normal sign is canonical: the plane offset is made non-negative, and
/// for planes through the origin the largest normal component is positive.
pub fn fit_plane(points: &[Vec3]) -> Result<PlaneFit> {
    if points.len() < 3 {
        return Err(Error::DegenerateFit("fewer than 3 points"));
    }
    let f = pca(points.iter()).ok_or(Error::DegenerateFit("empty point set"))?;
    if !is_surface_like(&f.values) {
        return Err(Error::DegenerateFit("points are coincident or collinear"));
    }
    let mut normal = f.vectors[0];
    let mut offset = normal.dot(&f.centroid);
    let flip = if offset.abs() > 1e-12 {
        offset < 0.0
    } else {
        normal[normal.iamax()] < 0.0
    };
    if flip {
        normal = -normal;
        offset = -offset;
    }
    let residual = points
        .iter()
        .map(|p| (normal.dot(p) - offset).abs())
        .sum();
    Ok(PlaneFit {
        normal,
        offset,
        residual,
        centroid: f.centroid,
    })
}

/// Rotation taking `normal` to `+z`. The local x axis is the projection of
/// camera `+x` onto the plane (camera `+y` when `normal` is nearly along x).
pub fn local_frame(normal: &Vec3) -> Rotation3<f64> {
    let z = normal.normalize();
    let reference = if z.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let x = (reference - z * reference.dot(&z)).normalize();
    let y = z.cross(&x);
    // Rows are the local axes expressed in the source frame.
    Rotation3::from_matrix_unchecked(Matrix3::from_rows(&[
        x.transpose(),
        y.transpose(),
        z.transpose(),
    ]))
}

/// Unit vector or an error if `v` has (near) zero length.
pub fn unit(v: Vec3) -> Result<Unit<Vec3>> {
    Unit::try_new(v, 1e-12).ok_or_else(|| Error::InvalidParameter("zero-length vector".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::CameraIntrinsics;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 300.0,
            fy: 310.0,
            cx: 127.5,
            cy: 120.0,
            width: 256,
            height: 256,
        }
    }

    #[test]
    fn principal_point_backprojects_onto_axis() {
        let k = CameraIntrinsics {
            cx: 128.0,
            cy: 100.0,
            ..intrinsics()
        };
        let mut depth = DepthImage::filled(k, 0.0).unwrap();
        depth.data[100 * 256 + 128] = 0.8;
        depth.data[100 * 256 + 128 + 100] = 1.0;
        let cloud = backproject(&depth, None, None).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points[0], Vec3::new(0.0, 0.0, 0.8));
        // col = cx + 100, fx = 300: x = 100 / 300 * 1.0
        assert!((cloud.points[1] - Vec3::new(100.0 / 300.0, 0.0, 1.0)).norm() < 1e-12);
        assert_eq!(cloud.pixel_index.as_ref().unwrap()[0], (100, 128));
    }

    #[test]
    fn pixel_one_focal_length_off_axis() {
        let k = CameraIntrinsics {
            fx: 100.0,
            cx: 50.0,
            ..intrinsics()
        };
        let mut depth = DepthImage::filled(k, 0.0).unwrap();
        let row = k.cy as usize;
        depth.data[row * 256 + 150] = 1.0;
        let cloud = backproject(&depth, None, None).unwrap();
        assert!((cloud.points[0] - Vec3::new(1.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn flat_depth_gives_planar_cloud() {
        let depth = DepthImage::filled(intrinsics(), 0.5).unwrap();
        let cloud = backproject(&depth, None, None).unwrap();
        assert_eq!(cloud.len(), 256 * 256);
        let fit = fit_plane(&cloud.points).unwrap();
        assert!(fit.residual < 1e-9, "residual {}", fit.residual);
        assert!((fit.normal.z.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn backproject_filters_label_and_checks_dims() {
        let depth = DepthImage::filled(intrinsics(), 0.5).unwrap();
        let mut seg = SegmentationMask::background(256, 256);
        seg.labels[10] = 3;
        seg.labels[20] = 3;
        seg.labels[30] = 4;
        let c = backproject(&depth, Some(&seg), Some(3)).unwrap();
        assert_eq!(c.len(), 2);
        let none = backproject(&depth, Some(&seg), Some(9)).unwrap();
        assert!(none.is_empty());
        let bad = SegmentationMask::background(10, 10);
        assert!(matches!(
            backproject(&depth, Some(&bad), Some(1)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn zero_depth_pixels_are_skipped() {
        let mut depth = DepthImage::filled(intrinsics(), 0.7).unwrap();
        depth.data[0] = 0.0;
        depth.data[5] = 0.0;
        let cloud = backproject(&depth, None, None).unwrap();
        assert_eq!(cloud.len(), 256 * 256 - 2);
    }

    proptest! {
        #[test]
        fn projection_then_backprojection_is_identity(
            col in 0usize..256, row in 0usize..256, d in 0.2f64..2.0
        ) {
            let k = intrinsics();
            let ray = k.ray(col as f64, row as f64);
            let p = Vec3::new(ray[0] * d, ray[1] * d, d);
            let (u, v) = k.project([p.x, p.y, p.z]).unwrap();
            prop_assert!((u - col as f64).abs() < 1e-9 && (v - row as f64).abs() < 1e-9);
            let mut depth = DepthImage::filled(k, 0.0).unwrap();
            depth.data[row * 256 + col] = d;
            let cloud = backproject(&depth, None, None).unwrap();
            prop_assert!((cloud.points[0] - p).norm() < 1e-9);
        }
    }

    fn plane_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = (0..n)
            .map(|_| Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.5))
            .collect();
        PointCloud::from_points(pts)
    }

    #[test]
    fn plane_normals_face_camera() {
        let cloud = estimate_normals(&plane_cloud(10_000, 1), 16).unwrap();
        let normals = cloud.normals.as_ref().unwrap();
        for n in normals {
            assert!((n - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-9, "{n:?}");
        }
        assert!(cloud.curvature.unwrap().iter().all(|c| *c < 1e-12));
    }

    #[test]
    fn sphere_normals_match_radial_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let center = Vec3::new(0.0, 0.0, 0.6);
        let pts: Vec<Vec3> = (0..10_000)
            .map(|_| {
                // Uniform on the sphere via normalized Gaussian-free rejection.
                loop {
                    let v = Vec3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    );
                    let n2 = v.norm_squared();
                    if n2 > 1e-6 && n2 <= 1.0 {
                        break center + v / n2.sqrt() * 0.1;
                    }
                }
            })
            .collect();
        let cloud = estimate_normals(&PointCloud::from_points(pts), 16).unwrap();
        let normals = cloud.normals.as_ref().unwrap();
        let mut good = 0;
        for (p, n) in cloud.points.iter().zip(normals) {
            let radial = (p - center).normalize();
            // Orientation convention may flip the far hemisphere inward.
            let cos = n.dot(&radial).abs().min(1.0);
            if cos.acos().to_degrees() < 5.0 {
                good += 1;
            }
            assert!((n.norm() - 1.0).abs() < 1e-6);
            assert!(n.dot(p) <= 0.0);
        }
        assert!(good as f64 >= 0.99 * 10_000.0, "only {good} within 5 deg");
    }

    #[test]
    fn too_few_points_for_k() {
        let cloud = PointCloud::from_points(vec![Vec3::zeros(), Vec3::x(), Vec3::y()]);
        assert!(matches!(
            estimate_normals(&cloud, 8),
            Err(Error::TooFewPoints { needed: 9, got: 3 })
        ));
        assert!(matches!(
            estimate_normals(&cloud, 2),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn coincident_neighborhood_is_flagged() {
        let mut pts = vec![Vec3::new(0.0, 0.0, 1.0); 5];
        pts.extend(plane_cloud(50, 3).points.iter().map(|p| p + Vec3::new(5.0, 0.0, 0.0)));
        let cloud = estimate_normals(&PointCloud::from_points(pts), 4).unwrap();
        assert!(!cloud.normal_is_valid(0));
        assert!(cloud.normal_is_valid(10));
        let n = cloud.normals.as_ref().unwrap()[0];
        assert!((n.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normals_are_rotation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // A wavy sheet in front of the camera.
        let pts: Vec<Vec3> = (0..2000)
            .map(|_| {
                let x: f64 = rng.random_range(-0.1..0.1);
                let y: f64 = rng.random_range(-0.1..0.1);
                Vec3::new(x, y, 0.6 + 0.02 * (20.0 * x).sin() * (15.0 * y).cos())
            })
            .collect();
        let rot = Rotation3::from_euler_angles(0.1, -0.15, 0.3);
        // Rotate about the camera origin so the view direction rotates too.
        let rotated: Vec<Vec3> = pts.iter().map(|p| rot * p).collect();
        let a = estimate_normals(&PointCloud::from_points(pts), 12).unwrap();
        let b = estimate_normals(&PointCloud::from_points(rotated), 12).unwrap();
        for (na, nb) in a.normals.unwrap().iter().zip(b.normals.unwrap().iter()) {
            let ra = rot * na;
            let err = (ra - nb).norm().min((ra + nb).norm());
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn exact_plane_fit() {
        let pts: Vec<Vec3> = (0..30)
            .map(|i| Vec3::new((i % 6) as f64 * 0.01, (i / 6) as f64 * 0.013, 0.3))
            .collect();
        let fit = fit_plane(&pts).unwrap();
        assert!((fit.normal.z.abs() - 1.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
        assert!((fit.offset.abs() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn paired_perturbations_keep_plane_and_sum_residual() {
        // Plane through (0, 0, 0.4) with a tilted normal; each grid point is
        // duplicated at +eps and -eps along the normal.
        let n = Vec3::new(0.2, -0.3, 1.0).normalize();
        let frame = local_frame(&n).inverse();
        let eps = 1e-4;
        let origin = Vec3::new(0.0, 0.0, 0.4);
        let mut pts = Vec::new();
        for i in -5..=5 {
            for j in -4..=4 {
                let base = origin + frame * Vec3::new(i as f64 * 0.01, j as f64 * 0.01, 0.0);
                pts.push(base + n * eps);
                pts.push(base - n * eps);
            }
        }
        let fit = fit_plane(&pts).unwrap();
        let aligned = if fit.normal.dot(&n) < 0.0 { -fit.normal } else { fit.normal };
        assert!((aligned - n).norm() < 1e-9);
        assert!((fit.signed_distance(&origin)).abs() < 1e-9);
        let expected = pts.len() as f64 * eps;
        assert!((fit.residual - expected).abs() < 1e-9, "{} vs {}", fit.residual, expected);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 2.0 * i as f64, 1.0)).collect();
        assert!(matches!(fit_plane(&pts), Err(Error::DegenerateFit(_))));
        assert!(matches!(fit_plane(&pts[..2]), Err(Error::DegenerateFit(_))));
    }

    fn random_patch(seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..60)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-0.05..0.05),
                    rng.random_range(-0.05..0.05),
                    0.5 + rng.random_range(-0.004..0.004),
                )
            })
            .collect()
    }

    proptest! {
        #[test]
        fn plane_residual_is_rigid_invariant(
            seed in 0u64..1000,
            r in (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0),
            t in (-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0),
        ) {
            let pts = random_patch(seed);
            let rot = Rotation3::from_euler_angles(r.0, r.1, r.2);
            let moved: Vec<Vec3> = pts.iter().map(|p| rot * p + Vec3::new(t.0, t.1, t.2)).collect();
            let a = fit_plane(&pts).unwrap().residual;
            let b = fit_plane(&moved).unwrap().residual;
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn tls_plane_beats_random_planes_in_summed_distance_spot_check() {
        // The TLS plane minimises squared distances; against random
        // candidate planes it must not lose on the summed-distance measure
        // for these near-planar patches.
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pts = random_patch(5);
        let fit = fit_plane(&pts).unwrap();
        for _ in 0..1000 {
            let n = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
            .normalize();
            let c = fit.centroid
                + Vec3::new(
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                );
            let other: f64 = pts.iter().map(|p| n.dot(&(p - c)).abs()).sum();
            assert!(fit.residual <= other + 1e-12);
        }
    }

    #[test]
    fn local_frame_maps_normal_to_z() {
        for n in [Vec3::z(), -Vec3::z(), Vec3::x(), Vec3::new(0.3, -0.2, -0.9)] {
            let r = local_frame(&n);
            assert!((r * n.normalize() - Vec3::z()).norm() < 1e-12);
            assert!((r.matrix().determinant() - 1.0).abs() < 1e-12);
        }
    }
}
