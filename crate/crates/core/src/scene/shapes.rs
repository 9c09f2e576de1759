//! Solid primitives in their local frames: ray casting, containment,
//! distance and bounds.

use nalgebra::{Isometry3, Point3, Quaternion, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

const RAY_EPS: f64 = 1e-12;

/// Rigid transform stored as a translation and a unit quaternion
/// `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub translation: [f64; 3],
    pub rotation: [f64; 4],
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            translation: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let q = iso.rotation.quaternion();
        Pose {
            translation: [iso.translation.x, iso.translation.y, iso.translation.z],
            rotation: [q.w, q.i, q.j, q.k],
        }
    }

    pub fn from_parts(t: Vec3, r: UnitQuaternion<f64>) -> Self {
        Self::from_isometry(&Isometry3::from_parts(Translation3::from(t), r))
    }

    pub fn translation(t: Vec3) -> Self {
        Self::from_parts(t, UnitQuaternion::identity())
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        let [w, x, y, z] = self.rotation;
        let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        let [tx, ty, tz] = self.translation;
        Isometry3::from_parts(Translation3::new(tx, ty, tz), q)
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a Vec3>) -> Option<Aabb> {
        let mut it = pts.into_iter();
        let first = *it.next()?;
        let mut b = Aabb {
            min: first,
            max: first,
        };
        for p in it {
            b.min = b.min.inf(p);
            b.max = b.max.sup(p);
        }
        Some(b)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    /// Strict overlap of the xy footprints.
    pub fn overlaps_xy(&self, other: &Aabb) -> bool {
        self.min.x < other.max.x
            && other.min.x < self.max.x
            && self.min.y < other.max.y
            && other.min.y < self.max.y
    }

    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.min.x && x <= self.max.x && y >= self.min.y && y <= self.max.y
    }

    /// Entry parameter of the ray `o + t d` into the box, if it hits for
    /// some `t >= 0`.
    pub fn ray_entry(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if d[a].abs() < 1e-300 {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d[a];
            let (mut ta, mut tb) = ((self.min[a] - o[a]) * inv, (self.max[a] - o[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

/// Triangle of a closed, outward-oriented (counter-clockwise seen from
/// outside) mesh.
pub type Triangle = [[f64; 3]; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapePrimitive {
    /// Full edge lengths along local x, y, z; centered at the origin.
    Box { extents: [f64; 3] },
    /// Axis along local z, centered at the origin.
    Cylinder { radius: f64, height: f64 },
    Sphere { radius: f64 },
    Mesh { triangles: Vec<Triangle> },
}

impl ShapePrimitive {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        let ok = match self {
            ShapePrimitive::Box { extents } => extents.iter().all(|&e| positive(e)),
            ShapePrimitive::Cylinder { radius, height } => positive(*radius) && positive(*height),
            ShapePrimitive::Sphere { radius } => positive(*radius),
            ShapePrimitive::Mesh { triangles } => return validate_mesh(triangles),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "shape dimensions must be positive: {self:?}"
            )))
        }
    }

    pub fn local_aabb(&self) -> Aabb {
        match self {
            ShapePrimitive::Box { extents } => {
                let h = Vec3::from(*extents) * 0.5;
                Aabb { min: -h, max: h }
            }
            ShapePrimitive::Cylinder { radius, height } => {
                let h = Vec3::new(*radius, *radius, height * 0.5);
                Aabb { min: -h, max: h }
            }
            ShapePrimitive::Sphere { radius } => {
                let h = Vec3::repeat(*radius);
                Aabb { min: -h, max: h }
            }
            ShapePrimitive::Mesh { triangles } => {
                let pts: Vec<Vec3> = triangles.iter().flatten().map(|v| Vec3::from(*v)).collect();
                Aabb::from_points(&pts).unwrap_or(Aabb {
                    min: Vec3::zeros(),
                    max: Vec3::zeros(),
                })
            }
        }
    }

    /// Tight world-space bounds under `pose`.
    pub fn world_aabb(&self, pose: &Isometry3<f64>) -> Aabb {
        let c = pose.translation.vector;
        let r = pose.rotation.to_rotation_matrix();
        match self {
            ShapePrimitive::Box { extents } => {
                let h = Vec3::from(*extents) * 0.5;
                let m = r.matrix().abs();
                let e = m * h;
                Aabb {
                    min: c - e,
                    max: c + e,
                }
            }
            ShapePrimitive::Cylinder { radius, height } => {
                let axis = r * Vec3::z();
                let e = Vec3::from_fn(|i, _| {
                    axis[i].abs() * height * 0.5 + radius * (1.0 - axis[i] * axis[i]).max(0.0).sqrt()
                });
                Aabb {
                    min: c - e,
                    max: c + e,
                }
            }
            ShapePrimitive::Sphere { radius } => Aabb {
                min: c - Vec3::repeat(*radius),
                max: c + Vec3::repeat(*radius),
            },
            ShapePrimitive::Mesh { triangles } => {
                let pts: Vec<Vec3> = triangles
                    .iter()
                    .flatten()
                    .map(|v| pose * Point3::from(Vec3::from(*v)))
                    .map(|p| p.coords)
                    .collect();
                Aabb::from_points(&pts).unwrap_or(Aabb { min: c, max: c })
            }
        }
    }

    /// Nearest intersection parameter `t > 0` of the local ray `o + t d`.
    pub fn ray_local(&self, o: &Vec3, d: &Vec3) -> Option<f64> {
        match self {
            ShapePrimitive::Box { .. } => {
                let b = self.local_aabb();
                let t = b.ray_entry(o, d)?;
                (t > RAY_EPS).then_some(t)
            }
            ShapePrimitive::Sphere { radius } => {
                let a = d.norm_squared();
                let b = o.dot(d);
                let c = o.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                let t0 = (-b - s) / a;
                let t1 = (-b + s) / a;
                [t0, t1].into_iter().find(|&t| t > RAY_EPS)
            }
            ShapePrimitive::Cylinder { radius, height } => ray_cylinder(o, d, *radius, *height),
            ShapePrimitive::Mesh { triangles } => {
                let b = self.local_aabb();
                b.ray_entry(o, d)?;
                let mut best: Option<f64> = None;
                for tri in triangles {
                    if let Some(t) = ray_triangle(o, d, tri) {
                        if t > RAY_EPS && best.is_none_or(|b| t < b) {
                            best = Some(t);
                        }
                    }
                }
                best
            }
        }
    }

    /// Point containment in the closed solid (local frame).
    pub fn contains_local(&self, p: &Vec3) -> bool {
        match self {
            ShapePrimitive::Box { extents } => {
                (0..3).all(|a| p[a].abs() <= extents[a] * 0.5)
            }
            ShapePrimitive::Cylinder { radius, height } => {
                p.z.abs() <= height * 0.5 && p.x * p.x + p.y * p.y <= radius * radius
            }
            ShapePrimitive::Sphere { radius } => p.norm_squared() <= radius * radius,
            ShapePrimitive::Mesh { triangles } => {
                if !self.local_aabb().contains_xy(p.x, p.y) {
                    return false;
                }
                // Parity along an oblique direction avoids most edge hits.
                let d = Vec3::new(0.5773, 0.5774, 0.5775);
                let crossings = triangles
                    .iter()
                    .filter(|tri| ray_triangle(p, &d, tri).is_some_and(|t| t > 0.0))
                    .count();
                crossings % 2 == 1
            }
        }
    }

    /// Euclidean distance from a local point to the solid (0 inside).
    /// Meshes are bounded by their local box, so the value is a lower bound.
    pub fn distance_local(&self, p: &Vec3) -> f64 {
        match self {
            ShapePrimitive::Box { extents } => {
                let q = Vec3::from_fn(|i, _| (p[i].abs() - extents[i] * 0.5).max(0.0));
                q.norm()
            }
            ShapePrimitive::Cylinder { radius, height } => {
                let radial = (p.x * p.x + p.y * p.y).sqrt();
                let dr = (radial - radius).max(0.0);
                let dz = (p.z.abs() - height * 0.5).max(0.0);
                (dr * dr + dz * dz).sqrt()
            }
            ShapePrimitive::Sphere { radius } => (p.norm() - radius).max(0.0),
            ShapePrimitive::Mesh { .. } => {
                let b = self.local_aabb();
                let q = Vec3::from_fn(|i, _| (b.min[i] - p[i]).max(p[i] - b.max[i]).max(0.0));
                q.norm()
            }
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            ShapePrimitive::Box { extents } => extents.iter().product(),
            ShapePrimitive::Cylinder { radius, height } => std::f64::consts::PI * radius * radius * height,
            ShapePrimitive::Sphere { radius } => 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3),
            ShapePrimitive::Mesh { triangles } => signed_volume(triangles),
        }
    }
}

fn ray_cylinder(o: &Vec3, d: &Vec3, r: f64, h: f64) -> Option<f64> {
    let half = h * 0.5;
    let mut best: Option<f64> = None;
    let mut consider = |t: f64| {
        if t > RAY_EPS && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    let a = d.x * d.x + d.y * d.y;
    if a > 1e-300 {
        let b = o.x * d.x + o.y * d.y;
        let c = o.x * o.x + o.y * o.y - r * r;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let s = disc.sqrt();
            for t in [(-b - s) / a, (-b + s) / a] {
                let z = o.z + t * d.z;
                if z.abs() <= half {
                    consider(t);
                }
            }
        }
    }
    if d.z.abs() > 1e-300 {
        for zc in [-half, half] {
            let t = (zc - o.z) / d.z;
            let x = o.x + t * d.x;
            let y = o.y + t * d.y;
            if x * x + y * y <= r * r {
                consider(t);
            }
        }
    }
    best
}

/// Möller–Trumbore; returns the ray parameter of the hit (any sign).
fn ray_triangle(o: &Vec3, d: &Vec3, tri: &Triangle) -> Option<f64> {
    let v0 = Vec3::from(tri[0]);
    let e1 = Vec3::from(tri[1]) - v0;
    let e2 = Vec3::from(tri[2]) - v0;
    let p = d.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - v0;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = d.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

fn signed_volume(triangles: &[Triangle]) -> f64 {
    triangles
        .iter()
        .map(|t| {
            let a = Vec3::from(t[0]);
            let b = Vec3::from(t[1]);
            let c = Vec3::from(t[2]);
            a.dot(&b.cross(&c)) / 6.0
        })
        .sum()
}

fn validate_mesh(triangles: &[Triangle]) -> Result<()> {
    use std::collections::HashMap;
    if triangles.len() < 4 {
        return Err(Error::InvalidParameter("mesh needs at least 4 triangles".into()));
    }
    // Every directed edge must appear exactly once and its reverse exactly once.
    let key = |v: &[f64; 3]| v.map(f64::to_bits);
    let mut edges: HashMap<([u64; 3], [u64; 3]), i32> = HashMap::new();
    for t in triangles {
        if t.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("mesh has non-finite vertices".into()));
        }
        for i in 0..3 {
            let a = key(&t[i]);
            let b = key(&t[(i + 1) % 3]);
            *edges.entry((a, b)).or_default() += 1;
        }
    }
    for ((a, b), n) in &edges {
        if *n != 1 || edges.get(&(*b, *a)) != Some(&1) {
            return Err(Error::InvalidParameter("mesh is not closed and consistently oriented".into()));
        }
    }
    if signed_volume(triangles) <= 0.0 {
        return Err(Error::InvalidParameter("mesh is inward-oriented or flat".into()));
    }
    Ok(())
}

/// Axis-aligned box as a closed outward mesh (12 triangles).
pub fn box_mesh(extents: [f64; 3]) -> Vec<Triangle> {
    let [hx, hy, hz] = extents.map(|e| e * 0.5);
    let v = |i: usize| -> [f64; 3] {
        [
            if i & 1 == 0 { -hx } else { hx },
            if i & 2 == 0 { -hy } else { hy },
            if i & 4 == 0 { -hz } else { hz },
        ]
    };
    // Quads (outward, counter-clockwise seen from outside).
    let quads = [
        [0, 2, 3, 1], // -z
        [4, 5, 7, 6], // +z
        [0, 1, 5, 4], // -y
        [2, 6, 7, 3], // +y
        [0, 4, 6, 2], // -x
        [1, 3, 7, 5], // +x
    ];
    quads
        .iter()
        .flat_map(|q| [[v(q[0]), v(q[1]), v(q[2])], [v(q[0]), v(q[2]), v(q[3])]])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shapes() -> Vec<ShapePrimitive> {
        vec![
            ShapePrimitive::Box { extents: [0.1, 0.06, 0.04] },
            ShapePrimitive::Cylinder { radius: 0.03, height: 0.1 },
            ShapePrimitive::Sphere { radius: 0.05 },
            ShapePrimitive::Mesh { triangles: box_mesh([0.1, 0.06, 0.04]) },
        ]
    }

    #[test]
    fn validation() {
        for s in shapes() {
            s.validate().unwrap();
        }
        assert!(ShapePrimitive::Box { extents: [0.1, 0.0, 0.1] }.validate().is_err());
        assert!(ShapePrimitive::Sphere { radius: -1.0 }.validate().is_err());
        let mut open = box_mesh([1.0, 1.0, 1.0]);
        open.pop();
        assert!(ShapePrimitive::Mesh { triangles: open }.validate().is_err());
        let inward: Vec<Triangle> = box_mesh([1.0, 1.0, 1.0])
            .into_iter()
            .map(|t| [t[0], t[2], t[1]])
            .collect();
        assert!(ShapePrimitive::Mesh { triangles: inward }.validate().is_err());
    }

    #[test]
    fn box_mesh_matches_box() {
        let b = ShapePrimitive::Box { extents: [0.1, 0.06, 0.04] };
        let m = ShapePrimitive::Mesh { triangles: box_mesh([0.1, 0.06, 0.04]) };
        assert!((m.volume() - b.volume()).abs() < 1e-15);
        let o = Vec3::new(0.01, 0.005, 1.0);
        let d = Vec3::new(0.0, 0.0, -1.0);
        let tb = b.ray_local(&o, &d).unwrap();
        let tm = m.ray_local(&o, &d).unwrap();
        assert!((tb - 0.98).abs() < 1e-12 && (tm - tb).abs() < 1e-12);
    }

    proptest! {
        // A ray hit lies on the surface: points just before are outside,
        // just after are inside.
        #[test]
        fn ray_hits_lie_on_boundary(
            o in (-0.3f64..0.3, -0.3f64..0.3, 0.2f64..0.5),
            target in (-0.05f64..0.05, -0.05f64..0.05, -0.05f64..0.05),
        ) {
            let o = Vec3::new(o.0, o.1, o.2);
            let d = Vec3::new(target.0, target.1, target.2) - o;
            for s in shapes() {
                if let Some(t) = s.ray_local(&o, &d) {
                    let before = o + d * (t - 1e-6);
                    let after = o + d * (t + 1e-6);
                    prop_assert!(!s.contains_local(&before));
                    prop_assert!(s.contains_local(&after), "{:?} t={}", s, t);
                    prop_assert!(s.distance_local(&(o + d * t)) < 1e-9);
                }
            }
        }

        #[test]
        fn distance_zero_iff_inside(p in (-0.1f64..0.1, -0.1f64..0.1, -0.1f64..0.1)) {
            let p = Vec3::new(p.0, p.1, p.2);
            for s in shapes().into_iter().take(3) {
                prop_assert_eq!(s.contains_local(&p), s.distance_local(&p) == 0.0);
            }
        }

        #[test]
        fn world_aabb_bounds_surface_samples(
            r in (-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0),
            uv in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 50),
        ) {
            let pose = Isometry3::new(Vec3::new(0.1, -0.2, 0.3), Vec3::new(r.0, r.1, r.2));
            for s in shapes() {
                let b = s.world_aabb(&pose);
                let l = s.local_aabb();
                for (a, bb, c) in &uv {
                    let p = l.min + Vec3::new(*a, *bb, *c).component_mul(&l.extents());
                    if s.contains_local(&p) {
                        let w = (pose * Point3::from(p)).coords;
                        for i in 0..3 {
                            prop_assert!(w[i] >= b.min[i] - 1e-12 && w[i] <= b.max[i] + 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pose_roundtrip() {
        let iso = Isometry3::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.3, -0.2, 0.1));
        let back = Pose::from_isometry(&iso).to_isometry();
        assert!((back.to_homogeneous() - iso.to_homogeneous()).norm() < 1e-12);
    }

    #[test]
    fn cylinder_ray_from_side_and_top() {
        let c = ShapePrimitive::Cylinder { radius: 0.03, height: 0.1 };
        let t = c.ray_local(&Vec3::new(0.0, 0.0, 1.0), &Vec3::new(0.0, 0.0, -1.0)).unwrap();
        assert!((t - 0.95).abs() < 1e-12);
        let t = c.ray_local(&Vec3::new(1.0, 0.0, 0.0), &Vec3::new(-1.0, 0.0, 0.0)).unwrap();
        assert!((t - 0.97).abs() < 1e-12);
        assert!(c.ray_local(&Vec3::new(1.0, 0.05, 0.0), &Vec3::new(-1.0, 0.0, 0.0)).is_none());
    }
}
