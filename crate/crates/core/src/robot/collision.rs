use nalgebra::Isometry3;

use super::{Frame, Joints, RobotModel, DOF};
use crate::geometry::Vec3;
use crate::scene::{Aabb, SceneDescription, ShapePrimitive};

/// Default clearance added to every distance test, meters.
pub const DEFAULT_MARGIN: f64 = 0.001;

// Golden-section iterations; leaves a bracket of 0.618^40 < 1e-8.
const GOLDEN_ITERS: usize = 40;

/// Capsule in the robot base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capsule {
    pub link: usize,
    pub a: Vec3,
    pub b: Vec3,
    pub radius: f64,
}

impl Capsule {
    fn aabb(&self, pad: f64) -> Aabb {
        let r = Vec3::repeat(self.radius + pad);
        Aabb {
            min: self.a.inf(&self.b) - r,
            max: self.a.sup(&self.b) + r,
        }
    }
}

/// Static solid in the robot base frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Obstacle {
    pub shape: ShapePrimitive,
    pub pose: Isometry3<f64>,
    inverse: Isometry3<f64>,
    aabb: Aabb,
}

impl Obstacle {
    pub fn new(shape: ShapePrimitive, pose: Isometry3<f64>) -> Self {
        Obstacle {
            aabb: shape.world_aabb(&pose),
            inverse: pose.inverse(),
            shape,
            pose,
        }
    }

    /// Axis-aligned box spanning `min..max`.
    pub fn aabb_box(min: Vec3, max: Vec3) -> Self {
        let e = max - min;
        Obstacle::new(
            ShapePrimitive::Box { extents: [e.x, e.y, e.z] },
            Isometry3::translation(0.5 * (min.x + max.x), 0.5 * (min.y + max.y), 0.5 * (min.z + max.z)),
        )
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.shape.contains_local(&(self.inverse * nalgebra::Point3::from(*p)).coords)
    }

    /// Lower bound on the distance from the segment `a..b` to the solid.
    fn segment_distance(&self, a: &Vec3, b: &Vec3) -> f64 {
        let la = (self.inverse * nalgebra::Point3::from(*a)).coords;
        let lb = (self.inverse * nalgebra::Point3::from(*b)).coords;
        if let ShapePrimitive::Sphere { radius } = self.shape {
            return (point_segment_distance(&Vec3::zeros(), &la, &lb) - radius).max(0.0);
        }
        // The distance to a convex solid is convex along the segment, so
        // golden-section search brackets the minimum; subtracting the
        // Lipschitz bound over the final bracket keeps the value a lower bound.
        let f = |t: f64| self.shape.distance_local(&(la + (lb - la) * t));
        let len = (lb - la).norm();
        let g = 0.5 * (5f64.sqrt() - 1.0);
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut x1 = hi - g * (hi - lo);
        let mut x2 = lo + g * (hi - lo);
        let (mut f1, mut f2) = (f(x1), f(x2));
        let mut best = f(0.0).min(f(1.0)).min(f1).min(f2);
        for _ in 0..GOLDEN_ITERS {
            if best == 0.0 {
                return 0.0;
            }
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - g * (hi - lo);
                f1 = f(x1);
                best = best.min(f1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + g * (hi - lo);
                f2 = f(x2);
                best = best.min(f2);
            }
        }
        (best - len * (hi - lo)).max(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollisionWorld {
    pub obstacles: Vec<Obstacle>,
    pub margin: f64,
}

impl Default for CollisionWorld {
    fn default() -> Self {
        CollisionWorld {
            obstacles: Vec::new(),
            margin: DEFAULT_MARGIN,
        }
    }
}

impl CollisionWorld {
    pub fn push(&mut self, obstacle: Obstacle) {
        self.obstacles.push(obstacle);
    }

    /// Bin walls, floor and every object of a scene, moved into the frame
    /// of a robot whose base sits at `base` in the world.
    pub fn from_scene(scene: &SceneDescription, base: &Isometry3<f64>) -> Self {
        let inv = base.inverse();
        let mut world = CollisionWorld::default();
        for (shape, pose) in scene.bin.boxes() {
            world.push(Obstacle::new(shape, inv * pose));
        }
        for obj in &scene.objects {
            world.push(Obstacle::new(obj.shape.clone(), inv * obj.pose.to_isometry()));
        }
        world
    }
}

/// Outcome of a collision query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contact {
    Free,
    /// Robot capsule index against obstacle index.
    World { capsule: usize, obstacle: usize },
    /// Two robot capsule indices.
    SelfContact { a: usize, b: usize },
}

impl Contact {
    pub fn is_free(&self) -> bool {
        matches!(self, Contact::Free)
    }
}

impl RobotModel {
    /// All collision capsules at configuration `q`, in the base frame.
    pub fn capsules_at(&self, q: &Joints) -> Vec<Capsule> {
        let frames = self.link_frames(q);
        self.capsules
            .iter()
            .map(|c| {
                let f = &frames[c.link];
                Capsule {
                    link: c.link,
                    a: f.apply(&Vec3::from(c.a)),
                    b: f.apply(&Vec3::from(c.b)),
                    radius: c.radius,
                }
            })
            .collect()
    }

    fn self_pair_checked(&self, a: usize, b: usize) -> bool {
        a.abs_diff(b) >= 2
            && !self
                .self_collision_ignore
                .iter()
                .any(|&[x, y]| (x, y) == (a, b) || (x, y) == (b, a))
    }
}

/// True when the flange-mounted capsules, placed with the flange at
/// `flange`, penetrate the world by more than `slack` beyond the margin.
/// Any configuration whose flange lies within `slack` of `flange` (for every
/// capsule point) then collides as well.
pub(crate) fn hand_blocked(model: &RobotModel, world: &CollisionWorld, flange: &Frame, slack: f64) -> bool {
    model.capsules.iter().filter(|c| c.link == DOF).any(|c| {
        let cap = Capsule {
            link: c.link,
            a: flange.apply(&Vec3::from(c.a)),
            b: flange.apply(&Vec3::from(c.b)),
            radius: c.radius,
        };
        let bb = cap.aabb(world.margin);
        world
            .obstacles
            .iter()
            .any(|o| overlaps(&bb, &o.aabb) && o.segment_distance(&cap.a, &cap.b) + slack < cap.radius + world.margin)
    })
}

/// Conservative collision test: may report contact up to the world margin
/// early, never misses one.
pub fn check_collision(model: &RobotModel, world: &CollisionWorld, q: &Joints) -> Contact {
    let caps = model.capsules_at(q);
    for i in 0..caps.len() {
        for j in i + 1..caps.len() {
            let (ci, cj) = (&caps[i], &caps[j]);
            if !model.self_pair_checked(ci.link, cj.link) {
                continue;
            }
            if segment_segment_distance(&ci.a, &ci.b, &cj.a, &cj.b) < ci.radius + cj.radius + world.margin {
                return Contact::SelfContact { a: i, b: j };
            }
        }
    }
    for (i, c) in caps.iter().enumerate() {
        let bb = c.aabb(world.margin);
        for (k, o) in world.obstacles.iter().enumerate() {
            if !overlaps(&bb, &o.aabb) {
                continue;
            }
            if o.segment_distance(&c.a, &c.b) < c.radius + world.margin {
                return Contact::World { capsule: i, obstacle: k };
            }
        }
    }
    Contact::Free
}

fn overlaps(a: &Aabb, b: &Aabb) -> bool {
    (0..3).all(|i| a.min[i] <= b.max[i] && b.min[i] <= a.max[i])
}

pub(crate) fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let l2 = ab.norm_squared();
    let t = if l2 > 0.0 { ((p - a).dot(&ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (a + ab * t - p).norm()
}

/// Closest distance between segments `p1..q1` and `p2..q2`.
pub(crate) fn segment_segment_distance(p1: &Vec3, q1: &Vec3, p2: &Vec3, q2: &Vec3) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let eps = 1e-18;
    let (s, t);
    if a <= eps && e <= eps {
        return r.norm();
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > eps { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p1 + d1 * s) - (p2 + d2 * t)).norm()
}
