//! Serial 6-DoF arm: Denavit-Hartenberg kinematics, capsule collision
//! geometry, damped-least-squares inverse kinematics and the roll-sampled
//! reachability score.

mod collision;
mod ik;
mod reach;

use nalgebra::{Isometry3, Matrix3, Matrix6, Rotation3, Translation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::scene::Pose;

pub use collision::{check_collision, Capsule, CollisionWorld, Contact, Obstacle};
pub use ik::{ik_solve, GoalPose, IkParams, IkResult, IkStatus};
pub use reach::{reachability_map, reachability_score, theta_sample, theta_seed, ReachParams, ReachQuery, N_THETA};

pub const DOF: usize = 6;

/// One row of the standard DH convention:
/// `T = Rz(q + theta_offset) * Tz(d) * Tx(a) * Rx(alpha)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub alpha: f64,
    pub d: f64,
    pub theta_offset: f64,
}

/// Capsule rigidly attached to a link frame. Link 0 is the base; link `i`
/// is the frame after joint `i`. The hand is attached to link 6.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkCapsule {
    pub link: usize,
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub name: String,
    pub dh: Vec<DhRow>,
    /// `[min, max]` per joint, radians.
    pub joint_limits: Vec<[f64; 2]>,
    pub capsules: Vec<LinkCapsule>,
    /// Flange (link 6) to cup tip.
    pub tool: Pose,
    pub home_joints: Vec<f64>,
    /// Robot base in the world frame.
    pub base_pose: Pose,
    /// Link pairs exempt from the self-collision check, in addition to
    /// adjacent links.
    #[serde(default)]
    pub self_collision_ignore: Vec<[usize; 2]>,
}

/// Joint vector.
pub type Joints = [f64; DOF];

/// Rotation and origin of a frame in the robot base frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub rot: Matrix3<f64>,
    pub pos: Vec3,
}

impl Frame {
    pub fn identity() -> Self {
        Frame {
            rot: Matrix3::identity(),
            pos: Vec3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rot * p + self.pos
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        let r = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rot));
        Isometry3::from_parts(Translation3::from(self.pos), r)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Frame {
            rot: *iso.rotation.to_rotation_matrix().matrix(),
            pos: iso.translation.vector,
        }
    }
}

impl RobotModel {
    /// Generic arm with a spherical wrist and a reach of about 0.9 m,
    /// mounted beside the default bin.
    pub fn reference() -> Self {
        use std::f64::consts::{FRAC_PI_2, PI};
        let row = |a, alpha, d, theta_offset| DhRow {
            a,
            alpha,
            d,
            theta_offset,
        };
        let cap = |link, a, b, radius| LinkCapsule { link, a, b, radius };
        RobotModel {
            name: "reference-6dof".into(),
            dh: vec![
                row(0.05, -FRAC_PI_2, 0.40, 0.0),
                row(0.40, 0.0, 0.0, -FRAC_PI_2),
                row(0.03, -FRAC_PI_2, 0.0, 0.0),
                row(0.0, FRAC_PI_2, 0.38, 0.0),
                row(0.0, -FRAC_PI_2, 0.0, 0.0),
                row(0.0, 0.0, 0.08, 0.0),
            ],
            joint_limits: vec![
                [-170f64.to_radians(), 170f64.to_radians()],
                [-90f64.to_radians(), 135f64.to_radians()],
                [-120f64.to_radians(), 150f64.to_radians()],
                [-PI, PI],
                [-125f64.to_radians(), 125f64.to_radians()],
                [-2.0 * PI, 2.0 * PI],
            ],
            capsules: vec![
                cap(0, [0.0, 0.0, 0.0], [0.0, 0.0, 0.25], 0.08),
                cap(1, [-0.05, 0.0, 0.0], [0.0, 0.0, 0.0], 0.07),
                cap(2, [-0.40, 0.0, 0.0], [0.0, 0.0, 0.0], 0.06),
                cap(3, [0.0, 0.0, 0.0], [0.0, 0.0, 0.28], 0.05),
                cap(6, [0.0, 0.0, -0.08], [0.0, 0.0, 0.0], 0.04),
                // Hand body and cup stem; both stop short of the cup tip.
                cap(6, [0.0, 0.0, 0.0], [0.0, 0.0, 0.06], 0.035),
                cap(6, [0.03, 0.0, 0.06], [0.03, 0.0, 0.09], 0.012),
            ],
            tool: Pose::translation(Vec3::new(0.03, 0.0, 0.12)),
            home_joints: vec![0.0, 0.2, 0.4, 0.0, FRAC_PI_2 - 0.6, 0.0],
            base_pose: Pose::translation(Vec3::new(-0.55, 0.0, 0.0)),
            self_collision_ignore: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dh.len() != DOF || self.joint_limits.len() != DOF || self.home_joints.len() != DOF {
            return bad(format!("robot `{}` must have {DOF} joints", self.name));
        }
        for (i, [lo, hi]) in self.joint_limits.iter().enumerate() {
            if !(lo < hi) {
                return bad(format!("joint {i} limits are not ordered"));
            }
            if !(lo..=hi).contains(&&self.home_joints[i]) {
                return bad(format!("home joint {i} outside its limits"));
            }
        }
        for c in &self.capsules {
            if !(c.radius > 0.0) || c.link > DOF {
                return bad(format!("invalid capsule {c:?}"));
            }
        }
        Ok(())
    }

    pub fn home(&self) -> Joints {
        let mut q = [0.0; DOF];
        q.copy_from_slice(&self.home_joints);
        q
    }

    pub fn within_limits(&self, q: &Joints) -> bool {
        q.iter().zip(&self.joint_limits).all(|(v, [lo, hi])| (lo..=hi).contains(&v))
    }

    /// Brings each joint into its limits, preferring an equivalent angle
    /// (shifted by a full turn) over clamping.
    pub fn clamp(&self, q: &mut Joints) {
        use std::f64::consts::TAU;
        for (v, [lo, hi]) in q.iter_mut().zip(&self.joint_limits) {
            if *v > *hi && *v - TAU >= *lo {
                *v -= TAU;
            } else if *v < *lo && *v + TAU <= *hi {
                *v += TAU;
            }
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Base frame followed by the six link frames, in the base frame.
    pub fn link_frames(&self, q: &Joints) -> [Frame; DOF + 1] {
        let mut frames = [Frame::identity(); DOF + 1];
        let mut cur = Frame::identity();
        for (i, row) in self.dh.iter().enumerate() {
            let (st, ct) = (q[i] + row.theta_offset).sin_cos();
            let (sa, ca) = row.alpha.sin_cos();
            let r = Matrix3::new(ct, -st * ca, st * sa, st, ct * ca, -ct * sa, 0.0, sa, ca);
            let t = Vec3::new(row.a * ct, row.a * st, row.d);
            cur = Frame {
                pos: cur.pos + cur.rot * t,
                rot: cur.rot * r,
            };
            frames[i + 1] = cur;
        }
        frames
    }

    fn tool_frame(&self) -> Frame {
        Frame::from_isometry(&self.tool.to_isometry())
    }

    /// Cup-tip pose in the base frame.
    pub fn forward_kinematics(&self, q: &Joints) -> Frame {
        let flange = self.link_frames(q)[DOF];
        let tool = self.tool_frame();
        Frame {
            rot: flange.rot * tool.rot,
            pos: flange.apply(&tool.pos),
        }
    }

    /// Geometric Jacobian of the cup tip: rows 0..3 linear, 3..6 angular.
    pub fn jacobian(&self, q: &Joints) -> (Frame, Matrix6<f64>) {
        let frames = self.link_frames(q);
        let tool = self.tool_frame();
        let tip = Frame {
            rot: frames[DOF].rot * tool.rot,
            pos: frames[DOF].apply(&tool.pos),
        };
        let mut j = Matrix6::zeros();
        for i in 0..DOF {
            let z = frames[i].rot.column(2).into_owned();
            let v = z.cross(&(tip.pos - frames[i].pos));
            j.fixed_view_mut::<3, 1>(0, i).copy_from(&v);
            j.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        (tip, j)
    }

    /// Upper bound on the distance from the shoulder axis point `(0, 0, d1)`
    /// to the wrist center, when the wrist is spherical.
    pub(crate) fn wrist_reach(&self) -> Option<f64> {
        let w = &self.dh;
        let spherical = w[3].a == 0.0 && w[4].a == 0.0 && w[4].d == 0.0 && w[5].a == 0.0;
        spherical.then(|| w[0].a.abs() + w[1].a.abs() + w[1].d.abs() + w[2].a.hypot(w[3].d) + w[2].d.abs())
    }

    /// Loose bound on the cup-tip distance from `(0, 0, d1)`.
    pub fn max_reach(&self) -> f64 {
        let t = self.tool.translation;
        self.dh[0].a.abs()
            + self.dh[1..].iter().map(|r| r.a.hypot(r.d)).sum::<f64>()
            + Vec3::new(t[0], t[1], t[2]).norm()
    }

    /// World pose of the robot base.
    pub fn base(&self) -> Isometry3<f64> {
        self.base_pose.to_isometry()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: RobotModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Independent chain evaluation with plain 4x4 arrays.
    fn chain(model: &RobotModel, q: &Joints) -> [[f64; 4]; 4] {
        let mul = |a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]| {
            let mut c = [[0.0; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
                }
            }
            c
        };
        let rz = |t: f64| [[t.cos(), -t.sin(), 0.0, 0.0], [t.sin(), t.cos(), 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        let rx = |t: f64| [[1.0, 0.0, 0.0, 0.0], [0.0, t.cos(), -t.sin(), 0.0], [0.0, t.sin(), t.cos(), 0.0], [0.0, 0.0, 0.0, 1.0]];
        let tr = |x: f64, y: f64, z: f64| [[1.0, 0.0, 0.0, x], [0.0, 1.0, 0.0, y], [0.0, 0.0, 1.0, z], [0.0, 0.0, 0.0, 1.0]];
        let mut m = tr(0.0, 0.0, 0.0);
        for (i, r) in model.dh.iter().enumerate() {
            m = mul(&m, &rz(q[i] + r.theta_offset));
            m = mul(&m, &tr(0.0, 0.0, r.d));
            m = mul(&m, &tr(r.a, 0.0, 0.0));
            m = mul(&m, &rx(r.alpha));
        }
        let t = model.tool.translation;
        mul(&m, &tr(t[0], t[1], t[2]))
    }

    #[test]
    fn zero_pose_by_hand() {
        // Upper arm vertical, forearm and hand along +x.
        let m = RobotModel::reference();
        let f = m.link_frames(&[0.0; 6]);
        assert!((f[6].pos - Vec3::new(0.51, 0.0, 0.83)).norm() < 1e-12);
        assert!((f[6].rot.column(2) - Vec3::x()).norm() < 1e-12);
        assert!((f[2].pos - Vec3::new(0.05, 0.0, 0.80)).norm() < 1e-12);
    }

    #[test]
    fn home_pose_points_down() {
        let m = RobotModel::reference();
        let tip = m.forward_kinematics(&m.home());
        let c = chain(&m, &m.home());
        for i in 0..3 {
            assert!((tip.pos[i] - c[i][3]).abs() < 1e-12);
            for j in 0..3 {
                assert!((tip.rot[(i, j)] - c[i][j]).abs() < 1e-12);
            }
        }
        assert!((tip.rot.column(2) + Vec3::z()).norm() < 1e-12);
        // Documented home tip position.
        assert!((tip.pos - Vec3::new(0.49004, 0.0, 0.40223)).norm() < 1e-4, "{}", tip.pos);
    }

    #[test]
    fn fk_matches_independent_chain() {
        let m = RobotModel::reference();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let q: Joints = std::array::from_fn(|i| rng.random_range(m.joint_limits[i][0]..m.joint_limits[i][1]));
            let tip = m.forward_kinematics(&q);
            let c = chain(&m, &q);
            for i in 0..3 {
                assert!((tip.pos[i] - c[i][3]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn planar_two_link_reduction() {
        let mut m = RobotModel::reference();
        for r in &mut m.dh {
            *r = DhRow {
                a: 0.0,
                alpha: 0.0,
                d: 0.0,
                theta_offset: 0.0,
            };
        }
        m.dh[0].a = 0.3;
        m.dh[1].a = 0.2;
        m.dh[2].d = 0.1;
        m.tool = Pose::identity();
        let tip = m.forward_kinematics(&[0.0; 6]);
        assert!((tip.pos - Vec3::new(0.5, 0.0, 0.1)).norm() < 1e-15);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = RobotModel::reference();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let q: Joints = std::array::from_fn(|i| rng.random_range(m.joint_limits[i][0]..m.joint_limits[i][1]));
            let (tip, j) = m.jacobian(&q);
            let h = 1e-6;
            for k in 0..6 {
                let (mut qp, mut qm) = (q, q);
                qp[k] += h;
                qm[k] -= h;
                let (fp, fm) = (m.forward_kinematics(&qp), m.forward_kinematics(&qm));
                let dv = (fp.pos - fm.pos) / (2.0 * h);
                let w = fp.rot * fm.rot.transpose();
                let dr = Vec3::new(w[(2, 1)] - w[(1, 2)], w[(0, 2)] - w[(2, 0)], w[(1, 0)] - w[(0, 1)]) / (4.0 * h);
                for r in 0..3 {
                    assert!((dv[r] - j[(r, k)]).abs() < 1e-6);
                    assert!((dr[r] - j[(r + 3, k)]).abs() < 1e-6);
                }
            }
            assert!((tip.pos - m.forward_kinematics(&q).pos).norm() < 1e-15);
        }
    }

    #[test]
    fn validation_and_json() {
        let m = RobotModel::reference();
        m.validate().unwrap();
        let back = RobotModel::from_json(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(m, back);
        let mut bad = m.clone();
        bad.joint_limits[2] = [1.0, -1.0];
        assert!(bad.validate().is_err());
        let mut bad = m;
        bad.dh.pop();
        assert!(bad.validate().is_err());
    }
}
