use nalgebra::{Matrix3, Matrix6, Rotation3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::collision::hand_blocked;
use super::{check_collision, CollisionWorld, Frame, Joints, RobotModel, DOF};
use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Suction pose: cup tip at `p`, approaching along `-n`, rolled by `theta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalPose {
    pub p: Vec3,
    pub n: Vec3,
    pub theta: f64,
}

impl GoalPose {
    pub fn new(p: Vec3, n: Vec3, theta: f64) -> Result<Self> {
        if (n.norm() - 1.0).abs() > 1e-9 || !p.iter().all(|v| v.is_finite()) || !theta.is_finite() {
            return Err(Error::InvalidParameter(format!("goal needs finite p and unit n, got p={p:?} n={n:?}")));
        }
        Ok(GoalPose {
            p,
            n,
            theta: theta.rem_euclid(std::f64::consts::TAU),
        })
    }

    /// Tool orientation. The tool z axis is `-n`. The roll reference is the
    /// base x axis projected onto the plane normal to z (base y when x is
    /// nearly parallel to z), and `theta` rotates it about z.
    pub fn orientation(&self) -> Matrix3<f64> {
        let z = -self.n;
        let r = if z.x.abs() < 0.99 { Vec3::x() } else { Vec3::y() };
        let x0 = (r - z * r.dot(&z)).normalize();
        let (s, c) = self.theta.sin_cos();
        let x = x0 * c + z.cross(&x0) * s;
        let y = z.cross(&x);
        Matrix3::from_columns(&[x, y, z])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkParams {
    pub damping: f64,
    pub max_iterations: usize,
    pub restarts: usize,
    pub position_tolerance: f64,
    /// Radians.
    pub orientation_tolerance: f64,
    /// An attempt is abandoned when its normalized error has not dropped
    /// by 10% over this many iterations.
    pub stagnation_window: usize,
    pub seed: u64,
}

impl Default for IkParams {
    fn default() -> Self {
        IkParams {
            damping: 0.1,
            max_iterations: 200,
            restarts: 8,
            position_tolerance: 1e-3,
            orientation_tolerance: 0.5f64.to_radians(),
            stagnation_window: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IkStatus {
    Solved,
    Unreachable,
    LimitViolation,
    Collision,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkResult {
    pub status: IkStatus,
    /// Set when solved.
    pub joints: Option<Joints>,
    pub position_error: f64,
    pub orientation_error: f64,
}

impl IkResult {
    pub fn solved(&self) -> bool {
        self.status == IkStatus::Solved
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream key for restart `restart` of the problem keyed by `key`.
pub(crate) fn restart_seed(key: u64, restart: usize) -> u64 {
    mix(mix(key) ^ restart as u64)
}

struct Attempt {
    q: Joints,
    converged: bool,
    at_limit: bool,
    position_error: f64,
    orientation_error: f64,
}

fn errors(model: &RobotModel, q: &Joints, p: &Vec3, r: &Matrix3<f64>) -> (Matrix6<f64>, Vec3, Vec3) {
    let (tip, j) = model.jacobian(q);
    let ep = p - tip.pos;
    let eo = Rotation3::from_matrix_unchecked(r * tip.rot.transpose()).scaled_axis();
    (j, ep, eo)
}

fn descend(model: &RobotModel, goal_p: &Vec3, goal_r: &Matrix3<f64>, start: Joints, params: &IkParams) -> Attempt {
    let mut q = start;
    let lambda2 = params.damping * params.damping;
    let mut checkpoint = f64::INFINITY;
    let mut last = (f64::INFINITY, f64::INFINITY);
    for it in 0..params.max_iterations {
        let (j, ep, eo) = errors(model, &q, goal_p, goal_r);
        let (pe, oe) = (ep.norm(), eo.norm());
        last = (pe, oe);
        if pe < params.position_tolerance && oe < params.orientation_tolerance {
            return Attempt {
                q,
                converged: true,
                at_limit: false,
                position_error: pe,
                orientation_error: oe,
            };
        }
        let metric = pe / params.position_tolerance + oe / params.orientation_tolerance;
        if params.stagnation_window > 0 && it % params.stagnation_window == 0 {
            if metric > 0.9 * checkpoint {
                break;
            }
            checkpoint = metric;
        }
        // Bounded task-space steps keep the linearization meaningful.
        let ep = if pe > 0.1 { ep * (0.1 / pe) } else { ep };
        let eo = if oe > 0.5 { eo * (0.5 / oe) } else { eo };
        let e = Vector6::new(ep.x, ep.y, ep.z, eo.x, eo.y, eo.z);
        // Joints that would leave their limits are frozen and the step is
        // recomputed with the remaining ones.
        let mut jm = j;
        let mut next = q;
        for _ in 0..DOF {
            let a = jm * jm.transpose() + Matrix6::identity() * lambda2;
            let Some(chol) = a.cholesky() else { break };
            let dq = jm.transpose() * chol.solve(&e);
            next = q;
            for k in 0..DOF {
                next[k] += dq[k];
            }
            let before = next;
            model.clamp(&mut next);
            let mut frozen = false;
            for k in 0..DOF {
                if next[k] != before[k] && (next[k] - before[k]).abs() < 1.0 && jm.column(k).norm() > 0.0 {
                    jm.column_mut(k).fill(0.0);
                    frozen = true;
                }
            }
            if !frozen {
                break;
            }
        }
        q = next;
    }
    let at_limit = q
        .iter()
        .zip(&model.joint_limits)
        .any(|(v, [lo, hi])| (v - lo).abs() < 1e-9 || (v - hi).abs() < 1e-9);
    Attempt {
        q,
        converged: false,
        at_limit,
        position_error: last.0,
        orientation_error: last.1,
    }
}

/// Cup-tip reachability test from the wrist geometry alone.
fn wrist_out_of_reach(model: &RobotModel, goal_p: &Vec3, goal_r: &Matrix3<f64>) -> bool {
    let Some(reach) = model.wrist_reach() else {
        let shoulder = Vec3::new(0.0, 0.0, model.dh[0].d);
        return (goal_p - shoulder).norm() > model.max_reach();
    };
    let tool = model.tool.to_isometry();
    let tool_r = tool.rotation.to_rotation_matrix();
    let flange_r = goal_r * tool_r.matrix().transpose();
    let flange_p = goal_p - flange_r * tool.translation.vector;
    let last = &model.dh[DOF - 1];
    let z5 = flange_r * Vec3::new(0.0, last.alpha.sin(), last.alpha.cos());
    let wrist = flange_p - z5 * last.d;
    (wrist - Vec3::new(0.0, 0.0, model.dh[0].d)).norm() > reach + 1e-9
}

/// The hand of every converged solution lies within the solver tolerances
/// of the goal hand, so a goal hand that collides by more than that slack
/// makes all attempts collide.
fn hand_blocked_at_goal(
    model: &RobotModel,
    world: &CollisionWorld,
    goal_p: &Vec3,
    goal_r: &Matrix3<f64>,
    params: &IkParams,
) -> bool {
    let tool = Frame::from_isometry(&model.tool.to_isometry());
    let flange_rot = goal_r * tool.rot.transpose();
    let flange = Frame {
        rot: flange_rot,
        pos: goal_p - flange_rot * tool.pos,
    };
    // Largest lever arm from the tip to a hand capsule point.
    let lever = model
        .capsules
        .iter()
        .filter(|c| c.link == DOF)
        .flat_map(|c| [c.a, c.b])
        .map(|x| (Vec3::from(x) - tool.pos).norm())
        .fold(0.0, f64::max);
    let slack = params.position_tolerance + 2.0 * (params.orientation_tolerance / 2.0).sin() * lever;
    hand_blocked(model, world, &flange, slack + 1e-7)
}

/// Damped-least-squares IK from the home configuration, then from up to
/// `params.restarts` random configurations drawn from a stream keyed by
/// `params.seed`. The attempt sequence never depends on `world`: a
/// converged solution that collides moves on to the next attempt.
pub fn ik_solve(model: &RobotModel, world: &CollisionWorld, goal: &GoalPose, params: &IkParams) -> IkResult {
    solve(model, world, goal, params, true)
}

fn solve(model: &RobotModel, world: &CollisionWorld, goal: &GoalPose, params: &IkParams, precheck: bool) -> IkResult {
    let goal_r = goal.orientation();
    let mut result = IkResult {
        status: IkStatus::Unreachable,
        joints: None,
        position_error: f64::INFINITY,
        orientation_error: f64::INFINITY,
    };
    if wrist_out_of_reach(model, &goal.p, &goal_r) {
        return result;
    }
    if precheck && hand_blocked_at_goal(model, world, &goal.p, &goal_r, params) {
        result.status = IkStatus::Collision;
        return result;
    }
    let mut collided = false;
    let mut limited = false;
    for attempt in 0..=params.restarts {
        let start = if attempt == 0 {
            model.home()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(params.seed, attempt));
            std::array::from_fn(|i| {
                let [lo, hi] = model.joint_limits[i];
                rng.random_range(lo..=hi)
            })
        };
        let a = descend(model, &goal.p, &goal_r, start, params);
        if a.position_error + a.orientation_error < result.position_error + result.orientation_error {
            result.position_error = a.position_error;
            result.orientation_error = a.orientation_error;
        }
        if a.converged {
            if check_collision(model, world, &a.q).is_free() {
                return IkResult {
                    status: IkStatus::Solved,
                    joints: Some(a.q),
                    position_error: a.position_error,
                    orientation_error: a.orientation_error,
                };
            }
            collided = true;
        } else {
            limited |= a.at_limit;
        }
    }
    result.status = if collided {
        IkStatus::Collision
    } else if limited {
        IkStatus::LimitViolation
    } else {
        IkStatus::Unreachable
    };
    result
}
