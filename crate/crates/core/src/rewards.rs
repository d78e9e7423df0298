//! Hybrid tracking reward: 3D human tracking, 2D object tracking and contact terms, each an
//! exponential kernel in `(0, 1]`, multiplied together.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{forward_kinematics, geodesic_distance, one_sided_chamfer, CameraModel, Rotation, Skeleton, Transform};
use crate::sim::{Action, BodyKinematics, PhysicsWorld, SimState};
use crate::targets::HybridTarget;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid reward configuration: {0}")]
    InvalidConfig(String),
}

/// Which object term enters the product.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectRewardMode {
    /// Projected tracked vertices against the 2D tracks.
    #[default]
    Pixels,
    /// No object term (R_o = 1).
    Disabled,
    /// Full 6D pose against a reference pose sequence.
    Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Joint position (m⁻²).
    pub jp: f64,
    /// Joint velocity (s²·m⁻²).
    pub jv: f64,
    /// Joint rotation (rad⁻²).
    pub jr: f64,
    /// Wrist-relative hand position (m⁻²).
    pub lp: f64,
    /// Wrist-relative hand rotation (rad⁻²).
    pub lr: f64,
    /// Power penalty (W⁻¹).
    pub pw: f64,
    /// Object pixel error (px⁻²).
    pub object: f64,
    /// Contact distance (m⁻²).
    pub contact_distance: f64,
    /// Force above which a sensor counts as touching (N).
    pub contact_force_threshold: f64,
    pub sensors_per_hand: usize,
    /// Pixel error charged to a tracked vertex that falls behind the camera.
    pub behind_camera_error_px: f64,
    pub object_mode: ObjectRewardMode,
    /// Position and rotation coefficients of the 6D pose term (m⁻², rad⁻²).
    pub pose_position: f64,
    pub pose_rotation: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            jp: 100.0,
            jv: 0.1,
            jr: 2.0,
            lp: 500.0,
            lr: 2.0,
            pw: 1e-3,
            object: 0.01,
            contact_distance: 1000.0,
            contact_force_threshold: 0.05,
            sensors_per_hand: crate::sim::SENSORS_PER_HAND,
            behind_camera_error_px: 1000.0,
            object_mode: ObjectRewardMode::Pixels,
            pose_position: 100.0,
            pose_rotation: 2.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        let coeffs = [
            ("jp", self.jp),
            ("jv", self.jv),
            ("jr", self.jr),
            ("lp", self.lp),
            ("lr", self.lr),
            ("pw", self.pw),
            ("object", self.object),
            ("contact_distance", self.contact_distance),
            ("contact_force_threshold", self.contact_force_threshold),
            ("behind_camera_error_px", self.behind_camera_error_px),
            ("pose_position", self.pose_position),
            ("pose_rotation", self.pose_rotation),
        ];
        if let Some((name, v)) = coeffs.iter().find(|(_, v)| !(*v >= 0.0) || !v.is_finite()) {
            return Err(RewardError::InvalidConfig(format!("{name} = {v} must be finite and nonnegative")));
        }
        if self.sensors_per_hand == 0 {
            return Err(RewardError::InvalidConfig("sensors_per_hand must be positive".into()));
        }
        Ok(())
    }
}

/// Joint state of a human at one instant, in the world frame.
#[derive(Clone, Debug, PartialEq)]
pub struct HumanFrame {
    pub positions: Vec<Vector3<f64>>,
    pub velocities: Vec<Vector3<f64>>,
    /// Local rotations; slot 0 holds the root orientation.
    pub local: Vec<Rotation>,
    pub global: Vec<Rotation>,
}

impl HumanFrame {
    pub fn from_sim(skel: &Skeleton, kin: &BodyKinematics, q: &[f64]) -> Self {
        let mut local: Vec<Rotation> = (0..skel.joint_count()).map(|j| skel.local_rotation(j, &q[skel.dof_range(j)])).collect();
        local[0] = kin.frames[0].rotation;
        HumanFrame {
            positions: kin.positions(),
            velocities: kin.linear.clone(),
            local,
            global: kin.frames.iter().map(|f| f.rotation).collect(),
        }
    }

    /// Reference frame `t`; velocities by central differences of the reference positions.
    pub fn from_target(skel: &Skeleton, target: &HybridTarget, t: usize) -> Self {
        let h = &target.human;
        let last = target.frames - 1;
        let (a, b) = (t.saturating_sub(1), (t + 1).min(last));
        let span = (b - a).max(1) as f64 / target.fps;
        let velocities = h.positions[b].iter().zip(&h.positions[a]).map(|(p, q)| (p - q) / span).collect();
        let pose = target.pose(t);
        let global = forward_kinematics(skel, &pose).expect("target matches skeleton").iter().map(|f| f.rotation).collect();
        let mut local = h.rotations[t].clone();
        local[0] = h.root_orientation[t];
        HumanFrame { positions: h.positions[t].clone(), velocities, local, global }
    }

    /// Every frame of a target.
    pub fn sequence(skel: &Skeleton, target: &HybridTarget) -> Vec<HumanFrame> {
        (0..target.frames).map(|t| HumanFrame::from_target(skel, target, t)).collect()
    }

    fn len(&self) -> usize {
        self.positions.len()
    }
}

/// Each factor of the human tracking reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanTerms {
    pub jp: f64,
    pub jv: f64,
    pub jr: f64,
    pub lp: f64,
    pub lr: f64,
    pub pw: f64,
}

impl HumanTerms {
    pub fn product(&self) -> f64 {
        self.jp * self.jv * self.jr * self.lp * self.lr * self.pw
    }
}

fn mean<I: Iterator<Item = f64>>(it: I) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Hand joints (without the wrist) paired with their wrist.
fn hand_pairs(skel: &Skeleton) -> Vec<(usize, usize)> {
    (0..2).flat_map(|s| {
        let w = skel.wrists()[s];
        skel.hand_of(s).into_iter().filter(move |&j| j != w).map(move |j| (j, w))
    })
    .collect()
}

/// Mean squared errors behind each human factor: (jp, jv, jr, lp, lr).
pub fn human_errors(skel: &Skeleton, sim: &HumanFrame, reference: &HumanFrame) -> Result<[f64; 5], RewardError> {
    let n = skel.joint_count();
    for (name, f) in [("simulated", sim), ("reference", reference)] {
        if f.len() != n || f.velocities.len() != n || f.local.len() != n || f.global.len() != n {
            return Err(RewardError::ShapeMismatch(format!("{name} frame does not have {n} joints")));
        }
    }
    let jp = mean(sim.positions.iter().zip(&reference.positions).map(|(a, b)| (a - b).norm_squared()));
    let jv = mean(sim.velocities.iter().zip(&reference.velocities).map(|(a, b)| (a - b).norm_squared()));
    let jr = mean(sim.local.iter().zip(&reference.local).map(|(a, b)| geodesic_distance(a, b).powi(2)));
    let pairs = hand_pairs(skel);
    let lp = mean(pairs.iter().map(|&(j, w)| {
        ((sim.positions[j] - sim.positions[w]) - (reference.positions[j] - reference.positions[w])).norm_squared()
    }));
    let lr = mean(pairs.iter().map(|&(j, w)| {
        let a = sim.global[w].inverse() * sim.global[j];
        let b = reference.global[w].inverse() * reference.global[j];
        geodesic_distance(&a, &b).powi(2)
    }));
    Ok([jp, jv, jr, lp, lr])
}

/// Product of the joint-difference kernels and the power penalty.
/// `power` is the mechanical power spent by the actuators, Σ|τ·q̇| (W).
pub fn human_tracking_reward(skel: &Skeleton, sim: &HumanFrame, reference: &HumanFrame, power: f64, config: &RewardConfig) -> Result<HumanTerms, RewardError> {
    let [jp, jv, jr, lp, lr] = human_errors(skel, sim, reference)?;
    Ok(HumanTerms {
        jp: (-config.jp * jp).exp(),
        jv: (-config.jv * jv).exp(),
        jr: (-config.jr * jr).exp(),
        lp: (-config.lp * lp).exp(),
        lr: (-config.lr * lr).exp(),
        pw: (-config.pw * power.max(0.0)).exp(),
    })
}

/// Σ|τ·q̇| with τ the PD torque of `action` at `state`, clamped to the torque limits.
pub fn actuator_power(world: &PhysicsWorld, state: &SimState, action: &Action) -> f64 {
    let h = &world.humanoid;
    let targets = action.targets(&h.skeleton);
    (0..state.q.len())
        .map(|i| {
            let tau = (h.kp[i] * (targets[i] - state.q[i]) - h.kd[i] * state.qd[i]).clamp(-h.torque_limit[i], h.torque_limit[i]);
            (tau * state.qd[i]).abs()
        })
        .sum()
}

/// Pixel distance of each visible tracked vertex to its target; vertices behind the camera
/// are charged `behind_cap`.
pub fn object_pixel_errors(
    pose: &Transform,
    vertices: &[Vector3<f64>],
    ids: &[usize],
    pixels: &[Vector2<f64>],
    visible: &[bool],
    cam: &CameraModel,
    behind_cap: f64,
) -> Result<Vec<f64>, RewardError> {
    if ids.len() != pixels.len() || ids.len() != visible.len() {
        return Err(RewardError::ShapeMismatch(format!("{} ids, {} pixels, {} visibility flags", ids.len(), pixels.len(), visible.len())));
    }
    let mut out = Vec::with_capacity(ids.len());
    for ((&id, px), &vis) in ids.iter().zip(pixels).zip(visible) {
        if !vis {
            continue;
        }
        let v = vertices.get(id).ok_or_else(|| RewardError::ShapeMismatch(format!("vertex {id} out of range")))?;
        out.push(match cam.project(&pose.apply(v)) {
            Ok(p) => (p - px).norm(),
            Err(_) => behind_cap,
        });
    }
    Ok(out)
}

/// `exp(−λ_o · mean squared pixel error)` over visible tracked vertices; 1 when nothing is visible.
pub fn object_tracking_reward(
    pose: &Transform,
    vertices: &[Vector3<f64>],
    ids: &[usize],
    pixels: &[Vector2<f64>],
    visible: &[bool],
    cam: &CameraModel,
    config: &RewardConfig,
) -> Result<f64, RewardError> {
    let errors = object_pixel_errors(pose, vertices, ids, pixels, visible, cam, config.behind_camera_error_px)?;
    Ok((-config.object * mean(errors.iter().map(|e| e * e))).exp())
}

/// 6D pose kernel, used only by the pose ablation.
pub fn object_pose_reward(pose: &Transform, reference: &Transform, config: &RewardConfig) -> f64 {
    let dp = (pose.position - reference.position).norm_squared();
    let dr = geodesic_distance(&pose.rotation, &reference.rotation).powi(2);
    (-config.pose_position * dp - config.pose_rotation * dr).exp()
}

/// Hand-to-object distance d: root of the one-sided chamfer from `points` to `vertices` (m).
pub fn hand_object_distance(points: &[Vector3<f64>], vertices: &[Vector3<f64>]) -> f64 {
    one_sided_chamfer(points, vertices).map(f64::sqrt).unwrap_or(f64::INFINITY)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactTerms {
    /// Per-hand fraction of sensors above threshold.
    pub ratio: [f64; 2],
    pub force: f64,
    pub distance: f64,
    /// Hand-object distance d used by the distance factor (0 when no hand is labeled).
    pub d: f64,
}

impl ContactTerms {
    pub fn product(&self) -> f64 {
        self.force * self.distance
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Contact force factor (product over hands of `(1−ψ) + ψ·Ψ`) times the distance factor
/// `(1−ψ) + ψ·σ(−λ_c d²)`, where ψ is set if either hand is labeled and d is measured from the
/// labeled hands' joints.
pub fn contact_reward(sensors: [&[f64]; 2], hands: [&[Vector3<f64>]; 2], object_vertices: &[Vector3<f64>], psi: [bool; 2], config: &RewardConfig) -> Result<ContactTerms, RewardError> {
    let k = config.sensors_per_hand;
    if sensors.iter().any(|s| s.len() != k) {
        return Err(RewardError::ShapeMismatch(format!("expected {k} sensors per hand")));
    }
    let mut ratio = [0.0; 2];
    let mut force = 1.0;
    for side in 0..2 {
        ratio[side] = sensors[side].iter().filter(|&&f| f > config.contact_force_threshold).count() as f64 / k as f64;
        if psi[side] {
            force *= ratio[side];
        }
    }
    let points: Vec<Vector3<f64>> = (0..2).filter(|&s| psi[s]).flat_map(|s| hands[s].iter().copied()).collect();
    let (distance, d) = if points.is_empty() {
        (1.0, 0.0)
    } else {
        if object_vertices.is_empty() {
            return Err(RewardError::ShapeMismatch("object has no vertices".into()));
        }
        let d = hand_object_distance(&points, object_vertices);
        (sigmoid(-config.contact_distance * d * d), d)
    };
    Ok(ContactTerms { ratio, force, distance, d })
}

/// R = R_h · R_o · R_contact.
pub fn hybrid_reward(human: f64, object: f64, contact: f64) -> f64 {
    human * object * contact
}

/// Every factor of one step's reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub human: HumanTerms,
    pub object: f64,
    pub contact: ContactTerms,
    pub total: f64,
}

/// Inputs of one reward evaluation besides the simulated state.
pub struct RewardContext<'a> {
    pub target: &'a HybridTarget,
    pub skeleton: &'a Skeleton,
    /// `HumanFrame::from_target` for every reference frame.
    pub frames: &'a [HumanFrame],
    /// Object mesh vertices in the body frame.
    pub vertices: &'a [Vector3<f64>],
    /// Reference object poses for the pose ablation.
    pub object_poses: Option<&'a [Transform]>,
}

/// Full reward of `state` against reference frame `t` after applying `action`.
pub fn step_reward(world: &PhysicsWorld, state: &SimState, action: &Action, ctx: &RewardContext, t: usize, config: &RewardConfig) -> Result<RewardTerms, RewardError> {
    let skel = ctx.skeleton;
    let kin = world.body_kinematics(state);
    let sim = HumanFrame::from_sim(skel, &kin, &state.q);
    let human = human_tracking_reward(skel, &sim, &ctx.frames[t], actuator_power(world, state, action), config)?;

    let pose = state.object.transform();
    let object = match config.object_mode {
        ObjectRewardMode::Disabled => 1.0,
        ObjectRewardMode::Pixels => {
            let tracks = &ctx.target.object.tracks;
            object_tracking_reward(&pose, ctx.vertices, &ctx.target.object.vertex_ids, &tracks.points[t], &tracks.visible[t], &ctx.target.camera, config)?
        }
        ObjectRewardMode::Pose => {
            let poses = ctx.object_poses.ok_or_else(|| RewardError::InvalidConfig("pose reward needs reference object poses".into()))?;
            object_pose_reward(&pose, &poses[t.min(poses.len() - 1)], config)
        }
    };

    let psi = [ctx.target.contact.left[t], ctx.target.contact.right[t]];
    let contact = if psi[0] || psi[1] {
        let world_vertices: Vec<Vector3<f64>> = ctx.vertices.iter().map(|v| pose.apply(v)).collect();
        let hands: Vec<Vec<Vector3<f64>>> = (0..2).map(|s| skel.hand_of(s).iter().map(|&j| sim.positions[j]).collect()).collect();
        contact_reward([&state.sensors[0], &state.sensors[1]], [&hands[0], &hands[1]], &world_vertices, psi, config)?
    } else {
        ContactTerms { ratio: [0.0; 2], force: 1.0, distance: 1.0, d: 0.0 }
    };
    let total = hybrid_reward(human.product(), object, contact.product());
    Ok(RewardTerms { human, object, contact, total })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn no_label_means_unit_contact_reward() {
        let c = RewardConfig::default();
        let far = [Vector3::new(10.0, 0.0, 0.0)];
        let verts = [Vector3::zeros()];
        let r = contact_reward([&[0.0; 4], &[0.0; 4]], [&far, &far], &verts, [false, false], &c).unwrap();
        assert_eq!(r.product(), 1.0);
    }

    #[test]
    fn force_ratio_counts_sensors_above_threshold() {
        let c = RewardConfig::default();
        let p = [Vector3::zeros()];
        let r = contact_reward([&[0.0, 2.0, 3.0, 0.01], &[0.0; 4]], [&p, &p], &p, [true, false], &c).unwrap();
        assert_eq!(r.ratio[0], 0.5);
        assert_eq!(r.force, 0.5);
        assert_eq!(r.distance, 0.5);
    }
}
