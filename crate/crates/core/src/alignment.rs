//! Gradient-based refinement of a human pose sequence against 2D keypoints, temporal
//! smoothness and a contact prior with the object.
//!
//! The free parameters are the hinge angles of the optimized joints (see [`Skeleton::dofs`]);
//! every other rotation in the sequence is carried through untouched.

use std::io::Write as _;
use std::path::Path;

use nalgebra::{Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    forward_kinematics, geodesic_distance, CameraModel, GeometryError, JointKind, Pose, Rotation, Skeleton, Transform, MIN_DEPTH,
};
use crate::targets::{HybridTarget, KeypointEvidence, TrackSet};

#[derive(Debug, Error)]
pub enum AlignmentError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, trace: Vec<LossTerms> },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    pub w_body: f64,
    pub w_hand: f64,
    pub w_temporal: f64,
    pub w_hoi: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    /// Joints whose rotations are optimized.
    pub optimized: Vec<usize>,
    /// Body-part joints pulled toward the object (J_* of the contact prior).
    pub contact_joints: Vec<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            w_body: 1.0,
            w_hand: 1.0,
            w_temporal: 1e4,
            w_hoi: 5e2,
            learning_rate: 2e-2,
            iterations: 300,
            optimized: Vec::new(),
            contact_joints: Vec::new(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AlignmentConfig {
    /// Defaults with the upper body (spine, arms, hands) optimized and the fingertips as contact joints.
    pub fn for_skeleton(skel: &Skeleton) -> Self {
        let optimized = (0..skel.joint_count())
            .filter(|&j| {
                let name = &skel.joint(j).name;
                skel.joint(j).kind == JointKind::Hand
                    || ["spine", "clavicle", "shoulder", "elbow", "wrist"].iter().any(|k| name.contains(k))
            })
            .collect();
        AlignmentConfig { optimized, contact_joints: skel.fingertips().to_vec(), ..Default::default() }
    }

    /// Parses a versioned TOML config. Empty joint lists take the [`Self::for_skeleton`] defaults.
    pub fn from_toml(text: &str, skel: &Skeleton) -> Result<Self, AlignmentError> {
        #[derive(Deserialize)]
        struct Version {
            #[serde(rename = "format-version")]
            format_version: u32,
        }
        let v: Version = toml::from_str(text).map_err(|e| AlignmentError::InvalidConfig(e.to_string()))?;
        if v.format_version != 1 {
            return Err(AlignmentError::InvalidConfig(format!("unsupported format-version {}", v.format_version)));
        }
        let mut c: AlignmentConfig = toml::from_str(text).map_err(|e| AlignmentError::InvalidConfig(e.to_string()))?;
        let defaults = Self::for_skeleton(skel);
        if c.optimized.is_empty() {
            c.optimized = defaults.optimized;
        }
        if c.contact_joints.is_empty() {
            c.contact_joints = defaults.contact_joints;
        }
        c.validate(skel)?;
        Ok(c)
    }

    pub fn read(path: &Path, skel: &Skeleton) -> Result<Self, AlignmentError> {
        Self::from_toml(&std::fs::read_to_string(path)?, skel)
    }

    pub fn validate(&self, skel: &Skeleton) -> Result<(), AlignmentError> {
        let bad = |m: &str| Err(AlignmentError::InvalidConfig(m.into()));
        if [self.w_body, self.w_hand, self.w_temporal, self.w_hoi].iter().any(|w| !(*w >= 0.0)) {
            return bad("loss weights must be nonnegative");
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            return bad("learning rate and epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        let n = skel.joint_count();
        if self.optimized.iter().chain(&self.contact_joints).any(|&j| j >= n) {
            return bad("joint id out of range");
        }
        if self.w_hoi > 0.0 && self.contact_joints.is_empty() {
            return bad("contact prior enabled without contact joints");
        }
        Ok(())
    }
}

/// 2D targets for a subset of joints.
#[derive(Clone, Debug, PartialEq)]
pub struct Keypoints {
    pub ids: Vec<usize>,
    pub points: Vec<Vec<Vector2<f64>>>,
    pub visible: Vec<Vec<bool>>,
}

impl Keypoints {
    pub fn from_tracks(ids: Vec<usize>, tracks: &TrackSet) -> Self {
        Keypoints { ids, points: tracks.points.clone(), visible: tracks.visible.clone() }
    }

    /// Noise-free projections of the given poses.
    pub fn project(skel: &Skeleton, cam: &CameraModel, poses: &[Pose], ids: Vec<usize>) -> Result<Self, GeometryError> {
        let mut points = Vec::with_capacity(poses.len());
        for pose in poses {
            let fk = forward_kinematics(skel, pose)?;
            points.push(ids.iter().map(|&j| cam.project(&fk[j].position)).collect::<Result<Vec<_>, _>>()?);
        }
        let visible = vec![vec![true; ids.len()]; poses.len()];
        Ok(Keypoints { ids, points, visible })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentProblem {
    pub skeleton: Skeleton,
    pub poses: Vec<Pose>,
    pub camera: CameraModel,
    pub body: Keypoints,
    pub hand: Keypoints,
    /// Object vertices in world coordinates (meters).
    pub object_vertices: Vec<Vector3<f64>>,
}

impl AlignmentProblem {
    /// Problem over a target's human part; the object is taken at `object_pose`.
    pub fn from_target(
        target: &HybridTarget,
        keypoints: &KeypointEvidence,
        skeleton: &Skeleton,
        object_vertices_local: &[Vector3<f64>],
        object_pose: &Transform,
    ) -> Result<Self, AlignmentError> {
        let mut hand_ids = skeleton.hand_of(0);
        hand_ids.extend(skeleton.hand_of(1));
        let problem = AlignmentProblem {
            skeleton: skeleton.clone(),
            poses: (0..target.frames).map(|t| target.pose(t)).collect(),
            camera: target.camera.clone(),
            body: Keypoints::from_tracks(skeleton.body_joints(), &keypoints.body),
            hand: Keypoints::from_tracks(hand_ids, &keypoints.hands()),
            object_vertices: object_vertices_local.iter().map(|v| object_pose.apply(v)).collect(),
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<(), AlignmentError> {
        let f = self.poses.len();
        let bad = |m: String| Err(AlignmentError::InvalidProblem(m));
        if f == 0 {
            return bad("empty pose sequence".into());
        }
        for (name, k) in [("body", &self.body), ("hand", &self.hand)] {
            if k.points.len() != f || k.visible.len() != f {
                return bad(format!("{name} keypoints have {} frames, expected {f}", k.points.len()));
            }
            if k.points.iter().any(|p| p.len() != k.ids.len()) || k.visible.iter().any(|v| v.len() != k.ids.len()) {
                return bad(format!("{name} keypoint rows do not match the id list"));
            }
            if k.ids.iter().any(|&j| j >= self.skeleton.joint_count()) {
                return bad(format!("{name} keypoint id out of range"));
            }
        }
        if self.poses.iter().any(|p| p.local.len() != self.skeleton.joint_count()) {
            return bad("pose does not match skeleton".into());
        }
        if self.object_vertices.is_empty() {
            return bad("object vertex set is empty".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub body: f64,
    pub hand: f64,
    pub temporal: f64,
    pub hoi: f64,
    pub total: f64,
}

fn projection_loss(cam: &CameraModel, fks: &[Vec<Transform>], k: &Keypoints) -> Result<f64, GeometryError> {
    let (mut sum, mut count) = (0.0, 0usize);
    for (t, fk) in fks.iter().enumerate() {
        for (i, &j) in k.ids.iter().enumerate() {
            if k.visible[t][i] {
                sum += (cam.project(&fk[j].position)? - k.points[t][i]).norm_squared();
                count += 1;
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

fn all_fk(skel: &Skeleton, poses: &[Pose]) -> Result<Vec<Vec<Transform>>, GeometryError> {
    poses.iter().map(|p| forward_kinematics(skel, p)).collect()
}

/// Mean squared pixel error of visible body keypoints.
pub fn loss_body_proj(problem: &AlignmentProblem, poses: &[Pose]) -> Result<f64, GeometryError> {
    projection_loss(&problem.camera, &all_fk(&problem.skeleton, poses)?, &problem.body)
}

/// Mean squared pixel error of visible hand keypoints.
pub fn loss_hand_proj(problem: &AlignmentProblem, poses: &[Pose]) -> Result<f64, GeometryError> {
    projection_loss(&problem.camera, &all_fk(&problem.skeleton, poses)?, &problem.hand)
}

/// Body rotations (every non-root body joint) and hand rotations, as used by the temporal term.
pub fn temporal_groups(skel: &Skeleton) -> [Vec<usize>; 2] {
    let body = skel.body_joints().into_iter().filter(|&j| skel.parent(j).is_some()).collect();
    [body, skel.hand_joints()]
}

/// Sum over consecutive frame pairs of the mean geodesic distance, body and hand groups separately.
pub fn loss_temporal(skel: &Skeleton, poses: &[Pose]) -> f64 {
    let groups = temporal_groups(skel);
    let mut total = 0.0;
    for w in poses.windows(2) {
        for g in &groups {
            if !g.is_empty() {
                total += g.iter().map(|&j| geodesic_distance(&w[0].local[j], &w[1].local[j])).sum::<f64>() / g.len() as f64;
            }
        }
    }
    total
}

/// Returns (minimum chamfer over frames, argmin frame). Ties go to the earliest frame.
fn hoi_min(fks: &[Vec<Transform>], joints: &[usize], verts: &[Vector3<f64>]) -> Result<(f64, usize), GeometryError> {
    let mut best = (f64::INFINITY, 0);
    for (t, fk) in fks.iter().enumerate() {
        let pts: Vec<Vector3<f64>> = joints.iter().map(|&j| fk[j].position).collect();
        let d = crate::geometry::one_sided_chamfer(&pts, verts)?;
        if d < best.0 {
            best = (d, t);
        }
    }
    Ok(best)
}

/// Minimum over frames of the one-sided chamfer from the contact joints to the object vertices.
pub fn loss_hoi(problem: &AlignmentProblem, contact_joints: &[usize], poses: &[Pose]) -> Result<f64, GeometryError> {
    Ok(hoi_min(&all_fk(&problem.skeleton, poses)?, contact_joints, &problem.object_vertices)?.0)
}

pub fn evaluate(problem: &AlignmentProblem, config: &AlignmentConfig, poses: &[Pose]) -> Result<LossTerms, GeometryError> {
    let fks = all_fk(&problem.skeleton, poses)?;
    let body = projection_loss(&problem.camera, &fks, &problem.body)?;
    let hand = projection_loss(&problem.camera, &fks, &problem.hand)?;
    let temporal = loss_temporal(&problem.skeleton, poses);
    let hoi = if config.contact_joints.is_empty() { 0.0 } else { hoi_min(&fks, &config.contact_joints, &problem.object_vertices)?.0 };
    let total = config.w_body * body + config.w_hand * hand + config.w_temporal * temporal + config.w_hoi * hoi;
    Ok(LossTerms { body, hand, temporal, hoi, total })
}

/// Per-dof world axes of a joint: rotating dof `d` by ε turns the subtree about `axes[d]`
/// through the joint position. Also returns the right-perturbation direction of each dof in the
/// joint's own frame.
fn dof_axes(skel: &Skeleton, j: usize, angles: &[f64], parent: &Rotation) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let dofs = &skel.joint(j).dofs;
    let mut world = Vec::with_capacity(dofs.len());
    let mut local = Vec::with_capacity(dofs.len());
    let mut pre = *parent;
    for (d, dof) in dofs.iter().enumerate() {
        world.push(pre.rotate(&dof.axis.unit()));
        let post = dofs[d + 1..].iter().zip(&angles[d + 1..]).fold(Rotation::identity(), |acc, (x, &a)| acc * Rotation::about(x.axis, a));
        local.push(post.inverse().rotate(&dof.axis.unit()));
        pre = pre * Rotation::about(dof.axis, angles[d]);
    }
    (world, local)
}

/// Gradient of the geodesic distance with respect to a right perturbation of `b`
/// (the negated value is the gradient for `a`). Zero at coincidence, taken as an angle below
/// 2e-9 rad so round-off on equal rotations does not produce a unit-length subgradient.
fn geodesic_grad(a: &Rotation, b: &Rotation) -> Vector3<f64> {
    let rel = a.inverse() * *b;
    let [_, x, y, z] = rel.wxyz();
    let v = Vector3::new(x, y, z);
    let n = v.norm();
    if n < 1e-9 {
        Vector3::zeros()
    } else {
        v / n
    }
}

/// Loss terms and the gradient of the weighted total with respect to every frame's dof angles.
/// Entries for non-optimized joints are zero.
pub fn gradient(problem: &AlignmentProblem, config: &AlignmentConfig, poses: &[Pose]) -> Result<(LossTerms, Vec<Vec<f64>>), GeometryError> {
    let skel = &problem.skeleton;
    let angles: Vec<Vec<f64>> = poses.iter().map(|p| skel.angles_from_pose(p)).collect();
    let terms = evaluate(problem, config, poses)?;
    let fks = all_fk(skel, poses)?;
    let f = poses.len();
    let n = skel.joint_count();
    let mut optimized = vec![false; n];
    for &j in &config.optimized {
        optimized[j] = true;
    }

    // dL/dp for every joint position, per frame.
    let mut dp = vec![vec![Vector3::<f64>::zeros(); n]; f];
    let cam = &problem.camera;
    let r_cw = cam.rotation.to_matrix();
    for (k, w) in [(&problem.body, config.w_body), (&problem.hand, config.w_hand)] {
        let count = k.visible.iter().flatten().filter(|&&v| v).count();
        if count == 0 || w == 0.0 {
            continue;
        }
        let scale = w / count as f64;
        for t in 0..f {
            for (i, &j) in k.ids.iter().enumerate() {
                if !k.visible[t][i] {
                    continue;
                }
                let pc = cam.to_camera(&fks[t][j].position);
                if pc.z <= MIN_DEPTH {
                    return Err(GeometryError::BehindCamera(pc.z));
                }
                let px = cam.project_camera_frame(&pc)?;
                let r = px - k.points[t][i];
                let (iz, fz) = (1.0 / pc.z, cam.focal / pc.z);
                let jac = Matrix2x3::new(fz, 0.0, -fz * pc.x * iz, 0.0, fz, -fz * pc.y * iz);
                dp[t][j] += r_cw.transpose() * (jac.transpose() * (2.0 * scale * r));
            }
        }
    }
    if config.w_hoi > 0.0 && !config.contact_joints.is_empty() {
        let (_, t) = hoi_min(&fks, &config.contact_joints, &problem.object_vertices)?;
        let m = config.contact_joints.len() as f64;
        for &j in &config.contact_joints {
            let p = fks[t][j].position;
            let (i, _) = crate::geometry::nearest_squared(&p, &problem.object_vertices);
            dp[t][j] += config.w_hoi * 2.0 * (p - problem.object_vertices[i]) / m;
        }
    }

    // Right-perturbation gradients of local rotations from the temporal term.
    let mut dr = vec![vec![Vector3::<f64>::zeros(); n]; f];
    if config.w_temporal > 0.0 {
        for g in temporal_groups(skel) {
            if g.is_empty() {
                continue;
            }
            let scale = config.w_temporal / g.len() as f64;
            for t in 0..f.saturating_sub(1) {
                for &j in &g {
                    let u = geodesic_grad(&poses[t].local[j], &poses[t + 1].local[j]);
                    dr[t + 1][j] += scale * u;
                    dr[t][j] -= scale * u;
                }
            }
        }
    }

    let mut grads = vec![vec![0.0; skel.dof_count()]; f];
    for t in 0..f {
        // Subtree accumulation: S[j] = Σ_{k in subtree(j)} dp_k and C[j] = Σ p_k × dp_k.
        let mut sum = dp[t].clone();
        let mut cross: Vec<Vector3<f64>> = (0..n).map(|k| fks[t][k].position.cross(&dp[t][k])).collect();
        for k in (1..n).rev() {
            let p = skel.parent(k).expect("non-root");
            let (s, c) = (sum[k], cross[k]);
            sum[p] += s;
            cross[p] += c;
        }
        for j in 1..n {
            if !optimized[j] || skel.joint(j).dofs.is_empty() {
                continue;
            }
            let range = skel.dof_range(j);
            let parent_rot = fks[t][skel.parent(j).expect("non-root")].rotation;
            let (world, local) = dof_axes(skel, j, &angles[t][range.clone()], &parent_rot);
            let pj = fks[t][j].position;
            // Σ_k (w × (p_k − p_j)) · dp_k = w · Σ_k (p_k − p_j) × dp_k
            let moment = cross[j] - pj.cross(&sum[j]);
            for (d, idx) in range.enumerate() {
                grads[t][idx] = world[d].dot(&moment) + local[d].dot(&dr[t][j]);
            }
        }
    }
    Ok((terms, grads))
}

/// Rebuilds the optimized rotations whose angles moved; untouched joints keep their exact input
/// rotation so a zero gradient stays exactly zero.
fn apply_angles(skel: &Skeleton, base: &[Pose], start: &[Vec<f64>], angles: &[Vec<f64>], optimized: &[usize]) -> Vec<Pose> {
    let mut out = base.to_vec();
    for ((pose, a), a0) in out.iter_mut().zip(angles).zip(start) {
        for &j in optimized {
            let r = skel.dof_range(j);
            if !r.is_empty() && a[r.clone()] != a0[r] {
                pose.local[j] = skel.local_rotation(j, &a[skel.dof_range(j)]);
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct AlignmentResult {
    /// Lowest-loss iterate.
    pub poses: Vec<Pose>,
    /// Loss terms before each update, then after the last one.
    pub trace: Vec<LossTerms>,
    pub best_iteration: usize,
}

/// Adam on the hinge angles of the optimized joints, projected onto the joint limits.
pub fn align(problem: &AlignmentProblem, config: &AlignmentConfig) -> Result<AlignmentResult, AlignmentError> {
    problem.validate()?;
    config.validate(&problem.skeleton)?;
    let skel = &problem.skeleton;
    let dofs = skel.dofs();
    let mut optimized: Vec<usize> = config.optimized.clone();
    optimized.sort_unstable();
    optimized.dedup();
    let mask: Vec<bool> = {
        let mut m = vec![false; skel.dof_count()];
        for &j in &optimized {
            for i in skel.dof_range(j) {
                m[i] = true;
            }
        }
        m
    };
    let start: Vec<Vec<f64>> = problem.poses.iter().map(|p| skel.angles_from_pose(p)).collect();
    let mut angles = start.clone();
    let f = angles.len();
    let mut m1 = vec![vec![0.0; skel.dof_count()]; f];
    let mut m2 = m1.clone();
    let mut poses = problem.poses.clone();
    let mut trace = Vec::with_capacity(config.iterations + 1);
    let mut best = (f64::INFINITY, problem.poses.clone(), 0usize);

    for it in 0..=config.iterations {
        let (terms, grads) = gradient(problem, config, &poses)?;
        trace.push(terms);
        if !terms.total.is_finite() {
            return Err(AlignmentError::NonFiniteLoss { iteration: it, trace });
        }
        if terms.total < best.0 {
            best = (terms.total, poses.clone(), it);
        }
        if it == config.iterations {
            break;
        }
        let step = (it + 1) as i32;
        let (c1, c2) = (1.0 - config.beta1.powi(step), 1.0 - config.beta2.powi(step));
        for t in 0..f {
            for i in 0..mask.len() {
                if !mask[i] {
                    continue;
                }
                let g = grads[t][i];
                m1[t][i] = config.beta1 * m1[t][i] + (1.0 - config.beta1) * g;
                m2[t][i] = config.beta2 * m2[t][i] + (1.0 - config.beta2) * g * g;
                let update = config.learning_rate * (m1[t][i] / c1) / ((m2[t][i] / c2).sqrt() + config.epsilon);
                angles[t][i] = (angles[t][i] - update).clamp(dofs[i].lower, dofs[i].upper);
            }
        }
        poses = apply_angles(skel, &problem.poses, &start, &angles, &optimized);
    }
    Ok(AlignmentResult { poses: best.1, trace, best_iteration: best.2 })
}

pub fn trace_csv(trace: &[LossTerms]) -> String {
    let mut s = String::from("# format-version 1\niteration,L_b,L_h,L_tc,L_HOI,L_total\n");
    for (i, t) in trace.iter().enumerate() {
        s.push_str(&format!("{i},{},{},{},{},{}\n", t.body, t.hand, t.temporal, t.hoi, t.total));
    }
    s
}

pub fn write_trace_csv(trace: &[LossTerms], path: &Path) -> Result<(), AlignmentError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(trace_csv(trace).as_bytes())?;
    Ok(())
}

/// Copies refined poses into a target, recomputing joint positions by forward kinematics.
pub fn apply_to_target(target: &mut HybridTarget, skel: &Skeleton, poses: &[Pose]) -> Result<(), AlignmentError> {
    if poses.len() != target.frames {
        return Err(AlignmentError::InvalidProblem("pose count differs from target frames".into()));
    }
    for (t, pose) in poses.iter().enumerate() {
        target.human.rotations[t] = pose.local.clone();
        target.human.positions[t] = forward_kinematics(skel, pose)?.into_iter().map(|x| x.position).collect();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Axis, Dof, Joint};
    use approx::assert_relative_eq;

    /// Root, a 1-dof hinge about z at the origin, and a tip one meter along +x.
    pub(crate) fn toy() -> (Skeleton, CameraModel) {
        let j = |name: &str, parent, offset: [f64; 3], dofs| Joint { name: name.into(), parent, offset: Vector3::from(offset), dofs, kind: JointKind::Body };
        let skel = Skeleton::new(
            vec![
                j("root", None, [0.0; 3], vec![]),
                j("hinge", Some(0), [0.0; 3], vec![Dof::new(Axis::Z, -3.0, 3.0)]),
                j("tip", Some(1), [1.0, 0.0, 0.0], vec![]),
            ],
            vec![2],
            [1, 2],
        )
        .unwrap();
        // Looking down -z from 4 m above.
        let cam = CameraModel::new(640.0, 480.0, Rotation::about(Axis::X, std::f64::consts::PI), Vector3::new(0.0, 0.0, 4.0));
        (skel, cam)
    }

    fn toy_problem(theta_target: f64, theta_init: f64) -> (AlignmentProblem, AlignmentConfig) {
        let (skel, cam) = toy();
        let target = vec![skel.pose_from_angles(Vector3::zeros(), Rotation::identity(), &[theta_target])];
        let init = vec![skel.pose_from_angles(Vector3::zeros(), Rotation::identity(), &[theta_init])];
        let body = Keypoints::project(&skel, &cam, &target, vec![2]).unwrap();
        let hand = Keypoints { ids: vec![], points: vec![vec![]], visible: vec![vec![]] };
        let problem = AlignmentProblem { skeleton: skel, poses: init, camera: cam, body, hand, object_vertices: vec![Vector3::new(5.0, 5.0, 5.0)] };
        let config = AlignmentConfig { optimized: vec![1], w_hoi: 0.0, w_temporal: 0.0, ..Default::default() };
        (problem, config)
    }

    #[test]
    fn toy_converges_to_target_angle() {
        let (problem, config) = toy_problem(0.7, 0.1);
        let config = AlignmentConfig { iterations: 500, ..config };
        let out = align(&problem, &config).unwrap();
        let a = problem.skeleton.angles_from_pose(&out.poses[0]);
        assert!((a[0] - 0.7).abs() < 1e-3, "{}", a[0]);
        assert!(out.trace.last().unwrap().total <= out.trace[0].total);
    }

    #[test]
    fn uniform_pixel_offset() {
        let (mut problem, _) = toy_problem(0.3, 0.3);
        for p in problem.body.points.iter_mut().flatten() {
            *p += Vector2::new(2.0, 0.0);
        }
        assert_relative_eq!(loss_body_proj(&problem, &problem.poses).unwrap(), 4.0, epsilon = 1e-9);
    }

    #[test]
    fn geodesic_gradient_direction() {
        let a = Rotation::about(Axis::Z, 0.2);
        let b = Rotation::about(Axis::Z, 0.5);
        let g = geodesic_grad(&a, &b);
        assert_relative_eq!(g, Vector3::z(), epsilon = 1e-12);
        assert_eq!(geodesic_grad(&a, &a), Vector3::zeros());
    }
}
