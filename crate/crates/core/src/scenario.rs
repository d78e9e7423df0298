//! Scripted desk scenarios and their kinematic ground truth.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{forward_kinematics, CameraModel, Pose, Rotation, Skeleton, Transform};
use crate::mesh::TriMesh;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxObject {
    pub half_extents: Vector3<f64>,
    pub subdivisions: usize,
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    /// Table center on the xy-plane.
    pub center: [f64; 2],
    /// Full extents (x, y, height).
    pub dims: Vector3<f64>,
}

impl Default for TableSpec {
    fn default() -> Self {
        TableSpec { center: [0.0, 0.4], dims: Vector3::new(1.0, 0.5, 0.8) }
    }
}

impl TableSpec {
    pub fn top(&self) -> f64 {
        self.dims.z
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub width: f64,
    pub height: f64,
    pub eye: Vector3<f64>,
    pub target: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame: usize,
    pub angles: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectKey {
    pub frame: usize,
    pub position: Vector3<f64>,
}

/// Scripted human-object interaction. Human dof angles and object positions are interpolated
/// between keys with a smoothstep profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(rename = "format-version")]
    pub format_version: u32,
    pub name: String,
    pub seed: u64,
    pub fps: f64,
    pub frames: usize,
    pub root_translation: Vector3<f64>,
    pub root_orientation: Rotation,
    pub object: BoxObject,
    pub table: TableSpec,
    pub camera: CameraSpec,
    /// First and last ground-truth contact frame (inclusive).
    pub contact_window: [usize; 2],
    pub tracked_points: usize,
    /// Contact-label speed threshold (pixels per frame).
    pub contact_threshold_px: f64,
    pub keyframes: Vec<Keyframe>,
    pub object_keys: Vec<ObjectKey>,
    pub skeleton: Skeleton,
}

/// Noise-free kinematic trajectory of a scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub fps: f64,
    pub angles: Vec<Vec<f64>>,
    pub poses: Vec<Pose>,
    pub joints: Vec<Vec<Vector3<f64>>>,
    pub object_poses: Vec<Transform>,
    /// Per frame, per hand (left, right).
    pub contact: Vec<[bool; 2]>,
}

impl GroundTruth {
    pub fn frame_count(&self) -> usize {
        self.poses.len()
    }

    /// Nearest frame to time `t` (seconds).
    pub fn frame_at(&self, t: f64) -> usize {
        ((t * self.fps).round().max(0.0) as usize).min(self.poses.len() - 1)
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

fn interpolate<T, F: Fn(&T, &T, f64) -> T>(keys: &[(usize, T)], frame: usize, lerp: F) -> T
where
    T: Clone,
{
    if frame <= keys[0].0 {
        return keys[0].1.clone();
    }
    for w in keys.windows(2) {
        let (f0, ref a) = w[0];
        let (f1, ref b) = w[1];
        if frame <= f1 {
            let s = smoothstep((frame - f0) as f64 / (f1 - f0).max(1) as f64);
            return lerp(a, b, s);
        }
    }
    keys[keys.len() - 1].1.clone()
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.frames < 2 {
            return bad("at least two frames required".into());
        }
        if !(self.fps > 0.0) {
            return bad("fps must be positive".into());
        }
        if self.keyframes.is_empty() || self.object_keys.is_empty() {
            return bad("keyframes and object keys must be nonempty".into());
        }
        let n = self.skeleton.dof_count();
        if let Some(k) = self.keyframes.iter().find(|k| k.angles.len() != n) {
            return bad(format!("keyframe at frame {} has {} angles, skeleton has {n} dofs", k.frame, k.angles.len()));
        }
        if self.keyframes.windows(2).any(|w| w[0].frame >= w[1].frame) || self.object_keys.windows(2).any(|w| w[0].frame >= w[1].frame) {
            return bad("keys must be strictly increasing in frame".into());
        }
        if self.contact_window[0] > self.contact_window[1] || self.contact_window[1] >= self.frames {
            return bad("contact window out of range".into());
        }
        if !(self.object.mass > 0.0) || self.object.half_extents.iter().any(|&h| !(h > 0.0)) {
            return bad("object mass and extents must be positive".into());
        }
        if self.tracked_points == 0 || !(self.contact_threshold_px > 0.0) {
            return bad("tracked point count and contact threshold must be positive".into());
        }
        Ok(())
    }

    pub fn camera(&self) -> CameraModel {
        CameraModel::look_at(self.camera.width, self.camera.height, self.camera.eye, self.camera.target, Vector3::z())
    }

    /// Object mesh in its body frame (centered box).
    pub fn object_mesh(&self) -> TriMesh {
        TriMesh::subdivided_box(self.object.half_extents, self.object.subdivisions)
    }

    pub fn object_initial_pose(&self) -> Transform {
        Transform::new(Rotation::identity(), self.object_keys[0].position)
    }

    pub fn angles_at(&self, frame: usize) -> Vec<f64> {
        let keys: Vec<(usize, Vec<f64>)> = self.keyframes.iter().map(|k| (k.frame, k.angles.clone())).collect();
        interpolate(&keys, frame, |a, b, s| a.iter().zip(b).map(|(x, y)| x + (y - x) * s).collect())
    }

    pub fn ground_truth(&self) -> Result<GroundTruth, ScenarioError> {
        self.validate()?;
        let keys: Vec<(usize, Vector3<f64>)> = self.object_keys.iter().map(|k| (k.frame, k.position)).collect();
        let mut gt = GroundTruth { fps: self.fps, angles: vec![], poses: vec![], joints: vec![], object_poses: vec![], contact: vec![] };
        for t in 0..self.frames {
            let angles = self.angles_at(t);
            let pose = self.skeleton.pose_from_angles(self.root_translation, self.root_orientation, &angles);
            let fk = forward_kinematics(&self.skeleton, &pose).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            gt.joints.push(fk.iter().map(|x| x.position).collect());
            gt.poses.push(pose);
            gt.angles.push(angles);
            let pos = interpolate(&keys, t, |a, b, s| a + (b - a) * s);
            gt.object_poses.push(Transform::new(Rotation::identity(), pos));
            let c = t >= self.contact_window[0] && t <= self.contact_window[1];
            gt.contact.push([c, c]);
        }
        Ok(gt)
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        toml::to_string(self).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        if s.format_version != 1 {
            return Err(ScenarioError::Parse(format!("unsupported format-version {}", s.format_version)));
        }
        s.validate()?;
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<(), ScenarioError> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// "Reach and slide": both hands reach a box on the table, pause in contact, push it 10 cm
    /// away from the body, pause, and pull back. The seed jitters the box placement.
    pub fn desk_slide(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let skel = Skeleton::desk();
        let table = TableSpec::default();
        let half = Vector3::new(0.08, 0.06, 0.06);
        let jitter_x = rng.random_range(-0.02..0.02);
        let jitter_y = rng.random_range(-0.015..0.015);
        let start = Vector3::new(jitter_x, 0.33 + jitter_y, table.top() + half.z);
        let slide = Vector3::new(0.0, SLIDE_DISTANCE, 0.0);
        let root = Vector3::new(0.0, 0.0, 0.9);

        let rest = rest_angles(&skel);
        let contact_angles = |box_pos: Vector3<f64>, init: &[f64]| reach_ik(&skel, root, box_pos, half, init);
        let pre = contact_angles(start, &rest);

        // Hands clear the table edge before reaching in and after letting go.
        let lift = Vector3::new(0.0, -0.16, 0.12);
        let raised = contact_angles(start + lift, &rest);
        let (reach_end, push_start, push_end, frames) = (30usize, 39usize, 66usize, 90usize);
        let mut keyframes = vec![
            Keyframe { frame: 0, angles: rest.clone() },
            Keyframe { frame: 6, angles: rest.clone() },
            Keyframe { frame: 18, angles: raised },
            Keyframe { frame: reach_end, angles: pre.clone() },
        ];
        let mut prev = pre.clone();
        for f in push_start..=push_end {
            let s = smoothstep((f - push_start) as f64 / (push_end - push_start) as f64);
            let a = contact_angles(start + slide * s, &prev);
            keyframes.push(Keyframe { frame: f, angles: a.clone() });
            prev = a;
        }
        let back = contact_angles(start + slide + lift, &prev);
        keyframes.push(Keyframe { frame: 80, angles: back.clone() });
        keyframes.push(Keyframe { frame: frames - 1, angles: back });

        let object_keys = vec![
            ObjectKey { frame: 0, position: start },
            ObjectKey { frame: push_start, position: start },
            ObjectKey { frame: push_end, position: start + slide },
        ];

        Scenario {
            format_version: 1,
            name: "desk_slide".into(),
            seed,
            fps: 30.0,
            frames,
            root_translation: root,
            root_orientation: Rotation::identity(),
            object: BoxObject { half_extents: half, subdivisions: 6, mass: 0.5 },
            table,
            camera: CameraSpec {
                width: 1024.0,
                height: 576.0,
                eye: Vector3::new(1.3, 1.1, 1.5),
                target: Vector3::new(0.0, 0.3, 0.9),
            },
            contact_window: [reach_end, push_end],
            tracked_points: 128,
            contact_threshold_px: 0.5,
            keyframes,
            object_keys,
            skeleton: skel,
        }
    }
}

pub const SLIDE_DISTANCE: f64 = 0.10;

/// Fingertip site offset from a distal finger joint, in its frame.
pub const FINGERTIP_SITE: [f64; 3] = [0.0, 0.0, -0.03];
/// Palm site offset from the wrist, in its frame.
pub const PALM_SITE: [f64; 3] = [0.0, 0.0, -0.05];
/// Radius of the fingertip contact spheres.
pub const FINGERTIP_RADIUS: f64 = 0.012;

fn rest_angles(skel: &Skeleton) -> Vec<f64> {
    let mut a = vec![0.0; skel.dof_count()];
    for j in 0..skel.joint_count() {
        let name = &skel.joint(j).name;
        let r = skel.dof_range(j);
        if name.ends_with("elbow") {
            a[r.start] = 0.3;
        } else if name.contains("finger") {
            a[r.start] = 0.1;
        }
    }
    a
}

/// Damped least-squares IK placing both hands' fingertips on the near face of the box with the
/// fingers pointing away from the body.
fn reach_ik(skel: &Skeleton, root: Vector3<f64>, box_pos: Vector3<f64>, half: Vector3<f64>, init: &[f64]) -> Vec<f64> {
    let face_y = box_pos.y - half.y - FINGERTIP_RADIUS;
    let mut sites: Vec<(usize, Vector3<f64>, Vector3<f64>)> = Vec::new();
    for side in 0..2 {
        let sign = if side == 0 { -1.0 } else { 1.0 };
        let hand_x = box_pos.x + sign * 0.05;
        let tips: Vec<usize> = skel.fingertips().iter().copied().filter(|&t| skel.is_ancestor(skel.wrists()[side], t)).collect();
        for (k, &tip) in tips.iter().enumerate() {
            let dx = [-0.025, 0.0, 0.025][k] * sign;
            sites.push((tip, Vector3::from(FINGERTIP_SITE), Vector3::new(hand_x + dx, face_y, box_pos.z)));
        }
        sites.push((skel.wrists()[side], Vector3::from(PALM_SITE), Vector3::new(hand_x, face_y - 0.10, box_pos.z + 0.01)));
    }
    solve_ik(skel, root, init, &sites, 300)
}

/// Damped least squares on site positions with a weak pull toward `init`. Finite-difference
/// Jacobian; angles clamped to limits every iteration.
pub fn solve_ik(skel: &Skeleton, root: Vector3<f64>, init: &[f64], sites: &[(usize, Vector3<f64>, Vector3<f64>)], iters: usize) -> Vec<f64> {
    let dofs = skel.dofs();
    let n = dofs.len();
    let m = sites.len() * 3;
    let eval = |a: &[f64]| -> DVector<f64> {
        let pose = skel.pose_from_angles(root, Rotation::identity(), a);
        let fk = forward_kinematics(skel, &pose).expect("pose matches skeleton");
        let mut r = DVector::zeros(m);
        for (i, (j, local, target)) in sites.iter().enumerate() {
            let p = fk[*j].apply(local);
            r.fixed_rows_mut::<3>(3 * i).copy_from(&(p - target));
        }
        r
    };
    let mut a = init.to_vec();
    let reg = 1e-4;
    let damping = 1e-3;
    let max_step = 0.1;
    for _ in 0..iters {
        let r = eval(&a);
        let mut jac = DMatrix::zeros(m, n);
        let h = 1e-6;
        for k in 0..n {
            let mut ap = a.clone();
            ap[k] += h;
            let rp = eval(&ap);
            jac.set_column(k, &((rp - &r) / h));
        }
        let mut lhs = jac.transpose() * &jac;
        let mut rhs = -(jac.transpose() * &r);
        for k in 0..n {
            lhs[(k, k)] += damping + reg;
            rhs[k] -= reg * (a[k] - init[k]);
        }
        let mut step = match lhs.cholesky() {
            Some(c) => c.solve(&rhs),
            None => break,
        };
        let norm = step.norm();
        if norm > max_step {
            step *= max_step / norm;
        }
        for k in 0..n {
            a[k] = (a[k] + step[k]).clamp(dofs[k].lower, dofs[k].upper);
        }
        if step.norm() < 1e-10 {
            break;
        }
    }
    a
}
