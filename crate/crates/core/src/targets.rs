//! Hybrid imitation targets: 3D human reference, 2D object tracks and contact labels.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{forward_kinematics, CameraModel, Pose, Rotation, Transform};
use crate::mesh::TriMesh;
use crate::scenario::{GroundTruth, Scenario};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TargetError {
    #[error("no object vertex is visible in the first frame")]
    NoVisibleVertices,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid target: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

/// 2D points per frame with per-point visibility.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackSet {
    pub width: f64,
    pub height: f64,
    /// `points[t][i]` in pixels.
    pub points: Vec<Vec<Vector2<f64>>>,
    pub visible: Vec<Vec<bool>>,
}

impl TrackSet {
    pub fn new(width: f64, height: f64, points: Vec<Vec<Vector2<f64>>>, visible: Vec<Vec<bool>>) -> Result<Self, TargetError> {
        let t = TrackSet { width, height, points, visible };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), TargetError> {
        if self.points.len() != self.visible.len() {
            return Err(TargetError::LengthMismatch("points and visibility frame counts differ".into()));
        }
        let m = self.point_count();
        for (t, (p, v)) in self.points.iter().zip(&self.visible).enumerate() {
            if p.len() != m || v.len() != m {
                return Err(TargetError::LengthMismatch(format!("frame {t} has {} points, expected {m}", p.len())));
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.points.len()
    }

    pub fn point_count(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }

    /// Mean displacement between frames `t-1` and `t` over points visible in both; 0 if none.
    pub fn mean_speed(&self, t: usize) -> f64 {
        let (mut sum, mut n) = (0.0, 0usize);
        for i in 0..self.point_count() {
            if self.visible[t][i] && self.visible[t - 1][i] {
                sum += (self.points[t][i] - self.points[t - 1][i]).norm();
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Text layout: `format-version 1`, `tracks M T W H`, then per frame `M` rows of `u v vis`.
    pub fn to_text(&self) -> String {
        let mut s = format!("format-version {FORMAT_VERSION}\ntracks {} {} {} {}\n", self.point_count(), self.frame_count(), self.width, self.height);
        for (pts, vis) in self.points.iter().zip(&self.visible) {
            for (p, v) in pts.iter().zip(vis) {
                let _ = writeln!(s, "{:.17e} {:.17e} {}", p.x, p.y, u8::from(*v));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, TargetError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let bad = |msg: &str| TargetError::Parse(format!("track file: {msg}"));
        if lines.next().map(str::trim) != Some("format-version 1") {
            return Err(bad("expected `format-version 1`"));
        }
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("missing header"))?.split_whitespace().collect();
        if header.len() != 5 || header[0] != "tracks" {
            return Err(bad("expected `tracks M T W H`"));
        }
        let m: usize = header[1].parse().map_err(|_| bad("bad M"))?;
        let t: usize = header[2].parse().map_err(|_| bad("bad T"))?;
        let w: f64 = header[3].parse().map_err(|_| bad("bad W"))?;
        let h: f64 = header[4].parse().map_err(|_| bad("bad H"))?;
        let mut points = Vec::with_capacity(t);
        let mut visible = Vec::with_capacity(t);
        for _ in 0..t {
            let mut p = Vec::with_capacity(m);
            let mut v = Vec::with_capacity(m);
            for _ in 0..m {
                let row: Vec<&str> = lines.next().ok_or_else(|| bad("truncated"))?.split_whitespace().collect();
                if row.len() != 3 {
                    return Err(bad("rows must be `u v vis`"));
                }
                let u: f64 = row[0].parse().map_err(|_| bad("bad u"))?;
                let vv: f64 = row[1].parse().map_err(|_| bad("bad v"))?;
                let vis = match row[2] {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad("vis must be 0 or 1")),
                };
                p.push(Vector2::new(u, vv));
                v.push(vis);
            }
            points.push(p);
            visible.push(v);
        }
        if lines.next().is_some() {
            return Err(bad("trailing rows"));
        }
        TrackSet::new(w, h, points, visible)
    }

    pub fn write(&self, path: &Path) -> Result<(), TargetError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, TargetError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Möller–Trumbore. Returns the ray parameter of the hit, if any.
fn ray_triangle(orig: &Vector3<f64>, dir: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = orig - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// Relative margin on the segment parameter below which a hit counts as occluding.
pub const OCCLUSION_MARGIN: f64 = 1e-9;

/// Per-vertex visibility of a posed mesh: in front of the camera, inside the image, and the segment
/// from the camera center to the vertex crosses no triangle that does not contain the vertex.
pub fn visible_vertices(world_vertices: &[Vector3<f64>], faces: &[[usize; 3]], cam: &CameraModel) -> Vec<bool> {
    let eye = cam.center();
    // bounding sphere per triangle for a cheap reject
    let spheres: Vec<(Vector3<f64>, f64)> = faces
        .iter()
        .map(|f| {
            let c = (world_vertices[f[0]] + world_vertices[f[1]] + world_vertices[f[2]]) / 3.0;
            let r = f.iter().map(|&i| (world_vertices[i] - c).norm()).fold(0.0, f64::max);
            (c, r)
        })
        .collect();
    world_vertices
        .iter()
        .enumerate()
        .map(|(i, p)| {
            match cam.project(p) {
                Ok(px) if cam.contains(&px) => {}
                _ => return false,
            }
            let dir = p - eye;
            let len2 = dir.norm_squared();
            !faces.iter().zip(&spheres).any(|(f, (c, r))| {
                if f.contains(&i) {
                    return false;
                }
                // distance from the sphere center to the segment
                let t = ((c - eye).dot(&dir) / len2).clamp(0.0, 1.0);
                if (eye + dir * t - c).norm() > *r {
                    return false;
                }
                match ray_triangle(&eye, &dir, &world_vertices[f[0]], &world_vertices[f[1]], &world_vertices[f[2]]) {
                    Some(t) => t > OCCLUSION_MARGIN && t < 1.0 - OCCLUSION_MARGIN,
                    None => false,
                }
            })
        })
        .collect()
}

/// Object part of a hybrid target: mesh vertex ids and their 2D tracks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectReference {
    pub vertex_ids: Vec<usize>,
    pub tracks: TrackSet,
}

/// Fraction of frames a point must be visible in to be kept.
pub const MIN_VISIBLE_FRACTION: f64 = 0.5;

/// Picks up to `count` vertices visible in the first frame, projects them through every object
/// pose, and drops points visible in fewer than half of the frames.
pub fn make_object_reference(mesh: &TriMesh, poses: &[Transform], cam: &CameraModel, count: usize) -> Result<ObjectReference, TargetError> {
    if poses.is_empty() {
        return Err(TargetError::LengthMismatch("no object poses".into()));
    }
    if count == 0 || count > mesh.vertices.len() {
        return Err(TargetError::Invalid(format!("point count {count} must be in [1, {}]", mesh.vertices.len())));
    }
    let posed = |t: &Transform| -> Vec<Vector3<f64>> { mesh.vertices.iter().map(|v| t.apply(v)).collect() };
    let first = visible_vertices(&posed(&poses[0]), &mesh.faces, cam);
    let candidates: Vec<usize> = (0..mesh.vertices.len()).filter(|&i| first[i]).collect();
    if candidates.is_empty() {
        return Err(TargetError::NoVisibleVertices);
    }
    let chosen: Vec<usize> = if candidates.len() <= count {
        candidates
    } else {
        (0..count).map(|i| candidates[i * candidates.len() / count]).collect()
    };
    let mut points = Vec::with_capacity(poses.len());
    let mut visible = Vec::with_capacity(poses.len());
    for pose in poses {
        let world = posed(pose);
        let vis_all = visible_vertices(&world, &mesh.faces, cam);
        let mut p = Vec::with_capacity(chosen.len());
        let mut v = Vec::with_capacity(chosen.len());
        for &i in &chosen {
            match cam.project(&world[i]) {
                Ok(px) => {
                    p.push(px);
                    v.push(vis_all[i]);
                }
                Err(_) => {
                    p.push(Vector2::zeros());
                    v.push(false);
                }
            }
        }
        points.push(p);
        visible.push(v);
    }
    let frames = poses.len() as f64;
    let keep: Vec<usize> = (0..chosen.len())
        .filter(|&k| visible.iter().filter(|v| v[k]).count() as f64 / frames >= MIN_VISIBLE_FRACTION)
        .collect();
    if keep.is_empty() {
        return Err(TargetError::NoVisibleVertices);
    }
    let pick = |rows: Vec<Vec<Vector2<f64>>>| rows.into_iter().map(|r| keep.iter().map(|&k| r[k]).collect()).collect();
    let pick_vis = |rows: Vec<Vec<bool>>| rows.into_iter().map(|r| keep.iter().map(|&k| r[k]).collect()).collect();
    Ok(ObjectReference {
        vertex_ids: keep.iter().map(|&k| chosen[k]).collect(),
        tracks: TrackSet::new(cam.width, cam.height, pick(points), pick_vis(visible))?,
    })
}

/// Per-frame mean speeds of object and hand tracks; index 0 is unused (0).
pub fn track_speeds(objects: &TrackSet, hand: &TrackSet) -> Result<(Vec<f64>, Vec<f64>), TargetError> {
    if objects.frame_count() != hand.frame_count() {
        return Err(TargetError::LengthMismatch(format!(
            "object tracks have {} frames, hand keypoints have {}",
            objects.frame_count(),
            hand.frame_count()
        )));
    }
    let n = objects.frame_count();
    let mut so = vec![0.0; n];
    let mut sh = vec![0.0; n];
    for t in 1..n {
        so[t] = objects.mean_speed(t);
        sh[t] = hand.mean_speed(t);
    }
    Ok((so, sh))
}

/// Forward pass: object moving marks contact, a hand moving alone clears it, otherwise carry.
pub fn contact_forward(obj_speed: &[f64], hand_speed: &[f64], tau: f64) -> Vec<bool> {
    let n = obj_speed.len();
    let mut c = vec![false; n];
    for t in 1..n {
        c[t] = if obj_speed[t] >= tau {
            true
        } else if hand_speed[t] >= tau {
            false
        } else {
            c[t - 1]
        };
    }
    c
}

/// Backward pass: a stationary frame right before a contact frame is in contact. Stops at the
/// second frame because speeds are undefined for the first.
pub fn contact_backward(labels: &mut [bool], obj_speed: &[f64], hand_speed: &[f64], tau: f64) {
    let n = labels.len();
    if n < 3 {
        return;
    }
    for t in (1..n - 1).rev() {
        if labels[t + 1] && obj_speed[t] < tau && hand_speed[t] < tau {
            labels[t] = true;
        }
    }
}

/// Binary contact labels from object tracks and one hand's keypoints; `tau` in pixels per frame.
pub fn estimate_contact_labels(objects: &TrackSet, hand: &TrackSet, tau: f64) -> Result<Vec<bool>, TargetError> {
    if !(tau > 0.0) {
        return Err(TargetError::Invalid(format!("threshold {tau} must be positive")));
    }
    let (so, sh) = track_speeds(objects, hand)?;
    let mut c = contact_forward(&so, &sh, tau);
    contact_backward(&mut c, &so, &sh, tau);
    Ok(c)
}

/// Local wrist rotation that makes the chain pelvis→elbow end in the hand's global rotation.
pub fn unify_wrist(chain: &[Rotation], hand_global: &Rotation) -> Rotation {
    let elbow = chain.iter().fold(Rotation::identity(), |acc, r| acc * *r);
    elbow.inverse() * *hand_global
}

/// 3D human part of a hybrid target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HumanReference {
    pub body_joints: Vec<usize>,
    pub hand_joints: Vec<usize>,
    pub root_translation: Vec<Vector3<f64>>,
    pub root_orientation: Vec<Rotation>,
    /// `positions[t][j]` for every skeleton joint (meters).
    pub positions: Vec<Vec<Vector3<f64>>>,
    /// `rotations[t][j]` local joint rotations.
    pub rotations: Vec<Vec<Rotation>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactLabels {
    pub left: Vec<bool>,
    pub right: Vec<bool>,
}

impl ContactLabels {
    pub fn any(&self, t: usize) -> bool {
        self.left[t] || self.right[t]
    }

    pub fn hand(&self, side: usize) -> &[bool] {
        if side == 0 {
            &self.left
        } else {
            &self.right
        }
    }

    pub fn first_contact(&self) -> Option<usize> {
        (0..self.left.len()).find(|&t| self.any(t))
    }
}

/// Imitation goal: 3D human sequence, 2D object tracks, per-hand contact labels and the camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridTarget {
    #[serde(rename = "format-version")]
    pub format_version: u32,
    pub fps: f64,
    pub frames: usize,
    pub human: HumanReference,
    pub object: ObjectReference,
    pub contact: ContactLabels,
    pub camera: CameraModel,
}

impl HybridTarget {
    pub fn validate(&self) -> Result<(), TargetError> {
        let f = self.frames;
        if f < 2 {
            return Err(TargetError::Invalid("at least two frames required".into()));
        }
        if !(self.fps > 0.0) {
            return Err(TargetError::Invalid("fps must be positive".into()));
        }
        let h = &self.human;
        for (name, len) in [
            ("root_translation", h.root_translation.len()),
            ("root_orientation", h.root_orientation.len()),
            ("positions", h.positions.len()),
            ("rotations", h.rotations.len()),
            ("tracks", self.object.tracks.frame_count()),
            ("contact.left", self.contact.left.len()),
            ("contact.right", self.contact.right.len()),
        ] {
            if len != f {
                return Err(TargetError::LengthMismatch(format!("{name} has {len} frames, expected {f}")));
            }
        }
        self.object.tracks.validate()?;
        if self.object.vertex_ids.len() != self.object.tracks.point_count() {
            return Err(TargetError::LengthMismatch("vertex ids and track points differ".into()));
        }
        for (t, (pts, vis)) in self.object.tracks.points.iter().zip(&self.object.tracks.visible).enumerate() {
            for (p, v) in pts.iter().zip(vis) {
                if *v && !self.camera.contains(p) {
                    return Err(TargetError::Invalid(format!("visible track point outside the image at frame {t}")));
                }
            }
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        (self.frames - 1) as f64 / self.fps
    }

    /// Nearest frame to time `t` (seconds), clamped to the sequence.
    pub fn frame_at(&self, t: f64) -> usize {
        ((t * self.fps).round().max(0.0) as usize).min(self.frames - 1)
    }

    pub fn pose(&self, t: usize) -> Pose {
        Pose {
            root_translation: self.human.root_translation[t],
            root_orientation: self.human.root_orientation[t],
            local: self.human.rotations[t].clone(),
        }
    }

    pub fn to_toml(&self) -> Result<String, TargetError> {
        toml::to_string(self).map_err(|e| TargetError::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, TargetError> {
        let t: HybridTarget = toml::from_str(text).map_err(|e| TargetError::Parse(e.to_string()))?;
        if t.format_version != FORMAT_VERSION {
            return Err(TargetError::Parse(format!("unsupported format-version {}", t.format_version)));
        }
        t.validate()?;
        Ok(t)
    }

    pub fn write(&self, path: &Path) -> Result<(), TargetError> {
        std::fs::write(path, self.to_toml()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, TargetError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }
}

/// Zero-mean Gaussian perturbations applied when rendering ground truth into a target.
/// A zero standard deviation copies that channel verbatim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Per-axis joint position noise (meters).
    pub joint_position: f64,
    /// Per-axis rotation-vector noise on local joint rotations (radians).
    pub joint_rotation: f64,
    /// Per-axis rotation-vector noise on the hand estimator's global wrist rotation (radians).
    pub hand_rotation: f64,
    /// Per-axis noise on 2D keypoints (pixels).
    pub keypoint_pixels: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig { joint_position: 0.005, joint_rotation: 0.0, hand_rotation: 0.0, keypoint_pixels: 0.0 }
    }
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig { joint_position: 0.0, joint_rotation: 0.0, hand_rotation: 0.0, keypoint_pixels: 0.0 }
    }
}

/// 2D body and hand keypoints standing in for the 2D estimators' output.
#[derive(Clone, Debug, PartialEq)]
pub struct KeypointEvidence {
    pub body: TrackSet,
    pub left_hand: TrackSet,
    pub right_hand: TrackSet,
}

impl KeypointEvidence {
    /// Both hands' keypoints concatenated per frame.
    pub fn hands(&self) -> TrackSet {
        let cat = |a: &Vec<Vec<Vector2<f64>>>, b: &Vec<Vec<Vector2<f64>>>| a.iter().zip(b).map(|(x, y)| x.iter().chain(y).copied().collect()).collect();
        let catv = |a: &Vec<Vec<bool>>, b: &Vec<Vec<bool>>| a.iter().zip(b).map(|(x, y)| x.iter().chain(y).copied().collect()).collect();
        TrackSet {
            width: self.body.width,
            height: self.body.height,
            points: cat(&self.left_hand.points, &self.right_hand.points),
            visible: catv(&self.left_hand.visible, &self.right_hand.visible),
        }
    }
}

/// Everything the synthetic video/estimator stand-in produces.
#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub target: HybridTarget,
    pub keypoints: KeypointEvidence,
    pub ground_truth: GroundTruth,
}

fn project_joints(cam: &CameraModel, joints: &[Vec<Vector3<f64>>], ids: &[usize], noise: f64, rng: &mut ChaCha8Rng) -> TrackSet {
    let normal = Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut points = Vec::with_capacity(joints.len());
    let mut visible = Vec::with_capacity(joints.len());
    for frame in joints {
        let mut p = Vec::with_capacity(ids.len());
        let mut v = Vec::with_capacity(ids.len());
        for &j in ids {
            match cam.project(&frame[j]) {
                Ok(mut px) => {
                    if noise > 0.0 {
                        px += Vector2::new(normal.sample(rng), normal.sample(rng));
                    }
                    v.push(cam.contains(&px));
                    p.push(px);
                }
                Err(_) => {
                    p.push(Vector2::zeros());
                    v.push(false);
                }
            }
        }
        points.push(p);
        visible.push(v);
    }
    TrackSet { width: cam.width, height: cam.height, points, visible }
}

/// Renders the scenario's ground truth into a hybrid target, deterministically per seed.
pub fn synth_reference(scenario: &Scenario, noise: &NoiseConfig, seed: u64) -> Result<SynthOutput, TargetError> {
    scenario.validate().map_err(|e| TargetError::InvalidScenario(e.to_string()))?;
    let gt = scenario.ground_truth().map_err(|e| TargetError::InvalidScenario(e.to_string()))?;
    synth_from_ground_truth(scenario, &gt, noise, seed)
}

pub fn synth_from_ground_truth(scenario: &Scenario, gt: &GroundTruth, noise: &NoiseConfig, seed: u64) -> Result<SynthOutput, TargetError> {
    let skel = &scenario.skeleton;
    let cam = scenario.camera();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = gt.poses.len();

    let pos_noise = Normal::new(0.0, noise.joint_position.max(f64::MIN_POSITIVE)).expect("sigma");
    let rot_noise = Normal::new(0.0, noise.joint_rotation.max(f64::MIN_POSITIVE)).expect("sigma");
    let hand_noise = Normal::new(0.0, noise.hand_rotation.max(f64::MIN_POSITIVE)).expect("sigma");
    let sample3 = |d: &Normal<f64>, rng: &mut ChaCha8Rng| Vector3::new(d.sample(rng), d.sample(rng), d.sample(rng));

    let mut positions = Vec::with_capacity(frames);
    let mut rotations = Vec::with_capacity(frames);
    for (t, pose) in gt.poses.iter().enumerate() {
        let mut p = gt.joints[t].clone();
        if noise.joint_position > 0.0 {
            for x in p.iter_mut() {
                *x += sample3(&pos_noise, &mut rng);
            }
        }
        let mut r = pose.local.clone();
        if noise.joint_rotation > 0.0 {
            for q in r.iter_mut().skip(1) {
                *q = *q * Rotation::from_axis_angle(&sample3(&rot_noise, &mut rng));
            }
        }
        if noise.joint_rotation > 0.0 || noise.hand_rotation > 0.0 {
            // Reconcile the body estimate's wrists with a separately estimated global hand rotation.
            let fk = forward_kinematics(skel, pose).map_err(|e| TargetError::InvalidScenario(e.to_string()))?;
            for w in skel.wrists() {
                let mut hand_global = fk[w].rotation;
                if noise.hand_rotation > 0.0 {
                    hand_global = hand_global * Rotation::from_axis_angle(&sample3(&hand_noise, &mut rng));
                }
                let chain = skel.chain(skel.parent(w).expect("wrist has a parent"));
                let rots: Vec<Rotation> = chain.iter().map(|&j| if j == 0 { pose.root_orientation } else { r[j] }).collect();
                r[w] = unify_wrist(&rots, &hand_global);
            }
        }
        positions.push(p);
        rotations.push(r);
    }

    let object = make_object_reference(&scenario.object_mesh(), &gt.object_poses, &cam, scenario.tracked_points)?;

    let body_ids = skel.body_joints();
    let hand_ids: Vec<Vec<usize>> = (0..2).map(|s| skel.hand_of(s)).collect();
    let body = project_joints(&cam, &gt.joints, &body_ids, noise.keypoint_pixels, &mut rng);
    let left_hand = project_joints(&cam, &gt.joints, &hand_ids[0], noise.keypoint_pixels, &mut rng);
    let right_hand = project_joints(&cam, &gt.joints, &hand_ids[1], noise.keypoint_pixels, &mut rng);
    let left = estimate_contact_labels(&object.tracks, &left_hand, scenario.contact_threshold_px)?;
    let right = estimate_contact_labels(&object.tracks, &right_hand, scenario.contact_threshold_px)?;

    let target = HybridTarget {
        format_version: FORMAT_VERSION,
        fps: scenario.fps,
        frames,
        human: HumanReference {
            body_joints: body_ids,
            hand_joints: skel.hand_joints(),
            root_translation: gt.poses.iter().map(|p| p.root_translation).collect(),
            root_orientation: gt.poses.iter().map(|p| p.root_orientation).collect(),
            positions,
            rotations,
        },
        object,
        contact: ContactLabels { left, right },
        camera: cam,
    };
    target.validate()?;
    Ok(SynthOutput { target, keypoints: KeypointEvidence { body, left_hand, right_hand }, ground_truth: gt.clone() })
}
