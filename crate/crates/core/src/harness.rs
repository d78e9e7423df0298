//! Evaluation episodes, metrics, file plumbing and the synthetic alignment cases used by the
//! command-line tool and the examples.

use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{loss_hoi, AlignmentConfig, AlignmentError, AlignmentProblem, Keypoints};
use crate::geometry::{forward_kinematics, geodesic_distance, GeometryError, Pose, Skeleton, Transform};
use crate::rewards::{hand_object_distance, RewardTerms};
use crate::rl::{Checkpoint, ImitationEnv, RlError, TrainingInputs};
use crate::scenario::{GroundTruth, Scenario, ScenarioError};
use crate::sim::{Action, SimError, SimState};
use crate::targets::{synth_from_ground_truth, KeypointEvidence, NoiseConfig, TargetError, TrackSet};

pub const FORMAT_VERSION: u32 = 1;

/// Success needs both the mean joint error and the mean object translation error below this (m).
pub const SUCCESS_THRESHOLD: f64 = 0.2;

/// Contact-precision thresholds (m).
pub const CONTACT_THRESHOLDS: [f64; 2] = [0.1, 0.025];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// True for numerical blow-ups (simulation, training or alignment), false for bad inputs.
    pub fn is_divergence(&self) -> bool {
        match self {
            HarnessError::Rl(RlError::DivergedTraining { .. } | RlError::SimDiverged(_) | RlError::NonFinite(_)) => true,
            HarnessError::Sim(SimError::NonFiniteState(_)) => true,
            HarnessError::Alignment(AlignmentError::NonFiniteLoss { .. }) => true,
            _ => false,
        }
    }

    /// Process exit code: 3 for divergence, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.is_divergence() {
            3
        } else {
            2
        }
    }
}

/// One control step of an evaluation episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// Seconds since reference frame 0.
    pub time: f64,
    /// Reference frame the step was scored against.
    pub frame: usize,
    pub state: SimState,
    pub action: Vec<f64>,
    pub reward: RewardTerms,
    /// Contact labels (left, right) used by the reward.
    pub psi: [bool; 2],
    /// World positions of every skeleton joint.
    pub joints: Vec<Vector3<f64>>,
    pub object: Transform,
    /// Hand-object distance (m) of the labeled hands, when any hand is labeled.
    pub contact_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrajectory {
    #[serde(rename = "format-version")]
    pub format_version: u32,
    pub target_id: String,
    pub steps: Vec<TrajectoryStep>,
}

impl EpisodeTrajectory {
    /// Checks that timestamps increase and the episode fits the reference.
    pub fn validate(&self, reference_frames: usize) -> Result<(), HarnessError> {
        if self.steps.windows(2).any(|w| !(w[1].time > w[0].time)) {
            return Err(HarnessError::Parse("trajectory timestamps are not increasing".into()));
        }
        if self.steps.iter().any(|s| s.frame >= reference_frames) {
            return Err(HarnessError::LengthMismatch("trajectory frame beyond the reference".into()));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        write_json(self, path)
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let t: EpisodeTrajectory = read_json(path)?;
        check_version(t.format_version)?;
        Ok(t)
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), HarnessError> {
    let text = serde_json::to_string(value).map_err(|e| HarnessError::Parse(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| HarnessError::Parse(format!("{}: {e}", path.display())))
}

fn check_version(v: u32) -> Result<(), HarnessError> {
    if v != FORMAT_VERSION {
        return Err(HarnessError::Parse(format!("unsupported format-version {v}")));
    }
    Ok(())
}

/// Plays one full episode from frame 0 with `policy`, ignoring early termination.
pub fn rollout(env: &ImitationEnv, target_id: &str, mut policy: impl FnMut(&[Vec<f64>; 3]) -> Vec<f64>) -> Result<EpisodeTrajectory, HarnessError> {
    let mut ep = env.reset(0)?;
    let skel = &env.world.humanoid.skeleton;
    let hands = [skel.hand_of(0), skel.hand_of(1)];
    let mut steps = Vec::new();
    loop {
        let action = Action(policy(&env.observe(&ep)));
        let out = env.step(&mut ep, &action)?;
        let kin = env.world.body_kinematics(&ep.sim);
        let joints: Vec<Vector3<f64>> = kin.frames.iter().map(|f| f.position).collect();
        let object = ep.sim.object.transform();
        let psi = [env.target.contact.left[out.frame], env.target.contact.right[out.frame]];
        let contact_distance = if psi[0] || psi[1] {
            let points: Vec<Vector3<f64>> = (0..2).filter(|&s| psi[s]).flat_map(|s| hands[s].iter().map(|&j| joints[j])).collect();
            let verts: Vec<Vector3<f64>> = env.vertices.iter().map(|v| object.apply(v)).collect();
            Some(hand_object_distance(&points, &verts))
        } else {
            None
        };
        steps.push(TrajectoryStep {
            time: env.time(&ep),
            frame: out.frame,
            state: ep.sim.clone(),
            action: action.0,
            reward: out.reward,
            psi,
            joints,
            object,
            contact_distance,
        });
        if out.truncated {
            break;
        }
    }
    Ok(EpisodeTrajectory { format_version: FORMAT_VERSION, target_id: target_id.into(), steps })
}

/// Full-length episode of a checkpoint's mean action.
pub fn evaluate_checkpoint(checkpoint: &Checkpoint, inputs: &TrainingInputs, target_id: &str) -> Result<EpisodeTrajectory, HarnessError> {
    let env = inputs.env(&checkpoint.config)?;
    rollout(&env, target_id, |obs| checkpoint.act(obs))
}

/// Imitation quality of one episode. Lengths in millimeters, angles in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mpjpe_body_mm: f64,
    pub mpjpe_hand_mm: f64,
    pub mpjpe_all_mm: f64,
    pub t_root_mm: f64,
    pub t_obj_mm: f64,
    pub o_obj_rad: f64,
    pub success: bool,
    /// Fraction of labeled-contact steps with hand-object distance below 0.1 m.
    pub c_prec_100: f64,
    /// The same below 0.025 m.
    pub c_prec_25: f64,
    /// Mean hand-object distance over labeled-contact steps.
    pub d_hoi_mm: f64,
    pub contact_steps: usize,
    pub steps: usize,
}

/// Success of an imitation given its mean joint and object errors in meters.
pub fn success(mpjpe_all: f64, t_obj: f64) -> bool {
    mpjpe_all < SUCCESS_THRESHOLD && t_obj < SUCCESS_THRESHOLD
}

/// Compares each step with the ground-truth frame nearest to its timestamp.
pub fn compute_metrics(traj: &EpisodeTrajectory, truth: &GroundTruth, skeleton: &Skeleton) -> Result<MetricsReport, HarnessError> {
    if traj.steps.is_empty() || truth.frame_count() == 0 {
        return Err(HarnessError::LengthMismatch("empty trajectory or reference".into()));
    }
    let n = skeleton.joint_count();
    let body = skeleton.body_joints();
    let hand = skeleton.hand_joints();
    let mut sums = [0.0; 6];
    let mut contact = Vec::new();
    for step in &traj.steps {
        let f = truth.frame_at(step.time);
        let gt = &truth.joints[f];
        if step.joints.len() != n || gt.len() != n {
            return Err(HarnessError::LengthMismatch(format!("expected {n} joints per frame")));
        }
        let err: Vec<f64> = step.joints.iter().zip(gt).map(|(a, b)| (a - b).norm()).collect();
        let mean = |ids: &[usize]| if ids.is_empty() { 0.0 } else { ids.iter().map(|&j| err[j]).sum::<f64>() / ids.len() as f64 };
        sums[0] += mean(&body);
        sums[1] += mean(&hand);
        sums[2] += err.iter().sum::<f64>() / n as f64;
        sums[3] += err[0];
        let obj = &truth.object_poses[f];
        sums[4] += (step.object.position - obj.position).norm();
        sums[5] += geodesic_distance(&step.object.rotation, &obj.rotation);
        if let Some(d) = step.contact_distance {
            contact.push(d);
        }
    }
    let k = traj.steps.len() as f64;
    let [body_m, hand_m, all_m, root_m, obj_m, rot] = sums.map(|s| s / k);
    let prec = |tau: f64| if contact.is_empty() { 0.0 } else { contact.iter().filter(|&&d| d < tau).count() as f64 / contact.len() as f64 };
    Ok(MetricsReport {
        mpjpe_body_mm: 1e3 * body_m,
        mpjpe_hand_mm: 1e3 * hand_m,
        mpjpe_all_mm: 1e3 * all_m,
        t_root_mm: 1e3 * root_m,
        t_obj_mm: 1e3 * obj_m,
        o_obj_rad: rot,
        success: success(all_m, obj_m),
        c_prec_100: prec(CONTACT_THRESHOLDS[0]),
        c_prec_25: prec(CONTACT_THRESHOLDS[1]),
        d_hoi_mm: if contact.is_empty() { 0.0 } else { 1e3 * contact.iter().sum::<f64>() / contact.len() as f64 },
        contact_steps: contact.len(),
        steps: traj.steps.len(),
    })
}

/// Metrics file: a versioned JSON object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    #[serde(rename = "format-version")]
    pub format_version: u32,
    pub label: String,
    pub metrics: MetricsReport,
}

impl MetricsFile {
    pub fn new(label: &str, metrics: MetricsReport) -> Self {
        MetricsFile { format_version: FORMAT_VERSION, label: label.into(), metrics }
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        write_json(self, path)
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let m: MetricsFile = read_json(path)?;
        check_version(m.format_version)?;
        Ok(m)
    }
}

/// CSV with a `# format-version` line, a header row and one row per report.
pub fn metrics_csv(files: &[MetricsFile]) -> Result<String, HarnessError> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record([
        "label",
        "mpjpe_body_mm",
        "mpjpe_hand_mm",
        "mpjpe_all_mm",
        "t_root_mm",
        "t_obj_mm",
        "o_obj_rad",
        "success",
        "c_prec_100",
        "c_prec_25",
        "d_hoi_mm",
        "contact_steps",
        "steps",
    ])
    .map_err(|e| HarnessError::Parse(e.to_string()))?;
    for f in files {
        let m = &f.metrics;
        w.write_record([
            f.label.clone(),
            m.mpjpe_body_mm.to_string(),
            m.mpjpe_hand_mm.to_string(),
            m.mpjpe_all_mm.to_string(),
            m.t_root_mm.to_string(),
            m.t_obj_mm.to_string(),
            m.o_obj_rad.to_string(),
            m.success.to_string(),
            m.c_prec_100.to_string(),
            m.c_prec_25.to_string(),
            m.d_hoi_mm.to_string(),
            m.contact_steps.to_string(),
            m.steps.to_string(),
        ])
        .map_err(|e| HarnessError::Parse(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| HarnessError::Parse(e.to_string()))?;
    Ok(format!("# format-version {FORMAT_VERSION}\n{}", String::from_utf8(body).expect("utf-8")))
}

pub fn write_metrics_csv(files: &[MetricsFile], path: &Path) -> Result<(), HarnessError> {
    std::fs::File::create(path)?.write_all(metrics_csv(files)?.as_bytes())?;
    Ok(())
}

const KEYPOINT_FILES: [&str; 3] = ["body.tracks", "left_hand.tracks", "right_hand.tracks"];

/// Writes 2D body and hand keypoints as three track files in `dir`.
pub fn write_keypoints(keypoints: &KeypointEvidence, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    for (name, tracks) in KEYPOINT_FILES.iter().zip([&keypoints.body, &keypoints.left_hand, &keypoints.right_hand]) {
        tracks.write(&dir.join(name))?;
    }
    Ok(())
}

pub fn read_keypoints(dir: &Path) -> Result<KeypointEvidence, HarnessError> {
    let [body, left_hand, right_hand] = KEYPOINT_FILES.map(|name| TrackSet::read(&dir.join(name)));
    Ok(KeypointEvidence { body: body?, left_hand: left_hand?, right_hand: right_hand? })
}

/// A human estimate with a constant angle bias on the arms, plus keypoints of the truth.
#[derive(Clone, Debug)]
pub struct AlignmentCase {
    pub problem: AlignmentProblem,
    pub truth: Vec<Pose>,
}

/// Quality of a human estimate against its alignment problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMetrics {
    /// Root of the minimum over frames of the contact-joint chamfer to the object (mm).
    pub d_hoi_mm: f64,
    /// Mean pixel error of the visible hand keypoints.
    pub hand_px: f64,
}

pub fn alignment_metrics(problem: &AlignmentProblem, contact_joints: &[usize], poses: &[Pose]) -> Result<AlignmentMetrics, HarnessError> {
    let d = loss_hoi(problem, contact_joints, poses)?;
    let kp = &problem.hand;
    let (mut sum, mut count) = (0.0, 0usize);
    for (t, pose) in poses.iter().enumerate() {
        let world = forward_kinematics(&problem.skeleton, pose)?;
        for (k, &j) in kp.ids.iter().enumerate() {
            if kp.visible[t][k] {
                sum += (problem.camera.project(&world[j].position)? - kp.points[t][k]).norm();
                count += 1;
            }
        }
    }
    Ok(AlignmentMetrics { d_hoi_mm: 1e3 * d.sqrt(), hand_px: if count > 0 { sum / count as f64 } else { 0.0 } })
}

/// Initial hand-object distance below which a drawn bias is rejected (mm).
const MIN_INITIAL_D_HOI_MM: f64 = 80.0;

/// Desk scenario `seed` whose human estimate carries a constant random bias (up to `bias`
/// radians) on every optimized arm and hand angle, redrawn until the hands sit more than 8 cm
/// from the object. Keypoints are projections of the ground truth with `pixel_noise`.
pub fn misaligned_case(seed: u64, config: &AlignmentConfig, bias: f64, pixel_noise: f64) -> Result<AlignmentCase, HarnessError> {
    let scenario = Scenario::desk_slide(seed);
    let truth = scenario.ground_truth()?;
    let noise = NoiseConfig { keypoint_pixels: pixel_noise, ..NoiseConfig::none() };
    let synth = synth_from_ground_truth(&scenario, &truth, &noise, seed)?;
    let skel = &scenario.skeleton;
    let dofs = skel.dofs();
    let biased: Vec<usize> = config.optimized.iter().filter(|&&j| arm_or_hand(skel, j)).flat_map(|&j| skel.dof_range(j)).collect();
    let verts: Vec<Vector3<f64>> = {
        let pose = scenario.object_initial_pose();
        scenario.object_mesh().vertices.iter().map(|v| pose.apply(v)).collect()
    };
    let mut hand_ids = skel.hand_of(0);
    hand_ids.extend(skel.hand_of(1));
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xa11_9e));
    for _ in 0..100 {
        let offsets: Vec<f64> = (0..dofs.len()).map(|i| if biased.contains(&i) { rng.random_range(-bias..=bias) } else { 0.0 }).collect();
        let poses: Vec<Pose> = truth
            .angles
            .iter()
            .map(|a| {
                let b: Vec<f64> = a.iter().zip(&offsets).zip(&dofs).map(|((x, o), d)| (x + o).clamp(d.lower, d.upper)).collect();
                skel.pose_from_angles(scenario.root_translation, scenario.root_orientation, &b)
            })
            .collect();
        let problem = AlignmentProblem {
            skeleton: skel.clone(),
            poses,
            camera: synth.target.camera.clone(),
            body: Keypoints::from_tracks(skel.body_joints(), &synth.keypoints.body),
            hand: Keypoints::from_tracks(hand_ids.clone(), &synth.keypoints.hands()),
            object_vertices: verts.clone(),
        };
        if alignment_metrics(&problem, &config.contact_joints, &problem.poses)?.d_hoi_mm > MIN_INITIAL_D_HOI_MM {
            return Ok(AlignmentCase { problem, truth: truth.poses.clone() });
        }
    }
    Err(HarnessError::Parse(format!("no bias of at most {bias} rad moves the hands {MIN_INITIAL_D_HOI_MM} mm away")))
}

/// Joints on exactly one wrist's chain, or inside a hand.
fn arm_or_hand(skel: &Skeleton, j: usize) -> bool {
    let on = |w: usize| j == w || skel.is_ancestor(j, w) || skel.is_ancestor(w, j);
    let [l, r] = skel.wrists();
    on(l) != on(r)
}
