use nalgebra::{Matrix3, Vector3};

use super::{early_termination, RlError, Termination, TerminationThresholds};
use crate::geometry::{Rotation, Transform};
use crate::rewards::{object_pixel_errors, step_reward, HumanFrame, RewardConfig, RewardContext, RewardTerms};
use crate::sim::{Action, PhysicsWorld, SimState};
use crate::targets::HybridTarget;

/// Per-frame quantities of the target precomputed for observations and rewards.
#[derive(Clone, Debug)]
pub struct Reference {
    /// Reference hinge angles.
    pub hinges: Vec<Vec<f64>>,
    /// The same angles in normalized action units.
    pub actions: Vec<Vec<f64>>,
    pub frames: Vec<HumanFrame>,
}

impl Reference {
    pub fn new(world: &PhysicsWorld, target: &HybridTarget) -> Self {
        let skel = &world.humanoid.skeleton;
        let hinges: Vec<Vec<f64>> = (0..target.frames).map(|t| skel.angles_from_pose(&target.pose(t))).collect();
        let actions = hinges.iter().map(|h| Action::from_targets(skel, h).0).collect();
        Reference { hinges, actions, frames: HumanFrame::sequence(skel, target) }
    }

    /// Hinge rates at frame `t` by central differences.
    pub fn hinge_rates(&self, t: usize, fps: f64) -> Vec<f64> {
        let last = self.hinges.len() - 1;
        let (a, b) = (t.saturating_sub(1), (t + 1).min(last));
        let span = (b - a).max(1) as f64 / fps;
        self.hinges[b].iter().zip(&self.hinges[a]).map(|(x, y)| (x - y) / span).collect()
    }
}

/// Tracking errors checked by early termination.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrackingErrors {
    pub body_mean: f64,
    pub body_max: f64,
    pub fingertip_mean: f64,
    /// Mean pixel distance of the visible tracked object vertices.
    pub object_px: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeState {
    pub sim: SimState,
    pub start_frame: usize,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub reward: RewardTerms,
    /// Reference frame the step was scored against.
    pub frame: usize,
    pub errors: TrackingErrors,
    pub termination: Termination,
    /// The reference ended.
    pub truncated: bool,
}

/// A physics world paired with an imitation target.
pub struct ImitationEnv {
    pub world: PhysicsWorld,
    pub target: HybridTarget,
    pub reference: Reference,
    /// Object mesh vertices in the body frame.
    pub vertices: Vec<Vector3<f64>>,
    pub reward: RewardConfig,
    pub termination: TerminationThresholds,
    pub early_termination: bool,
    pub goal_horizon: usize,
    /// Reference object poses, used only by the pose reward ablation.
    pub object_poses: Option<Vec<Transform>>,
    body: Vec<usize>,
    root_inv: Matrix3<f64>,
}

impl ImitationEnv {
    pub fn new(world: PhysicsWorld, target: HybridTarget, reward: RewardConfig, termination: TerminationThresholds, goal_horizon: usize) -> Result<Self, RlError> {
        target.validate().map_err(|e| RlError::InvalidConfig(e.to_string()))?;
        let skel = &world.humanoid.skeleton;
        if target.human.positions.iter().any(|p| p.len() != skel.joint_count()) {
            return Err(RlError::LengthMismatch("target joints do not match the simulated skeleton".into()));
        }
        if target.object.vertex_ids.iter().any(|&i| i >= world.object.mesh.vertices.len()) {
            return Err(RlError::LengthMismatch("tracked vertex ids exceed the object mesh".into()));
        }
        let reference = Reference::new(&world, &target);
        let vertices = world.object.mesh.vertices.clone();
        let body = skel.body_joints();
        let root_inv = world.humanoid.root.rotation.to_matrix().transpose();
        Ok(ImitationEnv { world, target, reference, vertices, reward, termination, early_termination: true, goal_horizon, object_poses: None, body, root_inv })
    }

    /// Feature sizes of the human, object and goal groups.
    pub fn obs_dims(&self) -> [usize; 3] {
        let n = self.world.humanoid.skeleton.joint_count();
        let d = self.world.dof_count();
        [6 * n + 2 * d, 15, self.goal_horizon * (d + 3 * n) + 1]
    }

    pub fn action_dim(&self) -> usize {
        self.world.dof_count()
    }

    /// Humanoid at reference frame `frame` with reference hinge rates, object at rest. Falls
    /// back to frame 0 at rest when that pose penetrates the scene.
    pub fn reset(&self, frame: usize) -> Result<EpisodeState, RlError> {
        let frame = frame.min(self.target.frames - 1);
        let rates = self.reference.hinge_rates(frame, self.target.fps);
        match self.world.reset(&self.target.pose(frame), Some(&rates)) {
            Ok(sim) => Ok(EpisodeState { sim, start_frame: frame, steps: 0 }),
            Err(_) if frame != 0 => Ok(EpisodeState { sim: self.world.reset(&self.target.pose(0), None)?, start_frame: 0, steps: 0 }),
            Err(e) => Err(e.into()),
        }
    }

    pub fn time(&self, ep: &EpisodeState) -> f64 {
        ep.start_frame as f64 / self.target.fps + ep.sim.time
    }

    pub fn frame(&self, ep: &EpisodeState) -> usize {
        self.target.frame_at(self.time(ep))
    }

    fn local(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.root_inv * v
    }

    /// Human, object and goal features, expressed in the (fixed) root frame.
    pub fn observe(&self, ep: &EpisodeState) -> [Vec<f64>; 3] {
        let s = &ep.sim;
        let root = self.world.humanoid.root.position;
        let kin = self.world.body_kinematics(s);
        let dofs = self.world.humanoid.skeleton.dofs();
        let [nh, no, ng] = self.obs_dims();

        let mut human = Vec::with_capacity(nh);
        for (f, v) in kin.frames.iter().zip(&kin.linear) {
            human.extend(self.local(&(f.position - root)).iter());
            human.extend(self.local(v).iter());
        }
        human.extend(s.q.iter().zip(&dofs).map(|(q, d)| if d.half_range() > 0.0 { (q - d.mid()) / d.half_range() } else { 0.0 }));
        human.extend(s.qd.iter().map(|w| 0.1 * w));

        let o = &s.object;
        let mut object = Vec::with_capacity(no);
        object.extend(self.local(&(o.position - root)).iter());
        let rel = Rotation::from_matrix(&(self.root_inv * o.orientation.to_matrix()));
        object.extend(rel.to_6d());
        object.extend(self.local(&o.linear).iter());
        object.extend(self.local(&o.angular).iter());

        let f = self.frame(ep);
        let last = self.target.frames - 1;
        let mut goal = Vec::with_capacity(ng);
        for i in 1..=self.goal_horizon {
            let g = (f + i).min(last);
            goal.extend(&self.reference.actions[g]);
            for (p, q) in self.reference.frames[g].positions.iter().zip(&kin.frames) {
                goal.extend(self.local(&(p - q.position)).iter());
            }
        }
        goal.push(f as f64 / last as f64);
        [human, object, goal]
    }

    pub fn errors(&self, state: &SimState, t: usize) -> Result<TrackingErrors, RlError> {
        let kin = self.world.body_kinematics(state);
        let reference = &self.target.human.positions[t];
        let err = |j: usize| (kin.frames[j].position - reference[j]).norm();
        let body: Vec<f64> = self.body.iter().map(|&j| err(j)).collect();
        let tips = self.world.humanoid.skeleton.fingertips();
        let tracks = &self.target.object.tracks;
        let px = object_pixel_errors(
            &state.object.transform(),
            &self.vertices,
            &self.target.object.vertex_ids,
            &tracks.points[t],
            &tracks.visible[t],
            &self.target.camera,
            self.reward.behind_camera_error_px,
        )?;
        Ok(TrackingErrors {
            body_mean: body.iter().sum::<f64>() / body.len().max(1) as f64,
            body_max: body.iter().cloned().fold(0.0, f64::max),
            fingertip_mean: tips.iter().map(|&j| err(j)).sum::<f64>() / tips.len().max(1) as f64,
            object_px: if px.is_empty() { 0.0 } else { px.iter().sum::<f64>() / px.len() as f64 },
        })
    }

    /// Reward of `state` (reached by applying `action`) against reference frame `t`.
    pub fn reward(&self, state: &SimState, action: &Action, t: usize) -> Result<RewardTerms, RlError> {
        let ctx = RewardContext {
            target: &self.target,
            skeleton: &self.world.humanoid.skeleton,
            frames: &self.reference.frames,
            vertices: &self.vertices,
            object_poses: self.object_poses.as_deref(),
        };
        Ok(step_reward(&self.world, state, action, &ctx, t, &self.reward)?)
    }

    pub fn step(&self, ep: &mut EpisodeState, action: &Action) -> Result<StepOutcome, RlError> {
        ep.sim = self.world.step(&ep.sim, action)?;
        ep.steps += 1;
        let time = self.time(ep);
        let frame = self.target.frame_at(time);
        let reward = self.reward(&ep.sim, action, frame)?;
        let errors = self.errors(&ep.sim, frame)?;
        let termination = if self.early_termination {
            early_termination(&errors, self.target.camera.width, self.target.camera.height, &self.termination)
        } else {
            Termination::Continue
        };
        let truncated = time >= self.target.duration() - 1e-9;
        Ok(StepOutcome { reward, frame, errors, termination, truncated })
    }
}
