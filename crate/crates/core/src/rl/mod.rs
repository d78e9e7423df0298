//! PPO training of a tracking policy: GAE advantages, clipped policy and value losses with a
//! soft bound on the action mean, pre-contact initialization and early termination.

mod env;
pub mod nn;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rewards::{RewardConfig, RewardError};
use crate::sim::{PdGains, PhysicsParams, SimError};
use crate::targets::ContactLabels;

pub use env::{EpisodeState, ImitationEnv, Reference, StepOutcome, TrackingErrors};
pub use nn::PolicySpec;
pub use train::{
    train, Agent, Checkpoint, LogRow, PpoBatch, RolloutBuffer, TrainOutput, TrainingInputs, UpdateStats, CHECKPOINT_VERSION,
};

#[derive(Debug, Error)]
pub enum RlError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged at update {update}: {reason}")]
    DivergedTraining { update: usize, reason: String },
    #[error("simulation diverged: {0}")]
    SimDiverged(#[from] SimError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
}

/// Early-termination limits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerminationThresholds {
    /// Mean body-joint error (m).
    pub body_mean: f64,
    /// Largest single body-joint error (m).
    pub body_max: f64,
    /// Mean fingertip error (m).
    pub fingertip_mean: f64,
    /// Object pixel threshold as a fraction of the image diagonal.
    pub alpha_2d: f64,
}

impl Default for TerminationThresholds {
    fn default() -> Self {
        TerminationThresholds { body_mean: 0.2, body_max: 0.4, fingertip_mean: 0.04, alpha_2d: 0.08 }
    }
}

/// `α · sqrt(W² + H²)`.
pub fn pixel_threshold(width: f64, height: f64, alpha: f64) -> f64 {
    alpha * (width * width + height * height).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    BodyMean,
    BodyMax,
    Fingertip,
    Object2d,
}

impl TerminationReason {
    pub const ALL: [TerminationReason; 4] = [TerminationReason::BodyMean, TerminationReason::BodyMax, TerminationReason::Fingertip, TerminationReason::Object2d];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TerminationReason::BodyMean => "body-mean",
            TerminationReason::BodyMax => "body-max",
            TerminationReason::Fingertip => "fingertip",
            TerminationReason::Object2d => "object-2d",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Continue,
    Terminate(TerminationReason),
}

/// Checks the errors in a fixed order: body mean, body max, fingertip, object pixels.
pub fn early_termination(errors: &TrackingErrors, width: f64, height: f64, th: &TerminationThresholds) -> Termination {
    if errors.body_mean > th.body_mean {
        Termination::Terminate(TerminationReason::BodyMean)
    } else if errors.body_max > th.body_max {
        Termination::Terminate(TerminationReason::BodyMax)
    } else if errors.fingertip_mean > th.fingertip_mean {
        Termination::Terminate(TerminationReason::Fingertip)
    } else if errors.object_px > pixel_threshold(width, height, th.alpha_2d) {
        Termination::Terminate(TerminationReason::Object2d)
    } else {
        Termination::Continue
    }
}

/// Start frame of an episode: frame 0 with probability `p_zero`, otherwise uniform over the
/// frames before the first labeled contact (over all frames when there is none).
pub fn sample_init_frame<R: Rng>(contact: &ContactLabels, frames: usize, p_zero: f64, rng: &mut R) -> usize {
    if rng.random::<f64>() < p_zero {
        return 0;
    }
    let end = match contact.first_contact() {
        Some(0) => 1,
        Some(t) => t,
        None => frames,
    };
    rng.random_range(0..end)
}

/// GAE over one trajectory segment. `values` has one more entry than `rewards` (bootstrap);
/// `dones[t]` cuts the recursion after step `t`. Returns (advantages, returns = A + V).
pub fn gae_advantages(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>), RlError> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(RlError::LengthMismatch(format!("{n} rewards, {} values, {} done flags", values.len(), dones.len())));
    }
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        acc = delta + gamma * lambda * live * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// Rescales to zero mean and unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if n == 0.0 {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    for a in adv.iter_mut() {
        *a = (*a - mean) / (std + 1e-8);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorLoss {
    pub ppo: f64,
    pub bound: f64,
    pub total: f64,
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// `L_ppo + L_bound`: the clipped surrogate averaged over the batch plus, per sample,
/// `Σ_i relu(μ_i − 1)² + relu(−μ_i − 1)²` averaged over the batch.
pub fn actor_loss(new_log_probs: &[f64], old_log_probs: &[f64], advantages: &[f64], mu: &[Vec<f64>], eps: f64) -> Result<ActorLoss, RlError> {
    let n = new_log_probs.len();
    if old_log_probs.len() != n || advantages.len() != n || mu.len() != n {
        return Err(RlError::LengthMismatch("actor loss inputs differ in length".into()));
    }
    if n == 0 {
        return Ok(ActorLoss { ppo: 0.0, bound: 0.0, total: 0.0 });
    }
    let mut ppo = 0.0;
    let mut bound = 0.0;
    for i in 0..n {
        let r = (new_log_probs[i] - old_log_probs[i]).exp();
        let a = advantages[i];
        ppo -= (r * a).min(r.clamp(1.0 - eps, 1.0 + eps) * a);
        bound += mu[i].iter().map(|&m| relu(m - 1.0).powi(2) + relu(-m - 1.0).powi(2)).sum::<f64>();
    }
    let (ppo, bound) = (ppo / n as f64, bound / n as f64);
    let total = ppo + bound;
    if !total.is_finite() {
        return Err(RlError::NonFinite("actor loss".into()));
    }
    Ok(ActorLoss { ppo, bound, total })
}

/// Diagonal Gaussian log-density.
pub fn gaussian_log_prob(action: &[f64], mu: &[f64], log_std: &[f64]) -> f64 {
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
    action
        .iter()
        .zip(mu)
        .zip(log_std)
        .map(|((a, m), s)| {
            let z = (a - m) / s.exp();
            -0.5 * z * z - s - HALF_LN_2PI
        })
        .sum()
}

/// Gradients of the actor loss with respect to the mean and the log-std.
pub struct ActorGrad {
    pub loss: ActorLoss,
    pub mu: Vec<Vec<f64>>,
    pub log_std: Vec<f64>,
}

/// Actor loss as a function of the policy mean and log-std for fixed sampled actions.
pub fn actor_objective(mu: &[Vec<f64>], log_std: &[f64], actions: &[Vec<f64>], old_log_probs: &[f64], advantages: &[f64], eps: f64) -> Result<ActorGrad, RlError> {
    let n = mu.len();
    if actions.len() != n {
        return Err(RlError::LengthMismatch("actions and means differ in length".into()));
    }
    let new: Vec<f64> = mu.iter().zip(actions).map(|(m, a)| gaussian_log_prob(a, m, log_std)).collect();
    let loss = actor_loss(&new, old_log_probs, advantages, mu, eps)?;
    let inv_n = 1.0 / n.max(1) as f64;
    let mut gmu = vec![vec![0.0; log_std.len()]; n];
    let mut gls = vec![0.0; log_std.len()];
    for i in 0..n {
        let r = (new[i] - old_log_probs[i]).exp();
        let a = advantages[i];
        // the unclipped branch carries the gradient when it is the smaller one
        let unclipped = r * a <= r.clamp(1.0 - eps, 1.0 + eps) * a;
        let g_logp = if unclipped { -r * a * inv_n } else { 0.0 };
        for k in 0..log_std.len() {
            let var = (2.0 * log_std[k]).exp();
            let d = actions[i][k] - mu[i][k];
            gmu[i][k] = g_logp * d / var + inv_n * (2.0 * relu(mu[i][k] - 1.0) - 2.0 * relu(-mu[i][k] - 1.0));
            gls[k] += g_logp * (d * d / var - 1.0);
        }
    }
    Ok(ActorGrad { loss, mu: gmu, log_std: gls })
}

/// `½ · mean(max((V − R)², (V_clip − R)²))` with `V_clip = clip(V, V_old − ε, V_old + ε)`.
pub fn critic_loss(values: &[f64], old_values: &[f64], returns: &[f64], eps: f64) -> Result<f64, RlError> {
    Ok(critic_loss_grad(values, old_values, returns, eps)?.0)
}

/// Critic loss and its gradient with respect to `values`.
pub fn critic_loss_grad(values: &[f64], old_values: &[f64], returns: &[f64], eps: f64) -> Result<(f64, Vec<f64>), RlError> {
    let n = values.len();
    if old_values.len() != n || returns.len() != n {
        return Err(RlError::LengthMismatch("critic loss inputs differ in length".into()));
    }
    if n == 0 {
        return Ok((0.0, vec![]));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; n];
    for i in 0..n {
        let (v, r) = (values[i], returns[i]);
        let clipped = v.clamp(old_values[i] - eps, old_values[i] + eps);
        let (a, b) = ((v - r).powi(2), (clipped - r).powi(2));
        if a >= b {
            loss += a;
            grad[i] = (v - r) / n as f64;
        } else {
            loss += b;
            let inside = v > old_values[i] - eps && v < old_values[i] + eps;
            grad[i] = if inside { (clipped - r) / n as f64 } else { 0.0 };
        }
    }
    let loss = 0.5 * loss / n as f64;
    if !loss.is_finite() {
        return Err(RlError::NonFinite("critic loss".into()));
    }
    Ok((loss, grad))
}

/// Trainer settings; the reward, policy, physics and termination sections nest inside.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    #[serde(rename = "format-version")]
    pub format_version: u32,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub rollout_length: usize,
    /// Minibatch size of the PPO updates.
    pub batch_size: usize,
    pub env_count: usize,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    /// Value clipping range of the critic loss.
    pub value_clip: f64,
    pub epochs: usize,
    pub max_grad_norm: f64,
    /// Future target frames in the goal.
    pub goal_horizon: usize,
    pub precontact_init_prob: f64,
    pub early_termination: bool,
    /// Adds the next reference action (read from the raw goal features) to the actor output, so
    /// the network learns a correction to the reference PD targets.
    pub reference_skip: bool,
    /// Environment steps to collect (rounded down to whole rollouts).
    pub total_env_steps: usize,
    pub seed: u64,
    pub termination: TerminationThresholds,
    pub policy: PolicySpec,
    pub reward: RewardConfig,
    pub physics: PhysicsParams,
    pub gains: PdGains,
}

pub const TRAINER_CONFIG_VERSION: u32 = 1;

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            format_version: TRAINER_CONFIG_VERSION,
            actor_lr: 2e-5,
            critic_lr: 1e-4,
            rollout_length: 32,
            batch_size: 1024,
            env_count: 32,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            value_clip: 0.2,
            epochs: 5,
            max_grad_norm: 1.0,
            goal_horizon: 4,
            precontact_init_prob: 0.5,
            early_termination: true,
            reference_skip: false,
            total_env_steps: 20_000_000,
            seed: 0,
            termination: TerminationThresholds::default(),
            policy: PolicySpec::default(),
            reward: RewardConfig::default(),
            physics: PhysicsParams::default(),
            gains: PdGains::default(),
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: String| Err(RlError::InvalidConfig(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma = {} must lie in (0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda = {} must lie in [0, 1]", self.lambda));
        }
        if !(self.clip > 0.0) || !(self.value_clip > 0.0) {
            return bad("clip ranges must be positive".into());
        }
        if !(self.actor_lr > 0.0) || !(self.critic_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.rollout_length == 0 || self.env_count == 0 || self.batch_size == 0 || self.epochs == 0 || self.goal_horizon == 0 {
            return bad("rollout length, env count, batch size, epochs and goal horizon must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.precontact_init_prob) {
            return bad("pre-contact init probability must lie in [0, 1]".into());
        }
        self.policy.validate().map_err(RlError::InvalidConfig)?;
        self.reward.validate()?;
        Ok(())
    }

    /// Environment steps per rollout.
    pub fn rollout_steps(&self) -> usize {
        self.rollout_length * self.env_count
    }

    pub fn updates(&self) -> usize {
        self.total_env_steps / self.rollout_steps()
    }

    pub fn from_toml(text: &str) -> Result<Self, RlError> {
        let c: TrainerConfig = toml::from_str(text).map_err(|e| RlError::Parse(e.to_string()))?;
        if c.format_version != TRAINER_CONFIG_VERSION {
            return Err(RlError::Parse(format!("unsupported trainer config version {}", c.format_version)));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &std::path::Path) -> Result<Self, RlError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("trainer config serializes")
    }
}
