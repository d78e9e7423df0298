use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::env::{EpisodeState, ImitationEnv};
use super::nn::{clip_grad_norm, stack_rows, Actor, Adam, Critic, RunningStats};
use super::{actor_objective, critic_loss_grad, gae_advantages, gaussian_log_prob, normalize_advantages, sample_init_frame, RlError, Termination, TerminationReason, TrainerConfig};
use crate::geometry::Transform;
use crate::scenario::Scenario;
use crate::sim::{Action, PhysicsWorld};
use crate::targets::HybridTarget;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Actor, critic, observation statistics and optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub actor: Actor,
    pub critic: Critic,
    pub normalizer: Vec<RunningStats>,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub reference_skip: bool,
}

/// One PPO minibatch source: normalized observations and rollout statistics, row-aligned.
pub struct PpoBatch {
    pub obs: Vec<Array2<f64>>,
    /// Offset added to the actor output (the reference skip, or zeros).
    pub base: Array2<f64>,
    pub actions: Array2<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    fn select(&self, idx: &[usize]) -> PpoBatch {
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        PpoBatch {
            obs: self.obs.iter().map(|o| o.select(Axis(0), idx)).collect(),
            base: self.base.select(Axis(0), idx),
            actions: self.actions.select(Axis(0), idx),
            log_probs: pick(&self.log_probs),
            values: pick(&self.values),
            advantages: pick(&self.advantages),
            returns: pick(&self.returns),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub bound_loss: f64,
    pub critic_loss: f64,
}

/// The first `actions` goal features are the next reference action.
fn action_base(raw: &[Array2<f64>], actions: usize, skip: bool) -> Array2<f64> {
    let goal = &raw[2];
    if skip {
        goal.slice(ndarray::s![.., ..actions]).to_owned()
    } else {
        Array2::zeros((goal.nrows(), actions))
    }
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn views(obs: &[Array2<f64>]) -> Vec<ArrayView2<'_, f64>> {
    obs.iter().map(|o| o.view()).collect()
}

impl Agent {
    pub fn new(config: &TrainerConfig, dims: [usize; 3], actions: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let actor = Actor::new(&config.policy, &dims, actions, &mut rng);
        let critic = Critic::new(&config.policy, &dims, &mut rng);
        Agent {
            actor_opt: Adam::new(actor.params.len(), config.actor_lr),
            critic_opt: Adam::new(critic.params.len(), config.critic_lr),
            actor,
            critic,
            normalizer: dims.iter().map(|&d| RunningStats::new(d)).collect(),
            reference_skip: config.reference_skip,
        }
    }

    /// Offset added to the actor output for raw observations `raw`.
    pub fn action_base(&self, raw: &[Array2<f64>]) -> Array2<f64> {
        action_base(raw, self.actor.actions, self.reference_skip)
    }

    pub fn normalize(&self, raw: &[Array2<f64>]) -> Vec<Array2<f64>> {
        raw.iter().zip(&self.normalizer).map(|(x, s)| s.normalize(x.view())).collect()
    }

    /// Policy mean for normalized observations `obs` and offsets `base`.
    pub fn mean_action(&self, obs: &[Array2<f64>], base: &Array2<f64>) -> Array2<f64> {
        self.actor.forward(&views(obs)) + base
    }

    pub fn value(&self, obs: &[Array2<f64>]) -> Array1<f64> {
        self.critic.forward(&views(obs))
    }

    /// `epochs` passes of shuffled minibatch PPO over `batch` (advantages already normalized).
    pub fn update(&mut self, batch: &PpoBatch, config: &TrainerConfig, rng: &mut ChaCha8Rng) -> Result<UpdateStats, RlError> {
        let mut order: Vec<usize> = (0..batch.len()).collect();
        let mut stats = UpdateStats::default();
        let mut count = 0.0;
        for _ in 0..config.epochs {
            order.shuffle(rng);
            for chunk in order.chunks(config.batch_size) {
                let mb = batch.select(chunk);
                let s = self.minibatch_step(&mb, config)?;
                stats.actor_loss += s.actor_loss;
                stats.bound_loss += s.bound_loss;
                stats.critic_loss += s.critic_loss;
                count += 1.0;
            }
        }
        if count > 0.0 {
            stats.actor_loss /= count;
            stats.bound_loss /= count;
            stats.critic_loss /= count;
        }
        Ok(stats)
    }

    fn minibatch_step(&mut self, mb: &PpoBatch, config: &TrainerConfig) -> Result<UpdateStats, RlError> {
        let obs = views(&mb.obs);
        let (mut mu, cache) = self.actor.forward_cached(&obs);
        mu += &mb.base;
        let log_std = self.actor.log_std().to_vec();
        let g = actor_objective(&rows(&mu), &log_std, &rows(&mb.actions), &mb.log_probs, &mb.advantages, config.clip)?;
        let mut grad = vec![0.0; self.actor.params.len()];
        let gmu = Array2::from_shape_vec(mu.raw_dim(), g.mu.concat()).expect("shape");
        self.actor.backward(&mut grad, &cache, gmu);
        for (dst, src) in grad[self.actor.log_std..].iter_mut().zip(&g.log_std) {
            *dst += src;
        }
        if grad.iter().any(|x| !x.is_finite()) {
            return Err(RlError::NonFinite("actor gradient".into()));
        }
        clip_grad_norm(&mut grad, config.max_grad_norm);
        self.actor_opt.update(&mut self.actor.params, &grad);

        let (v, ccache) = self.critic.forward_cached(&obs);
        let (closs, gv) = critic_loss_grad(v.as_slice().expect("contiguous"), &mb.values, &mb.returns, config.value_clip)?;
        let mut cgrad = vec![0.0; self.critic.params.len()];
        self.critic.backward(&mut cgrad, &ccache, &Array1::from(gv));
        if cgrad.iter().any(|x| !x.is_finite()) {
            return Err(RlError::NonFinite("critic gradient".into()));
        }
        clip_grad_norm(&mut cgrad, config.max_grad_norm);
        self.critic_opt.update(&mut self.critic.params, &cgrad);
        Ok(UpdateStats { actor_loss: g.loss.total, bound_loss: g.loss.bound, critic_loss: closs })
    }
}

/// Per-step rollout storage for `rollout_length × env_count` transitions; row `t · N + e`.
pub struct RolloutBuffer {
    pub envs: usize,
    pub steps: usize,
    pub obs: Vec<Array2<f64>>,
    pub base: Array2<f64>,
    pub actions: Array2<f64>,
    pub log_probs: Vec<f64>,
    /// Logged step rewards.
    pub rewards: Vec<f64>,
    /// Rewards fed to GAE: truncated steps include the discounted bootstrap value.
    pub gae_rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub reasons: Vec<Option<TerminationReason>>,
    pub truncated: Vec<bool>,
}

impl RolloutBuffer {
    pub fn new(steps: usize, envs: usize, dims: [usize; 3], actions: usize) -> Self {
        let n = steps * envs;
        RolloutBuffer {
            envs,
            steps,
            obs: dims.iter().map(|&d| Array2::zeros((n, d))).collect(),
            base: Array2::zeros((n, actions)),
            actions: Array2::zeros((n, actions)),
            log_probs: vec![0.0; n],
            rewards: vec![0.0; n],
            gae_rewards: vec![0.0; n],
            values: vec![0.0; n],
            dones: vec![false; n],
            reasons: vec![None; n],
            truncated: vec![false; n],
        }
    }

    /// Advantages and returns per environment, flattened in buffer order.
    pub fn advantages(&self, last_values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>), RlError> {
        let (t_len, n) = (self.steps, self.envs);
        let mut adv = vec![0.0; t_len * n];
        let mut ret = vec![0.0; t_len * n];
        for e in 0..n {
            let idx: Vec<usize> = (0..t_len).map(|t| t * n + e).collect();
            let r: Vec<f64> = idx.iter().map(|&i| self.gae_rewards[i]).collect();
            let mut v: Vec<f64> = idx.iter().map(|&i| self.values[i]).collect();
            v.push(last_values[e]);
            let d: Vec<bool> = idx.iter().map(|&i| self.dones[i]).collect();
            let (a, rt) = gae_advantages(&r, &v, &d, gamma, lambda)?;
            for (k, &i) in idx.iter().enumerate() {
                adv[i] = a[k];
                ret[i] = rt[k];
            }
        }
        Ok((adv, ret))
    }
}

/// Trained networks plus everything needed to rebuild observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    #[serde(rename = "format-version")]
    pub format_version: u32,
    pub config: TrainerConfig,
    pub dims: [usize; 3],
    pub actions: usize,
    pub updates: usize,
    pub env_steps: usize,
    pub actor: Actor,
    pub critic: Critic,
    pub normalizer: Vec<RunningStats>,
}

impl Checkpoint {
    pub fn from_agent(agent: &Agent, config: &TrainerConfig, dims: [usize; 3], actions: usize, updates: usize, env_steps: usize) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: config.clone(),
            dims,
            actions,
            updates,
            env_steps,
            actor: agent.actor.clone(),
            critic: agent.critic.clone(),
            normalizer: agent.normalizer.clone(),
        }
    }

    /// Deterministic action: the policy mean for one raw observation.
    pub fn act(&self, obs: &[Vec<f64>; 3]) -> Vec<f64> {
        let raw: Vec<Array2<f64>> = obs.iter().map(|o| stack_rows(&[o])).collect();
        let groups: Vec<Array2<f64>> = raw.iter().zip(&self.normalizer).map(|(o, s)| s.normalize(o.view())).collect();
        let mu = self.actor.forward(&views(&groups)) + action_base(&raw, self.actions, self.config.reference_skip);
        mu.row(0).to_vec()
    }

    pub fn write(&self, path: &Path) -> Result<(), RlError> {
        let text = serde_json::to_string(self).map_err(|e| RlError::Parse(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, RlError> {
        let c: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?).map_err(|e| RlError::Parse(e.to_string()))?;
        if c.format_version != CHECKPOINT_VERSION {
            return Err(RlError::Parse(format!("unsupported checkpoint version {}", c.format_version)));
        }
        Ok(c)
    }
}

/// One training-log line per PPO update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub update: usize,
    pub env_steps: usize,
    pub mean_reward: f64,
    pub episodes: usize,
    pub mean_episode_return: f64,
    pub mean_episode_length: f64,
    pub term_body_mean: usize,
    pub term_body_max: usize,
    pub term_fingertip: usize,
    pub term_object_2d: usize,
    pub truncated: usize,
    pub actor_loss: f64,
    pub bound_loss: f64,
    pub critic_loss: f64,
    pub mean_log_std: f64,
}

impl LogRow {
    pub fn write_csv(rows: &[LogRow], path: &Path) -> Result<(), RlError> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(b"# format-version 1\n")?;
        let mut w = csv::Writer::from_writer(file);
        for r in rows {
            w.serialize(r).map_err(|e| RlError::Parse(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scenario, target and optional reference object poses (pose ablation only).
pub struct TrainingInputs {
    pub scenario: Scenario,
    pub target: HybridTarget,
    pub object_poses: Option<Vec<Transform>>,
}

impl TrainingInputs {
    pub fn env(&self, config: &TrainerConfig) -> Result<ImitationEnv, RlError> {
        let world = PhysicsWorld::from_scenario(&self.scenario, config.physics.clone(), &config.gains)?;
        let mut env = ImitationEnv::new(world, self.target.clone(), config.reward.clone(), config.termination.clone(), config.goal_horizon)?;
        env.early_termination = config.early_termination;
        env.object_poses = self.object_poses.clone();
        Ok(env)
    }
}

pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
}

struct Slot {
    ep: EpisodeState,
    rng: ChaCha8Rng,
    ret: f64,
    len: usize,
}

struct Transition {
    reward: f64,
    done: bool,
    reason: Option<TerminationReason>,
    truncated: bool,
    /// Raw observation of the truncated state, for bootstrapping.
    last_obs: Option<[Vec<f64>; 3]>,
    finished: Option<(f64, usize)>,
}

fn observe_all(env: &ImitationEnv, slots: &[Slot]) -> Vec<Array2<f64>> {
    let obs: Vec<[Vec<f64>; 3]> = slots.par_iter().map(|s| env.observe(&s.ep)).collect();
    (0..3).map(|g| stack_rows(&obs.iter().map(|o| o[g].as_slice()).collect::<Vec<_>>())).collect()
}

/// PPO training. Deterministic for a fixed config (seed and environment count included).
pub fn train(inputs: &TrainingInputs, config: &TrainerConfig) -> Result<TrainOutput, RlError> {
    config.validate()?;
    let env = inputs.env(config)?;
    let dims = env.obs_dims();
    let na = env.action_dim();
    let mut agent = Agent::new(config, dims, na);
    let mut update_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_u64.rotate_left(32));
    let n = config.env_count;
    let t_len = config.rollout_length;
    let contact = &env.target.contact;

    let mut slots = Vec::with_capacity(n);
    for e in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(e as u64 + 1));
        let f = sample_init_frame(contact, env.target.frames, config.precontact_init_prob, &mut rng);
        slots.push(Slot { ep: env.reset(f)?, rng, ret: 0.0, len: 0 });
    }

    let mut log = Vec::new();
    let mut env_steps = 0;
    for update in 0..config.updates() {
        let mut buf = RolloutBuffer::new(t_len, n, dims, na);
        let mut finished = Vec::new();
        for t in 0..t_len {
            let raw = observe_all(&env, &slots);
            for (stats, x) in agent.normalizer.iter_mut().zip(&raw) {
                stats.update(x.view());
            }
            let obs = agent.normalize(&raw);
            let base = agent.action_base(&raw);
            let mu = agent.mean_action(&obs, &base);
            let values = agent.value(&obs);
            let log_std = agent.actor.log_std().to_vec();
            let actions: Vec<Vec<f64>> = slots
                .iter_mut()
                .enumerate()
                .map(|(e, s)| mu.row(e).iter().zip(&log_std).map(|(m, ls)| { let z: f64 = StandardNormal.sample(&mut s.rng); m + ls.exp() * z }).collect())
                .collect();

            let results: Vec<Result<Transition, RlError>> = slots
                .par_iter_mut()
                .zip(&actions)
                .map(|(s, a)| {
                    let out = env.step(&mut s.ep, &Action(a.clone()))?;
                    let reason = match out.termination {
                        Termination::Terminate(r) => Some(r),
                        Termination::Continue => None,
                    };
                    let r = out.reward.total;
                    s.ret += r;
                    s.len += 1;
                    let done = reason.is_some() || out.truncated;
                    let last_obs = (out.truncated && reason.is_none()).then(|| env.observe(&s.ep));
                    let mut fin = None;
                    if done {
                        fin = Some((s.ret, s.len));
                        let f = sample_init_frame(contact, env.target.frames, config.precontact_init_prob, &mut s.rng);
                        s.ep = env.reset(f)?;
                        s.ret = 0.0;
                        s.len = 0;
                    }
                    Ok(Transition { reward: r, done, reason, truncated: out.truncated && reason.is_none(), last_obs, finished: fin })
                })
                .collect();

            let mut boot_rows = Vec::new();
            for (e, res) in results.into_iter().enumerate() {
                let tr = res?;
                let i = t * n + e;
                for (g, o) in obs.iter().enumerate() {
                    buf.obs[g].row_mut(i).assign(&o.row(e));
                }
                buf.base.row_mut(i).assign(&base.row(e));
                buf.actions.row_mut(i).assign(&Array1::from(actions[e].clone()));
                buf.log_probs[i] = gaussian_log_prob(&actions[e], &mu.row(e).to_vec(), &log_std);
                buf.values[i] = values[e];
                buf.rewards[i] = tr.reward;
                buf.gae_rewards[i] = tr.reward;
                buf.dones[i] = tr.done;
                buf.reasons[i] = tr.reason;
                buf.truncated[i] = tr.truncated;
                if let Some(o) = tr.last_obs {
                    boot_rows.push((i, o));
                }
                if let Some(f) = tr.finished {
                    finished.push(f);
                }
            }
            if !boot_rows.is_empty() {
                let raw: Vec<Array2<f64>> = (0..3).map(|g| stack_rows(&boot_rows.iter().map(|(_, o)| o[g].as_slice()).collect::<Vec<_>>())).collect();
                let v = agent.value(&agent.normalize(&raw));
                for ((i, _), v) in boot_rows.iter().zip(v.iter()) {
                    buf.gae_rewards[*i] += config.gamma * v;
                }
            }
        }
        env_steps += t_len * n;

        let last = agent.value(&agent.normalize(&observe_all(&env, &slots)));
        let (mut adv, ret) = buf.advantages(last.as_slice().expect("contiguous"), config.gamma, config.lambda)?;
        normalize_advantages(&mut adv);
        let batch = PpoBatch { obs: buf.obs.clone(), base: buf.base.clone(), actions: buf.actions.clone(), log_probs: buf.log_probs.clone(), values: buf.values.clone(), advantages: adv, returns: ret };
        let stats = agent.update(&batch, config, &mut update_rng).map_err(|e| RlError::DivergedTraining { update, reason: e.to_string() })?;

        let count = |r: TerminationReason| buf.reasons.iter().filter(|x| **x == Some(r)).count();
        let eps = finished.len();
        let row = LogRow {
            update,
            env_steps,
            mean_reward: buf.rewards.iter().sum::<f64>() / buf.rewards.len() as f64,
            episodes: eps,
            mean_episode_return: if eps > 0 { finished.iter().map(|f| f.0).sum::<f64>() / eps as f64 } else { 0.0 },
            mean_episode_length: if eps > 0 { finished.iter().map(|f| f.1 as f64).sum::<f64>() / eps as f64 } else { 0.0 },
            term_body_mean: count(TerminationReason::BodyMean),
            term_body_max: count(TerminationReason::BodyMax),
            term_fingertip: count(TerminationReason::Fingertip),
            term_object_2d: count(TerminationReason::Object2d),
            truncated: buf.truncated.iter().filter(|x| **x).count(),
            actor_loss: stats.actor_loss,
            bound_loss: stats.bound_loss,
            critic_loss: stats.critic_loss,
            mean_log_std: agent.actor.log_std().iter().sum::<f64>() / na as f64,
        };
        log::info!(
            "update {update}: steps {env_steps}, mean reward {:.4}, episodes {eps}, mean length {:.1}, critic {:.4}",
            row.mean_reward,
            row.mean_episode_length,
            row.critic_loss
        );
        log.push(row);
    }
    let checkpoint = Checkpoint::from_agent(&agent, config, dims, na, log.len(), env_steps);
    Ok(TrainOutput { checkpoint, log })
}
