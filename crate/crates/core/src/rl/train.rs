//! Toy end-to-end PPO on the PD plant with the token model as actor-critic.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{adapt_lr, gae, gaussian_entropy, gaussian_log_prob, normalize_advantages, ppo_loss, AdaptiveSampler, PpoConfig, RlError, SamplerConfig};
use crate::metrics::{frame_failure, FailureReason, SuccessMode};
use crate::motion::{CommandKind, CommandSlicer, MotionClip, PoseFrame, Proprioception, GRAVITY};
use crate::reward::{penalty, push_schedule, sample_dr, tracking_reward, DrConfig, RewardWeights, TrackingState};
use crate::runtime::{Plant, PlantConfig, RootTarget};
use crate::token::nn::{clip_grad_norm, Adam};
use crate::token::{QuantMode, TokenGrads, TokenModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub ppo: PpoConfig,
    pub sampler: SamplerConfig,
    pub reward: RewardWeights,
    /// `None` trains on nominal physics.
    pub dr: Option<DrConfig>,
    pub plant: PlantConfig,
    pub iterations: usize,
    /// Episodes time out after this long.
    pub episode_seconds: f64,
    /// Plant steps per policy step.
    pub substeps: usize,
    /// Links below this height count as touching the ground, m.
    pub contact_height: f64,
    /// Rewards are multiplied by this before advantage estimation; the
    /// policy step keeps returns near unit scale.
    pub reward_scale: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            ppo: PpoConfig::desk(),
            sampler: SamplerConfig::default(),
            reward: RewardWeights::default(),
            dr: None,
            plant: PlantConfig::default(),
            iterations: 100,
            episode_seconds: 4.0,
            substeps: 10,
            contact_height: 0.02,
            reward_scale: 0.02,
            seed: 0,
        }
    }
}

/// One row of the per-iteration training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iteration: usize,
    /// Mean scaled per-step reward over the rollout.
    pub reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub actor_lr: f64,
    pub sampler_entropy: f64,
    pub episodes: usize,
    pub failures: usize,
}

struct Env {
    plant: Plant,
    clip: usize,
    bin: usize,
    t: f64,
    t_end: f64,
    prev_action: Vec<f64>,
    prev_frame: PoseFrame,
}

struct Step {
    robot: Vec<f64>,
    proprio: Vec<f64>,
    action: Vec<f64>,
    logp: f64,
    value: f64,
    reward: f64,
    done: bool,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: TokenModel,
    pub clips: Vec<MotionClip>,
    pub sampler: AdaptiveSampler,
    pub actor_lr: f64,
    slicer: CommandSlicer,
    envs: Vec<Env>,
    opt: Vec<Adam>,
    rng: ChaCha8Rng,
    iteration: usize,
}

/// Link velocities by finite difference between two frames `dt` apart.
fn with_link_velocities(prev: &PoseFrame, mut cur: PoseFrame, dt: f64) -> PoseFrame {
    for (l, p) in cur.links.iter_mut().zip(&prev.links) {
        l.lin_vel = (l.pos - p.pos) / dt;
        l.ang_vel = (l.rot * p.rot.inverse()).scaled_axis() / dt;
    }
    cur
}

impl Trainer {
    pub fn new(config: TrainConfig, model: TokenModel, clips: Vec<MotionClip>) -> Result<Self, RlError> {
        config.ppo.validate()?;
        config.reward.validate().map_err(RlError::Config)?;
        if clips.is_empty() {
            return Err(RlError::NoBins);
        }
        let sk = &clips[0].skeleton;
        if clips.iter().any(|c| c.skeleton.joint_count() != model.config.action_dim || c.is_empty()) || sk.joint_count() != model.config.action_dim {
            return Err(RlError::Config("clips must be non-empty and match the model's skeleton".into()));
        }
        let durations: Vec<f64> = clips.iter().map(|c| c.duration()).collect();
        let sampler = AdaptiveSampler::new(config.sampler.clone(), &durations)?;
        let opt = vec![
            Adam::new(model.enc_r.param_count(), config.ppo.actor_lr),
            Adam::new(model.dec_control.param_count(), config.ppo.actor_lr),
            Adam::new(model.log_std.len(), config.ppo.actor_lr),
            Adam::new(model.critic.param_count(), config.ppo.critic_lr),
        ];
        let mut t = Self {
            slicer: CommandSlicer::new(sk),
            actor_lr: config.ppo.actor_lr,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            envs: Vec::new(),
            opt,
            iteration: 0,
            sampler,
            model,
            clips,
            config,
        };
        t.envs = (0..t.config.ppo.envs).map(|_| t.reset_env()).collect();
        Ok(t)
    }

    fn reset_env(&mut self) -> Env {
        let (bin, clip, start) = self.sampler.sample_start(&mut self.rng);
        let c = &self.clips[clip];
        let t = c.start_time() + start;
        let frame = c.frame_at(t).expect("non-empty clip").clone();
        let mut plant = Plant::new(c.skeleton.clone(), self.config.plant, &frame);
        if let Some(dr) = &self.config.dr {
            let sample = sample_dr(dr, c.skeleton.joint_count(), &mut self.rng);
            let pushes = push_schedule(dr, self.config.episode_seconds, &mut self.rng)
                .into_iter()
                .map(|mut p| {
                    p.start += t;
                    p
                })
                .collect();
            plant = plant.with_dr(sample, pushes);
        }
        let prev_frame = plant.frame();
        Env { plant, clip, bin, t, t_end: (t + self.config.episode_seconds).min(c.end_time()), prev_action: vec![0.0; self.model.config.action_dim], prev_frame }
    }

    fn observe(&self, env: &Env) -> Result<(Vec<f64>, Vec<f64>), RlError> {
        let clip = &self.clips[env.clip];
        let robot = self.slicer.slice(clip, env.t, CommandKind::Robot).map_err(|e| RlError::Config(e.to_string()))?.flatten();
        let mut frame = env.prev_frame.clone();
        frame.time = env.t;
        let proprio = Proprioception::from_frame(&frame, env.prev_action.clone(), GRAVITY).flatten();
        Ok((robot, proprio))
    }

    /// Advance one environment by one policy step. Returns `(reward, done,
    /// failed)`.
    fn step_env(&mut self, e: usize, action: &[f64]) -> Result<(f64, bool, bool), RlError> {
        let dt_policy = 1.0 / self.clips[self.envs[e].clip].fps;
        let dt = dt_policy / self.config.substeps as f64;
        let env = &mut self.envs[e];
        let clip = &self.clips[env.clip];
        let sk = clip.skeleton.clone();
        let targets: Vec<f64> = sk.default_pose.iter().zip(action).map(|(d, a)| d + a).collect();
        let next_t = env.t + dt_policy;
        let reference = clip.frame_at(next_t).expect("non-empty clip");
        let root = RootTarget::of(reference);
        for _ in 0..self.config.substeps {
            env.plant.step(dt, &targets, &root);
        }
        if !env.plant.is_finite() {
            return Err(RlError::NonFinite("plant state"));
        }
        let frame = with_link_velocities(&env.prev_frame, env.plant.frame(), dt_policy);
        let track = tracking_reward(&TrackingState::from_frame(&frame), &TrackingState::from_frame(reference), &self.config.reward)
            .map_err(|e| RlError::Config(e.to_string()))?;
        let contacts = env.plant.contacts(self.config.contact_height);
        let pen = penalty(&sk, &frame.joint_pos, action, &env.prev_action, &contacts, &self.config.reward).map_err(|e| RlError::Config(e.to_string()))?;
        let (_, reason) = frame_failure(reference, &frame, SuccessMode::Strict);
        let failed = reason != FailureReason::None;
        env.prev_action = action.to_vec();
        env.prev_frame = frame;
        env.t = next_t;
        let done = failed || env.t >= env.t_end - 1e-9;
        Ok((track.total + pen.total, done, failed))
    }

    /// Collect one rollout and update the networks. Returns the log row.
    pub fn iterate(&mut self) -> Result<TrainLogRow, RlError> {
        let cfg = self.config.ppo.clone();
        let n_env = self.envs.len();
        let mut traj: Vec<Vec<Step>> = (0..n_env).map(|_| Vec::with_capacity(cfg.steps_per_env)).collect();
        let (mut episodes, mut failures) = (0, 0);
        let mut step_reward = 0.0;
        let std = self.model.action_std();
        for _ in 0..cfg.steps_per_env {
            for e in 0..n_env {
                let (robot, proprio) = self.observe(&self.envs[e])?;
                let pass = self.model.actor_forward(&robot, &proprio, QuantMode::StraightThrough).map_err(|e| RlError::Config(e.to_string()))?;
                let action = sample_action(&pass.mean, &std, &mut self.rng);
                let logp = gaussian_log_prob(&action, &pass.mean, &std);
                let value = self.model.value(&proprio, &robot);
                let (mut reward, done, failed) = self.step_env(e, &action)?;
                reward *= self.config.reward_scale;
                step_reward += reward;
                if done && !failed {
                    // a time-out is not terminal: bootstrap from the state reached
                    let (r, p) = self.observe(&self.envs[e])?;
                    reward += cfg.gamma * self.model.value(&p, &r);
                }
                if done {
                    episodes += 1;
                    failures += failed as usize;
                    let bin = self.envs[e].bin;
                    self.sampler.record(bin, failed);
                    self.envs[e] = self.reset_env();
                }
                traj[e].push(Step { robot, proprio, action, logp, value, reward, done });
            }
        }
        self.sampler.refresh();

        // advantages per environment, bootstrapped from the current state
        let mut samples: Vec<(usize, usize)> = Vec::new();
        let mut adv = Vec::new();
        let mut ret = Vec::new();
        for e in 0..n_env {
            let (robot, proprio) = self.observe(&self.envs[e])?;
            let mut values: Vec<f64> = traj[e].iter().map(|s| s.value).collect();
            values.push(self.model.value(&proprio, &robot));
            let rewards: Vec<f64> = traj[e].iter().map(|s| s.reward).collect();
            let dones: Vec<bool> = traj[e].iter().map(|s| s.done).collect();
            let (a, r) = gae(&rewards, &values, &dones, cfg.gamma, cfg.lambda)?;
            adv.extend(a);
            ret.extend(r);
            samples.extend((0..traj[e].len()).map(|t| (e, t)));
        }
        normalize_advantages(&mut adv);

        let n = samples.len();
        let mb = n.div_ceil(cfg.minibatches);
        let mut order: Vec<usize> = (0..n).collect();
        let mut sums = [0.0; 4];
        let mut updates = 0;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(mb) {
                let std = self.model.action_std();
                let active = self.model.std_active();
                let mut passes = Vec::with_capacity(chunk.len());
                let (mut lp_new, mut lp_old, mut a, mut v_new, mut r, mut ent) = (vec![], vec![], vec![], vec![], vec![], vec![]);
                for &i in chunk {
                    let s = &traj[samples[i].0][samples[i].1];
                    let pass = self.model.actor_forward(&s.robot, &s.proprio, QuantMode::StraightThrough).map_err(|e| RlError::Config(e.to_string()))?;
                    lp_new.push(gaussian_log_prob(&s.action, &pass.mean, &std));
                    lp_old.push(s.logp);
                    a.push(adv[i]);
                    r.push(ret[i]);
                    v_new.push(self.model.critic.forward_cached(&self.model.critic_input(&s.proprio, &s.robot)));
                    ent.push(gaussian_entropy(&std));
                    passes.push((pass, s));
                }
                let values: Vec<f64> = v_new.iter().map(|(y, _)| y[0]).collect();
                let loss = ppo_loss(&lp_new, &lp_old, &a, &values, &r, &ent, &cfg)?;
                let mut g = TokenGrads::zeros(&self.model);
                for (k, ((pass, s), (_, vcache))) in passes.iter().zip(&v_new).enumerate() {
                    let dl = loss.d_logp[k];
                    // d logp / d mean = (a - m) / s^2; d logp / d log s = ((a - m)/s)^2 - 1
                    let dmean: Vec<f64> = s.action.iter().zip(&pass.mean).zip(&std).map(|((x, m), sd)| dl * (x - m) / (sd * sd)).collect();
                    self.model.actor_backward(pass, &dmean, &mut g);
                    for j in 0..std.len() {
                        if active[j] {
                            let u = (s.action[j] - pass.mean[j]) / std[j];
                            g.log_std[j] += dl * (u * u - 1.0) + loss.d_entropy;
                        }
                    }
                    self.model.critic.backward(vcache, &[loss.d_value[k]], &mut g.critic);
                }
                // actor and critic are clipped separately so the large value
                // gradients do not starve the policy
                let mut actor: Vec<f64> = g.enc_r.iter().chain(&g.dec_control).chain(&g.log_std).copied().collect();
                clip_grad_norm(&mut actor, cfg.max_grad_norm);
                let (e, rest) = actor.split_at(g.enc_r.len());
                let (d, l) = rest.split_at(g.dec_control.len());
                g.enc_r.copy_from_slice(e);
                g.dec_control.copy_from_slice(d);
                g.log_std.copy_from_slice(l);
                clip_grad_norm(&mut g.critic, cfg.max_grad_norm);
                for o in &mut self.opt[..3] {
                    o.lr = self.actor_lr;
                }
                self.opt[0].step(&mut self.model.enc_r.params, &g.enc_r);
                self.opt[1].step(&mut self.model.dec_control.params, &g.dec_control);
                self.opt[2].step(&mut self.model.log_std, &g.log_std);
                self.opt[3].step(&mut self.model.critic.params, &g.critic);
                self.actor_lr = adapt_lr(loss.approx_kl, self.actor_lr, &cfg);
                sums[0] += loss.policy;
                sums[1] += loss.value;
                sums[2] += loss.entropy;
                sums[3] += loss.approx_kl;
                updates += 1;
            }
        }
        let u = updates.max(1) as f64;
        let row = TrainLogRow {
            iteration: self.iteration,
            reward: step_reward / n as f64,
            policy_loss: sums[0] / u,
            value_loss: sums[1] / u,
            entropy: sums[2] / u,
            approx_kl: sums[3] / u,
            actor_lr: self.actor_lr,
            sampler_entropy: self.sampler.entropy(),
            episodes,
            failures,
        };
        self.iteration += 1;
        Ok(row)
    }

    /// Mean per-step reward of deterministic (mean-action) rollouts from
    /// evenly spaced starts in every clip, without randomization.
    pub fn evaluate(&self, starts_per_clip: usize) -> Result<f64, RlError> {
        let mut probe = Self {
            config: TrainConfig { dr: None, ..self.config.clone() },
            model: self.model.clone(),
            clips: self.clips.clone(),
            sampler: self.sampler.clone(),
            actor_lr: self.actor_lr,
            slicer: self.slicer.clone(),
            envs: Vec::new(),
            opt: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(0),
            iteration: self.iteration,
        };
        let (mut total, mut steps) = (0.0, 0usize);
        for c in 0..probe.clips.len() {
            let clip = probe.clips[c].clone();
            for k in 0..starts_per_clip {
                let t = clip.start_time() + clip.duration() * k as f64 / starts_per_clip as f64;
                let frame = clip.frame_at(t).expect("non-empty clip").clone();
                let plant = Plant::new(clip.skeleton.clone(), probe.config.plant, &frame);
                let prev_frame = plant.frame();
                let t_end = (t + probe.config.episode_seconds).min(clip.end_time());
                probe.envs = vec![Env { plant, clip: c, bin: 0, t, t_end, prev_action: vec![0.0; probe.model.config.action_dim], prev_frame }];
                loop {
                    let (robot, proprio) = probe.observe(&probe.envs[0])?;
                    let mean = probe.model.actor_forward(&robot, &proprio, QuantMode::StraightThrough).map_err(|e| RlError::Config(e.to_string()))?.mean;
                    let (r, done, _) = probe.step_env(0, &mean)?;
                    total += r;
                    steps += 1;
                    if done {
                        break;
                    }
                }
            }
        }
        Ok(total / steps.max(1) as f64)
    }

    pub fn train(&mut self) -> Result<Vec<TrainLogRow>, RlError> {
        (0..self.config.iterations).map(|_| self.iterate()).collect()
    }
}

pub fn write_log_csv<W: Write>(rows: &[TrainLogRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_log_csv_file(rows: &[TrainLogRow], path: impl AsRef<Path>) -> Result<(), csv::Error> {
    write_log_csv(rows, std::fs::File::create(path)?)
}

/// Draw from a diagonal Gaussian.
pub fn sample_action<R: Rng + ?Sized>(mean: &[f64], std: &[f64], rng: &mut R) -> Vec<f64> {
    mean.iter()
        .zip(std)
        .map(|(m, s)| {
            let z: f64 = StandardNormal.sample(rng);
            m + s * z
        })
        .collect()
}
