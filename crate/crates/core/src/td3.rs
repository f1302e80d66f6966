//! Twin-critic learner with clipped double-Q targets, delayed actor updates,
//! target-policy smoothing and soft target tracking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::curiosity::{curiosity_reward, CuriosityConfig, EpisodeMemory, EpisodeSeries};
use crate::env::{Environment, QuadEnv, ACTION_DIM};
use crate::error::{Error, Result};
use crate::exploration::{rollout, Episode, ExplorationConfig, Policy};
use crate::nn::{
    backward_batch, forward, forward_batch, optimize_step, AdamConfig, AdamState, ForwardCache,
    MlpSpec, OutputActivation, ParameterSet,
};
use crate::scalar::Real;
use crate::scenes::TerminationCause;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition<S> {
    pub observation: Vec<S>,
    pub action: [S; ACTION_DIM],
    pub reward: S,
    pub next_observation: Vec<S>,
    pub terminal: bool,
}

impl<S: Real> Transition<S> {
    pub fn validate(&self) -> Result<()> {
        let finite = self.observation.iter().all(|v| v.is_finite())
            && self.next_observation.iter().all(|v| v.is_finite())
            && self.reward.is_finite();
        if !finite {
            return Err(Error::domain("transition has non-finite entries"));
        }
        if self.action.iter().any(|a| !(a.abs() <= S::one())) {
            return Err(Error::domain("transition action outside [-1, 1]"));
        }
        Ok(())
    }
}

/// Fixed-capacity ring buffer with a seeded uniform sampler.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<S> {
    items: Vec<Transition<S>>,
    capacity: usize,
    next: usize,
    rng: ChaCha8Rng,
}

impl<S: Real> ReplayBuffer<S> {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Inserts, overwriting the oldest entry when full.
    pub fn push(&mut self, t: Transition<S>) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition<S> {
        &self.items[i]
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample_indices(&mut self, n: usize) -> Vec<usize> {
        let len = self.items.len();
        if len == 0 {
            return Vec::new();
        }
        (0..n).map(|_| self.rng.random_range(0..len)).collect()
    }

    pub fn sample(&mut self, n: usize) -> Vec<Transition<S>> {
        self.sample_indices(n)
            .into_iter()
            .map(|i| self.items[i].clone())
            .collect()
    }
}

/// Interpretation of the value term in the critic target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetValueMode {
    /// Stored one-step reward.
    OneStep,
    /// Stored reward replaced by the within-episode discounted tail at storage time.
    McReturn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerConfig {
    pub gamma: f64,
    pub rho: f64,
    pub policy_delay: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warmup: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub target_smoothing: bool,
    pub target_noise_std: f64,
    pub target_noise_clip: f64,
    /// Critic updates per stored transition.
    pub updates_per_transition: f64,
    pub target_value_mode: TargetValueMode,
    pub adam: AdamConfig,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            rho: 0.005,
            policy_delay: 2,
            batch_size: 64,
            buffer_capacity: 200_000,
            warmup: 1000,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            target_smoothing: true,
            target_noise_std: 0.2,
            target_noise_clip: 0.5,
            updates_per_transition: 0.5,
            target_value_mode: TargetValueMode::OneStep,
            adam: AdamConfig::default(),
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.gamma) {
            return Err(Error::config("learner.gamma must lie in (0, 1)"));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::config("learner.rho must lie in (0, 1]"));
        }
        if self.policy_delay == 0 {
            return Err(Error::config("learner.policy_delay must be >= 1"));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err(Error::config("learner.batch_size and learner.buffer_capacity must be positive"));
        }
        for (name, v) in [("actor_lr", self.actor_lr), ("critic_lr", self.critic_lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("learner.{name} must be positive")));
            }
        }
        if !(self.target_noise_std >= 0.0 && self.target_noise_clip >= 0.0) {
            return Err(Error::config("learner target noise parameters must be >= 0"));
        }
        if !(self.updates_per_transition.is_finite() && self.updates_per_transition >= 0.0) {
            return Err(Error::config("learner.updates_per_transition must be >= 0"));
        }
        Ok(())
    }
}

/// Hidden widths and output-layer initialization scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub actor_final_scale: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            actor_final_scale: 0.01,
        }
    }
}

impl NetworkConfig {
    pub fn actor_spec(&self, obs_dim: usize) -> Result<MlpSpec> {
        MlpSpec::new(
            obs_dim,
            self.actor_hidden.clone(),
            ACTION_DIM,
            OutputActivation::Bounded {
                scale: vec![1.0; ACTION_DIM],
            },
        )
    }

    pub fn critic_spec(&self, obs_dim: usize) -> Result<MlpSpec> {
        MlpSpec::new(
            obs_dim + ACTION_DIM,
            self.critic_hidden.clone(),
            1,
            OutputActivation::Identity,
        )
    }
}

/// Actor, twin critics, their targets and optimizer states.
#[derive(Debug, Clone)]
pub struct LearnerBundle<S> {
    pub actor_spec: MlpSpec,
    pub critic_spec: MlpSpec,
    pub actor: ParameterSet<S>,
    pub critic1: ParameterSet<S>,
    pub critic2: ParameterSet<S>,
    pub actor_target: ParameterSet<S>,
    pub critic1_target: ParameterSet<S>,
    pub critic2_target: ParameterSet<S>,
    pub actor_adam: AdamState<S>,
    pub critic1_adam: AdamState<S>,
    pub critic2_adam: AdamState<S>,
    pub config: LearnerConfig,
    /// Critic updates performed.
    pub step: u64,
    pub actor_updates: u64,
    rng: ChaCha8Rng,
    scratch: Scratch<S>,
}

#[derive(Debug, Clone, Default)]
struct Scratch<S> {
    actor: ForwardCache<S>,
    c1: ForwardCache<S>,
    c2: ForwardCache<S>,
}

/// Actor parameters viewed as a deterministic policy.
#[derive(Debug, Clone)]
pub struct ActorPolicy<S> {
    pub spec: MlpSpec,
    pub params: ParameterSet<S>,
}

impl<S: Real> Policy<S> for ActorPolicy<S> {
    fn act(&self, observation: &[S]) -> Result<[S; ACTION_DIM]> {
        let out = forward(&self.spec, &self.params, observation)?;
        let mut a = [S::zero(); ACTION_DIM];
        a.copy_from_slice(&out);
        Ok(a)
    }
}

fn stack_inputs<S: Real>(obs: &[&[S]], actions: &[[S; ACTION_DIM]]) -> Vec<S> {
    let mut x = Vec::with_capacity(obs.len() * (obs.first().map_or(0, |o| o.len()) + ACTION_DIM));
    for (o, a) in obs.iter().zip(actions) {
        x.extend_from_slice(o);
        x.extend_from_slice(a);
    }
    x
}

impl<S: Real> LearnerBundle<S> {
    /// Fresh networks with targets equal to the live parameters.
    pub fn new(
        obs_dim: usize,
        network: &NetworkConfig,
        config: LearnerConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let actor_spec = network.actor_spec(obs_dim)?;
        let critic_spec = network.critic_spec(obs_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = ParameterSet::init(&actor_spec, network.actor_final_scale, &mut rng);
        let critic1 = ParameterSet::init(&critic_spec, 1.0, &mut rng);
        let critic2 = ParameterSet::init(&critic_spec, 1.0, &mut rng);
        Ok(Self::from_parts(actor_spec, critic_spec, actor, critic1, critic2, config, rng))
    }

    pub fn from_parts(
        actor_spec: MlpSpec,
        critic_spec: MlpSpec,
        actor: ParameterSet<S>,
        critic1: ParameterSet<S>,
        critic2: ParameterSet<S>,
        config: LearnerConfig,
        rng: ChaCha8Rng,
    ) -> Self {
        Self {
            actor_adam: AdamState::new(actor.len()),
            critic1_adam: AdamState::new(critic1.len()),
            critic2_adam: AdamState::new(critic2.len()),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor_spec,
            critic_spec,
            actor,
            critic1,
            critic2,
            config,
            step: 0,
            actor_updates: 0,
            rng,
            scratch: Scratch::default(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.actor_spec.input_dim
    }

    pub fn policy(&self) -> ActorPolicy<S> {
        ActorPolicy {
            spec: self.actor_spec.clone(),
            params: self.actor.clone(),
        }
    }

    /// Reseeds the smoothing-noise stream (used when restoring checkpoints).
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// `G = r + γ·min(Q′₁, Q′₂)(s′, π′(s′) + clipped noise)`, with the bootstrap
    /// term dropped for terminal transitions.
    pub fn compute_target(&mut self, batch: &[Transition<S>]) -> Result<Vec<S>> {
        if batch.is_empty() {
            return Err(Error::domain("target computation needs a non-empty batch"));
        }
        let n = batch.len();
        let next: Vec<S> = batch.iter().flat_map(|t| t.next_observation.iter().copied()).collect();
        forward_batch(&self.actor_spec, &self.actor_target, &next, n, &mut self.scratch.actor)?;
        let mut actions: Vec<[S; ACTION_DIM]> = self
            .scratch
            .actor
            .output()
            .chunks_exact(ACTION_DIM)
            .map(|c| [c[0], c[1], c[2], c[3]])
            .collect();
        let cfg = &self.config;
        if cfg.target_smoothing && cfg.target_noise_std > 0.0 {
            let noise = Normal::new(0.0, cfg.target_noise_std).expect("validated std");
            for a in actions.iter_mut() {
                for v in a.iter_mut() {
                    let e = noise
                        .sample(&mut self.rng)
                        .clamp(-cfg.target_noise_clip, cfg.target_noise_clip);
                    *v = (*v + S::lit(e)).max(-S::one()).min(S::one());
                }
            }
        }
        let obs: Vec<&[S]> = batch.iter().map(|t| t.next_observation.as_slice()).collect();
        let x = stack_inputs(&obs, &actions);
        forward_batch(&self.critic_spec, &self.critic1_target, &x, n, &mut self.scratch.c1)?;
        forward_batch(&self.critic_spec, &self.critic2_target, &x, n, &mut self.scratch.c2)?;
        let gamma = S::lit(cfg.gamma);
        Ok(batch
            .iter()
            .zip(self.scratch.c1.output().iter().zip(self.scratch.c2.output()))
            .map(|(t, (&q1, &q2))| {
                if t.terminal {
                    t.reward
                } else {
                    t.reward + gamma * q1.min(q2)
                }
            })
            .collect())
    }

    /// One optimizer step of both critics towards shared targets; returns the
    /// mean of the two critics' mean squared errors. Triggers the delayed
    /// actor/target update every `policy_delay` calls.
    pub fn critic_update(&mut self, batch: &[Transition<S>]) -> Result<S> {
        let targets = self.compute_target(batch)?;
        self.critic_update_with_targets(batch, &targets)
    }

    pub fn critic_update_with_targets(&mut self, batch: &[Transition<S>], targets: &[S]) -> Result<S> {
        let n = batch.len();
        let obs: Vec<&[S]> = batch.iter().map(|t| t.observation.as_slice()).collect();
        let actions: Vec<[S; ACTION_DIM]> = batch.iter().map(|t| t.action).collect();
        let x = stack_inputs(&obs, &actions);
        let inv_n = S::one() / S::from_usize_lossy(n);
        let two = S::lit(2.0);

        forward_batch(&self.critic_spec, &self.critic1, &x, n, &mut self.scratch.c1)?;
        forward_batch(&self.critic_spec, &self.critic2, &x, n, &mut self.scratch.c2)?;
        let mut losses = [S::zero(); 2];
        let mut grads = [Vec::with_capacity(n), Vec::with_capacity(n)];
        for (k, cache) in [&self.scratch.c1, &self.scratch.c2].into_iter().enumerate() {
            for (&q, &g) in cache.output().iter().zip(targets) {
                let r = q - g;
                losses[k] += r * r * inv_n;
                grads[k].push(two * r * inv_n);
            }
        }
        let loss = (losses[0] + losses[1]) / two;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite critic loss at update {}",
                self.step
            )));
        }
        let mut g1 = vec![S::zero(); self.critic1.len()];
        let mut g2 = vec![S::zero(); self.critic2.len()];
        backward_batch(&self.critic_spec, &self.critic1, &self.scratch.c1, &grads[0], &mut g1, None)?;
        backward_batch(&self.critic_spec, &self.critic2, &self.scratch.c2, &grads[1], &mut g2, None)?;
        if g1.iter().chain(&g2).any(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite critic gradient at update {}",
                self.step
            )));
        }
        let lr = S::lit(self.config.critic_lr);
        let adam = self.config.adam;
        optimize_step(&mut self.critic1, &g1, &mut self.critic1_adam, lr, &adam)?;
        optimize_step(&mut self.critic2, &g2, &mut self.critic2_adam, lr, &adam)?;
        self.step += 1;
        if self.step.is_multiple_of(self.config.policy_delay) {
            self.actor_and_target_update(batch)?;
        }
        Ok(loss)
    }

    /// Ascends `Q₁(s, π(s))` with one actor step, then soft-updates all targets.
    pub fn actor_and_target_update(&mut self, batch: &[Transition<S>]) -> Result<()> {
        let n = batch.len();
        let obs: Vec<S> = batch.iter().flat_map(|t| t.observation.iter().copied()).collect();
        forward_batch(&self.actor_spec, &self.actor, &obs, n, &mut self.scratch.actor)?;
        let actions: Vec<[S; ACTION_DIM]> = self
            .scratch
            .actor
            .output()
            .chunks_exact(ACTION_DIM)
            .map(|c| [c[0], c[1], c[2], c[3]])
            .collect();
        let obs_rows: Vec<&[S]> = batch.iter().map(|t| t.observation.as_slice()).collect();
        let x = stack_inputs(&obs_rows, &actions);
        forward_batch(&self.critic_spec, &self.critic1, &x, n, &mut self.scratch.c1)?;
        let out_grad = vec![-S::one() / S::from_usize_lossy(n); n];
        let mut unused = vec![S::zero(); self.critic1.len()];
        let mut dx = vec![S::zero(); x.len()];
        backward_batch(
            &self.critic_spec,
            &self.critic1,
            &self.scratch.c1,
            &out_grad,
            &mut unused,
            Some(&mut dx),
        )?;
        let in_dim = self.critic_spec.input_dim;
        let obs_dim = self.actor_spec.input_dim;
        let da: Vec<S> = dx
            .chunks_exact(in_dim)
            .flat_map(|row| row[obs_dim..].iter().copied())
            .collect();
        let mut ga = vec![S::zero(); self.actor.len()];
        backward_batch(&self.actor_spec, &self.actor, &self.scratch.actor, &da, &mut ga, None)?;
        let lr = S::lit(self.config.actor_lr);
        let adam = self.config.adam;
        optimize_step(&mut self.actor, &ga, &mut self.actor_adam, lr, &adam)?;
        self.soft_update_targets();
        self.actor_updates += 1;
        Ok(())
    }

    pub fn soft_update_targets(&mut self) {
        let rho = S::lit(self.config.rho);
        self.actor_target.soft_update_from(&self.actor, rho);
        self.critic1_target.soft_update_from(&self.critic1, rho);
        self.critic2_target.soft_update_from(&self.critic2, rho);
    }
}

/// Per-episode training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub episode: usize,
    /// Extrinsic return of the reported path.
    pub extrinsic_return: f64,
    pub curiosity: f64,
    pub length: usize,
    pub termination: String,
    pub transitions_stored: usize,
    pub critic_updates: usize,
    /// Mean critic loss over this episode's updates; `None` before warmup.
    pub critic_loss: Option<f64>,
}

/// Curiosity values for each path that ended, and the reward each stored step carries.
fn shaped_rewards<S: Real>(
    episode: &Episode<S>,
    memory: &EpisodeMemory<S>,
    normalizer: &crate::sim::ObservationNormalizer<S>,
    lambda_c: S,
    curiosity: &CuriosityConfig,
) -> Result<(Vec<Vec<S>>, Vec<Option<S>>)> {
    let mut rewards = Vec::with_capacity(episode.paths.len());
    let mut values = Vec::with_capacity(episode.paths.len());
    for path in &episode.paths {
        let mut r: Vec<S> = path.steps.iter().map(|s| s.reward).collect();
        let c = if path.termination().is_some() {
            let series = EpisodeSeries::from_states(&path.states, normalizer, curiosity)?;
            let c = curiosity_reward(&series, memory, S::lit(curiosity.empty_memory_distance));
            if let Some(last) = r.last_mut() {
                *last += lambda_c * c;
            }
            Some(c)
        } else {
            None
        };
        rewards.push(r);
        values.push(c);
    }
    Ok((rewards, values))
}

/// Everything mutated by training, apart from the networks.
#[derive(Debug, Clone)]
pub struct TrainingState<S> {
    pub buffer: ReplayBuffer<S>,
    pub memory: EpisodeMemory<S>,
    pub rng: ChaCha8Rng,
    pub episodes: usize,
}

/// Runs one exploration rollout, folds curiosity into terminal rewards, stores
/// every executed transition, then performs the scheduled critic updates.
#[allow(clippy::too_many_arguments)]
pub fn train_episode<S: Real>(
    bundle: &mut LearnerBundle<S>,
    env: &mut QuadEnv<S>,
    state: &mut TrainingState<S>,
    exploration: &ExplorationConfig,
    curiosity: &CuriosityConfig,
    lambda_c: f64,
) -> Result<EpisodeStats> {
    env.reset();
    let policy = bundle.policy();
    let episode = rollout(&policy, env, exploration, &mut state.rng)?;
    let (rewards, curiosity_values) = shaped_rewards(
        &episode,
        &state.memory,
        env.normalizer(),
        S::lit(lambda_c),
        curiosity,
    )?;

    let gamma = S::lit(bundle.config.gamma);
    let mut stored = 0;
    for (path, r) in episode.paths.iter().zip(&rewards) {
        let values: Vec<S> = match bundle.config.target_value_mode {
            TargetValueMode::OneStep => r.clone(),
            TargetValueMode::McReturn => {
                let mut tail = vec![S::zero(); r.len()];
                let mut acc = S::zero();
                for i in (0..r.len()).rev() {
                    acc = r[i] + gamma * acc;
                    tail[i] = acc;
                }
                tail
            }
        };
        for (i, step) in path.steps.iter().enumerate().skip(path.shared_prefix) {
            let t = Transition {
                observation: step.observation.clone(),
                action: step.action,
                reward: values[i],
                next_observation: step.next_observation.clone(),
                terminal: step.terminal,
            };
            t.validate()?;
            state.buffer.push(t);
            stored += 1;
        }
    }

    let main = episode.main();
    state.memory.record_episode(EpisodeSeries::from_states(
        &main.states,
        env.normalizer(),
        curiosity,
    )?);

    let mut updates = 0;
    let mut loss_sum = 0.0;
    let cfg = &bundle.config;
    if state.buffer.len() >= cfg.warmup.max(cfg.batch_size) {
        let n = (stored as f64 * cfg.updates_per_transition).round() as usize;
        let batch_size = cfg.batch_size;
        for _ in 0..n {
            let batch = state.buffer.sample(batch_size);
            loss_sum += bundle.critic_update(&batch)?.to_f64_lossy();
            updates += 1;
        }
    }

    let index = state.episodes;
    state.episodes += 1;
    Ok(EpisodeStats {
        episode: index,
        extrinsic_return: main.extrinsic_return().to_f64_lossy(),
        curiosity: curiosity_values[0].map_or(0.0, |c| c.to_f64_lossy()),
        length: main.steps.len(),
        termination: main
            .termination()
            .map_or(TerminationCause::StepLimit, |t| t.cause)
            .as_str()
            .to_string(),
        transitions_stored: stored,
        critic_updates: updates,
        critic_loss: (updates > 0).then(|| loss_sum / updates as f64),
    })
}
