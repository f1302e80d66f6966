//! Rollout generation: single-path exploration (SPE) and branch-structure
//! exploration (BSE), plus the attitude-noise injector used in evaluation.
//!
//! A BSE episode runs `init_steps` under the noisy policy, restores the
//! environment to a recorded state of that initial segment, executes
//! `branch_length` steps with elevated noise, and continues with baseline noise
//! until termination. Every executed transition is kept.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::env::{clip_action, ActionBounds, Environment, ACTION_DIM};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::scenes::TerminationEvent;
use crate::sim::QuadState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Bse,
    Spe,
}

/// How the branch state is picked among the initial segment's states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchPoint {
    Uniform,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplorationConfig {
    pub strategy: Strategy,
    pub init_steps: usize,
    pub branch_count: usize,
    pub branch_length: usize,
    pub branch_point: BranchPoint,
    /// Per action dimension, normalized units.
    pub branch_noise_std: Vec<f64>,
    /// Per action dimension, normalized units.
    pub exploration_noise_std: Vec<f64>,
    /// Steps each noise draw is held for; 1 gives independent per-step noise.
    pub noise_hold_steps: usize,
    pub seed: u64,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Bse,
            init_steps: 30,
            branch_count: 1,
            branch_length: 15,
            branch_point: BranchPoint::Uniform,
            branch_noise_std: vec![0.3, 0.3, 0.09, 0.09],
            exploration_noise_std: vec![0.1, 0.1, 0.03, 0.03],
            noise_hold_steps: 1,
            seed: 0,
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("branch_noise_std", &self.branch_noise_std),
            ("exploration_noise_std", &self.exploration_noise_std),
        ] {
            if v.len() != ACTION_DIM {
                return Err(Error::config(format!(
                    "exploration.{name} needs {ACTION_DIM} entries, got {}",
                    v.len()
                )));
            }
            if v.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
                return Err(Error::config(format!("exploration.{name} entries must be >= 0")));
            }
        }
        if self.noise_hold_steps == 0 {
            return Err(Error::config("exploration.noise_hold_steps must be >= 1"));
        }
        if self.strategy == Strategy::Bse && self.branch_count == 0 {
            return Err(Error::config("exploration.branch_count must be >= 1 for bse"));
        }
        Ok(())
    }
}

/// A deterministic policy producing normalized actions.
pub trait Policy<S> {
    fn act(&self, observation: &[S]) -> Result<[S; ACTION_DIM]>;
}

impl<S: Real, F> Policy<S> for F
where
    F: Fn(&[S]) -> [S; ACTION_DIM],
{
    fn act(&self, observation: &[S]) -> Result<[S; ACTION_DIM]> {
        Ok(self(observation))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<S> {
    pub observation: Vec<S>,
    /// Executed normalized action, after noise and clipping.
    pub action: [S; ACTION_DIM],
    pub reward: S,
    pub next_observation: Vec<S>,
    /// The step ended the episode by goal, collision, or leaving the region.
    pub terminal: bool,
    pub termination: Option<TerminationEvent>,
}

/// One contiguous trajectory from the start state.
#[derive(Debug, Clone, PartialEq)]
pub struct Path<S> {
    /// Visited states, starting with the initial state.
    pub states: Vec<QuadState<S>>,
    pub steps: Vec<StepRecord<S>>,
    /// Leading steps already stored through another path of the same episode.
    pub shared_prefix: usize,
}

impl<S: Real> Path<S> {
    pub fn termination(&self) -> Option<TerminationEvent> {
        self.steps.last().and_then(|s| s.termination)
    }

    pub fn extrinsic_return(&self) -> S {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Steps this path contributes to the replay stream.
    pub fn new_steps(&self) -> &[StepRecord<S>] {
        &self.steps[self.shared_prefix..]
    }
}

/// Paths produced by one rollout; `paths[0]` is the episode reported in statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode<S> {
    pub paths: Vec<Path<S>>,
    /// Index of the branch state within the initial segment (BSE only).
    pub branch_indices: Vec<usize>,
}

impl<S: Real> Episode<S> {
    pub fn main(&self) -> &Path<S> {
        &self.paths[0]
    }

    /// Every executed step exactly once.
    pub fn executed_steps(&self) -> impl Iterator<Item = &StepRecord<S>> {
        self.paths.iter().flat_map(|p| p.new_steps())
    }
}

/// Gaussian action noise, redrawn every `hold` steps and held in between.
struct NoiseProcess<'a> {
    std: &'a [f64],
    hold: usize,
    current: [f64; ACTION_DIM],
    age: usize,
}

impl<'a> NoiseProcess<'a> {
    fn new(std: &'a [f64], hold: usize) -> Self {
        Self {
            std,
            hold: hold.max(1),
            current: [0.0; ACTION_DIM],
            age: 0,
        }
    }

    fn next<R: Rng>(&mut self, rng: &mut R) -> [f64; ACTION_DIM] {
        if self.age.is_multiple_of(self.hold) {
            for (k, v) in self.current.iter_mut().enumerate() {
                *v = if self.std[k] > 0.0 {
                    Normal::new(0.0, self.std[k]).expect("validated std").sample(rng)
                } else {
                    0.0
                };
            }
        }
        self.age += 1;
        self.current
    }
}

fn noisy_action<S: Real, P: Policy<S>>(
    policy: &P,
    obs: &[S],
    noise: [f64; ACTION_DIM],
) -> Result<[S; ACTION_DIM]> {
    let mut a = policy.act(obs)?;
    for (v, e) in a.iter_mut().zip(noise) {
        *v += S::lit(e);
    }
    clip_action(&mut a);
    Ok(a)
}

fn run_steps<S, E, P, R>(
    policy: &P,
    env: &mut E,
    path: &mut Path<S>,
    std: &[f64],
    hold: usize,
    limit: Option<usize>,
    rng: &mut R,
    mut on_state: impl FnMut(&E),
) -> Result<bool>
where
    S: Real,
    E: Environment<S>,
    P: Policy<S>,
    R: Rng,
{
    let mut taken = 0;
    let mut noise = NoiseProcess::new(std, hold);
    loop {
        if limit.is_some_and(|l| taken >= l) {
            return Ok(false);
        }
        let obs = env.observation();
        let action = noisy_action(policy, &obs, noise.next(rng))?;
        let out = env.step(&action)?;
        taken += 1;
        let terminal = out
            .termination
            .is_some_and(|t| t.cause != crate::scenes::TerminationCause::StepLimit);
        path.states.push(out.state);
        path.steps.push(StepRecord {
            observation: obs,
            action,
            reward: out.reward,
            next_observation: out.observation,
            terminal,
            termination: out.termination,
        });
        on_state(env);
        if out.termination.is_some() {
            return Ok(true);
        }
    }
}

/// One noisy trajectory from the environment's current state until termination.
pub fn rollout_spe<S, E, P, R>(
    policy: &P,
    env: &mut E,
    config: &ExplorationConfig,
    rng: &mut R,
) -> Result<Episode<S>>
where
    S: Real,
    E: Environment<S>,
    P: Policy<S>,
    R: Rng,
{
    config.validate()?;
    let mut path = Path {
        states: vec![env.state()],
        steps: Vec::new(),
        shared_prefix: 0,
    };
    run_steps(policy, env, &mut path, &config.exploration_noise_std, config.noise_hold_steps, None, rng, |_| {})?;
    Ok(Episode {
        paths: vec![path],
        branch_indices: Vec::new(),
    })
}

/// Branch-structure rollout from the environment's current state.
pub fn rollout_bse<S, E, P, R>(
    policy: &P,
    env: &mut E,
    config: &ExplorationConfig,
    rng: &mut R,
) -> Result<Episode<S>>
where
    S: Real,
    E: Environment<S>,
    P: Policy<S>,
    R: Rng,
{
    config.validate()?;
    let Some(first) = env.snapshot() else {
        return Err(Error::config(
            "branch-structure exploration needs an environment with save/restore",
        ));
    };
    let mut snapshots = vec![first];
    let mut init = Path {
        states: vec![env.state()],
        steps: Vec::new(),
        shared_prefix: 0,
    };
    let init_terminated = run_steps(
        policy,
        env,
        &mut init,
        &config.exploration_noise_std,
        config.noise_hold_steps,
        Some(config.init_steps),
        rng,
        |e| snapshots.push(e.snapshot().expect("snapshot support checked")),
    )?;
    // A terminal state cannot be branched from.
    let candidates = if init_terminated {
        init.steps.len()
    } else {
        init.steps.len() + 1
    };
    let last = init.steps.len();

    let mut branches = Vec::with_capacity(config.branch_count);
    let mut indices = Vec::with_capacity(config.branch_count);
    for _ in 0..config.branch_count {
        let i = match config.branch_point {
            BranchPoint::Last => candidates - 1,
            BranchPoint::Uniform => rng.random_range(0..candidates),
        };
        env.restore(&snapshots[i])?;
        let mut path = Path {
            states: init.states[..=i].to_vec(),
            steps: init.steps[..i].to_vec(),
            shared_prefix: i,
        };
        let ended = run_steps(
            policy,
            env,
            &mut path,
            &config.branch_noise_std,
            config.noise_hold_steps,
            Some(config.branch_length),
            rng,
            |_| {},
        )?;
        if !ended {
            run_steps(policy, env, &mut path, &config.exploration_noise_std, config.noise_hold_steps, None, rng, |_| {})?;
        }
        branches.push(path);
        indices.push(i);
    }

    if indices.iter().all(|&i| i == last) {
        // The initial segment is a prefix of every branch: store it once, with the first.
        branches[0].shared_prefix = 0;
    } else {
        branches.push(init);
    }
    Ok(Episode {
        paths: branches,
        branch_indices: indices,
    })
}

/// Dispatches on the configured strategy.
pub fn rollout<S, E, P, R>(
    policy: &P,
    env: &mut E,
    config: &ExplorationConfig,
    rng: &mut R,
) -> Result<Episode<S>>
where
    S: Real,
    E: Environment<S>,
    P: Policy<S>,
    R: Rng,
{
    match config.strategy {
        Strategy::Spe => rollout_spe(policy, env, config, rng),
        Strategy::Bse => rollout_bse(policy, env, config, rng),
    }
}

/// Adds independent zero-mean Gaussian noise of `std_deg` degrees to each
/// commanded attitude angle; thrust is untouched and the result re-clipped.
pub fn attitude_noise<S: Real, R: Rng>(
    action: &[S; ACTION_DIM],
    std_deg: f64,
    bounds: &ActionBounds,
    rng: &mut R,
) -> [S; ACTION_DIM] {
    let mut out = *action;
    if std_deg > 0.0 {
        let n = Normal::new(0.0, std_deg).expect("finite std");
        for (k, scale) in bounds.angle_scales_deg().iter().enumerate() {
            out[k] += S::lit(n.sample(rng) / scale);
        }
    }
    clip_action(&mut out);
    out
}

/// Wraps a policy with per-step attitude noise, as used in robustness evaluation.
pub struct AttitudeNoisyPolicy<'a, P, R> {
    pub inner: &'a P,
    pub std_deg: f64,
    pub bounds: ActionBounds,
    pub rng: std::cell::RefCell<&'a mut R>,
}

impl<S: Real, P: Policy<S>, R: Rng> Policy<S> for AttitudeNoisyPolicy<'_, P, R> {
    fn act(&self, observation: &[S]) -> Result<[S; ACTION_DIM]> {
        let a = self.inner.act(observation)?;
        Ok(attitude_noise(&a, self.std_deg, &self.bounds, &mut **self.rng.borrow_mut()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::QuadEnv;
    use crate::geometry::EllipsoidModel;
    use crate::reward::RewardConfig;
    use crate::scenes::{make_window_scene, SceneSpec};
    use crate::sim::QuadParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env() -> QuadEnv<f64> {
        let scene = make_window_scene(0.3, 0.0, &SceneSpec::default()).unwrap();
        QuadEnv::new(
            scene,
            QuadParams::default(),
            ActionBounds::default(),
            EllipsoidModel::default(),
            &RewardConfig::default(),
        )
    }

    fn forward_policy(_: &[f64]) -> [f64; ACTION_DIM] {
        [0.0, 0.15, 0.0, 0.05]
    }

    struct NoSnapshots(QuadEnv<f64>);

    impl Environment<f64> for NoSnapshots {
        type Snapshot = ();
        fn observation_dim(&self) -> usize {
            self.0.observation_dim()
        }
        fn observation(&self) -> Vec<f64> {
            self.0.observation()
        }
        fn state(&self) -> QuadState<f64> {
            self.0.state()
        }
        fn steps_taken(&self) -> usize {
            self.0.steps_taken()
        }
        fn normalizer(&self) -> &crate::sim::ObservationNormalizer<f64> {
            self.0.normalizer()
        }
        fn step(&mut self, action: &[f64]) -> Result<crate::env::StepOutcome<f64>> {
            self.0.step(action)
        }
        fn snapshot(&self) -> Option<()> {
            None
        }
        fn restore(&mut self, _: &()) -> Result<()> {
            Ok(())
        }
    }

    #[test]
    fn bse_without_snapshots_is_config_error() {
        let mut e = NoSnapshots(env());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = rollout_bse(&forward_policy, &mut e, &ExplorationConfig::default(), &mut rng);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn bse_paths_share_prefix_and_store_each_step_once() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = ExplorationConfig::default();
        let ep = rollout_bse(&forward_policy, &mut e, &cfg, &mut rng).unwrap();
        let i = ep.branch_indices[0];
        let main = ep.main();
        assert_eq!(main.shared_prefix, i);
        assert!(main.termination().is_some());
        assert_eq!(main.states.len(), main.steps.len() + 1);
        if ep.paths.len() == 2 {
            let init = &ep.paths[1];
            assert_eq!(&init.steps[..i], &main.steps[..i]);
        }
        let executed = ep.executed_steps().count();
        let init_len = ep.paths.last().unwrap().steps.len();
        assert!(executed >= main.steps.len());
        assert!(executed <= main.steps.len() + init_len);
    }

    #[test]
    fn zero_noise_spe_is_repeatable() {
        let cfg = ExplorationConfig {
            strategy: Strategy::Spe,
            exploration_noise_std: vec![0.0; 4],
            ..ExplorationConfig::default()
        };
        let mut a = env();
        let mut b = env();
        let ea = rollout_spe(&forward_policy, &mut a, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let eb = rollout_spe(&forward_policy, &mut b, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(ea, eb);
    }

    #[test]
    fn attitude_noise_zero_is_identity_and_thrust_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = [0.2, -0.1, 0.05, 0.3];
        assert_eq!(attitude_noise(&a, 0.0, &ActionBounds::default(), &mut rng), a);
        let n = attitude_noise(&a, 3.0, &ActionBounds::default(), &mut rng);
        assert_eq!(n[3], a[3]);
        assert_ne!(n[0], a[0]);
    }

    #[test]
    fn config_validation() {
        let bad = ExplorationConfig {
            branch_noise_std: vec![0.1; 3],
            ..ExplorationConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = ExplorationConfig {
            branch_count: 0,
            ..ExplorationConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
