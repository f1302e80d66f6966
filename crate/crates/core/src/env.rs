//! The flight task as an environment: normalized action decoding, stepping,
//! sparse terminal rewards, and state save/restore for branching rollouts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::EllipsoidModel;
use crate::linalg::Mat3;
use crate::reward::{terminal_reward, RewardConfig, RewardEvent, RewardWeights};
use crate::scalar::Real;
use crate::scenes::{check_termination, GateProgress, Scene, TerminationEvent};
use crate::sim::{self, ObservationNormalizer, QuadParams, QuadState};

/// Normalized action layout: roll, pitch, yaw, thrust, each in `[-1, 1]`.
pub const ACTION_DIM: usize = 4;

/// Physical ranges the normalized action maps onto.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActionBounds {
    pub max_roll_deg: f64,
    pub max_pitch_deg: f64,
    pub max_yaw_deg: f64,
    /// Divides the decoded thrust by the commanded tilt cosine so that a zero
    /// thrust action holds altitude at any commanded roll and pitch.
    pub tilt_compensation: bool,
}

impl Default for ActionBounds {
    fn default() -> Self {
        Self {
            max_roll_deg: 60.0,
            max_pitch_deg: 60.0,
            max_yaw_deg: 180.0,
            tilt_compensation: true,
        }
    }
}

impl ActionBounds {
    pub fn validate(&self) -> Result<()> {
        let all = [self.max_roll_deg, self.max_pitch_deg, self.max_yaw_deg];
        if all.iter().any(|a| !(a.is_finite() && *a > 0.0 && *a <= 180.0)) {
            return Err(Error::config("action bounds must lie in (0, 180] degrees"));
        }
        Ok(())
    }

    /// Degrees per normalized unit for the three angle channels.
    pub fn angle_scales_deg(&self) -> [f64; 3] {
        [self.max_roll_deg, self.max_pitch_deg, self.max_yaw_deg]
    }
}

pub fn clip_action<S: Real>(u: &mut [S]) {
    for v in u.iter_mut() {
        *v = v.max(-S::one()).min(S::one());
    }
}

/// Maps a normalized action to an attitude-thrust command.
///
/// Angles scale linearly to the bounds. Thrust is piecewise linear with zero at
/// hover: `[-1, 0]` covers `[0, hover]` and `[0, 1]` covers `[hover, thrust_max]`,
/// optionally divided by `cos(roll)·cos(pitch)` (floored at 0.25).
pub fn decode_action<S: Real>(
    u: &[S],
    bounds: &ActionBounds,
    params: &QuadParams<S>,
) -> Result<sim::AttitudeThrustAction<S>> {
    if u.len() != ACTION_DIM {
        return Err(Error::domain(format!(
            "action has {} entries, expected {ACTION_DIM}",
            u.len()
        )));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("action has non-finite entries"));
    }
    let c = |v: S| v.max(-S::one()).min(S::one());
    let deg = |d: f64| S::lit(d.to_radians());
    let roll = c(u[0]) * deg(bounds.max_roll_deg);
    let pitch = c(u[1]) * deg(bounds.max_pitch_deg);
    let yaw = c(u[2]) * deg(bounds.max_yaw_deg);
    let hover = params.hover_thrust().min(params.thrust_max);
    let t = c(u[3]);
    let mut thrust = if t < S::zero() {
        hover * (S::one() + t)
    } else {
        hover + t * (params.thrust_max - hover)
    };
    if bounds.tilt_compensation {
        thrust /= (roll.cos() * pitch.cos()).max(S::lit(0.25));
    }
    Ok(sim::AttitudeThrustAction {
        commanded_attitude: Mat3::from_euler(roll, pitch, yaw),
        thrust: thrust.max(S::zero()).min(params.thrust_max),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome<S> {
    pub observation: Vec<S>,
    pub state: QuadState<S>,
    /// Extrinsic reward (plus success bonus); zero unless the step ended the episode.
    pub reward: S,
    pub termination: Option<TerminationEvent>,
}

/// Everything a branching rollout needs from an environment.
pub trait Environment<S: Real> {
    type Snapshot: Clone;

    fn observation_dim(&self) -> usize;
    fn observation(&self) -> Vec<S>;
    fn state(&self) -> QuadState<S>;
    fn steps_taken(&self) -> usize;
    /// Normalization used for observations, reused by the curiosity features.
    fn normalizer(&self) -> &ObservationNormalizer<S>;
    fn step(&mut self, action: &[S]) -> Result<StepOutcome<S>>;
    /// `None` when the environment cannot save its state.
    fn snapshot(&self) -> Option<Self::Snapshot>;
    fn restore(&mut self, snapshot: &Self::Snapshot) -> Result<()>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadSnapshot<S> {
    pub state: QuadState<S>,
    pub steps: usize,
    pub gates: GateProgress,
    pub done: bool,
}

/// One quadrotor in one scene.
#[derive(Debug, Clone)]
pub struct QuadEnv<S> {
    scene: Scene<S>,
    params: QuadParams<S>,
    bounds: ActionBounds,
    ellipsoid: EllipsoidModel<S>,
    weights: RewardWeights<S>,
    normalizer: ObservationNormalizer<S>,
    state: QuadState<S>,
    steps: usize,
    gates: GateProgress,
    done: bool,
}

impl<S: Real> QuadEnv<S> {
    pub fn new(
        scene: Scene<S>,
        params: QuadParams<S>,
        bounds: ActionBounds,
        ellipsoid: EllipsoidModel<S>,
        reward: &RewardConfig,
    ) -> Self {
        let weights = reward.weights_for(&scene);
        let normalizer = ObservationNormalizer::for_scene(&scene);
        let state = scene.start_state();
        Self {
            scene,
            params,
            bounds,
            ellipsoid,
            weights,
            normalizer,
            state,
            steps: 0,
            gates: GateProgress::default(),
            done: false,
        }
    }

    pub fn scene(&self) -> &Scene<S> {
        &self.scene
    }

    pub fn params(&self) -> &QuadParams<S> {
        &self.params
    }

    pub fn bounds(&self) -> &ActionBounds {
        &self.bounds
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Places the quadrotor at rest at the scene start.
    pub fn reset(&mut self) {
        self.state = self.scene.start_state();
        self.steps = 0;
        self.gates = GateProgress::default();
        self.done = false;
    }

    /// Replaces the scene (keeping parameters) and resets.
    pub fn set_scene(&mut self, scene: Scene<S>, reward: &RewardConfig) {
        self.weights = reward.weights_for(&scene);
        self.normalizer = ObservationNormalizer::for_scene(&scene);
        self.scene = scene;
        self.reset();
    }
}

impl<S: Real> Environment<S> for QuadEnv<S> {
    type Snapshot = QuadSnapshot<S>;

    fn observation_dim(&self) -> usize {
        sim::QUAD_FEATURES + self.scene.obstacle_feature_len()
    }

    fn observation(&self) -> Vec<S> {
        sim::observe(&self.state, &self.scene)
            .expect("environment state stays finite")
            .values
    }

    fn state(&self) -> QuadState<S> {
        self.state
    }

    fn steps_taken(&self) -> usize {
        self.steps
    }

    fn normalizer(&self) -> &ObservationNormalizer<S> {
        &self.normalizer
    }

    fn step(&mut self, action: &[S]) -> Result<StepOutcome<S>> {
        if self.done {
            return Err(Error::domain("step called on a finished episode"));
        }
        let command = decode_action(action, &self.bounds, &self.params)?;
        let next = sim::step(&self.state, &command, &self.params)?;
        self.gates.update(&self.scene, self.state.position, next.position);
        self.state = next;
        self.steps += 1;
        let termination =
            check_termination(&self.state, &self.scene, self.steps, &self.ellipsoid, &self.gates);
        let reward = terminal_reward(
            &self.state,
            &self.scene,
            &self.ellipsoid,
            &self.weights,
            RewardEvent::from_termination(termination.map(|t| t.cause)),
        );
        self.done = termination.is_some();
        Ok(StepOutcome {
            observation: self.observation(),
            state: self.state,
            reward,
            termination,
        })
    }

    fn snapshot(&self) -> Option<QuadSnapshot<S>> {
        Some(QuadSnapshot {
            state: self.state,
            steps: self.steps,
            gates: self.gates,
            done: self.done,
        })
    }

    fn restore(&mut self, snapshot: &QuadSnapshot<S>) -> Result<()> {
        snapshot.state.validate()?;
        self.state = snapshot.state;
        self.steps = snapshot.steps;
        self.gates = snapshot.gates;
        self.done = snapshot.done;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::{make_window_scene, SceneSpec, TerminationCause};

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

    #[test]
    fn zero_action_is_hover() {
        let p = QuadParams::<f64>::default();
        let a = decode_action(&[0.0; 4], &ActionBounds::default(), &p).unwrap();
        assert!((a.thrust - p.hover_thrust()).abs() < 1e-12);
        assert_eq!(a.commanded_attitude, Mat3::identity());
        let full = decode_action(&[0.0, 0.0, 0.0, 1.0], &ActionBounds::default(), &p).unwrap();
        assert!((full.thrust - p.thrust_max).abs() < 1e-12);
        let off = decode_action(&[0.0, 0.0, 0.0, -1.0], &ActionBounds::default(), &p).unwrap();
        assert_eq!(off.thrust, 0.0);
    }

    #[test]
    fn tilt_compensation_keeps_vertical_thrust() {
        let p = QuadParams::<f64>::default();
        let a = decode_action(&[0.5, 0.0, 0.0, 0.0], &ActionBounds::default(), &p).unwrap();
        let vertical = a.commanded_attitude.mul_vec(crate::linalg::Vec3::from_f64(0.0, 0.0, a.thrust));
        assert!((vertical.z - p.hover_thrust()).abs() < 1e-9);
        let plain = ActionBounds {
            tilt_compensation: false,
            ..ActionBounds::default()
        };
        let b = decode_action(&[0.5, 0.0, 0.0, 0.0], &plain, &p).unwrap();
        assert!((b.thrust - p.hover_thrust()).abs() < 1e-12);
    }

    #[test]
    fn decoded_attitude_is_rotation() {
        let p = QuadParams::<f64>::default();
        let a = decode_action(&[0.7, -0.9, 0.3, 0.2], &ActionBounds::default(), &p).unwrap();
        assert!(a.commanded_attitude.is_rotation(1e-12));
        let (roll, pitch, _) = a.commanded_attitude.to_euler();
        assert!((roll - 0.7 * 60f64.to_radians()).abs() < 1e-12);
        assert!((pitch + 0.9 * 60f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn hover_runs_to_step_limit_with_goal_term() {
        let mut e = env();
        let mut last = None;
        for _ in 0..e.scene().max_episode_steps {
            let out = e.step(&[0.0; 4]).unwrap();
            if out.termination.is_some() {
                last = Some(out);
                break;
            }
            assert_eq!(out.reward, 0.0);
        }
        let last = last.unwrap();
        assert_eq!(last.termination.unwrap().cause, TerminationCause::StepLimit);
        assert!(last.reward < 0.0);
        assert!(e.step(&[0.0; 4]).is_err());
    }

    #[test]
    fn snapshot_restore_replays_identically() {
        let mut e = env();
        let u = [0.1, 0.2, 0.0, 0.05];
        e.step(&u).unwrap();
        let snap = e.snapshot().unwrap();
        let a = e.step(&u).unwrap();
        e.restore(&snap).unwrap();
        let b = e.step(&u).unwrap();
        assert_eq!(a, b);
    }
}
