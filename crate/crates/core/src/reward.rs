//! Goal, collision, and extrinsic rewards with sparse terminal timing.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{body_overlap, EllipsoidModel};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;
use crate::scenes::{Scene, TerminationCause};
use crate::sim::QuadState;

/// Reward constants as they appear in the run configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub lambda_x: f64,
    pub lambda_r: f64,
    pub lambda_v: f64,
    pub lambda_omega: f64,
    pub lambda_obstacle: f64,
    pub lambda_c: f64,
    /// Added on top of the extrinsic reward when the goal is reached.
    pub success_bonus: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_x: -1.0,
            lambda_r: -0.5,
            lambda_v: -0.05,
            lambda_omega: -0.02,
            lambda_obstacle: -10.0,
            lambda_c: 4.0,
            success_bonus: 3.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let penalties = [
            ("lambda_x", self.lambda_x),
            ("lambda_r", self.lambda_r),
            ("lambda_v", self.lambda_v),
            ("lambda_omega", self.lambda_omega),
            ("lambda_obstacle", self.lambda_obstacle),
        ];
        for (name, v) in penalties {
            if !(v.is_finite() && v <= 0.0) {
                return Err(Error::config(format!("reward.{name} must be <= 0, got {v}")));
            }
        }
        if !(self.lambda_c.is_finite() && self.lambda_c >= 0.0) {
            return Err(Error::config("reward.lambda_c must be >= 0"));
        }
        if !self.success_bonus.is_finite() {
            return Err(Error::config("reward.success_bonus must be finite"));
        }
        Ok(())
    }

    pub fn weights_for<S: Real>(&self, scene: &Scene<S>) -> RewardWeights<S> {
        RewardWeights {
            lambda_x: S::lit(self.lambda_x),
            lambda_r: S::lit(self.lambda_r),
            lambda_v: S::lit(self.lambda_v),
            lambda_omega: S::lit(self.lambda_omega),
            lambda_obstacle: S::lit(self.lambda_obstacle),
            lambda_c: S::lit(self.lambda_c),
            success_bonus: S::lit(self.success_bonus),
            goal_position: scene.goal_position,
            goal_attitude: scene.goal_attitude,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights<S> {
    pub lambda_x: S,
    pub lambda_r: S,
    pub lambda_v: S,
    pub lambda_omega: S,
    pub lambda_obstacle: S,
    pub lambda_c: S,
    pub success_bonus: S,
    pub goal_position: Vec3<S>,
    pub goal_attitude: Mat3<S>,
}

/// `λx|X − Xgoal| + λr‖R − Rgoal‖F + λv|V| + λω|ω|`.
pub fn goal_reward<S: Real>(state: &QuadState<S>, w: &RewardWeights<S>) -> S {
    w.lambda_x * (state.position - w.goal_position).norm()
        + w.lambda_r * state.attitude.sub(&w.goal_attitude).frobenius_norm()
        + w.lambda_v * state.linear_velocity.norm()
        + w.lambda_omega * state.angular_velocity.norm()
}

/// `λobstacle · card(ε ∩ O) / card(ε)`.
pub fn collision_reward<S: Real>(
    state: &QuadState<S>,
    scene: &Scene<S>,
    ellipsoid: &EllipsoidModel<S>,
    w: &RewardWeights<S>,
) -> S {
    w.lambda_obstacle * body_overlap(ellipsoid, state.position, &state.attitude, &scene.obstacles)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardEvent {
    None,
    Collision,
    GoalReached,
    OutOfRegion,
}

impl FromStr for RewardEvent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "collision" => Ok(Self::Collision),
            "goal_reached" => Ok(Self::GoalReached),
            "out_of_region" => Ok(Self::OutOfRegion),
            other => Err(Error::domain(format!("unknown reward event tag {other:?}"))),
        }
    }
}

impl RewardEvent {
    /// Step-limit endings are scored like leaving the region: goal term only.
    pub fn from_termination(cause: Option<TerminationCause>) -> Self {
        match cause {
            None => Self::None,
            Some(TerminationCause::Collision) => Self::Collision,
            Some(TerminationCause::GoalReached) => Self::GoalReached,
            Some(TerminationCause::OutOfRegion | TerminationCause::StepLimit) => Self::OutOfRegion,
        }
    }
}

/// Sparse extrinsic reward: zero between events, goal plus collision terms at
/// collision or goal, goal term alone when leaving the region.
pub fn extrinsic_reward<S: Real>(
    state: &QuadState<S>,
    scene: &Scene<S>,
    ellipsoid: &EllipsoidModel<S>,
    w: &RewardWeights<S>,
    event: RewardEvent,
) -> S {
    match event {
        RewardEvent::None => S::zero(),
        RewardEvent::Collision | RewardEvent::GoalReached => {
            goal_reward(state, w) + collision_reward(state, scene, ellipsoid, w)
        }
        RewardEvent::OutOfRegion => goal_reward(state, w),
    }
}

/// Extrinsic reward plus the success bonus on reaching the goal.
pub fn terminal_reward<S: Real>(
    state: &QuadState<S>,
    scene: &Scene<S>,
    ellipsoid: &EllipsoidModel<S>,
    w: &RewardWeights<S>,
    event: RewardEvent,
) -> S {
    let bonus = if event == RewardEvent::GoalReached {
        w.success_bonus
    } else {
        S::zero()
    };
    extrinsic_reward(state, scene, ellipsoid, w, event) + bonus
}
