//! Quadrotor state/action model and the attitude-thrust rigid-body integrator.
//!
//! The attitude follows the commanded attitude through a first-order lag along
//! the geodesic on SO(3); translation is Newtonian under collective thrust and
//! gravity, integrated with semi-implicit Euler at `control_dt`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;
use crate::scenes::Scene;

/// Entrywise tolerance for rotation-matrix validity.
pub const ROTATION_TOL: f64 = 1e-6;

/// Velocity normalization scale in observations, m/s.
pub const VELOCITY_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadState<S> {
    /// World frame, m.
    pub position: Vec3<S>,
    /// Body to world.
    pub attitude: Mat3<S>,
    /// World frame, m/s.
    pub linear_velocity: Vec3<S>,
    /// Body frame, rad/s.
    pub angular_velocity: Vec3<S>,
}

impl<S: Real> QuadState<S> {
    pub fn at_rest(position: Vec3<S>) -> Self {
        Self {
            position,
            attitude: Mat3::identity(),
            linear_velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite()
            && self.attitude.is_finite()
            && self.linear_velocity.is_finite()
            && self.angular_velocity.is_finite()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(Error::domain("quad state has non-finite components"));
        }
        if !self.attitude.is_rotation(S::lit(ROTATION_TOL)) {
            return Err(Error::domain("quad attitude is not a rotation matrix"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttitudeThrustAction<S> {
    pub commanded_attitude: Mat3<S>,
    /// Collective thrust along body z, N.
    pub thrust: S,
}

impl<S: Real> AttitudeThrustAction<S> {
    pub fn validate(&self, params: &QuadParams<S>) -> Result<()> {
        if !self.commanded_attitude.is_finite() || !self.thrust.is_finite() {
            return Err(Error::domain("action has non-finite components"));
        }
        if !self.commanded_attitude.is_rotation(S::lit(ROTATION_TOL)) {
            return Err(Error::domain("commanded attitude is not a rotation matrix"));
        }
        if self.thrust < S::zero() || self.thrust > params.thrust_max {
            return Err(Error::domain(format!(
                "thrust {} outside [0, {}]",
                self.thrust, params.thrust_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadParams<S> {
    /// kg
    pub mass: S,
    /// kg·m²
    pub inertia_diag: Vec3<S>,
    /// N
    pub thrust_max: S,
    /// s
    pub attitude_time_constant: S,
    /// s
    pub control_dt: S,
    /// m/s²
    pub gravity: S,
}

impl<S: Real> Default for QuadParams<S> {
    fn default() -> Self {
        Self {
            mass: S::lit(0.547),
            inertia_diag: Vec3::from_f64(0.033, 0.033, 0.058),
            thrust_max: S::lit(20.0),
            attitude_time_constant: S::lit(0.08),
            control_dt: S::lit(0.02),
            gravity: S::lit(9.81),
        }
    }
}

impl<S: Real> QuadParams<S> {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("inertia_diag.x", self.inertia_diag.x),
            ("inertia_diag.y", self.inertia_diag.y),
            ("inertia_diag.z", self.inertia_diag.z),
            ("thrust_max", self.thrust_max),
            ("attitude_time_constant", self.attitude_time_constant),
            ("control_dt", self.control_dt),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > S::zero()) {
                return Err(Error::config(format!("quad.{name} must be > 0, got {v}")));
            }
        }
        if self.control_dt > S::lit(0.05) {
            return Err(Error::config(format!(
                "quad.control_dt must be <= 0.05, got {}",
                self.control_dt
            )));
        }
        if (self.gravity - S::lit(9.81)).abs() > S::lit(1e-9) {
            return Err(Error::config("quad.gravity is fixed at 9.81"));
        }
        Ok(())
    }

    pub fn hover_thrust(&self) -> S {
        self.mass * self.gravity
    }
}

/// Advances the quadrotor by one control period.
pub fn step<S: Real>(
    state: &QuadState<S>,
    action: &AttitudeThrustAction<S>,
    params: &QuadParams<S>,
) -> Result<QuadState<S>> {
    state.validate()?;
    action.validate(params)?;
    let dt = params.control_dt;

    // Exact discretization of a first-order lag: fraction of the remaining
    // rotation covered in one period.
    let alpha = S::one() - (-dt / params.attitude_time_constant).exp();
    let error = state
        .attitude
        .transpose()
        .mat_mul(&action.commanded_attitude)
        .log_so3();
    let delta = error.scale(alpha);
    let attitude = state
        .attitude
        .mat_mul(&Mat3::exp_so3(delta))
        .orthonormalized();
    let angular_velocity = delta.scale(S::one() / dt);

    let body_thrust = Vec3::new(S::zero(), S::zero(), action.thrust / params.mass);
    let acceleration = attitude.mul_vec(body_thrust) - Vec3::new(S::zero(), S::zero(), params.gravity);
    let linear_velocity = state.linear_velocity + acceleration.scale(dt);
    let position = state.position + linear_velocity.scale(dt);

    let next = QuadState {
        position,
        attitude,
        linear_velocity,
        angular_velocity,
    };
    if !next.is_finite() {
        return Err(Error::domain("integration produced non-finite state"));
    }
    Ok(next)
}

/// Number of quadrotor features ahead of the obstacle parameters.
pub const QUAD_FEATURES: usize = 15;

/// Policy input: normalized quadrotor features followed by normalized obstacle parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVector<S> {
    pub values: Vec<S>,
}

impl<S: Real> ObservationVector<S> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.values
    }
}

/// Per-feature affine normalization `(raw - offset) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationNormalizer<S> {
    pub offsets: Vec<S>,
    pub scales: Vec<S>,
}

impl<S: Real> ObservationNormalizer<S> {
    /// Position by the flight region's center and half-extent, attitude raw,
    /// velocity by [`VELOCITY_SCALE`], obstacle parameters as the scene declares.
    pub fn for_scene(scene: &Scene<S>) -> Self {
        let center = scene.flight_region.center();
        let half = scene.flight_region.half_extent();
        let mut offsets = vec![center.x, center.y, center.z];
        let mut scales = vec![half.x, half.y, half.z];
        offsets.extend([S::zero(); 9]);
        scales.extend([S::one(); 9]);
        offsets.extend([S::zero(); 3]);
        scales.extend([S::lit(VELOCITY_SCALE); 3]);
        for (o, s) in scene.obstacle_feature_normalization() {
            offsets.push(o);
            scales.push(s);
        }
        Self { offsets, scales }
    }

    pub fn normalize(&self, raw: &[S]) -> Vec<S> {
        raw.iter()
            .zip(self.offsets.iter().zip(&self.scales))
            .map(|(&r, (&o, &s))| (r - o) / s)
            .collect()
    }

    pub fn denormalize(&self, normalized: &[S]) -> Vec<S> {
        normalized
            .iter()
            .zip(self.offsets.iter().zip(&self.scales))
            .map(|(&n, (&o, &s))| n * s + o)
            .collect()
    }
}

/// Unnormalized features: position, attitude row-major, velocity, obstacle parameters.
pub fn raw_features<S: Real>(state: &QuadState<S>, scene: &Scene<S>) -> Vec<S> {
    let mut out = Vec::with_capacity(QUAD_FEATURES + scene.obstacle_feature_len());
    out.extend(state.position.to_array());
    out.extend(state.attitude.to_row_major());
    out.extend(state.linear_velocity.to_array());
    out.extend(scene.obstacle_features());
    out
}

pub fn observe<S: Real>(state: &QuadState<S>, scene: &Scene<S>) -> Result<ObservationVector<S>> {
    if !state.is_finite() {
        return Err(Error::domain("cannot observe a non-finite state"));
    }
    let raw = raw_features(state, scene);
    let values = ObservationNormalizer::for_scene(scene).normalize(&raw);
    Ok(ObservationVector { values })
}
