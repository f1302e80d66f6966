//! Curiosity-driven TD3 training for aggressive quadrotor flight through
//! tilted windows, slalom gates, and cluttered scenes.

pub mod checkpoint;
pub mod config;
pub mod curiosity;
pub mod env;
pub mod error;
pub mod exploration;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod nn;
pub mod reward;
pub mod scalar;
pub mod scenes;
pub mod sim;
pub mod td3;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Vec3f = linalg::Vec3<f32>;
pub type Vec3d = linalg::Vec3<f64>;
pub type Mat3f = linalg::Mat3<f32>;
pub type Mat3d = linalg::Mat3<f64>;
pub type QuadStatef = sim::QuadState<f32>;
pub type QuadStated = sim::QuadState<f64>;
pub type Scenef = scenes::Scene<f32>;
pub type Scened = scenes::Scene<f64>;
