//! Run configuration: a flat text file of dotted keys (`learner.gamma = 0.99`).
//!
//! Every section has defaults, so an empty file is a complete configuration.
//! Unknown keys are rejected with the offending line number.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::curiosity::CuriosityConfig;
use crate::env::ActionBounds;
use crate::error::{Error, Result};
use crate::exploration::ExplorationConfig;
use crate::geometry::EllipsoidModel;
use crate::reward::RewardConfig;
use crate::scalar::Real;
use crate::scenes::SceneSpec;
use crate::sim::QuadParams;
use crate::td3::{LearnerConfig, NetworkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EllipsoidConfig {
    pub radius_l: f64,
    pub height_h: f64,
    pub sample_count: usize,
}

impl Default for EllipsoidConfig {
    fn default() -> Self {
        Self {
            radius_l: 0.28,
            height_h: 0.08,
            sample_count: 2048,
        }
    }
}

impl EllipsoidConfig {
    pub fn build<S: Real>(&self) -> Result<EllipsoidModel<S>> {
        EllipsoidModel::new(S::lit(self.radius_l), S::lit(self.height_h), self.sample_count)
            .map_err(|e| Error::config(format!("ellipsoid: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingBudget {
    pub episodes: usize,
    /// Optional wall-clock cap; training stops at whichever limit comes first.
    pub max_wall_minutes: Option<f64>,
    /// Episodes between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Window of the moving average in the learning-curve file.
    pub smoothing_window: usize,
}

impl Default for TrainingBudget {
    fn default() -> Self {
        Self {
            episodes: 2000,
            max_wall_minutes: None,
            checkpoint_every: 500,
            smoothing_window: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scene: SceneSpec,
    pub quad: QuadParams<f64>,
    pub action: ActionBounds,
    pub ellipsoid: EllipsoidConfig,
    pub reward: RewardConfig,
    pub curiosity: CuriosityConfig,
    pub exploration: ExplorationConfig,
    pub learner: LearnerConfig,
    pub network: NetworkConfig,
    pub training: TrainingBudget,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            scene: SceneSpec::default(),
            quad: QuadParams::default(),
            action: ActionBounds::default(),
            ellipsoid: EllipsoidConfig::default(),
            reward: RewardConfig::default(),
            curiosity: CuriosityConfig::default(),
            exploration: ExplorationConfig::default(),
            learner: LearnerConfig::default(),
            network: NetworkConfig::default(),
            training: TrainingBudget::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let wrap = |section: &str, r: Result<()>| {
            r.map_err(|e| match e {
                Error::Config(m) => Error::Config(m),
                other => Error::config(format!("{section}: {other}")),
            })
        };
        wrap("scene", self.scene.validate())?;
        wrap("quad", self.quad.validate())?;
        wrap("action", self.action.validate())?;
        self.ellipsoid.build::<f64>()?;
        wrap("reward", self.reward.validate())?;
        wrap("curiosity", self.curiosity.validate())?;
        wrap("exploration", self.exploration.validate())?;
        wrap("learner", self.learner.validate())?;
        let nets = [&self.network.actor_hidden, &self.network.critic_hidden];
        if nets.iter().any(|h| h.is_empty() || h.contains(&0)) {
            return Err(Error::config("network hidden layers must be non-empty with positive widths"));
        }
        if !(self.network.actor_final_scale.is_finite() && self.network.actor_final_scale > 0.0) {
            return Err(Error::config("network.actor_final_scale must be positive"));
        }
        if self.training.smoothing_window == 0 {
            return Err(Error::config("training.smoothing_window must be positive"));
        }
        if let Some(m) = self.training.max_wall_minutes {
            if !(m.is_finite() && m >= 0.0) {
                return Err(Error::config("training.max_wall_minutes must be >= 0"));
            }
        }
        Ok(())
    }

    /// Parses and validates configuration text; `origin` names the source in errors.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = parse_flat(text, origin)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Flat `section.key = value` lines, one per leaf, in declaration order.
    pub fn to_flat_string(&self) -> String {
        to_flat_string(self)
    }
}

/// Deserializes any dotted-key document, mapping syntax and schema errors to line numbers.
pub fn parse_flat<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::Parse {
            path: origin.to_path_buf(),
            line,
            message: e.message().to_string(),
        }
    })
}

/// Serializes a value as flat dotted-key lines.
pub fn to_flat_string<T: Serialize>(value: &T) -> String {
    let v = toml::Value::try_from(value).expect("configuration types serialize to tables");
    let mut out = String::new();
    flatten(&mut out, "", &v);
    out
}

fn flatten(out: &mut String, prefix: &str, v: &toml::Value) {
    match v {
        toml::Value::Table(t) => {
            for (k, child) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(out, &key, child);
            }
        }
        other => {
            let _ = writeln!(out, "{prefix} = {other}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_default() {
        let c = RunConfig::parse("", Path::new("x.toml")).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn dotted_keys_override() {
        let c = RunConfig::parse(
            "learner.gamma = 0.95\nexploration.strategy = \"spe\"\nreward.lambda_c = 0.0\n",
            Path::new("x.toml"),
        )
        .unwrap();
        assert_eq!(c.learner.gamma, 0.95);
        assert_eq!(c.reward.lambda_c, 0.0);
    }

    #[test]
    fn unknown_key_reports_line() {
        let e = RunConfig::parse("seed = 1\nlearner.gamma = 0.9\nlearner.gama = 0.9\n", Path::new("c.toml"))
            .unwrap_err();
        match e {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3, "{message}");
                assert!(message.contains("gama"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::parse("learner.gamma = 1.5", Path::new("x")).is_err());
        assert!(RunConfig::parse("quad.control_dt = 0.2", Path::new("x")).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let mut c = RunConfig::default();
        c.seed = 9;
        c.training.max_wall_minutes = Some(3.5);
        c.exploration.branch_noise_std = vec![0.5, 0.4, 0.3, 0.2];
        let text = c.to_flat_string();
        assert!(text.contains("learner.gamma = 0.99"));
        assert!(text.lines().all(|l| !l.starts_with('[')));
        assert_eq!(RunConfig::parse(&text, Path::new("rt")).unwrap(), c);
    }
}
