//! Run management behind the command-line front end: training with logs and
//! checkpoints, robustness evaluation, trajectory replay, and the DTW audit.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{parse_flat, to_flat_string, RunConfig};
use crate::curiosity::{
    dtw_distance, dtw_distance_enumerated, Channel, EpisodeMemory, StateChannelSeries,
};
use crate::env::{ActionBounds, Environment, QuadEnv, ACTION_DIM};
use crate::error::{Error, Result};
use crate::exploration::{attitude_noise, Policy};
use crate::geometry::EllipsoidModel;
use crate::scalar::Real;
use crate::scenes::{SceneSpec, TerminationCause};
use crate::sim::QuadParams;
use crate::td3::{train_episode, EpisodeStats, LearnerBundle, ReplayBuffer, TrainingState};

/// Scalar type used by the harness for training and evaluation.
pub type Scalar = f32;

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const CURVE_CSV: &str = "learning_curve.csv";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const CONFIG_COPY: &str = "config.toml";

/// Independent seed for a named stream of a master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

mod stream {
    pub const NETWORK: u64 = 1;
    pub const REPLAY: u64 = 2;
    pub const ROLLOUT: u64 = 3;
    pub const SCENE: u64 = 4;
    pub const SMOOTHING: u64 = 5;
}

pub fn quad_params<S: Real>(p: &QuadParams<f64>) -> QuadParams<S> {
    QuadParams {
        mass: S::lit(p.mass),
        inertia_diag: p.inertia_diag.cast(),
        thrust_max: S::lit(p.thrust_max),
        attitude_time_constant: S::lit(p.attitude_time_constant),
        control_dt: S::lit(p.control_dt),
        gravity: S::lit(p.gravity),
    }
}

/// Environment for the first scene of a spec, as configured.
pub fn make_env<S: Real>(
    cfg: &RunConfig,
    spec: &SceneSpec,
    scene_rng: &mut ChaCha8Rng,
) -> Result<(QuadEnv<S>, EllipsoidModel<S>)> {
    let ellipsoid = cfg.ellipsoid.build::<S>()?;
    let scene = spec.build(scene_rng, &ellipsoid)?;
    Ok((
        QuadEnv::new(
            scene,
            quad_params(&cfg.quad),
            cfg.action,
            ellipsoid.clone(),
            &cfg.reward,
        ),
        ellipsoid,
    ))
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    #[serde(flatten)]
    pub stats: EpisodeStats,
    pub smoothed_return: f64,
    /// Wall-clock seconds since the start of training; the only nondeterministic field.
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub bundle: LearnerBundle<Scalar>,
    pub records: Vec<LogRecord>,
}

impl TrainResult {
    /// Mean smoothed return over the first and last `fraction` of episodes.
    pub fn head_tail_smoothed(&self, fraction: f64) -> Option<(f64, f64)> {
        let n = self.records.len();
        let k = ((n as f64 * fraction).round() as usize).max(1);
        if n < 2 * k {
            return None;
        }
        let mean = |r: &[LogRecord]| r.iter().map(|x| x.smoothed_return).sum::<f64>() / r.len() as f64;
        Some((mean(&self.records[..k]), mean(&self.records[n - k..])))
    }
}

struct Sinks {
    log: BufWriter<File>,
    curve: BufWriter<File>,
    dir: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

impl Sinks {
    fn open(dir: &Path, cfg: &RunConfig) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join(CONFIG_COPY);
        fs::write(&cfg_path, cfg.to_flat_string()).map_err(|e| Error::io(&cfg_path, e))?;
        let mut curve = create(&dir.join(CURVE_CSV))?;
        writeln!(curve, "wall_minutes,episode,smoothed_reward").map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            log: create(&dir.join(TRAIN_LOG))?,
            curve,
            dir: dir.to_path_buf(),
        })
    }

    fn write(&mut self, r: &LogRecord) -> Result<()> {
        let line = serde_json::to_string(r).expect("log records serialize");
        writeln!(self.log, "{line}").map_err(|e| Error::io(&self.dir, e))?;
        writeln!(
            self.curve,
            "{:.6},{},{}",
            r.wall_seconds / 60.0,
            r.stats.episode,
            r.smoothed_return
        )
        .map_err(|e| Error::io(&self.dir, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.log.flush().map_err(|e| Error::io(&self.dir, e))?;
        self.curve.flush().map_err(|e| Error::io(&self.dir, e))
    }
}

/// Trains per the configuration. With `out_dir`, writes the log, learning
/// curve, configuration copy and checkpoints there.
pub fn train(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<TrainResult> {
    cfg.validate()?;
    let master = cfg.seed;
    let mut scene_rng = ChaCha8Rng::seed_from_u64(derive_seed(master, stream::SCENE));
    let (mut env, ellipsoid) = make_env::<Scalar>(cfg, &cfg.scene, &mut scene_rng)?;
    let mut bundle = LearnerBundle::<Scalar>::new(
        env.observation_dim(),
        &cfg.network,
        cfg.learner.clone(),
        derive_seed(master, stream::NETWORK),
    )?;
    bundle.reseed(derive_seed(master, stream::SMOOTHING));
    let mut state = TrainingState {
        buffer: ReplayBuffer::new(cfg.learner.buffer_capacity, derive_seed(master, stream::REPLAY))?,
        memory: EpisodeMemory::new(cfg.curiosity.memory_capacity),
        rng: ChaCha8Rng::seed_from_u64(derive_seed(master ^ cfg.exploration.seed, stream::ROLLOUT)),
        episodes: 0,
    };
    let mut sinks = match out_dir {
        Some(d) => Some(Sinks::open(d, cfg)?),
        None => None,
    };
    let ckpt = out_dir.map(|d| d.join(CHECKPOINT));
    if let Some(p) = &ckpt {
        checkpoint::save(&bundle, p)?;
    }

    let start = Instant::now();
    let window = cfg.training.smoothing_window;
    let mut recent: std::collections::VecDeque<f64> = Default::default();
    let mut records = Vec::with_capacity(cfg.training.episodes);
    for episode in 0..cfg.training.episodes {
        if let Some(limit) = cfg.training.max_wall_minutes {
            if start.elapsed().as_secs_f64() / 60.0 >= limit {
                break;
            }
        }
        if episode > 0 && cfg.scene.randomize {
            env.set_scene(cfg.scene.build(&mut scene_rng, &ellipsoid)?, &cfg.reward);
        }
        let stats = train_episode(
            &mut bundle,
            &mut env,
            &mut state,
            &cfg.exploration,
            &cfg.curiosity,
            cfg.reward.lambda_c,
        )?;
        recent.push_back(stats.extrinsic_return);
        if recent.len() > window {
            recent.pop_front();
        }
        let record = LogRecord {
            smoothed_return: recent.iter().sum::<f64>() / recent.len() as f64,
            wall_seconds: start.elapsed().as_secs_f64(),
            stats,
        };
        if let Some(s) = sinks.as_mut() {
            s.write(&record)?;
        }
        records.push(record);
        let every = cfg.training.checkpoint_every;
        if let Some(p) = &ckpt {
            if every > 0 && (episode + 1) % every == 0 {
                sinks.as_mut().map(Sinks::flush).transpose()?;
                checkpoint::save(&bundle, p)?;
            }
        }
    }
    if let Some(s) = sinks.as_mut() {
        s.flush()?;
    }
    if let Some(p) = &ckpt {
        checkpoint::save(&bundle, p)?;
    }
    Ok(TrainResult { bundle, records })
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainResult> {
    train(cfg, Some(&cfg.output_dir))
}

/// Log text with the wall-clock fields removed, for reproducibility checks.
pub fn strip_wall_clock(log: &str) -> Result<String> {
    let mut out = String::new();
    for (i, line) in log.lines().enumerate() {
        let mut v: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| Error::domain(format!("log line {}: {e}", i + 1)))?;
        if let Some(o) = v.as_object_mut() {
            o.remove("wall_seconds");
        }
        out.push_str(&v.to_string());
        out.push('\n');
    }
    Ok(out)
}

/// Outcome of one evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisode {
    pub noise_deg: f64,
    pub trial: usize,
    pub termination: String,
    pub steps: usize,
    pub reward: f64,
    /// Distance from the goal at termination.
    pub position_error: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub noise_deg: f64,
    /// Mean terminal goal distance over successful episodes; `None` without successes.
    pub position_error: Option<f64>,
    pub average_reward: f64,
    pub success_rate: f64,
    pub episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trials: usize,
    pub seed: u64,
    pub rows: Vec<EvalRow>,
    pub episode_log: Option<PathBuf>,
}

/// Aggregates episodes of one noise level into a report row.
pub fn aggregate(noise_deg: f64, episodes: &[EvalEpisode]) -> Option<EvalRow> {
    if episodes.is_empty() {
        return None;
    }
    let n = episodes.len() as f64;
    let successes: Vec<&EvalEpisode> = episodes.iter().filter(|e| e.success).collect();
    Some(EvalRow {
        noise_deg,
        position_error: (!successes.is_empty()).then(|| {
            successes.iter().map(|e| e.position_error).sum::<f64>() / successes.len() as f64
        }),
        average_reward: episodes.iter().map(|e| e.reward).sum::<f64>() / n,
        success_rate: successes.len() as f64 / n,
        episodes: episodes.len(),
    })
}

/// Runs the deterministic policy with per-step attitude noise on `trials`
/// scenes per noise level. Scene draws depend only on the trial index, so
/// every noise level sees the same scenes.
pub fn evaluate<S: Real, P: Policy<S>>(
    policy: &P,
    obs_dim: usize,
    cfg: &RunConfig,
    spec: &SceneSpec,
    noise_levels: &[f64],
    trials: usize,
    seed: u64,
) -> Result<(Vec<EvalRow>, Vec<EvalEpisode>)> {
    if noise_levels.iter().any(|n| !(n.is_finite() && *n >= 0.0)) {
        return Err(Error::domain("noise levels must be finite and >= 0"));
    }
    spec.validate()?;
    let ellipsoid = cfg.ellipsoid.build::<S>()?;
    let bounds: ActionBounds = cfg.action;
    let mut rows = Vec::new();
    let mut log = Vec::new();
    for (level, &noise) in noise_levels.iter().enumerate() {
        let mut episodes = Vec::with_capacity(trials);
        for trial in 0..trials {
            let mut scene_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, trial as u64));
            let scene = spec.build::<S, _>(&mut scene_rng, &ellipsoid)?;
            let mut env = QuadEnv::new(scene, quad_params(&cfg.quad), bounds, ellipsoid.clone(), &cfg.reward);
            if env.observation_dim() != obs_dim {
                return Err(Error::domain(format!(
                    "policy expects {obs_dim} observation features, scene provides {}",
                    env.observation_dim()
                )));
            }
            let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                seed ^ 0x9e37_79b9_7f4a_7c15,
                ((level as u64) << 32) | trial as u64,
            ));
            let mut reward = S::zero();
            let (cause, steps) = loop {
                let a = policy.act(&env.observation())?;
                let a = attitude_noise(&a, noise, &bounds, &mut noise_rng);
                let out = env.step(&a)?;
                reward += out.reward;
                if let Some(t) = out.termination {
                    break (t.cause, t.step);
                }
            };
            let pos = env.state().position;
            let error = (pos - env.scene().goal_position).norm().to_f64_lossy();
            episodes.push(EvalEpisode {
                noise_deg: noise,
                trial,
                termination: cause.as_str().to_string(),
                steps,
                reward: reward.to_f64_lossy(),
                position_error: error,
                success: cause == TerminationCause::GoalReached,
            });
        }
        rows.extend(aggregate(noise, &episodes));
        log.extend(episodes);
    }
    Ok((rows, log))
}

fn load_scene_spec(path: Option<&Path>, cfg: &RunConfig) -> Result<SceneSpec> {
    match path {
        None => Ok(cfg.scene.clone()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let spec: SceneSpec = parse_flat(&text, p)?;
            spec.validate()?;
            Ok(spec)
        }
    }
}

/// Serializes a scene block in the scene-file format read by `eval` and `replay`.
pub fn scene_file_text(spec: &SceneSpec) -> String {
    to_flat_string(spec)
}

pub fn load_policy(path: &Path, cfg: &RunConfig) -> Result<LearnerBundle<Scalar>> {
    checkpoint::load(path, cfg.learner.clone(), cfg.seed)
}

/// Evaluates a checkpoint and writes `eval_report.csv`, `eval_report.json` and
/// `eval_episodes.jsonl` to `out_dir`.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    scene_path: Option<&Path>,
    noise_levels: &[f64],
    trials: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<EvalReport> {
    let spec = load_scene_spec(scene_path, cfg)?;
    let bundle = load_policy(checkpoint_path, cfg)?;
    let (rows, episodes) = evaluate(
        &bundle.policy(),
        bundle.obs_dim(),
        cfg,
        &spec,
        noise_levels,
        trials,
        seed,
    )?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("eval_episodes.jsonl");
    let mut log = create(&log_path)?;
    for e in &episodes {
        writeln!(log, "{}", serde_json::to_string(e).expect("serializable"))
            .map_err(|e| Error::io(&log_path, e))?;
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;

    let csv_path = out_dir.join("eval_report.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
    w.write_record(["noise_deg", "position_error_m", "average_reward", "success_rate", "episodes"])
        .map_err(|e| csv_error(&csv_path, e))?;
    for r in &rows {
        w.write_record([
            r.noise_deg.to_string(),
            r.position_error.map_or(String::new(), |v| v.to_string()),
            r.average_reward.to_string(),
            r.success_rate.to_string(),
            r.episodes.to_string(),
        ])
        .map_err(|e| csv_error(&csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let report = EvalReport {
        trials,
        seed,
        rows,
        episode_log: Some(log_path),
    };
    let json_path = out_dir.join("eval_report.json");
    fs::write(&json_path, serde_json::to_string_pretty(&report).expect("serializable"))
        .map_err(|e| Error::io(&json_path, e))?;
    Ok(report)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

pub const TRAJECTORY_COLUMNS: [&str; 24] = [
    "time", "x", "y", "z", "r11", "r12", "r13", "r21", "r22", "r23", "r31", "r32", "r33", "vx",
    "vy", "vz", "u_roll", "u_pitch", "u_yaw", "u_thrust", "reward", "event", "step", "noise_deg",
];

/// Rolls out one episode and writes the per-step trajectory CSV to `out`.
#[allow(clippy::too_many_arguments)]
pub fn replay<S: Real, P: Policy<S>>(
    policy: &P,
    obs_dim: usize,
    cfg: &RunConfig,
    spec: &SceneSpec,
    noise_deg: f64,
    seed: u64,
    out: &Path,
) -> Result<TerminationCause> {
    let ellipsoid = cfg.ellipsoid.build::<S>()?;
    let mut scene_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let scene = spec.build::<S, _>(&mut scene_rng, &ellipsoid)?;
    let mut env = QuadEnv::new(scene, quad_params(&cfg.quad), cfg.action, ellipsoid, &cfg.reward);
    if env.observation_dim() != obs_dim {
        return Err(Error::domain(format!(
            "policy expects {obs_dim} observation features, scene provides {}",
            env.observation_dim()
        )));
    }
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let dt = cfg.quad.control_dt;
    let mut w = csv::Writer::from_path(out).map_err(|e| csv_error(out, e))?;
    w.write_record(TRAJECTORY_COLUMNS).map_err(|e| csv_error(out, e))?;
    let row = |w: &mut csv::Writer<File>, step: usize, st: &crate::sim::QuadState<S>, a: [S; ACTION_DIM], r: S, event: &str| {
        let mut rec: Vec<String> = vec![format!("{}", step as f64 * dt)];
        rec.extend(st.position.to_array().iter().map(|v| v.to_string()));
        rec.extend(st.attitude.to_row_major().iter().map(|v| v.to_string()));
        rec.extend(st.linear_velocity.to_array().iter().map(|v| v.to_string()));
        rec.extend(a.iter().map(|v| v.to_string()));
        rec.push(r.to_string());
        rec.push(event.to_string());
        rec.push(step.to_string());
        rec.push(noise_deg.to_string());
        w.write_record(&rec).map_err(|e| csv_error(out, e))
    };
    row(&mut w, 0, &env.state(), [S::zero(); ACTION_DIM], S::zero(), "start")?;
    let cause = loop {
        let a = policy.act(&env.observation())?;
        let a = attitude_noise(&a, noise_deg, &cfg.action, &mut noise_rng);
        let o = env.step(&a)?;
        let event = o.termination.map_or("none", |t| t.cause.as_str());
        row(&mut w, env.steps_taken(), &o.state, a, o.reward, event)?;
        if let Some(t) = o.termination {
            break t.cause;
        }
    };
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(cause)
}

pub fn cmd_replay(
    cfg: &RunConfig,
    checkpoint_path: &Path,
    scene_path: Option<&Path>,
    noise_deg: f64,
    seed: u64,
    out: &Path,
) -> Result<TerminationCause> {
    let spec = load_scene_spec(scene_path, cfg)?;
    let bundle = load_policy(checkpoint_path, cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    replay(&bundle.policy(), bundle.obs_dim(), cfg, &spec, noise_deg, seed, out)
}

/// Longest series for which the exhaustive path enumeration is run.
pub const BRUTE_FORCE_MAX_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DtwOracleReport {
    pub dp: f64,
    /// `None` when either series is longer than [`BRUTE_FORCE_MAX_LEN`].
    pub brute_force: Option<f64>,
    pub abs_difference: Option<f64>,
}

impl std::fmt::Display for DtwOracleReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "dp          {}", self.dp)?;
        match (self.brute_force, self.abs_difference) {
            (Some(b), Some(d)) => {
                writeln!(f, "brute_force {b}")?;
                write!(f, "abs_diff    {d}")
            }
            _ => {
                writeln!(f, "brute_force skipped (length > {BRUTE_FORCE_MAX_LEN})")?;
                write!(f, "abs_diff    skipped")
            }
        }
    }
}

/// Reads a series: one sample per line, comma-separated. One to three columns
/// are zero-padded to a position series; nine columns form an attitude series.
/// Lines starting with `#` are comments.
pub fn read_series(path: &Path) -> Result<StateChannelSeries<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let vals = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(format!("not a finite number: {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match width {
            None => {
                if !matches!(vals.len(), 1..=3 | 9) {
                    return Err(parse_err(format!(
                        "expected 1-3 or 9 columns, found {}",
                        vals.len()
                    )));
                }
                width = Some(vals.len());
            }
            Some(w) if w != vals.len() => {
                return Err(parse_err(format!("expected {w} columns, found {}", vals.len())));
            }
            _ => {}
        }
        rows.push(vals);
    }
    let Some(w) = width else {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "no samples".into(),
        });
    };
    let (channel, dim) = if w == 9 {
        (Channel::Attitude, 9)
    } else {
        (Channel::Position, 3)
    };
    let data = rows
        .into_iter()
        .flat_map(|mut r| {
            r.resize(dim, 0.0);
            r
        })
        .collect();
    StateChannelSeries::new(channel, data)
}

pub fn dtw_oracle(a: &StateChannelSeries<f64>, b: &StateChannelSeries<f64>) -> Result<DtwOracleReport> {
    let dp = dtw_distance(a, b)?;
    let brute = (a.len() <= BRUTE_FORCE_MAX_LEN && b.len() <= BRUTE_FORCE_MAX_LEN)
        .then(|| dtw_distance_enumerated(a, b))
        .transpose()?;
    Ok(DtwOracleReport {
        dp,
        brute_force: brute,
        abs_difference: brute.map(|v| (v - dp).abs()),
    })
}

pub fn cmd_dtw_oracle(a: &Path, b: &Path) -> Result<DtwOracleReport> {
    dtw_oracle(&read_series(a)?, &read_series(b)?)
}
