//! Benchmark scenes: narrow window, slalom path, and random unstructured obstacles.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{body_overlap, EllipsoidModel, ObstaclePrimitive};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;
use crate::sim::QuadState;

/// Obstacle slots in the unstructured-scene observation encoding.
pub const MAX_UNSTRUCTURED_OBSTACLES: usize = 6;
const UNSTRUCTURED_SLOT_FEATURES: usize = 7;

/// Window panel half thickness and in-plane half size, m.
const PANEL_HALF_THICKNESS: f64 = 0.05;
const PANEL_HALF_SIZE: f64 = 3.5;
const WINDOW_X: f64 = 1.5;
const WINDOW_GOAL_BEHIND: f64 = 0.7;

const SLALOM_MID_X: f64 = 1.75;
const COLUMN_RADIUS: f64 = 0.2;
const SLALOM_GOAL_BEHIND: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    NarrowWindow,
    SlalomPath,
    Unstructured,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlightRegion<S> {
    pub min: Vec3<S>,
    pub max: Vec3<S>,
}

impl<S: Real> FlightRegion<S> {
    pub fn center(&self) -> Vec3<S> {
        (self.min + self.max).scale(S::lit(0.5))
    }

    pub fn half_extent(&self) -> Vec3<S> {
        (self.max - self.min).scale(S::lit(0.5))
    }

    pub fn contains(&self, p: Vec3<S>) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }
}

/// The randomized parameters a scene was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ObstacleParams<S> {
    Window {
        angle: S,
        lateral_distance: S,
    },
    Slalom {
        separation: S,
        lateral_offsets: [S; 2],
    },
    Unstructured {
        seed: u64,
        obstacle_count: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene<S> {
    pub kind: SceneKind,
    pub obstacles: Vec<ObstaclePrimitive<S>>,
    pub start_position: Vec3<S>,
    pub goal_position: Vec3<S>,
    pub goal_attitude: Mat3<S>,
    pub goal_radius: S,
    pub flight_region: FlightRegion<S>,
    pub obstacle_params: ObstacleParams<S>,
    pub max_episode_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    GoalReached,
    Collision,
    OutOfRegion,
    StepLimit,
}

impl TerminationCause {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::GoalReached => "goal_reached",
            Self::Collision => "collision",
            Self::OutOfRegion => "out_of_region",
            Self::StepLimit => "step_limit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminationEvent {
    pub cause: TerminationCause,
    pub step: usize,
}

/// Which side (sign of `y - column_y`) each slalom column was passed on, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GateProgress {
    pub sides: [Option<i8>; 2],
}

impl GateProgress {
    /// Records half-plane crossings of the column planes between two positions.
    pub fn update<S: Real>(&mut self, scene: &Scene<S>, from: Vec3<S>, to: Vec3<S>) {
        let Some(columns) = scene.slalom_columns() else {
            return;
        };
        for (i, c) in columns.iter().enumerate() {
            if self.sides[i].is_some() || (i == 1 && self.sides[0].is_none()) {
                continue;
            }
            if from.x < c.x && to.x >= c.x {
                let t = (c.x - from.x) / (to.x - from.x);
                let y = from.y + (to.y - from.y) * t;
                self.sides[i] = Some(if y >= c.y { 1 } else { -1 });
            }
        }
    }

    /// Both columns passed, on opposite sides.
    pub fn satisfied(&self) -> bool {
        matches!(self.sides, [Some(a), Some(b)] if a != b)
    }
}

impl<S: Real> Scene<S> {
    pub fn validate(&self) -> Result<()> {
        let r = &self.flight_region;
        if !r.contains(self.goal_position) {
            return Err(Error::domain("goal outside flight region"));
        }
        if !r.contains(self.start_position) {
            return Err(Error::domain("start outside flight region"));
        }
        for o in &self.obstacles {
            o.validate()?;
            if !r.contains(o.center()) {
                return Err(Error::domain(format!(
                    "obstacle center outside flight region: {o:?}"
                )));
            }
        }
        if self.max_episode_steps == 0 {
            return Err(Error::domain("max_episode_steps must be positive"));
        }
        Ok(())
    }

    /// Column centers `(x, y)` of a slalom scene, in traversal order.
    pub fn slalom_columns(&self) -> Option<[Vec3<S>; 2]> {
        if self.kind != SceneKind::SlalomPath {
            return None;
        }
        match (self.obstacles.first(), self.obstacles.get(1)) {
            (
                Some(ObstaclePrimitive::Cylinder { center: a, .. }),
                Some(ObstaclePrimitive::Cylinder { center: b, .. }),
            ) => Some([*a, *b]),
            _ => None,
        }
    }

    pub fn obstacle_feature_len(&self) -> usize {
        obstacle_feature_len(self.kind)
    }

    /// Raw obstacle parameters seen by the policy; fixed length per scene kind.
    pub fn obstacle_features(&self) -> Vec<S> {
        match self.obstacle_params {
            ObstacleParams::Window {
                angle,
                lateral_distance,
            } => vec![angle, lateral_distance],
            ObstacleParams::Slalom { .. } => {
                let cols = self.slalom_columns().expect("slalom scene has two columns");
                vec![cols[0].x, cols[0].y, cols[1].x, cols[1].y]
            }
            ObstacleParams::Unstructured { .. } => {
                let mut out = self.goal_position.to_array().to_vec();
                let z = S::zero();
                for slot in 0..MAX_UNSTRUCTURED_OBSTACLES {
                    let feats = match self.obstacles.get(slot) {
                        Some(ObstaclePrimitive::Box {
                            center,
                            half_extents: e,
                        }) => [S::one(), center.x, center.y, center.z, e.x, e.y, e.z],
                        Some(ObstaclePrimitive::Cylinder {
                            center,
                            radius,
                            height,
                        }) => [
                            -S::one(),
                            center.x,
                            center.y,
                            center.z,
                            *radius,
                            *radius,
                            *height * S::lit(0.5),
                        ],
                        _ => {
                            let c = self.flight_region.center();
                            [z, c.x, c.y, c.z, z, z, z]
                        }
                    };
                    out.extend(feats);
                }
                out
            }
        }
    }

    /// `(offset, scale)` per obstacle feature.
    pub fn obstacle_feature_normalization(&self) -> Vec<(S, S)> {
        let c = self.flight_region.center();
        let h = self.flight_region.half_extent();
        let one = S::one();
        match self.kind {
            SceneKind::NarrowWindow => vec![(S::zero(), one), (S::zero(), one)],
            SceneKind::SlalomPath => vec![(c.x, h.x), (c.y, h.y), (c.x, h.x), (c.y, h.y)],
            SceneKind::Unstructured => {
                let mut out = vec![(c.x, h.x), (c.y, h.y), (c.z, h.z)];
                for _ in 0..MAX_UNSTRUCTURED_OBSTACLES {
                    out.push((S::zero(), one));
                    out.extend([(c.x, h.x), (c.y, h.y), (c.z, h.z)]);
                    out.extend([(S::zero(), S::lit(0.5)); 3]);
                }
                out
            }
        }
    }

    pub fn start_state(&self) -> QuadState<S> {
        QuadState::at_rest(self.start_position)
    }
}

pub fn obstacle_feature_len(kind: SceneKind) -> usize {
    match kind {
        SceneKind::NarrowWindow => 2,
        SceneKind::SlalomPath => 4,
        SceneKind::Unstructured => 3 + MAX_UNSTRUCTURED_OBSTACLES * UNSTRUCTURED_SLOT_FEATURES,
    }
}

/// Evaluates the episode-ending conditions after a step.
///
/// Priority when several hold: collision, out of region, goal reached, step limit.
pub fn check_termination<S: Real>(
    state: &QuadState<S>,
    scene: &Scene<S>,
    step: usize,
    ellipsoid: &EllipsoidModel<S>,
    gates: &GateProgress,
) -> Option<TerminationEvent> {
    let cause = if body_overlap(ellipsoid, state.position, &state.attitude, &scene.obstacles)
        > S::zero()
    {
        Some(TerminationCause::Collision)
    } else if !scene.flight_region.contains(state.position) {
        Some(TerminationCause::OutOfRegion)
    } else if (state.position - scene.goal_position).norm() <= scene.goal_radius
        && (scene.kind != SceneKind::SlalomPath || gates.satisfied())
    {
        Some(TerminationCause::GoalReached)
    } else if step >= scene.max_episode_steps {
        Some(TerminationCause::StepLimit)
    } else {
        None
    };
    cause.map(|cause| TerminationEvent { cause, step })
}

/// Scene block of the run configuration: which scene to build and how to randomize it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub kind: SceneKind,
    /// Draw parameters from the ranges per episode instead of using the fixed values.
    pub randomize: bool,
    pub window_angle: f64,
    pub window_distance: f64,
    pub angle_min: f64,
    pub angle_max: f64,
    pub distance_min: f64,
    pub distance_max: f64,
    pub gap_width: f64,
    pub gap_height: f64,
    pub column_separation: f64,
    pub column_offset_max: f64,
    pub obstacle_count_min: usize,
    pub obstacle_count_max: usize,
    /// Generator seed for a fixed unstructured scene; randomized scenes draw their own.
    pub seed: u64,
    pub goal_radius: f64,
    /// Distance of the window-scene goal behind the panel plane, m.
    pub goal_behind_window: f64,
    pub max_episode_steps: usize,
    pub max_generation_retries: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            kind: SceneKind::NarrowWindow,
            randomize: true,
            window_angle: 0.3,
            window_distance: 0.0,
            angle_min: 0.2,
            angle_max: 0.7,
            distance_min: -0.3,
            distance_max: 0.4,
            gap_width: 0.9,
            gap_height: 0.3,
            column_separation: 1.5,
            column_offset_max: 0.3,
            obstacle_count_min: 2,
            obstacle_count_max: 4,
            seed: 0,
            goal_radius: 0.15,
            goal_behind_window: 0.7,
            max_episode_steps: 250,
            max_generation_retries: 50,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.window_angle,
            self.window_distance,
            self.angle_min,
            self.angle_max,
            self.distance_min,
            self.distance_max,
            self.gap_width,
            self.gap_height,
            self.column_separation,
            self.column_offset_max,
            self.goal_radius,
            self.goal_behind_window,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("scene parameters must be finite"));
        }
        if self.angle_min > self.angle_max || self.distance_min > self.distance_max {
            return Err(Error::config("scene randomization ranges are inverted"));
        }
        if self.gap_width <= 0.0 || self.gap_height <= 0.0 || self.goal_radius <= 0.0 {
            return Err(Error::config("scene gap and goal radius must be positive"));
        }
        if !(self.goal_behind_window > PANEL_HALF_THICKNESS && WINDOW_X + self.goal_behind_window < 2.7) {
            return Err(Error::config(
                "scene.goal_behind_window must place the goal between the panel and the region edge",
            ));
        }
        if self.obstacle_count_min > self.obstacle_count_max
            || self.obstacle_count_max > MAX_UNSTRUCTURED_OBSTACLES
        {
            return Err(Error::config(format!(
                "obstacle count range must satisfy min <= max <= {MAX_UNSTRUCTURED_OBSTACLES}"
            )));
        }
        if self.max_episode_steps == 0 || self.max_generation_retries == 0 {
            return Err(Error::config(
                "scene.max_episode_steps and scene.max_generation_retries must be positive",
            ));
        }
        if !self.randomize {
            self.check_window_params(self.window_angle, self.window_distance)
                .map_err(|e| Error::config(e.to_string()))?;
        }
        Ok(())
    }

    fn check_window_params(&self, angle: f64, distance: f64) -> Result<()> {
        if self.kind != SceneKind::NarrowWindow {
            return Ok(());
        }
        if !(self.angle_min..=self.angle_max).contains(&angle) {
            return Err(Error::domain(format!(
                "window angle {angle} outside [{}, {}]",
                self.angle_min, self.angle_max
            )));
        }
        if !(self.distance_min..=self.distance_max).contains(&distance) {
            return Err(Error::domain(format!(
                "window distance {distance} outside [{}, {}]",
                self.distance_min, self.distance_max
            )));
        }
        Ok(())
    }

    /// Builds the scene for one episode; `rng` is used only when randomizing.
    pub fn build<S: Real, R: Rng>(
        &self,
        rng: &mut R,
        ellipsoid: &EllipsoidModel<S>,
    ) -> Result<Scene<S>> {
        match self.kind {
            SceneKind::NarrowWindow => {
                let (angle, distance) = if self.randomize {
                    (
                        rng.random_range(self.angle_min..=self.angle_max),
                        rng.random_range(self.distance_min..=self.distance_max),
                    )
                } else {
                    (self.window_angle, self.window_distance)
                };
                make_window_scene(S::lit(angle), S::lit(distance), self)
            }
            SceneKind::SlalomPath => {
                let offsets = if self.randomize {
                    let m = self.column_offset_max;
                    [rng.random_range(-m..=m), rng.random_range(-m..=m)]
                } else {
                    [0.0, 0.0]
                };
                make_slalom_scene(S::lit(self.column_separation), offsets, self)
            }
            SceneKind::Unstructured => {
                let seed = if self.randomize {
                    rng.random::<u64>()
                } else {
                    self.seed
                };
                let count = if self.randomize {
                    rng.random_range(self.obstacle_count_min..=self.obstacle_count_max)
                } else {
                    self.obstacle_count_max
                };
                make_unstructured_scene(seed, count, self, ellipsoid).map(|(s, _)| s)
            }
        }
    }
}

fn window_region<S: Real>() -> FlightRegion<S> {
    FlightRegion {
        min: Vec3::from_f64(-0.5, -1.5, -1.0),
        max: Vec3::from_f64(2.7, 1.5, 1.0),
    }
}

/// Window panel at x = 1.5 m whose gap is offset laterally by `lateral_distance`
/// and rotated in-plane by `angle`; the goal sits behind the gap with the matching roll.
pub fn make_window_scene<S: Real>(angle: S, lateral_distance: S, spec: &SceneSpec) -> Result<Scene<S>> {
    // Compare at the scene's precision so range endpoints survive the cast.
    let within = |v: S, lo: f64, hi: f64| v >= S::lit(lo) && v <= S::lit(hi);
    if !(within(angle, spec.angle_min, spec.angle_max)
        && within(lateral_distance, spec.distance_min, spec.distance_max))
    {
        spec.check_window_params(angle.to_f64_lossy(), lateral_distance.to_f64_lossy())?;
    }
    let center = Vec3::new(S::lit(WINDOW_X), lateral_distance, S::zero());
    let window = ObstaclePrimitive::Window {
        center,
        angle,
        panel_half_extents: Vec3::from_f64(PANEL_HALF_THICKNESS, PANEL_HALF_SIZE, PANEL_HALF_SIZE),
        gap_width: S::lit(spec.gap_width),
        gap_height: S::lit(spec.gap_height),
    };
    let scene = Scene {
        kind: SceneKind::NarrowWindow,
        obstacles: vec![window],
        start_position: Vec3::zeros(),
        goal_position: Vec3::new(S::lit(WINDOW_X + spec.goal_behind_window), lateral_distance, S::zero()),
        goal_attitude: Mat3::rot_x(angle),
        goal_radius: S::lit(spec.goal_radius),
        flight_region: window_region(),
        obstacle_params: ObstacleParams::Window {
            angle,
            lateral_distance,
        },
        max_episode_steps: spec.max_episode_steps,
    };
    scene.validate()?;
    Ok(scene)
}

/// Two vertical columns `separation` apart along the track, centered on the
/// midpoint, with lateral offsets; the goal lies beyond the second column.
pub fn make_slalom_scene<S: Real>(
    separation: S,
    lateral_offsets: [f64; 2],
    spec: &SceneSpec,
) -> Result<Scene<S>> {
    let radius = S::lit(COLUMN_RADIUS);
    if !(separation > radius * S::lit(2.0)) {
        return Err(Error::domain(format!(
            "column separation {separation} must exceed twice the column radius"
        )));
    }
    let half_sep = separation * S::lit(0.5);
    let mid = S::lit(SLALOM_MID_X);
    let goal_x = mid + half_sep + S::lit(SLALOM_GOAL_BEHIND);
    let region = FlightRegion {
        min: Vec3::from_f64(-0.5, -1.5, -1.0),
        max: Vec3::new(goal_x + S::lit(0.5), S::lit(1.5), S::one()),
    };
    let lateral_limit = region.max.y - radius;
    let offsets = lateral_offsets.map(S::lit);
    if offsets.iter().any(|o| o.abs() > lateral_limit) {
        return Err(Error::domain("column offset leaves the flight region"));
    }
    let height = region.max.z - region.min.z;
    let column = |x: S, y: S| ObstaclePrimitive::Cylinder {
        center: Vec3::new(x, y, S::zero()),
        radius,
        height,
    };
    let scene = Scene {
        kind: SceneKind::SlalomPath,
        obstacles: vec![
            column(mid - half_sep, offsets[0]),
            column(mid + half_sep, offsets[1]),
        ],
        start_position: Vec3::zeros(),
        goal_position: Vec3::new(goal_x, S::zero(), S::zero()),
        goal_attitude: Mat3::identity(),
        goal_radius: S::lit(spec.goal_radius),
        flight_region: region,
        obstacle_params: ObstacleParams::Slalom {
            separation,
            lateral_offsets: offsets,
        },
        max_episode_steps: spec.max_episode_steps,
    };
    scene.validate()?;
    Ok(scene)
}

/// Piecewise-linear path a generated scene certifies as collision free.
#[derive(Debug, Clone, PartialEq)]
pub struct Corridor<S> {
    pub waypoints: Vec<Vec3<S>>,
}

impl<S: Real> Corridor<S> {
    /// Points along the path at most `spacing` apart, endpoints included.
    pub fn samples(&self, spacing: S) -> Vec<Vec3<S>> {
        let mut out = Vec::new();
        for pair in self.waypoints.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let n = ((b - a).norm() / spacing).ceil().to_usize().unwrap_or(1).max(1);
            for k in 0..n {
                let t = S::from_usize_lossy(k) / S::from_usize_lossy(n);
                out.push(a + (b - a).scale(t));
            }
        }
        if let Some(&last) = self.waypoints.last() {
            out.push(last);
        }
        out
    }

    /// Sweeps a sphere of the body's lateral radius (which encloses the body at
    /// every attitude) along the path; true when no sample touches an obstacle.
    pub fn is_clear(&self, ellipsoid: &EllipsoidModel<S>, obstacles: &[ObstaclePrimitive<S>]) -> bool {
        let envelope = EllipsoidModel::new(
            ellipsoid.radius_l,
            ellipsoid.radius_l,
            ellipsoid.sample_count(),
        )
        .expect("sphere envelope of a valid ellipsoid is valid");
        let spacing = ellipsoid.height_h * S::lit(0.5);
        self.samples(spacing).into_iter().all(|p| {
            body_overlap(&envelope, p, &Mat3::identity(), obstacles) == S::zero()
        })
    }
}

/// Random boxes and cylinders between start and goal, with a certified clear corridor.
///
/// Returns the scene and the corridor that certifies it.
pub fn make_unstructured_scene<S: Real>(
    seed: u64,
    obstacle_count: usize,
    spec: &SceneSpec,
    ellipsoid: &EllipsoidModel<S>,
) -> Result<(Scene<S>, Corridor<S>)> {
    if obstacle_count > MAX_UNSTRUCTURED_OBSTACLES {
        return Err(Error::domain(format!(
            "obstacle_count {obstacle_count} exceeds {MAX_UNSTRUCTURED_OBSTACLES}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let region = window_region::<S>();
    let clearance = ellipsoid.radius_l + S::lit(0.1);
    for _ in 0..spec.max_generation_retries {
        let goal = Vec3::from_f64(
            WINDOW_X + WINDOW_GOAL_BEHIND,
            rng.random_range(-0.6..=0.6),
            rng.random_range(-0.3..=0.3),
        );
        let waypoint = Vec3::from_f64(
            1.1,
            rng.random_range(-0.6..=0.6),
            rng.random_range(-0.3..=0.3),
        );
        let corridor = Corridor {
            waypoints: vec![Vec3::zeros(), waypoint, goal],
        };
        let path = corridor.samples(S::lit(0.05));
        let mut obstacles = Vec::with_capacity(obstacle_count);
        let mut attempts = 0;
        while obstacles.len() < obstacle_count && attempts < 200 {
            attempts += 1;
            let center = Vec3::from_f64(
                rng.random_range(0.5..=1.9),
                rng.random_range(-1.2..=1.2),
                rng.random_range(-0.6..=0.6),
            );
            let candidate = if rng.random_bool(0.5) {
                ObstaclePrimitive::Box {
                    center,
                    half_extents: Vec3::from_f64(
                        rng.random_range(0.1..=0.35),
                        rng.random_range(0.1..=0.35),
                        rng.random_range(0.1..=0.35),
                    ),
                }
            } else {
                ObstaclePrimitive::Cylinder {
                    center,
                    radius: S::lit(rng.random_range(0.1..=0.25)),
                    height: S::lit(rng.random_range(0.6..=2.0)),
                }
            };
            if path
                .iter()
                .all(|&p| candidate.distance_lower_bound(p) > clearance)
            {
                obstacles.push(candidate);
            }
        }
        if obstacles.len() < obstacle_count {
            continue;
        }
        obstacles.sort_by(|a, b| {
            a.center()
                .x
                .partial_cmp(&b.center().x)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        if !corridor.is_clear(ellipsoid, &obstacles) {
            continue;
        }
        let scene = Scene {
            kind: SceneKind::Unstructured,
            obstacles,
            start_position: Vec3::zeros(),
            goal_position: goal,
            goal_attitude: Mat3::identity(),
            goal_radius: S::lit(spec.goal_radius),
            flight_region: region,
            obstacle_params: ObstacleParams::Unstructured {
                seed,
                obstacle_count,
            },
            max_episode_steps: spec.max_episode_steps,
        };
        scene.validate()?;
        return Ok((scene, corridor));
    }
    Err(Error::Generation(format!(
        "no feasible unstructured scene for seed {seed} after {} retries",
        spec.max_generation_retries
    )))
}
