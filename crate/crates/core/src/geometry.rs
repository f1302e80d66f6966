//! Ellipsoid body model, obstacle primitives, and the sampled overlap fraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3};
use crate::scalar::Real;

pub const MIN_SAMPLE_COUNT: usize = 500;

/// Quadrotor body as the ellipsoid `{ RΣRᵀd + X : |d| ≤ 1 }` with `Σ = diag(l, l, h)`.
///
/// The unit-ball samples `d` come from a Halton sequence (bases 2, 3, 5) pushed
/// through a volume-preserving cube-to-ball map, so they are computed once and
/// reused for every pose.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidModel<S> {
    pub radius_l: S,
    pub height_h: S,
    unit_samples: Vec<Vec3<S>>,
}

impl<S: Real> EllipsoidModel<S> {
    pub fn new(radius_l: S, height_h: S, sample_count: usize) -> Result<Self> {
        Self::with_seed(radius_l, height_h, sample_count, 0)
    }

    /// `seed` skips into the sequence; the same seed always yields the same samples.
    pub fn with_seed(radius_l: S, height_h: S, sample_count: usize, seed: u64) -> Result<Self> {
        if !(height_h > S::zero() && radius_l >= height_h) {
            return Err(Error::domain(format!(
                "ellipsoid needs radius_l >= height_h > 0, got l = {radius_l}, h = {height_h}"
            )));
        }
        if sample_count < MIN_SAMPLE_COUNT {
            return Err(Error::domain(format!(
                "ellipsoid sample_count must be >= {MIN_SAMPLE_COUNT}, got {sample_count}"
            )));
        }
        Ok(Self {
            radius_l,
            height_h,
            unit_samples: unit_ball_samples(sample_count, seed),
        })
    }

    pub fn sample_count(&self) -> usize {
        self.unit_samples.len()
    }

    pub fn sigma(&self) -> Mat3<S> {
        Mat3::diag(Vec3::new(self.radius_l, self.radius_l, self.height_h))
    }

    pub fn unit_samples(&self) -> &[Vec3<S>] {
        &self.unit_samples
    }
}

impl<S: Real> Default for EllipsoidModel<S> {
    fn default() -> Self {
        Self::new(S::lit(0.28), S::lit(0.08), 2048).expect("default ellipsoid is valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<S> {
    pub points: Vec<Vec3<S>>,
}

impl<S: Real> PointCloud<S> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn bounds(&self) -> (Vec3<S>, Vec3<S>) {
        let inf = S::infinity();
        let mut lo = Vec3::new(inf, inf, inf);
        let mut hi = -lo;
        for p in &self.points {
            lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        (lo, hi)
    }
}

fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while index > 0 {
        out += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    out
}

/// Deterministic, volume-uniform points in the closed unit ball.
pub fn unit_ball_samples<S: Real>(count: usize, seed: u64) -> Vec<Vec3<S>> {
    (0..count as u64)
        .map(|i| {
            let k = i + 1 + seed;
            let (u, v, w) = (
                radical_inverse(k, 2),
                radical_inverse(k, 3),
                radical_inverse(k, 5),
            );
            let r = u.cbrt();
            let z = 1.0 - 2.0 * v;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = 2.0 * std::f64::consts::PI * w;
            Vec3::from_f64(r * rho * phi.cos(), r * rho * phi.sin(), r * z)
        })
        .collect()
}

/// Samples the ellipsoid at a pose: `p = RΣRᵀd + X`.
pub fn ellipsoid_points<S: Real>(
    model: &EllipsoidModel<S>,
    position: Vec3<S>,
    attitude: &Mat3<S>,
) -> PointCloud<S> {
    let shape = attitude.mat_mul(&model.sigma()).mat_mul(&attitude.transpose());
    PointCloud {
        points: model
            .unit_samples
            .iter()
            .map(|&d| shape.mul_vec(d) + position)
            .collect(),
    }
}

/// Axis-aligned box in some frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalBox<S> {
    pub center: Vec3<S>,
    pub half_extents: Vec3<S>,
}

impl<S: Real> LocalBox<S> {
    #[inline]
    pub fn contains(&self, p: Vec3<S>) -> bool {
        let d = p - self.center;
        d.x.abs() <= self.half_extents.x
            && d.y.abs() <= self.half_extents.y
            && d.z.abs() <= self.half_extents.z
    }

    fn sphere_distance(&self, c: Vec3<S>) -> S {
        let d = (c - self.center).map(|a| a.abs()) - self.half_extents;
        d.map(|a| a.max(S::zero())).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObstaclePrimitive<S> {
    Box {
        center: Vec3<S>,
        half_extents: Vec3<S>,
    },
    /// Vertical cylinder; `height` is the full height, centered at `center`.
    Cylinder {
        center: Vec3<S>,
        radius: S,
        height: S,
    },
    /// A panel in the world y-z plane with a rectangular gap at its center,
    /// rotated in-plane (about world x) by `angle`. `panel_half_extents` are
    /// (thickness, width, height) halves in the panel frame.
    Window {
        center: Vec3<S>,
        angle: S,
        panel_half_extents: Vec3<S>,
        gap_width: S,
        gap_height: S,
    },
}

impl<S: Real> ObstaclePrimitive<S> {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: S| v.is_finite() && v > S::zero();
        let ok = match *self {
            Self::Box { half_extents, .. } => {
                pos(half_extents.x) && pos(half_extents.y) && pos(half_extents.z)
            }
            Self::Cylinder { radius, height, .. } => pos(radius) && pos(height),
            Self::Window {
                panel_half_extents: e,
                gap_width,
                gap_height,
                ..
            } => {
                pos(e.x)
                    && pos(e.y)
                    && pos(e.z)
                    && pos(gap_width)
                    && pos(gap_height)
                    && gap_width < e.y * S::lit(2.0)
                    && gap_height < e.z * S::lit(2.0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!("invalid obstacle extents: {self:?}")))
        }
    }

    pub fn center(&self) -> Vec3<S> {
        match *self {
            Self::Box { center, .. } | Self::Cylinder { center, .. } | Self::Window { center, .. } => {
                center
            }
        }
    }

    /// The four panel-frame boxes surrounding the gap.
    pub fn window_boxes(
        panel_half_extents: Vec3<S>,
        gap_width: S,
        gap_height: S,
    ) -> [LocalBox<S>; 4] {
        let half = S::lit(0.5);
        let e = panel_half_extents;
        let (gw, gh) = (gap_width * half, gap_height * half);
        let side_w = (e.y - gw) * half;
        let band_h = (e.z - gh) * half;
        let z = S::zero();
        [
            // Left and right full-height columns.
            LocalBox {
                center: Vec3::new(z, gw + side_w, z),
                half_extents: Vec3::new(e.x, side_w, e.z),
            },
            LocalBox {
                center: Vec3::new(z, -(gw + side_w), z),
                half_extents: Vec3::new(e.x, side_w, e.z),
            },
            // Top and bottom bands across the gap width.
            LocalBox {
                center: Vec3::new(z, z, gh + band_h),
                half_extents: Vec3::new(e.x, gw, band_h),
            },
            LocalBox {
                center: Vec3::new(z, z, -(gh + band_h)),
                half_extents: Vec3::new(e.x, gw, band_h),
            },
        ]
    }

    /// Panel frame coordinates of a world point.
    fn to_panel(center: Vec3<S>, angle: S, p: Vec3<S>) -> Vec3<S> {
        let (s, c) = angle.sin_cos();
        let d = p - center;
        // Rx(angle)ᵀ · d
        Vec3::new(d.x, c * d.y + s * d.z, -s * d.y + c * d.z)
    }

    pub fn contains(&self, p: Vec3<S>) -> bool {
        match *self {
            Self::Box {
                center,
                half_extents,
            } => LocalBox {
                center,
                half_extents,
            }
            .contains(p),
            Self::Cylinder {
                center,
                radius,
                height,
            } => {
                let d = p - center;
                d.z.abs() <= height * S::lit(0.5) && d.x * d.x + d.y * d.y <= radius * radius
            }
            Self::Window {
                center,
                angle,
                panel_half_extents,
                gap_width,
                gap_height,
            } => {
                let q = Self::to_panel(center, angle, p);
                Self::window_boxes(panel_half_extents, gap_width, gap_height)
                    .iter()
                    .any(|b| b.contains(q))
            }
        }
    }

    /// Lower bound on the distance from `c` to the obstacle (0 when inside).
    /// Used to skip obstacles that cannot touch a bounding sphere.
    pub fn distance_lower_bound(&self, c: Vec3<S>) -> S {
        match *self {
            Self::Box {
                center,
                half_extents,
            } => LocalBox {
                center,
                half_extents,
            }
            .sphere_distance(c),
            Self::Cylinder {
                center,
                radius,
                height,
            } => {
                let d = c - center;
                let radial = ((d.x * d.x + d.y * d.y).sqrt() - radius).max(S::zero());
                let vertical = (d.z.abs() - height * S::lit(0.5)).max(S::zero());
                (radial * radial + vertical * vertical).sqrt()
            }
            Self::Window {
                center,
                angle,
                panel_half_extents,
                gap_width,
                gap_height,
            } => {
                let q = Self::to_panel(center, angle, c);
                Self::window_boxes(panel_half_extents, gap_width, gap_height)
                    .iter()
                    .map(|b| b.sphere_distance(q))
                    .fold(S::infinity(), S::min)
            }
        }
    }
}

/// `card(ε ∩ O) / card(ε)`: fraction of cloud points inside any obstacle.
pub fn intersection_fraction<S: Real>(
    cloud: &PointCloud<S>,
    obstacles: &[ObstaclePrimitive<S>],
) -> Result<S> {
    if cloud.is_empty() {
        return Err(Error::domain("intersection_fraction needs a non-empty cloud"));
    }
    let hits = count_inside(cloud, obstacles);
    Ok(S::from_usize_lossy(hits) / S::from_usize_lossy(cloud.len()))
}

fn count_inside<S: Real>(cloud: &PointCloud<S>, obstacles: &[ObstaclePrimitive<S>]) -> usize {
    let (lo, hi) = cloud.bounds();
    let half = S::lit(0.5);
    let center = (lo + hi).scale(half);
    let radius = (hi - lo).norm() * half;
    let near: Vec<&ObstaclePrimitive<S>> = obstacles
        .iter()
        .filter(|o| o.distance_lower_bound(center) <= radius)
        .collect();
    if near.is_empty() {
        return 0;
    }
    cloud
        .points
        .iter()
        .filter(|&&p| near.iter().any(|o| o.contains(p)))
        .count()
}

/// Overlap fraction of the body at a pose, skipping point generation when no
/// obstacle is within the body's bounding sphere.
pub fn body_overlap<S: Real>(
    model: &EllipsoidModel<S>,
    position: Vec3<S>,
    attitude: &Mat3<S>,
    obstacles: &[ObstaclePrimitive<S>],
) -> S {
    let reach = model.radius_l.max(model.height_h);
    if obstacles
        .iter()
        .all(|o| o.distance_lower_bound(position) > reach)
    {
        return S::zero();
    }
    let cloud = ellipsoid_points(model, position, attitude);
    S::from_usize_lossy(count_inside(&cloud, obstacles)) / S::from_usize_lossy(cloud.len())
}
