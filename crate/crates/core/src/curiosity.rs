//! Similarity-based curiosity: multi-channel dynamic time warping between the
//! current episode and every remembered episode.
//!
//! The reward is `1 − exp(−min_i Σ_n D_dtw(S_n, S'ⁱ_n))` over the position,
//! attitude, and velocity channels.

use std::collections::VecDeque;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::sim::{ObservationNormalizer, QuadState, QUAD_FEATURES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Position,
    Attitude,
    Velocity,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Position, Channel::Attitude, Channel::Velocity];

    pub fn dim(self) -> usize {
        match self {
            Channel::Position | Channel::Velocity => 3,
            Channel::Attitude => 9,
        }
    }

    /// Offset of this channel in the quadrotor part of an observation.
    fn feature_offset(self) -> usize {
        match self {
            Channel::Position => 0,
            Channel::Attitude => 3,
            Channel::Velocity => 12,
        }
    }
}

/// One channel of an episode: a fixed-dimension vector per control step, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct StateChannelSeries<S> {
    channel: Channel,
    data: Vec<S>,
}

impl<S: Real> StateChannelSeries<S> {
    pub fn new(channel: Channel, data: Vec<S>) -> Result<Self> {
        let dim = channel.dim();
        if data.is_empty() {
            return Err(Error::domain("channel series must be non-empty"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::domain(format!(
                "{channel:?} series length {} is not a multiple of {dim}",
                data.len()
            )));
        }
        Ok(Self { channel, data })
    }

    /// Builds a series from per-step vectors.
    pub fn from_samples(channel: Channel, samples: &[Vec<S>]) -> Result<Self> {
        if samples.iter().any(|s| s.len() != channel.dim()) {
            return Err(Error::domain(format!(
                "{channel:?} samples must have dimension {}",
                channel.dim()
            )));
        }
        Self::new(channel, samples.concat())
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.channel.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[S] {
        let d = self.channel.dim();
        &self.data[i * d..(i + 1) * d]
    }

    /// Keeps at most `max_samples` samples at a uniform stride.
    pub fn downsampled(&self, max_samples: usize) -> Self {
        let n = self.len();
        if n <= max_samples || max_samples == 0 {
            return self.clone();
        }
        let data = (0..max_samples)
            .flat_map(|k| self.sample(k * n / max_samples).iter().copied())
            .collect();
        Self {
            channel: self.channel,
            data,
        }
    }
}

fn euclidean<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<S>()
        .sqrt()
}

/// Accumulated-cost recursion `D(i,j) = d(i,j) + min(D(i−1,j−1), D(i−1,j), D(i,j−1))`
/// over an `n × m` grid, returning `D(n−1, m−1)`.
///
/// Generic over the cost type so exact arithmetic can be used. Returns `None` if
/// a whole row exceeds `abandon_above`, in which case the final value exceeds it too.
pub fn dtw_accumulate<C, F>(n: usize, m: usize, mut cost: F, abandon_above: Option<C>) -> Option<C>
where
    C: Copy + PartialOrd + Add<Output = C>,
    F: FnMut(usize, usize) -> C,
{
    assert!(n > 0 && m > 0, "dtw over an empty grid");
    let min = |a: C, b: C| if b < a { b } else { a };
    let mut prev: Vec<C> = Vec::with_capacity(m);
    let mut acc = cost(0, 0);
    prev.push(acc);
    for j in 1..m {
        acc = acc + cost(0, j);
        prev.push(acc);
    }
    let mut row = prev.clone();
    for i in 1..n {
        row[0] = prev[0] + cost(i, 0);
        let mut row_min = row[0];
        for j in 1..m {
            let best = min(min(prev[j - 1], prev[j]), row[j - 1]);
            row[j] = best + cost(i, j);
            row_min = min(row_min, row[j]);
        }
        if let Some(limit) = abandon_above {
            if row_min > limit {
                return None;
            }
        }
        std::mem::swap(&mut prev, &mut row);
    }
    let last = prev[m - 1];
    match abandon_above {
        Some(limit) if last > limit => None,
        _ => Some(last),
    }
}

/// Time-aligned distance between two series of the same channel, with
/// Euclidean pairwise cost and steps {(−1,−1), (−1,0), (0,−1)}.
pub fn dtw_distance<S: Real>(a: &StateChannelSeries<S>, b: &StateChannelSeries<S>) -> Result<S> {
    if a.channel != b.channel {
        return Err(Error::domain(format!(
            "channel mismatch: {:?} vs {:?}",
            a.channel, b.channel
        )));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::domain("dtw needs non-empty series"));
    }
    Ok(dtw_accumulate(a.len(), b.len(), |i, j| euclidean(a.sample(i), b.sample(j)), None)
        .expect("no abandon limit"))
}

fn dtw_bounded<S: Real>(a: &StateChannelSeries<S>, b: &StateChannelSeries<S>, limit: S) -> Option<S> {
    dtw_accumulate(
        a.len(),
        b.len(),
        |i, j| euclidean(a.sample(i), b.sample(j)),
        Some(limit),
    )
}

/// Position, attitude, and velocity series of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSeries<S> {
    pub channels: [StateChannelSeries<S>; 3],
}

impl<S: Real> EpisodeSeries<S> {
    pub fn new(
        position: StateChannelSeries<S>,
        attitude: StateChannelSeries<S>,
        velocity: StateChannelSeries<S>,
    ) -> Result<Self> {
        let tags = [position.channel, attitude.channel, velocity.channel];
        if tags != Channel::ALL {
            return Err(Error::domain(format!(
                "episode channels must be (position, attitude, velocity), got {tags:?}"
            )));
        }
        Ok(Self {
            channels: [position, attitude, velocity],
        })
    }

    /// Extracts normalized channels from visited states, multiplied by
    /// `config.feature_scale` and downsampled to `config.max_samples`.
    pub fn from_states(
        states: &[QuadState<S>],
        normalizer: &ObservationNormalizer<S>,
        config: &CuriosityConfig,
    ) -> Result<Self> {
        let max_samples = config.max_samples;
        let scale = S::lit(config.feature_scale);
        if states.is_empty() {
            return Err(Error::domain("episode has no states"));
        }
        let mut chans: [Vec<S>; 3] = Default::default();
        for s in states {
            let mut raw = Vec::with_capacity(QUAD_FEATURES);
            raw.extend(s.position.to_array());
            raw.extend(s.attitude.to_row_major());
            raw.extend(s.linear_velocity.to_array());
            let norm = ObservationNormalizer {
                offsets: normalizer.offsets[..QUAD_FEATURES].to_vec(),
                scales: normalizer.scales[..QUAD_FEATURES].to_vec(),
            }
            .normalize(&raw);
            for (k, ch) in Channel::ALL.iter().enumerate() {
                let o = ch.feature_offset();
                chans[k].extend(norm[o..o + ch.dim()].iter().map(|&v| v * scale));
            }
        }
        let [p, a, v] = chans;
        Self::new(
            StateChannelSeries::new(Channel::Position, p)?.downsampled(max_samples),
            StateChannelSeries::new(Channel::Attitude, a)?.downsampled(max_samples),
            StateChannelSeries::new(Channel::Velocity, v)?.downsampled(max_samples),
        )
    }

    /// `Σ_n D_dtw(S_n, S'_n)`.
    pub fn summed_distance(&self, other: &Self) -> S {
        self.channels
            .iter()
            .zip(&other.channels)
            .map(|(a, b)| dtw_distance(a, b).expect("channels are aligned by construction"))
            .sum()
    }

    /// Summed distance, or `None` once it provably exceeds `limit`.
    fn summed_distance_below(&self, other: &Self, limit: S) -> Option<S> {
        let mut total = S::zero();
        for (a, b) in self.channels.iter().zip(&other.channels) {
            total += dtw_bounded(a, b, limit - total)?;
        }
        Some(total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CuriosityConfig {
    pub memory_capacity: usize,
    /// Stand-in for the minimum distance when memory is empty.
    pub empty_memory_distance: f64,
    pub max_samples: usize,
    /// Multiplies the normalized features before distances are taken.
    pub feature_scale: f64,
}

impl Default for CuriosityConfig {
    fn default() -> Self {
        Self {
            memory_capacity: 256,
            empty_memory_distance: 5.0,
            max_samples: 200,
            feature_scale: 0.1,
        }
    }
}

impl CuriosityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory_capacity == 0 || self.max_samples == 0 {
            return Err(Error::config(
                "curiosity.memory_capacity and curiosity.max_samples must be positive",
            ));
        }
        if !(self.feature_scale.is_finite() && self.feature_scale > 0.0) {
            return Err(Error::config("curiosity.feature_scale must be positive"));
        }
        if !(self.empty_memory_distance.is_finite() && self.empty_memory_distance >= 0.0) {
            return Err(Error::config("curiosity.empty_memory_distance must be >= 0"));
        }
        Ok(())
    }
}

/// FIFO store of past episodes.
#[derive(Debug, Clone)]
pub struct EpisodeMemory<S> {
    episodes: VecDeque<EpisodeSeries<S>>,
    capacity: usize,
}

impl<S: Real> EpisodeMemory<S> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "memory capacity must be positive");
        Self {
            episodes: VecDeque::with_capacity(capacity.min(1024)),
            capacity,
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &EpisodeSeries<S>> {
        self.episodes.iter()
    }

    /// Appends an episode, evicting the oldest when full.
    pub fn record_episode(&mut self, episode: EpisodeSeries<S>) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    /// Smallest summed distance to any stored episode, or `None` when empty.
    pub fn min_distance(&self, current: &EpisodeSeries<S>) -> Option<S> {
        let mut best: Option<S> = None;
        for past in &self.episodes {
            let found = match best {
                None => Some(current.summed_distance(past)),
                Some(b) => current.summed_distance_below(past, b),
            };
            if let Some(d) = found {
                if best.is_none_or(|b| d < b) {
                    best = Some(d);
                }
            }
            if best == Some(S::zero()) {
                break;
            }
        }
        best
    }
}

/// `1 − exp(−min_i Σ_n D_dtw(S_n, S'ⁱ_n))`; an empty memory uses `empty_memory_distance`.
/// Capped at the largest value below one, which large distances would otherwise round to.
pub fn curiosity_reward<S: Real>(
    current: &EpisodeSeries<S>,
    memory: &EpisodeMemory<S>,
    empty_memory_distance: S,
) -> S {
    let d = memory.min_distance(current).unwrap_or(empty_memory_distance);
    (S::one() - (-d).exp()).min(S::one() - S::epsilon() * S::lit(0.5))
}

/// Exhaustive minimum over monotone warping paths, for audit against
/// [`dtw_accumulate`]. Exponential in the lengths; callers bound them.
pub fn dtw_enumerate<C, F>(n: usize, m: usize, cost: F) -> C
where
    C: Copy + PartialOrd + Add<Output = C>,
    F: Fn(usize, usize) -> C,
{
    fn walk<C, F>(i: usize, j: usize, n: usize, m: usize, acc: C, cost: &F, best: &mut Option<C>)
    where
        C: Copy + PartialOrd + Add<Output = C>,
        F: Fn(usize, usize) -> C,
    {
        if i == n - 1 && j == m - 1 {
            if best.is_none_or(|b| acc < b) {
                *best = Some(acc);
            }
            return;
        }
        let moves = [(1, 1), (1, 0), (0, 1)];
        for (di, dj) in moves {
            let (ni, nj) = (i + di, j + dj);
            if ni < n && nj < m {
                walk(ni, nj, n, m, acc + cost(ni, nj), cost, best);
            }
        }
    }
    assert!(n > 0 && m > 0, "dtw over an empty grid");
    let mut best = None;
    walk(0, 0, n, m, cost(0, 0), &cost, &mut best);
    best.expect("at least one path exists")
}

/// Brute-force counterpart of [`dtw_distance`].
pub fn dtw_distance_enumerated<S: Real>(
    a: &StateChannelSeries<S>,
    b: &StateChannelSeries<S>,
) -> Result<S> {
    if a.channel != b.channel {
        return Err(Error::domain("channel mismatch"));
    }
    Ok(dtw_enumerate(a.len(), b.len(), |i, j| euclidean(a.sample(i), b.sample(j))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_series(xs: &[f64]) -> StateChannelSeries<f64> {
        let samples: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x, 0.0, 0.0]).collect();
        StateChannelSeries::from_samples(Channel::Position, &samples).unwrap()
    }

    #[test]
    fn single_cell() {
        let d = dtw_distance(&scalar_series(&[0.0]), &scalar_series(&[3.0])).unwrap();
        assert_eq!(d, 3.0);
    }

    #[test]
    fn identical_is_zero() {
        let a = scalar_series(&[0.0, 1.0, 5.0, 2.0]);
        assert_eq!(dtw_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn short_pair_matches_hand_value() {
        // Best path (0,0)->(1,0)->(2,1): |0-0| + |1-0| + |2-2| = 1.
        let d = dtw_distance(&scalar_series(&[0.0, 1.0, 2.0]), &scalar_series(&[0.0, 2.0])).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn channel_mismatch_is_error() {
        let a = scalar_series(&[0.0]);
        let b = StateChannelSeries::new(Channel::Velocity, vec![0.0; 3]).unwrap();
        assert!(matches!(dtw_distance(&a, &b), Err(Error::Domain(_))));
    }

    #[test]
    fn bad_lengths_rejected() {
        assert!(StateChannelSeries::<f64>::new(Channel::Attitude, vec![0.0; 10]).is_err());
        assert!(StateChannelSeries::<f64>::new(Channel::Position, vec![]).is_err());
    }

    #[test]
    fn downsample_keeps_stride() {
        let xs: Vec<f64> = (0..10).map(f64::from).collect();
        let d = scalar_series(&xs).downsampled(5);
        assert_eq!(d.len(), 5);
        let firsts: Vec<f64> = (0..5).map(|i| d.sample(i)[0]).collect();
        assert_eq!(firsts, vec![0.0, 2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn abandon_agrees_with_full() {
        let a = scalar_series(&[0.0, 1.0, 3.0, 2.0, 0.5]);
        let b = scalar_series(&[0.2, 2.0, 2.5, 0.1]);
        let full = dtw_distance(&a, &b).unwrap();
        assert_eq!(dtw_bounded(&a, &b, full + 1e-9), Some(full));
        assert_eq!(dtw_bounded(&a, &b, full * 0.5), None);
    }
}
