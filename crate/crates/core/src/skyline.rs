//! Multi-level skylines over normalized feature vectors.
//!
//! Levels are computed by a sorted nearest-neighbour scan: candidates are
//! visited in order of Euclidean distance to an ideal corner that bounds
//! every coordinate from above. A point that dominates another is strictly
//! closer to that corner, so when a point is reached every point that could
//! dominate it has already been classified and it suffices to test it
//! against the points emitted so far on the current level. Dominated points
//! fall through to the next level's pool, which inherits the scan order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_model::UserId;
use crate::feature_index::{Feature, FeatureVector};

pub const MIN_DIMS: usize = 2;
pub const MAX_DIMS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum SkylineError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("unsupported dimensionality {0}, expected 2..=4")]
    UnsupportedDims(usize),
    #[error("non-finite coordinate for {0}")]
    NonFinite(UserId),
    #[error("user {0} appears more than once")]
    DuplicateUser(UserId),
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("max_levels must be at least 1")]
    ZeroLevels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePoint {
    pub user: UserId,
    pub coords: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
}

impl CandidatePoint {
    pub fn new(user: UserId, coords: Vec<f64>) -> Self {
        Self {
            user,
            coords,
            level: None,
        }
    }
}

fn dominates_coords(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return false;
        }
        strict |= x > y;
    }
    strict
}

/// Max-is-better Pareto dominance.
pub fn dominates(a: &CandidatePoint, b: &CandidatePoint) -> Result<bool, SkylineError> {
    if a.coords.len() != b.coords.len() {
        return Err(SkylineError::DimensionMismatch {
            left: a.coords.len(),
            right: b.coords.len(),
        });
    }
    Ok(dominates_coords(&a.coords, &b.coords))
}

/// Axis layout of the candidate points.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dims {
    /// Qualification, interest, responsiveness, activity.
    #[default]
    #[serde(rename = "4")]
    Four,
    /// Knowledge (mean of the first two) and availability (mean of the last two).
    #[serde(rename = "2")]
    Two,
}

impl Dims {
    pub fn count(self) -> usize {
        match self {
            Dims::Four => 4,
            Dims::Two => 2,
        }
    }

    pub fn names(self) -> Vec<String> {
        match self {
            Dims::Four => Feature::ALL.iter().map(|f| f.name().to_string()).collect(),
            Dims::Two => vec!["knowledge".into(), "availability".into()],
        }
    }

    /// Axis used to sort a level for middle-out traversal.
    pub fn availability_axis(self) -> usize {
        match self {
            Dims::Four => 2,
            Dims::Two => 1,
        }
    }

    pub fn project(self, fv: &FeatureVector) -> Vec<f64> {
        match self {
            Dims::Four => Feature::ALL.iter().map(|&f| fv.normalized(f)).collect(),
            Dims::Two => vec![
                (fv.qualification_n + fv.interest_n) / 2.0,
                (fv.responsiveness_n + fv.activity_n) / 2.0,
            ],
        }
    }
}

impl FromStr for Dims {
    type Err = SkylineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "4" => Ok(Dims::Four),
            "2" => Ok(Dims::Two),
            other => Err(SkylineError::UnsupportedDims(other.parse().unwrap_or(0))),
        }
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.count())
    }
}

/// Candidate points for one (crowd, topic), ordered by user.
pub fn candidate_points(
    features: &BTreeMap<UserId, FeatureVector>,
    dims: Dims,
) -> Vec<CandidatePoint> {
    features
        .iter()
        .map(|(u, fv)| CandidatePoint::new(u.clone(), dims.project(fv)))
        .collect()
}

/// Per-axis lower bounds for low-value pruning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneThresholds {
    /// One minimum per axis.
    Fixed(Vec<f64>),
    /// Per-axis percentile of the population being pruned, in `[0, 100]`.
    Percentile(f64),
}

impl Default for PruneThresholds {
    fn default() -> Self {
        PruneThresholds::Percentile(10.0)
    }
}

impl PruneThresholds {
    pub fn none() -> Self {
        PruneThresholds::Fixed(Vec::new())
    }

    pub fn validate(&self) -> Result<(), SkylineError> {
        match self {
            PruneThresholds::Fixed(v) => match v.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                Some(&t) => Err(SkylineError::BadThreshold(t)),
                None => Ok(()),
            },
            PruneThresholds::Percentile(p) if !(0.0..=100.0).contains(p) => {
                Err(SkylineError::BadThreshold(*p))
            }
            PruneThresholds::Percentile(_) => Ok(()),
        }
    }

    /// Concrete per-axis minimums for this population. A fixed list shorter
    /// than `dims` leaves the remaining axes unconstrained.
    pub fn resolve(&self, points: &[CandidatePoint], dims: usize) -> Vec<f64> {
        match self {
            PruneThresholds::Fixed(v) => (0..dims)
                .map(|i| v.get(i).copied().unwrap_or(0.0))
                .collect(),
            PruneThresholds::Percentile(p) => (0..dims)
                .map(|axis| {
                    let mut values: Vec<f64> = points.iter().map(|pt| pt.coords[axis]).collect();
                    values.sort_by(f64::total_cmp);
                    percentile(&values, *p)
                })
                .collect(),
        }
    }
}

/// Linear interpolation between closest ranks; 0 for an empty sample.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => 0.0,
        1 => sorted[0],
        n => {
            let rank = p / 100.0 * (n - 1) as f64;
            let lo = rank.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            let frac = rank - lo as f64;
            sorted[lo] + (sorted[hi] - sorted[lo]) * frac
        }
    }
}

/// Split into points at or above every threshold and the rest.
pub fn low_value_prune(
    points: Vec<CandidatePoint>,
    thresholds: &PruneThresholds,
) -> (Vec<CandidatePoint>, Vec<CandidatePoint>) {
    let dims = points.first().map_or(0, |p| p.coords.len());
    let mins = thresholds.resolve(&points, dims);
    points
        .into_iter()
        .partition(|p| p.coords.iter().zip(&mins).all(|(x, min)| x >= min))
}

fn validate_points(points: &[CandidatePoint]) -> Result<(), SkylineError> {
    let Some(first) = points.first() else {
        return Ok(());
    };
    let d = first.coords.len();
    if !(MIN_DIMS..=MAX_DIMS).contains(&d) {
        return Err(SkylineError::UnsupportedDims(d));
    }
    let mut seen = BTreeSet::new();
    for p in points {
        if p.coords.len() != d {
            return Err(SkylineError::DimensionMismatch {
                left: d,
                right: p.coords.len(),
            });
        }
        if p.coords.iter().any(|x| !x.is_finite()) {
            return Err(SkylineError::NonFinite(p.user.clone()));
        }
        if !seen.insert(&p.user) {
            return Err(SkylineError::DuplicateUser(p.user.clone()));
        }
    }
    Ok(())
}

/// Points ordered by distance to the ideal corner, ties by user.
fn scan_order(points: &[CandidatePoint]) -> Vec<usize> {
    let d = points.first().map_or(0, |p| p.coords.len());
    let ideal: Vec<f64> = (0..d)
        .map(|i| points.iter().map(|p| p.coords[i]).fold(1.0, f64::max))
        .collect();
    let dist: Vec<f64> = points
        .iter()
        .map(|p| {
            p.coords
                .iter()
                .zip(&ideal)
                .map(|(x, c)| (c - x) * (c - x))
                .sum::<f64>()
        })
        .collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        dist[a]
            .total_cmp(&dist[b])
            .then_with(|| points[a].user.cmp(&points[b].user))
    });
    order
}

/// Progressive skyline emission: every level-`k` point is yielded before
/// any level-`k + 1` point.
#[derive(Debug)]
pub struct SkylineStream {
    points: Vec<CandidatePoint>,
    pool: Vec<usize>,
    cursor: usize,
    emitted: Vec<usize>,
    next_pool: Vec<usize>,
    level: usize,
    max_levels: usize,
}

pub fn skyline_stream(
    points: Vec<CandidatePoint>,
    max_levels: usize,
) -> Result<SkylineStream, SkylineError> {
    if max_levels == 0 {
        return Err(SkylineError::ZeroLevels);
    }
    validate_points(&points)?;
    let pool = scan_order(&points);
    Ok(SkylineStream {
        points,
        pool,
        cursor: 0,
        emitted: Vec::new(),
        next_pool: Vec::new(),
        level: 1,
        max_levels,
    })
}

impl SkylineStream {
    /// Level of the next point to be emitted.
    pub fn current_level(&self) -> usize {
        self.level
    }

    /// Points not assigned to any level so far.
    pub fn unassigned(&self) -> usize {
        self.pool.len() - self.cursor + self.next_pool.len()
    }
}

impl Iterator for SkylineStream {
    type Item = CandidatePoint;

    fn next(&mut self) -> Option<CandidatePoint> {
        loop {
            if let Some(&i) = self.pool.get(self.cursor) {
                self.cursor += 1;
                let p = &self.points[i].coords;
                if self
                    .emitted
                    .iter()
                    .any(|&e| dominates_coords(&self.points[e].coords, p))
                {
                    self.next_pool.push(i);
                    continue;
                }
                self.emitted.push(i);
                let mut out = self.points[i].clone();
                out.level = Some(self.level);
                return Some(out);
            }
            if self.next_pool.is_empty() || self.level >= self.max_levels {
                return None;
            }
            self.level += 1;
            self.pool = std::mem::take(&mut self.next_pool);
            self.cursor = 0;
            self.emitted.clear();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkylineLevels {
    /// `levels[0]` is the outer skyline; each level in emission order.
    pub levels: Vec<Vec<CandidatePoint>>,
    pub pruned: Vec<UserId>,
    pub dims: Dims,
    /// Points left over after `max_levels` levels.
    pub unassigned: usize,
}

impl SkylineLevels {
    pub fn len(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn users(&self) -> impl Iterator<Item = &UserId> {
        self.levels.iter().flatten().map(|p| &p.user)
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }
}

/// Collect the stream into levels without pruning.
pub fn skyline_levels(
    points: Vec<CandidatePoint>,
    max_levels: usize,
    dims: Dims,
) -> Result<SkylineLevels, SkylineError> {
    let mut stream = skyline_stream(points, max_levels)?;
    let mut levels: Vec<Vec<CandidatePoint>> = Vec::new();
    for p in stream.by_ref() {
        let k = p.level.unwrap_or(1);
        if levels.len() < k {
            levels.resize_with(k, Vec::new);
        }
        levels[k - 1].push(p);
    }
    Ok(SkylineLevels {
        levels,
        pruned: Vec::new(),
        dims,
        unassigned: stream.unassigned(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SkylineConfig {
    pub dims: Dims,
    pub max_levels: usize,
    pub prune: PruneThresholds,
}

impl Default for SkylineConfig {
    fn default() -> Self {
        Self {
            dims: Dims::Four,
            max_levels: 3,
            prune: PruneThresholds::default(),
        }
    }
}

impl SkylineConfig {
    pub fn validate(&self) -> Result<(), SkylineError> {
        if self.max_levels == 0 {
            return Err(SkylineError::ZeroLevels);
        }
        self.prune.validate()
    }
}

/// Prune then layer one (crowd, topic) population.
pub fn build_skyline(
    features: &BTreeMap<UserId, FeatureVector>,
    cfg: &SkylineConfig,
) -> Result<SkylineLevels, SkylineError> {
    cfg.validate()?;
    let points = candidate_points(features, cfg.dims);
    let (kept, pruned) = low_value_prune(points, &cfg.prune);
    let mut levels = skyline_levels(kept, cfg.max_levels, cfg.dims)?;
    levels.pruned = pruned.into_iter().map(|p| p.user).collect();
    Ok(levels)
}

/// Remaining candidate-set sizes of the outer-skyline search: each step
/// takes the candidate nearest the ideal corner and discards it together
/// with everything it dominates.
pub fn candidate_count_trace(points: &[CandidatePoint]) -> Vec<usize> {
    let order = scan_order(points);
    let mut remaining: Vec<usize> = order;
    let mut trace = vec![remaining.len()];
    while let Some(&best) = remaining.first() {
        let pivot = &points[best].coords;
        remaining = remaining[1..]
            .iter()
            .copied()
            .filter(|&i| !dominates_coords(pivot, &points[i].coords))
            .collect();
        trace.push(remaining.len());
    }
    trace
}
