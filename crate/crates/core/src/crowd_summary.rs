//! Per-crowd summaries of skyline representatives and the weighted crowd
//! score used to split the budget.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_model::{CrowdId, Topic, UserId};
use crate::feature_index::FeatureVector;
use crate::skyline::SkylineLevels;

pub const DEFAULT_REPRESENTATIVES: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum SummaryError {
    #[error("representative count must be at least 1")]
    ZeroRepresentatives,
    #[error("no features for skyline member {0}")]
    MissingFeatures(UserId),
    #[error("weights must be non-negative and not all zero")]
    BadWeights,
    #[error("unknown weight preset {0:?}")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdSummary {
    pub crowd: CrowdId,
    pub topic: Topic,
    /// Mean normalized qualification over the representatives.
    pub qualification: f64,
    /// Mean normalized interest.
    pub interest: f64,
    /// Mean normalized responsiveness.
    pub responsiveness: f64,
    pub representatives: Vec<UserId>,
    /// Requested R.
    pub representative_count: usize,
    /// Fewer than R candidates were available.
    pub under_filled: bool,
}

/// Take the first `r` skyline users level by level and average their
/// normalized knowledge and responsiveness features.
pub fn summarize(
    crowd: CrowdId,
    topic: Topic,
    levels: &SkylineLevels,
    features: &BTreeMap<UserId, FeatureVector>,
    r: usize,
) -> Result<CrowdSummary, SummaryError> {
    if r == 0 {
        return Err(SummaryError::ZeroRepresentatives);
    }
    let representatives: Vec<UserId> = levels.users().take(r).cloned().collect();
    let mut sums = [0.0; 3];
    for user in &representatives {
        let fv = features
            .get(user)
            .ok_or_else(|| SummaryError::MissingFeatures(user.clone()))?;
        sums[0] += fv.qualification_n;
        sums[1] += fv.interest_n;
        sums[2] += fv.responsiveness_n;
    }
    let n = representatives.len().max(1) as f64;
    Ok(CrowdSummary {
        crowd,
        topic,
        qualification: sums[0] / n,
        interest: sums[1] / n,
        responsiveness: sums[2] / n,
        under_filled: representatives.len() < r,
        representatives,
        representative_count: r,
    })
}

/// Common R for a fair comparison: the requested count clamped to the
/// smallest non-empty candidate pool.
pub fn balanced_representatives(
    requested: usize,
    available: impl IntoIterator<Item = usize>,
) -> usize {
    available
        .into_iter()
        .filter(|&n| n > 0)
        .fold(requested, usize::min)
        .max(1)
}

/// Linear weights over the qualification, interest and responsiveness
/// summaries, summing to 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeights", into = "RawWeights")]
pub struct ScoreWeights {
    qualification: f64,
    interest: f64,
    responsiveness: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeights {
    qualification: f64,
    interest: f64,
    responsiveness: f64,
}

impl TryFrom<RawWeights> for ScoreWeights {
    type Error = SummaryError;
    fn try_from(w: RawWeights) -> Result<Self, Self::Error> {
        ScoreWeights::new(w.qualification, w.interest, w.responsiveness)
    }
}

impl From<ScoreWeights> for RawWeights {
    fn from(w: ScoreWeights) -> Self {
        RawWeights {
            qualification: w.qualification,
            interest: w.interest,
            responsiveness: w.responsiveness,
        }
    }
}

impl ScoreWeights {
    pub fn new(
        qualification: f64,
        interest: f64,
        responsiveness: f64,
    ) -> Result<Self, SummaryError> {
        let parts = [qualification, interest, responsiveness];
        if parts.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(SummaryError::BadWeights);
        }
        let total: f64 = parts.iter().sum();
        if total <= 0.0 {
            return Err(SummaryError::BadWeights);
        }
        Ok(Self {
            qualification: qualification / total,
            interest: interest / total,
            responsiveness: responsiveness / total,
        })
    }

    pub fn equal() -> Self {
        Self::new(1.0, 1.0, 1.0).expect("valid")
    }

    /// Favors interest and responsiveness.
    pub fn survey() -> Self {
        Self::new(0.1, 0.45, 0.45).expect("valid")
    }

    pub fn preset(name: &str) -> Result<Self, SummaryError> {
        match name {
            "equal" => Ok(Self::equal()),
            "survey" => Ok(Self::survey()),
            other => Err(SummaryError::UnknownPreset(other.to_string())),
        }
    }

    pub fn qualification(&self) -> f64 {
        self.qualification
    }
    pub fn interest(&self) -> f64 {
        self.interest
    }
    pub fn responsiveness(&self) -> f64 {
        self.responsiveness
    }
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self::equal()
    }
}

impl FromStr for ScoreWeights {
    type Err = SummaryError;

    /// A preset name or three comma-separated weights.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if let [k1, k2, a1] = parts[..] {
            let num = |x: &str| x.parse::<f64>().map_err(|_| SummaryError::BadWeights);
            return Self::new(num(k1)?, num(k2)?, num(a1)?);
        }
        Self::preset(s.trim())
    }
}

impl fmt::Display for ScoreWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{}",
            self.qualification, self.interest, self.responsiveness
        )
    }
}

/// Weighted crowd score. Activity never contributes.
pub fn score(s: &CrowdSummary, w: &ScoreWeights) -> f64 {
    w.qualification * s.qualification
        + w.interest * s.interest
        + w.responsiveness * s.responsiveness
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skyline::{CandidatePoint, Dims};
    use proptest::prelude::*;

    fn crowd() -> CrowdId {
        CrowdId::new("c").unwrap()
    }
    fn user(i: usize) -> UserId {
        UserId::new(crowd(), format!("u{i}")).unwrap()
    }
    fn topic() -> Topic {
        Topic::new("hiking").unwrap()
    }

    fn levels(sizes: &[usize]) -> SkylineLevels {
        let mut next = 0;
        let levels = sizes
            .iter()
            .map(|&n| {
                (0..n)
                    .map(|_| {
                        next += 1;
                        CandidatePoint::new(user(next - 1), vec![0.0; 4])
                    })
                    .collect()
            })
            .collect();
        SkylineLevels {
            levels,
            pruned: Vec::new(),
            dims: Dims::Four,
            unassigned: 0,
        }
    }

    fn fv(k1: f64, k2: f64, a1: f64, a2: f64) -> FeatureVector {
        FeatureVector {
            qualification_n: k1,
            interest_n: k2,
            responsiveness_n: a1,
            activity_n: a2,
            ..Default::default()
        }
    }

    fn features(values: &[(f64, f64, f64, f64)]) -> BTreeMap<UserId, FeatureVector> {
        values
            .iter()
            .enumerate()
            .map(|(i, &(a, b, c, d))| (user(i), fv(a, b, c, d)))
            .collect()
    }

    #[test]
    fn summary_is_mean_over_representatives() {
        let f = features(&[
            (0.2, 0.0, 0.0, 0.0),
            (0.4, 0.0, 0.0, 0.0),
            (0.6, 0.0, 0.0, 0.0),
        ]);
        let s = summarize(crowd(), topic(), &levels(&[3]), &f, 3).unwrap();
        assert!((s.qualification - 0.4).abs() < 1e-12);
        assert!(!s.under_filled);
    }

    #[test]
    fn single_representative_passes_through() {
        let f = features(&[(0.3, 0.7, 0.9, 0.1)]);
        let s = summarize(crowd(), topic(), &levels(&[1]), &f, 5).unwrap();
        assert_eq!(
            (s.qualification, s.interest, s.responsiveness),
            (0.3, 0.7, 0.9)
        );
        assert!(s.under_filled);
    }

    #[test]
    fn representatives_spill_into_lower_levels() {
        let f = features(&[(0.0, 0.0, 0.0, 0.0); 4]);
        let s = summarize(crowd(), topic(), &levels(&[1, 3]), &f, 2).unwrap();
        assert_eq!(s.representatives, vec![user(0), user(1)]);
    }

    #[test]
    fn missing_features_and_zero_r_fail() {
        assert_eq!(
            summarize(crowd(), topic(), &levels(&[1]), &BTreeMap::new(), 1),
            Err(SummaryError::MissingFeatures(user(0)))
        );
        assert_eq!(
            summarize(crowd(), topic(), &levels(&[1]), &BTreeMap::new(), 0),
            Err(SummaryError::ZeroRepresentatives)
        );
    }

    fn summary(k1: f64, k2: f64, a1: f64) -> CrowdSummary {
        CrowdSummary {
            crowd: crowd(),
            topic: topic(),
            qualification: k1,
            interest: k2,
            responsiveness: a1,
            representatives: Vec::new(),
            representative_count: 1,
            under_filled: false,
        }
    }

    #[test]
    fn score_examples() {
        assert!((score(&summary(0.4, 0.3, 0.5), &ScoreWeights::equal()) - 0.4).abs() < 1e-12);
        let k1_only = ScoreWeights::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(score(&summary(0.4, 0.3, 0.5), &k1_only), 0.4);
    }

    #[test]
    fn activity_does_not_move_the_score() {
        let a = features(&[(0.2, 0.3, 0.4, 0.0), (0.5, 0.6, 0.7, 0.1)]);
        let b = features(&[(0.2, 0.3, 0.4, 1.0), (0.5, 0.6, 0.7, 0.9)]);
        let sa = summarize(crowd(), topic(), &levels(&[2]), &a, 2).unwrap();
        let sb = summarize(crowd(), topic(), &levels(&[2]), &b, 2).unwrap();
        assert_eq!(
            score(&sa, &ScoreWeights::equal()),
            score(&sb, &ScoreWeights::equal())
        );
    }

    #[test]
    fn weights_parse_and_normalize() {
        let w: ScoreWeights = "survey".parse().unwrap();
        assert_eq!(w, ScoreWeights::survey());
        let w: ScoreWeights = "2, 1, 1".parse().unwrap();
        assert_eq!(
            (w.qualification(), w.interest(), w.responsiveness()),
            (0.5, 0.25, 0.25)
        );
        assert!("0,0,0".parse::<ScoreWeights>().is_err());
        assert!("-1,1,1".parse::<ScoreWeights>().is_err());
        assert!("bogus".parse::<ScoreWeights>().is_err());
        let json = serde_json::to_string(&ScoreWeights::equal()).unwrap();
        let back: ScoreWeights = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ScoreWeights::equal());
    }

    #[test]
    fn balanced_r_clamps_to_smallest_viable_crowd() {
        assert_eq!(balanced_representatives(50, [120, 30]), 30);
        assert_eq!(balanced_representatives(50, [120, 0]), 50);
        assert_eq!(balanced_representatives(10, [120, 30]), 10);
    }

    proptest! {
        #[test]
        fn score_monotone_and_bounded(
            vals in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0), 1..20),
            pick in 0usize..20, axis in 0usize..3, bump in 0.0f64..1.0,
        ) {
            let n = vals.len();
            let f = features(&vals);
            let lv = levels(&[n]);
            let base = summarize(crowd(), topic(), &lv, &f, n).unwrap();
            let w = ScoreWeights::equal();
            let s0 = score(&base, &w);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&s0));

            let mut raised = f.clone();
            let v = raised.get_mut(&user(pick % n)).unwrap();
            let slot = match axis { 0 => &mut v.qualification_n, 1 => &mut v.interest_n, _ => &mut v.responsiveness_n };
            *slot = (*slot + bump).min(1.0);
            let s1 = score(&summarize(crowd(), topic(), &lv, &raised, n).unwrap(), &w);
            prop_assert!(s1 >= s0 - 1e-12);
        }

        #[test]
        fn summary_permutation_invariant(
            vals in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0), 1..20),
            rot in 0usize..20,
        ) {
            let n = vals.len();
            let f = features(&vals);
            let mut lv = levels(&[n]);
            let a = summarize(crowd(), topic(), &lv, &f, n).unwrap();
            lv.levels[0].rotate_left(rot % n);
            let b = summarize(crowd(), topic(), &lv, &f, n).unwrap();
            prop_assert!((a.qualification - b.qualification).abs() < 1e-12);
            prop_assert!((a.interest - b.interest).abs() < 1e-12);
            prop_assert!((a.responsiveness - b.responsiveness).abs() < 1e-12);
        }
    }
}
