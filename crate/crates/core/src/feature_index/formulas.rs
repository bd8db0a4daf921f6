//! The four utility features and their smoothing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::counters::MetricCounters;
use super::IndexConfig;
use crate::event_model::{Timestamp, UserId, SECONDS_PER_HOUR};

/// `num / den`, with an empty denominator contributing nothing.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Additive smoothing priors for one (crowd, topic) population.
///
/// Each mean is taken over the users whose corresponding unsmoothed ratio
/// has a non-zero denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SmoothingParams {
    pub mu_correct_answers: f64,
    pub mu_original_posts: f64,
    pub mu_interest: f64,
    pub mu_questions_answered: f64,
    pub mu_conversational: f64,
    pub population: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

impl SmoothingParams {
    /// No smoothing at all; every smoothed feature equals its raw form.
    pub fn disabled() -> Self {
        Self::default()
    }

    pub fn from_population<'a, I>(counters: I) -> Self
    where
        I: IntoIterator<Item = &'a MetricCounters>,
        I::IntoIter: Clone,
    {
        let it = counters.into_iter();
        let with = |den: fn(&MetricCounters) -> f64, num: fn(&MetricCounters) -> f64| {
            mean(
                it.clone()
                    .filter(move |m| den(m) > 0.0)
                    .map(move |m| num(m) / den(m)),
            )
        };
        Self {
            mu_correct_answers: with(|m| m.answers as f64, |m| m.correct_answers),
            mu_original_posts: with(|m| m.posts as f64, |m| m.original_posts),
            mu_interest: with(|m| m.posts_all as f64, |m| m.posts as f64),
            mu_questions_answered: with(
                |m| m.questions_presented as f64,
                |m| m.questions_answered as f64,
            ),
            mu_conversational: with(|m| m.posts as f64, |m| m.conversational_posts as f64),
            population: it.count(),
        }
    }
}

/// Unsmoothed qualification: correct-answer ratio plus original-post ratio.
pub fn qualification_raw(m: &MetricCounters) -> f64 {
    ratio(m.correct_answers, m.answers as f64) + ratio(m.original_posts, m.posts as f64)
}

pub fn qualification(m: &MetricCounters, s: &SmoothingParams) -> f64 {
    let n = s.population as f64;
    ratio(
        m.correct_answers + s.mu_correct_answers,
        m.answers as f64 + n,
    ) + ratio(m.original_posts + s.mu_original_posts, m.posts as f64 + n)
}

pub fn interest(m: &MetricCounters, s: &SmoothingParams) -> f64 {
    let n = s.population as f64;
    ratio(m.posts as f64 + s.mu_interest, m.posts_all as f64 + n)
}

/// Smoothed answer and conversation ratios plus inverse mean response time.
///
/// The latency term is zero until the user has responded at least once and
/// is capped by flooring the mean at `rt_floor_hours`.
pub fn responsiveness(m: &MetricCounters, s: &SmoothingParams, cfg: &IndexConfig) -> f64 {
    let n = s.population as f64;
    let answered = ratio(
        m.questions_answered as f64 + s.mu_questions_answered,
        m.questions_presented as f64 + n,
    );
    let conversational = ratio(
        m.conversational_posts as f64 + s.mu_conversational,
        m.posts as f64 + n,
    );
    let latency = m
        .mean_response_hours()
        .map_or(0.0, |rt| 1.0 / rt.max(cfg.rt_floor_hours));
    answered + conversational + latency
}

/// Hours since the last question presented or answer given, capped.
/// Larger means more available.
pub fn activity(m: &MetricCounters, now: Timestamp, cfg: &IndexConfig) -> f64 {
    let cap = cfg.activity_cap_hours();
    match m.last_question.max(m.last_answer) {
        None => cap,
        Some(last) => {
            let elapsed = (now - last).max(0) as f64 / SECONDS_PER_HOUR as f64;
            elapsed.min(cap)
        }
    }
}

/// Raw and min-max normalized utility features of one user on one topic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub qualification: f64,
    pub interest: f64,
    pub responsiveness: f64,
    /// Hours since last question or answer.
    pub activity: f64,
    pub qualification_n: f64,
    pub interest_n: f64,
    pub responsiveness_n: f64,
    pub activity_n: f64,
    pub computed_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Qualification,
    Interest,
    Responsiveness,
    Activity,
}

impl Feature {
    pub const ALL: [Feature; 4] = [
        Feature::Qualification,
        Feature::Interest,
        Feature::Responsiveness,
        Feature::Activity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Qualification => "qualification",
            Feature::Interest => "interest",
            Feature::Responsiveness => "responsiveness",
            Feature::Activity => "activity",
        }
    }
}

impl FeatureVector {
    pub fn raw(&self, f: Feature) -> f64 {
        match f {
            Feature::Qualification => self.qualification,
            Feature::Interest => self.interest,
            Feature::Responsiveness => self.responsiveness,
            Feature::Activity => self.activity,
        }
    }

    pub fn normalized(&self, f: Feature) -> f64 {
        match f {
            Feature::Qualification => self.qualification_n,
            Feature::Interest => self.interest_n,
            Feature::Responsiveness => self.responsiveness_n,
            Feature::Activity => self.activity_n,
        }
    }

    fn normalized_mut(&mut self, f: Feature) -> &mut f64 {
        match f {
            Feature::Qualification => &mut self.qualification_n,
            Feature::Interest => &mut self.interest_n,
            Feature::Responsiveness => &mut self.responsiveness_n,
            Feature::Activity => &mut self.activity_n,
        }
    }
}

/// Per-axis min-max scaling over a (crowd, topic) population. A constant
/// axis maps every user to 0.5.
pub fn normalize(features: &mut BTreeMap<UserId, FeatureVector>) {
    for f in Feature::ALL {
        let (lo, hi) = features
            .values()
            .map(|v| v.raw(f))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(x), hi.max(x))
            });
        for v in features.values_mut() {
            let x = v.raw(f);
            *v.normalized_mut(f) = if hi > lo {
                ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                0.5
            };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::CrowdId;

    fn counters(ca: f64, a: u64, op: f64, p: u64) -> MetricCounters {
        MetricCounters {
            correct_answers: ca,
            answers: a,
            original_posts: op,
            posts: p,
            ..Default::default()
        }
    }

    fn smoothing(mu: f64, n: usize) -> SmoothingParams {
        SmoothingParams {
            mu_correct_answers: mu,
            mu_original_posts: mu,
            mu_interest: mu,
            mu_questions_answered: mu,
            mu_conversational: mu,
            population: n,
        }
    }

    #[test]
    fn raw_qualification() {
        assert!((qualification_raw(&counters(2.0, 4, 3.0, 5)) - 1.1).abs() < 1e-12);
        assert_eq!(qualification_raw(&counters(0.0, 0, 0.0, 0)), 0.0);
        assert_eq!(qualification_raw(&counters(1.0, 1, 1.0, 1)), 2.0);
    }

    #[test]
    fn smoothed_qualification_limits() {
        assert!(
            (qualification(&MetricCounters::default(), &smoothing(0.5, 10)) - 0.1).abs() < 1e-12
        );
        let m = counters(2.0, 4, 3.0, 5);
        assert_eq!(
            qualification(&m, &SmoothingParams::disabled()),
            qualification_raw(&m)
        );
    }

    #[test]
    fn interest_examples() {
        let m = MetricCounters {
            posts: 20,
            posts_all: 20,
            ..Default::default()
        };
        assert_eq!(interest(&m, &SmoothingParams::disabled()), 1.0);
    }

    #[test]
    fn responsiveness_latency_floor() {
        let cfg = IndexConfig::default();
        let m = MetricCounters {
            response_hours: 0.01,
            responses: 1,
            ..Default::default()
        };
        let s = SmoothingParams::disabled();
        assert!((responsiveness(&m, &s, &cfg) - 10.0).abs() < 1e-12);
        let zero = responsiveness(&MetricCounters::default(), &smoothing(0.5, 5), &cfg);
        assert!((zero - 0.2).abs() < 1e-12);
    }

    #[test]
    fn activity_cases() {
        let cfg = IndexConfig::default();
        let now = 1_000 * SECONDS_PER_HOUR;
        let m = MetricCounters {
            last_question: Some(now - 3 * SECONDS_PER_HOUR),
            last_answer: Some(now - 5 * SECONDS_PER_HOUR),
            ..Default::default()
        };
        assert_eq!(activity(&m, now, &cfg), 3.0);
        assert_eq!(
            activity(&MetricCounters::default(), now, &cfg),
            cfg.activity_cap_hours()
        );
        let just = MetricCounters {
            last_answer: Some(now),
            ..Default::default()
        };
        assert_eq!(activity(&just, now, &cfg), 0.0);
        let old = MetricCounters {
            last_answer: Some(0),
            ..Default::default()
        };
        assert_eq!(activity(&old, now, &cfg), cfg.activity_cap_hours());
    }

    #[test]
    fn smoothing_means_skip_empty_denominators() {
        let pop = [
            MetricCounters {
                answers: 2,
                correct_answers: 1.0,
                posts: 4,
                posts_all: 8,
                original_posts: 4.0,
                ..Default::default()
            },
            MetricCounters {
                posts: 2,
                posts_all: 2,
                ..Default::default()
            },
        ];
        let s = SmoothingParams::from_population(pop.iter());
        assert_eq!(s.population, 2);
        assert_eq!(s.mu_correct_answers, 0.5);
        assert_eq!(s.mu_original_posts, 0.5);
        assert_eq!(s.mu_interest, 0.75);
        assert_eq!(s.mu_questions_answered, 0.0);
    }

    fn users(values: &[f64]) -> BTreeMap<UserId, FeatureVector> {
        let crowd = CrowdId::new("c").unwrap();
        values
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                (
                    UserId::new(crowd.clone(), format!("u{i}")).unwrap(),
                    FeatureVector {
                        qualification: x,
                        ..Default::default()
                    },
                )
            })
            .collect()
    }

    fn normalized(values: &[f64]) -> Vec<f64> {
        let mut m = users(values);
        normalize(&mut m);
        m.values().map(|v| v.qualification_n).collect()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalized(&[0.0, 0.5, 1.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalized(&[2.0, 2.0, 2.0]), vec![0.5, 0.5, 0.5]);
        assert_eq!(normalized(&[1.0, 3.0]), vec![0.0, 1.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn smoothed_features_monotone(
                ca in 0u32..50, a_extra in 0u64..50, op in 0u32..50, p_extra in 0u64..50,
                all_extra in 0u64..50, mu in 0.0f64..1.0, n in 1usize..100,
            ) {
                let a = ca as u64 + a_extra;
                let p = op as u64 + p_extra;
                let base = MetricCounters {
                    correct_answers: ca as f64, answers: a,
                    original_posts: op as f64, posts: p, posts_all: p + all_extra,
                    ..Default::default()
                };
                let s = smoothing(mu, n);
                let k1 = qualification(&base, &s);
                let k2 = interest(&base, &s);

                let mut more = base.clone();
                more.correct_answers += 1.0;
                prop_assert!(qualification(&more, &s) > k1);
                let mut more = base.clone();
                more.original_posts += 1.0;
                prop_assert!(qualification(&more, &s) > k1);
                let mut more = base.clone();
                more.answers += 1;
                prop_assert!(qualification(&more, &s) < k1);
                if base.posts < base.posts_all {
                    let mut more = base.clone();
                    more.posts += 1;
                    prop_assert!(interest(&more, &s) > k2);
                }
                let mut more = base.clone();
                more.posts_all += 1;
                prop_assert!(interest(&more, &s) < k2);
            }

            #[test]
            fn low_frequency_user_suppressed(mu in 0.0f64..0.999, n in 1usize..500) {
                let m = counters(1.0, 1, 1.0, 1);
                prop_assert!(qualification(&m, &smoothing(mu, n)) < qualification_raw(&m));
            }

            #[test]
            fn normalize_preserves_order(values in proptest::collection::vec(-5.0f64..5.0, 1..30)) {
                let mut m = users(&values);
                normalize(&mut m);
                let vs: Vec<_> = m.values().collect();
                for a in &vs {
                    prop_assert!((0.0..=1.0).contains(&a.qualification_n));
                    for b in &vs {
                        if a.qualification <= b.qualification {
                            prop_assert!(a.qualification_n <= b.qualification_n);
                        }
                    }
                }
            }
        }
    }
}
