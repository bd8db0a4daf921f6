//! Two-stage routing: split the budget across crowds by crowd score, then
//! walk each crowd's skyline middle-out and compose the ask messages.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crowd_summary::{
    balanced_representatives, score, summarize, CrowdSummary, ScoreWeights, SummaryError,
    DEFAULT_REPRESENTATIVES,
};
use crate::event_model::{
    AskStrategy, CrowdId, CrowdPolicy, Timestamp, Topic, UserId, SECONDS_PER_HOUR,
};
use crate::feature_index::{
    activity, AnswerOutcome, AnswerRecord, AskRecord, FeatureIndex, TopicKey,
};
use crate::ingestion::PolicySet;
use crate::skyline::{build_skyline, SkylineConfig, SkylineError, SkylineLevels};

/// Relative score gap below which the budget is split equally.
pub const EQUAL_SPLIT_GAP: f64 = 0.25;
// Absorbs rounding in the gap and quota arithmetic so that exact
// boundaries behave as they would over the rationals.
const EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("no viable crowd: every crowd score is zero or no crowd has candidates")]
    NoViableCrowd,
    #[error("crowd {0} has an invalid score {1}")]
    InvalidScore(CrowdId, f64),
    #[error("invalid task: {0}")]
    InvalidTask(&'static str),
    #[error("message for {user} is {overflow} characters over the {max_length} limit")]
    MessageTooLong {
        user: UserId,
        overflow: usize,
        max_length: usize,
    },
    #[error("index for {key} is {age_hours:.1}h old, beyond the {bound_hours}h staleness bound")]
    StaleIndex {
        key: TopicKey,
        age_hours: f64,
        bound_hours: f64,
    },
    #[error("unknown question id {0}")]
    UnknownQuestion(String),
    #[error("answer by {responder} at {answered_at} precedes the ask at {issued_at}")]
    AnswerBeforeAsk {
        responder: UserId,
        answered_at: Timestamp,
        issued_at: Timestamp,
    },
    #[error(transparent)]
    Skyline(#[from] SkylineError),
    #[error(transparent)]
    Summary(#[from] SummaryError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTask {
    pub question_id: String,
    pub text: String,
    pub topic: Topic,
    pub budget: usize,
}

impl QuestionTask {
    pub fn validate(&self) -> Result<(), RouterError> {
        if self.question_id.trim().is_empty() {
            return Err(RouterError::InvalidTask("question_id must be non-empty"));
        }
        if self.text.trim().is_empty() {
            return Err(RouterError::InvalidTask("text must be non-empty"));
        }
        if self.budget == 0 {
            return Err(RouterError::InvalidTask("budget must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    EqualSplit,
    Proportional,
}

/// One ask in a plan; also the record format of the plan log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedAsk {
    pub question_id: String,
    pub user: UserId,
    pub topic: Topic,
    pub level: usize,
    pub message: String,
    pub issued_at: Timestamp,
}

impl PlannedAsk {
    pub fn record(&self) -> AskRecord {
        AskRecord {
            question_id: self.question_id.clone(),
            user: self.user.clone(),
            topic: self.topic.clone(),
            issued_at: self.issued_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingPlan {
    pub question_id: String,
    pub topic: Topic,
    pub budget: usize,
    pub mode: SplitMode,
    pub scores: BTreeMap<CrowdId, f64>,
    pub allocations: BTreeMap<CrowdId, usize>,
    pub asks: Vec<PlannedAsk>,
    /// Allocated asks that found no eligible candidate.
    pub shortfall: BTreeMap<CrowdId, usize>,
}

impl RoutingPlan {
    pub fn total_shortfall(&self) -> usize {
        self.shortfall.values().sum()
    }

    pub fn asks_for(&self, crowd: &CrowdId) -> impl Iterator<Item = &PlannedAsk> {
        let crowd = crowd.clone();
        self.asks.iter().filter(move |a| a.user.crowd == crowd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub question_id: String,
    pub responder: UserId,
    pub answered_at: Timestamp,
    #[serde(default)]
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RouterConfig {
    pub representatives: usize,
    /// Minimum hours since a user's last Q&A on the topic before re-asking.
    pub activity_gate_hours: f64,
    /// Maximum age of a topic's knowledge features before routing refuses.
    pub staleness_hours: f64,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            representatives: DEFAULT_REPRESENTATIVES,
            activity_gate_hours: 24.0,
            staleness_hours: 48.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RouteParams {
    pub weights: ScoreWeights,
    pub router: RouterConfig,
    pub skyline: SkylineConfig,
}

fn remainder_order<'a>(
    scores: &'a BTreeMap<CrowdId, f64>,
    key: impl Fn(&CrowdId) -> i64 + 'a,
) -> Vec<&'a CrowdId> {
    let mut ids: Vec<&CrowdId> = scores.keys().collect();
    ids.sort_by(|a, b| {
        key(b)
            .cmp(&key(a))
            .then_with(|| scores[*b].total_cmp(&scores[*a]))
            .then_with(|| a.cmp(b))
    });
    ids
}

/// Divide `budget` asks among crowds.
///
/// If the gap between the best and worst score, relative to the best, is
/// under 25% every crowd gets an equal share; otherwise shares follow the
/// scores with largest-remainder rounding. Leftover units go to higher
/// scores first, then to the lexicographically smaller crowd id.
pub fn split_budget(
    scores: &BTreeMap<CrowdId, f64>,
    budget: usize,
) -> Result<(BTreeMap<CrowdId, usize>, SplitMode), RouterError> {
    for (crowd, &s) in scores {
        if !s.is_finite() || s < 0.0 {
            return Err(RouterError::InvalidScore(crowd.clone(), s));
        }
    }
    let max = scores.values().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(RouterError::NoViableCrowd);
    }
    let min = scores.values().copied().fold(f64::INFINITY, f64::min);
    let mut alloc: BTreeMap<CrowdId, usize> = scores.keys().map(|c| (c.clone(), 0)).collect();

    if (max - min) / max < EQUAL_SPLIT_GAP - EPS {
        let k = scores.len();
        for v in alloc.values_mut() {
            *v = budget / k;
        }
        for crowd in remainder_order(scores, |_| 0).into_iter().take(budget % k) {
            *alloc.get_mut(crowd).expect("present") += 1;
        }
        return Ok((alloc, SplitMode::EqualSplit));
    }

    let total: f64 = scores.values().sum();
    let mut fractions: BTreeMap<CrowdId, i64> = BTreeMap::new();
    let mut assigned = 0;
    for (crowd, &s) in scores {
        let quota = budget as f64 * s / total;
        let nearest = quota.round();
        let whole = if (quota - nearest).abs() < EPS {
            nearest
        } else {
            quota.floor()
        };
        let frac = ((quota - whole).max(0.0) / EPS).round() as i64;
        alloc.insert(crowd.clone(), whole as usize);
        fractions.insert(crowd.clone(), frac);
        assigned += whole as usize;
    }
    let left = budget.saturating_sub(assigned);
    for crowd in remainder_order(scores, |c| fractions[c])
        .into_iter()
        .take(left)
    {
        *alloc.get_mut(crowd).expect("present") += 1;
    }
    Ok((alloc, SplitMode::Proportional))
}

/// Visiting order of `n` sorted items: the middle, then alternately one
/// step below and above.
pub fn middle_out(n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let mid = n / 2;
    out.push(mid);
    for step in 1..=n {
        if step <= mid {
            out.push(mid - step);
        }
        if mid + step < n {
            out.push(mid + step);
        }
    }
    out
}

/// Pick up to `allocation` users, level by level, each level sorted by its
/// availability axis and walked middle-out. Users rejected by `eligible`
/// are skipped.
pub fn order_candidates(
    levels: &SkylineLevels,
    allocation: usize,
    mut eligible: impl FnMut(&UserId) -> bool,
) -> Vec<(UserId, usize)> {
    let axis = levels.dims.availability_axis();
    let mut out = Vec::new();
    for (k, level) in levels.levels.iter().enumerate() {
        let mut sorted: Vec<_> = level.iter().collect();
        sorted.sort_by(|a, b| {
            a.coords[axis]
                .total_cmp(&b.coords[axis])
                .then_with(|| a.user.cmp(&b.user))
        });
        for i in middle_out(sorted.len()) {
            if out.len() == allocation {
                return out;
            }
            let user = &sorted[i].user;
            if eligible(user) {
                out.push((user.clone(), k + 1));
            }
        }
    }
    out
}

fn fill(template: &str, user: &UserId, topic: &Topic) -> String {
    template
        .replace("{handle}", &user.handle)
        .replace("{hashtag}", &topic.hashtag())
        .replace("{topic}", topic.as_str())
}

/// Render the ask for one user. Never truncates: a message over the
/// template's limit is an error.
pub fn compose_ask(
    task: &QuestionTask,
    user: &UserId,
    policy: &CrowdPolicy,
) -> Result<String, RouterError> {
    let t = &policy.template;
    let text = task.text.trim();
    let message = match t.strategy {
        AskStrategy::Plain if t.prefix.is_empty() && t.suffix.is_empty() => text.to_string(),
        _ => [
            fill(&t.prefix, user, &task.topic),
            text.to_string(),
            fill(&t.suffix, user, &task.topic),
        ]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" "),
    };
    if let Some(max) = t.max_length {
        let len = message.chars().count();
        if len > max {
            return Err(RouterError::MessageTooLong {
                user: user.clone(),
                overflow: len - max,
                max_length: max,
            });
        }
    }
    Ok(message)
}

/// Per-crowd intermediate results of a routing decision.
#[derive(Debug, Clone, PartialEq)]
pub struct CrowdCandidates {
    pub crowd: CrowdId,
    pub skyline: SkylineLevels,
    pub summary: CrowdSummary,
    pub score: f64,
}

/// Skylines, summaries and scores of every crowd with candidates on `topic`.
pub fn crowd_candidates(
    index: &FeatureIndex,
    policies: &PolicySet,
    topic: &Topic,
    params: &RouteParams,
    now: Timestamp,
) -> Result<Vec<CrowdCandidates>, RouterError> {
    let mut skylines = Vec::new();
    for crowd in policies.keys() {
        let key = TopicKey::new(crowd.clone(), topic.clone());
        let Some(state) = index.topic(&key) else {
            continue;
        };
        let current = index
            .knowledge_current_at(&key)
            .unwrap_or(state.knowledge_at);
        let age_hours = (now - current) as f64 / SECONDS_PER_HOUR as f64;
        if age_hours > params.router.staleness_hours {
            return Err(RouterError::StaleIndex {
                key,
                age_hours,
                bound_hours: params.router.staleness_hours,
            });
        }
        let skyline = build_skyline(&state.features, &params.skyline)?;
        if !skyline.is_empty() {
            skylines.push((crowd.clone(), skyline));
        }
    }
    let r = balanced_representatives(
        params.router.representatives,
        skylines.iter().map(|(_, s)| s.len()),
    );
    skylines
        .into_iter()
        .map(|(crowd, skyline)| {
            let key = TopicKey::new(crowd.clone(), topic.clone());
            let features = &index.topic(&key).expect("present").features;
            let summary = summarize(crowd.clone(), topic.clone(), &skyline, features, r)?;
            let score = score(&summary, &params.weights);
            Ok(CrowdCandidates {
                crowd,
                skyline,
                summary,
                score,
            })
        })
        .collect()
}

/// Hours since the user's last question or answer on the topic, as of `now`.
pub fn live_activity_hours(
    index: &FeatureIndex,
    key: &TopicKey,
    user: &UserId,
    now: Timestamp,
) -> f64 {
    let cfg = index.config();
    index
        .topic(key)
        .and_then(|s| s.counters.get(user))
        .map_or(cfg.activity_cap_hours(), |c| {
            activity(&c.activity, now, cfg)
        })
}

/// Build a plan for `task` without changing the index.
pub fn route(
    task: &QuestionTask,
    index: &FeatureIndex,
    policies: &PolicySet,
    params: &RouteParams,
    now: Timestamp,
) -> Result<RoutingPlan, RouterError> {
    task.validate()?;
    let crowds = crowd_candidates(index, policies, &task.topic, params, now)?;
    let scores: BTreeMap<CrowdId, f64> =
        crowds.iter().map(|c| (c.crowd.clone(), c.score)).collect();
    if scores.is_empty() {
        return Err(RouterError::NoViableCrowd);
    }
    let (allocations, mode) = split_budget(&scores, task.budget)?;
    let already: BTreeSet<&UserId> = index
        .asks_for(&task.question_id)
        .iter()
        .map(|a| &a.user)
        .collect();

    let mut asks = Vec::new();
    let mut shortfall = BTreeMap::new();
    for c in &crowds {
        let allocation = allocations[&c.crowd];
        let key = TopicKey::new(c.crowd.clone(), task.topic.clone());
        let chosen = order_candidates(&c.skyline, allocation, |u| {
            !already.contains(u)
                && live_activity_hours(index, &key, u, now) >= params.router.activity_gate_hours
        });
        shortfall.insert(c.crowd.clone(), allocation - chosen.len());
        let policy = &policies[&c.crowd];
        for (user, level) in chosen {
            let message = compose_ask(task, &user, policy)?;
            asks.push(PlannedAsk {
                question_id: task.question_id.clone(),
                user,
                topic: task.topic.clone(),
                level,
                message,
                issued_at: now,
            });
        }
    }
    Ok(RoutingPlan {
        question_id: task.question_id.clone(),
        topic: task.topic.clone(),
        budget: task.budget,
        mode,
        scores,
        allocations,
        asks,
        shortfall,
    })
}

/// Record every ask of the plan as a routing event.
pub fn issue(plan: &RoutingPlan, index: &mut FeatureIndex, now: Timestamp) {
    for ask in &plan.asks {
        index.record_ask(ask.record(), now);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackOutcome {
    /// The responder was one of the users asked.
    pub solicited: bool,
    pub duplicate: bool,
    pub latency_hours: Option<f64>,
}

/// The answer record a feedback line stands for, given the asks issued for
/// its question. Latency is known only when the responder was asked.
pub fn answer_record(fb: &FeedbackEvent, asks: &[&AskRecord]) -> Result<AnswerRecord, RouterError> {
    let Some(first) = asks.first() else {
        return Err(RouterError::UnknownQuestion(fb.question_id.clone()));
    };
    let own = asks
        .iter()
        .find(|a| a.user == fb.responder)
        .map(|a| a.issued_at);
    let latency_hours = match own {
        Some(issued_at) if fb.answered_at < issued_at => {
            return Err(RouterError::AnswerBeforeAsk {
                responder: fb.responder.clone(),
                answered_at: fb.answered_at,
                issued_at,
            })
        }
        Some(issued_at) => Some((fb.answered_at - issued_at) as f64 / SECONDS_PER_HOUR as f64),
        None => None,
    };
    Ok(AnswerRecord {
        question_id: fb.question_id.clone(),
        responder: fb.responder.clone(),
        topic: first.topic.clone(),
        answered_at: fb.answered_at,
        correct: fb.correct,
        latency_hours,
    })
}

/// Fold an answer to a routed question into the index.
pub fn apply_feedback(
    fb: &FeedbackEvent,
    index: &mut FeatureIndex,
    now: Timestamp,
) -> Result<FeedbackOutcome, RouterError> {
    let record = answer_record(fb, &index.asks_for(&fb.question_id))?;
    let latency_hours = record.latency_hours;
    let outcome = index.record_answer(record, now);
    Ok(FeedbackOutcome {
        solicited: latency_hours.is_some(),
        duplicate: outcome == AnswerOutcome::Duplicate,
        latency_hours,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::AskTemplate;
    use crate::skyline::{CandidatePoint, Dims};

    fn crowd(id: &str) -> CrowdId {
        CrowdId::new(id).unwrap()
    }

    fn scores(pairs: &[(&str, f64)]) -> BTreeMap<CrowdId, f64> {
        pairs.iter().map(|&(c, s)| (crowd(c), s)).collect()
    }

    fn split(pairs: &[(&str, f64)], b: usize) -> (Vec<usize>, SplitMode) {
        let (alloc, mode) = split_budget(&scores(pairs), b).unwrap();
        (alloc.into_values().collect(), mode)
    }

    #[test]
    fn budget_examples() {
        assert_eq!(
            split(&[("a", 0.8), ("b", 0.7)], 10),
            (vec![5, 5], SplitMode::EqualSplit)
        );
        assert_eq!(
            split(&[("a", 0.9), ("b", 0.3)], 10),
            (vec![8, 2], SplitMode::Proportional)
        );
        assert_eq!(
            split(&[("a", 0.5), ("b", 0.5)], 8),
            (vec![4, 4], SplitMode::EqualSplit)
        );
    }

    #[test]
    fn budget_tie_breaks() {
        // Odd unit to the higher score.
        assert_eq!(split(&[("a", 0.7), ("b", 0.8)], 5).0, vec![2, 3]);
        // Equal scores: smaller crowd id.
        assert_eq!(split(&[("a", 0.5), ("b", 0.5)], 5).0, vec![3, 2]);
        // Exactly 25% apart is not "under 25%".
        assert_eq!(
            split(&[("a", 1.0), ("b", 0.75)], 7),
            (vec![4, 3], SplitMode::Proportional)
        );
        // Three crowds, proportional.
        let (v, mode) = split(&[("a", 0.6), ("b", 0.3), ("c", 0.1)], 10);
        assert_eq!((v, mode), (vec![6, 3, 1], SplitMode::Proportional));
    }

    #[test]
    fn budget_errors() {
        assert!(matches!(
            split_budget(&scores(&[("a", 0.0), ("b", 0.0)]), 4),
            Err(RouterError::NoViableCrowd)
        ));
        assert!(matches!(
            split_budget(&BTreeMap::new(), 4),
            Err(RouterError::NoViableCrowd)
        ));
        assert!(matches!(
            split_budget(&scores(&[("a", f64::NAN)]), 4),
            Err(RouterError::InvalidScore(..))
        ));
        assert_eq!(split(&[("a", 0.5), ("b", 0.0)], 4).0, vec![4, 0]);
    }

    #[test]
    fn middle_out_examples() {
        assert_eq!(middle_out(5), vec![2, 1, 3, 0, 4]);
        assert_eq!(middle_out(4), vec![2, 1, 3, 0]);
        assert_eq!(middle_out(1), vec![0]);
        assert!(middle_out(0).is_empty());
    }

    fn user(h: &str) -> UserId {
        UserId::new(crowd("c"), h).unwrap()
    }

    fn level_of(points: &[(&str, f64)]) -> Vec<CandidatePoint> {
        points
            .iter()
            .map(|&(h, a)| CandidatePoint::new(user(h), vec![0.5, 0.5, a, 0.5]))
            .collect()
    }

    fn levels(ls: Vec<Vec<CandidatePoint>>) -> SkylineLevels {
        SkylineLevels {
            levels: ls,
            pruned: Vec::new(),
            dims: Dims::Four,
            unassigned: 0,
        }
    }

    #[test]
    fn ordering_is_middle_out_by_availability() {
        // Stored out of order; sorted by responsiveness gives u1..u5.
        let lv = levels(vec![level_of(&[
            ("u4", 0.4),
            ("u1", 0.1),
            ("u5", 0.5),
            ("u3", 0.3),
            ("u2", 0.2),
        ])]);
        let names =
            |v: Vec<(UserId, usize)>| v.into_iter().map(|(u, _)| u.handle).collect::<Vec<_>>();
        assert_eq!(
            names(order_candidates(&lv, 5, |_| true)),
            ["u3", "u2", "u4", "u1", "u5"]
        );
        assert_eq!(names(order_candidates(&lv, 1, |_| true)), ["u3"]);
        assert_eq!(
            names(order_candidates(&lv, 3, |u| u.handle != "u3")),
            ["u2", "u4", "u1"]
        );
    }

    #[test]
    fn ordering_spills_into_next_level() {
        let lv = levels(vec![
            level_of(&[("a", 0.1), ("b", 0.2)]),
            level_of(&[("c", 0.1), ("d", 0.2), ("e", 0.3)]),
        ]);
        let got = order_candidates(&lv, 4, |_| true);
        let got: Vec<_> = got.iter().map(|(u, l)| (u.handle.as_str(), *l)).collect();
        assert_eq!(got, [("b", 1), ("a", 1), ("d", 2), ("c", 2)]);
    }

    fn task(text: &str) -> QuestionTask {
        QuestionTask {
            question_id: "q1".into(),
            text: text.into(),
            topic: Topic::new("motorbiking").unwrap(),
            budget: 1,
        }
    }

    #[test]
    fn compose_examples() {
        let tw = CrowdPolicy::twitter_like(crowd("twitter-like"));
        let u = UserId::new(crowd("twitter-like"), "user").unwrap();
        assert_eq!(
            compose_ask(
                &task("Do you think motorbiking is popular among women in USA?"),
                &u,
                &tw
            )
            .unwrap(),
            "Hi @user! Do you think motorbiking is popular among women in USA? #ask #motorbiking"
        );
        let qu = CrowdPolicy::quora_like(crowd("quora-like"));
        let q = UserId::new(crowd("quora-like"), "user").unwrap();
        assert_eq!(
            compose_ask(
                &task("How popular is motorbiking among women in USA?"),
                &q,
                &qu
            )
            .unwrap(),
            "How popular is motorbiking among women in USA?"
        );
        let long = "x".repeat(200);
        match compose_ask(&task(&long), &u, &tw) {
            Err(RouterError::MessageTooLong {
                overflow,
                max_length,
                ..
            }) => {
                let full = "Hi @user! ".len() + 200 + " #ask #motorbiking".len();
                assert_eq!((overflow, max_length), (full - 140, 140));
            }
            other => panic!("expected overflow error, got {other:?}"),
        }
    }

    #[test]
    fn introduce_template_mentions_topic() {
        let mut p = CrowdPolicy::twitter_like(crowd("t"));
        p.template = AskTemplate::introduce();
        p.template.max_length = None;
        let u = UserId::new(crowd("t"), "ann").unwrap();
        let m = compose_ask(&task("Any tips?"), &u, &p).unwrap();
        assert_eq!(
            m,
            "Hi @ann, we route questions to people who know motorbiking. Any tips? #ask #motorbiking"
        );
    }

    #[test]
    fn task_validation() {
        assert!(task("   ").validate().is_err());
        let mut t = task("ok?");
        t.budget = 0;
        assert!(t.validate().is_err());
    }
}
