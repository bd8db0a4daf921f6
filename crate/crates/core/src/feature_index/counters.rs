//! Windowed metric tallies per (crowd, topic, user).

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::event_model::{CrowdId, Timestamp, Topic, UserId, SECONDS_PER_HOUR};
use crate::ingestion::{window_filter, ClassifiedEvent, Window};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TopicKey {
    pub crowd: CrowdId,
    pub topic: Topic,
}

impl TopicKey {
    pub fn new(crowd: CrowdId, topic: Topic) -> Self {
        Self { crowd, topic }
    }
}

impl std::fmt::Display for TopicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.crowd, self.topic)
    }
}

/// Raw tallies for one (crowd, user, topic) over one window.
///
/// Original-post and correct-answer tallies are weighted sums (upvote
/// weighting); everything else is a plain count.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricCounters {
    pub answers: u64,
    pub correct_answers: f64,
    /// On-topic posts.
    pub posts: u64,
    /// Posts over every topic of the same crowd and user.
    pub posts_all: u64,
    pub original_posts: f64,
    pub conversational_posts: u64,
    /// Questions addressed or routed to the user.
    pub questions_presented: u64,
    /// Deduplicated per question.
    pub questions_answered: u64,
    /// Sum of response latencies, hours.
    pub response_hours: f64,
    pub responses: u64,
    pub last_question: Option<Timestamp>,
    pub last_answer: Option<Timestamp>,
}

impl MetricCounters {
    pub fn mean_response_hours(&self) -> Option<f64> {
        (self.responses > 0).then(|| self.response_hours / self.responses as f64)
    }

    pub fn present_question(&mut self, at: Timestamp) {
        self.questions_presented += 1;
        self.last_question = Some(self.last_question.map_or(at, |t| t.max(at)));
    }

    pub fn mark_answer(&mut self, at: Timestamp) {
        self.last_answer = Some(self.last_answer.map_or(at, |t| t.max(at)));
    }

    pub fn record_response(&mut self, hours: f64) {
        self.response_hours += hours;
        self.responses += 1;
    }

    /// True when nothing was observed for this user in the window.
    pub fn is_empty(&self) -> bool {
        self.posts == 0
            && self.answers == 0
            && self.questions_presented == 0
            && self.questions_answered == 0
    }

    /// Fold in a routed ask.
    pub fn apply_ask(&mut self, ask: &AskRecord) {
        self.present_question(ask.issued_at);
    }

    /// Fold in a (first) answer to a routed question.
    pub fn apply_answer(&mut self, answer: &AnswerRecord) {
        self.answers += 1;
        if answer.correct == Some(true) {
            self.correct_answers += 1.0;
        }
        self.mark_answer(answer.answered_at);
        self.questions_answered += 1;
        if let Some(hours) = answer.latency_hours {
            self.record_response(hours);
        }
    }
}

/// One question pushed to a user by the router.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AskRecord {
    pub question_id: String,
    pub user: UserId,
    pub topic: Topic,
    pub issued_at: Timestamp,
}

/// A resolved answer to a routed question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: String,
    pub responder: UserId,
    pub topic: Topic,
    pub answered_at: Timestamp,
    pub correct: Option<bool>,
    /// Present only when the responder was asked directly.
    pub latency_hours: Option<f64>,
}

pub type UserCounters = BTreeMap<UserId, MetricCounters>;
pub type CounterTable = BTreeMap<TopicKey, UserCounters>;

fn slot<'t>(table: &'t mut CounterTable, topic: &Topic, user: &UserId) -> &'t mut MetricCounters {
    table
        .entry(TopicKey::new(user.crowd.clone(), topic.clone()))
        .or_default()
        .entry(user.clone())
        .or_default()
}

/// Tally the events that fall inside `window` as seen at `now`.
pub fn accumulate(events: &[ClassifiedEvent], window: Window, now: Timestamp) -> CounterTable {
    accumulate_sources(events, &[], &[], window, now)
}

/// Tally log events plus routed asks and their answers.
///
/// Question lookups for response latency span the whole log, so an answer
/// inside the window to a question outside it still carries its latency.
pub fn accumulate_sources(
    events: &[ClassifiedEvent],
    asks: &[AskRecord],
    answers: &[AnswerRecord],
    window: Window,
    now: Timestamp,
) -> CounterTable {
    let questions: HashMap<&str, (Timestamp, Option<&UserId>)> = events
        .iter()
        .filter(|e| e.class.is_question)
        .map(|e| {
            (
                e.event.event_id.as_str(),
                (e.event.timestamp, e.event.addressed_to.as_ref()),
            )
        })
        .collect();

    let mut table = CounterTable::new();
    let mut posts_all: HashMap<UserId, u64> = HashMap::new();
    let mut answered: HashSet<(UserId, Topic, String)> = HashSet::new();

    for classified in window_filter(events, window, now) {
        let event = &classified.event;
        let class = &classified.class;
        let author = &event.author;
        if class.is_post {
            *posts_all.entry(author.clone()).or_default() += 1;
        }
        for topic in &event.topics {
            let m = slot(&mut table, topic, author);
            if class.is_post {
                m.posts += 1;
                if class.is_original_post {
                    m.original_posts += classified.weight;
                }
                if class.is_conversational_post {
                    m.conversational_posts += 1;
                }
            }
            if class.is_answer {
                m.answers += 1;
                if class.is_correct_answer {
                    m.correct_answers += classified.weight;
                }
                m.mark_answer(event.timestamp);
                if let Some(question) = &event.in_reply_to {
                    let first = answered.insert((author.clone(), topic.clone(), question.clone()));
                    if first {
                        m.questions_answered += 1;
                        if let Some(&(asked_at, Some(target))) = questions.get(question.as_str()) {
                            if target == author && event.timestamp >= asked_at {
                                m.record_response(
                                    (event.timestamp - asked_at) as f64 / SECONDS_PER_HOUR as f64,
                                );
                            }
                        }
                    }
                }
            }
            if class.is_question {
                if let Some(target) = &event.addressed_to {
                    slot(&mut table, topic, target).present_question(event.timestamp);
                }
            }
        }
    }

    for ask in asks.iter().filter(|a| window.contains(a.issued_at, now)) {
        slot(&mut table, &ask.topic, &ask.user).apply_ask(ask);
    }

    for answer in answers
        .iter()
        .filter(|a| window.contains(a.answered_at, now))
    {
        let first = answered.insert((
            answer.responder.clone(),
            answer.topic.clone(),
            answer.question_id.clone(),
        ));
        if !first {
            continue;
        }
        slot(&mut table, &answer.topic, &answer.responder).apply_answer(answer);
    }

    for users in table.values_mut() {
        for (user, m) in users.iter_mut() {
            m.posts_all = posts_all.get(user).copied().unwrap_or(0);
        }
    }
    table
}
