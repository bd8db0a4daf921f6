//! Activity-event vocabulary and per-crowd adapter policies.
//!
//! Every raw action observed in a crowd becomes an [`ActivityEvent`]. A
//! [`CrowdPolicy`] describes how that crowd's events map onto the metric
//! vocabulary used by the feature index (posts, original posts,
//! conversational posts, answers, correct answers, questions).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seconds since the Unix epoch (UTC).
pub type Timestamp = i64;

pub const SECONDS_PER_HOUR: i64 = 3_600;
pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("crowd id must be non-empty")]
    EmptyCrowd,
    #[error("user handle must be non-empty")]
    EmptyHandle,
    #[error("topic label must be non-empty")]
    EmptyTopic,
    #[error("malformed user id `{0}` (expected `crowd:handle`)")]
    MalformedUser(String),
    #[error("event {event_id}: {reason}")]
    InvalidEvent {
        event_id: String,
        reason: &'static str,
    },
    #[error("event crowd `{event}` does not match policy crowd `{policy}`")]
    PolicyMismatch { event: CrowdId, policy: CrowdId },
    #[error("invalid policy for `{crowd}`: {reason}")]
    InvalidPolicy {
        crowd: CrowdId,
        reason: &'static str,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CrowdId(String);

impl CrowdId {
    pub fn new(id: impl Into<String>) -> Result<Self, ModelError> {
        let id = id.into().trim().to_string();
        if id.is_empty() {
            return Err(ModelError::EmptyCrowd);
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for CrowdId {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<CrowdId> for String {
    fn from(value: CrowdId) -> Self {
        value.0
    }
}

impl fmt::Display for CrowdId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A crowd member. Ordering is by crowd, then handle, which is also the
/// deterministic tie-break used throughout routing.
///
/// The textual form is `crowd:handle`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct UserId {
    pub crowd: CrowdId,
    pub handle: String,
}

impl UserId {
    pub fn new(crowd: CrowdId, handle: impl Into<String>) -> Result<Self, ModelError> {
        let handle = handle.into();
        if handle.trim().is_empty() {
            return Err(ModelError::EmptyHandle);
        }
        Ok(Self { crowd, handle })
    }
}

impl FromStr for UserId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (crowd, handle) = s
            .split_once(':')
            .ok_or_else(|| ModelError::MalformedUser(s.to_string()))?;
        UserId::new(CrowdId::new(crowd)?, handle)
    }
}

impl TryFrom<String> for UserId {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<UserId> for String {
    fn from(value: UserId) -> Self {
        value.to_string()
    }
}

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.crowd, self.handle)
    }
}

/// Normalized (trimmed, lower-cased) topic label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Topic(String);

impl Topic {
    pub fn new(label: impl AsRef<str>) -> Result<Self, ModelError> {
        let label = label.as_ref().trim().to_lowercase();
        if label.is_empty() {
            return Err(ModelError::EmptyTopic);
        }
        Ok(Self(label))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Hashtag form: whitespace removed, e.g. `silicon valley` -> `#siliconvalley`.
    pub fn hashtag(&self) -> String {
        let compact: String = self.0.chars().filter(|c| !c.is_whitespace()).collect();
        format!("#{compact}")
    }
}

impl TryFrom<String> for Topic {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Topic> for String {
    fn from(value: Topic) -> Self {
        value.0
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Post,
    Answer,
    Question,
    Blog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityEvent {
    pub event_id: String,
    pub crowd: CrowdId,
    pub author: UserId,
    pub topics: Vec<Topic>,
    pub timestamp: Timestamp,
    pub kind: EventKind,
    /// Addressed to another user.
    pub conversational: bool,
    /// Retweet-like re-share of someone else's content.
    pub repost: bool,
    pub addressed_to: Option<UserId>,
    pub in_reply_to: Option<String>,
    pub upvotes: u32,
    /// External correctness judgment, when one exists.
    pub correct_label: Option<bool>,
    /// Free text; only consulted by text-matching topic adapters.
    pub text: Option<String>,
}

impl ActivityEvent {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason| {
            Err(ModelError::InvalidEvent {
                event_id: self.event_id.clone(),
                reason,
            })
        };
        if self.event_id.trim().is_empty() {
            return fail("empty event id");
        }
        if self.timestamp <= 0 {
            return fail("timestamp must be positive");
        }
        if self.kind == EventKind::Answer && self.in_reply_to.is_none() {
            return fail("answer without in_reply_to");
        }
        if self.repost && self.conversational {
            return fail("repost cannot be conversational");
        }
        if self.author.crowd != self.crowd {
            return fail("author belongs to a different crowd");
        }
        if let Some(target) = &self.addressed_to {
            if target.crowd != self.crowd {
                return fail("addressed user belongs to a different crowd");
            }
        }
        Ok(())
    }
}

/// How a crowd decides that an answer is correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Correctness {
    /// Correct once the answer collected at least `k` upvotes.
    UpvoteThreshold { k: u32 },
    /// Correct only when an external judge set `correct_label = true`.
    ExplicitLabel,
}

/// Where an event's topics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicSource {
    /// Tags supplied with the event are trusted as-is.
    Tagged,
    /// Topics are found by case-insensitive substring match on the event text.
    TextMatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AskStrategy {
    IntroduceThenAsk,
    GreetThenAsk,
    Plain,
}

/// Message template for asking a crowd member.
///
/// `prefix` and `suffix` may contain the placeholders `{handle}`,
/// `{topic}` and `{hashtag}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AskTemplate {
    pub strategy: AskStrategy,
    #[serde(default)]
    pub prefix: String,
    #[serde(default)]
    pub suffix: String,
    #[serde(default)]
    pub max_length: Option<usize>,
}

pub const MIN_TEMPLATE_LENGTH: usize = 40;

impl AskTemplate {
    pub fn greet() -> Self {
        Self {
            strategy: AskStrategy::GreetThenAsk,
            prefix: "Hi @{handle}!".into(),
            suffix: "#ask {hashtag}".into(),
            max_length: Some(140),
        }
    }

    pub fn introduce() -> Self {
        Self {
            strategy: AskStrategy::IntroduceThenAsk,
            prefix: "Hi @{handle}, we route questions to people who know {topic}.".into(),
            suffix: "#ask {hashtag}".into(),
            max_length: Some(140),
        }
    }

    pub fn plain() -> Self {
        Self {
            strategy: AskStrategy::Plain,
            prefix: String::new(),
            suffix: String::new(),
            max_length: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrowdPolicy {
    pub crowd: CrowdId,
    pub correctness: Correctness,
    pub upvote_weighting: bool,
    /// Kinds (other than questions) that can be original posts when they
    /// are neither conversational nor reposts.
    pub original_kinds: Vec<EventKind>,
    pub question_is_original: bool,
    pub topic_source: TopicSource,
    pub template: AskTemplate,
}

impl CrowdPolicy {
    /// Microblog-style crowd: every message is a post, originals are
    /// non-conversational non-reposts, correctness comes from judges, and
    /// topics are matched in the text.
    pub fn twitter_like(crowd: CrowdId) -> Self {
        Self {
            crowd,
            correctness: Correctness::ExplicitLabel,
            upvote_weighting: false,
            original_kinds: vec![EventKind::Post, EventKind::Blog, EventKind::Answer],
            question_is_original: true,
            topic_source: TopicSource::TextMatch,
            template: AskTemplate::greet(),
        }
    }

    /// Q&A-site crowd: answers and blog posts are originals, questions are
    /// not, an answer with two upvotes is correct, upvotes weight quality,
    /// and content arrives tagged.
    pub fn quora_like(crowd: CrowdId) -> Self {
        Self {
            crowd,
            correctness: Correctness::UpvoteThreshold { k: 2 },
            upvote_weighting: true,
            original_kinds: vec![EventKind::Answer, EventKind::Blog],
            question_is_original: false,
            topic_source: TopicSource::Tagged,
            template: AskTemplate::plain(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason| {
            Err(ModelError::InvalidPolicy {
                crowd: self.crowd.clone(),
                reason,
            })
        };
        if let Correctness::UpvoteThreshold { k } = self.correctness {
            if k < 1 {
                return fail("upvote threshold must be at least 1");
            }
        }
        if let Some(max) = self.template.max_length {
            if max < MIN_TEMPLATE_LENGTH {
                return fail("template max_length must be at least 40");
            }
        }
        Ok(())
    }

    fn kind_can_be_original(&self, kind: EventKind) -> bool {
        match kind {
            EventKind::Question => self.question_is_original,
            other => self.original_kinds.contains(&other),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventClassification {
    pub is_post: bool,
    pub is_original_post: bool,
    pub is_conversational_post: bool,
    pub is_answer: bool,
    pub is_correct_answer: bool,
    pub is_question: bool,
}

/// Map an event onto the metric flags of its crowd's policy.
pub fn classify_event(
    event: &ActivityEvent,
    policy: &CrowdPolicy,
) -> Result<EventClassification, ModelError> {
    if event.crowd != policy.crowd {
        return Err(ModelError::PolicyMismatch {
            event: event.crowd.clone(),
            policy: policy.crowd.clone(),
        });
    }
    // Every kind is a post in both adapter families.
    let is_post = true;
    let is_conversational_post = is_post && event.conversational;
    let is_original_post = is_post
        && !event.conversational
        && !event.repost
        && policy.kind_can_be_original(event.kind);
    let is_answer = event.kind == EventKind::Answer;
    let is_correct_answer = is_answer
        && match policy.correctness {
            Correctness::UpvoteThreshold { k } => event.upvotes >= k,
            Correctness::ExplicitLabel => event.correct_label == Some(true),
        };
    Ok(EventClassification {
        is_post,
        is_original_post,
        is_conversational_post,
        is_answer,
        is_correct_answer,
        is_question: event.kind == EventKind::Question,
    })
}

/// Quality weight applied to original-post and correct-answer tallies.
pub fn event_weight(event: &ActivityEvent, policy: &CrowdPolicy) -> f64 {
    if policy.upvote_weighting {
        1.0 + f64::from(event.upvotes)
    } else {
        1.0
    }
}
