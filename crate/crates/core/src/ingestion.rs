//! Line-delimited event log ingestion.
//!
//! Each line of an event log is one JSON object with the fields
//! `event_id, crowd, author, topics, timestamp, kind, conversational,
//! repost, addressed_to, in_reply_to, upvotes, correct_label` (plus an
//! optional `text`). Unknown fields are ignored. Malformed or invalid lines
//! are counted and skipped; only I/O failures abort ingestion.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_model::{
    classify_event, event_weight, ActivityEvent, CrowdId, CrowdPolicy, EventClassification,
    EventKind, ModelError, Timestamp, Topic, TopicSource, UserId, SECONDS_PER_DAY,
    SECONDS_PER_HOUR,
};

pub type PolicySet = BTreeMap<CrowdId, CrowdPolicy>;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read event log {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// On-disk form of one event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event_id: String,
    pub crowd: String,
    pub author: String,
    #[serde(default)]
    pub topics: Vec<String>,
    pub timestamp: i64,
    pub kind: EventKind,
    #[serde(default)]
    pub conversational: bool,
    #[serde(default)]
    pub repost: bool,
    #[serde(default)]
    pub addressed_to: Option<String>,
    #[serde(default)]
    pub in_reply_to: Option<String>,
    #[serde(default)]
    pub upvotes: i64,
    #[serde(default)]
    pub correct_label: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

impl From<&ActivityEvent> for EventRecord {
    fn from(e: &ActivityEvent) -> Self {
        Self {
            event_id: e.event_id.clone(),
            crowd: e.crowd.to_string(),
            author: e.author.handle.clone(),
            topics: e.topics.iter().map(|t| t.to_string()).collect(),
            timestamp: e.timestamp,
            kind: e.kind,
            conversational: e.conversational,
            repost: e.repost,
            addressed_to: e.addressed_to.as_ref().map(|u| u.handle.clone()),
            in_reply_to: e.in_reply_to.clone(),
            upvotes: i64::from(e.upvotes),
            correct_label: e.correct_label,
            text: e.text.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RejectReason {
    EmptyLine,
    Malformed,
    UnknownCrowd,
    InvalidEvent,
    DuplicateEventId,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::EmptyLine => "empty_line",
            RejectReason::Malformed => "malformed",
            RejectReason::UnknownCrowd => "unknown_crowd",
            RejectReason::InvalidEvent => "invalid_event",
            RejectReason::DuplicateEventId => "duplicate_event_id",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub rejected: usize,
    pub reject_reasons: BTreeMap<String, usize>,
    pub time_range: Option<(Timestamp, Timestamp)>,
}

impl IngestReport {
    pub fn total(&self) -> usize {
        self.accepted + self.rejected
    }

    fn reject(&mut self, reason: RejectReason) {
        self.rejected += 1;
        *self
            .reject_reasons
            .entry(reason.as_str().to_string())
            .or_default() += 1;
    }
}

/// An event after topic tagging and classification under its crowd policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedEvent {
    pub event: ActivityEvent,
    pub class: EventClassification,
    pub weight: f64,
}

impl ClassifiedEvent {
    pub fn classify(event: ActivityEvent, policy: &CrowdPolicy) -> Result<Self, ModelError> {
        let class = classify_event(&event, policy)?;
        let weight = event_weight(&event, policy);
        Ok(Self {
            event,
            class,
            weight,
        })
    }
}

/// Sort key enforcing the (timestamp, event_id) total order.
pub fn sort_events(events: &mut [ClassifiedEvent]) {
    events.sort_by(|a, b| {
        (a.event.timestamp, &a.event.event_id).cmp(&(b.event.timestamp, &b.event.event_id))
    });
}

/// Assign topics to an event according to the crowd's adapter.
///
/// Tagged crowds keep their tags; text-matched crowds add every topic of
/// the universe whose label occurs in the text (case-insensitive). A
/// non-empty universe restricts the result to its members.
pub fn tag_topics(event: &mut ActivityEvent, policy: &CrowdPolicy, universe: &[Topic]) {
    let mut topics: Vec<Topic> = event.topics.clone();
    if policy.topic_source == TopicSource::TextMatch {
        if let Some(text) = &event.text {
            let lowered = text.to_lowercase();
            topics.extend(
                universe
                    .iter()
                    .filter(|t| lowered.contains(t.as_str()))
                    .cloned(),
            );
        }
    }
    if !universe.is_empty() {
        topics.retain(|t| universe.contains(t));
    }
    topics.sort();
    topics.dedup();
    event.topics = topics;
}

fn parse_record(record: EventRecord) -> Result<ActivityEvent, RejectReason> {
    let crowd = CrowdId::new(record.crowd).map_err(|_| RejectReason::InvalidEvent)?;
    let author =
        UserId::new(crowd.clone(), record.author).map_err(|_| RejectReason::InvalidEvent)?;
    let addressed_to = match record.addressed_to {
        Some(handle) => {
            Some(UserId::new(crowd.clone(), handle).map_err(|_| RejectReason::InvalidEvent)?)
        }
        None => None,
    };
    let topics = record
        .topics
        .iter()
        .map(Topic::new)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| RejectReason::InvalidEvent)?;
    let upvotes = u32::try_from(record.upvotes).map_err(|_| RejectReason::InvalidEvent)?;
    let event = ActivityEvent {
        event_id: record.event_id,
        crowd,
        author,
        topics,
        timestamp: record.timestamp,
        kind: record.kind,
        conversational: record.conversational,
        repost: record.repost,
        addressed_to,
        in_reply_to: record.in_reply_to,
        upvotes,
        correct_label: record.correct_label,
        text: record.text,
    };
    event.validate().map_err(|_| RejectReason::InvalidEvent)?;
    Ok(event)
}

/// Accumulates events from one or more logs, dropping duplicate ids
/// (first occurrence wins).
pub struct Ingestor<'a> {
    policies: &'a PolicySet,
    universe: &'a [Topic],
    seen: HashSet<String>,
    events: Vec<ClassifiedEvent>,
    report: IngestReport,
}

impl<'a> Ingestor<'a> {
    pub fn new(policies: &'a PolicySet, universe: &'a [Topic]) -> Self {
        Self {
            policies,
            universe,
            seen: HashSet::new(),
            events: Vec::new(),
            report: IngestReport::default(),
        }
    }

    /// Mark ids as already ingested, e.g. from a previously stored log.
    pub fn with_known_ids(mut self, ids: impl IntoIterator<Item = String>) -> Self {
        self.seen.extend(ids);
        self
    }

    pub fn feed_line(&mut self, line: &str) {
        match self.process_line(line) {
            Ok(event) => {
                let ts = event.event.timestamp;
                self.report.accepted += 1;
                self.report.time_range = Some(match self.report.time_range {
                    Some((lo, hi)) => (lo.min(ts), hi.max(ts)),
                    None => (ts, ts),
                });
                self.events.push(event);
            }
            Err(reason) => self.report.reject(reason),
        }
    }

    fn process_line(&mut self, line: &str) -> Result<ClassifiedEvent, RejectReason> {
        if line.trim().is_empty() {
            return Err(RejectReason::EmptyLine);
        }
        let record: EventRecord =
            serde_json::from_str(line).map_err(|_| RejectReason::Malformed)?;
        let mut event = parse_record(record)?;
        let policy = self
            .policies
            .get(&event.crowd)
            .ok_or(RejectReason::UnknownCrowd)?;
        if self.seen.contains(&event.event_id) {
            return Err(RejectReason::DuplicateEventId);
        }
        tag_topics(&mut event, policy, self.universe);
        let classified =
            ClassifiedEvent::classify(event, policy).map_err(|_| RejectReason::InvalidEvent)?;
        self.seen.insert(classified.event.event_id.clone());
        Ok(classified)
    }

    pub fn feed<R: BufRead>(&mut self, reader: R, source: &str) -> Result<(), IngestError> {
        for line in reader.lines() {
            let line = line.map_err(|source_err| IngestError::Io {
                path: source.to_string(),
                source: source_err,
            })?;
            self.feed_line(&line);
        }
        Ok(())
    }

    pub fn feed_path(&mut self, path: &Path) -> Result<(), IngestError> {
        let file = File::open(path).map_err(|source| IngestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.feed(BufReader::new(file), &path.display().to_string())
    }

    pub fn finish(mut self) -> (Vec<ClassifiedEvent>, IngestReport) {
        sort_events(&mut self.events);
        (self.events, self.report)
    }
}

/// Ingest a single log.
pub fn ingest<R: BufRead>(
    reader: R,
    policies: &PolicySet,
    topic_universe: &[Topic],
) -> Result<(Vec<ClassifiedEvent>, IngestReport), IngestError> {
    let mut ingestor = Ingestor::new(policies, topic_universe);
    ingestor.feed(reader, "<stream>")?;
    Ok(ingestor.finish())
}

pub fn write_event_log<'e, W: Write>(
    events: impl IntoIterator<Item = &'e ActivityEvent>,
    mut out: W,
) -> io::Result<()> {
    for event in events {
        let line = serde_json::to_string(&EventRecord::from(event))
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// A look-back window, either a fixed span or unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Window {
    Span(i64),
    Forever,
}

impl Window {
    pub fn days(days: i64) -> Self {
        Window::Span(days * SECONDS_PER_DAY)
    }

    pub fn hours(hours: i64) -> Self {
        Window::Span(hours * SECONDS_PER_HOUR)
    }

    /// Membership in the half-open interval `(now - span, now]`.
    pub fn contains(&self, ts: Timestamp, now: Timestamp) -> bool {
        match *self {
            Window::Forever => ts <= now,
            Window::Span(span) => ts <= now && ts > now - span,
        }
    }

    pub fn span_seconds(&self) -> Option<i64> {
        match *self {
            Window::Span(s) => Some(s),
            Window::Forever => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid window `{0}` (expected e.g. `30d`, `24h`, `3600s` or `forever`)")]
pub struct WindowParseError(String);

impl FromStr for Window {
    type Err = WindowParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let trimmed = s.trim();
        if trimmed.eq_ignore_ascii_case("forever") {
            return Ok(Window::Forever);
        }
        let err = || WindowParseError(s.to_string());
        let (digits, unit) = trimmed.split_at(trimmed.len().saturating_sub(1));
        let value: i64 = digits.parse().map_err(|_| err())?;
        let seconds = match unit {
            "d" => value * SECONDS_PER_DAY,
            "h" => value * SECONDS_PER_HOUR,
            "s" => value,
            _ => return Err(err()),
        };
        if seconds <= 0 {
            return Err(err());
        }
        Ok(Window::Span(seconds))
    }
}

impl TryFrom<String> for Window {
    type Error = WindowParseError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Window> for String {
    fn from(value: Window) -> Self {
        value.to_string()
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Window::Forever => f.write_str("forever"),
            Window::Span(s) if s % SECONDS_PER_DAY == 0 => write!(f, "{}d", s / SECONDS_PER_DAY),
            Window::Span(s) if s % SECONDS_PER_HOUR == 0 => {
                write!(f, "{}h", s / SECONDS_PER_HOUR)
            }
            Window::Span(s) => write!(f, "{s}s"),
        }
    }
}

pub fn window_filter<'e, I>(
    events: I,
    window: Window,
    now: Timestamp,
) -> impl Iterator<Item = &'e ClassifiedEvent>
where
    I: IntoIterator<Item = &'e ClassifiedEvent>,
{
    events
        .into_iter()
        .filter(move |e| window.contains(e.event.timestamp, now))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn policies() -> PolicySet {
        let tw = CrowdId::new("twitter-like").unwrap();
        let qu = CrowdId::new("quora-like").unwrap();
        BTreeMap::from([
            (tw.clone(), CrowdPolicy::twitter_like(tw)),
            (qu.clone(), CrowdPolicy::quora_like(qu)),
        ])
    }

    fn topics(labels: &[&str]) -> Vec<Topic> {
        labels.iter().map(|l| Topic::new(l).unwrap()).collect()
    }

    #[test]
    fn counts_accepted_and_rejected() {
        let log = r#"{"event_id":"a","crowd":"quora-like","author":"x","topics":["travel"],"timestamp":10,"kind":"blog"}
{"event_id":"b","crowd":"quora-like","author":"y","topics":["travel"],"timestamp":5,"kind":"post"}
not json at all
{"event_id":"c","crowd":"quora-like","author":"z","topics":["travel"],"timestamp":7,"kind":"question"}"#;
        let (events, report) = ingest(Cursor::new(log), &policies(), &topics(&["travel"])).unwrap();
        assert_eq!(report.accepted, 3);
        assert_eq!(report.rejected, 1);
        assert_eq!(report.reject_reasons["malformed"], 1);
        assert_eq!(report.time_range, Some((5, 10)));
        let ts: Vec<_> = events.iter().map(|e| e.event.timestamp).collect();
        assert_eq!(ts, vec![5, 7, 10]);
    }

    #[test]
    fn text_match_tags_twitter_like_events() {
        let log = r#"{"event_id":"t1","crowd":"twitter-like","author":"x","timestamp":10,"kind":"post","text":"Great Hiking trail today"}"#;
        let (events, _) = ingest(
            Cursor::new(log),
            &policies(),
            &topics(&["hiking", "travel"]),
        )
        .unwrap();
        assert_eq!(events[0].event.topics, topics(&["hiking"]));
    }

    #[test]
    fn tagged_crowd_ignores_text() {
        let log = r#"{"event_id":"q1","crowd":"quora-like","author":"x","topics":["travel"],"timestamp":10,"kind":"blog","text":"hiking everywhere"}"#;
        let (events, _) = ingest(
            Cursor::new(log),
            &policies(),
            &topics(&["hiking", "travel"]),
        )
        .unwrap();
        assert_eq!(events[0].event.topics, topics(&["travel"]));
    }

    #[test]
    fn rejects_unknown_crowd_invalid_and_duplicates() {
        let log = r#"{"event_id":"a","crowd":"mastodon-like","author":"x","timestamp":10,"kind":"post"}
{"event_id":"b","crowd":"quora-like","author":"x","timestamp":10,"kind":"answer"}
{"event_id":"c","crowd":"quora-like","author":"x","timestamp":10,"kind":"post","upvotes":-1}
{"event_id":"d","crowd":"quora-like","author":"x","timestamp":10,"kind":"post","unknown_field":1}
{"event_id":"d","crowd":"quora-like","author":"y","timestamp":11,"kind":"post"}

"#;
        let (events, report) = ingest(Cursor::new(log), &policies(), &[]).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].event.author.handle, "x");
        assert_eq!(report.reject_reasons["unknown_crowd"], 1);
        assert_eq!(report.reject_reasons["invalid_event"], 2);
        assert_eq!(report.reject_reasons["duplicate_event_id"], 1);
        assert_eq!(report.reject_reasons["empty_line"], 1);
        assert_eq!(report.total(), 6);
    }

    #[test]
    fn ties_sorted_by_event_id() {
        let log = r#"{"event_id":"b","crowd":"quora-like","author":"x","timestamp":10,"kind":"post"}
{"event_id":"a","crowd":"quora-like","author":"x","timestamp":10,"kind":"post"}"#;
        let (events, _) = ingest(Cursor::new(log), &policies(), &[]).unwrap();
        assert_eq!(events[0].event.event_id, "a");
    }

    #[test]
    fn window_is_half_open() {
        let now = 100 * SECONDS_PER_DAY;
        let w = Window::days(30);
        assert!(w.contains(now - 10 * SECONDS_PER_DAY, now));
        assert!(!w.contains(now - 40 * SECONDS_PER_DAY, now));
        assert!(!w.contains(now - 30 * SECONDS_PER_DAY, now));
        assert!(w.contains(now - 30 * SECONDS_PER_DAY + 1, now));
        assert!(w.contains(now, now));
        assert!(!w.contains(now + 1, now));
        assert!(Window::Forever.contains(1, now));
    }

    #[test]
    fn window_parsing() {
        assert_eq!("30d".parse::<Window>().unwrap(), Window::days(30));
        assert_eq!("24h".parse::<Window>().unwrap(), Window::hours(24));
        assert_eq!("forever".parse::<Window>().unwrap(), Window::Forever);
        assert!("0d".parse::<Window>().is_err());
        assert!("10w".parse::<Window>().is_err());
        assert_eq!(Window::days(7).to_string(), "7d");
    }

    #[test]
    fn unreadable_path_is_fatal() {
        let p = policies();
        let mut ing = Ingestor::new(&p, &[]);
        assert!(ing.feed_path(Path::new("/nonexistent/events.log")).is_err());
    }
}
