use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::counters::{
    accumulate_sources, AnswerRecord, AskRecord, CounterTable, MetricCounters, TopicKey,
};
use super::formulas::{
    activity, interest, normalize, qualification, responsiveness, Feature, FeatureVector,
    SmoothingParams,
};
use super::snapshot::{TopicSnapshot, UserSnapshot};
use super::{IndexConfig, IndexError};
use crate::event_model::{Timestamp, UserId};
use crate::ingestion::{sort_events, ClassifiedEvent, Window};

/// Counters of one user on one topic, one set per feature window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureCounters {
    pub qualification: MetricCounters,
    pub interest: MetricCounters,
    pub responsiveness: MetricCounters,
    pub activity: MetricCounters,
}

impl FeatureCounters {
    pub fn get(&self, f: Feature) -> &MetricCounters {
        match f {
            Feature::Qualification => &self.qualification,
            Feature::Interest => &self.interest,
            Feature::Responsiveness => &self.responsiveness,
            Feature::Activity => &self.activity,
        }
    }

    fn get_mut(&mut self, f: Feature) -> &mut MetricCounters {
        match f {
            Feature::Qualification => &mut self.qualification,
            Feature::Interest => &mut self.interest,
            Feature::Responsiveness => &mut self.responsiveness,
            Feature::Activity => &mut self.activity,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureSmoothing {
    pub qualification: SmoothingParams,
    pub interest: SmoothingParams,
    pub responsiveness: SmoothingParams,
}

impl FeatureSmoothing {
    fn from_counters(counters: &BTreeMap<UserId, FeatureCounters>) -> Self {
        let params = |f: Feature| {
            SmoothingParams::from_population(
                counters
                    .values()
                    .map(|c| c.get(f))
                    .filter(|m| !m.is_empty())
                    .collect::<Vec<_>>(),
            )
        };
        Self {
            qualification: params(Feature::Qualification),
            interest: params(Feature::Interest),
            responsiveness: params(Feature::Responsiveness),
        }
    }
}

/// Index state of one (crowd, topic).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TopicState {
    pub counters: BTreeMap<UserId, FeatureCounters>,
    pub smoothing: FeatureSmoothing,
    pub features: BTreeMap<UserId, FeatureVector>,
    pub knowledge_at: Timestamp,
    pub availability_at: Timestamp,
    /// Set whenever features change after the last skyline computation.
    pub skyline_stale: bool,
}

fn knowledge_of(c: &FeatureCounters, s: &FeatureSmoothing) -> (f64, f64) {
    (
        qualification(&c.qualification, &s.qualification),
        interest(&c.interest, &s.interest),
    )
}

fn availability_of(
    c: &FeatureCounters,
    s: &FeatureSmoothing,
    cfg: &IndexConfig,
    now: Timestamp,
) -> (f64, f64) {
    (
        responsiveness(&c.responsiveness, &s.responsiveness, cfg),
        activity(&c.activity, now, cfg),
    )
}

impl TopicState {
    pub fn from_counters(
        counters: BTreeMap<UserId, FeatureCounters>,
        cfg: &IndexConfig,
        now: Timestamp,
    ) -> Self {
        let smoothing = FeatureSmoothing::from_counters(&counters);
        let mut features: BTreeMap<UserId, FeatureVector> = counters
            .iter()
            .map(|(user, c)| {
                let (k1, k2) = knowledge_of(c, &smoothing);
                let (a1, a2) = availability_of(c, &smoothing, cfg, now);
                let fv = FeatureVector {
                    qualification: k1,
                    interest: k2,
                    responsiveness: a1,
                    activity: a2,
                    computed_at: now,
                    ..Default::default()
                };
                (user.clone(), fv)
            })
            .collect();
        normalize(&mut features);
        Self {
            counters,
            smoothing,
            features,
            knowledge_at: now,
            availability_at: now,
            skyline_stale: true,
        }
    }

    /// Recompute one user's availability features with the current priors.
    fn refresh_availability(&mut self, user: &UserId, cfg: &IndexConfig, now: Timestamp) {
        let Some(c) = self.counters.get(user) else {
            return;
        };
        let smoothing = self.smoothing;
        let fv = self.features.entry(user.clone()).or_insert_with(|| {
            let (k1, k2) = knowledge_of(c, &smoothing);
            FeatureVector {
                qualification: k1,
                interest: k2,
                ..Default::default()
            }
        });
        let (a1, a2) = availability_of(c, &smoothing, cfg, now);
        fv.responsiveness = a1;
        fv.activity = a2;
        fv.computed_at = now;
        normalize(&mut self.features);
        self.availability_at = now;
        self.skyline_stale = true;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RefreshTrigger {
    DailyTick,
    RoutingEvent(AskRecord),
    AnswerEvent(AnswerRecord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerOutcome {
    Applied,
    /// The responder already answered this question; nothing changed.
    Duplicate,
}

/// The feature index over ingested events, routed asks and answers.
#[derive(Debug, Clone)]
pub struct FeatureIndex {
    config: IndexConfig,
    events: Vec<ClassifiedEvent>,
    event_ids: HashSet<String>,
    asks: Vec<AskRecord>,
    asks_by_question: HashMap<String, Vec<usize>>,
    answers: Vec<AnswerRecord>,
    answered: BTreeSet<(UserId, String)>,
    topics: BTreeMap<TopicKey, TopicState>,
    touched: BTreeSet<TopicKey>,
    log_backed: bool,
    last_tick: Option<Timestamp>,
}

impl FeatureIndex {
    pub fn new(config: IndexConfig) -> Result<Self, IndexError> {
        config.validate()?;
        Ok(Self {
            config,
            events: Vec::new(),
            event_ids: HashSet::new(),
            asks: Vec::new(),
            asks_by_question: HashMap::new(),
            answers: Vec::new(),
            answered: BTreeSet::new(),
            topics: BTreeMap::new(),
            touched: BTreeSet::new(),
            log_backed: true,
            last_tick: None,
        })
    }

    /// Restore an index from persisted snapshots plus the routing logs.
    ///
    /// Such an index has no event log behind it: it supports routing and
    /// feedback updates, while knowledge refresh needs a log-backed rebuild.
    pub fn from_snapshots(
        config: IndexConfig,
        snapshots: impl IntoIterator<Item = TopicSnapshot>,
        asks: impl IntoIterator<Item = AskRecord>,
        answers: impl IntoIterator<Item = AnswerRecord>,
    ) -> Result<Self, IndexError> {
        let mut index = Self::new(config)?;
        index.log_backed = false;
        for snap in snapshots {
            let (key, state) = snap.into_state();
            index.topics.insert(key, state);
        }
        for ask in asks {
            index.push_ask(ask);
        }
        for answer in answers {
            if index
                .answered
                .insert((answer.responder.clone(), answer.question_id.clone()))
            {
                index.answers.push(answer);
            }
        }
        Ok(index)
    }

    pub fn config(&self) -> &IndexConfig {
        &self.config
    }

    pub fn events(&self) -> &[ClassifiedEvent] {
        &self.events
    }

    pub fn asks(&self) -> &[AskRecord] {
        &self.asks
    }

    pub fn answers(&self) -> &[AnswerRecord] {
        &self.answers
    }

    pub fn asks_for(&self, question_id: &str) -> Vec<&AskRecord> {
        self.asks_by_question
            .get(question_id)
            .map(|ix| ix.iter().map(|&i| &self.asks[i]).collect())
            .unwrap_or_default()
    }

    pub fn has_answered(&self, user: &UserId, question_id: &str) -> bool {
        self.answered
            .contains(&(user.clone(), question_id.to_string()))
    }

    pub fn topic_keys(&self) -> impl Iterator<Item = &TopicKey> {
        self.topics.keys()
    }

    pub fn topic(&self, key: &TopicKey) -> Option<&TopicState> {
        self.topics.get(key)
    }

    pub fn last_tick(&self) -> Option<Timestamp> {
        self.last_tick
    }

    /// Time at which a topic's knowledge features were last known current:
    /// its own recompute or a later tick that found nothing new for it.
    pub fn knowledge_current_at(&self, key: &TopicKey) -> Option<Timestamp> {
        let state = self.topics.get(key)?;
        let ticked = self.last_tick.filter(|_| !self.touched.contains(key));
        Some(ticked.map_or(state.knowledge_at, |t| t.max(state.knowledge_at)))
    }

    /// Add classified events; ids already present are skipped. Returns the
    /// number of new events.
    pub fn add_events(&mut self, events: impl IntoIterator<Item = ClassifiedEvent>) -> usize {
        let before = self.events.len();
        for e in events {
            if self.event_ids.insert(e.event.event_id.clone()) {
                for topic in &e.event.topics {
                    self.touched
                        .insert(TopicKey::new(e.event.crowd.clone(), topic.clone()));
                }
                self.events.push(e);
            }
        }
        let added = self.events.len() - before;
        if added > 0 {
            sort_events(&mut self.events);
        }
        added
    }

    /// Recompute every topic from the logs.
    pub fn rebuild(&mut self, now: Timestamp) {
        self.recompute(None, now);
        self.touched.clear();
        self.last_tick = Some(now);
    }

    pub fn refresh(&mut self, trigger: RefreshTrigger, now: Timestamp) -> AnswerOutcome {
        match trigger {
            RefreshTrigger::DailyTick => {
                self.daily_tick(now);
                AnswerOutcome::Applied
            }
            RefreshTrigger::RoutingEvent(ask) => {
                self.record_ask(ask, now);
                AnswerOutcome::Applied
            }
            RefreshTrigger::AnswerEvent(answer) => self.record_answer(answer, now),
        }
    }

    /// Periodic knowledge refresh of every (crowd, topic) touched since the
    /// previous tick. Untouched topics are left exactly as they were.
    pub fn daily_tick(&mut self, now: Timestamp) {
        if self.log_backed && !self.touched.is_empty() {
            let touched = std::mem::take(&mut self.touched);
            self.recompute(Some(&touched), now);
        }
        self.last_tick = Some(now);
    }

    fn push_ask(&mut self, ask: AskRecord) {
        self.asks_by_question
            .entry(ask.question_id.clone())
            .or_default()
            .push(self.asks.len());
        self.asks.push(ask);
    }

    /// A question was routed to `ask.user`: bump presented questions, move
    /// the last-question time and recompute that user's availability.
    pub fn record_ask(&mut self, ask: AskRecord, now: Timestamp) {
        let key = TopicKey::new(ask.user.crowd.clone(), ask.topic.clone());
        let cfg = self.config;
        let state = self.topics.entry(key.clone()).or_default();
        let counters = state.counters.entry(ask.user.clone()).or_default();
        for f in [Feature::Responsiveness, Feature::Activity] {
            if cfg.windows.get(f).contains(ask.issued_at, now) {
                counters.get_mut(f).apply_ask(&ask);
            }
        }
        state.refresh_availability(&ask.user, &cfg, now);
        self.touched.insert(key);
        self.push_ask(ask);
    }

    /// A routed question was answered. Repeated answers by the same user to
    /// the same question are ignored.
    pub fn record_answer(&mut self, answer: AnswerRecord, now: Timestamp) -> AnswerOutcome {
        if !self
            .answered
            .insert((answer.responder.clone(), answer.question_id.clone()))
        {
            return AnswerOutcome::Duplicate;
        }
        let key = TopicKey::new(answer.responder.crowd.clone(), answer.topic.clone());
        let cfg = self.config;
        let state = self.topics.entry(key.clone()).or_default();
        let counters = state.counters.entry(answer.responder.clone()).or_default();
        for f in [Feature::Responsiveness, Feature::Activity] {
            if cfg.windows.get(f).contains(answer.answered_at, now) {
                counters.get_mut(f).apply_answer(&answer);
            }
        }
        state.refresh_availability(&answer.responder, &cfg, now);
        self.touched.insert(key);
        self.answers.push(answer);
        AnswerOutcome::Applied
    }

    /// Mark a topic's skyline as recomputed.
    pub fn mark_skyline_fresh(&mut self, key: &TopicKey) {
        if let Some(state) = self.topics.get_mut(key) {
            state.skyline_stale = false;
        }
    }

    fn recompute(&mut self, keys: Option<&BTreeSet<TopicKey>>, now: Timestamp) {
        let cfg = self.config;
        let mut windows: Vec<Window> = Feature::ALL.iter().map(|&f| cfg.windows.get(f)).collect();
        windows.sort_by_key(|w| w.span_seconds().unwrap_or(i64::MAX));
        windows.dedup();
        let (events, asks, answers) = (&self.events, &self.asks, &self.answers);
        let tables: Vec<(Window, CounterTable)> = windows
            .par_iter()
            .map(|&w| (w, accumulate_sources(events, asks, answers, w, now)))
            .collect();
        let table_for = |w: Window| &tables.iter().find(|(tw, _)| *tw == w).expect("window").1;

        let mut all_keys: BTreeSet<&TopicKey> = tables.iter().flat_map(|(_, t)| t.keys()).collect();
        if let Some(keys) = keys {
            all_keys.retain(|k| keys.contains(*k));
        }
        let all_keys: Vec<&TopicKey> = all_keys.into_iter().collect();
        let states: Vec<(TopicKey, TopicState)> = all_keys
            .par_iter()
            .map(|&key| {
                let mut users: BTreeMap<UserId, FeatureCounters> = BTreeMap::new();
                for f in Feature::ALL {
                    if let Some(table) = table_for(cfg.windows.get(f)).get(key) {
                        for (user, m) in table {
                            *users.entry(user.clone()).or_default().get_mut(f) = m.clone();
                        }
                    }
                }
                (key.clone(), TopicState::from_counters(users, &cfg, now))
            })
            .collect();

        match keys {
            None => self.topics.clear(),
            Some(keys) => {
                for k in keys {
                    self.topics.remove(k);
                }
            }
        }
        self.topics.extend(states);
    }

    pub fn snapshot(&self, key: &TopicKey) -> Option<TopicSnapshot> {
        self.topics
            .get(key)
            .map(|state| TopicSnapshot::from_state(key, state))
    }

    pub fn snapshots(&self) -> Vec<TopicSnapshot> {
        self.topics
            .iter()
            .map(|(k, s)| TopicSnapshot::from_state(k, s))
            .collect()
    }

    pub fn user_snapshot(&self, key: &TopicKey, user: &UserId) -> Option<UserSnapshot> {
        let state = self.topics.get(key)?;
        Some(UserSnapshot {
            user: user.clone(),
            counters: state.counters.get(user)?.clone(),
            features: *state.features.get(user)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::{
        ActivityEvent, CrowdId, CrowdPolicy, EventKind, Topic, SECONDS_PER_DAY, SECONDS_PER_HOUR,
    };

    const H: i64 = SECONDS_PER_HOUR;

    fn crowd() -> CrowdId {
        CrowdId::new("quora-like").unwrap()
    }
    fn user(h: &str) -> UserId {
        UserId::new(crowd(), h).unwrap()
    }
    fn topic(t: &str) -> Topic {
        Topic::new(t).unwrap()
    }
    fn key(t: &str) -> TopicKey {
        TopicKey::new(crowd(), topic(t))
    }

    fn post(id: &str, author: &str, t: &str, ts: i64) -> ClassifiedEvent {
        let e = ActivityEvent {
            event_id: id.into(),
            crowd: crowd(),
            author: user(author),
            topics: vec![topic(t)],
            timestamp: ts,
            kind: EventKind::Blog,
            conversational: false,
            repost: false,
            addressed_to: None,
            in_reply_to: None,
            upvotes: 0,
            correct_label: None,
            text: None,
        };
        ClassifiedEvent::classify(e, &CrowdPolicy::quora_like(crowd())).unwrap()
    }

    fn seeded_index(now: Timestamp) -> FeatureIndex {
        let mut idx = FeatureIndex::new(IndexConfig::default()).unwrap();
        let mut events = Vec::new();
        for (i, u) in ["a", "b", "c", "d"].iter().enumerate() {
            for j in 0..=i {
                events.push(post(
                    &format!("{u}{j}"),
                    u,
                    "hiking",
                    now - (10 + j as i64) * H,
                ));
            }
            events.push(post(&format!("{u}-t"), u, "travel", now - 5 * H));
        }
        idx.add_events(events);
        idx.rebuild(now);
        idx
    }

    fn ask(q: &str, u: &str, t: &str, at: Timestamp) -> AskRecord {
        AskRecord {
            question_id: q.into(),
            user: user(u),
            topic: topic(t),
            issued_at: at,
        }
    }

    fn answer(q: &str, u: &str, t: &str, at: Timestamp, latency: f64) -> AnswerRecord {
        AnswerRecord {
            question_id: q.into(),
            responder: user(u),
            topic: topic(t),
            answered_at: at,
            correct: Some(true),
            latency_hours: Some(latency),
        }
    }

    #[test]
    fn rebuild_is_deterministic() {
        let now = 100 * SECONDS_PER_DAY;
        let a = seeded_index(now);
        let b = seeded_index(now);
        assert_eq!(a.topics, b.topics);
        let s = a.topic(&key("hiking")).unwrap();
        assert_eq!(s.features.len(), 4);
        assert_eq!(s.smoothing.qualification.population, 4);
    }

    #[test]
    fn answer_event_touches_only_that_users_availability() {
        let now = 100 * SECONDS_PER_DAY;
        let mut idx = seeded_index(now);
        let before = idx.topic(&key("hiking")).unwrap().clone();
        idx.record_ask(ask("q1", "b", "hiking", now), now);
        let later = now + 2 * H;
        assert_eq!(
            idx.refresh(
                RefreshTrigger::AnswerEvent(answer("q1", "b", "hiking", later, 2.0)),
                later
            ),
            AnswerOutcome::Applied
        );
        let after = idx.topic(&key("hiking")).unwrap();
        for (u, fv) in &after.features {
            let old = &before.features[u];
            assert_eq!(fv.qualification, old.qualification);
            assert_eq!(fv.interest, old.interest);
            if u != &user("b") {
                assert_eq!(fv.responsiveness, old.responsiveness);
                assert_eq!(fv.activity, old.activity);
            }
        }
        let c = &after.counters[&user("b")].responsiveness;
        assert_eq!((c.responses, c.response_hours), (1, 2.0));
        assert!(
            after.features[&user("b")].responsiveness > before.features[&user("b")].responsiveness
        );
        assert!(after.skyline_stale);
        // Knowledge counters wait for the tick.
        assert_eq!(after.counters[&user("b")].qualification.answers, 0);
        // The other topic is untouched.
        assert_eq!(
            idx.topic(&key("travel")),
            seeded_index(now).topic(&key("travel"))
        );
    }

    #[test]
    fn duplicate_answer_is_ignored() {
        let now = 100 * SECONDS_PER_DAY;
        let mut idx = seeded_index(now);
        idx.record_ask(ask("q1", "b", "hiking", now), now);
        idx.record_answer(answer("q1", "b", "hiking", now + H, 1.0), now + H);
        let snap = idx.topic(&key("hiking")).unwrap().clone();
        assert_eq!(
            idx.record_answer(answer("q1", "b", "hiking", now + 2 * H, 2.0), now + 2 * H),
            AnswerOutcome::Duplicate
        );
        assert_eq!(idx.topic(&key("hiking")).unwrap(), &snap);
    }

    #[test]
    fn routing_event_lowers_activity() {
        let now = 100 * SECONDS_PER_DAY;
        let mut idx = seeded_index(now);
        let before = idx.topic(&key("hiking")).unwrap().features[&user("a")].activity;
        idx.refresh(
            RefreshTrigger::RoutingEvent(ask("q1", "a", "hiking", now)),
            now,
        );
        let state = idx.topic(&key("hiking")).unwrap();
        assert!(state.features[&user("a")].activity < before);
        assert_eq!(state.counters[&user("a")].activity.last_question, Some(now));
        assert_eq!(
            state.counters[&user("a")]
                .responsiveness
                .questions_presented,
            1
        );
    }

    #[test]
    fn daily_tick_without_new_events_is_a_fixed_point() {
        let now = 100 * SECONDS_PER_DAY;
        let mut idx = seeded_index(now);
        let before = idx.topics.clone();
        idx.daily_tick(now + SECONDS_PER_DAY);
        assert_eq!(idx.topics, before);
    }

    #[test]
    fn daily_tick_folds_answers_into_knowledge_and_matches_rebuild() {
        let now = 100 * SECONDS_PER_DAY;
        let mut idx = seeded_index(now);
        idx.record_ask(ask("q1", "b", "hiking", now), now);
        idx.record_answer(answer("q1", "b", "hiking", now + H, 1.0), now + H);
        let incremental = idx.topic(&key("hiking")).unwrap().counters[&user("b")].clone();
        idx.daily_tick(now + H);
        let ticked = idx.topic(&key("hiking")).unwrap().clone();
        assert_eq!(ticked.counters[&user("b")].qualification.answers, 1);
        assert_eq!(
            ticked.counters[&user("b")].responsiveness,
            incremental.responsiveness
        );
        assert_eq!(ticked.counters[&user("b")].activity, incremental.activity);

        let mut fresh = idx.clone();
        fresh.rebuild(now + H);
        assert_eq!(fresh.topic(&key("hiking")).unwrap(), &ticked);
    }

    #[test]
    fn new_events_only_retouch_their_topic() {
        let now = 100 * SECONDS_PER_DAY;
        let mut idx = seeded_index(now);
        let travel = idx.topic(&key("travel")).unwrap().clone();
        idx.add_events([post("new", "e", "hiking", now + H)]);
        idx.daily_tick(now + 2 * H);
        assert_eq!(idx.topic(&key("travel")).unwrap(), &travel);
        assert!(idx
            .topic(&key("hiking"))
            .unwrap()
            .features
            .contains_key(&user("e")));
    }

    #[test]
    fn snapshot_round_trip_restores_state() {
        let now = 100 * SECONDS_PER_DAY;
        let mut idx = seeded_index(now);
        idx.record_ask(ask("q1", "a", "hiking", now), now);
        let snaps = idx.snapshots();
        let restored = FeatureIndex::from_snapshots(
            IndexConfig::default(),
            snaps,
            idx.asks().to_vec(),
            Vec::new(),
        )
        .unwrap();
        assert_eq!(restored.topics, idx.topics);
        assert_eq!(restored.asks_for("q1").len(), 1);
    }
}
