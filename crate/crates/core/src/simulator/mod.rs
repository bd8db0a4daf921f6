//! Seeded synthetic crowds.
//!
//! A [`SimConfig`] names the crowds, how many users of each behavioural
//! archetype they contain and the topic universe. [`generate`] turns it
//! into an activity log; [`respond`] plays the asked users' side of a
//! routing plan; [`run_experiment`] drives the whole loop of routing,
//! answering and periodic refresh on a simulated clock.

mod experiment;
mod generate;
mod respond;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event_model::{CrowdId, CrowdPolicy, Timestamp, Topic, UserId};
use crate::ingestion::PolicySet;

pub use experiment::{
    evaluate, run_experiment, run_summary, ComparisonReport, ExperimentConfig, ExperimentRun,
    Metric, ReportRow, RunLog, Strategy, World,
};
pub use generate::generate;
pub use respond::respond;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] crate::event_model::ModelError),
    #[error(transparent)]
    Router(#[from] crate::router::RouterError),
    #[error(transparent)]
    Index(#[from] crate::feature_index::IndexError),
    #[error(transparent)]
    Ingest(#[from] crate::ingestion::IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchetypeName {
    FocusedExpert,
    BroadExpert,
    Spammer,
    LowFrequency,
    BroadcastAccount,
    Casual,
}

impl ArchetypeName {
    pub const ALL: [ArchetypeName; 6] = [
        ArchetypeName::FocusedExpert,
        ArchetypeName::BroadExpert,
        ArchetypeName::Spammer,
        ArchetypeName::LowFrequency,
        ArchetypeName::BroadcastAccount,
        ArchetypeName::Casual,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchetypeName::FocusedExpert => "focused_expert",
            ArchetypeName::BroadExpert => "broad_expert",
            ArchetypeName::Spammer => "spammer",
            ArchetypeName::LowFrequency => "low_frequency",
            ArchetypeName::BroadcastAccount => "broadcast_account",
            ArchetypeName::Casual => "casual",
        }
    }

    pub fn is_expert(self) -> bool {
        matches!(
            self,
            ArchetypeName::FocusedExpert | ArchetypeName::BroadExpert
        )
    }
}

impl fmt::Display for ArchetypeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchetypeName {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ArchetypeName::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| SimError::Config(format!("unknown archetype {s:?}")))
    }
}

/// Log-normal response latency with the given mean; `spread` is the
/// standard deviation of the underlying normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencySpec {
    pub mean_hours: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeSpec {
    pub name: ArchetypeName,
    /// Posts per day.
    pub post_rate: f64,
    /// Share of posts about one of the user's own topics.
    pub on_topic_fraction: f64,
    pub answer_prob: f64,
    pub answer_correct_prob: f64,
    pub response_latency: LatencySpec,
    pub conversational_fraction: f64,
    pub repost_fraction: f64,
    /// Chance a tagged post draws 2-5 upvotes instead of 0-1.
    pub post_appeal: f64,
    /// Number of topics the user cares about; 0 means none in particular.
    pub affinity_topics: usize,
}

impl ArchetypeSpec {
    pub fn default_for(name: ArchetypeName) -> Self {
        let spec = |post_rate,
                    on_topic,
                    answer,
                    correct,
                    latency: (f64, f64),
                    conv,
                    repost,
                    appeal,
                    affinity| {
            ArchetypeSpec {
                name,
                post_rate,
                on_topic_fraction: on_topic,
                answer_prob: answer,
                answer_correct_prob: correct,
                response_latency: LatencySpec {
                    mean_hours: latency.0,
                    spread: latency.1,
                },
                conversational_fraction: conv,
                repost_fraction: repost,
                post_appeal: appeal,
                affinity_topics: affinity,
            }
        };
        match name {
            ArchetypeName::FocusedExpert => spec(3.0, 0.9, 0.6, 0.9, (2.0, 0.8), 0.3, 0.05, 0.9, 1),
            ArchetypeName::BroadExpert => spec(4.0, 0.8, 0.6, 0.8, (3.0, 0.8), 0.3, 0.05, 0.8, 3),
            ArchetypeName::Spammer => spec(12.0, 1.0, 0.0, 0.0, (24.0, 0.5), 0.0, 0.0, 0.9, 1),
            ArchetypeName::LowFrequency => spec(0.1, 0.7, 0.4, 0.7, (12.0, 1.0), 0.2, 0.1, 0.7, 1),
            ArchetypeName::BroadcastAccount => {
                spec(5.0, 0.95, 0.05, 0.5, (24.0, 1.0), 0.0, 0.3, 0.6, 1)
            }
            ArchetypeName::Casual => spec(1.5, 0.3, 0.2, 0.4, (8.0, 1.0), 0.4, 0.2, 0.3, 0),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let probs = [
            ("on_topic_fraction", self.on_topic_fraction),
            ("answer_prob", self.answer_prob),
            ("answer_correct_prob", self.answer_correct_prob),
            ("conversational_fraction", self.conversational_fraction),
            ("repost_fraction", self.repost_fraction),
            ("post_appeal", self.post_appeal),
        ];
        for (field, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::Config(format!(
                    "{}.{field} = {p} is not a probability",
                    self.name
                )));
            }
        }
        if self.conversational_fraction + self.repost_fraction > 1.0 {
            return Err(SimError::Config(format!(
                "{}: conversational_fraction + repost_fraction exceeds 1",
                self.name
            )));
        }
        if !(self.post_rate >= 0.0)
            || !(self.response_latency.mean_hours > 0.0)
            || !(self.response_latency.spread >= 0.0)
        {
            return Err(SimError::Config(format!(
                "{}: rates and latency must be non-negative",
                self.name
            )));
        }
        Ok(())
    }
}

/// Partial override of an archetype's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypePatch {
    pub post_rate: Option<f64>,
    pub on_topic_fraction: Option<f64>,
    pub answer_prob: Option<f64>,
    pub answer_correct_prob: Option<f64>,
    pub response_latency: Option<LatencySpec>,
    pub conversational_fraction: Option<f64>,
    pub repost_fraction: Option<f64>,
    pub post_appeal: Option<f64>,
    pub affinity_topics: Option<usize>,
}

impl ArchetypePatch {
    fn apply(&self, spec: &mut ArchetypeSpec) {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { spec.$f = v; } )* };
        }
        set!(
            post_rate,
            on_topic_fraction,
            answer_prob,
            answer_correct_prob,
            response_latency,
            conversational_fraction,
            repost_fraction,
            post_appeal,
            affinity_topics
        );
    }
}

/// How a crowd's content looks on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrowdStyle {
    /// Untagged short messages that mention the topic word; answers are
    /// replies to the asker.
    TwitterLike,
    /// Tagged content, upvoted answers, and answers from people who were
    /// not asked.
    QuoraLike,
}

impl CrowdStyle {
    pub fn default_policy(self, crowd: CrowdId) -> CrowdPolicy {
        match self {
            CrowdStyle::TwitterLike => CrowdPolicy::twitter_like(crowd),
            CrowdStyle::QuoraLike => CrowdPolicy::quora_like(crowd),
        }
    }

    fn default_directed_fraction(self) -> f64 {
        match self {
            CrowdStyle::TwitterLike => 0.6,
            CrowdStyle::QuoraLike => 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimCrowd {
    pub id: CrowdId,
    pub style: CrowdStyle,
    /// Users per archetype.
    pub mix: BTreeMap<ArchetypeName, usize>,
    /// Share of native questions addressed to a specific user.
    #[serde(default)]
    pub directed_fraction: Option<f64>,
}

impl SimCrowd {
    pub fn directed_fraction(&self) -> f64 {
        self.directed_fraction
            .unwrap_or_else(|| self.style.default_directed_fraction())
    }
}

pub fn default_mix() -> BTreeMap<ArchetypeName, usize> {
    BTreeMap::from([
        (ArchetypeName::FocusedExpert, 9),
        (ArchetypeName::BroadExpert, 4),
        (ArchetypeName::Spammer, 2),
        (ArchetypeName::LowFrequency, 10),
        (ArchetypeName::BroadcastAccount, 3),
        (ArchetypeName::Casual, 32),
    ])
}

/// Day-aligned default start of the simulated clock (2023-11-14 UTC).
pub const DEFAULT_START: Timestamp = 1_699_920_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub start: Timestamp,
    pub horizon_days: i64,
    pub clock_step_hours: i64,
    pub topics: Vec<Topic>,
    pub crowds: Vec<SimCrowd>,
    /// Per crowd, per topic and per day.
    pub native_question_rate: f64,
    /// Chance per native question that a given user volunteers an answer,
    /// relative to that user's answer probability.
    pub volunteer_factor: f64,
    /// Multiplier on answer probability for topics outside a user's affinity.
    pub off_topic_answer_factor: f64,
    /// Chance per routed question that a quora-like crowd produces an
    /// answer from someone who was not asked.
    pub unsolicited_rate: f64,
    pub archetypes: BTreeMap<ArchetypeName, ArchetypePatch>,
}

impl Default for SimConfig {
    fn default() -> Self {
        let topic = |t: &str| Topic::new(t).expect("valid topic");
        let crowd = |c: &str| CrowdId::new(c).expect("valid crowd");
        Self {
            seed: 1,
            start: DEFAULT_START,
            horizon_days: 60,
            clock_step_hours: 1,
            topics: vec![topic("hiking"), topic("travel"), topic("food")],
            crowds: vec![
                SimCrowd {
                    id: crowd("twitter-like"),
                    style: CrowdStyle::TwitterLike,
                    mix: default_mix(),
                    directed_fraction: None,
                },
                SimCrowd {
                    id: crowd("quora-like"),
                    style: CrowdStyle::QuoraLike,
                    mix: default_mix(),
                    directed_fraction: None,
                },
            ],
            native_question_rate: 3.0,
            volunteer_factor: 0.05,
            off_topic_answer_factor: 0.5,
            unsolicited_rate: 0.2,
            archetypes: BTreeMap::new(),
        }
    }
}

impl SimConfig {
    pub fn archetype(&self, name: ArchetypeName) -> ArchetypeSpec {
        let mut spec = ArchetypeSpec::default_for(name);
        if let Some(patch) = self.archetypes.get(&name) {
            patch.apply(&mut spec);
        }
        spec
    }

    /// Give every archetype the same answer probability and remove the
    /// topic-affinity effect on answering.
    pub fn with_uniform_answer_prob(mut self, p: f64) -> Self {
        for name in ArchetypeName::ALL {
            self.archetypes.entry(name).or_default().answer_prob = Some(p);
        }
        self.off_topic_answer_factor = 1.0;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |m: &str| Err(SimError::Config(m.to_string()));
        if self.horizon_days <= 0 {
            return fail("horizon_days must be positive");
        }
        if self.clock_step_hours <= 0 || 24 % self.clock_step_hours != 0 {
            return fail("clock_step_hours must be a positive divisor of 24");
        }
        if self.start <= 0 {
            return fail("start must be a positive timestamp");
        }
        if self.topics.is_empty() {
            return fail("at least one topic is required");
        }
        if self.crowds.is_empty() {
            return fail("at least one crowd is required");
        }
        let mut ids = std::collections::BTreeSet::new();
        for c in &self.crowds {
            if !ids.insert(&c.id) {
                return Err(SimError::Config(format!("duplicate crowd {}", c.id)));
            }
            if !(0.0..=1.0).contains(&c.directed_fraction()) {
                return Err(SimError::Config(format!(
                    "{}: directed_fraction not a probability",
                    c.id
                )));
            }
        }
        for p in [
            self.volunteer_factor,
            self.off_topic_answer_factor,
            self.unsolicited_rate,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail("volunteer_factor, off_topic_answer_factor and unsolicited_rate must lie in [0, 1]");
            }
        }
        if !(self.native_question_rate >= 0.0) {
            return fail("native_question_rate must be non-negative");
        }
        for name in ArchetypeName::ALL {
            self.archetype(name).validate()?;
        }
        Ok(())
    }

    pub fn policies(&self) -> PolicySet {
        self.crowds
            .iter()
            .map(|c| (c.id.clone(), c.style.default_policy(c.id.clone())))
            .collect()
    }

    pub fn end(&self) -> Timestamp {
        self.start + self.horizon_days * crate::event_model::SECONDS_PER_DAY
    }

    pub(crate) fn rng(&self, stream: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix_seed(self.seed, stream))
    }
}

/// FNV-1a over the seed and a stream label, giving independent,
/// order-insensitive RNG streams.
pub(crate) fn mix_seed(seed: u64, stream: &str) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().into_iter().chain(stream.bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(PRIME);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimUser {
    pub user: UserId,
    pub archetype: ArchetypeName,
    pub affinity: Vec<Topic>,
}

/// The synthetic users of every crowd, in configuration order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub users: Vec<SimUser>,
    #[serde(skip)]
    by_id: BTreeMap<UserId, usize>,
}

impl Population {
    /// Deterministic population: handles are `<archetype>-<nnn>` and
    /// affinities rotate through the topic list.
    pub fn build(cfg: &SimConfig) -> Self {
        let mut users = Vec::new();
        for crowd in &cfg.crowds {
            let mut offset = 0usize;
            for (&name, &count) in &crowd.mix {
                let spec = cfg.archetype(name);
                for i in 0..count {
                    let handle = format!("{}-{i:03}", name.as_str());
                    let affinity = (0..spec.affinity_topics.min(cfg.topics.len()))
                        .map(|k| cfg.topics[(offset + i + k) % cfg.topics.len()].clone())
                        .collect();
                    users.push(SimUser {
                        user: UserId::new(crowd.id.clone(), handle).expect("valid handle"),
                        archetype: name,
                        affinity,
                    });
                }
                offset += count;
            }
        }
        Self::from_users(users)
    }

    fn from_users(users: Vec<SimUser>) -> Self {
        let by_id = users
            .iter()
            .enumerate()
            .map(|(i, u)| (u.user.clone(), i))
            .collect();
        Self { users, by_id }
    }

    pub fn get(&self, user: &UserId) -> Option<&SimUser> {
        self.by_id.get(user).map(|&i| &self.users[i])
    }

    pub fn archetype_of(&self, user: &UserId) -> Option<ArchetypeName> {
        self.get(user).map(|u| u.archetype)
    }

    pub fn in_crowd<'a>(&'a self, crowd: &'a CrowdId) -> impl Iterator<Item = &'a SimUser> + 'a {
        self.users.iter().filter(move |u| &u.user.crowd == crowd)
    }
}
