use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::respond::{answer_probability, latency_seconds};
use super::{CrowdStyle, Population, SimConfig, SimCrowd, SimError, SimUser};
use crate::event_model::{ActivityEvent, EventKind, Timestamp, Topic, UserId, SECONDS_PER_HOUR};

const ON_TOPIC: &[&str] = &[
    "Out for some {t} this weekend",
    "New {t} notes are up",
    "Thoughts on {t} gear",
    "A short guide to {t} for beginners",
    "What I learned about {t} this year",
];
const OFF_TOPIC: &[&str] = &[
    "Coffee first, then everything else",
    "Monday again",
    "Listening to an old album tonight",
    "Busy week, catching up later",
];

fn count(rng: &mut ChaCha8Rng, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    Poisson::new(lambda).map_or(0, |d| d.sample(rng) as u64)
}

struct CrowdGen<'a> {
    cfg: &'a SimConfig,
    crowd: &'a SimCrowd,
    users: Vec<&'a SimUser>,
    rng: ChaCha8Rng,
    seq: u64,
    end: Timestamp,
    out: Vec<ActivityEvent>,
}

impl<'a> CrowdGen<'a> {
    fn next_id(&mut self) -> String {
        self.seq += 1;
        format!("{}-{:07}", self.crowd.id, self.seq)
    }

    fn text_for(&mut self, topic: Option<&Topic>) -> String {
        match topic {
            Some(t) => ON_TOPIC
                .choose(&mut self.rng)
                .expect("non-empty")
                .replace("{t}", t.as_str()),
            None => OFF_TOPIC
                .choose(&mut self.rng)
                .expect("non-empty")
                .to_string(),
        }
    }

    /// Tagged crowds carry topics as tags; text-matched crowds leave tags
    /// empty and rely on the topic word in the text.
    fn base_event(
        &mut self,
        author: &SimUser,
        topic: Option<&Topic>,
        ts: Timestamp,
        kind: EventKind,
    ) -> ActivityEvent {
        let text = self.text_for(topic);
        let topics = match (self.crowd.style, topic) {
            (CrowdStyle::QuoraLike, Some(t)) => vec![t.clone()],
            _ => Vec::new(),
        };
        ActivityEvent {
            event_id: self.next_id(),
            crowd: self.crowd.id.clone(),
            author: author.user.clone(),
            topics,
            timestamp: ts,
            kind,
            conversational: false,
            repost: false,
            addressed_to: None,
            in_reply_to: None,
            upvotes: 0,
            correct_label: None,
            text: Some(text),
        }
    }

    fn upvotes(&mut self, quality: f64) -> u32 {
        if self.rng.random_bool(quality) {
            self.rng.random_range(2..=5)
        } else {
            self.rng.random_range(0..=1)
        }
    }

    fn other_user(&mut self, not: &UserId) -> Option<&'a SimUser> {
        let others: Vec<&SimUser> = self
            .users
            .iter()
            .copied()
            .filter(|u| &u.user != not)
            .collect();
        others.choose(&mut self.rng).copied()
    }

    fn post(&mut self, user: &'a SimUser, ts: Timestamp) {
        let spec = self.cfg.archetype(user.archetype);
        let topic = if self.rng.random_bool(spec.on_topic_fraction) {
            let pool = if user.affinity.is_empty() {
                &self.cfg.topics
            } else {
                &user.affinity
            };
            pool.choose(&mut self.rng).cloned()
        } else {
            None
        };
        let roll: f64 = self.rng.random();
        let conversational = roll < spec.conversational_fraction;
        let repost = !conversational && roll < spec.conversational_fraction + spec.repost_fraction;
        let kind = match self.crowd.style {
            CrowdStyle::QuoraLike if !conversational && !repost => EventKind::Blog,
            _ => EventKind::Post,
        };
        let mut e = self.base_event(user, topic.as_ref(), ts, kind);
        e.conversational = conversational;
        e.repost = repost;
        if conversational {
            e.addressed_to = self.other_user(&user.user).map(|u| u.user.clone());
        }
        if self.crowd.style == CrowdStyle::QuoraLike {
            e.upvotes = self.upvotes(spec.post_appeal);
        }
        self.out.push(e);
    }

    fn question(&mut self, topic: &Topic, ts: Timestamp) {
        // Only users who take part in Q&A ask.
        let askers: Vec<&SimUser> = self
            .users
            .iter()
            .copied()
            .filter(|u| self.cfg.archetype(u.archetype).answer_prob > 0.0)
            .collect();
        let Some(&asker) = askers.choose(&mut self.rng) else {
            return;
        };
        let target = if self.rng.random_bool(self.crowd.directed_fraction()) {
            let fans: Vec<&SimUser> = self
                .users
                .iter()
                .copied()
                .filter(|u| u.user != asker.user && u.affinity.contains(topic))
                .collect();
            // Askers address the fans they see most often.
            let seen = |u: &&SimUser| {
                let spec = self.cfg.archetype(u.archetype);
                spec.post_rate * spec.on_topic_fraction
            };
            if !fans.is_empty() && self.rng.random_bool(0.7) {
                fans.choose_weighted(&mut self.rng, seen).ok().copied()
            } else {
                self.other_user(&asker.user)
            }
        } else {
            None
        };
        let mut q = self.base_event(asker, Some(topic), ts, EventKind::Question);
        q.text = Some(format!("Any advice on {topic}?"));
        q.conversational = target.is_some();
        q.addressed_to = target.map(|u| u.user.clone());
        let qid = q.event_id.clone();
        self.out.push(q);

        let users = self.users.clone();
        for user in users {
            if user.user == asker.user {
                continue;
            }
            let directed = target.is_some_and(|t| t.user == user.user);
            let mut p = answer_probability(self.cfg, user, topic);
            if !directed {
                p *= self.cfg.volunteer_factor;
            }
            if !self.rng.random_bool(p) {
                continue;
            }
            let spec = self.cfg.archetype(user.archetype);
            let at = ts + latency_seconds(&spec.response_latency, &mut self.rng);
            if at > self.end {
                continue;
            }
            let correct = self.rng.random_bool(spec.answer_correct_prob);
            let mut a = self.base_event(user, Some(topic), at, EventKind::Answer);
            a.text = Some(format!("Here is what worked for me with {topic}"));
            a.in_reply_to = Some(qid.clone());
            match self.crowd.style {
                CrowdStyle::TwitterLike => {
                    a.conversational = true;
                    a.addressed_to = Some(asker.user.clone());
                    a.correct_label = Some(correct);
                }
                CrowdStyle::QuoraLike => {
                    a.upvotes = self.upvotes(if correct { 1.0 } else { 0.0 });
                }
            }
            self.out.push(a);
        }
    }

    fn run(mut self) -> Vec<ActivityEvent> {
        if self.users.is_empty() {
            return self.out;
        }
        let step_hours = self.cfg.clock_step_hours;
        let step = step_hours * SECONDS_PER_HOUR;
        let per_step = step_hours as f64 / 24.0;
        let steps = self.cfg.horizon_days * 24 / step_hours;
        let rates: Vec<f64> = self
            .users
            .iter()
            .map(|u| self.cfg.archetype(u.archetype).post_rate * per_step)
            .collect();
        for s in 0..steps {
            let t0 = self.cfg.start + s * step;
            for i in 0..self.users.len() {
                for _ in 0..count(&mut self.rng, rates[i]) {
                    let ts = t0 + self.rng.random_range(1..=step);
                    self.post(self.users[i], ts);
                }
            }
            for topic in &self.cfg.topics {
                for _ in 0..count(&mut self.rng, self.cfg.native_question_rate * per_step) {
                    let ts = t0 + self.rng.random_range(1..=step);
                    self.question(topic, ts);
                }
            }
        }
        self.out
    }
}

/// Activity log of every configured crowd over the horizon, sorted by
/// (timestamp, event id). Fully determined by the config.
pub fn generate(cfg: &SimConfig) -> Result<Vec<ActivityEvent>, SimError> {
    cfg.validate()?;
    let population = Population::build(cfg);
    let mut events = Vec::new();
    for crowd in &cfg.crowds {
        let gen = CrowdGen {
            cfg,
            crowd,
            users: population.in_crowd(&crowd.id).collect(),
            rng: cfg.rng(&format!("generate/{}", crowd.id)),
            seq: 0,
            end: cfg.end(),
            out: Vec::new(),
        };
        events.extend(gen.run());
    }
    events.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.event_id.cmp(&b.event_id))
    });
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::{ingest, write_event_log};
    use crate::simulator::{ArchetypeName, ArchetypePatch};

    fn small() -> SimConfig {
        SimConfig {
            horizon_days: 10,
            ..SimConfig::default()
        }
    }

    fn log_bytes(cfg: &SimConfig) -> Vec<u8> {
        let mut buf = Vec::new();
        write_event_log(&generate(cfg).unwrap(), &mut buf).unwrap();
        buf
    }

    #[test]
    fn same_seed_same_bytes() {
        assert_eq!(log_bytes(&small()), log_bytes(&small()));
        let other = SimConfig { seed: 2, ..small() };
        assert_ne!(log_bytes(&small()), log_bytes(&other));
    }

    #[test]
    fn output_passes_ingestion() {
        let cfg = small();
        let bytes = log_bytes(&cfg);
        let (events, report) = ingest(&bytes[..], &cfg.policies(), &cfg.topics).unwrap();
        assert_eq!(report.rejected, 0, "{:?}", report.reject_reasons);
        assert_eq!(report.accepted, events.len());
        assert!(events
            .iter()
            .all(|e| e.event.timestamp > cfg.start && e.event.timestamp <= cfg.end()));
        // Text-matched posts were tagged during ingestion.
        assert!(events
            .iter()
            .any(|e| e.event.crowd.as_str() == "twitter-like" && !e.event.topics.is_empty()));
    }

    #[test]
    fn spammers_never_answer() {
        let events = generate(&small()).unwrap();
        assert!(events
            .iter()
            .any(|e| e.author.handle.starts_with("spammer")));
        assert!(!events
            .iter()
            .any(|e| e.kind == EventKind::Answer && e.author.handle.starts_with("spammer")));
    }

    #[test]
    fn focused_expert_on_topic_share() {
        // One expert posting exactly on schedule: 100 posts expected.
        let mut cfg = SimConfig {
            horizon_days: 25,
            native_question_rate: 0.0,
            ..SimConfig::default()
        };
        cfg.crowds.truncate(1);
        cfg.crowds[0].style = CrowdStyle::QuoraLike;
        cfg.crowds[0].mix = [(ArchetypeName::FocusedExpert, 1)].into();
        cfg.archetypes.insert(
            ArchetypeName::FocusedExpert,
            ArchetypePatch {
                post_rate: Some(4.0),
                ..Default::default()
            },
        );
        let events = generate(&cfg).unwrap();
        let on_topic = events.iter().filter(|e| !e.topics.is_empty()).count();
        assert_eq!((events.len(), on_topic), (115, 108));
    }
}
