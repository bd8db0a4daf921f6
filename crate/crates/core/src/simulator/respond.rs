use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use super::{mix_seed, CrowdStyle, LatencySpec, Population, SimConfig, SimUser};
use crate::event_model::{Timestamp, Topic, SECONDS_PER_HOUR};
use crate::router::{FeedbackEvent, PlannedAsk};

/// Archetype answer probability, damped outside the user's own topics.
pub(crate) fn answer_probability(cfg: &SimConfig, user: &SimUser, topic: &Topic) -> f64 {
    let p = cfg.archetype(user.archetype).answer_prob;
    if user.affinity.contains(topic) {
        p
    } else {
        p * cfg.off_topic_answer_factor
    }
}

pub(crate) fn latency_hours(spec: &LatencySpec, rng: &mut impl Rng) -> f64 {
    if spec.spread <= 0.0 {
        return spec.mean_hours;
    }
    let mu = spec.mean_hours.ln() - spec.spread * spec.spread / 2.0;
    LogNormal::new(mu, spec.spread).map_or(spec.mean_hours, |d| d.sample(rng))
}

pub(crate) fn latency_seconds(spec: &LatencySpec, rng: &mut impl Rng) -> Timestamp {
    (latency_hours(spec, rng) * SECONDS_PER_HOUR as f64)
        .round()
        .max(1.0) as Timestamp
}

fn stream(cfg: &SimConfig, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, label))
}

/// Play the asked users' side of the plans.
///
/// Every ask draws from its own stream keyed by question and user, so a
/// given user asked a given question behaves the same whichever strategy
/// chose them. Quora-like crowds may add one answer from a user nobody
/// asked. Output is sorted by answer time.
pub fn respond(
    asks: &[PlannedAsk],
    population: &Population,
    cfg: &SimConfig,
) -> Vec<FeedbackEvent> {
    let mut out = Vec::new();
    let mut questions: BTreeMap<&str, Vec<&PlannedAsk>> = BTreeMap::new();
    for ask in asks {
        questions
            .entry(ask.question_id.as_str())
            .or_default()
            .push(ask);
    }

    for (qid, asks) in &questions {
        for ask in asks {
            let Some(user) = population.get(&ask.user) else {
                continue;
            };
            let mut rng = stream(cfg, &format!("respond/{qid}/{}", ask.user));
            if !rng.random_bool(answer_probability(cfg, user, &ask.topic)) {
                continue;
            }
            let spec = cfg.archetype(user.archetype);
            let at = ask.issued_at + latency_seconds(&spec.response_latency, &mut rng);
            out.push(FeedbackEvent {
                question_id: qid.to_string(),
                responder: ask.user.clone(),
                answered_at: at,
                correct: Some(rng.random_bool(spec.answer_correct_prob)),
            });
        }

        let posted_at = asks.iter().map(|a| a.issued_at).min().expect("non-empty");
        for crowd in cfg
            .crowds
            .iter()
            .filter(|c| c.style == CrowdStyle::QuoraLike)
        {
            let mut rng = stream(cfg, &format!("unsolicited/{qid}/{}", crowd.id));
            if !rng.random_bool(cfg.unsolicited_rate) {
                continue;
            }
            let bystanders: Vec<&SimUser> = population
                .in_crowd(&crowd.id)
                .filter(|u| !asks.iter().any(|a| a.user == u.user))
                .filter(|u| cfg.archetype(u.archetype).answer_prob > 0.0)
                .collect();
            let Some(user) = bystanders.choose(&mut rng) else {
                continue;
            };
            let spec = cfg.archetype(user.archetype);
            out.push(FeedbackEvent {
                question_id: qid.to_string(),
                responder: user.user.clone(),
                answered_at: posted_at + latency_seconds(&spec.response_latency, &mut rng),
                correct: Some(rng.random_bool(spec.answer_correct_prob)),
            });
        }
    }
    out.sort_by(|a, b| {
        (a.answered_at, &a.question_id, &a.responder).cmp(&(
            b.answered_at,
            &b.question_id,
            &b.responder,
        ))
    });
    out
}
