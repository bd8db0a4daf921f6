//! Build the per-topic feature index over a simulated log and show the
//! strongest users on each axis, then how one answer moves a user.
//!
//! cargo run --example feature_index -- [seed]

use crowdstar::feature_index::{
    AnswerRecord, AskRecord, Feature, FeatureIndex, IndexConfig, TopicKey,
};
use crowdstar::simulator::{SimConfig, World};

fn main() -> anyhow::Result<()> {
    let seed = std::env::args().nth(1).map_or(Ok(1), |a| a.parse())?;
    let world = World::build(SimConfig {
        seed,
        ..SimConfig::default()
    })?;
    let now = world.config.end();

    let mut index = FeatureIndex::new(IndexConfig::default())?;
    index.add_events(world.events.clone());
    index.rebuild(now);

    let key = index.topic_keys().next().expect("simulated topics").clone();
    let state = index.topic(&key).expect("present");
    println!("{key}: {} users", state.features.len());
    for f in Feature::ALL {
        let mut users: Vec<_> = state.features.iter().collect();
        users.sort_by(|a, b| {
            b.1.normalized(f)
                .total_cmp(&a.1.normalized(f))
                .then(a.0.cmp(b.0))
        });
        let top: Vec<String> = users
            .iter()
            .take(3)
            .map(|(u, fv)| {
                format!(
                    "{} ({:.3}, raw {:.3})",
                    u.handle,
                    fv.normalized(f),
                    fv.raw(f)
                )
            })
            .collect();
        println!("  {:<15} {}", f.name(), top.join(", "));
    }

    // Ask the least responsive user something and have them answer in 30 minutes.
    let (user, before) = state
        .features
        .iter()
        .min_by(|a, b| {
            a.1.responsiveness
                .total_cmp(&b.1.responsiveness)
                .then(a.0.cmp(b.0))
        })
        .map(|(u, fv)| (u.clone(), *fv))
        .expect("non-empty");
    let ask = AskRecord {
        question_id: "demo".into(),
        user: user.clone(),
        topic: key.topic.clone(),
        issued_at: now,
    };
    index.record_ask(ask, now);
    let answer = AnswerRecord {
        question_id: "demo".into(),
        responder: user.clone(),
        topic: key.topic.clone(),
        answered_at: now + 1800,
        correct: Some(true),
        latency_hours: Some(0.5),
    };
    index.record_answer(answer, now + 1800);
    let after = index
        .topic(&TopicKey::new(user.crowd.clone(), key.topic.clone()))
        .expect("present")
        .features[&user];
    println!(
        "{}: responsiveness {:.3} -> {:.3}, activity hours {:.1} -> {:.1}",
        user, before.responsiveness, after.responsiveness, before.activity, after.activity
    );
    Ok(())
}
