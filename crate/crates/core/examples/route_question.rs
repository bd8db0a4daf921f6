//! Route one question, let the simulated users answer, and feed the
//! answers back into the index.
//!
//! cargo run --example route_question -- [topic] [budget] [seed]

use crowdstar::event_model::Topic;
use crowdstar::feature_index::{FeatureIndex, IndexConfig, TopicKey};
use crowdstar::router::{apply_feedback, issue, route, QuestionTask, RouteParams};
use crowdstar::simulator::{respond, SimConfig, World};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let topic = Topic::new(args.next().unwrap_or_else(|| "travel".into()))?;
    let budget = args.next().map_or(Ok(6), |a| a.parse())?;
    let seed = args.next().map_or(Ok(1), |a| a.parse())?;

    let world = World::build(SimConfig {
        seed,
        ..SimConfig::default()
    })?;
    let now = world.config.end();
    let mut index = FeatureIndex::new(IndexConfig::default())?;
    index.add_events(world.events.clone());
    index.rebuild(now);

    let task = QuestionTask {
        question_id: "q00001".into(),
        text: format!("Any tips for a first trip focused on {topic}?"),
        topic: topic.clone(),
        budget,
    };
    let params = RouteParams::default();
    let plan = route(&task, &index, &world.policies, &params, now)?;
    println!(
        "{:?} split, shortfall {}",
        plan.mode,
        plan.total_shortfall()
    );
    for a in &plan.asks {
        let archetype = world
            .population
            .archetype_of(&a.user)
            .map_or("?", |k| k.as_str());
        println!(
            "  level {} {:<32} ({archetype})  {}",
            a.level,
            a.user.to_string(),
            a.message
        );
    }
    issue(&plan, &mut index, now);

    let feedback = respond(&plan.asks, &world.population, &world.config);
    println!("{} answers", feedback.len());
    for fb in &feedback {
        let key = TopicKey::new(fb.responder.crowd.clone(), topic.clone());
        let before = index
            .topic(&key)
            .and_then(|s| s.features.get(&fb.responder))
            .map(|f| f.responsiveness);
        let outcome = apply_feedback(fb, &mut index, fb.answered_at)?;
        let after = index
            .topic(&key)
            .and_then(|s| s.features.get(&fb.responder))
            .map(|f| f.responsiveness);
        let latency = outcome
            .latency_hours
            .map_or("unsolicited".into(), |h| format!("{h:.1}h"));
        println!(
            "  {:<32} {latency:<11} raw responsiveness {:.3} -> {:.3}",
            fb.responder.to_string(),
            before.unwrap_or(0.0),
            after.unwrap_or(0.0)
        );
    }
    Ok(())
}
