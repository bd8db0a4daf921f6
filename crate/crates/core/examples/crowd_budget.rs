//! Crowd summaries, scores under each weight preset, and how a budget of
//! asks is divided between crowds.
//!
//! cargo run --example crowd_budget -- [topic] [seed]

use std::collections::BTreeMap;

use crowdstar::crowd_summary::ScoreWeights;
use crowdstar::event_model::{CrowdId, Topic};
use crowdstar::feature_index::{FeatureIndex, IndexConfig};
use crowdstar::router::{crowd_candidates, split_budget, RouteParams};
use crowdstar::simulator::{SimConfig, World};

fn show(alloc: &BTreeMap<CrowdId, usize>) -> String {
    alloc
        .iter()
        .map(|(c, n)| format!("{c}={n}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let topic = Topic::new(args.next().unwrap_or_else(|| "hiking".into()))?;
    let seed = args.next().map_or(Ok(1), |a| a.parse())?;

    let world = World::build(SimConfig {
        seed,
        ..SimConfig::default()
    })?;
    let now = world.config.end();
    let mut index = FeatureIndex::new(IndexConfig::default())?;
    index.add_events(world.events.clone());
    index.rebuild(now);

    for (name, weights) in [
        ("equal", ScoreWeights::equal()),
        ("survey", ScoreWeights::survey()),
    ] {
        let params = RouteParams {
            weights,
            ..RouteParams::default()
        };
        let crowds = crowd_candidates(&index, &world.policies, &topic, &params, now)?;
        println!("{name} weights on {topic}:");
        for c in &crowds {
            let s = &c.summary;
            println!(
                "  {:<13} qualification {:.3} interest {:.3} responsiveness {:.3} over {} -> score {:.3}",
                c.crowd.as_str(),
                s.qualification,
                s.interest,
                s.responsiveness,
                s.representatives.len(),
                c.score
            );
        }
        let scores: BTreeMap<CrowdId, f64> =
            crowds.iter().map(|c| (c.crowd.clone(), c.score)).collect();
        for budget in [1, 4, 10] {
            let (alloc, mode) = split_budget(&scores, budget)?;
            println!("  budget {budget:>2}: {mode:?} {}", show(&alloc));
        }
    }

    // Hand-picked scores around the equal-split threshold.
    let pair = |a: f64, b: f64| -> anyhow::Result<BTreeMap<CrowdId, f64>> {
        Ok([(CrowdId::new("a")?, a), (CrowdId::new("b")?, b)]
            .into_iter()
            .collect())
    };
    for (a, b) in [(0.8, 0.61), (0.8, 0.6), (0.8, 0.2)] {
        let (alloc, mode) = split_budget(&pair(a, b)?, 5)?;
        println!("scores {a}/{b}, budget 5: {mode:?} {}", show(&alloc));
    }
    Ok(())
}
