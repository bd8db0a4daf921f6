//! Routing against uniform-random asking on a simulated two-crowd world.
//!
//! cargo run --release --example routing_experiment -- [questions] [seed] [uniform-answer-prob]

use crowdstar::feature_index::IndexConfig;
use crowdstar::router::RouteParams;
use crowdstar::simulator::{
    evaluate, run_experiment, ExperimentConfig, Metric, SimConfig, Strategy, World,
};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let questions = args.next().map_or(Ok(1000), |a| a.parse())?;
    let seed = args.next().map_or(Ok(1), |a| a.parse())?;

    let mut cfg = SimConfig {
        seed,
        ..SimConfig::default()
    };
    if let Some(p) = args.next() {
        // Null control: every archetype answers with the same probability.
        cfg = cfg.with_uniform_answer_prob(p.parse()?);
    }
    let world = World::build(cfg)?;
    println!(
        "{} events, {} users",
        world.events.len(),
        world.population.users.len()
    );

    let params = RouteParams::default();
    let mut exp = ExperimentConfig {
        questions,
        ..ExperimentConfig::default()
    };
    let routed = run_experiment(&world, &exp, &params, IndexConfig::default())?;
    exp.strategy = Strategy::UniformRandom;
    let baseline = run_experiment(&world, &exp, &params, IndexConfig::default())?;
    println!(
        "shortfall: routing {} baseline {}",
        routed.shortfall, baseline.shortfall
    );

    let report = evaluate(&routed.log(), &baseline.log());
    print!("{}", report.render_table());
    if let Some(lift) = report.ratio(Metric::AnswerRate, "routing", "baseline", "all") {
        println!("answer-rate lift: {lift:.3}");
    }
    Ok(())
}
