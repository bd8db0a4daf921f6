//! Layered skylines over a random 2-d population, with pruning and the
//! shrinking candidate set of the outer-layer search.
//!
//! cargo run --example skyline_levels -- [points] [seed]

use crowdstar::event_model::{CrowdId, UserId};
use crowdstar::skyline::{
    candidate_count_trace, low_value_prune, skyline_levels, CandidatePoint, Dims, PruneThresholds,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(Ok(40), |a| a.parse())?;
    let seed: u64 = args.next().map_or(Ok(7), |a| a.parse())?;

    let crowd = CrowdId::new("demo")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|i| {
            let user = UserId::new(crowd.clone(), format!("u{i:03}"))?;
            Ok(CandidatePoint::new(user, vec![rng.random(), rng.random()]))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let trace = candidate_count_trace(&points);
    println!("outer-layer search, candidates left after each pick: {trace:?}");

    let (kept, pruned) = low_value_prune(points, &PruneThresholds::default());
    println!(
        "pruned {} of {n} below the 10th percentile on some axis",
        pruned.len()
    );

    let sky = skyline_levels(kept, 3, Dims::Two)?;
    for (k, level) in sky.levels.iter().enumerate() {
        println!("level {}:", k + 1);
        let mut level = level.clone();
        level.sort_by(|a, b| b.coords[0].total_cmp(&a.coords[0]));
        for p in level {
            println!(
                "  {}  knowledge {:.3}  availability {:.3}",
                p.user.handle, p.coords[0], p.coords[1]
            );
        }
    }
    println!("{} points below level {}", sky.unassigned, sky.levels.len());
    Ok(())
}
