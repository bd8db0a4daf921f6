#![allow(dead_code)]

use std::sync::OnceLock;

use crowdstar::event_model::Timestamp;
use crowdstar::feature_index::{FeatureIndex, IndexConfig};
use crowdstar::simulator::{SimConfig, World};

/// The default seed-1 world, built once per test binary.
pub fn world() -> &'static World {
    static WORLD: OnceLock<World> = OnceLock::new();
    WORLD.get_or_init(|| World::build(SimConfig::default()).expect("default config is valid"))
}

/// A fully rebuilt index over `world` as of the end of its log.
pub fn indexed(world: &World) -> (FeatureIndex, Timestamp) {
    let now = world.config.end();
    let mut index = FeatureIndex::new(IndexConfig::default()).expect("default config is valid");
    index.add_events(world.events.clone());
    index.rebuild(now);
    (index, now)
}
