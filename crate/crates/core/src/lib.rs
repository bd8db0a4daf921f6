pub mod cli;
pub mod crowd_summary;
pub mod event_model;
pub mod feature_index;
pub mod ingestion;
pub mod router;
pub mod simulator;
pub mod skyline;
