//! Topic-partitioned expertise and availability index.
//!
//! Counters are tallied per (crowd, topic, user) separately for each
//! feature's look-back window, smoothed against the (crowd, topic)
//! population and min-max normalized so the skyline can compare users on
//! a common `[0, 1]` scale.
//!
//! Knowledge features (qualification, interest) refresh on the periodic
//! tick; availability features (responsiveness, activity) refresh as soon
//! as a question is routed to a user or answered.

mod counters;
mod formulas;
mod index;
mod snapshot;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use counters::{
    accumulate, accumulate_sources, AnswerRecord, AskRecord, CounterTable, MetricCounters,
    TopicKey, UserCounters,
};
pub use formulas::{
    activity, interest, normalize, qualification, qualification_raw, responsiveness, Feature,
    FeatureVector, SmoothingParams,
};
pub use index::{
    AnswerOutcome, FeatureCounters, FeatureIndex, FeatureSmoothing, RefreshTrigger, TopicState,
};
pub use snapshot::{
    read_snapshots, snapshot_file_name, write_snapshot, TopicSnapshot, UserSnapshot,
};

use crate::event_model::SECONDS_PER_HOUR;
use crate::ingestion::Window;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("invalid index config: {0}")]
    Config(&'static str),
    #[error("snapshot I/O on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed snapshot {path}: {source}")]
    Format {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureWindows {
    #[serde(default = "FeatureWindows::default_qualification")]
    pub qualification: Window,
    #[serde(default = "FeatureWindows::default_interest")]
    pub interest: Window,
    #[serde(default = "FeatureWindows::default_responsiveness")]
    pub responsiveness: Window,
    #[serde(default = "FeatureWindows::default_activity")]
    pub activity: Window,
}

impl FeatureWindows {
    fn default_qualification() -> Window {
        Window::Forever
    }
    fn default_interest() -> Window {
        Window::days(30)
    }
    fn default_responsiveness() -> Window {
        Window::days(30)
    }
    fn default_activity() -> Window {
        Window::days(7)
    }

    pub fn get(&self, f: Feature) -> Window {
        match f {
            Feature::Qualification => self.qualification,
            Feature::Interest => self.interest,
            Feature::Responsiveness => self.responsiveness,
            Feature::Activity => self.activity,
        }
    }
}

impl Default for FeatureWindows {
    fn default() -> Self {
        Self {
            qualification: Self::default_qualification(),
            interest: Self::default_interest(),
            responsiveness: Self::default_responsiveness(),
            activity: Self::default_activity(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IndexConfig {
    pub windows: FeatureWindows,
    /// Period of the knowledge refresh tick.
    pub knowledge_refresh_hours: i64,
    /// Lower bound on the mean response time before it is inverted.
    pub rt_floor_hours: f64,
    /// Upper bound on activity hours; defaults to the activity window.
    pub activity_cap_hours: Option<f64>,
}

impl Default for IndexConfig {
    fn default() -> Self {
        Self {
            windows: FeatureWindows::default(),
            knowledge_refresh_hours: 24,
            rt_floor_hours: 0.1,
            activity_cap_hours: None,
        }
    }
}

const FALLBACK_ACTIVITY_CAP_HOURS: f64 = 7.0 * 24.0;

impl IndexConfig {
    pub fn activity_cap_hours(&self) -> f64 {
        self.activity_cap_hours.unwrap_or_else(|| {
            self.windows
                .activity
                .span_seconds()
                .map_or(FALLBACK_ACTIVITY_CAP_HOURS, |s| {
                    s as f64 / SECONDS_PER_HOUR as f64
                })
        })
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        if !(self.rt_floor_hours > 0.0) {
            return Err(IndexError::Config("rt_floor_hours must be positive"));
        }
        if !(self.activity_cap_hours() > 0.0) {
            return Err(IndexError::Config("activity cap must be positive"));
        }
        if self.knowledge_refresh_hours <= 0 {
            return Err(IndexError::Config(
                "knowledge_refresh_hours must be positive",
            ));
        }
        Ok(())
    }
}
