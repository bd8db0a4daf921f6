//! One JSON file per (crowd, topic).

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::counters::TopicKey;
use super::formulas::FeatureVector;
use super::index::{FeatureCounters, FeatureSmoothing, TopicState};
use super::IndexError;
use crate::event_model::{CrowdId, Timestamp, Topic, UserId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSnapshot {
    pub user: UserId,
    pub counters: FeatureCounters,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSnapshot {
    pub crowd: CrowdId,
    pub topic: Topic,
    pub knowledge_at: Timestamp,
    pub availability_at: Timestamp,
    pub skyline_stale: bool,
    pub smoothing: FeatureSmoothing,
    pub users: Vec<UserSnapshot>,
}

impl TopicSnapshot {
    pub fn from_state(key: &TopicKey, state: &TopicState) -> Self {
        let users = state
            .counters
            .iter()
            .filter_map(|(user, counters)| {
                state.features.get(user).map(|fv| UserSnapshot {
                    user: user.clone(),
                    counters: counters.clone(),
                    features: *fv,
                })
            })
            .collect();
        Self {
            crowd: key.crowd.clone(),
            topic: key.topic.clone(),
            knowledge_at: state.knowledge_at,
            availability_at: state.availability_at,
            skyline_stale: state.skyline_stale,
            smoothing: state.smoothing,
            users,
        }
    }

    pub fn key(&self) -> TopicKey {
        TopicKey::new(self.crowd.clone(), self.topic.clone())
    }

    pub fn into_state(self) -> (TopicKey, TopicState) {
        let key = self.key();
        let mut state = TopicState {
            smoothing: self.smoothing,
            knowledge_at: self.knowledge_at,
            availability_at: self.availability_at,
            skyline_stale: self.skyline_stale,
            ..Default::default()
        };
        for u in self.users {
            state.features.insert(u.user.clone(), u.features);
            state.counters.insert(u.user, u.counters);
        }
        (key, state)
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn snapshot_file_name(key: &TopicKey) -> String {
    format!(
        "{}__{}.json",
        sanitize(key.crowd.as_str()),
        sanitize(key.topic.as_str())
    )
}

pub fn write_snapshot(dir: &Path, snap: &TopicSnapshot) -> Result<PathBuf, IndexError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| IndexError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let path = dir.join(snapshot_file_name(&snap.key()));
    let file = fs::File::create(&path).map_err(io(&path))?;
    serde_json::to_writer_pretty(BufWriter::new(file), snap).map_err(|source| {
        IndexError::Format {
            path: path.display().to_string(),
            source,
        }
    })?;
    Ok(path)
}

/// Load every `*.json` snapshot in `dir`, ordered by file name. A missing
/// directory is an empty index.
pub fn read_snapshots(dir: &Path) -> Result<Vec<TopicSnapshot>, IndexError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| IndexError::Io { path, source }
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let text = fs::read_to_string(&path).map_err(io(&path))?;
            serde_json::from_str(&text).map_err(|source| IndexError::Format {
                path: path.display().to_string(),
                source,
            })
        })
        .collect()
}
