use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::feature::FeatureKey;

/// Knowledge namespace. Each agent owns one or two of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Namespace {
    Plan,
    Solve,
    Test,
    Hack,
    Oracle,
}

impl Namespace {
    pub const ALL: [Namespace; 5] = [
        Namespace::Plan,
        Namespace::Solve,
        Namespace::Test,
        Namespace::Hack,
        Namespace::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Namespace::Plan => "plan",
            Namespace::Solve => "solve",
            Namespace::Test => "test",
            Namespace::Hack => "hack",
            Namespace::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Namespace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown namespace `{0}` (expected plan, solve, test, hack or oracle)")]
pub struct UnknownNamespace(pub String);

impl FromStr for Namespace {
    type Err = UnknownNamespace;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Namespace::ALL
            .into_iter()
            .find(|ns| ns.as_str() == s)
            .ok_or_else(|| UnknownNamespace(s.to_string()))
    }
}

/// Milliseconds since the Unix epoch.
pub type Timestamp = i64;

/// One bandit-scored knowledge entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryItem {
    pub id: String,
    pub namespace: Namespace,
    pub summary: String,
    #[serde(default)]
    pub payload: serde_json::Value,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    pub use_count: u64,
    pub avg_reward: f64,
    pub deprecated: bool,
    pub bias: f64,
    #[serde(default)]
    pub weights: BTreeMap<FeatureKey, f64>,
    pub created_at: Timestamp,
    pub last_used_at: Timestamp,
}

impl MemoryItem {
    /// A fresh item with zero parameters and no history.
    pub fn new(
        id: impl Into<String>,
        namespace: Namespace,
        summary: impl Into<String>,
        now: Timestamp,
    ) -> Self {
        Self {
            id: id.into(),
            namespace,
            summary: summary.into(),
            payload: serde_json::Value::Null,
            tags: BTreeSet::new(),
            use_count: 0,
            avg_reward: 0.0,
            deprecated: false,
            bias: 0.0,
            weights: BTreeMap::new(),
            created_at: now,
            last_used_at: now,
        }
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.tags = tags.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_payload(mut self, payload: serde_json::Value) -> Self {
        self.payload = payload;
        self
    }
}
