use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Axis a feature key lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureKind {
    /// Position in the pipeline state machine.
    Fsm,
    /// Failure class observed on the previous iteration.
    Fail,
    /// Problem-level algorithmic tag.
    Tag,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Fsm => "FSM",
            FeatureKind::Fail => "FAIL",
            FeatureKind::Tag => "TAG",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FeatureKeyError {
    #[error("feature key `{0}` has no `KIND:` prefix")]
    MissingSeparator(String),
    #[error("unknown feature kind `{0}`")]
    UnknownKind(String),
    #[error("feature key value must be non-empty and free of whitespace, got `{0}`")]
    BadValue(String),
}

/// A sparse context feature such as `FSM:SOLVE_DRAFT`, `FAIL:TLE` or `TAG:dp`.
///
/// Serialized as its canonical `KIND:value` string so it can key JSON maps.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FeatureKey {
    kind: FeatureKind,
    value: String,
}

impl FeatureKey {
    pub fn new(kind: FeatureKind, value: impl Into<String>) -> Result<Self, FeatureKeyError> {
        let value = value.into();
        if value.is_empty() || value.chars().any(char::is_whitespace) {
            return Err(FeatureKeyError::BadValue(value));
        }
        Ok(Self { kind, value })
    }

    pub fn fsm(value: impl Into<String>) -> Result<Self, FeatureKeyError> {
        Self::new(FeatureKind::Fsm, value)
    }

    pub fn fail(value: impl Into<String>) -> Result<Self, FeatureKeyError> {
        Self::new(FeatureKind::Fail, value)
    }

    pub fn tag(value: impl Into<String>) -> Result<Self, FeatureKeyError> {
        Self::new(FeatureKind::Tag, value)
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn value(&self) -> &str {
        &self.value
    }
}

impl fmt::Display for FeatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.value)
    }
}

impl FromStr for FeatureKey {
    type Err = FeatureKeyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| FeatureKeyError::MissingSeparator(s.to_string()))?;
        let kind = match kind {
            "FSM" => FeatureKind::Fsm,
            "FAIL" => FeatureKind::Fail,
            "TAG" => FeatureKind::Tag,
            other => return Err(FeatureKeyError::UnknownKind(other.to_string())),
        };
        Self::new(kind, value)
    }
}

impl TryFrom<String> for FeatureKey {
    type Error = FeatureKeyError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<FeatureKey> for String {
    fn from(k: FeatureKey) -> String {
        k.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bandit context must carry at least one active feature key")]
pub struct EmptyContext;

/// Featurized state handed to the bandit: the active keys Φ(x) plus the
/// problem tags used for the overlap prior.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BanditContext {
    active_keys: BTreeSet<FeatureKey>,
    problem_tags: BTreeSet<String>,
}

impl BanditContext {
    pub fn new(
        active_keys: impl IntoIterator<Item = FeatureKey>,
        problem_tags: impl IntoIterator<Item = String>,
    ) -> Result<Self, EmptyContext> {
        let active_keys: BTreeSet<_> = active_keys.into_iter().collect();
        if active_keys.is_empty() {
            return Err(EmptyContext);
        }
        Ok(Self {
            active_keys,
            problem_tags: problem_tags.into_iter().collect(),
        })
    }

    pub fn active_keys(&self) -> &BTreeSet<FeatureKey> {
        &self.active_keys
    }

    pub fn problem_tags(&self) -> &BTreeSet<String> {
        &self.problem_tags
    }
}
