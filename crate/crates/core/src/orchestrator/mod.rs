//! Per-problem closed loop: plan, build the oracle, draft and repair a
//! solution, attack it, then write every reward.

mod config;
mod episode;
mod fsm;
mod runner;
mod training;

use std::collections::BTreeSet;

pub use config::{ConfigError, EngineConfig, SkillConfig};
pub use episode::{
    replay, Clock, EpisodeRecord, EpisodeStatus, GrowthRequest, LogicalClock, Outcome, PhaseEntry, PlanSummary,
    RewardEntry, SystemClock, VerdictEntry, EPISODE_FORMAT, EPISODE_VERSION,
};
pub use fsm::{Budgets, Fsm, IllegalTransition, Phase, Signal, MAX_HACK_ROUNDS, MAX_ORACLE_ATTEMPTS, MAX_SOLVER_ITERATIONS};
pub use runner::{Engine, EngineError, Skills};
pub use training::TrainingReport;

use crate::bandit::{BanditContext, FeatureKey};

/// `(raw, raw / |predicted|)` where each distinct predicted tag scores +1
/// if it is a true tag and −1 otherwise.
pub fn planner_reward<S: AsRef<str>>(predicted: &[S], truth: &BTreeSet<String>) -> (i64, f64) {
    let uniq: BTreeSet<&str> = predicted.iter().map(AsRef::as_ref).collect();
    if uniq.is_empty() {
        return (0, 0.0);
    }
    let raw: i64 = uniq.iter().map(|t| if truth.contains(*t) { 1 } else { -1 }).sum();
    (raw, raw as f64 / uniq.len() as f64)
}

/// Φ(x): the phase, the last failure kind if any, and the tags. Values the
/// key syntax cannot hold are dropped.
pub fn feature_context<'t>(
    phase: Phase,
    failure: Option<&str>,
    tags: impl IntoIterator<Item = &'t String>,
) -> BanditContext {
    let tags: Vec<String> = tags.into_iter().cloned().collect();
    let mut keys = vec![FeatureKey::fsm(phase.as_str()).expect("phase names are valid keys")];
    keys.extend(failure.and_then(|f| FeatureKey::fail(f).ok()));
    keys.extend(tags.iter().filter_map(|t| FeatureKey::tag(t.as_str()).ok()));
    BanditContext::new(keys, tags).expect("phase key is always present")
}
