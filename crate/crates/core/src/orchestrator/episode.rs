//! Episode records: everything an episode saw and wrote, enough to audit
//! every reward and to rebuild store state by replay.

use std::io::{BufRead, Write};
use std::sync::atomic::{AtomicI64, Ordering};

use serde::{Deserialize, Serialize};

use super::fsm::Phase;
use crate::agent::TranscriptEntry;
use crate::bandit::{BanditError, MemoryBank, Namespace, StoreOp, Timestamp};
use crate::bus::Delivery;
use crate::hacker::{HackRound, VulnReport};
use crate::oracle::OracleAttempt;
use crate::patch::GateReport;
use crate::qms::{GraphDelta, UpdateReport};
use crate::sandbox::Verdict;

pub const EPISODE_FORMAT: &str = "cploop.episode";
pub const EPISODE_VERSION: u32 = 1;

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as Timestamp)
    }
}

/// Ticks by one on every reading, for reproducible runs.
#[derive(Debug, Default)]
pub struct LogicalClock(AtomicI64);

impl LogicalClock {
    pub fn starting_at(t: Timestamp) -> Self {
        Self(AtomicI64::new(t))
    }
}

impl Clock for LogicalClock {
    fn now(&self) -> Timestamp {
        self.0.fetch_add(1, Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEntry {
    pub phase: Phase,
    pub solver_iteration: u32,
    pub hack_round: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictEntry {
    pub phase: Phase,
    pub solver_iteration: u32,
    pub test_id: String,
    pub verdict: Verdict,
}

/// One reward written to a store. Every `StoreOp::Reward` in the record
/// has exactly one of these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardEntry {
    pub namespace: Namespace,
    pub item_id: String,
    pub reward: f64,
    pub source: String,
}

/// A contrastive pair waiting for the skill graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRequest {
    pub failing_source: String,
    pub input: String,
    /// Filled in when a later candidate passes the breaking input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub tags_level1: Vec<String>,
    pub tags_level2: Vec<String>,
    pub algorithm: String,
    pub steps: Vec<String>,
    pub strategy_item: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Solved,
    Failed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub status: EpisodeStatus,
    pub solver_iterations: u32,
    pub hack_rounds: u32,
    pub oracle_attempts: u32,
    /// Verdict kind or reason behind the last failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_failure: Option<String>,
    pub pass_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub format: String,
    pub version: u32,
    pub problem_id: String,
    pub label: String,
    pub phases: Vec<PhaseEntry>,
    pub transcript: Vec<TranscriptEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanSummary>,
    pub oracle_attempts: Vec<OracleAttempt>,
    pub verdicts: Vec<VerdictEntry>,
    pub gate_reports: Vec<GateReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyst_report: Option<VulnReport>,
    pub hack_rounds: Vec<HackRound>,
    pub break_deliveries: Vec<Delivery>,
    pub growth_requests: Vec<GrowthRequest>,
    pub store_ops: Vec<StoreOp>,
    pub rewards: Vec<RewardEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill_update: Option<UpdateReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_delta: Option<GraphDelta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_source: Option<String>,
    pub outcome: Outcome,
}

impl EpisodeRecord {
    pub fn new(problem_id: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            format: EPISODE_FORMAT.into(),
            version: EPISODE_VERSION,
            problem_id: problem_id.into(),
            label: label.into(),
            phases: Vec::new(),
            transcript: Vec::new(),
            plan: None,
            oracle_attempts: Vec::new(),
            verdicts: Vec::new(),
            gate_reports: Vec::new(),
            analyst_report: None,
            hack_rounds: Vec::new(),
            break_deliveries: Vec::new(),
            growth_requests: Vec::new(),
            store_ops: Vec::new(),
            rewards: Vec::new(),
            skill_update: None,
            graph_delta: None,
            final_source: None,
            outcome: Outcome {
                status: EpisodeStatus::Failed,
                solver_iterations: 0,
                hack_rounds: 0,
                oracle_attempts: 0,
                last_failure: None,
                pass_rate: 0.0,
            },
        }
    }

    /// Copy with timing, memory and free-text diagnostics cleared; two runs
    /// of the same scripted scenario agree on this form.
    pub fn canonical(&self) -> Self {
        let mut c = self.clone();
        for v in &mut c.verdicts {
            v.verdict.elapsed = 0.0;
            v.verdict.peak_memory = 0;
            v.verdict.diagnostic.clear();
        }
        c
    }

    /// Every reward op is matched by an audit entry with the same value.
    pub fn audit_complete(&self) -> bool {
        let ops: Vec<(Namespace, &str, f64)> = self
            .store_ops
            .iter()
            .filter_map(|op| match op {
                StoreOp::Reward {
                    namespace, id, reward, ..
                } => Some((*namespace, id.as_str(), *reward)),
                _ => None,
            })
            .collect();
        let audit: Vec<(Namespace, &str, f64)> = self
            .rewards
            .iter()
            .map(|r| (r.namespace, r.item_id.as_str(), r.reward))
            .collect();
        ops == audit
    }

    pub fn write_json(&self, w: impl Write) -> Result<(), serde_json::Error> {
        serde_json::to_writer_pretty(w, self)
    }

    pub fn read_json(r: impl BufRead) -> Result<Self, serde_json::Error> {
        serde_json::from_reader(r)
    }
}

/// Re-apply an episode's store writes in order.
pub fn replay(record: &EpisodeRecord, bank: &mut MemoryBank) -> Result<usize, BanditError> {
    for op in &record.store_ops {
        bank.apply(op)?;
    }
    Ok(record.store_ops.len())
}
