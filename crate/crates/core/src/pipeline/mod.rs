//! Four-stage problem curation: completeness, tag balancing, deduplication
//! and difficulty pruning.

mod difficulty;
mod filters;
pub mod fixture;
mod record;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use difficulty::{map_difficulty, DifficultyBand, NativeDifficulty, Unmappable, SCALE_MAX, SCALE_MIN};
pub use filters::{
    balance_tags, completeness_problems, dedup, filter_completeness, nearest_rank_percentile, prune_difficulty,
    tag_counts, DropReason, Dropped, StageOutput,
};
pub use record::{
    read_records, write_records, Bound, Constraints, Platform, ProblemFlags, ProblemRecord, Submission, TestCase,
};

use crate::embed::{EmbedError, Embedder};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("i/o: {0}")]
    Io(String),
    #[error("record on line {line}: {reason}")]
    Record { line: usize, reason: String },
    #[error("embedding failed, dedup aborted: {0}")]
    Embed(#[from] EmbedError),
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub tag_cap: usize,
    /// Pairs with cosine similarity strictly above this are duplicates.
    pub dedup_threshold: f64,
    /// Percent, e.g. 5.0 for the 5th percentile.
    pub floor_percentile: f64,
    pub floor_overrides: BTreeMap<String, u32>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tag_cap: 2300,
            dedup_threshold: 0.93,
            floor_percentile: 5.0,
            floor_overrides: BTreeMap::new(),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.tag_cap == 0 {
            return Err(PipelineError::Config("tag_cap must be positive".into()));
        }
        if !(-1.0..=1.0).contains(&self.dedup_threshold) {
            return Err(PipelineError::Config("dedup_threshold must lie in [-1, 1]".into()));
        }
        if !(0.0..=100.0).contains(&self.floor_percentile) {
            return Err(PipelineError::Config("floor_percentile must lie in [0, 100]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u8,
    pub name: String,
    pub input: usize,
    pub output: usize,
    pub platform_in: BTreeMap<Platform, usize>,
    pub platform_out: BTreeMap<Platform, usize>,
    pub tags_in: BTreeMap<String, usize>,
    pub tags_out: BTreeMap<String, usize>,
    pub drop_reasons: BTreeMap<DropReason, usize>,
    pub dropped: Vec<Dropped>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub floors: BTreeMap<String, u32>,
}

impl StageReport {
    /// Retention ratio of this stage; 1.0 for an empty input.
    pub fn ratio(&self) -> f64 {
        if self.input == 0 {
            1.0
        } else {
            self.output as f64 / self.input as f64
        }
    }

    pub fn platform_ratio(&self, p: Platform) -> Option<f64> {
        let i = *self.platform_in.get(&p)?;
        (i > 0).then(|| self.platform_out.get(&p).copied().unwrap_or(0) as f64 / i as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub initial: usize,
    pub stages: Vec<StageReport>,
}

impl FilterReport {
    pub fn final_count(&self) -> usize {
        self.stages.last().map_or(self.initial, |s| s.output)
    }

    /// Product of stage ratios; equals final/initial when nothing is empty.
    pub fn cumulative_ratio(&self) -> f64 {
        self.stages.iter().map(StageReport::ratio).product()
    }

    pub fn render(&self) -> String {
        let mut s = String::from("stage\tname\tinput\toutput\tratio\n");
        for st in &self.stages {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.4}\n",
                st.stage,
                st.name,
                st.input,
                st.output,
                st.ratio()
            ));
        }
        s
    }
}

fn platform_counts(records: &[ProblemRecord]) -> BTreeMap<Platform, usize> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry(r.platform).or_insert(0) += 1;
    }
    m
}

fn report(stage: u8, name: &str, input: &[ProblemRecord], out: &StageOutput) -> StageReport {
    let mut drop_reasons = BTreeMap::new();
    for d in &out.dropped {
        *drop_reasons.entry(d.reason).or_insert(0) += 1;
    }
    StageReport {
        stage,
        name: name.into(),
        input: input.len(),
        output: out.survivors.len(),
        platform_in: platform_counts(input),
        platform_out: platform_counts(&out.survivors),
        tags_in: tag_counts(input),
        tags_out: tag_counts(&out.survivors),
        drop_reasons,
        dropped: out.dropped.clone(),
        floors: out.floors.clone(),
    }
}

/// Run stages `1..=up_to` (clamped to 4) and return survivors plus a report.
pub fn run_pipeline(
    records: Vec<ProblemRecord>,
    cfg: &PipelineConfig,
    embedder: &dyn Embedder,
    up_to: u8,
) -> Result<(Vec<ProblemRecord>, FilterReport), PipelineError> {
    cfg.validate()?;
    let mut rep = FilterReport {
        initial: records.len(),
        stages: Vec::new(),
    };
    let mut cur = records;
    for stage in 1..=up_to.min(4) {
        let (name, out) = match stage {
            1 => ("completeness", filter_completeness(cur.clone())),
            2 => ("tag_balance", balance_tags(cur.clone(), cfg.tag_cap, cfg.seed)),
            3 => ("dedup", dedup(cur.clone(), cfg.dedup_threshold, embedder)?),
            _ => (
                "difficulty_floor",
                prune_difficulty(cur.clone(), cfg.floor_percentile, &cfg.floor_overrides),
            ),
        };
        log::info!("stage {stage} {name}: {} -> {}", cur.len(), out.survivors.len());
        rep.stages.push(report(stage, name, &cur, &out));
        cur = out.survivors;
    }
    Ok((cur, rep))
}
