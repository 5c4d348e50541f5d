use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::difficulty::{DifficultyBand, NativeDifficulty};
use super::PipelineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Platform {
    Codeforces,
    AtCoder,
    LeetCode,
    Aizu,
    CodeContests,
    Other,
}

impl Platform {
    pub fn as_str(self) -> &'static str {
        match self {
            Platform::Codeforces => "codeforces",
            Platform::AtCoder => "atcoder",
            Platform::LeetCode => "leetcode",
            Platform::Aizu => "aizu",
            Platform::CodeContests => "codecontests",
            Platform::Other => "other",
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub verdict: String,
    #[serde(default)]
    pub exec_time_ms: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    #[serde(default)]
    pub input_spec: String,
    #[serde(default)]
    pub output_spec: String,
    /// Named variable bounds, e.g. `n -> [1, 2e5]`.
    #[serde(default)]
    pub bounds: BTreeMap<String, Bound>,
    #[serde(default)]
    pub time_limit_ms: Option<u64>,
    #[serde(default)]
    pub memory_limit_mb: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemFlags {
    #[serde(default)]
    pub interactive: bool,
    #[serde(default)]
    pub special_judge: bool,
    #[serde(default)]
    pub multi_test_packing: bool,
}

/// One problem in the unified schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub id: String,
    pub platform: Platform,
    pub statement: String,
    #[serde(default)]
    pub constraints: Constraints,
    #[serde(default)]
    pub public_tests: Vec<TestCase>,
    #[serde(default)]
    pub hidden_tests: Vec<TestCase>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub editorial: Option<String>,
    #[serde(default)]
    pub submissions: Vec<Submission>,
    /// Known-correct source, used as an independent judge when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_solution: Option<String>,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub native_difficulty: Option<NativeDifficulty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<DifficultyBand>,
    #[serde(default)]
    pub flags: ProblemFlags,
}

impl ProblemRecord {
    pub fn test_count(&self) -> usize {
        self.public_tests.len() + self.hidden_tests.len()
    }
}

/// Newline-delimited JSON, one record per line; blank lines are skipped.
pub fn read_records(r: impl BufRead) -> Result<Vec<ProblemRecord>, PipelineError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| PipelineError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PipelineError::Record {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_records<'a>(
    mut w: impl Write,
    records: impl IntoIterator<Item = &'a ProblemRecord>,
) -> Result<(), PipelineError> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| PipelineError::Io(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| PipelineError::Io(e.to_string()))?;
    }
    Ok(())
}
