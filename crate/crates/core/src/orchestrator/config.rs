use serde::{Deserialize, Serialize};

use super::fsm::Budgets;
use crate::hacker::HackConfig;
use crate::llm::{Decoding, HttpConfig};
use crate::oracle::OracleConfig;
use crate::qms::{GrowthConfig, DEFAULT_LEARNING_RATE, DEFAULT_POOL_SIZE, DEFAULT_SAMPLE_SIZE, DEFAULT_TEMPERATURE, DEFAULT_TOP_K_Q};
use crate::sandbox::ExecutionLimits;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SkillConfig {
    pub top_k_q: usize,
    pub pool_size: usize,
    pub sample_size: usize,
    pub temperature: f64,
    pub learning_rate: f64,
    pub growth: GrowthConfig,
}

impl Default for SkillConfig {
    fn default() -> Self {
        Self {
            top_k_q: DEFAULT_TOP_K_Q,
            pool_size: DEFAULT_POOL_SIZE,
            sample_size: DEFAULT_SAMPLE_SIZE,
            temperature: DEFAULT_TEMPERATURE,
            learning_rate: DEFAULT_LEARNING_RATE,
            growth: GrowthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub budgets: Budgets,
    pub decoding: Decoding,
    /// Bandit exploration rate for advice selection.
    pub epsilon: f64,
    pub advice_k: usize,
    pub seed: u64,
    /// Ask the model for a failure diagnosis before each repair decision.
    pub analyze_failure: bool,
    /// Used when the problem states no limits of its own.
    pub solve_limits: ExecutionLimits,
    pub oracle: OracleConfig,
    pub hack: HackConfig,
    pub skills: SkillConfig,
    pub tag_whitelist_level1: Vec<String>,
    pub tag_whitelist_level2: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub http: Option<HttpConfig>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let words = |s: &str| s.split_whitespace().map(str::to_string).collect();
        Self {
            budgets: Budgets::default(),
            decoding: Decoding::default(),
            epsilon: 0.1,
            advice_k: 3,
            seed: 0,
            analyze_failure: false,
            solve_limits: ExecutionLimits {
                cpu_seconds: 2.0,
                wall_seconds: 5.0,
                memory_bytes: 256 << 20,
                output_bytes: 16 << 20,
            },
            oracle: OracleConfig::default(),
            hack: HackConfig::default(),
            skills: SkillConfig::default(),
            tag_whitelist_level1: words(
                "implementation math greedy dp data_structures constructive_algorithms brute_force graphs \
                 sortings binary_search dfs_and_similar trees strings number_theory combinatorics",
            ),
            tag_whitelist_level2: words(
                "prefix_sums two_pointers bitmasks dsu shortest_paths hashing geometry games probabilities \
                 divide_and_conquer interactive matrices flows",
            ),
            http: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config: {0}")]
pub struct ConfigError(pub String);

impl EngineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(ConfigError(format!("epsilon {} outside [0, 1]", self.epsilon)));
        }
        if self.advice_k == 0 {
            return Err(ConfigError("advice_k must be at least 1".into()));
        }
        if self.oracle.n_target == 0 {
            return Err(ConfigError("oracle.n_target must be at least 1".into()));
        }
        for l in [&self.solve_limits, &self.oracle.limits, &self.hack.limits] {
            l.validate().map_err(|e| ConfigError(e.to_string()))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let cfg = EngineConfig::from_toml("seed = 7\n[oracle]\nn_target = 5\n[budgets]\nsolver_iterations = 4\nhack_rounds = 1\noracle_attempts = 3\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.oracle.n_target, 5);
        assert_eq!(cfg.oracle.tau, 0.9);
        assert_eq!(cfg.budgets.solver_iterations, 4);
        assert!(EngineConfig::from_toml("epsilon = 2.0").is_err());
    }
}
