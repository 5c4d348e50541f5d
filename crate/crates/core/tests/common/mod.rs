#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::{Mutex, OnceLock};

use cploop_core::bandit::MemoryBank;
use cploop_core::llm::{Scenario, ScriptedLlm};
use cploop_core::orchestrator::{Engine, EngineConfig, EpisodeRecord, LogicalClock};
use cploop_core::pipeline::ProblemRecord;
use cploop_core::prompts::PromptLibrary;
use cploop_core::sandbox::Sandbox;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn pair_sum() -> ProblemRecord {
    serde_json::from_str(&std::fs::read_to_string(fixture("episodes/pair_sum.json")).unwrap()).unwrap()
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::parse(&std::fs::read_to_string(fixture(&format!("episodes/{name}.json"))).unwrap()).unwrap()
}

pub struct Run {
    pub record: EpisodeRecord,
    pub bank: MemoryBank,
    /// Script steps left unconsumed.
    pub leftover: usize,
}

/// Shared so identical sources compile once per test binary.
pub fn sandbox() -> &'static Sandbox {
    static SB: OnceLock<Sandbox> = OnceLock::new();
    SB.get_or_init(Sandbox::default)
}

/// One scripted episode against a fresh memory bank.
pub fn run_episode(name: &str) -> Run {
    let llm = ScriptedLlm::new(scenario(name));
    let prompts = PromptLibrary::builtin();
    let sandbox = sandbox();
    let bank = Mutex::new(MemoryBank::default());
    let clock = LogicalClock::starting_at(1_000);
    let engine = Engine {
        cfg: EngineConfig::default(),
        llm: &llm,
        prompts: &prompts,
        sandbox,
        bank: &bank,
        skills: None,
        clock: &clock,
    };
    let record = engine.run_problem(&pair_sum());
    Run {
        record,
        bank: bank.into_inner().unwrap(),
        leftover: llm.remaining(),
    }
}
