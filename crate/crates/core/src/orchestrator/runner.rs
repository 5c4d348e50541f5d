use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::EngineConfig;
use super::episode::{
    Clock, EpisodeRecord, EpisodeStatus, GrowthRequest, PhaseEntry, PlanSummary, RewardEntry, VerdictEntry,
};
use super::fsm::{Fsm, IllegalTransition, Phase, Signal};
use super::{feature_context, planner_reward};
use crate::agent::{constraints_json, constraints_text, tests_block, AgentError, Caller};
use crate::bandit::{BanditContext, BanditError, MemoryBank, MemoryItem, Namespace, OpEffect, StoreOp};
use crate::bus::{route_item_id, BreakEvent, BusEffect, Delivery, EventBus};
use crate::embed::{EmbedError, Embedder};
use crate::hacker::{self, next_route, AttackRoute, HackError, HackTarget, RouteDecision};
use crate::llm::{extract_code, extract_json, LlmPort};
use crate::oracle::{self, BuiltArtifact, OracleConfig, OracleError};
use crate::patch::{apply_patch, parse_patch, regression_gate, PatchError, PATCH_FORMAT};
use crate::pipeline::ProblemRecord;
use crate::prompts::{bindings, PromptLibrary};
use crate::qms::{sample_skills, QmsError, SharedGraph, SkillSample};
use crate::sandbox::{
    exact_equal, CompileOutcome, ExecutionLimits, Judge, JudgeSource, Program, Sandbox, SandboxError, Verdict,
    VerdictKind,
};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Hack(#[from] HackError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Qms(#[from] QmsError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Fsm(#[from] IllegalTransition),
    #[error(transparent)]
    Patch(#[from] PatchError),
}

/// Skill graph plus the embedder its Q nodes were built with.
#[derive(Clone, Copy)]
pub struct Skills<'a> {
    pub graph: &'a SharedGraph,
    pub embedder: &'a dyn Embedder,
}

/// Namespace, item, reward, context and reason for a reward applied at finalize.
pub(super) type ExtraReward = (Namespace, String, f64, BanditContext, String);

pub struct Engine<'a> {
    pub cfg: EngineConfig,
    pub llm: &'a dyn LlmPort,
    pub prompts: &'a PromptLibrary,
    pub sandbox: &'a Sandbox,
    pub bank: &'a Mutex<MemoryBank>,
    pub skills: Option<Skills<'a>>,
    pub clock: &'a dyn Clock,
}

pub(super) struct Episode<'e> {
    pub caller: Caller<'e>,
    pub rec: EpisodeRecord,
    pub fsm: Fsm,
    pending: Vec<(StoreOp, RewardEntry)>,
    seed: u64,
    pub solve_advice: Vec<String>,
    pub skill_sample: Option<SkillSample>,
}

#[derive(Debug, Clone)]
pub(super) struct Plan {
    pub summary: PlanSummary,
    pub tags: BTreeSet<String>,
}

#[derive(Debug, Clone)]
struct Case {
    id: String,
    input: String,
    expected: Option<String>,
}

#[derive(Debug, Clone)]
struct FailureInfo {
    test_id: String,
    kind: VerdictKind,
    input: String,
    expected: Option<String>,
    got: Option<String>,
    note: String,
}

#[derive(Debug, Clone)]
pub(super) struct Candidate {
    pub source: String,
    program: Option<Program>,
    pub results: BTreeMap<String, bool>,
    failures: Vec<FailureInfo>,
}

impl Candidate {
    fn all_pass(&self) -> bool {
        self.program.is_some() && self.results.values().all(|&b| b)
    }

    pub fn pass_rate_where(&self, pred: impl Fn(&str) -> bool) -> f64 {
        let sel: Vec<bool> = self.results.iter().filter(|(k, _)| pred(k)).map(|(_, &v)| v).collect();
        if sel.is_empty() {
            return 0.0;
        }
        sel.iter().filter(|&&b| b).count() as f64 / sel.len() as f64
    }

    fn dominant_failure(&self) -> Option<VerdictKind> {
        let mut counts: BTreeMap<VerdictKind, usize> = BTreeMap::new();
        for f in &self.failures {
            *counts.entry(f.kind).or_default() += 1;
        }
        counts.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|p| p.0)
    }
}

pub(super) struct SolveSetup<'s> {
    pub plan: &'s Plan,
    pub artifact: Option<&'s BuiltArtifact>,
    pub use_skills: bool,
}

fn clip(s: &str, n: usize) -> String {
    if s.len() <= n {
        return s.to_string();
    }
    let mut end = n;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...", &s[..end])
}

fn hash_seed(text: &str) -> u64 {
    let d = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("eight bytes"))
}

fn string_list(v: Option<&serde_json::Value>) -> Vec<String> {
    v.and_then(|x| x.as_array())
        .map(|a| a.iter().filter_map(|s| s.as_str().map(str::to_string)).collect())
        .unwrap_or_default()
}

fn problem_limits(base: ExecutionLimits, p: &ProblemRecord) -> ExecutionLimits {
    let mut l = base;
    if let Some(t) = p.constraints.time_limit_ms {
        l.cpu_seconds = t as f64 / 1000.0;
        l.wall_seconds = 2.0 * l.cpu_seconds + 1.0;
    }
    if let Some(m) = p.constraints.memory_limit_mb {
        l.memory_bytes = m << 20;
    }
    l
}

fn advice_text(items: &[MemoryItem]) -> String {
    if items.is_empty() {
        return String::new();
    }
    let lines: Vec<String> = items.iter().map(|i| format!("- {}", i.summary)).collect();
    format!("Notes from earlier problems:\n{}\n", lines.join("\n"))
}

impl<'a> Engine<'a> {
    pub(super) fn new_episode(&self, problem: &ProblemRecord, label: &str) -> Episode<'a> {
        Episode {
            caller: Caller::new(self.llm, self.prompts, self.cfg.decoding),
            rec: EpisodeRecord::new(&problem.id, label),
            fsm: Fsm::new(self.cfg.budgets),
            pending: Vec::new(),
            seed: self.cfg.seed ^ hash_seed(&problem.id),
            solve_advice: Vec::new(),
            skill_sample: None,
        }
    }

    pub(super) fn signal(&self, ep: &mut Episode<'_>, s: Signal) -> Result<Phase, EngineError> {
        let phase = ep.fsm.step(s)?;
        ep.rec.phases.push(PhaseEntry {
            phase,
            solver_iteration: ep.fsm.solver_iterations,
            hack_round: ep.fsm.hack_rounds,
        });
        ep.caller.set_phase(phase.as_str());
        Ok(phase)
    }

    fn write(&self, ep: &mut Episode<'_>, op: StoreOp) -> Result<OpEffect, EngineError> {
        let effect = self.bank.lock().expect("memory bank lock").apply(&op)?;
        ep.rec.store_ops.push(op);
        Ok(effect)
    }

    fn ensure_item(&self, ep: &mut Episode<'_>, item: MemoryItem) -> Result<bool, EngineError> {
        let exists = self.bank.lock().expect("memory bank lock").store(item.namespace).contains(&item.id);
        if !exists {
            self.write(ep, StoreOp::Insert { item })?;
        }
        Ok(!exists)
    }

    fn reward_op(&self, ns: Namespace, id: &str, reward: f64, ctx: &BanditContext, source: &str) -> (StoreOp, RewardEntry) {
        let reward = reward.clamp(-1.0, 1.0);
        (
            StoreOp::Reward {
                namespace: ns,
                id: id.to_string(),
                reward,
                context: ctx.clone(),
                at: self.clock.now(),
            },
            RewardEntry {
                namespace: ns,
                item_id: id.to_string(),
                reward,
                source: source.to_string(),
            },
        )
    }

    /// Apply a reward now and log it.
    pub(super) fn reward_now(
        &self,
        ep: &mut Episode<'_>,
        ns: Namespace,
        id: &str,
        reward: f64,
        ctx: &BanditContext,
        source: &str,
    ) -> Result<(), EngineError> {
        let (op, entry) = self.reward_op(ns, id, reward, ctx, source);
        self.write(ep, op)?;
        ep.rec.rewards.push(entry);
        Ok(())
    }

    /// Queue a reward for the final phase.
    fn reward_later(&self, ep: &mut Episode<'_>, ns: Namespace, id: &str, reward: f64, ctx: &BanditContext, source: &str) {
        ep.pending.push(self.reward_op(ns, id, reward, ctx, source));
    }

    fn advice(&self, ep: &mut Episode<'_>, ns: Namespace, ctx: &BanditContext, salt: u64) -> Result<Vec<MemoryItem>, EngineError> {
        let (ids, items) = {
            let bank = self.bank.lock().expect("memory bank lock");
            let store = bank.store(ns);
            let ids = store.rank_advice(ctx, self.cfg.advice_k, self.cfg.epsilon, ep.seed ^ salt)?;
            let items: Vec<MemoryItem> = ids.iter().filter_map(|id| store.get(id).cloned()).collect();
            (ids, items)
        };
        if !ids.is_empty() {
            self.write(
                ep,
                StoreOp::Touch {
                    namespace: ns,
                    ids,
                    at: self.clock.now(),
                },
            )?;
        }
        Ok(items)
    }

    /// Run one problem end to end. Errors never escape: an episode that
    /// cannot continue is finalized as aborted with its transcript.
    pub fn run_problem(&self, problem: &ProblemRecord) -> EpisodeRecord {
        let mut ep = self.new_episode(problem, "episode");
        let result = self.drive(&mut ep, problem);
        if let Err(e) = result {
            log::error!("episode {} aborted: {e}", problem.id);
            ep.rec.outcome.last_failure = Some(e.to_string());
            if ep.fsm.phase != Phase::Finalize {
                // Abort is legal from every live phase.
                let _ = self.signal(&mut ep, Signal::Abort);
            }
        }
        if let Err(e) = self.finalize(&mut ep, None) {
            log::error!("finalize for {} failed: {e}", problem.id);
            ep.rec.outcome.status = EpisodeStatus::Aborted;
        }
        ep.caller_transcript_into_record();
        ep.rec
    }

    fn drive(&self, ep: &mut Episode<'a>, problem: &ProblemRecord) -> Result<(), EngineError> {
        let plan = self.plan_phase(ep, problem)?;
        let built = self.oracle_phase(ep, problem, &plan)?;
        let setup = SolveSetup {
            plan: &plan,
            artifact: built.as_ref(),
            use_skills: false,
        };
        let cand = self.solve_loop(ep, problem, &setup)?;
        ep.rec.outcome.pass_rate = cand.pass_rate_where(|_| true);
        ep.rec.final_source = Some(cand.source.clone());
        if !cand.all_pass() {
            ep.rec.outcome.last_failure = cand.dominant_failure().map(|k| k.to_string());
        }
        for g in &mut ep.rec.growth_requests {
            let id = format!("break:{}", &hex::encode(Sha256::digest(g.input.as_bytes()))[..16]);
            if cand.results.get(&id) == Some(&true) {
                g.fixed_source = Some(cand.source.clone());
            }
        }
        Ok(())
    }

    pub(super) fn plan_phase(&self, ep: &mut Episode<'a>, problem: &ProblemRecord) -> Result<Plan, EngineError> {
        ep.caller.set_phase(Phase::Plan.as_str());
        let ctx = feature_context(Phase::Plan, None, &BTreeSet::new());
        let advice = self.advice(ep, Namespace::Plan, &ctx, 1)?;
        let mut types = vec!["standard input and output".to_string()];
        if problem.flags.special_judge {
            types.push("several correct outputs accepted".into());
        }
        if problem.flags.interactive {
            types.push("interactive".into());
        }
        let cj = constraints_json(&problem.constraints);
        let reply = ep.caller.call(
            "planner.abstract_problem",
            &bindings([
                ("PROBLEM_DESC", problem.statement.clone()),
                ("PROBLEM_TYPES", types.join(", ")),
                ("CONSTRAINTS_JSON", cj),
                ("TAG_WHITELIST_LEVEL1", self.cfg.tag_whitelist_level1.join(", ")),
                ("TAG_WHITELIST_LEVEL2", self.cfg.tag_whitelist_level2.join(", ")),
                ("MEMORY_ADVICE", advice_text(&advice)),
            ]),
        )?;
        let parsed = extract_json(&reply).ok();
        if parsed.is_none() {
            log::warn!("planner reply for {} is not JSON; continuing without a plan", problem.id);
        }
        let get = |k: &str| parsed.as_ref().and_then(|v| v.get(k));
        let strategy = get("strategy");
        let summary = PlanSummary {
            tags_level1: string_list(get("algorithmic_tags_level1")),
            tags_level2: string_list(get("algorithmic_tags_level2")),
            algorithm: strategy
                .and_then(|s| s.get("algorithm"))
                .and_then(|a| a.as_str())
                .unwrap_or("")
                .to_string(),
            steps: string_list(strategy.and_then(|s| s.get("steps"))),
            strategy_item: format!("plan:{}", problem.id),
        };
        let tags: BTreeSet<String> = summary.tags_level1.iter().chain(&summary.tags_level2).cloned().collect();
        let item = MemoryItem::new(
            &summary.strategy_item,
            Namespace::Plan,
            if summary.algorithm.is_empty() {
                "no strategy recorded".to_string()
            } else {
                format!("try {}", summary.algorithm)
            },
            self.clock.now(),
        )
        .with_tags(tags.iter().cloned())
        .with_payload(serde_json::json!({ "steps": summary.steps }));
        self.ensure_item(ep, item)?;
        if !problem.tags.is_empty() {
            let predicted: Vec<&String> = tags.iter().collect();
            let (raw, r) = planner_reward(&predicted, &problem.tags);
            log::info!("planner tag reward {raw} ({r:+.3}) for {}", problem.id);
            self.reward_later(ep, Namespace::Plan, &summary.strategy_item, r, &ctx, "planner_tags");
            for a in &advice {
                self.reward_later(ep, Namespace::Plan, &a.id, r, &ctx, "planner_tags");
            }
        }
        ep.rec.plan = Some(summary.clone());
        self.signal(ep, Signal::Planned)?;
        Ok(Plan { summary, tags })
    }

    pub(super) fn oracle_phase(
        &self,
        ep: &mut Episode<'a>,
        problem: &ProblemRecord,
        plan: &Plan,
    ) -> Result<Option<BuiltArtifact>, EngineError> {
        if self.bank.lock().expect("memory bank lock").store(Namespace::Oracle).is_empty() {
            for op in oracle::default_catalog_ops(self.clock.now()) {
                self.write(ep, op)?;
            }
        }
        let ctx = feature_context(Phase::OracleBuild, None, &plan.tags);
        let families = oracle::catalog(self.bank.lock().expect("memory bank lock").store(Namespace::Oracle));
        let hints: Vec<String> = self
            .advice(ep, Namespace::Test, &ctx, 2)?
            .iter()
            .map(|i| i.summary.clone())
            .collect();
        let cfg = OracleConfig {
            max_family_attempts: self.cfg.oracle.max_family_attempts.min(self.cfg.budgets.oracle_attempts as usize),
            ..self.cfg.oracle
        };
        let outcome = oracle::build_artifact(&mut ep.caller, self.sandbox, problem, &ctx, &families, &hints, &cfg)?;
        for a in &outcome.attempts {
            if let (Some(r), Some(fid)) = (a.reward, a.artifact.family_id.as_deref()) {
                self.reward_later(ep, Namespace::Oracle, fid, r, &ctx, "oracle");
            }
        }
        let accepted = outcome.built.is_some();
        let rejected = outcome.attempts.len() - usize::from(accepted);
        for _ in 0..rejected {
            if ep.fsm.phase == Phase::OracleBuild {
                self.signal(ep, Signal::OracleRejected)?;
            }
        }
        ep.rec.oracle_attempts = outcome.attempts;
        if ep.fsm.phase == Phase::OracleBuild {
            self.signal(ep, if accepted { Signal::OracleAccepted } else { Signal::OracleUnavailable })?;
        }
        if let Some(b) = &outcome.built {
            assert!(b.artifact.accepted, "a rejected artifact must never reach the solver");
        }
        Ok(outcome.built)
    }

    fn suite(&self, problem: &ProblemRecord, artifact: Option<&BuiltArtifact>) -> Vec<Case> {
        let mut cases: Vec<Case> = problem
            .public_tests
            .iter()
            .enumerate()
            .map(|(i, t)| Case {
                id: format!("public:{i:02}"),
                input: t.input.clone(),
                expected: Some(t.output.clone()),
            })
            .collect();
        if let Some(a) = artifact {
            for (i, (inp, out)) in a.artifact.inputs.iter().zip(&a.artifact.expected_outputs).enumerate() {
                cases.push(Case {
                    id: format!("cert:{i:02}"),
                    input: inp.clone(),
                    expected: Some(out.clone()),
                });
            }
        }
        cases
    }

    fn run_case(program: &Program, case: &Case, judge: &Judge, limits: &ExecutionLimits) -> (Verdict, Option<String>) {
        let expected = case.expected.as_deref().map(str::as_bytes);
        let raw = match program.run_classified(&[], case.input.as_bytes(), limits) {
            Err(e) => {
                let mut v = Verdict::compile_fail(e.to_string());
                v.kind = VerdictKind::RuntimeError;
                return (v, None);
            }
            Ok(Err(v)) => return (v, None),
            Ok(Ok(raw)) => raw,
        };
        let got = String::from_utf8_lossy(&raw.stdout).into_owned();
        let (kind, source, diagnostic) = match judge.resolve(case.input.as_bytes(), &raw.stdout, expected) {
            Ok((k, s, m)) => (k, Some(s), m),
            Err(e) => match expected {
                Some(exp) => {
                    let ok = exact_equal(&raw.stdout, exp);
                    let k = if ok { VerdictKind::Accepted } else { VerdictKind::WrongAnswer };
                    (k, Some(JudgeSource::Exact), format!("judge fallback: {e}"))
                }
                None => (VerdictKind::WrongAnswer, None, format!("unjudgeable: {e}")),
            },
        };
        (
            Verdict {
                kind,
                elapsed: raw.elapsed,
                peak_memory: raw.peak_memory,
                judge_source: source,
                secondary: None,
                diagnostic,
            },
            Some(got),
        )
    }

    fn evaluate(
        &self,
        ep: &mut Episode<'_>,
        source: String,
        cases: &[Case],
        judge: &Judge,
        limits: &ExecutionLimits,
    ) -> Result<Candidate, EngineError> {
        let phase = Phase::SelfValidate;
        let iteration = ep.fsm.solver_iterations;
        let program = match self.sandbox.compile_cpp(&source) {
            Ok(CompileOutcome::Ready(p)) => p,
            Ok(CompileOutcome::Failed(v)) => {
                let diag = clip(&v.diagnostic, 2000);
                ep.rec.verdicts.push(VerdictEntry {
                    phase,
                    solver_iteration: iteration,
                    test_id: "compile".into(),
                    verdict: v,
                });
                return Ok(Candidate {
                    source,
                    program: None,
                    results: cases.iter().map(|c| (c.id.clone(), false)).collect(),
                    failures: vec![FailureInfo {
                        test_id: "compile".into(),
                        kind: VerdictKind::CompileFail,
                        input: String::new(),
                        expected: None,
                        got: None,
                        note: diag,
                    }],
                });
            }
            Err(SandboxError::EmptySource) => {
                return Ok(Candidate {
                    source,
                    program: None,
                    results: cases.iter().map(|c| (c.id.clone(), false)).collect(),
                    failures: vec![FailureInfo {
                        test_id: "compile".into(),
                        kind: VerdictKind::CompileFail,
                        input: String::new(),
                        expected: None,
                        got: None,
                        note: "empty program".into(),
                    }],
                })
            }
            Err(e) => return Err(e.into()),
        };
        let outs: Vec<(Verdict, Option<String>)> =
            cases.par_iter().map(|c| Self::run_case(&program, c, judge, limits)).collect();
        let mut results = BTreeMap::new();
        let mut failures = Vec::new();
        for (case, (verdict, got)) in cases.iter().zip(outs) {
            let ok = verdict.is_accepted();
            results.insert(case.id.clone(), ok);
            if !ok {
                let note = match verdict.kind {
                    VerdictKind::RuntimeError | VerdictKind::Crash => clip(&verdict.diagnostic, 400),
                    _ => String::new(),
                };
                failures.push(FailureInfo {
                    test_id: case.id.clone(),
                    kind: verdict.kind,
                    input: clip(&case.input, 400),
                    expected: case.expected.as_deref().map(|e| clip(e, 200)),
                    got: got.map(|g| clip(&g, 200)),
                    note,
                });
            }
            ep.rec.verdicts.push(VerdictEntry {
                phase,
                solver_iteration: iteration,
                test_id: case.id.clone(),
                verdict,
            });
        }
        Ok(Candidate {
            source,
            program: Some(program),
            results,
            failures,
        })
    }

    fn failures_block(c: &Candidate) -> String {
        if c.failures.is_empty() {
            return "(none)".into();
        }
        c.failures
            .iter()
            .take(3)
            .map(|f| {
                let mut s = format!("[{}] verdict {}\n", f.test_id, f.kind);
                if !f.input.is_empty() {
                    s += &format!("input:\n{}\n", f.input.trim_end());
                }
                if let Some(e) = &f.expected {
                    s += &format!("expected:\n{}\n", e.trim_end());
                }
                if let Some(g) = &f.got {
                    s += &format!("got:\n{}\n", g.trim_end());
                }
                if !f.note.is_empty() {
                    s += &format!("note: {}\n", f.note.trim_end());
                }
                s
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn aggregate_block(c: &Candidate) -> String {
        let total = c.results.len();
        let passed = c.results.values().filter(|&&b| b).count();
        let mut by_kind: BTreeMap<VerdictKind, usize> = BTreeMap::new();
        for f in &c.failures {
            *by_kind.entry(f.kind).or_default() += 1;
        }
        let kinds: Vec<String> = by_kind.iter().map(|(k, n)| format!("{k} x{n}")).collect();
        format!("Passed {passed} of {total} tests. Failures: {}.", kinds.join(", "))
    }

    fn skill_block(&self, ep: &mut Episode<'a>, problem: &ProblemRecord) -> Result<String, EngineError> {
        let Some(sk) = self.skills else { return Ok(String::new()) };
        let sc = &self.cfg.skills;
        let (sample, candidates, context) = {
            let g = sk.graph.read().expect("skill graph lock");
            if g.s_nodes().is_empty() || g.q_nodes().is_empty() {
                return Ok(String::new());
            }
            let query = sk.embedder.embed(&problem.statement)?;
            let scores = g.skill_scores(&query, sc.top_k_q)?;
            let sample = sample_skills(&scores, sc.temperature, sc.sample_size, sc.pool_size, ep.seed ^ 3)?;
            let candidates: Vec<(String, String, String, String)> = sample
                .drawn
                .iter()
                .map(|&s| {
                    let n = &g.s_nodes()[s];
                    (n.id.clone(), n.title.clone(), n.description.clone(), n.template.clone())
                })
                .collect();
            let context: Vec<String> = sample
                .activations
                .iter()
                .map(|a| format!("- {} (similarity {:.2})", clip(&g.q_nodes()[a.q].statement, 160), a.similarity))
                .collect();
            (sample, candidates, context)
        };
        let drawn_empty = candidates.is_empty();
        ep.skill_sample = Some(sample);
        if drawn_empty {
            return Ok(String::new());
        }
        let cand_block: Vec<String> = candidates
            .iter()
            .map(|(id, title, desc, _)| format!("{id} | {title} | {}", clip(desc, 200)))
            .collect();
        let ids: Vec<String> = candidates.iter().map(|c| c.0.clone()).collect();
        let reply = ep.caller.call(
            "solver.skill_selection",
            &bindings([
                ("MIN_SELECT", "0".to_string()),
                ("MAX_SELECT", candidates.len().to_string()),
                ("PROBLEM_SUMMARY", clip(&problem.statement, 800)),
                ("ACTIVATED_GRAPH_CONTEXT", context.join("\n")),
                ("CANDIDATE_SKILLS_BLOCK", cand_block.join("\n")),
                ("VALID_SKILL_IDS_BLOCK", ids.join("\n")),
            ]),
        )?;
        // An unreadable reply keeps every drawn skill; an empty list keeps none.
        let chosen: Option<BTreeSet<String>> = extract_json(&reply)
            .ok()
            .map(|v| string_list(v.get("selected_skill_ids")).into_iter().collect());
        let picked: Vec<String> = candidates
            .iter()
            .filter(|c| chosen.as_ref().is_none_or(|set| set.contains(&c.0)))
            .map(|(_, title, desc, tpl)| format!("{title}: {desc}\n```cpp\n{}\n```", tpl.trim_end()))
            .collect();
        if picked.is_empty() {
            return Ok(String::new());
        }
        Ok(format!("Reusable skills:\n{}", picked.join("\n")))
    }

    fn steps_text(plan: &Plan) -> String {
        if plan.summary.steps.is_empty() {
            return "(none given)".into();
        }
        plan.summary
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. {s}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Draft, validate, repair and attack until the state machine finishes.
    pub(super) fn solve_loop(
        &self,
        ep: &mut Episode<'a>,
        problem: &ProblemRecord,
        setup: &SolveSetup<'_>,
    ) -> Result<Candidate, EngineError> {
        let plan = setup.plan;
        let limits = problem_limits(self.cfg.solve_limits, problem);
        let mut cases = self.suite(problem, setup.artifact);
        let judge = setup
            .artifact
            .map(|a| a.judge(limits))
            .unwrap_or(Judge {
                checker: None,
                reference: None,
                limits,
            });
        let algorithm = if plan.summary.algorithm.is_empty() {
            "(not given)".to_string()
        } else {
            plan.summary.algorithm.clone()
        };
        let steps = Self::steps_text(plan);
        let constraints_block = format!("Constraints:\n{}", constraints_text(&problem.constraints));
        let public_block = format!("Sample tests:\n{}", tests_block(&problem.public_tests));

        let ctx = feature_context(Phase::SolveDraft, None, &plan.tags);
        let advice = self.advice(ep, Namespace::Solve, &ctx, 4)?;
        ep.solve_advice = advice.iter().map(|a| a.id.clone()).collect();
        let memory = advice_text(&advice);
        let graph_block = if setup.use_skills {
            self.skill_block(ep, problem)?
        } else {
            String::new()
        };
        let tags2 = if plan.summary.tags_level2.is_empty() {
            String::new()
        } else {
            format!("Fine tags: {}", plan.summary.tags_level2.join(", "))
        };
        let reply = ep.caller.call(
            "solver.initial",
            &bindings([
                ("PROBLEM_DESC", problem.statement.clone()),
                ("ABSTRACT_TAGS_LEVEL2_BLOCK", tags2),
                ("ALGORITHM", algorithm.clone()),
                ("STEPS", steps.clone()),
                ("CONSTRAINTS_BLOCK", constraints_block.clone()),
                ("PUBLIC_BLOCK", public_block.clone()),
                ("SOLVER_GRAPH_BLOCK", graph_block),
                ("MEMORY_ADVICE", memory.clone()),
            ]),
        )?;
        self.signal(ep, Signal::Drafted)?;
        let mut cur = self.evaluate(ep, extract_code(&reply), &cases, &judge, &limits)?;

        let bus = EventBus::new();
        let mut report_requested = false;
        let mut tried: Vec<AttackRoute> = Vec::new();
        let mut hacked_source: Option<String> = None;
        let mut fixes = String::new();
        let hack_ctx = feature_context(Phase::HackRound, None, &plan.tags);

        loop {
            let fail_kind = cur.dominant_failure().map(|k| k.to_string());
            match ep.fsm.phase {
                Phase::SelfValidate => {
                    let s = if cur.all_pass() { Signal::AllPass } else { Signal::SomeFail };
                    self.signal(ep, s)?;
                }
                Phase::PatchDecision => {
                    let mut feedback = String::new();
                    fixes.clear();
                    if self.cfg.analyze_failure {
                        let passed = cur.results.values().filter(|&&b| b).count();
                        let reply = ep.caller.call(
                            "solver.analyze_failure",
                            &bindings([
                                ("PROBLEM_DESC", problem.statement.clone()),
                                ("ALGORITHM", algorithm.clone()),
                                ("STEPS_TEXT", steps.clone()),
                                ("ITERATION", ep.fsm.solver_iterations.to_string()),
                                ("PASS_RATE", format!("{passed}/{}", cur.results.len())),
                                ("FAILED_COUNT", cur.failures.len().to_string()),
                                ("ERROR_PATTERN", fail_kind.clone().unwrap_or_default()),
                                ("CODE", cur.source.clone()),
                                ("FAILURES_TEXT", Self::failures_block(&cur)),
                            ]),
                        )?;
                        if let Ok(v) = extract_json(&reply) {
                            let field = |k: &str| v.get(k).and_then(|x| x.as_str()).unwrap_or("").to_string();
                            feedback = format!("{}\nRoot cause: {}", field("analysis"), field("root_cause"));
                            fixes = string_list(v.get("suggested_fixes"))
                                .iter()
                                .map(|f| format!("- {f}"))
                                .collect::<Vec<_>>()
                                .join("\n");
                        }
                    }
                    let rctx = feature_context(Phase::PatchDecision, fail_kind.as_deref(), &plan.tags);
                    let advice = advice_text(&self.advice(ep, Namespace::Solve, &rctx, 5)?);
                    let reply = ep.caller.call(
                        "solver.patch_decision",
                        &bindings([
                            ("PROBLEM_DESC", problem.statement.clone()),
                            ("ALGORITHM", algorithm.clone()),
                            ("STEPS", steps.clone()),
                            ("PREV_CODE", cur.source.clone()),
                            ("FAILURES_BLOCK", Self::failures_block(&cur)),
                            ("AGGREGATE_FAILURES_BLOCK", Self::aggregate_block(&cur)),
                            ("FEEDBACK_TEXT", feedback),
                            ("MEMORY_ADVICE", advice),
                        ]),
                    )?;
                    let decision = extract_json(&reply).ok();
                    let mode = decision.as_ref().and_then(|v| v.get("mode")).and_then(|m| m.as_str());
                    if fixes.is_empty() {
                        if let Some(reason) = decision.as_ref().and_then(|v| v.get("reason")).and_then(|r| r.as_str()) {
                            fixes = format!("- {reason}");
                        }
                    }
                    // Anything but an explicit patch request means a rewrite.
                    let s = if mode == Some("patch") { Signal::ChosePatch } else { Signal::ChoseRegen };
                    self.signal(ep, s)?;
                }
                Phase::SolvePatch => {
                    let reply = ep.caller.call(
                        "solver.patch",
                        &bindings([
                            ("PROBLEM_DESC", problem.statement.clone()),
                            ("ALGORITHM", algorithm.clone()),
                            ("STEPS", steps.clone()),
                            ("PREV_CODE", cur.source.clone()),
                            ("FAILURES_BLOCK", Self::failures_block(&cur)),
                            ("AGGREGATE_FAILURES_BLOCK", Self::aggregate_block(&cur)),
                            ("FEEDBACK_TEXT", String::new()),
                            ("FIXES_BLOCK", if fixes.is_empty() { String::new() } else { format!("Fixes to apply:\n{fixes}") }),
                            ("MEMORY_ADVICE", memory.clone()),
                            ("PATCH_FORMAT", PATCH_FORMAT.to_string()),
                        ]),
                    )?;
                    self.signal(ep, Signal::Revised)?;
                    let patched = parse_patch(&reply).and_then(|b| apply_patch(&cur.source, &b));
                    match patched {
                        Ok((src, _)) => {
                            let next = self.evaluate(ep, src, &cases, &judge, &limits)?;
                            let gate = regression_gate(&cur.results, &next.results)?;
                            let accepted = gate.accepted;
                            ep.rec.gate_reports.push(gate);
                            if accepted {
                                cur = next;
                            } else {
                                log::info!("patch regressed tests; reverting");
                            }
                        }
                        Err(e) => log::info!("patch not applied: {e}"),
                    }
                }
                Phase::SolveRegen => {
                    let reply = ep.caller.call(
                        "solver.regenerate",
                        &bindings([
                            ("PROBLEM_DESC", problem.statement.clone()),
                            ("ALGORITHM", algorithm.clone()),
                            ("STEPS", steps.clone()),
                            ("CONSTRAINTS_BLOCK", constraints_block.clone()),
                            ("PUBLIC_BLOCK", public_block.clone()),
                            ("PREV_CODE", cur.source.clone()),
                            ("FAILURES_BLOCK", Self::failures_block(&cur)),
                            ("MEMORY_ADVICE", memory.clone()),
                        ]),
                    )?;
                    self.signal(ep, Signal::Revised)?;
                    cur = self.evaluate(ep, extract_code(&reply), &cases, &judge, &limits)?;
                }
                Phase::HackRound => {
                    let artifact = setup.artifact.expect("hacking requires an artifact");
                    let program = cur.program.clone().expect("a passing candidate compiled");
                    if hacked_source.as_deref() != Some(cur.source.as_str()) {
                        tried.clear();
                        hacked_source = Some(cur.source.clone());
                    }
                    let target = HackTarget {
                        problem,
                        source: &cur.source,
                        program: &program,
                    };
                    for r in AttackRoute::CASCADE {
                        let item = MemoryItem::new(route_item_id(r), Namespace::Hack, format!("attack via the {r} route"), self.clock.now());
                        self.ensure_item(ep, item)?;
                    }
                    let advice = advice_text(&self.advice(ep, Namespace::Hack, &hack_ctx, 6)?);
                    if !report_requested {
                        report_requested = true;
                        ep.rec.analyst_report = hacker::analyze(&mut ep.caller, self.sandbox, &target, &advice, &self.cfg.hack)?;
                    }
                    let suggested = ep.rec.analyst_report.as_ref().and_then(|r| r.suggested_route);
                    let route = match next_route(suggested, tried.len() + 1, &tried) {
                        RouteDecision::Attack(r) => r,
                        RouteDecision::Exhausted => {
                            self.signal(ep, Signal::Survived)?;
                            continue;
                        }
                    };
                    tried.push(route);
                    let round = hacker::run_round(
                        &mut ep.caller,
                        self.sandbox,
                        &target,
                        artifact,
                        ep.fsm.hack_rounds as usize,
                        route,
                        ep.rec.analyst_report.as_ref(),
                        &advice,
                        &self.cfg.hack,
                    )?;
                    self.reward_later(ep, Namespace::Hack, &route_item_id(route), round.reward, &hack_ctx, "hack_round");
                    let plan_ctx = feature_context(Phase::Plan, None, &BTreeSet::new());
                    let mut new_cases = Vec::new();
                    for b in round.breaks() {
                        let verdict = b.verdict.expect("breaks carry a verdict");
                        let ev = BreakEvent::new(
                            &problem.id,
                            route,
                            &b.input,
                            verdict,
                            b.secondary,
                            &cur.source,
                            &plan.summary.strategy_item,
                        )?;
                        bus.emit(ev, self.clock.now());
                        new_cases.push((b.input.clone(), verdict));
                    }
                    for d in bus.take_deliveries() {
                        self.deliver(ep, &d, &plan_ctx, &hack_ctx)?;
                    }
                    let any_valid = round.verdicts.valid().next().is_some();
                    ep.rec.hack_rounds.push(round);
                    if new_cases.is_empty() {
                        self.signal(ep, if any_valid { Signal::Survived } else { Signal::Unproductive })?;
                        continue;
                    }
                    for (input, kind) in new_cases {
                        let id = format!("break:{}", &hex::encode(Sha256::digest(input.as_bytes()))[..16]);
                        if cur.results.contains_key(&id) {
                            continue;
                        }
                        cur.results.insert(id.clone(), false);
                        cur.failures.push(FailureInfo {
                            test_id: id.clone(),
                            kind,
                            input: clip(&input, 400),
                            expected: None,
                            got: None,
                            note: format!("found by the {route} attack"),
                        });
                        cases.push(Case {
                            id,
                            input,
                            expected: None,
                        });
                    }
                    self.signal(ep, Signal::Break)?;
                }
                Phase::Finalize => break,
                p @ (Phase::Plan | Phase::OracleBuild | Phase::SolveDraft) => {
                    unreachable!("solve loop entered phase {p}")
                }
            }
        }
        Ok(cur)
    }

    fn deliver(
        &self,
        ep: &mut Episode<'_>,
        d: &Delivery,
        plan_ctx: &BanditContext,
        hack_ctx: &BanditContext,
    ) -> Result<(), EngineError> {
        match &d.effect {
            BusEffect::PlanPenalty { item_id, reward } => {
                self.reward_now(ep, Namespace::Plan, item_id, *reward, plan_ctx, "break")?;
            }
            BusEffect::SolveContrast {
                item,
                failing_source,
                input,
            } => {
                self.ensure_item(ep, item.clone())?;
                ep.rec.growth_requests.push(GrowthRequest {
                    failing_source: failing_source.clone(),
                    input: input.clone(),
                    fixed_source: None,
                });
            }
            BusEffect::TestHint { item } => {
                self.ensure_item(ep, item.clone())?;
            }
            BusEffect::HackCredit { item_id, .. } => {
                self.reward_now(ep, Namespace::Hack, item_id, match &d.effect {
                    BusEffect::HackCredit { reward, .. } => *reward,
                    _ => unreachable!(),
                }, hack_ctx, "break")?;
            }
        }
        ep.rec.break_deliveries.push(d.clone());
        Ok(())
    }

    /// Apply queued rewards, sweep the touched namespaces and fill in the
    /// outcome. `extra` rewards are applied after the queue.
    pub(super) fn finalize(
        &self,
        ep: &mut Episode<'_>,
        extra: Option<Vec<ExtraReward>>,
    ) -> Result<(), EngineError> {
        let mut touched = BTreeSet::new();
        for (op, entry) in std::mem::take(&mut ep.pending) {
            touched.insert(entry.namespace);
            match self.write(ep, op) {
                Ok(_) => ep.rec.rewards.push(entry),
                Err(EngineError::Bandit(e)) => log::warn!("reward for {} skipped: {e}", entry.item_id),
                Err(e) => return Err(e),
            }
        }
        for (ns, id, r, ctx, source) in extra.unwrap_or_default() {
            touched.insert(ns);
            self.reward_now(ep, ns, &id, r, &ctx, &source)?;
        }
        touched.extend(ep.rec.rewards.iter().map(|r| r.namespace));
        for ns in touched {
            self.write(ep, StoreOp::Sweep { namespace: ns })?;
        }
        let f = &ep.fsm;
        ep.rec.outcome.solver_iterations = f.solver_iterations;
        ep.rec.outcome.hack_rounds = f.hack_rounds;
        ep.rec.outcome.oracle_attempts = f.oracle_attempts;
        ep.rec.outcome.status = if f.aborted {
            EpisodeStatus::Aborted
        } else if f.passing {
            EpisodeStatus::Solved
        } else {
            EpisodeStatus::Failed
        };
        Ok(())
    }
}

impl Episode<'_> {
    pub(super) fn caller_transcript_into_record(&mut self) {
        self.rec.transcript.append(&mut self.caller.transcript);
    }
}
