//! Certified supervision: generator, validator, optional checker and an
//! independent solver, assembled per problem and gated on how many
//! generated inputs an independent judge confirms.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{constraints_text, tests_block, AgentError, Caller};
use crate::bandit::{BanditContext, FeatureKey, MemoryItem, Namespace, NamespaceStore, StoreOp, Timestamp};
use crate::llm::extract_json;
use crate::pipeline::ProblemRecord;
use crate::prompts::bindings;
use crate::sandbox::{
    tokens_equal, CompileOutcome, ExecutionLimits, ExitKind, Judge, JudgeSource, Program, Sandbox, SandboxError,
    VerdictKind,
};

pub const DEFAULT_TAU: f64 = 0.9;
pub const DEFAULT_N_TARGET: usize = 20;
pub const PARTIAL_CREDIT: f64 = 0.5;
pub const MAX_FAMILY_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OracleError {
    #[error("solver family catalog is empty")]
    EmptyCatalog,
    #[error("certification ratio {0} outside [0, 1]")]
    InvalidRatio(f64),
    #[error("full certification needs an external verdict to score")]
    MissingVerdict,
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverFamily {
    pub family_id: String,
    pub description: String,
    pub bias: f64,
    pub weights: BTreeMap<FeatureKey, f64>,
    /// `(avg_reward + 1) / 2` over the family's recorded uses, if any.
    pub success_rate: Option<f64>,
}

impl SolverFamily {
    pub fn from_item(item: &MemoryItem) -> Self {
        Self {
            family_id: item.id.clone(),
            description: item.summary.clone(),
            bias: item.bias,
            weights: item.weights.clone(),
            success_rate: (item.use_count > 0).then(|| (item.avg_reward + 1.0) / 2.0),
        }
    }

    /// `b_f + Σ_{k ∈ Φ(x)} W_{k,f}`.
    pub fn score(&self, ctx: &BanditContext) -> f64 {
        self.bias + ctx.active_keys().iter().filter_map(|k| self.weights.get(k)).sum::<f64>()
    }
}

/// Live families from the oracle store.
pub fn catalog(store: &NamespaceStore) -> Vec<SolverFamily> {
    store.items().filter(|i| !i.deprecated).map(SolverFamily::from_item).collect()
}

/// Score descending, then family id.
pub fn rank_families<'a>(ctx: &BanditContext, catalog: &'a [SolverFamily]) -> Vec<&'a SolverFamily> {
    let mut v: Vec<(f64, &SolverFamily)> = catalog.iter().map(|f| (f.score(ctx), f)).collect();
    v.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.family_id.cmp(&b.1.family_id)));
    v.into_iter().map(|p| p.1).collect()
}

pub fn select_family<'a>(ctx: &BanditContext, catalog: &'a [SolverFamily]) -> Result<&'a SolverFamily, OracleError> {
    rank_families(ctx, catalog).into_iter().next().ok_or(OracleError::EmptyCatalog)
}

/// Seed families for an empty oracle store.
pub fn default_catalog_ops(now: Timestamp) -> Vec<StoreOp> {
    [
        ("top_down_dp", "top-down dynamic programming with memoization over the natural state"),
        ("constructive_enumeration", "direct construction, enumerating candidate structures in order"),
        ("brute_force_verification", "exhaustive search over all candidates, checking each one"),
    ]
    .into_iter()
    .map(|(id, d)| StoreOp::Insert {
        item: MemoryItem::new(id, Namespace::Oracle, d, now),
    })
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerRoute {
    UniqueAnswer,
    MultiAnswer,
}

impl AnswerRoute {
    pub fn for_problem(p: &ProblemRecord) -> Self {
        if p.flags.special_judge {
            AnswerRoute::MultiAnswer
        } else {
            AnswerRoute::UniqueAnswer
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    None,
    Unready,
    SelfCheckFailed,
    Crash,
}

/// How an external judge rates a fully certified artifact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgeVerdict {
    Agree,
    Partial,
    Contradict,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisionArtifact {
    pub family_id: Option<String>,
    pub generator_src: Option<String>,
    pub validator_src: Option<String>,
    pub checker_src: Option<String>,
    pub solver_src: Option<String>,
    pub inputs: Vec<String>,
    pub expected_outputs: Vec<String>,
    pub route: AnswerRoute,
    pub checker_evidence: Vec<String>,
    pub cert_ratio: f64,
    pub n_target: usize,
    pub accepted: bool,
    pub failure_mode: FailureMode,
}

impl SupervisionArtifact {
    fn empty(route: AnswerRoute, n_target: usize) -> Self {
        Self {
            family_id: None,
            generator_src: None,
            validator_src: None,
            checker_src: None,
            solver_src: None,
            inputs: Vec::new(),
            expected_outputs: Vec::new(),
            route,
            checker_evidence: Vec::new(),
            cert_ratio: 0.0,
            n_target,
            accepted: false,
            failure_mode: FailureMode::None,
        }
    }
}

/// `|I| > 0 ∧ |O| > 0 ∧ ρ ≥ τ ∧ (unique ∨ C_ma ≠ ∅)`.
pub fn accept_gate(a: &SupervisionArtifact, tau: f64) -> bool {
    !a.inputs.is_empty()
        && !a.expected_outputs.is_empty()
        && a.cert_ratio >= tau
        && (a.route != AnswerRoute::MultiAnswer || !a.checker_evidence.is_empty())
}

pub fn oracle_reward(rho: f64, verdict: JudgeVerdict, mode: FailureMode) -> Result<f64, OracleError> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(OracleError::InvalidRatio(rho));
    }
    let r = match mode {
        FailureMode::Crash => -1.0,
        FailureMode::SelfCheckFailed if rho == 0.0 => -0.7,
        FailureMode::Unready => -0.6,
        _ if rho == 1.0 => match verdict {
            JudgeVerdict::Agree => 1.0,
            JudgeVerdict::Partial => -0.2,
            JudgeVerdict::Contradict => -0.5,
            JudgeVerdict::None => return Err(OracleError::MissingVerdict),
        },
        _ if rho > 0.0 => PARTIAL_CREDIT * rho,
        _ => -0.6,
    };
    Ok(r.clamp(-1.0, 1.0))
}

/// Outcome of running the artifact solver on the problem's hidden tests:
/// all pass agrees, none pass contradicts, anything between is partial.
pub fn external_verdict(solver: &Program, problem: &ProblemRecord, limits: &ExecutionLimits) -> JudgeVerdict {
    if problem.hidden_tests.is_empty() {
        return JudgeVerdict::None;
    }
    let passed = problem
        .hidden_tests
        .iter()
        .filter(|t| {
            matches!(solver.run_classified(&[], t.input.as_bytes(), limits),
                Ok(Ok(raw)) if tokens_equal(&raw.stdout, t.output.as_bytes()))
        })
        .count();
    match passed {
        0 => JudgeVerdict::Contradict,
        n if n == problem.hidden_tests.len() => JudgeVerdict::Agree,
        _ => JudgeVerdict::Partial,
    }
}

/// Per-seed certification result.
#[derive(Debug, Clone, PartialEq)]
enum SeedResult {
    Crash(String),
    Invalid,
    Uncertified(String),
    Certified { input: String, output: String, by: JudgeSource },
}

pub struct CertPrograms<'a> {
    pub generator: &'a Program,
    pub validator: &'a Program,
    pub solver: &'a Program,
    /// Checker plus the problem's known-correct solution, if any.
    pub judge: &'a Judge,
}

fn certify_seed(p: &CertPrograms<'_>, seed: usize, limits: &ExecutionLimits) -> SeedResult {
    let input = match p.generator.run_classified(&[seed.to_string()], b"", limits) {
        Err(e) => return SeedResult::Crash(format!("generator: {e}")),
        Ok(Err(v)) => return SeedResult::Crash(format!("generator seed {seed}: {} {}", v.kind, v.diagnostic)),
        Ok(Ok(raw)) => raw.stdout,
    };
    if input.iter().all(u8::is_ascii_whitespace) {
        return SeedResult::Invalid;
    }
    match p.validator.run(&[], &input, limits) {
        Err(e) => return SeedResult::Crash(format!("validator: {e}")),
        Ok(raw) if raw.limit_hit.is_some() || matches!(raw.status, ExitKind::Signaled(_)) => {
            return SeedResult::Crash(format!("validator seed {seed}: {:?} {:?}", raw.status, raw.limit_hit))
        }
        Ok(raw) if !raw.status.success() => return SeedResult::Invalid,
        Ok(_) => {}
    }
    let out = match p.solver.run_classified(&[], &input, limits) {
        Ok(Ok(raw)) => raw.stdout,
        Ok(Err(v)) => return SeedResult::Uncertified(format!("solver {}", v.kind)),
        Err(e) => return SeedResult::Uncertified(e.to_string()),
    };
    match p.judge.resolve(&input, &out, None) {
        Ok((VerdictKind::Accepted, by, _)) => SeedResult::Certified {
            input: String::from_utf8_lossy(&input).into_owned(),
            output: String::from_utf8_lossy(&out).into_owned(),
            by,
        },
        Ok((_, by, msg)) => SeedResult::Uncertified(format!("{by:?} rejected: {msg}")),
        Err(e) => SeedResult::Uncertified(e.to_string()),
    }
}

/// Run seeds `1..=n_target` and fill inputs, outputs, evidence, ρ and the
/// failure mode of `a`. Seeds run in parallel; results are folded in seed
/// order so the artifact is reproducible.
pub fn certify(a: &mut SupervisionArtifact, p: &CertPrograms<'_>, limits: &ExecutionLimits) -> f64 {
    let n = a.n_target.max(1);
    let results: Vec<SeedResult> = (1..=n).into_par_iter().map(|s| certify_seed(p, s, limits)).collect();
    a.inputs.clear();
    a.expected_outputs.clear();
    a.checker_evidence.clear();
    let mut valid = 0;
    let mut crashed = false;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            SeedResult::Crash(msg) => {
                log::warn!("certification crash: {msg}");
                crashed = true;
            }
            SeedResult::Invalid => {}
            SeedResult::Uncertified(why) => {
                valid += 1;
                log::debug!("seed {} uncertified: {why}", i + 1);
            }
            SeedResult::Certified { input, output, by } => {
                valid += 1;
                if by == JudgeSource::Checker {
                    a.checker_evidence.push(format!("seed {}: checker accepted", i + 1));
                }
                a.inputs.push(input);
                a.expected_outputs.push(output);
            }
        }
    }
    a.cert_ratio = a.inputs.len() as f64 / n as f64;
    a.failure_mode = if crashed {
        FailureMode::Crash
    } else if valid == 0 {
        FailureMode::SelfCheckFailed
    } else {
        FailureMode::None
    };
    a.cert_ratio
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub n_target: usize,
    pub tau: f64,
    pub max_family_attempts: usize,
    /// Extra prompts allowed per tool after a compile failure.
    pub artifact_repairs: usize,
    pub limits: ExecutionLimits,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_target: DEFAULT_N_TARGET,
            tau: DEFAULT_TAU,
            max_family_attempts: MAX_FAMILY_ATTEMPTS,
            artifact_repairs: 1,
            limits: ExecutionLimits::default(),
        }
    }
}

/// Accepted artifact with its ready programs.
#[derive(Debug, Clone)]
pub struct BuiltArtifact {
    pub artifact: SupervisionArtifact,
    pub generator: Program,
    pub validator: Program,
    pub checker: Option<Program>,
    pub solver: Program,
}

impl BuiltArtifact {
    /// Checker first, then the artifact solver as reference.
    pub fn judge(&self, limits: ExecutionLimits) -> Judge {
        Judge {
            checker: self.checker.clone(),
            reference: Some(self.solver.clone()),
            limits,
        }
    }
}

/// One family attempt and the reward it earned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleAttempt {
    pub artifact: SupervisionArtifact,
    pub external: JudgeVerdict,
    /// `None` when full certification lacked an external verdict.
    pub reward: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct OracleOutcome {
    pub attempts: Vec<OracleAttempt>,
    pub built: Option<BuiltArtifact>,
}

const STAGE_GUIDANCE: [&str; 3] = [
    "Follow the suggested family directly and keep the code short.",
    "The previous reference was rejected. Prefer the plainest correct method, even if slow.",
    "Earlier references were rejected twice. Enumerate every candidate answer and verify each one.",
];

fn json_field(reply: &str, key: &str) -> Option<String> {
    extract_json(reply).ok()?.get(key)?.as_str().map(str::to_string)
}

/// Prompt for one tool, compile it, and re-prompt with the diagnostic on
/// failure. Returns the last source and the program if one compiled.
fn build_tool(
    caller: &mut Caller<'_>,
    sandbox: &Sandbox,
    prompt: &str,
    key: &str,
    base: &crate::prompts::Bindings,
    repairs: usize,
) -> Result<(Option<String>, Option<Program>), OracleError> {
    let mut feedback = String::new();
    let mut last_src = None;
    for _ in 0..=repairs {
        let mut b = base.clone();
        b.insert("FEEDBACK_BLOCK".into(), feedback.clone());
        let reply = caller.call(prompt, &b)?;
        let Some(src) = json_field(&reply, key) else {
            feedback = format!("Previous reply had no usable \"{key}\" field. Reply with the JSON object only.\n");
            continue;
        };
        if src.trim().is_empty() {
            return Ok((None, None));
        }
        last_src = Some(src.clone());
        match sandbox.compile_cpp(&src)? {
            CompileOutcome::Ready(p) => return Ok((last_src, Some(p))),
            CompileOutcome::Failed(v) => {
                feedback = format!("Previous code failed to compile:\n{}\n", v.diagnostic);
            }
        }
    }
    Ok((last_src, None))
}

/// Build the supervision artifact, trying families in ranked order until
/// one passes the gate or the attempt budget runs out.
#[allow(clippy::too_many_arguments)]
pub fn build_artifact(
    caller: &mut Caller<'_>,
    sandbox: &Sandbox,
    problem: &ProblemRecord,
    ctx: &BanditContext,
    families: &[SolverFamily],
    generator_hints: &[String],
    cfg: &OracleConfig,
) -> Result<OracleOutcome, OracleError> {
    let ranked = rank_families(ctx, families);
    if ranked.is_empty() {
        return Err(OracleError::EmptyCatalog);
    }
    let route = AnswerRoute::for_problem(problem);
    let constraints = constraints_text(&problem.constraints);
    let public = tests_block(&problem.public_tests);
    let hints = if generator_hints.is_empty() {
        String::new()
    } else {
        format!("Inputs that exposed bugs before:\n- {}\n", generator_hints.join("\n- "))
    };
    let base = bindings([
        ("PROBLEM_DESC", problem.statement.as_str()),
        ("CONSTRAINTS", constraints.as_str()),
        ("PUBLIC_TESTS", public.as_str()),
    ]);

    let mut gen_b = base.clone();
    gen_b.insert("ADVICE_BLOCK".into(), hints);
    let (gen_src, generator) = build_tool(caller, sandbox, "oracle.generator", "generator_cpp", &gen_b, cfg.artifact_repairs)?;
    let (val_src, validator) = build_tool(caller, sandbox, "oracle.validator", "validator_cpp", &base, cfg.artifact_repairs)?;
    let mut chk_b = base.clone();
    chk_b.insert(
        "CHECKER_ADVICE_BLOCK".into(),
        match route {
            AnswerRoute::MultiAnswer => "Several outputs can be correct; verify properties, not equality.".into(),
            AnswerRoute::UniqueAnswer => "The answer is unique.".into(),
        },
    );
    let (chk_src, checker) = build_tool(caller, sandbox, "oracle.checker", "checker_cpp", &chk_b, cfg.artifact_repairs)?;

    let mut template = SupervisionArtifact::empty(route, cfg.n_target);
    template.generator_src = gen_src;
    template.validator_src = val_src;
    template.checker_src = chk_src;

    let (Some(generator), Some(validator)) = (generator, validator) else {
        template.failure_mode = FailureMode::Unready;
        template.family_id = Some(ranked[0].family_id.clone());
        let reward = oracle_reward(0.0, JudgeVerdict::None, FailureMode::Unready).ok();
        return Ok(OracleOutcome {
            attempts: vec![OracleAttempt {
                artifact: template,
                external: JudgeVerdict::None,
                reward,
            }],
            built: None,
        });
    };
    let reference = match &problem.reference_solution {
        Some(src) => sandbox.compile_cpp(src)?.program().cloned(),
        None => None,
    };
    let judge = Judge {
        checker: checker.clone(),
        reference,
        limits: cfg.limits,
    };

    let mut attempts = Vec::new();
    let mut feedback = String::new();
    for (i, family) in ranked.iter().take(cfg.max_family_attempts).enumerate() {
        let mut a = template.clone();
        a.family_id = Some(family.family_id.clone());
        let mut b = base.clone();
        b.insert("STAGE_GUIDANCE".into(), STAGE_GUIDANCE[i.min(2)].into());
        b.insert(
            "SOLVER_ADVICE_BLOCK".into(),
            family
                .success_rate
                .map(|s| format!("This family has succeeded {:.0}% of the time.", 100.0 * s))
                .unwrap_or_default(),
        );
        b.insert("PUBLIC_TESTS_BLOCK".into(), public.clone());
        b.insert(
            "TEMPLATES_JSON".into(),
            serde_json::json!([{ "family_id": family.family_id, "description": family.description }]).to_string(),
        );
        b.insert("FEEDBACK_BLOCK".into(), feedback.clone());
        let reply = caller.call("oracle.solver", &b)?;
        let solver = match json_field(&reply, "solver_cpp") {
            Some(src) if !src.trim().is_empty() => {
                a.solver_src = Some(src.clone());
                sandbox.compile_cpp(&src)?
            }
            _ => CompileOutcome::Failed(crate::sandbox::Verdict::compile_fail("no solver_cpp in reply")),
        };
        let solver = match solver {
            CompileOutcome::Ready(p) => p,
            CompileOutcome::Failed(v) => {
                a.failure_mode = FailureMode::Unready;
                feedback = format!("The previous reference did not compile:\n{}\n", v.diagnostic);
                attempts.push(scored(a, JudgeVerdict::None));
                continue;
            }
        };
        let samples_ok = problem.public_tests.iter().all(|t| {
            matches!(solver.run_classified(&[], t.input.as_bytes(), &cfg.limits),
                Ok(Ok(raw)) if tokens_equal(&raw.stdout, t.output.as_bytes()))
        });
        if !samples_ok {
            a.failure_mode = FailureMode::SelfCheckFailed;
            feedback = "The previous reference got a sample test wrong.\n".into();
            attempts.push(scored(a, JudgeVerdict::None));
            continue;
        }
        let progs = CertPrograms {
            generator: &generator,
            validator: &validator,
            solver: &solver,
            judge: &judge,
        };
        certify(&mut a, &progs, &cfg.limits);
        a.accepted = a.failure_mode == FailureMode::None && accept_gate(&a, cfg.tau);
        let external = if a.cert_ratio == 1.0 {
            external_verdict(&solver, problem, &cfg.limits)
        } else {
            JudgeVerdict::None
        };
        let crashed = a.failure_mode == FailureMode::Crash;
        if a.accepted {
            let artifact = a.clone();
            attempts.push(scored(a, external));
            return Ok(OracleOutcome {
                attempts,
                built: Some(BuiltArtifact {
                    artifact,
                    generator,
                    validator,
                    checker,
                    solver,
                }),
            });
        }
        feedback = format!(
            "The previous reference was rejected: {} of {} generated inputs certified.\n",
            a.inputs.len(),
            a.n_target
        );
        attempts.push(scored(a, external));
        // A crashing generator or validator fails every family alike.
        if crashed {
            break;
        }
    }
    Ok(OracleOutcome { attempts, built: None })
}

fn scored(artifact: SupervisionArtifact, external: JudgeVerdict) -> OracleAttempt {
    let reward = match oracle_reward(artifact.cert_ratio, external, artifact.failure_mode) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("oracle reward skipped: {e}");
            None
        }
    };
    OracleAttempt {
        artifact,
        external,
        reward,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctx(keys: &[&str]) -> BanditContext {
        BanditContext::new(keys.iter().map(|k| k.parse().unwrap()), Vec::new()).unwrap()
    }

    fn family(id: &str, bias: f64, w: &[(&str, f64)]) -> SolverFamily {
        SolverFamily {
            family_id: id.into(),
            description: String::new(),
            bias,
            weights: w.iter().map(|(k, v)| (k.parse().unwrap(), *v)).collect(),
            success_rate: None,
        }
    }

    fn artifact(n_in: usize, rho: f64, route: AnswerRoute, evidence: bool) -> SupervisionArtifact {
        let mut a = SupervisionArtifact::empty(route, 20);
        a.inputs = vec!["1".into(); n_in];
        a.expected_outputs = vec!["1".into(); n_in];
        a.cert_ratio = rho;
        if evidence {
            a.checker_evidence.push("ok".into());
        }
        a
    }

    #[test]
    fn family_selection() {
        let cat = vec![family("f1", 0.2, &[]), family("f2", 0.0, &[("TAG:dp", 0.5)])];
        assert_eq!(select_family(&ctx(&["TAG:dp"]), &cat).unwrap().family_id, "f2");
        let tie = vec![family("b", 0.1, &[]), family("a", 0.1, &[])];
        assert_eq!(select_family(&ctx(&["TAG:dp"]), &tie).unwrap().family_id, "a");
        assert_eq!(select_family(&ctx(&["TAG:dp"]), &[]), Err(OracleError::EmptyCatalog));
    }

    #[test]
    fn gate_conjuncts() {
        assert!(!accept_gate(&artifact(0, 1.0, AnswerRoute::UniqueAnswer, false), 0.9));
        assert!(accept_gate(&artifact(19, 0.95, AnswerRoute::UniqueAnswer, false), 0.9));
        assert!(!accept_gate(&artifact(20, 1.0, AnswerRoute::MultiAnswer, false), 0.9));
        assert!(accept_gate(&artifact(20, 1.0, AnswerRoute::MultiAnswer, true), 0.9));
        assert!(!accept_gate(&artifact(17, 0.85, AnswerRoute::UniqueAnswer, false), 0.9));
    }

    #[test]
    fn reward_cases() {
        let r = |rho, v, m| oracle_reward(rho, v, m).unwrap();
        assert_eq!(r(0.3, JudgeVerdict::None, FailureMode::Crash), -1.0);
        assert_eq!(r(0.0, JudgeVerdict::None, FailureMode::SelfCheckFailed), -0.7);
        assert_eq!(r(0.0, JudgeVerdict::None, FailureMode::Unready), -0.6);
        assert_eq!(r(0.0, JudgeVerdict::None, FailureMode::None), -0.6);
        assert_eq!(r(1.0, JudgeVerdict::Agree, FailureMode::None), 1.0);
        assert_eq!(r(1.0, JudgeVerdict::Partial, FailureMode::None), -0.2);
        assert_eq!(r(1.0, JudgeVerdict::Contradict, FailureMode::None), -0.5);
        assert!((r(0.8, JudgeVerdict::None, FailureMode::None) - 0.4).abs() < 1e-12);
        assert_eq!(
            oracle_reward(1.0, JudgeVerdict::None, FailureMode::None),
            Err(OracleError::MissingVerdict)
        );
        assert!(oracle_reward(1.5, JudgeVerdict::Agree, FailureMode::None).is_err());
    }

    #[test]
    fn default_catalog_is_three_families() {
        let mut bank = crate::bandit::MemoryBank::default();
        for op in default_catalog_ops(0) {
            bank.apply(&op).unwrap();
        }
        let cat = catalog(bank.store(Namespace::Oracle));
        assert_eq!(cat.len(), 3);
        assert_eq!(select_family(&ctx(&["FSM:ORACLE_BUILD"]), &cat).unwrap().family_id, "brute_force_verification");
    }

    proptest! {
        #[test]
        fn gate_monotone_in_rho(a in 0.0f64..=1.0, b in 0.0f64..=1.0, tau in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            if accept_gate(&artifact(5, lo, AnswerRoute::UniqueAnswer, false), tau) {
                prop_assert!(accept_gate(&artifact(5, hi, AnswerRoute::UniqueAnswer, false), tau));
            }
        }

        #[test]
        fn partial_credit_monotone(a in 0.0001f64..0.9999, b in 0.0001f64..0.9999) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let r = |x| oracle_reward(x, JudgeVerdict::None, FailureMode::None).unwrap();
            prop_assert!(r(lo) <= r(hi));
            prop_assert!(r(hi) < 1.0);
        }
    }
}
