//! Adversarial testing of a candidate that already passes its suite:
//! analyst report, route cascade, attack generators and round rewards.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize};

use crate::agent::{constraints_json, constraints_text, AgentError, Caller};
use crate::llm::{extract_code, extract_json};
use crate::oracle::BuiltArtifact;
use crate::patch::{apply_patch, parse_patch, PATCH_FORMAT};
use crate::pipeline::ProblemRecord;
use crate::prompts::{bindings, Bindings};
use crate::sandbox::{CompileOutcome, ExecutionLimits, ExitKind, Program, Sandbox, SandboxError, VerdictKind};

pub const MAX_HACK_ROUNDS: usize = 3;
pub const MAX_TOOL_ROUNDS: usize = 4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HackError {
    #[error("verdict {0} is not a break")]
    NotABreak(VerdictKind),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackRoute {
    Semantic,
    Stress,
    #[serde(alias = "antihash")]
    AntiHash,
}

impl AttackRoute {
    pub const CASCADE: [AttackRoute; 3] = [AttackRoute::Semantic, AttackRoute::Stress, AttackRoute::AntiHash];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackRoute::Semantic => "semantic",
            AttackRoute::Stress => "stress",
            AttackRoute::AntiHash => "anti_hash",
        }
    }

    fn parse_loose(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "semantic" => Some(AttackRoute::Semantic),
            "stress" => Some(AttackRoute::Stress),
            "anti_hash" | "antihash" => Some(AttackRoute::AntiHash),
            _ => None,
        }
    }
}

impl fmt::Display for AttackRoute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Weight of a break verdict.
pub fn severity(kind: VerdictKind) -> Result<f64, HackError> {
    Ok(match kind {
        VerdictKind::WrongAnswer => 0.50,
        VerdictKind::TimeLimit => 0.65,
        VerdictKind::MemoryLimit => 0.75,
        VerdictKind::RuntimeError => 0.85,
        VerdictKind::Crash => 1.00,
        other => return Err(HackError::NotABreak(other)),
    })
}

/// A verdict carrying two failures (e.g. TLE with RE) scores the larger.
pub fn break_severity(primary: VerdictKind, secondary: Option<VerdictKind>) -> Result<f64, HackError> {
    let p = severity(primary)?;
    Ok(secondary.and_then(|s| severity(s).ok()).map_or(p, |s| p.max(s)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HackInput {
    pub input: String,
    pub valid: bool,
    /// Candidate verdict, present once a valid input was judged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerdictKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary: Option<VerdictKind>,
}

impl HackInput {
    pub fn is_break(&self) -> bool {
        self.valid && matches!(self.verdict, Some(k) if k != VerdictKind::Accepted)
    }
}

/// Everything one round produced. Breaks are valid inputs with a non-AC
/// verdict, so breaks ⊆ valid ⊆ all by construction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundVerdicts {
    pub inputs: Vec<HackInput>,
    pub compile_failures: u32,
    /// No valid input, and the generator never produced output cleanly.
    pub generation_failed: bool,
}

impl RoundVerdicts {
    pub fn valid(&self) -> impl Iterator<Item = &HackInput> {
        self.inputs.iter().filter(|i| i.valid)
    }

    pub fn breaks(&self) -> impl Iterator<Item = &HackInput> {
        self.inputs.iter().filter(|i| i.is_break())
    }
}

pub const W_VALID: f64 = 0.20;
pub const W_BREAK: f64 = 0.55;
pub const W_SEV: f64 = 0.25;
pub const COMPILE_PENALTY: f64 = 0.1;
pub const COMPILE_PENALTY_CAP: f64 = 0.3;
pub const DEGENERATE_BASE: f64 = -0.6;

fn compile_penalty(c: u32) -> f64 {
    COMPILE_PENALTY_CAP.min(COMPILE_PENALTY * c as f64)
}

/// Round reward from its counts: `all` inputs, `valid` of them, and the
/// severity of each break.
pub fn hack_reward_parts(all: usize, valid: usize, severities: &[f64], c: u32) -> f64 {
    let g_valid = if all == 0 { 0.0 } else { valid as f64 / all as f64 };
    let g_break = severities.len() as f64 / valid.max(1) as f64;
    let g_sev = if severities.is_empty() {
        0.0
    } else {
        severities.iter().sum::<f64>() / severities.len() as f64
    };
    (W_VALID * g_valid + W_BREAK * g_break + W_SEV * g_sev - compile_penalty(c)).clamp(-1.0, 1.0)
}

pub fn degenerate_reward(c: u32) -> f64 {
    DEGENERATE_BASE - compile_penalty(c)
}

pub fn hack_reward(r: &RoundVerdicts) -> f64 {
    let valid = r.valid().count();
    if valid == 0 && r.generation_failed {
        return degenerate_reward(r.compile_failures);
    }
    let sev: Vec<f64> = r
        .breaks()
        .filter_map(|b| break_severity(b.verdict?, b.secondary).ok())
        .collect();
    hack_reward_parts(r.inputs.len(), valid, &sev, r.compile_failures)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteDecision {
    Attack(AttackRoute),
    Exhausted,
}

/// Round `round` (1-based) given the routes already tried on this
/// candidate. Round 1 honours the analyst's suggestion.
pub fn next_route(suggested: Option<AttackRoute>, round: usize, tried: &[AttackRoute]) -> RouteDecision {
    if round == 0 || round > MAX_HACK_ROUNDS {
        return RouteDecision::Exhausted;
    }
    if round == 1 {
        if let Some(r) = suggested.filter(|r| !tried.contains(r)) {
            return RouteDecision::Attack(r);
        }
    }
    AttackRoute::CASCADE
        .into_iter()
        .find(|r| !tried.contains(r))
        .map_or(RouteDecision::Exhausted, RouteDecision::Attack)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BugClass {
    Overflow,
    HashCollision,
    IndexOob,
    Tle,
    LogicBranch,
    #[serde(other)]
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    High,
    Medium,
    #[serde(other)]
    Low,
}

fn lenient_route<'de, D: Deserializer<'de>>(d: D) -> Result<Option<AttackRoute>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    Ok(s.as_deref().and_then(AttackRoute::parse_loose))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnReport {
    pub bug_class: BugClass,
    pub confidence: Confidence,
    #[serde(default)]
    pub evidence: Vec<String>,
    #[serde(default, deserialize_with = "lenient_route")]
    pub suggested_route: Option<AttackRoute>,
    #[serde(default)]
    pub input_hypothesis: Vec<String>,
}

impl VulnReport {
    pub fn is_weak(&self) -> bool {
        self.confidence == Confidence::Low && self.evidence.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AnalystReply {
    RunPython(String),
    RunCpp(String),
    Report(VulnReport),
}

pub fn parse_analyst_reply(text: &str) -> Option<AnalystReply> {
    let v = extract_json(text).ok()?;
    if let Some(tool) = v.get("tool").and_then(|t| t.as_str()) {
        let params = v.get("parameters")?;
        return match tool {
            "run_python" => Some(AnalystReply::RunPython(params.get("script_code")?.as_str()?.to_string())),
            "run_cpp" => Some(AnalystReply::RunCpp(params.get("cpp_code")?.as_str()?.to_string())),
            _ => None,
        };
    }
    serde_json::from_value(v).ok().map(AnalystReply::Report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HackConfig {
    pub inputs_per_round: usize,
    /// Checklist-and-patch repairs per round after a failed generator.
    pub generator_repairs: usize,
    pub max_tool_rounds: usize,
    pub limits: ExecutionLimits,
}

impl Default for HackConfig {
    fn default() -> Self {
        Self {
            inputs_per_round: 1,
            generator_repairs: 1,
            max_tool_rounds: MAX_TOOL_ROUNDS,
            limits: ExecutionLimits::default(),
        }
    }
}

/// The candidate under attack.
pub struct HackTarget<'a> {
    pub problem: &'a ProblemRecord,
    pub source: &'a str,
    pub program: &'a Program,
}

fn clip(s: &str, n: usize) -> String {
    if s.len() <= n {
        return s.to_string();
    }
    let mut end = n;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}...[truncated]", &s[..end])
}

fn run_tool(sandbox: &Sandbox, code: &str, toolchain: &str, limits: &ExecutionLimits) -> String {
    let prog = match sandbox.compile(code, toolchain) {
        Ok(CompileOutcome::Ready(p)) => p,
        Ok(CompileOutcome::Failed(v)) => return format!("compile error:\n{}", clip(&v.diagnostic, 1500)),
        Err(e) => return format!("tool error: {e}"),
    };
    match prog.run(&[], b"", limits) {
        Ok(raw) => format!(
            "status: {:?}{}\nstdout:\n{}\nstderr:\n{}",
            raw.status,
            raw.limit_hit.map(|l| format!(" ({l:?} limit)")).unwrap_or_default(),
            clip(&String::from_utf8_lossy(&raw.stdout), 2000),
            clip(&String::from_utf8_lossy(&raw.stderr), 500)
        ),
        Err(e) => format!("tool error: {e}"),
    }
}

/// Analyst loop: tool calls run in the sandbox and feed back as history,
/// one JSON repair is allowed, and a weak report forces one more probe.
/// `None` means no usable report; the cascade then starts at semantic.
pub fn analyze(
    caller: &mut Caller<'_>,
    sandbox: &Sandbox,
    target: &HackTarget<'_>,
    advice: &str,
    cfg: &HackConfig,
) -> Result<Option<VulnReport>, HackError> {
    let cj = constraints_json(&target.problem.constraints);
    let base = bindings([
        ("PROBLEM_DESC", target.problem.statement.as_str()),
        ("CONSTRAINTS_JSON", cj.as_str()),
        ("TARGET_CODE", target.source),
        ("ADVICE_SECTION", advice),
    ]);
    let mut history = Vec::<String>::new();
    let mut tool_rounds = 0;
    let mut repaired = false;
    let mut forced = false;
    let history_text = |h: &[String]| if h.is_empty() { "(none)".to_string() } else { h.join("\n\n") };
    let mut reply = {
        let mut b = base.clone();
        b.insert("HISTORY_TEXT".into(), history_text(&history));
        caller.call("hack.analyst", &b)?
    };
    loop {
        let parsed = match parse_analyst_reply(&reply) {
            Some(p) => p,
            None if !repaired => {
                repaired = true;
                let mut b = base.clone();
                b.insert("PREVIOUS_RESPONSE".into(), reply.clone());
                reply = caller.call("hack.analyst_json_repair", &b)?;
                continue;
            }
            None => return Ok(None),
        };
        let (code, toolchain) = match parsed {
            AnalystReply::Report(r) if r.is_weak() && !forced && tool_rounds < cfg.max_tool_rounds => {
                forced = true;
                let mut b = base.clone();
                b.insert("WEAK_REPORT_JSON".into(), serde_json::to_string(&r).expect("report serializes"));
                b.insert("HISTORY_TEXT".into(), history_text(&history));
                reply = caller.call("hack.analyst_force_tool", &b)?;
                continue;
            }
            AnalystReply::Report(r) => return Ok(Some(r)),
            AnalystReply::RunPython(c) => (c, "python3"),
            AnalystReply::RunCpp(c) => (c, "cpp"),
        };
        if tool_rounds >= cfg.max_tool_rounds {
            log::info!("analyst kept calling tools past the limit");
            return Ok(None);
        }
        tool_rounds += 1;
        let out = run_tool(sandbox, &code, toolchain, &cfg.limits);
        history.push(format!("[{toolchain} #{tool_rounds}]\n{}\n-> {out}", clip(&code, 1500)));
        let mut b = base.clone();
        b.insert("HISTORY_TEXT".into(), history_text(&history));
        reply = caller.call("hack.analyst", &b)?;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HackRound {
    pub round: usize,
    pub route: AttackRoute,
    pub generator_src: Option<String>,
    pub verdicts: RoundVerdicts,
    pub reward: f64,
}

impl HackRound {
    pub fn breaks(&self) -> impl Iterator<Item = &HackInput> {
        self.verdicts.breaks()
    }
}

enum GenRun {
    Compiled(Vec<(String, bool)>, Vec<String>),
    CompileFailed(String),
}

fn run_generator(
    sandbox: &Sandbox,
    src: &str,
    validator: &Program,
    cfg: &HackConfig,
) -> Result<(GenRun, bool), HackError> {
    let prog = match sandbox.compile_cpp(src)? {
        CompileOutcome::Ready(p) => p,
        CompileOutcome::Failed(v) => return Ok((GenRun::CompileFailed(v.diagnostic), false)),
    };
    let mut produced = Vec::new();
    let mut issues = Vec::new();
    let mut ran_clean = false;
    for seed in 1..=cfg.inputs_per_round.max(1) {
        match prog.run_classified(&[seed.to_string()], b"", &cfg.limits)? {
            Err(v) => issues.push(format!("generator run {seed}: {} {}", v.kind, v.diagnostic)),
            Ok(raw) if raw.stdout.iter().all(u8::is_ascii_whitespace) => {
                issues.push(format!("generator run {seed}: empty output"))
            }
            Ok(raw) => {
                ran_clean = true;
                let input = String::from_utf8_lossy(&raw.stdout).into_owned();
                let check = validator.run(&[], input.as_bytes(), &cfg.limits)?;
                let ok = check.status == ExitKind::Exited(0) && check.limit_hit.is_none();
                if !ok {
                    let why = String::from_utf8_lossy(&check.stderr).trim().to_string();
                    issues.push(format!("validator rejected input {seed}: {}", clip(&why, 300)));
                }
                produced.push((input, ok));
            }
        }
    }
    Ok((GenRun::Compiled(produced, issues), ran_clean))
}

/// One attack round on `route`: write a generator, repair it if needed,
/// validate its inputs and judge the candidate on the valid ones.
#[allow(clippy::too_many_arguments)]
pub fn run_round(
    caller: &mut Caller<'_>,
    sandbox: &Sandbox,
    target: &HackTarget<'_>,
    artifact: &BuiltArtifact,
    round: usize,
    route: AttackRoute,
    report: Option<&VulnReport>,
    advice: &str,
    cfg: &HackConfig,
) -> Result<HackRound, HackError> {
    let ct = constraints_text(&target.problem.constraints);
    let report_json = report.map_or_else(|| "{}".to_string(), |r| serde_json::to_string(r).expect("report serializes"));
    let r = route.as_str();
    let gen_b: Bindings = bindings([
        ("PROBLEM_DESC", target.problem.statement.as_str()),
        ("ADVICE_SECTION", advice),
        ("CONSTRAINTS_TEXT", ct.as_str()),
        ("PREVIOUS_ISSUES_SECTION", ""),
        ("PREVIOUS_INPUT_SECTION", ""),
        ("REPORT_JSON", report_json.as_str()),
    ]);
    let mut src = extract_code(&caller.call(&format!("hack.{r}.generator"), &gen_b)?);
    let mut verdicts = RoundVerdicts::default();
    let mut produced = Vec::new();
    let mut ever_clean = false;
    for attempt in 0..=cfg.generator_repairs {
        let (run, clean) = run_generator(sandbox, &src, &artifact.validator, cfg)?;
        ever_clean |= clean;
        let issues = match run {
            GenRun::CompileFailed(diag) => {
                verdicts.compile_failures += 1;
                vec![format!("compile error:\n{}", clip(&diag, 1500))]
            }
            GenRun::Compiled(inputs, issues) => {
                let any_valid = inputs.iter().any(|i| i.1);
                produced = inputs;
                if any_valid {
                    break;
                }
                issues
            }
        };
        if attempt == cfg.generator_repairs {
            break;
        }
        let issues = issues.join("\n");
        let checklist = caller.call(
            &format!("hack.{r}.checklist"),
            &bindings([
                ("PROBLEM_DESC", target.problem.statement.as_str()),
                ("CONSTRAINTS_TEXT", ct.as_str()),
                ("LAST_GENERATOR_CODE", src.as_str()),
                ("ISSUES_SECTION", issues.as_str()),
                ("REPORT_JSON", report_json.as_str()),
            ]),
        )?;
        let checklist = extract_json(&checklist).map(|v| v.to_string()).unwrap_or(checklist);
        let patch = caller.call(
            &format!("hack.{r}.patch"),
            &bindings([
                ("LAST_GENERATOR_CODE", src.as_str()),
                ("CHECKLIST_JSON", checklist.as_str()),
                ("ISSUES_SECTION", issues.as_str()),
                ("PATCH_FORMAT", PATCH_FORMAT),
            ]),
        )?;
        match parse_patch(&patch).and_then(|blocks| apply_patch(&src, &blocks)) {
            Ok((patched, _)) => src = patched,
            Err(e) => log::info!("generator patch rejected: {e}"),
        }
    }

    let judge = artifact.judge(cfg.limits);
    for (input, valid) in produced {
        let mut h = HackInput {
            input,
            valid,
            verdict: None,
            secondary: None,
        };
        if valid {
            match judge.judge(target.program, h.input.as_bytes(), None, &cfg.limits) {
                Ok(v) => {
                    h.verdict = Some(v.kind);
                    h.secondary = v.secondary;
                }
                Err(e) => log::warn!("hack input could not be judged: {e}"),
            }
        }
        verdicts.inputs.push(h);
    }
    verdicts.generation_failed = verdicts.valid().next().is_none() && !ever_clean;
    let reward = hack_reward(&verdicts);
    Ok(HackRound {
        round,
        route,
        generator_src: Some(src),
        verdicts,
        reward,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use VerdictKind::*;

    fn input(valid: bool, v: Option<VerdictKind>) -> HackInput {
        HackInput {
            input: String::new(),
            valid,
            verdict: v,
            secondary: None,
        }
    }

    #[test]
    fn severities() {
        assert_eq!(severity(WrongAnswer).unwrap(), 0.5);
        assert_eq!(severity(Crash).unwrap(), 1.0);
        assert_eq!(severity(RuntimeError).unwrap(), 0.85);
        assert!(severity(Accepted).is_err());
        assert_eq!(break_severity(TimeLimit, Some(RuntimeError)).unwrap(), 0.85);
    }

    #[test]
    fn worked_example() {
        let mut inputs = vec![input(false, None), input(false, None)];
        for v in [WrongAnswer, TimeLimit, WrongAnswer, RuntimeError] {
            inputs.push(input(true, Some(v)));
        }
        for _ in 0..4 {
            inputs.push(input(true, Some(Accepted)));
        }
        let r = RoundVerdicts {
            inputs,
            compile_failures: 0,
            generation_failed: false,
        };
        assert!((hack_reward(&r) - 0.59125).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_cap() {
        let r = RoundVerdicts {
            inputs: Vec::new(),
            compile_failures: 2,
            generation_failed: true,
        };
        assert!((hack_reward(&r) + 0.8).abs() < 1e-12);
        assert!((hack_reward_parts(1, 1, &[1.0], 4) - 0.7).abs() < 1e-12);
        // Validator rejected everything but the generator ran: not degenerate.
        let r = RoundVerdicts {
            inputs: vec![input(false, None)],
            compile_failures: 1,
            generation_failed: false,
        };
        assert!((hack_reward(&r) + 0.1).abs() < 1e-12);
    }

    #[test]
    fn routing() {
        use AttackRoute::*;
        assert_eq!(next_route(Some(AntiHash), 1, &[]), RouteDecision::Attack(AntiHash));
        assert_eq!(next_route(None, 1, &[]), RouteDecision::Attack(Semantic));
        assert_eq!(next_route(None, 2, &[Semantic]), RouteDecision::Attack(Stress));
        assert_eq!(next_route(None, 3, &[Semantic, Stress]), RouteDecision::Attack(AntiHash));
        assert_eq!(next_route(Some(AntiHash), 2, &[AntiHash]), RouteDecision::Attack(Semantic));
        assert_eq!(next_route(None, 4, &[]), RouteDecision::Exhausted);
        assert_eq!(next_route(None, 3, &[Semantic, Stress, AntiHash]), RouteDecision::Exhausted);
    }

    #[test]
    fn analyst_replies() {
        let t = r#"{"tool": "run_python", "parameters": {"script_code": "print(1)"}}"#;
        assert_eq!(parse_analyst_reply(t), Some(AnalystReply::RunPython("print(1)".into())));
        let rep = r#"```json
{"bug_class": "hash_collision", "confidence": "high", "evidence": ["x"], "suggested_route": "antihash", "input_hypothesis": []}
```"#;
        let Some(AnalystReply::Report(r)) = parse_analyst_reply(rep) else { panic!() };
        assert_eq!(r.suggested_route, Some(AttackRoute::AntiHash));
        assert_eq!(r.bug_class, BugClass::HashCollision);
        let weak = r#"{"bug_class": "mystery", "confidence": "low", "suggested_route": "bogus"}"#;
        let Some(AnalystReply::Report(r)) = parse_analyst_reply(weak) else { panic!() };
        assert!(r.is_weak() && r.bug_class == BugClass::Unknown && r.suggested_route.is_none());
        assert_eq!(parse_analyst_reply("no json"), None);
    }

    fn arb_kind() -> impl Strategy<Value = VerdictKind> {
        prop::sample::select(vec![Accepted, WrongAnswer, TimeLimit, MemoryLimit, RuntimeError, Crash])
    }

    fn arb_round() -> impl Strategy<Value = RoundVerdicts> {
        (
            prop::collection::vec((any::<bool>(), arb_kind(), prop::option::of(arb_kind())), 0..30),
            0u32..10,
            any::<bool>(),
        )
            .prop_map(|(v, c, g)| RoundVerdicts {
                inputs: v
                    .into_iter()
                    .map(|(valid, k, s)| HackInput {
                        input: String::new(),
                        valid,
                        verdict: valid.then_some(k),
                        secondary: s.filter(|s| *s != Accepted),
                    })
                    .collect(),
                compile_failures: c,
                generation_failed: g,
            })
    }

    proptest! {
        #[test]
        fn reward_in_range(r in arb_round()) {
            let x = hack_reward(&r);
            prop_assert!((-1.0..=1.0).contains(&x));
        }

        #[test]
        fn degenerate_band(c in 0u32..1000) {
            let d = degenerate_reward(c);
            prop_assert!((-0.9..=-0.6).contains(&d));
        }

        #[test]
        fn monotone_in_breaks(all in 1usize..30, valid in 1usize..30, b in 0usize..30, sev in 0.5f64..=1.0, c in 0u32..5) {
            let valid = valid.min(all);
            let b = b.min(valid.saturating_sub(1));
            let lo = hack_reward_parts(all, valid, &vec![sev; b], c);
            let hi = hack_reward_parts(all, valid, &vec![sev; b + 1], c);
            prop_assert!(lo <= hi);
        }

        #[test]
        fn cascade_never_repeats(sugg in prop::option::of(prop::sample::select(AttackRoute::CASCADE.to_vec()))) {
            let mut tried = Vec::new();
            for round in 1..=MAX_HACK_ROUNDS + 1 {
                match next_route(sugg, round, &tried) {
                    RouteDecision::Attack(r) => {
                        prop_assert!(!tried.contains(&r));
                        tried.push(r);
                    }
                    RouteDecision::Exhausted => prop_assert!(round > MAX_HACK_ROUNDS),
                }
            }
            prop_assert_eq!(tried.len(), 3);
        }
    }
}
