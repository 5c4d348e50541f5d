//! Episode state machine. Pure: it only counts and routes signals, so the
//! budgets can be checked exhaustively without running anything.

use std::fmt;

use serde::{Deserialize, Serialize};

pub const MAX_SOLVER_ITERATIONS: u32 = 8;
pub const MAX_HACK_ROUNDS: u32 = 3;
pub const MAX_ORACLE_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Plan,
    OracleBuild,
    SolveDraft,
    SelfValidate,
    PatchDecision,
    SolvePatch,
    SolveRegen,
    HackRound,
    Finalize,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Plan => "PLAN",
            Phase::OracleBuild => "ORACLE_BUILD",
            Phase::SolveDraft => "SOLVE_DRAFT",
            Phase::SelfValidate => "SELF_VALIDATE",
            Phase::PatchDecision => "PATCH_DECISION",
            Phase::SolvePatch => "SOLVE_PATCH",
            Phase::SolveRegen => "SOLVE_REGEN",
            Phase::HackRound => "HACK_ROUND",
            Phase::Finalize => "FINALIZE",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    Planned,
    OracleAccepted,
    OracleRejected,
    /// No artifact will come, e.g. the generator never compiled.
    OracleUnavailable,
    Drafted,
    AllPass,
    SomeFail,
    ChosePatch,
    ChoseRegen,
    Revised,
    /// Valid inputs, no break.
    Survived,
    /// No valid input this round.
    Unproductive,
    Break,
    Abort,
}

impl Signal {
    pub const ALL: [Signal; 14] = [
        Signal::Planned,
        Signal::OracleAccepted,
        Signal::OracleRejected,
        Signal::OracleUnavailable,
        Signal::Drafted,
        Signal::AllPass,
        Signal::SomeFail,
        Signal::ChosePatch,
        Signal::ChoseRegen,
        Signal::Revised,
        Signal::Survived,
        Signal::Unproductive,
        Signal::Break,
        Signal::Abort,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budgets {
    pub solver_iterations: u32,
    pub hack_rounds: u32,
    pub oracle_attempts: u32,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            solver_iterations: MAX_SOLVER_ITERATIONS,
            hack_rounds: MAX_HACK_ROUNDS,
            oracle_attempts: MAX_ORACLE_ATTEMPTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("signal {signal:?} is not valid in phase {phase}")]
pub struct IllegalTransition {
    pub phase: Phase,
    pub signal: Signal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fsm {
    pub phase: Phase,
    pub budgets: Budgets,
    pub solver_iterations: u32,
    pub hack_rounds: u32,
    pub oracle_attempts: u32,
    pub has_artifact: bool,
    /// Set when the last validation passed every test.
    pub passing: bool,
    pub aborted: bool,
}

impl Fsm {
    pub fn new(budgets: Budgets) -> Self {
        Self {
            phase: Phase::Plan,
            budgets,
            solver_iterations: 0,
            hack_rounds: 0,
            oracle_attempts: 0,
            has_artifact: false,
            passing: false,
            aborted: false,
        }
    }

    fn hack_or_finish(&mut self) -> Phase {
        if self.has_artifact && self.hack_rounds < self.budgets.hack_rounds {
            self.hack_rounds += 1;
            Phase::HackRound
        } else {
            Phase::Finalize
        }
    }

    fn repair_or_finish(&self) -> Phase {
        if self.solver_iterations < self.budgets.solver_iterations {
            Phase::PatchDecision
        } else {
            Phase::Finalize
        }
    }

    /// Apply one signal and return the new phase.
    pub fn step(&mut self, signal: Signal) -> Result<Phase, IllegalTransition> {
        use Phase::*;
        use Signal::*;
        let illegal = IllegalTransition {
            phase: self.phase,
            signal,
        };
        let next = match (self.phase, signal) {
            (Finalize, _) => return Err(illegal),
            (_, Abort) => {
                self.aborted = true;
                self.passing = false;
                Finalize
            }
            (Plan, Planned) => OracleBuild,
            (OracleBuild, OracleAccepted) => {
                self.oracle_attempts += 1;
                self.has_artifact = true;
                SolveDraft
            }
            (OracleBuild, OracleRejected) => {
                self.oracle_attempts += 1;
                if self.oracle_attempts < self.budgets.oracle_attempts {
                    OracleBuild
                } else {
                    SolveDraft
                }
            }
            (OracleBuild, OracleUnavailable) => SolveDraft,
            (SolveDraft, Drafted) | (SolvePatch, Revised) | (SolveRegen, Revised) => {
                self.solver_iterations += 1;
                SelfValidate
            }
            (SelfValidate, AllPass) => {
                self.passing = true;
                self.hack_or_finish()
            }
            (SelfValidate, SomeFail) => {
                self.passing = false;
                self.repair_or_finish()
            }
            (PatchDecision, ChosePatch) => SolvePatch,
            (PatchDecision, ChoseRegen) => SolveRegen,
            (HackRound, Survived) => Finalize,
            (HackRound, Unproductive) => self.hack_or_finish(),
            (HackRound, Break) => {
                self.passing = false;
                self.repair_or_finish()
            }
            _ => return Err(illegal),
        };
        self.phase = next;
        Ok(next)
    }

    pub fn within_budgets(&self) -> bool {
        self.solver_iterations <= self.budgets.solver_iterations
            && self.hack_rounds <= self.budgets.hack_rounds
            && self.oracle_attempts <= self.budgets.oracle_attempts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_pass_path() {
        let mut f = Fsm::new(Budgets::default());
        for s in [Signal::Planned, Signal::OracleAccepted, Signal::Drafted, Signal::AllPass] {
            f.step(s).unwrap();
        }
        assert_eq!(f.phase, Phase::HackRound);
        assert_eq!(f.step(Signal::Survived).unwrap(), Phase::Finalize);
        assert!(f.passing && f.solver_iterations == 1 && f.hack_rounds == 1);
        assert!(f.step(Signal::Planned).is_err());
    }

    #[test]
    fn no_artifact_skips_hacking() {
        let mut f = Fsm::new(Budgets::default());
        for s in [Signal::Planned, Signal::OracleUnavailable, Signal::Drafted] {
            f.step(s).unwrap();
        }
        assert_eq!(f.step(Signal::AllPass).unwrap(), Phase::Finalize);
    }

    #[test]
    fn solver_budget_stops_repairs() {
        let mut f = Fsm::new(Budgets::default());
        f.step(Signal::Planned).unwrap();
        f.step(Signal::OracleUnavailable).unwrap();
        f.step(Signal::Drafted).unwrap();
        for _ in 1..MAX_SOLVER_ITERATIONS {
            assert_eq!(f.step(Signal::SomeFail).unwrap(), Phase::PatchDecision);
            f.step(Signal::ChoseRegen).unwrap();
            f.step(Signal::Revised).unwrap();
        }
        assert_eq!(f.step(Signal::SomeFail).unwrap(), Phase::Finalize);
        assert_eq!(f.solver_iterations, MAX_SOLVER_ITERATIONS);
    }

    /// Every legal signal sequence up to length 12 stays within budgets,
    /// and every phase is reachable.
    #[test]
    fn exhaustive_budget_check() {
        let budgets = Budgets {
            solver_iterations: 3,
            hack_rounds: 2,
            oracle_attempts: 2,
        };
        fn dfs(f: &Fsm, depth: usize, visited: &mut std::collections::BTreeSet<Phase>) {
            visited.insert(f.phase);
            assert!(f.within_budgets(), "{f:?}");
            if depth == 0 {
                return;
            }
            for s in Signal::ALL {
                let mut g = f.clone();
                if g.step(s).is_ok() {
                    dfs(&g, depth - 1, visited);
                }
            }
        }
        let mut visited = Default::default();
        dfs(&Fsm::new(budgets), 12, &mut visited);
        assert_eq!(visited.len(), 9, "every phase is reachable");
        dfs(&Fsm::new(Budgets::default()), 12, &mut visited);
    }
}
