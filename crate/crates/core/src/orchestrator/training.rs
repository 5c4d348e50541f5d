//! Training rollouts: one problem solved twice, with and without retrieved
//! skills. The pass-rate gap drives the policy update and graph growth.

use serde::{Deserialize, Serialize};

use super::episode::EpisodeRecord;
use super::fsm::{Budgets, Fsm, Signal};
use super::runner::{Engine, EngineError, ExtraReward, Plan, SolveSetup};
use super::feature_context;
use super::fsm::Phase;
use crate::bandit::{BanditContext, Namespace};
use crate::oracle::BuiltArtifact;
use crate::pipeline::ProblemRecord;
use crate::qms::{BlockDag, CorpusSolution, FunctionBlock, GraphDelta, GrowthArtifacts, QNode, QmsError, UpdateReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub setup: EpisodeRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub with_skills: Option<EpisodeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub without_skills: Option<EpisodeRecord>,
    /// Certified-test pass rate with skills minus without.
    pub delta_r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update: Option<UpdateReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth: Option<GraphDelta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skipped: Option<String>,
}

fn is_cert(id: &str) -> bool {
    id.starts_with("cert:")
}

/// Chain of plan steps, or a single block when the plan has none.
fn plan_blocks(plan: &Plan) -> BlockDag {
    let blocks: Vec<FunctionBlock> = if plan.summary.steps.is_empty() {
        vec![FunctionBlock {
            id: "solve".into(),
            description: plan.summary.algorithm.clone(),
        }]
    } else {
        plan.summary
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| FunctionBlock {
                id: format!("step_{}", i + 1),
                description: s.clone(),
            })
            .collect()
    };
    let edges = (1..blocks.len()).map(|i| (i - 1, i)).collect();
    BlockDag { blocks, edges }
}

impl Engine<'_> {
    /// Plan and certify once, then run the solve loop with and without
    /// skills. Hacking is off in both rollouts so the gap measures skills.
    pub fn training_rollout(&self, problem: &ProblemRecord) -> TrainingReport {
        let mut setup = self.new_episode(problem, "setup");
        let prepared = self
            .plan_phase(&mut setup, problem)
            .and_then(|plan| Ok((self.oracle_phase(&mut setup, problem, &plan)?, plan)));
        let mut report = TrainingReport {
            setup: EpisodeRecord::new(&problem.id, "setup"),
            with_skills: None,
            without_skills: None,
            delta_r: 0.0,
            update: None,
            growth: None,
            skipped: None,
        };
        let (built, plan) = match prepared {
            Ok((Some(b), plan)) => (b, plan),
            Ok((None, _)) => {
                report.skipped = Some("oracle artifact rejected".into());
                self.close(setup, &mut report);
                return report;
            }
            Err(e) => {
                log::error!("training setup for {} failed: {e}", problem.id);
                report.skipped = Some(e.to_string());
                setup.rec.outcome.last_failure = Some(e.to_string());
                let _ = self.signal(&mut setup, Signal::Abort);
                self.close(setup, &mut report);
                return report;
            }
        };
        self.close(setup, &mut report);
        if let Err(e) = self.contrast(problem, &plan, &built, &mut report) {
            log::error!("training rollout for {} failed: {e}", problem.id);
            report.skipped = Some(e.to_string());
        }
        report
    }

    fn close(&self, mut ep: super::runner::Episode<'_>, report: &mut TrainingReport) {
        if let Err(e) = self.finalize(&mut ep, None) {
            log::error!("finalize failed: {e}");
        }
        ep.caller_transcript_into_record();
        report.setup = ep.rec;
    }

    fn contrast(
        &self,
        problem: &ProblemRecord,
        plan: &Plan,
        built: &BuiltArtifact,
        report: &mut TrainingReport,
    ) -> Result<(), EngineError> {
        let budgets = Budgets {
            hack_rounds: 0,
            ..self.cfg.budgets
        };
        let mut outcomes = Vec::new();
        for use_skills in [true, false] {
            let label = if use_skills { "with_skills" } else { "without_skills" };
            let mut ep = self.new_episode(problem, label);
            ep.fsm = Fsm::new(budgets);
            ep.rec.plan = Some(plan.summary.clone());
            for s in [Signal::Planned, Signal::OracleAccepted] {
                self.signal(&mut ep, s)?;
            }
            let setup = SolveSetup {
                plan,
                artifact: Some(built),
                use_skills,
            };
            let cand = self.solve_loop(&mut ep, problem, &setup)?;
            let rate = cand.pass_rate_where(is_cert);
            ep.rec.outcome.pass_rate = rate;
            ep.rec.final_source = Some(cand.source.clone());
            outcomes.push((ep, cand, rate));
        }
        let (mut without, without_cand, r_without) = outcomes.pop().expect("two rollouts");
        let (mut with, with_cand, r_with) = outcomes.pop().expect("two rollouts");
        let delta = r_with - r_without;
        report.delta_r = delta;

        let solve_ctx: BanditContext = feature_context(Phase::SolveDraft, None, &plan.tags);
        let extra: Vec<ExtraReward> = with
            .solve_advice
            .iter()
            .map(|id| (Namespace::Solve, id.clone(), delta, solve_ctx.clone(), "skill_contrast".to_string()))
            .collect();

        if let Some(sk) = self.skills {
            let mut g = sk.graph.write().expect("skill graph lock");
            if let Some(sample) = &with.skill_sample {
                match g.reinforce_update(sample, delta, self.cfg.skills.learning_rate) {
                    Ok(u) => report.update = Some(u),
                    Err(QmsError::StaleSample { sampled_at, current }) => {
                        log::warn!("skill sample from version {sampled_at} is stale at {current}; update skipped")
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            let embedding = sk.embedder.embed(&problem.statement)?;
            let corpus: Vec<CorpusSolution> = problem
                .reference_solution
                .iter()
                .map(|src| {
                    Ok::<_, EngineError>(CorpusSolution {
                        id: format!("{}:reference", problem.id),
                        source: src.clone(),
                        embedding: sk.embedder.embed(src)?,
                    })
                })
                .collect::<Result<_, _>>()?;
            let divergence = if (r_with - r_without).abs() > 0.0 {
                format!("certified pass rate {r_with:.3} with skills against {r_without:.3} without")
            } else {
                String::new()
            };
            let art = GrowthArtifacts {
                q_new: QNode {
                    id: problem.id.clone(),
                    statement: problem.statement.clone(),
                    tags: plan.tags.clone(),
                    embedding,
                },
                with_source: with_cand.source.clone(),
                without_source: without_cand.source.clone(),
                blocks: plan_blocks(plan),
                divergence,
                corpus: &corpus,
            };
            match g.grow_graph(r_with, r_without, art, sk.embedder, &self.cfg.skills.growth) {
                Ok(d) => report.growth = Some(d),
                Err(QmsError::DuplicateNode(id)) => log::info!("{id} is already in the graph; no growth"),
                Err(e) => return Err(e.into()),
            }
        }
        with.rec.skill_update = report.update.clone();
        with.rec.graph_delta = report.growth.clone();

        self.finalize(&mut with, Some(extra))?;
        self.finalize(&mut without, None)?;
        with.caller_transcript_into_record();
        without.caller_transcript_into_record();
        report.with_skills = Some(with.rec);
        report.without_skills = Some(without.rec);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::episode::PlanSummary;

    fn plan(steps: &[&str]) -> Plan {
        Plan {
            summary: PlanSummary {
                tags_level1: vec![],
                tags_level2: vec![],
                algorithm: "greedy".into(),
                steps: steps.iter().map(|s| s.to_string()).collect(),
                strategy_item: "plan:x".into(),
            },
            tags: Default::default(),
        }
    }

    #[test]
    fn blocks_form_a_chain() {
        let d = plan_blocks(&plan(&["read", "sort", "print"]));
        assert_eq!(d.blocks.len(), 3);
        assert_eq!(d.edges, vec![(0, 1), (1, 2)]);
        d.validate().unwrap();
        let single = plan_blocks(&plan(&[]));
        assert_eq!(single.blocks.len(), 1);
        assert!(single.edges.is_empty());
    }
}
