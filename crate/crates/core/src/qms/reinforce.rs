use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::graph::QmsGraph;
use super::retrieval::{softmax_over, SkillSample};
use super::QmsError;

pub const DEFAULT_LEARNING_RATE: f64 = 0.1;
pub const MIN_WEIGHT: f64 = 1e-6;

/// ∇_w log p(drawn) split by edge layer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradient {
    pub qm: BTreeMap<(usize, usize), f64>,
    pub ms: BTreeMap<(usize, usize), f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub applied: bool,
    pub qm_touched: usize,
    pub ms_touched: usize,
    pub groups_renormalized: usize,
    pub new_version: u64,
}

impl QmsGraph {
    /// ∂ log p / ∂ρ_s for every pool skill.
    fn score_gradient(&self, sample: &SkillSample) -> BTreeMap<usize, f64> {
        let rho = self.scores_for(&sample.activations);
        let t = sample.temperature;
        let mut g: BTreeMap<usize, f64> = sample.pool.iter().map(|&s| (s, 0.0)).collect();
        let mut remaining = sample.pool.clone();
        for &drawn in &sample.drawn {
            let probs = softmax_over(&rho, &remaining, t);
            for (s, p) in remaining.iter().zip(&probs) {
                *g.get_mut(s).expect("pool skill") -= p / t;
            }
            *g.get_mut(&drawn).expect("pool skill") += 1.0 / t;
            remaining.retain(|s| *s != drawn);
        }
        g
    }

    /// Analytic gradient of log p(drawn) through softmax(ρ/T) and the
    /// bilinear path terms into both edge layers.
    pub fn log_prob_gradient(&self, sample: &SkillSample) -> Result<Gradient, QmsError> {
        self.check_fresh(sample)?;
        let gs = self.score_gradient(sample);
        let mut grad = Gradient::default();
        for a in &sample.activations {
            for (j, wq) in self.weights.qm_out(a.q) {
                let mut dq = 0.0;
                for (s, wm) in self.weights.ms_out(j) {
                    let Some(&g) = gs.get(&s) else { continue };
                    dq += g * a.similarity * wm;
                    *grad.ms.entry((j, s)).or_insert(0.0) += g * a.similarity * wq;
                }
                *grad.qm.entry((a.q, j)).or_insert(0.0) += dq;
            }
        }
        Ok(grad)
    }

    fn check_fresh(&self, sample: &SkillSample) -> Result<(), QmsError> {
        if sample.version != self.version {
            return Err(QmsError::StaleSample {
                sampled_at: sample.version,
                current: self.version,
            });
        }
        Ok(())
    }

    /// w ← w + α·ΔR·∇ log p, clamp touched weights to ≥ 1e-6, then
    /// renormalize every touched MS group.
    pub fn reinforce_update(&mut self, sample: &SkillSample, delta_r: f64, alpha: f64) -> Result<UpdateReport, QmsError> {
        self.check_fresh(sample)?;
        if delta_r.is_nan() || delta_r.abs() > 1.0 {
            return Err(QmsError::InvalidParameter("|ΔR| must be at most 1"));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(QmsError::InvalidParameter("learning rate must be non-negative"));
        }
        if delta_r == 0.0 || sample.drawn.is_empty() {
            return Ok(UpdateReport {
                applied: false,
                qm_touched: 0,
                ms_touched: 0,
                groups_renormalized: 0,
                new_version: self.version,
            });
        }
        let grad = self.log_prob_gradient(sample)?;
        let step = alpha * delta_r;
        for (k, g) in &grad.qm {
            let w = self.weights.qm.get_mut(k).expect("gradient keys are existing edges");
            *w = (*w + step * g).max(MIN_WEIGHT);
        }
        let mut groups = BTreeSet::new();
        for (k, g) in &grad.ms {
            let w = self.weights.ms.get_mut(k).expect("gradient keys are existing edges");
            *w = (*w + step * g).max(MIN_WEIGHT);
            groups.insert(k.0);
        }
        for &j in &groups {
            self.normalize_ms_group(j);
        }
        self.version += 1;
        Ok(UpdateReport {
            applied: true,
            qm_touched: grad.qm.len(),
            ms_touched: grad.ms.len(),
            groups_renormalized: groups.len(),
            new_version: self.version,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qms::graph::{BlockDag, MNode, MethodKind, QNode, SNode};
    use crate::qms::retrieval::{log_prob, sample_skills};

    fn toy() -> QmsGraph {
        let mut g = QmsGraph::new(2);
        for (id, e) in [("q1", vec![1.0, 0.2]), ("q2", vec![0.1, 1.0])] {
            g.add_q(QNode {
                id: id.into(),
                statement: String::new(),
                tags: Default::default(),
                embedding: e,
            })
            .unwrap();
        }
        for id in ["m1", "m2"] {
            g.add_m(MNode {
                id: id.into(),
                kind: MethodKind::Analysis { source: String::new() },
                block_dag: BlockDag::default(),
            })
            .unwrap();
        }
        for id in ["s1", "s2", "s3"] {
            g.add_s(SNode {
                id: id.into(),
                title: id.into(),
                description: String::new(),
                template: "x".into(),
                block_ids: vec![],
                embedding: None,
            })
            .unwrap();
        }
        g.set_qm(0, 0, 0.7).unwrap();
        g.set_qm(0, 1, 0.4).unwrap();
        g.set_qm(1, 1, 0.9).unwrap();
        g.set_ms(0, 0, 0.5).unwrap();
        g.set_ms(0, 1, 0.5).unwrap();
        g.set_ms(1, 1, 0.2).unwrap();
        g.set_ms(1, 2, 0.8).unwrap();
        g
    }

    #[test]
    fn zero_reward_is_a_no_op() {
        let mut g = toy();
        let before = g.weights().clone();
        let sample = sample_skills(&g.skill_scores(&[1.0, 0.5], 4).unwrap(), 0.2, 2, 20, 1).unwrap();
        let rep = g.reinforce_update(&sample, 0.0, 0.1).unwrap();
        assert!(!rep.applied);
        assert_eq!(g.weights(), &before);
    }

    #[test]
    fn stale_sample_rejected() {
        let mut g = toy();
        let sample = sample_skills(&g.skill_scores(&[1.0, 0.5], 4).unwrap(), 0.2, 2, 20, 1).unwrap();
        g.set_qm(1, 0, 0.1).unwrap();
        assert!(matches!(g.reinforce_update(&sample, 0.5, 0.1), Err(QmsError::StaleSample { .. })));
    }

    #[test]
    fn positive_reward_raises_first_draw_probability() {
        for seed in 0..20 {
            let mut g = toy();
            let sc = g.skill_scores(&[1.0, 0.5], 4).unwrap();
            let sample = sample_skills(&sc, 0.2, 1, 20, seed).unwrap();
            let before = log_prob(&g, &sample);
            g.reinforce_update(&sample, 0.8, 0.1).unwrap();
            assert!(log_prob(&g, &sample) >= before - 1e-12, "seed {seed}");
            assert!(g.max_ms_group_error() < 1e-9);
        }
    }

    #[test]
    fn weights_stay_positive_under_large_negative_steps() {
        let mut g = toy();
        for seed in 0..50 {
            let sc = g.skill_scores(&[1.0, 0.5], 4).unwrap();
            let sample = sample_skills(&sc, 0.2, 2, 20, seed).unwrap();
            g.reinforce_update(&sample, -1.0, 5.0).unwrap();
            assert!(g.weights().qm.values().all(|w| *w >= MIN_WEIGHT));
            assert!(g.weights().ms.values().all(|w| *w > 0.0));
            assert!(g.max_ms_group_error() < 1e-9);
        }
    }
}
