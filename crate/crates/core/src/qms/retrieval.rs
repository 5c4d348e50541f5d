use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::graph::QmsGraph;
use super::QmsError;
use crate::embed::cosine;

pub const DEFAULT_TOP_K_Q: usize = 4;
pub const DEFAULT_POOL_SIZE: usize = 20;
pub const DEFAULT_SAMPLE_SIZE: usize = 5;
pub const DEFAULT_TEMPERATURE: f64 = 0.2;

/// An activated Q node and its similarity to the query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Activation {
    pub q: usize,
    pub similarity: f64,
}

/// Path scores for every skill reachable from the activated Q nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillScores {
    pub version: u64,
    pub activations: Vec<Activation>,
    pub scores: BTreeMap<usize, f64>,
}

/// Result of one sampling call, kept so the update can replay the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillSample {
    pub version: u64,
    pub activations: Vec<Activation>,
    /// Candidate skills, best first.
    pub pool: Vec<usize>,
    /// Drawn skills in draw order.
    pub drawn: Vec<usize>,
    pub temperature: f64,
}

impl QmsGraph {
    /// Top `k_q` Q nodes by similarity; ties resolve to the lower index.
    pub fn activate(&self, query: &[f64], k_q: usize) -> Result<Vec<Activation>, QmsError> {
        if k_q == 0 {
            return Err(QmsError::InvalidParameter("k_q must be at least 1"));
        }
        let mut acts = Vec::with_capacity(self.q.len());
        for (i, node) in self.q.iter().enumerate() {
            let similarity = cosine(query, &node.embedding)?;
            acts.push(Activation { q: i, similarity });
        }
        acts.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.q.cmp(&b.q)));
        acts.truncate(k_q);
        Ok(acts)
    }

    /// ρ(s) = Σ over activated i, edges i→j→s of sim_i · qm_ij · ms_js.
    pub fn scores_for(&self, activations: &[Activation]) -> BTreeMap<usize, f64> {
        let mut rho = BTreeMap::new();
        for a in activations {
            for (j, wq) in self.weights.qm_out(a.q) {
                for (s, wm) in self.weights.ms_out(j) {
                    *rho.entry(s).or_insert(0.0) += a.similarity * wq * wm;
                }
            }
        }
        rho
    }

    pub fn skill_scores(&self, query: &[f64], k_q: usize) -> Result<SkillScores, QmsError> {
        let activations = if self.q.is_empty() {
            Vec::new()
        } else {
            self.activate(query, k_q)?
        };
        Ok(SkillScores {
            version: self.version,
            scores: self.scores_for(&activations),
            activations,
        })
    }
}

/// Top `pool_size` skills by score, ties to the lower index.
pub fn candidate_pool(scores: &BTreeMap<usize, f64>, pool_size: usize) -> Vec<usize> {
    let mut pool: Vec<(usize, f64)> = scores.iter().map(|(&s, &r)| (s, r)).collect();
    pool.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    pool.truncate(pool_size);
    pool.into_iter().map(|(s, _)| s).collect()
}

/// softmax(ρ/T) restricted to `remaining`, in the order given.
pub fn softmax_over(rho: &BTreeMap<usize, f64>, remaining: &[usize], temperature: f64) -> Vec<f64> {
    let z: Vec<f64> = remaining.iter().map(|s| rho.get(s).copied().unwrap_or(0.0) / temperature).collect();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Sequential draws without replacement from softmax(ρ/T) over the pool.
pub fn sample_skills(
    scores: &SkillScores,
    temperature: f64,
    n: usize,
    pool_size: usize,
    rng_seed: u64,
) -> Result<SkillSample, QmsError> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(QmsError::InvalidParameter("temperature must be positive"));
    }
    let pool = candidate_pool(&scores.scores, pool_size);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut remaining = pool.clone();
    let mut drawn = Vec::with_capacity(n.min(pool.len()));
    while drawn.len() < n && !remaining.is_empty() {
        let probs = softmax_over(&scores.scores, &remaining, temperature);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut pick = remaining.len() - 1;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = k;
                break;
            }
        }
        drawn.push(remaining.remove(pick));
    }
    Ok(SkillSample {
        version: scores.version,
        activations: scores.activations.clone(),
        pool,
        drawn,
        temperature,
    })
}

/// log p(drawn) under the current weights for the sample's activations.
pub fn log_prob(graph: &QmsGraph, sample: &SkillSample) -> f64 {
    let rho = graph.scores_for(&sample.activations);
    let mut remaining = sample.pool.clone();
    let mut lp = 0.0;
    for s in &sample.drawn {
        let probs = softmax_over(&rho, &remaining, sample.temperature);
        let k = remaining.iter().position(|r| r == s).expect("drawn skill is in the pool");
        lp += probs[k].ln();
        remaining.remove(k);
    }
    lp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qms::graph::{BlockDag, MNode, MethodKind, QNode, SNode};

    fn q(id: &str, e: Vec<f64>) -> QNode {
        QNode {
            id: id.into(),
            statement: String::new(),
            tags: Default::default(),
            embedding: e,
        }
    }

    fn m(id: &str) -> MNode {
        MNode {
            id: id.into(),
            kind: MethodKind::Analysis { source: String::new() },
            block_dag: BlockDag::default(),
        }
    }

    fn s(id: &str) -> SNode {
        SNode {
            id: id.into(),
            title: id.into(),
            description: String::new(),
            template: "//".into(),
            block_ids: vec![],
            embedding: None,
        }
    }

    fn scores(map: &[(usize, f64)]) -> SkillScores {
        SkillScores {
            version: 0,
            activations: vec![],
            scores: map.iter().copied().collect(),
        }
    }

    #[test]
    fn single_path_score() {
        let mut g = QmsGraph::new(2);
        g.add_q(q("q", vec![1.0, 0.0])).unwrap();
        g.add_m(m("m")).unwrap();
        g.add_s(s("s")).unwrap();
        g.set_qm(0, 0, 0.5).unwrap();
        g.set_ms(0, 0, 0.6).unwrap();
        // cos = 0.8
        let r = g.skill_scores(&[0.8, 0.6], 4).unwrap();
        assert!((r.scores[&0] - 0.24).abs() < 1e-12);
    }

    #[test]
    fn disjoint_paths_sum() {
        let mut g = QmsGraph::new(2);
        g.add_q(q("q1", vec![1.0, 0.0])).unwrap();
        g.add_q(q("q2", vec![1.0, 0.0])).unwrap();
        g.add_m(m("m1")).unwrap();
        g.add_m(m("m2")).unwrap();
        g.add_s(s("s")).unwrap();
        g.set_qm(0, 0, 0.5).unwrap();
        g.set_qm(1, 1, 0.5).unwrap();
        g.set_ms(0, 0, 0.6).unwrap();
        g.set_ms(1, 0, 0.6).unwrap();
        let r = g.skill_scores(&[0.8, 0.6], 4).unwrap();
        assert!((r.scores[&0] - 0.48).abs() < 1e-12);
    }

    #[test]
    fn activation_cutoff() {
        let mut g = QmsGraph::new(2);
        g.add_q(q("near", vec![1.0, 0.0])).unwrap();
        g.add_q(q("far", vec![0.0, 1.0])).unwrap();
        g.add_m(m("m1")).unwrap();
        g.add_m(m("m2")).unwrap();
        g.add_s(s("a")).unwrap();
        g.add_s(s("b")).unwrap();
        g.set_qm(0, 0, 1.0).unwrap();
        g.set_qm(1, 1, 1.0).unwrap();
        g.set_ms(0, 0, 1.0).unwrap();
        g.set_ms(1, 1, 1.0).unwrap();
        let r = g.skill_scores(&[1.0, 0.1], 1).unwrap();
        assert!(r.scores.contains_key(&0));
        assert!(!r.scores.contains_key(&1));
        assert!(QmsGraph::new(2).skill_scores(&[1.0, 0.0], 4).unwrap().scores.is_empty());
    }

    #[test]
    fn equal_scores_split_evenly() {
        let sc = scores(&[(0, 0.3), (1, 0.3)]);
        let n = 10_000;
        let first_zero = (0..n)
            .filter(|&seed| sample_skills(&sc, 0.2, 1, 20, seed).unwrap().drawn[0] == 0)
            .count() as f64;
        let e = n as f64 / 2.0;
        let chi2 = (first_zero - e).powi(2) / e + ((n as f64 - first_zero) - e).powi(2) / e;
        // df = 1, p = 0.01
        assert!(chi2 < 6.635, "chi2 = {chi2}");
    }

    #[test]
    fn cold_limit_draws_argmax() {
        let sc = scores(&[(0, 0.30), (1, 0.31), (2, 0.1)]);
        for seed in 0..200 {
            assert_eq!(sample_skills(&sc, 1e-6, 1, 20, seed).unwrap().drawn, vec![1]);
        }
    }

    #[test]
    fn oversized_n_returns_everything() {
        let sc = scores(&[(0, 0.1), (4, 0.2), (9, 0.3)]);
        let mut got = sample_skills(&sc, 0.2, 10, 20, 3).unwrap().drawn;
        got.sort();
        assert_eq!(got, vec![0, 4, 9]);
        assert!(sample_skills(&sc, 0.0, 1, 20, 3).is_err());
    }

    #[test]
    fn pool_truncates_to_top() {
        let map: BTreeMap<usize, f64> = (0..30).map(|i| (i, i as f64)).collect();
        let pool = candidate_pool(&map, 20);
        assert_eq!(pool.len(), 20);
        assert_eq!(pool[0], 29);
        assert!(!pool.contains(&9));
    }

    proptest::proptest! {
        #[test]
        fn softmax_is_shift_invariant(vals in proptest::collection::vec(-1.0f64..1.0, 1..8), c in -5.0f64..5.0) {
            let a: BTreeMap<usize, f64> = vals.iter().copied().enumerate().collect();
            let b: BTreeMap<usize, f64> = vals.iter().map(|v| v + c).enumerate().collect();
            let keys: Vec<usize> = (0..vals.len()).collect();
            let pa = softmax_over(&a, &keys, 0.2);
            let pb = softmax_over(&b, &keys, 0.2);
            for (x, y) in pa.iter().zip(&pb) {
                proptest::prop_assert!((x - y).abs() < 1e-9);
            }
        }

        #[test]
        fn scores_nonnegative(ws in proptest::collection::vec(0.0f64..1.0, 4), e in proptest::collection::vec(0.01f64..1.0, 2)) {
            let mut g = QmsGraph::new(2);
            g.add_q(q("a", vec![1.0, 0.2])).unwrap();
            g.add_q(q("b", vec![0.3, 1.0])).unwrap();
            g.add_m(m("m")).unwrap();
            g.add_s(s("x")).unwrap();
            g.add_s(s("y")).unwrap();
            g.set_qm(0, 0, ws[0]).unwrap();
            g.set_qm(1, 0, ws[1]).unwrap();
            g.set_ms(0, 0, ws[2]).unwrap();
            g.set_ms(0, 1, ws[3]).unwrap();
            let r = g.skill_scores(&e, 4).unwrap();
            proptest::prop_assert!(r.scores.values().all(|v| *v >= 0.0));
        }
    }
}
