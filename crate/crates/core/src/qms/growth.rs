use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::{BlockDag, MNode, MethodKind, QNode, QmsGraph};
use super::QmsError;
use crate::embed::{cosine, Embedder};

/// A pass rate counts as success only at 1.
const SUCCESS: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthConfig {
    pub initial_qm_weight: f64,
    pub link_threshold: f64,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        Self {
            initial_qm_weight: 0.5,
            link_threshold: 0.75,
        }
    }
}

/// A known-correct solution available for pairing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSolution {
    pub id: String,
    pub source: String,
    pub embedding: Vec<f64>,
}

/// What the two rollouts produced.
#[derive(Debug, Clone)]
pub struct GrowthArtifacts<'a> {
    pub q_new: QNode,
    pub with_source: String,
    pub without_source: String,
    pub blocks: BlockDag,
    pub divergence: String,
    pub corpus: &'a [CorpusSolution],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthKind {
    BothSucceeded,
    Diverged,
    PairedWithCorpus,
    AnalysisPending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDelta {
    pub kind: GrowthKind,
    pub added_q: Option<String>,
    pub added_m: Option<String>,
    /// Set when the pair already existed and was reused.
    pub duplicate_of: Option<String>,
    pub qm_edges: Vec<(String, String, f64)>,
    pub ms_edges: Vec<(String, String, f64)>,
}

impl GraphDelta {
    pub fn is_empty(&self) -> bool {
        self.added_q.is_none() && self.added_m.is_none() && self.qm_edges.is_empty() && self.ms_edges.is_empty()
    }
}

pub fn source_hash(src: &str) -> String {
    hex::encode(Sha256::digest(src.as_bytes()))
}

pub fn normalize_block_id(id: &str) -> String {
    id.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl QmsGraph {
    fn find_contrastive(&self, correct: &str, incorrect: &str) -> Option<usize> {
        let (hc, hi) = (source_hash(correct), source_hash(incorrect));
        self.m.iter().position(|m| match &m.kind {
            MethodKind::Contrastive {
                correct_source,
                incorrect_source,
                ..
            } => source_hash(correct_source) == hc && source_hash(incorrect_source) == hi,
            _ => false,
        })
    }

    /// Skills to attach to a new method node: normalized block-id matches,
    /// else skills whose text embedding is similar enough to the node's.
    fn link_targets(&self, m: &MNode, embedder: &dyn Embedder, threshold: f64) -> Result<Vec<usize>, QmsError> {
        let ids: BTreeSet<String> = m.block_dag.blocks.iter().map(|b| normalize_block_id(&b.id)).collect();
        let matched: Vec<usize> = self
            .s
            .iter()
            .enumerate()
            .filter(|(_, s)| s.block_ids.iter().any(|b| ids.contains(&normalize_block_id(b))))
            .map(|(k, _)| k)
            .collect();
        if !matched.is_empty() {
            return Ok(matched);
        }
        let mut text: Vec<&str> = m.block_dag.blocks.iter().map(|b| b.description.as_str()).collect();
        if let MethodKind::Contrastive { divergence, .. } = &m.kind {
            text.push(divergence);
        }
        let text = text.join("\n");
        if text.trim().is_empty() {
            return Ok(Vec::new());
        }
        let me = embedder.embed(&text)?;
        let mut out = Vec::new();
        for (k, s) in self.s.iter().enumerate() {
            let se = match &s.embedding {
                Some(e) => e.clone(),
                None => embedder.embed(&format!("{}\n{}", s.title, s.description))?,
            };
            if cosine(&me, &se)? >= threshold {
                out.push(k);
            }
        }
        Ok(out)
    }

    /// Grow the graph from one contrastive rollout pair.
    pub fn grow_graph(
        &mut self,
        outcome_with: f64,
        outcome_without: f64,
        art: GrowthArtifacts<'_>,
        embedder: &dyn Embedder,
        cfg: &GrowthConfig,
    ) -> Result<GraphDelta, QmsError> {
        for o in [outcome_with, outcome_without] {
            if !(0.0..=1.0).contains(&o) {
                return Err(QmsError::InvalidParameter("outcomes must lie in [0, 1]"));
            }
        }
        art.blocks.validate()?;
        let (ok_with, ok_without) = (outcome_with >= SUCCESS, outcome_without >= SUCCESS);
        let mut delta = GraphDelta {
            kind: GrowthKind::BothSucceeded,
            added_q: None,
            added_m: None,
            duplicate_of: None,
            qm_edges: vec![],
            ms_edges: vec![],
        };
        if ok_with && ok_without {
            return Ok(delta);
        }

        let kind = if ok_with != ok_without {
            delta.kind = GrowthKind::Diverged;
            let (correct, incorrect) = if ok_with {
                (art.with_source.clone(), art.without_source.clone())
            } else {
                (art.without_source.clone(), art.with_source.clone())
            };
            MethodKind::Contrastive {
                correct_source: correct,
                incorrect_source: incorrect,
                divergence: art.divergence.clone(),
            }
        } else {
            let mut best: Option<(&CorpusSolution, f64)> = None;
            for c in art.corpus {
                let sim = cosine(&art.q_new.embedding, &c.embedding)?;
                if best.is_none_or(|(_, b)| sim > b) {
                    best = Some((c, sim));
                }
            }
            match best {
                Some((c, _)) => {
                    delta.kind = GrowthKind::PairedWithCorpus;
                    MethodKind::Contrastive {
                        correct_source: c.source.clone(),
                        incorrect_source: art.with_source.clone(),
                        divergence: art.divergence.clone(),
                    }
                }
                None => {
                    delta.kind = GrowthKind::AnalysisPending;
                    MethodKind::AnalysisPending {
                        incorrect_source: art.with_source.clone(),
                    }
                }
            }
        };

        let q_idx = match self.q_idx(&art.q_new.id) {
            Some(i) => i,
            None => {
                delta.added_q = Some(art.q_new.id.clone());
                self.add_q(art.q_new.clone())?
            }
        };

        let existing = match &kind {
            MethodKind::Contrastive {
                correct_source,
                incorrect_source,
                ..
            } => self.find_contrastive(correct_source, incorrect_source),
            _ => None,
        };
        let m_idx = match existing {
            Some(j) => {
                delta.duplicate_of = Some(self.m[j].id.clone());
                j
            }
            None => {
                let node = MNode {
                    id: format!("m{:05}", self.m.len()),
                    kind,
                    block_dag: art.blocks.clone(),
                };
                let targets = self.link_targets(&node, embedder, cfg.link_threshold)?;
                delta.added_m = Some(node.id.clone());
                let j = self.add_m(node)?;
                let w = 1.0 / targets.len().max(1) as f64;
                for &s in &targets {
                    self.set_ms(j, s, w)?;
                    delta.ms_edges.push((self.m[j].id.clone(), self.s[s].id.clone(), w));
                }
                self.normalize_ms_group(j);
                j
            }
        };
        if !self.weights.qm.contains_key(&(q_idx, m_idx)) {
            self.set_qm(q_idx, m_idx, cfg.initial_qm_weight)?;
            delta
                .qm_edges
                .push((self.q[q_idx].id.clone(), self.m[m_idx].id.clone(), cfg.initial_qm_weight));
        }
        Ok(delta)
    }
}
