use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::QmsError;

/// A solved (or query) problem in the top layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QNode {
    pub id: String,
    pub statement: String,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionBlock {
    pub id: String,
    #[serde(default)]
    pub description: String,
}

/// Function-block decomposition of a solution. Edges are (from, to) block
/// indices and must form a DAG.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDag {
    pub blocks: Vec<FunctionBlock>,
    #[serde(default)]
    pub edges: Vec<(usize, usize)>,
}

impl BlockDag {
    pub fn new(blocks: Vec<FunctionBlock>, edges: Vec<(usize, usize)>) -> Result<Self, QmsError> {
        let dag = Self { blocks, edges };
        dag.validate()?;
        Ok(dag)
    }

    /// Kahn's algorithm; fails on dangling indices or any cycle.
    pub fn validate(&self) -> Result<(), QmsError> {
        let n = self.blocks.len();
        let mut indegree = vec![0usize; n];
        let mut out = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            if a >= n || b >= n {
                return Err(QmsError::BadBlockEdge(a, b));
            }
            out[a].push(b);
            indegree[b] += 1;
        }
        let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
        let mut seen = 0;
        while let Some(v) = ready.pop() {
            seen += 1;
            for &w in &out[v] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    ready.push(w);
                }
            }
        }
        if seen != n {
            return Err(QmsError::CyclicBlockDag);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodKind {
    /// Correct and incorrect solutions sharing one approach.
    Contrastive {
        correct_source: String,
        incorrect_source: String,
        #[serde(default)]
        divergence: String,
    },
    /// A single solution decomposed into blocks.
    Analysis {
        #[serde(default)]
        source: String,
    },
    /// A failure recorded before any correct counterpart was available.
    AnalysisPending { incorrect_source: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MNode {
    pub id: String,
    #[serde(flatten)]
    pub kind: MethodKind,
    #[serde(default)]
    pub block_dag: BlockDag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SNode {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub template: String,
    #[serde(default)]
    pub block_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

/// Learned edge weights keyed by node indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeWeights {
    pub qm: BTreeMap<(usize, usize), f64>,
    pub ms: BTreeMap<(usize, usize), f64>,
}

impl EdgeWeights {
    pub fn qm_out(&self, q: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.qm.range((q, 0)..(q + 1, 0)).map(|(&(_, m), &w)| (m, w))
    }

    pub fn ms_out(&self, m: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.ms.range((m, 0)..(m + 1, 0)).map(|(&(_, s), &w)| (s, w))
    }
}

/// The three-layer query/method/skill graph.
#[derive(Debug, Clone, PartialEq)]
pub struct QmsGraph {
    pub(crate) dim: usize,
    pub(crate) q: Vec<QNode>,
    pub(crate) m: Vec<MNode>,
    pub(crate) s: Vec<SNode>,
    pub(crate) weights: EdgeWeights,
    /// Bumped on every mutation; samples remember the version they saw.
    pub(crate) version: u64,
    q_index: HashMap<String, usize>,
    m_index: HashMap<String, usize>,
    s_index: HashMap<String, usize>,
}

impl QmsGraph {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            q: Vec::new(),
            m: Vec::new(),
            s: Vec::new(),
            weights: EdgeWeights::default(),
            version: 0,
            q_index: HashMap::new(),
            m_index: HashMap::new(),
            s_index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn q_nodes(&self) -> &[QNode] {
        &self.q
    }

    pub fn m_nodes(&self) -> &[MNode] {
        &self.m
    }

    pub fn s_nodes(&self) -> &[SNode] {
        &self.s
    }

    pub fn weights(&self) -> &EdgeWeights {
        &self.weights
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn q_idx(&self, id: &str) -> Option<usize> {
        self.q_index.get(id).copied()
    }

    pub fn m_idx(&self, id: &str) -> Option<usize> {
        self.m_index.get(id).copied()
    }

    pub fn s_idx(&self, id: &str) -> Option<usize> {
        self.s_index.get(id).copied()
    }

    pub fn add_q(&mut self, node: QNode) -> Result<usize, QmsError> {
        if node.embedding.len() != self.dim {
            return Err(QmsError::Dimension {
                expected: self.dim,
                got: node.embedding.len(),
            });
        }
        if node.embedding.iter().all(|x| *x == 0.0) {
            return Err(QmsError::ZeroEmbedding(node.id));
        }
        if self.q_index.contains_key(&node.id) {
            return Err(QmsError::DuplicateNode(node.id));
        }
        let idx = self.q.len();
        self.q_index.insert(node.id.clone(), idx);
        self.q.push(node);
        self.version += 1;
        Ok(idx)
    }

    pub fn add_m(&mut self, node: MNode) -> Result<usize, QmsError> {
        node.block_dag.validate()?;
        if let MethodKind::Contrastive {
            correct_source,
            incorrect_source,
            ..
        } = &node.kind
        {
            if correct_source.is_empty() || incorrect_source.is_empty() {
                return Err(QmsError::IncompleteContrastive(node.id));
            }
        }
        if self.m_index.contains_key(&node.id) {
            return Err(QmsError::DuplicateNode(node.id));
        }
        let idx = self.m.len();
        self.m_index.insert(node.id.clone(), idx);
        self.m.push(node);
        self.version += 1;
        Ok(idx)
    }

    pub fn add_s(&mut self, node: SNode) -> Result<usize, QmsError> {
        if node.template.trim().is_empty() {
            return Err(QmsError::EmptyTemplate(node.id));
        }
        if self.s_index.contains_key(&node.id) {
            return Err(QmsError::DuplicateNode(node.id));
        }
        let idx = self.s.len();
        self.s_index.insert(node.id.clone(), idx);
        self.s.push(node);
        self.version += 1;
        Ok(idx)
    }

    pub fn set_qm(&mut self, q: usize, m: usize, w: f64) -> Result<(), QmsError> {
        if q >= self.q.len() || m >= self.m.len() {
            return Err(QmsError::DanglingEdge);
        }
        if !(w >= 0.0 && w.is_finite()) {
            return Err(QmsError::NegativeWeight(w));
        }
        self.weights.qm.insert((q, m), w);
        self.version += 1;
        Ok(())
    }

    /// Sets a raw MS weight. Call [`QmsGraph::normalize_ms_group`] afterwards.
    pub fn set_ms(&mut self, m: usize, s: usize, w: f64) -> Result<(), QmsError> {
        if m >= self.m.len() || s >= self.s.len() {
            return Err(QmsError::DanglingEdge);
        }
        if !(w >= 0.0 && w.is_finite()) {
            return Err(QmsError::NegativeWeight(w));
        }
        self.weights.ms.insert((m, s), w);
        self.version += 1;
        Ok(())
    }

    /// Rescale the outgoing MS edges of `m` to sum to one. A group whose
    /// weights are all zero becomes uniform.
    pub fn normalize_ms_group(&mut self, m: usize) {
        let keys: Vec<(usize, usize)> = self.weights.ms.range((m, 0)..(m + 1, 0)).map(|(k, _)| *k).collect();
        if keys.is_empty() {
            return;
        }
        let total: f64 = keys.iter().map(|k| self.weights.ms[k]).sum();
        for k in &keys {
            let w = self.weights.ms.get_mut(k).expect("key exists");
            *w = if total > 0.0 { *w / total } else { 1.0 / keys.len() as f64 };
        }
        self.version += 1;
    }

    /// Largest deviation from 1 over all MS groups.
    pub fn max_ms_group_error(&self) -> f64 {
        let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
        for (&(m, _), &w) in &self.weights.ms {
            *sums.entry(m).or_default() += w;
        }
        sums.values().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(id: &str) -> FunctionBlock {
        FunctionBlock {
            id: id.into(),
            description: String::new(),
        }
    }

    #[test]
    fn dag_validation() {
        assert!(BlockDag::new(vec![block("a"), block("b"), block("c")], vec![(0, 1), (1, 2), (0, 2)]).is_ok());
        assert_eq!(
            BlockDag::new(vec![block("a"), block("b")], vec![(0, 1), (1, 0)]),
            Err(QmsError::CyclicBlockDag)
        );
        assert_eq!(BlockDag::new(vec![block("a")], vec![(0, 0)]), Err(QmsError::CyclicBlockDag));
        assert_eq!(BlockDag::new(vec![block("a")], vec![(0, 3)]), Err(QmsError::BadBlockEdge(0, 3)));
    }

    #[test]
    fn node_invariants() {
        let mut g = QmsGraph::new(2);
        let q = |id: &str, e: Vec<f64>| QNode {
            id: id.into(),
            statement: String::new(),
            tags: Default::default(),
            embedding: e,
        };
        assert!(matches!(g.add_q(q("a", vec![1.0])), Err(QmsError::Dimension { .. })));
        assert!(matches!(g.add_q(q("a", vec![0.0, 0.0])), Err(QmsError::ZeroEmbedding(_))));
        g.add_q(q("a", vec![1.0, 0.0])).unwrap();
        assert!(matches!(g.add_q(q("a", vec![1.0, 0.0])), Err(QmsError::DuplicateNode(_))));
        let bad = MNode {
            id: "m".into(),
            kind: MethodKind::Contrastive {
                correct_source: "x".into(),
                incorrect_source: String::new(),
                divergence: String::new(),
            },
            block_dag: BlockDag::default(),
        };
        assert!(matches!(g.add_m(bad), Err(QmsError::IncompleteContrastive(_))));
        let s = SNode {
            id: "s".into(),
            title: "t".into(),
            description: String::new(),
            template: "  ".into(),
            block_ids: vec![],
            embedding: None,
        };
        assert!(matches!(g.add_s(s), Err(QmsError::EmptyTemplate(_))));
    }
}
