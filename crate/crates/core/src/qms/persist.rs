//! `graph_dir/nodes.json` holds the nodes, `graph_dir/weights.json` the
//! edge weights and version. Both are written via temp file and rename.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::graph::{MNode, MethodKind, QNode, QmsGraph, SNode};
use super::QmsError;

const NODES_FORMAT: &str = "cploop.qms.nodes";
const WEIGHTS_FORMAT: &str = "cploop.qms.weights";

#[derive(Serialize, Deserialize)]
struct NodeFile {
    format: String,
    dim: usize,
    q: Vec<QNode>,
    m: Vec<MNode>,
    s: Vec<SNode>,
}

#[derive(Serialize, Deserialize)]
struct Edge {
    from: String,
    to: String,
    w: f64,
}

#[derive(Serialize, Deserialize)]
struct WeightFile {
    format: String,
    version: u64,
    qm: Vec<Edge>,
    ms: Vec<Edge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub q_nodes: usize,
    pub m_nodes: usize,
    pub contrastive: usize,
    pub pending: usize,
    pub s_nodes: usize,
    pub qm_edges: usize,
    pub ms_edges: usize,
    pub version: u64,
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), QmsError> {
    let mut tmp = tempfile::Builder::new().prefix(&format!(".{name}.")).tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name)).map_err(|e| e.error)?;
    Ok(())
}

impl QmsGraph {
    pub fn save(&self, dir: &Path) -> Result<(), QmsError> {
        fs::create_dir_all(dir)?;
        let nodes = NodeFile {
            format: NODES_FORMAT.into(),
            dim: self.dim,
            q: self.q.clone(),
            m: self.m.clone(),
            s: self.s.clone(),
        };
        let edges = |map: &std::collections::BTreeMap<(usize, usize), f64>, from: &dyn Fn(usize) -> String, to: &dyn Fn(usize) -> String| {
            map.iter()
                .map(|(&(a, b), &w)| Edge { from: from(a), to: to(b), w })
                .collect::<Vec<_>>()
        };
        let weights = WeightFile {
            format: WEIGHTS_FORMAT.into(),
            version: self.version,
            qm: edges(&self.weights.qm, &|i| self.q[i].id.clone(), &|j| self.m[j].id.clone()),
            ms: edges(&self.weights.ms, &|j| self.m[j].id.clone(), &|k| self.s[k].id.clone()),
        };
        let enc = |e: serde_json::Error| QmsError::Corrupt(e.to_string());
        write_atomic(dir, "nodes.json", &serde_json::to_vec_pretty(&nodes).map_err(enc)?)?;
        write_atomic(dir, "weights.json", &serde_json::to_vec_pretty(&weights).map_err(enc)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, QmsError> {
        let corrupt = |e: serde_json::Error| QmsError::Corrupt(e.to_string());
        let nodes: NodeFile = serde_json::from_slice(&fs::read(dir.join("nodes.json"))?).map_err(corrupt)?;
        let weights: WeightFile = serde_json::from_slice(&fs::read(dir.join("weights.json"))?).map_err(corrupt)?;
        if nodes.format != NODES_FORMAT || weights.format != WEIGHTS_FORMAT {
            return Err(QmsError::Corrupt("unexpected format tag".into()));
        }
        let mut g = QmsGraph::new(nodes.dim);
        for n in nodes.q {
            g.add_q(n)?;
        }
        for n in nodes.m {
            g.add_m(n)?;
        }
        for n in nodes.s {
            g.add_s(n)?;
        }
        let missing = |id: &str| QmsError::Corrupt(format!("edge references unknown node `{id}`"));
        for e in weights.qm {
            let a = g.q_idx(&e.from).ok_or_else(|| missing(&e.from))?;
            let b = g.m_idx(&e.to).ok_or_else(|| missing(&e.to))?;
            g.set_qm(a, b, e.w)?;
        }
        for e in weights.ms {
            let a = g.m_idx(&e.from).ok_or_else(|| missing(&e.from))?;
            let b = g.s_idx(&e.to).ok_or_else(|| missing(&e.to))?;
            g.set_ms(a, b, e.w)?;
        }
        g.version = weights.version;
        Ok(g)
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            q_nodes: self.q.len(),
            m_nodes: self.m.len(),
            contrastive: self.m.iter().filter(|m| matches!(m.kind, MethodKind::Contrastive { .. })).count(),
            pending: self.m.iter().filter(|m| matches!(m.kind, MethodKind::AnalysisPending { .. })).count(),
            s_nodes: self.s.len(),
            qm_edges: self.weights.qm.len(),
            ms_edges: self.weights.ms.len(),
            version: self.version,
        }
    }

    /// Graphviz rendering; edge labels carry weights.
    pub fn to_dot(&self) -> String {
        let esc = |s: &str| s.replace('\\', "\\\\").replace('"', "\\\"");
        let mut out = String::from("digraph qms {\n  rankdir=LR;\n");
        for n in &self.q {
            let _ = writeln!(out, "  \"q:{}\" [shape=box];", esc(&n.id));
        }
        for n in &self.m {
            let shape = match n.kind {
                MethodKind::Contrastive { .. } => "diamond",
                MethodKind::Analysis { .. } => "ellipse",
                MethodKind::AnalysisPending { .. } => "octagon",
            };
            let _ = writeln!(out, "  \"m:{}\" [shape={shape}];", esc(&n.id));
        }
        for n in &self.s {
            let _ = writeln!(out, "  \"s:{}\" [shape=component,label=\"{}\"];", esc(&n.id), esc(&n.title));
        }
        for (&(i, j), w) in &self.weights.qm {
            let _ = writeln!(out, "  \"q:{}\" -> \"m:{}\" [label=\"{w:.3}\"];", esc(&self.q[i].id), esc(&self.m[j].id));
        }
        for (&(j, k), w) in &self.weights.ms {
            let _ = writeln!(out, "  \"m:{}\" -> \"s:{}\" [label=\"{w:.3}\"];", esc(&self.m[j].id), esc(&self.s[k].id));
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qms::graph::BlockDag;

    #[test]
    fn save_load_round_trip() {
        let mut g = QmsGraph::new(2);
        g.add_q(QNode {
            id: "q".into(),
            statement: "s".into(),
            tags: ["dp".to_string()].into(),
            embedding: vec![0.6, 0.8],
        })
        .unwrap();
        g.add_m(MNode {
            id: "m".into(),
            kind: MethodKind::Contrastive {
                correct_source: "a".into(),
                incorrect_source: "b".into(),
                divergence: "c".into(),
            },
            block_dag: BlockDag::default(),
        })
        .unwrap();
        g.add_s(SNode {
            id: "s".into(),
            title: "T \"q\"".into(),
            description: String::new(),
            template: "x".into(),
            block_ids: vec![],
            embedding: None,
        })
        .unwrap();
        g.set_qm(0, 0, 1.0 / 3.0).unwrap();
        g.set_ms(0, 0, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        g.save(dir.path()).unwrap();
        assert_eq!(QmsGraph::load(dir.path()).unwrap(), g);
        let dot = g.to_dot();
        assert!(dot.contains("\"q:q\" -> \"m:m\" [label=\"0.333\"]"));
        assert!(dot.contains("T \\\"q\\\""));
        assert_eq!(g.stats().contrastive, 1);
    }
}
