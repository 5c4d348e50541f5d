//! Independent dense model of a small skill graph, for gradient checks.

use cploop_core::embed::cosine;
use cploop_core::qms::{
    sample_skills, BlockDag, MNode, MethodKind, QNode, QmsGraph, SNode, SkillSample, DEFAULT_TEMPERATURE,
};

pub const QE: [[f64; 2]; 2] = [[1.0, 0.3], [0.2, 1.0]];
pub const QUERY: [f64; 2] = [0.9, 0.5];

/// Dense reference model of the 2-Q/2-M/3-S graph.
pub struct Toy {
    pub qm: [[f64; 2]; 2],
    pub ms: [[f64; 3]; 2],
}

impl Toy {
    pub fn log_p(&self, drawn: &[usize], t: f64) -> f64 {
        let sims: Vec<f64> = QE.iter().map(|e| cosine(&QUERY, e).unwrap()).collect();
        let rho: Vec<f64> = (0..3)
            .map(|s| {
                let mut r = 0.0;
                for (i, sim) in sims.iter().enumerate() {
                    for j in 0..2 {
                        r += sim * self.qm[i][j] * self.ms[j][s];
                    }
                }
                r
            })
            .collect();
        let mut remaining: Vec<usize> = (0..3).collect();
        let mut lp = 0.0;
        for &d in drawn {
            let z: f64 = remaining.iter().map(|&s| (rho[s] / t).exp()).sum();
            lp += rho[d] / t - z.ln();
            remaining.retain(|&s| s != d);
        }
        lp
    }
}

pub fn build(toy: &Toy) -> QmsGraph {
    let mut g = QmsGraph::new(2);
    for (i, e) in QE.iter().enumerate() {
        g.add_q(QNode {
            id: format!("q{i}"),
            statement: String::new(),
            tags: Default::default(),
            embedding: e.to_vec(),
        })
        .unwrap();
    }
    for j in 0..2 {
        g.add_m(MNode {
            id: format!("m{j}"),
            kind: MethodKind::Analysis { source: String::new() },
            block_dag: BlockDag::default(),
        })
        .unwrap();
    }
    for s in 0..3 {
        g.add_s(SNode {
            id: format!("s{s}"),
            title: format!("s{s}"),
            description: String::new(),
            template: "t".into(),
            block_ids: vec![],
            embedding: None,
        })
        .unwrap();
    }
    for i in 0..2 {
        for j in 0..2 {
            g.set_qm(i, j, toy.qm[i][j]).unwrap();
        }
    }
    for j in 0..2 {
        for s in 0..3 {
            g.set_ms(j, s, toy.ms[j][s]).unwrap();
        }
    }
    g
}

pub fn sample(g: &QmsGraph, seed: u64, n: usize) -> SkillSample {
    let scores = g.skill_scores(&QUERY, 4).unwrap();
    sample_skills(&scores, DEFAULT_TEMPERATURE, n, 20, seed).unwrap()
}


pub fn default_toy() -> Toy {
    Toy {
        qm: [[0.7, 0.2], [0.4, 0.9]],
        ms: [[0.5, 0.3, 0.2], [0.1, 0.6, 0.3]],
    }
}

/// Largest |analytic - central difference| over several seeded samples.
pub fn max_gradient_error(h: f64) -> f64 {
    let toy = default_toy();
    let g = build(&toy);
    let mut worst: f64 = 0.0;
    let fd = |up: &Toy, dn: &Toy, drawn: &[usize]| {
        (up.log_p(drawn, DEFAULT_TEMPERATURE) - dn.log_p(drawn, DEFAULT_TEMPERATURE)) / (2.0 * h)
    };
    for seed in 0..6 {
        for n in 1..=3 {
            let smp = sample(&g, seed, n);
            let grad = g.log_prob_gradient(&smp).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let (mut up, mut dn) = (default_toy(), default_toy());
                    up.qm[i][j] += h;
                    dn.qm[i][j] -= h;
                    worst = worst.max((fd(&up, &dn, &smp.drawn) - grad.qm[&(i, j)]).abs());
                }
            }
            for j in 0..2 {
                for s in 0..3 {
                    let (mut up, mut dn) = (default_toy(), default_toy());
                    up.ms[j][s] += h;
                    dn.ms[j][s] -= h;
                    worst = worst.max((fd(&up, &dn, &smp.drawn) - grad.ms[&(j, s)]).abs());
                }
            }
        }
    }
    worst
}

/// Worst MS group-sum error seen over `steps` seeded updates, and whether
/// every weight stayed positive.
pub fn normalization_drift(steps: u64) -> (f64, bool) {
    let mut g = build(&default_toy());
    for k in 0..2 {
        g.normalize_ms_group(k);
    }
    let mut worst: f64 = 0.0;
    let mut positive = true;
    for step in 0..steps {
        let smp = sample(&g, step, 2);
        let dr = ((step as f64) * 0.37).sin();
        g.reinforce_update(&smp, dr, 0.1).unwrap();
        worst = worst.max(g.max_ms_group_error());
        positive &= g.weights().qm.values().chain(g.weights().ms.values()).all(|w| *w > 0.0);
    }
    (worst, positive)
}
