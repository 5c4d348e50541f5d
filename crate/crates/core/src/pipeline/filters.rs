use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::difficulty::map_difficulty;
use super::record::ProblemRecord;
use super::PipelineError;
use crate::embed::{cosine, Embedder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MissingPublicTests,
    MissingHiddenTests,
    MissingTags,
    MissingDifficulty,
    UnmappableDifficulty,
    MissingIoSpec,
    MissingBounds,
    TagCapped,
    Duplicate,
    BelowFloor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dropped {
    pub id: String,
    pub reason: DropReason,
    #[serde(default)]
    pub detail: String,
}

/// Survivors of one stage plus the records it removed.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub survivors: Vec<ProblemRecord>,
    pub dropped: Vec<Dropped>,
    /// Per-tag floors, filled by the pruning stage only.
    pub floors: BTreeMap<String, u32>,
}

impl StageOutput {
    fn new(survivors: Vec<ProblemRecord>, dropped: Vec<Dropped>) -> Self {
        Self {
            survivors,
            dropped,
            floors: BTreeMap::new(),
        }
    }
}

/// Every reason a record is incomplete, in check order.
pub fn completeness_problems(r: &ProblemRecord) -> Vec<DropReason> {
    let mut out = Vec::new();
    if r.public_tests.is_empty() {
        out.push(DropReason::MissingPublicTests);
    }
    if r.hidden_tests.is_empty() {
        out.push(DropReason::MissingHiddenTests);
    }
    if r.tags.is_empty() {
        out.push(DropReason::MissingTags);
    }
    if r.difficulty.is_none() {
        match &r.native_difficulty {
            None => out.push(DropReason::MissingDifficulty),
            Some(n) => {
                if map_difficulty(r.platform, n).is_err() {
                    out.push(DropReason::UnmappableDifficulty);
                }
            }
        }
    }
    if r.constraints.input_spec.trim().is_empty() {
        out.push(DropReason::MissingIoSpec);
    }
    let bounds_ok = !r.constraints.bounds.is_empty()
        && r.constraints
            .bounds
            .values()
            .all(|b| b.min.is_finite() && b.max.is_finite() && b.min <= b.max);
    if !bounds_ok {
        out.push(DropReason::MissingBounds);
    }
    out
}

/// Stage 1: keep records with public and hidden tests, tags, a difficulty
/// signal and an I/O spec with explicit bounds. Survivors get their
/// normalized difficulty filled in.
pub fn filter_completeness(records: Vec<ProblemRecord>) -> StageOutput {
    let mut survivors = Vec::new();
    let mut dropped = Vec::new();
    for mut r in records {
        let problems = completeness_problems(&r);
        if let Some(&first) = problems.first() {
            dropped.push(Dropped {
                id: r.id.clone(),
                reason: first,
                detail: format!("{problems:?}"),
            });
            continue;
        }
        if r.difficulty.is_none() {
            let native = r.native_difficulty.as_ref().expect("checked above");
            r.difficulty = Some(map_difficulty(r.platform, native).expect("checked above"));
        }
        survivors.push(r);
    }
    StageOutput::new(survivors, dropped)
}

pub fn tag_counts<'a>(records: impl IntoIterator<Item = &'a ProblemRecord>) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for r in records {
        for t in &r.tags {
            *counts.entry(t.clone()).or_insert(0) += 1;
        }
    }
    counts
}

fn tag_seed(seed: u64, tag: &str) -> u64 {
    let d = Sha256::digest(tag.as_bytes());
    seed ^ u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Largest-remainder allocation of `total` slots proportional to `sizes`.
fn allocate(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let mut quota: Vec<usize> = sizes.iter().map(|&s| s * total / n).collect();
    let mut left = total - quota.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    // Remainder of s·total/n, compared exactly as integers.
    order.sort_by_key(|&i| (std::cmp::Reverse(sizes[i] * total % n), i));
    for &i in &order {
        if left == 0 {
            break;
        }
        if quota[i] < sizes[i] {
            quota[i] += 1;
            left -= 1;
        }
    }
    quota
}

/// Stage 2: subsample every tag above `cap` down to `cap`, stratified by
/// difficulty (hundreds of the band's upper end). A record loses only the
/// capped tag; it is dropped once it has lost every tag.
pub fn balance_tags(records: Vec<ProblemRecord>, cap: usize, seed: u64) -> StageOutput {
    let mut records = records;
    let counts = tag_counts(&records);
    for (tag, &count) in &counts {
        if count <= cap {
            continue;
        }
        let mut strata: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.tags.contains(tag) {
                let key = r.difficulty.map_or(0, |d| d.floor_key() / 100);
                strata.entry(key).or_default().push(i);
            }
        }
        let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
        let quota = allocate(&sizes, cap);
        let mut rng = ChaCha8Rng::seed_from_u64(tag_seed(seed, tag));
        for (members, keep) in strata.into_values().zip(quota) {
            let mut members = members;
            members.sort_by(|&a, &b| records[a].id.cmp(&records[b].id));
            members.shuffle(&mut rng);
            for &i in &members[keep..] {
                records[i].tags.remove(tag);
            }
        }
    }
    let mut survivors = Vec::new();
    let mut dropped = Vec::new();
    for r in records {
        if r.tags.is_empty() {
            dropped.push(Dropped {
                id: r.id,
                reason: DropReason::TagCapped,
                detail: String::new(),
            });
        } else {
            survivors.push(r);
        }
    }
    StageOutput::new(survivors, dropped)
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.0[root] != root {
            root = self.0[root];
        }
        let mut cur = x;
        while self.0[cur] != root {
            let next = self.0[cur];
            self.0[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Survivor preference: more submissions, then more tests, then smaller id.
fn better(a: &ProblemRecord, b: &ProblemRecord) -> bool {
    (std::cmp::Reverse(a.submissions.len()), std::cmp::Reverse(a.test_count()), &a.id)
        < (std::cmp::Reverse(b.submissions.len()), std::cmp::Reverse(b.test_count()), &b.id)
}

/// Stage 3: within each tag bucket, link pairs with cosine similarity
/// strictly above `delta`; each connected component keeps one record.
pub fn dedup(records: Vec<ProblemRecord>, delta: f64, embedder: &dyn Embedder) -> Result<StageOutput, PipelineError> {
    let embeddings: Vec<Vec<f64>> = records
        .par_iter()
        .map(|r| embedder.embed(&r.statement))
        .collect::<Result<_, _>>()?;
    let mut buckets: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        for t in &r.tags {
            buckets.entry(t.as_str()).or_default().push(i);
        }
    }
    let edges: Vec<(usize, usize)> = buckets
        .par_iter()
        .map(|(_, members)| {
            let mut e = Vec::new();
            for (x, &a) in members.iter().enumerate() {
                for &b in &members[x + 1..] {
                    if cosine(&embeddings[a], &embeddings[b])? > delta {
                        e.push((a, b));
                    }
                }
            }
            Ok(e)
        })
        .collect::<Result<Vec<_>, PipelineError>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut uf = UnionFind((0..records.len()).collect());
    for (a, b) in edges {
        uf.union(a, b);
    }
    let mut best: BTreeMap<usize, usize> = BTreeMap::new();
    for i in 0..records.len() {
        let root = uf.find(i);
        match best.get(&root) {
            Some(&cur) if !better(&records[i], &records[cur]) => {}
            _ => {
                best.insert(root, i);
            }
        }
    }
    let keep: BTreeSet<usize> = best.values().copied().collect();
    let mut survivors = Vec::new();
    let mut dropped = Vec::new();
    for (i, r) in records.iter().enumerate() {
        if keep.contains(&i) {
            survivors.push(r.clone());
        } else {
            let winner = best[&uf.find(i)];
            dropped.push(Dropped {
                id: r.id.clone(),
                reason: DropReason::Duplicate,
                detail: format!("duplicate of {}", records[winner].id),
            });
        }
    }
    Ok(StageOutput::new(survivors, dropped))
}

/// Nearest-rank percentile of an unsorted sample; `None` when empty.
pub fn nearest_rank_percentile(values: &[u32], pct: f64) -> Option<u32> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((pct / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

/// Stage 4: per-tag floors at the given percentile of the tag's difficulty
/// distribution, replaced by `overrides` where present. A record is dropped
/// only when it sits below the floor of every one of its tags.
pub fn prune_difficulty(records: Vec<ProblemRecord>, percentile: f64, overrides: &BTreeMap<String, u32>) -> StageOutput {
    let mut per_tag: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for r in &records {
        if let Some(d) = r.difficulty {
            for t in &r.tags {
                per_tag.entry(t.as_str()).or_default().push(d.floor_key());
            }
        }
    }
    let mut floors: BTreeMap<String, u32> = per_tag
        .iter()
        .filter_map(|(t, v)| nearest_rank_percentile(v, percentile).map(|f| (t.to_string(), f)))
        .collect();
    for (t, f) in overrides {
        if floors.contains_key(t) {
            floors.insert(t.clone(), *f);
        }
    }
    let mut survivors = Vec::new();
    let mut dropped = Vec::new();
    for r in records {
        let key = r.difficulty.map(|d| d.floor_key());
        let below_all = match key {
            Some(k) => r.tags.iter().all(|t| floors.get(t).is_some_and(|&f| k < f)),
            None => false,
        };
        if below_all {
            dropped.push(Dropped {
                id: r.id.clone(),
                reason: DropReason::BelowFloor,
                detail: format!("difficulty {} below every tag floor", key.unwrap_or(0)),
            });
        } else {
            survivors.push(r);
        }
    }
    StageOutput {
        survivors,
        dropped,
        floors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::pipeline::difficulty::{DifficultyBand, NativeDifficulty};
    use crate::pipeline::record::{Bound, Platform, Submission, TestCase};
    use crate::pipeline::PipelineError;

    pub(crate) fn rec(id: &str, tags: &[&str], diff: u32) -> ProblemRecord {
        ProblemRecord {
            id: id.into(),
            platform: Platform::Codeforces,
            statement: format!("statement for {id}"),
            constraints: crate::pipeline::record::Constraints {
                input_spec: "n".into(),
                output_spec: "x".into(),
                bounds: [("n".to_string(), Bound { min: 1.0, max: 1e5 })].into(),
                ..Default::default()
            },
            public_tests: vec![TestCase {
                input: "1".into(),
                output: "1".into(),
            }],
            hidden_tests: vec![TestCase {
                input: "2".into(),
                output: "2".into(),
            }],
            editorial: None,
            submissions: vec![],
            reference_solution: None,
            tags: tags.iter().map(|t| t.to_string()).collect(),
            native_difficulty: Some(NativeDifficulty::Rating(diff)),
            difficulty: None,
            flags: Default::default(),
        }
    }

    #[test]
    fn completeness_fixture() {
        let mut rs: Vec<ProblemRecord> = (0..10).map(|i| rec(&format!("p{i}"), &["dp"], 1500)).collect();
        rs[1].hidden_tests.clear();
        rs[4].tags.clear();
        rs[7].constraints.bounds.clear();
        let out = filter_completeness(rs);
        assert_eq!(out.survivors.len(), 7);
        assert_eq!(out.dropped[0].reason, DropReason::MissingHiddenTests);
        assert_eq!(out.survivors[0].difficulty, Some(DifficultyBand::exact(1500)));
    }

    #[test]
    fn allocation_is_exact() {
        assert_eq!(allocate(&[10, 10, 10], 10).iter().sum::<usize>(), 10);
        assert_eq!(allocate(&[1, 99], 50), vec![1, 49]);
        assert_eq!(allocate(&[5], 5), vec![5]);
    }

    #[test]
    fn capped_tag_keeps_exactly_cap() {
        let rs: Vec<ProblemRecord> = (0..100)
            .map(|i| {
                let mut r = rec(&format!("p{i:03}"), &["impl"], 800 + 10 * i);
                r.difficulty = Some(DifficultyBand::exact(800 + 10 * i));
                r
            })
            .collect();
        let out = balance_tags(rs.clone(), 60, 7);
        assert_eq!(out.survivors.len(), 60);
        assert_eq!(balance_tags(rs, 60, 7), out);
        let small: Vec<ProblemRecord> = (0..20).map(|i| rec(&format!("c{i}"), &["comb"], 900)).collect();
        assert_eq!(balance_tags(small, 60, 1).survivors.len(), 20);
    }

    #[test]
    fn multi_tag_record_survives_via_other_tag() {
        let mut rs: Vec<ProblemRecord> = (0..10).map(|i| rec(&format!("a{i}"), &["A"], 1000)).collect();
        rs.push(rec("both", &["A", "B"], 1000));
        // Cap 1 on A: at most one A member keeps A, yet `both` stays via B.
        let out = balance_tags(rs, 1, 3);
        let both = out.survivors.iter().find(|r| r.id == "both").expect("retained");
        assert!(both.tags.contains("B"));
        assert!(tag_counts(&out.survivors).values().all(|&c| c <= 1));
    }

    #[test]
    fn dedup_keep_rule_and_boundary() {
        let e = HashEmbedder::new(256);
        let mut a = rec("a", &["dp"], 1500);
        let mut b = rec("b", &["dp"], 1500);
        a.statement = "count paths in a grid with obstacles modulo prime".into();
        b.statement = "Count paths in a grid, with obstacles, modulo prime.".into();
        a.submissions = vec![Submission { verdict: "AC".into(), exec_time_ms: None }; 3];
        b.submissions = vec![Submission { verdict: "AC".into(), exec_time_ms: None }; 12];
        let out = dedup(vec![a.clone(), b.clone()], 0.93, &e).unwrap();
        assert_eq!(out.survivors.len(), 1);
        assert_eq!(out.survivors[0].id, "b");
        // Similarity 1.0 is not above a threshold of 1.0.
        assert_eq!(dedup(vec![a, b], 1.0, &e).unwrap().survivors.len(), 2);
    }

    #[test]
    fn dedup_collapses_components() {
        let e = HashEmbedder::new(256);
        let rs: Vec<ProblemRecord> = (0..3)
            .map(|i| {
                let mut r = rec(&format!("r{i}"), &["graphs"], 1500);
                r.statement = "shortest path on a weighted graph with negative edges".into();
                r
            })
            .collect();
        let out = dedup(rs, 0.93, &e).unwrap();
        assert_eq!(out.survivors.len(), 1);
        assert_eq!(out.dropped.len(), 2);
    }

    #[test]
    fn floors_apply_per_tag() {
        let mut r = rec("x", &["dp", "greedy"], 1500);
        r.difficulty = Some(DifficultyBand::exact(1500));
        let overrides: BTreeMap<String, u32> = [("dp".to_string(), 1600), ("greedy".to_string(), 1400)].into();
        assert_eq!(prune_difficulty(vec![r.clone()], 5.0, &overrides).survivors.len(), 1);
        let overrides: BTreeMap<String, u32> = [("dp".to_string(), 1600), ("greedy".to_string(), 1600)].into();
        assert_eq!(prune_difficulty(vec![r], 5.0, &overrides).survivors.len(), 0);
    }

    /// Returns stored unit vectors keyed by statement.
    struct TableEmbedder(BTreeMap<String, Vec<f64>>);

    impl Embedder for TableEmbedder {
        fn dim(&self) -> usize {
            2
        }
        fn embed(&self, text: &str) -> Result<Vec<f64>, crate::embed::EmbedError> {
            self.0
                .get(text)
                .cloned()
                .ok_or_else(|| crate::embed::EmbedError::Backend(format!("no vector for {text}")))
        }
    }

    #[test]
    fn similarity_exactly_at_threshold_is_kept() {
        let (a, b) = (rec("a", &["dp"], 1500), rec("b", &["dp"], 1500));
        // cos = 0.6 exactly for these unit vectors.
        let table: BTreeMap<String, Vec<f64>> = [
            (a.statement.clone(), vec![1.0, 0.0]),
            (b.statement.clone(), vec![0.6, 0.8]),
        ]
        .into();
        let e = TableEmbedder(table);
        assert_eq!(dedup(vec![a.clone(), b.clone()], 0.6, &e).unwrap().survivors.len(), 2);
        assert_eq!(dedup(vec![a.clone(), b.clone()], 0.59, &e).unwrap().survivors.len(), 1);
        let lonely = rec("c", &["dp"], 1500);
        assert!(matches!(dedup(vec![a, lonely], 0.6, &e), Err(PipelineError::Embed(_))));
    }

    #[test]
    fn large_tag_capped_to_reference_cap() {
        let rs: Vec<ProblemRecord> = (0..3819)
            .map(|i| {
                let mut r = rec(&format!("p{i:04}"), &["implementation"], 800);
                r.difficulty = Some(DifficultyBand::exact(800 + 100 * (i % 28)));
                r
            })
            .collect();
        let out = balance_tags(rs, 2300, 0);
        assert_eq!(out.survivors.len(), 2300);
        assert_eq!(out.dropped.len(), 1519);
    }

    proptest::proptest! {
        #[test]
        fn balancing_respects_cap_and_telescopes(
            tag_sets in proptest::collection::vec(proptest::collection::btree_set(0u8..5, 1..3), 1..80),
            cap in 1usize..20,
            seed in 0u64..1000,
        ) {
            let rs: Vec<ProblemRecord> = tag_sets
                .iter()
                .enumerate()
                .map(|(i, ts)| {
                    let tags: Vec<String> = ts.iter().map(|t| format!("t{t}")).collect();
                    let refs: Vec<&str> = tags.iter().map(String::as_str).collect();
                    let mut r = rec(&format!("r{i:03}"), &refs, 800);
                    r.difficulty = Some(DifficultyBand::exact(800 + 100 * (i as u32 % 7)));
                    r
                })
                .collect();
            let n = rs.len();
            let out = balance_tags(rs, cap, seed);
            proptest::prop_assert_eq!(out.survivors.len() + out.dropped.len(), n);
            proptest::prop_assert!(tag_counts(&out.survivors).values().all(|&c| c <= cap));
        }
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<u32> = (1..=100).collect();
        assert_eq!(nearest_rank_percentile(&v, 5.0), Some(5));
        assert_eq!(nearest_rank_percentile(&[7], 5.0), Some(7));
        assert_eq!(nearest_rank_percentile(&[], 5.0), None);
    }
}
