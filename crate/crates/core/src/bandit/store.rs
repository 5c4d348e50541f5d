use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::feature::BanditContext;
use super::item::{MemoryItem, Namespace, Timestamp};

/// Bandit hyper-parameters shared by every namespace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditParams {
    pub learning_rate: f64,
    /// Fixed prior added per tag shared between an item and the problem.
    pub tag_bonus: f64,
    pub deprecation_min_uses: u64,
    /// Items strictly below this running average are deprecated.
    pub deprecation_threshold: f64,
}

impl Default for BanditParams {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            tag_bonus: 0.05,
            deprecation_min_uses: 20,
            deprecation_threshold: -0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BanditError {
    #[error("no item `{id}` in namespace {namespace}")]
    NotFound { namespace: Namespace, id: String },
    #[error("item `{id}` already exists in namespace {namespace}")]
    Duplicate { namespace: Namespace, id: String },
    #[error("item `{id}` belongs to namespace {found}, not {expected}")]
    NamespaceMismatch {
        id: String,
        expected: Namespace,
        found: Namespace,
    },
    #[error("reward {0} outside [-1, 1]")]
    InvalidReward(f64),
    #[error("k must be at least 1")]
    InvalidK,
    #[error("epsilon {0} outside [0, 1]")]
    InvalidEpsilon(f64),
}

/// `b_i + Σ_{f ∈ Φ(x)} W_{f,i} + bonus · |tags_i ∩ tags_x|`.
///
/// Keys absent from the item's weight map contribute nothing.
pub fn score_item(item: &MemoryItem, ctx: &BanditContext, tag_bonus: f64) -> f64 {
    let linear: f64 = ctx
        .active_keys()
        .iter()
        .filter_map(|k| item.weights.get(k))
        .sum();
    let overlap = item.tags.intersection(ctx.problem_tags()).count();
    item.bias + linear + tag_bonus * overlap as f64
}

/// In-memory index of one namespace.
#[derive(Debug, Clone, PartialEq)]
pub struct NamespaceStore {
    namespace: Namespace,
    params: BanditParams,
    items: BTreeMap<String, MemoryItem>,
}

impl NamespaceStore {
    pub fn new(namespace: Namespace) -> Self {
        Self::with_params(namespace, BanditParams::default())
    }

    pub fn with_params(namespace: Namespace, params: BanditParams) -> Self {
        Self {
            namespace,
            params,
            items: BTreeMap::new(),
        }
    }

    pub fn namespace(&self) -> Namespace {
        self.namespace
    }

    pub fn params(&self) -> &BanditParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&MemoryItem> {
        self.items.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.items.contains_key(id)
    }

    /// Items in id order.
    pub fn items(&self) -> impl Iterator<Item = &MemoryItem> {
        self.items.values()
    }

    pub fn insert(&mut self, item: MemoryItem) -> Result<(), BanditError> {
        self.check_namespace(&item)?;
        if self.items.contains_key(&item.id) {
            return Err(BanditError::Duplicate {
                namespace: self.namespace,
                id: item.id,
            });
        }
        self.items.insert(item.id.clone(), item);
        Ok(())
    }

    /// Insert or replace.
    pub fn upsert(&mut self, item: MemoryItem) -> Result<(), BanditError> {
        self.check_namespace(&item)?;
        self.items.insert(item.id.clone(), item);
        Ok(())
    }

    fn check_namespace(&self, item: &MemoryItem) -> Result<(), BanditError> {
        if item.namespace != self.namespace {
            return Err(BanditError::NamespaceMismatch {
                id: item.id.clone(),
                expected: self.namespace,
                found: item.namespace,
            });
        }
        Ok(())
    }

    pub fn score(&self, item: &MemoryItem, ctx: &BanditContext) -> f64 {
        score_item(item, ctx, self.params.tag_bonus)
    }

    /// Picks up to `k` distinct live items. Each slot takes the best
    /// remaining item with probability `1 - epsilon`, otherwise a uniformly
    /// random remaining one. Greedy order is score descending, then id.
    pub fn rank_advice(
        &self,
        ctx: &BanditContext,
        k: usize,
        epsilon: f64,
        rng_seed: u64,
    ) -> Result<Vec<String>, BanditError> {
        if k == 0 {
            return Err(BanditError::InvalidK);
        }
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(BanditError::InvalidEpsilon(epsilon));
        }
        let mut ranked: Vec<(f64, &str)> = self
            .items
            .values()
            .filter(|it| !it.deprecated)
            .map(|it| (self.score(it, ctx), it.id.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));

        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut picked = Vec::with_capacity(k.min(ranked.len()));
        while picked.len() < k && !ranked.is_empty() {
            let explore = rng.gen::<f64>() < epsilon;
            let idx = if explore { rng.gen_range(0..ranked.len()) } else { 0 };
            picked.push(ranked.remove(idx).1.to_string());
        }
        Ok(picked)
    }

    /// Select advice and stamp `last_used_at` on the returned items.
    pub fn select_advice(
        &mut self,
        ctx: &BanditContext,
        k: usize,
        epsilon: f64,
        rng_seed: u64,
        now: Timestamp,
    ) -> Result<Vec<MemoryItem>, BanditError> {
        let ids = self.rank_advice(ctx, k, epsilon, rng_seed)?;
        self.touch(&ids, now)?;
        Ok(ids.iter().map(|id| self.items[id].clone()).collect())
    }

    pub fn touch(&mut self, ids: &[String], now: Timestamp) -> Result<(), BanditError> {
        for id in ids {
            self.get_mut(id)?.last_used_at = now;
        }
        Ok(())
    }

    fn get_mut(&mut self, id: &str) -> Result<&mut MemoryItem, BanditError> {
        let namespace = self.namespace;
        self.items.get_mut(id).ok_or_else(|| BanditError::NotFound {
            namespace,
            id: id.to_string(),
        })
    }

    /// Residual update: with `δ = α (r - score)` computed before the update,
    /// the bias and every active key's weight move by `δ`.
    pub fn apply_reward(
        &mut self,
        id: &str,
        reward: f64,
        ctx: &BanditContext,
        now: Timestamp,
    ) -> Result<MemoryItem, BanditError> {
        if !(-1.0..=1.0).contains(&reward) {
            return Err(BanditError::InvalidReward(reward));
        }
        let params = self.params;
        let item = self.get_mut(id)?;
        let score = score_item(item, ctx, params.tag_bonus);
        let step = params.learning_rate * (reward - score);
        if step != 0.0 {
            item.bias += step;
            for key in ctx.active_keys() {
                *item.weights.entry(key.clone()).or_insert(0.0) += step;
            }
        }
        let n = item.use_count as f64;
        item.avg_reward = (item.avg_reward * n + reward) / (n + 1.0);
        item.use_count += 1;
        item.last_used_at = now;
        Ok(item.clone())
    }

    /// Deprecate every live item used at least `deprecation_min_uses` times
    /// whose running average is strictly below the threshold.
    pub fn deprecation_sweep(&mut self) -> usize {
        let params = self.params;
        let mut fresh = 0;
        for item in self.items.values_mut() {
            if !item.deprecated
                && item.use_count >= params.deprecation_min_uses
                && item.avg_reward < params.deprecation_threshold
            {
                item.deprecated = true;
                fresh += 1;
            }
        }
        fresh
    }

    pub(crate) fn from_parts(
        namespace: Namespace,
        params: BanditParams,
        items: Vec<MemoryItem>,
    ) -> Result<Self, BanditError> {
        let mut store = Self::with_params(namespace, params);
        for item in items {
            store.insert(item)?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::feature::FeatureKey;
    use proptest::prelude::*;

    fn ctx(keys: &[&str], tags: &[&str]) -> BanditContext {
        BanditContext::new(
            keys.iter().map(|k| k.parse::<FeatureKey>().unwrap()),
            tags.iter().map(|t| t.to_string()),
        )
        .unwrap()
    }

    fn item(id: &str, bias: f64) -> MemoryItem {
        let mut it = MemoryItem::new(id, Namespace::Solve, id, 0);
        it.bias = bias;
        it
    }

    #[test]
    fn score_worked_example() {
        let mut it = item("a", 0.1).with_tags(["dp"]);
        it.weights.insert("FSM:SOLVE_DRAFT".parse().unwrap(), 0.2);
        it.weights.insert("TAG:dp".parse().unwrap(), -0.05);
        let s = score_item(&it, &ctx(&["FSM:SOLVE_DRAFT", "TAG:dp"], &["dp"]), 0.05);
        assert!((s - 0.30).abs() < 1e-12, "{s}");
    }

    #[test]
    fn score_zero_item() {
        assert_eq!(score_item(&item("z", 0.0), &ctx(&["TAG:x"], &[]), 0.05), 0.0);
    }

    #[test]
    fn score_disjoint_keys_two_tag_overlap() {
        let mut it = item("a", 0.5).with_tags(["dp", "greedy", "math"]);
        it.weights.insert("TAG:trees".parse().unwrap(), 3.0);
        let s = score_item(&it, &ctx(&["FSM:PLAN"], &["dp", "greedy"]), 0.05);
        assert!((s - 0.60).abs() < 1e-12, "{s}");
    }

    fn store_with(scores: &[(&str, f64)]) -> NamespaceStore {
        let mut s = NamespaceStore::new(Namespace::Solve);
        for (id, b) in scores {
            s.insert(item(id, *b)).unwrap();
        }
        s
    }

    #[test]
    fn greedy_selection_orders_by_score() {
        let mut s = store_with(&[("A", 0.9), ("B", 0.3), ("C", -0.1)]);
        let got = s.select_advice(&ctx(&["FSM:PLAN"], &[]), 2, 0.0, 7, 5).unwrap();
        let ids: Vec<_> = got.iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["A", "B"]);
        assert_eq!(s.get("A").unwrap().last_used_at, 5);
        assert_eq!(s.get("C").unwrap().last_used_at, 0);
    }

    #[test]
    fn underfull_store_returns_what_exists() {
        let mut s = store_with(&[("only", 0.0)]);
        assert_eq!(s.select_advice(&ctx(&["FSM:PLAN"], &[]), 3, 0.0, 1, 0).unwrap().len(), 1);
    }

    #[test]
    fn deprecated_items_are_never_selected() {
        let mut s = store_with(&[("a", 1.0), ("b", 0.5)]);
        for id in ["a", "b"] {
            s.items.get_mut(id).unwrap().deprecated = true;
        }
        assert!(s.select_advice(&ctx(&["FSM:PLAN"], &[]), 3, 0.5, 1, 0).unwrap().is_empty());
        let mut empty = NamespaceStore::new(Namespace::Plan);
        assert!(empty.select_advice(&ctx(&["FSM:PLAN"], &[]), 3, 0.5, 1, 0).unwrap().is_empty());
    }

    #[test]
    fn ties_break_by_id() {
        let s = store_with(&[("b", 0.2), ("a", 0.2), ("c", 0.2)]);
        assert_eq!(s.rank_advice(&ctx(&["FSM:PLAN"], &[]), 3, 0.0, 0).unwrap(), ["a", "b", "c"]);
    }

    #[test]
    fn selection_rejects_bad_arguments() {
        let s = store_with(&[("a", 0.0)]);
        let c = ctx(&["FSM:PLAN"], &[]);
        assert_eq!(s.rank_advice(&c, 0, 0.0, 0), Err(BanditError::InvalidK));
        assert_eq!(s.rank_advice(&c, 1, 1.5, 0), Err(BanditError::InvalidEpsilon(1.5)));
    }

    #[test]
    fn seeded_exploration_is_deterministic() {
        let ids: Vec<String> = (0..10).map(|i| format!("i{i}")).collect();
        let mut s = NamespaceStore::new(Namespace::Hack);
        for (n, id) in ids.iter().enumerate() {
            let mut it = MemoryItem::new(id.clone(), Namespace::Hack, "", 0);
            it.bias = n as f64;
            s.insert(it).unwrap();
        }
        let c = ctx(&["FSM:HACK_SEMANTIC"], &[]);
        let a = s.rank_advice(&c, 4, 0.7, 99).unwrap();
        assert_eq!(a, s.rank_advice(&c, 4, 0.7, 99).unwrap());
        let uniq: std::collections::BTreeSet<_> = a.iter().collect();
        assert_eq!(uniq.len(), 4);
    }

    #[test]
    fn zero_residual_leaves_parameters() {
        let mut s = store_with(&[("a", 0.4)]);
        let c = ctx(&["TAG:dp"], &[]);
        let after = s.apply_reward("a", 0.4, &c, 1).unwrap();
        assert_eq!(after.bias, 0.4);
        assert!(after.weights.values().all(|w| *w == 0.0));
        assert_eq!(after.use_count, 1);
    }

    #[test]
    fn fresh_item_positive_reward() {
        let mut s = store_with(&[("a", 0.0)]);
        let after = s.apply_reward("a", 1.0, &ctx(&["FSM:SOLVE_DRAFT"], &[]), 1).unwrap();
        assert!((after.bias - 0.01).abs() < 1e-15);
        let w = after.weights[&"FSM:SOLVE_DRAFT".parse::<FeatureKey>().unwrap()];
        assert!((w - 0.01).abs() < 1e-15);
    }

    #[test]
    fn running_mean_worked_example() {
        let mut s = store_with(&[("a", 0.0)]);
        {
            let it = s.items.get_mut("a").unwrap();
            it.use_count = 24;
            it.avg_reward = -0.37;
        }
        let after = s.apply_reward("a", 0.11, &ctx(&["TAG:x"], &[]), 1).unwrap();
        assert!((after.avg_reward - (-0.3508)).abs() < 1e-12, "{}", after.avg_reward);
        assert_eq!(after.use_count, 25);
    }

    #[test]
    fn reward_errors() {
        let mut s = store_with(&[("a", 0.0)]);
        let c = ctx(&["TAG:x"], &[]);
        assert!(matches!(s.apply_reward("zz", 0.0, &c, 0), Err(BanditError::NotFound { .. })));
        assert_eq!(s.apply_reward("a", 1.01, &c, 0), Err(BanditError::InvalidReward(1.01)));
    }

    #[test]
    fn deprecation_rule_boundaries() {
        let mut s = NamespaceStore::new(Namespace::Plan);
        for (id, uses, avg) in [("x", 25, -0.35), ("y", 19, -0.9), ("z", 20, -0.3)] {
            let mut it = MemoryItem::new(id, Namespace::Plan, "", 0);
            it.use_count = uses;
            it.avg_reward = avg;
            s.insert(it).unwrap();
        }
        assert_eq!(s.deprecation_sweep(), 1);
        assert!(s.get("x").unwrap().deprecated);
        assert!(!s.get("y").unwrap().deprecated);
        assert!(!s.get("z").unwrap().deprecated);
        assert_eq!(s.deprecation_sweep(), 0);
    }

    #[test]
    fn namespace_mismatch_is_rejected() {
        let mut s = NamespaceStore::new(Namespace::Plan);
        assert!(matches!(
            s.insert(MemoryItem::new("a", Namespace::Hack, "", 0)),
            Err(BanditError::NamespaceMismatch { .. })
        ));
    }

    fn arb_item() -> impl Strategy<Value = MemoryItem> {
        (
            "[a-z]{1,6}",
            -1.0f64..1.0,
            proptest::collection::btree_map(
                prop_oneof![Just("TAG:dp"), Just("TAG:math"), Just("FSM:PLAN"), Just("FAIL:WA")],
                -1.0f64..1.0,
                0..4,
            ),
            any::<bool>(),
        )
            .prop_map(|(id, bias, w, deprecated)| {
                let mut it = MemoryItem::new(id, Namespace::Solve, "", 0);
                it.bias = bias;
                it.deprecated = deprecated;
                it.weights = w.into_iter().map(|(k, v)| (k.parse().unwrap(), v)).collect();
                it
            })
    }

    proptest! {
        #[test]
        fn score_is_linear_in_parameters(it in arb_item(), c in -3.0f64..3.0) {
            let cx = ctx(&["TAG:dp", "FSM:PLAN", "FAIL:WA"], &[]);
            let mut scaled = it.clone();
            scaled.bias *= c;
            for w in scaled.weights.values_mut() { *w *= c; }
            let base = score_item(&it, &cx, 0.0);
            prop_assert!((score_item(&scaled, &cx, 0.0) - c * base).abs() < 1e-9);
        }

        #[test]
        fn greedy_is_shift_invariant(biases in proptest::collection::vec(-64i32..64, 1..12),
                                     shift in -128i32..128, k in 1usize..5) {
            // Dyadic grid values keep every sum exact, so ties stay ties.
            let mut s = NamespaceStore::new(Namespace::Solve);
            for (n, b) in biases.iter().enumerate() {
                let mut it = item(&format!("i{n:02}"), *b as f64 / 64.0);
                it.weights.insert("TAG:dp".parse().unwrap(), (n % 3) as f64 / 8.0);
                s.insert(it).unwrap();
            }
            let cx = ctx(&["TAG:dp", "FSM:PLAN"], &[]);
            let before = s.rank_advice(&cx, k, 0.0, 3).unwrap();
            let mut shifted = s.clone();
            for it in shifted.items.values_mut() { it.bias += shift as f64 / 64.0; }
            prop_assert_eq!(before, shifted.rank_advice(&cx, k, 0.0, 3).unwrap());
        }

        #[test]
        fn deprecated_never_selected(items in proptest::collection::vec(arb_item(), 0..16),
                                     eps in 0.0f64..=1.0, seed in any::<u64>(), k in 1usize..8) {
            let mut s = NamespaceStore::new(Namespace::Solve);
            for it in items { let _ = s.upsert(it); }
            let cx = ctx(&["TAG:math"], &[]);
            for id in s.rank_advice(&cx, k, eps, seed).unwrap() {
                prop_assert!(!s.get(&id).unwrap().deprecated);
            }
        }

        #[test]
        fn running_mean_matches_arithmetic_mean(rewards in proptest::collection::vec(-1.0f64..=1.0, 1..200)) {
            let mut s = store_with(&[("a", 0.0)]);
            let cx = ctx(&["TAG:dp"], &["dp"]);
            for r in &rewards { s.apply_reward("a", *r, &cx, 0).unwrap(); }
            let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
            let it = s.get("a").unwrap();
            prop_assert!((it.avg_reward - mean).abs() < 1e-12);
            prop_assert_eq!(it.use_count, rewards.len() as u64);
        }
    }
}
