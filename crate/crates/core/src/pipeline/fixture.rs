//! Synthetic corpus at 1/40 of the reference corpus size, calibrated so that
//! stages 1 to 3 retain the reference fractions.
//!
//! Layout of the complete records: four oversized single-tag groups whose
//! capping removes the stage-2 share, and five small tags holding the
//! near-duplicate pairs that stage 3 collapses. Difficulty is split between
//! an easy half (below every reference floor) and a hard half, in the
//! proportion the reference floors would prune.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::difficulty::NativeDifficulty;
use super::record::{Bound, Constraints, Platform, ProblemRecord, Submission, TestCase};

/// Reference corpus counts: raw, then after each of the four stages.
pub const REFERENCE_COUNTS: [usize; 5] = [30018, 24712, 19486, 16503, 8017];

/// Scaled cap (2300 / 40, rounded up).
pub const FIXTURE_TAG_CAP: usize = 58;

/// Embedding dimension that keeps unrelated fixture statements well apart.
pub const FIXTURE_EMBED_DIM: usize = 1024;

pub fn reference_ratios() -> [f64; 4] {
    let c = REFERENCE_COUNTS;
    [1, 2, 3, 4].map(|i| c[i] as f64 / c[i - 1] as f64)
}

/// Published per-tag floors for the fifteen most frequent tags.
pub fn reference_floors() -> BTreeMap<String, u32> {
    [
        ("implementation", 1400),
        ("math", 1600),
        ("greedy", 1600),
        ("dp", 1600),
        ("data_structures", 1600),
        ("constructive_algorithms", 1600),
        ("brute_force", 1400),
        ("graphs", 1600),
        ("sortings", 1400),
        ("binary_search", 1600),
        ("dfs_and_similar", 1600),
        ("trees", 1600),
        ("strings", 1300),
        ("number_theory", 1400),
        ("combinatorics", 1400),
    ]
    .into_iter()
    .map(|(t, f)| (t.to_string(), f))
    .collect()
}

// (platform, raw, complete)
const PLATFORMS: [(Platform, usize, usize); 4] = [
    (Platform::Codeforces, 397, 389),
    (Platform::AtCoder, 105, 100),
    (Platform::Aizu, 66, 63),
    (Platform::Other, 183, 66),
];

const BIG_TAGS: [(&str, usize); 4] = [("implementation", 91), ("math", 91), ("greedy", 91), ("dp", 90)];
const SMALL_TAGS: [&str; 5] = ["graphs", "strings", "number_theory", "combinatorics", "trees"];
const SMALL_TAG_SIZE: usize = 51;
const PAIRS_PER_SMALL_TAG: usize = 15;

fn word(i: usize) -> String {
    const SYL: [&str; 20] = [
        "ka", "lo", "mi", "nu", "pe", "ra", "si", "to", "vu", "ze", "ba", "do", "fi", "gu", "he", "ja", "ko", "li",
        "mo", "ne",
    ];
    format!("{}{}{}", SYL[i % 20], SYL[(i / 20) % 20], SYL[(i / 400) % 20])
}

fn statement(rng: &mut ChaCha8Rng) -> String {
    (0..24).map(|_| word(rng.gen_range(0..8000))).collect::<Vec<_>>().join(" ")
}

fn difficulty(platform: Platform, easy: bool, rng: &mut ChaCha8Rng) -> NativeDifficulty {
    match platform {
        Platform::AtCoder => {
            let pool: &[&str] = if easy {
                &["ABC-A", "ABC-B", "ABC-C", "ABC-D"]
            } else {
                &["ABC-E", "ABC-F", "ABC-G", "ARC", "AGC"]
            };
            NativeDifficulty::Label(pool[rng.gen_range(0..pool.len())].into())
        }
        _ => {
            let step = if easy { rng.gen_range(0..=4) } else { rng.gen_range(8..=27) };
            NativeDifficulty::Rating(800 + 100 * step)
        }
    }
}

fn base_record(id: String, platform: Platform, rng: &mut ChaCha8Rng) -> ProblemRecord {
    let n_sub = rng.gen_range(0..20);
    ProblemRecord {
        id,
        platform,
        statement: statement(rng),
        constraints: Constraints {
            input_spec: "first line n, then n integers".into(),
            output_spec: "one integer".into(),
            bounds: [("n".to_string(), Bound { min: 1.0, max: 2e5 })].into(),
            time_limit_ms: Some(2000),
            memory_limit_mb: Some(256),
        },
        public_tests: vec![TestCase {
            input: "1\n1\n".into(),
            output: "1\n".into(),
        }],
        hidden_tests: (0..rng.gen_range(1..6))
            .map(|k| TestCase {
                input: format!("1\n{k}\n"),
                output: format!("{k}\n"),
            })
            .collect(),
        editorial: None,
        submissions: (0..n_sub)
            .map(|_| Submission {
                verdict: "AC".into(),
                exec_time_ms: None,
            })
            .collect(),
        reference_solution: None,
        tags: Default::default(),
        native_difficulty: None,
        difficulty: None,
        flags: Default::default(),
    }
}

/// Exactly `round(share · n)` trues, shuffled.
fn easy_flags(n: usize, share: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let k = (share * n as f64).round() as usize;
    let mut v: Vec<bool> = (0..n).map(|i| i < k).collect();
    v.shuffle(rng);
    v
}

pub fn generate(seed: u64) -> Vec<ProblemRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let easy_share = 1.0 - reference_ratios()[3];

    let mut platforms: Vec<Platform> = PLATFORMS
        .iter()
        .flat_map(|&(p, _, complete)| std::iter::repeat_n(p, complete))
        .collect();
    platforms.shuffle(&mut rng);
    let mut next_platform = platforms.into_iter();

    let mut out = Vec::new();
    let mut serial = 0usize;
    let mut fresh = |rng: &mut ChaCha8Rng, platform: Platform| {
        serial += 1;
        base_record(format!("fx{serial:04}"), platform, rng)
    };

    for (tag, size) in BIG_TAGS {
        for easy in easy_flags(size, easy_share, &mut rng) {
            let p = next_platform.next().expect("platform slots");
            let mut r = fresh(&mut rng, p);
            r.tags.insert(tag.into());
            r.native_difficulty = Some(difficulty(p, easy, &mut rng));
            out.push(r);
        }
    }
    for tag in SMALL_TAGS {
        let uniques = SMALL_TAG_SIZE - 2 * PAIRS_PER_SMALL_TAG;
        // Pairs share easiness, so each group counts once.
        let flags = easy_flags(uniques + PAIRS_PER_SMALL_TAG, easy_share, &mut rng);
        for (g, easy) in flags.into_iter().enumerate() {
            let p = next_platform.next().expect("platform slots");
            let mut r = fresh(&mut rng, p);
            r.tags.insert(tag.into());
            r.native_difficulty = Some(difficulty(p, easy, &mut rng));
            if g >= uniques {
                let q = next_platform.next().expect("platform slots");
                let mut twin = fresh(&mut rng, q);
                twin.statement = format!("{} {}", r.statement, word(rng.gen_range(0..8000)));
                twin.tags = r.tags.clone();
                twin.native_difficulty = Some(difficulty(q, easy, &mut rng));
                out.push(twin);
            }
            out.push(r);
        }
    }
    assert!(next_platform.next().is_none(), "fixture layout and platform counts disagree");

    for &(p, raw, complete) in &PLATFORMS {
        for k in 0..raw - complete {
            let mut r = fresh(&mut rng, p);
            r.tags.insert(SMALL_TAGS[k % SMALL_TAGS.len()].into());
            r.native_difficulty = Some(difficulty(p, k % 2 == 0, &mut rng));
            match k % 4 {
                0 => r.hidden_tests.clear(),
                1 => r.constraints.bounds.clear(),
                2 => r.native_difficulty = None,
                _ => r.tags.clear(),
            }
            out.push(r);
        }
    }
    out.shuffle(&mut rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::pipeline::{run_pipeline, PipelineConfig};

    fn cfg(overrides: BTreeMap<String, u32>) -> PipelineConfig {
        PipelineConfig {
            tag_cap: FIXTURE_TAG_CAP,
            floor_overrides: overrides,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn fixture_size_and_determinism() {
        let a = generate(5);
        assert_eq!(a.len(), PLATFORMS.iter().map(|p| p.1).sum::<usize>());
        assert_eq!(a, generate(5));
    }

    #[test]
    fn first_three_stages_match_reference() {
        let e = HashEmbedder::new(FIXTURE_EMBED_DIM);
        let (_, rep) = run_pipeline(generate(5), &cfg(BTreeMap::new()), &e, 3).unwrap();
        let want = reference_ratios();
        for (st, w) in rep.stages.iter().zip(want) {
            assert!((st.ratio() - w).abs() / w < 0.02, "stage {} ratio {} vs {w}", st.stage, st.ratio());
        }
    }

    #[test]
    fn reference_floors_reach_stage_four_ratio() {
        let e = HashEmbedder::new(FIXTURE_EMBED_DIM);
        let (_, rep) = run_pipeline(generate(5), &cfg(reference_floors()), &e, 4).unwrap();
        let (got, want) = (rep.stages[3].ratio(), reference_ratios()[3]);
        assert!((got - want).abs() / want < 0.02, "stage 4 ratio {got} vs {want}");
    }
}
