//! SEARCH/REPLACE edit blocks and the regression gate.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

pub const SEARCH_MARKER: &str = "<<<<<<< SEARCH";
pub const DIVIDER_MARKER: &str = "=======";
pub const REPLACE_MARKER: &str = ">>>>>>> REPLACE";

/// Format reminder bound into patch prompts.
pub const PATCH_FORMAT: &str = "One or more blocks, each exactly:
<<<<<<< SEARCH
lines copied verbatim from the current code, matching exactly once
=======
replacement lines
>>>>>>> REPLACE";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PatchError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: &'static str },
    #[error("patch contains no edit blocks")]
    EmptyPatch,
    #[error("block {index}: search text not found")]
    NotFound { index: usize },
    #[error("block {index}: search text occurs {count} times")]
    Ambiguous { index: usize, count: usize },
    #[error("block {index}: empty search text")]
    EmptySearch { index: usize },
    #[error("test id sets differ between runs")]
    MismatchedTests,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditBlock {
    pub search: String,
    pub replace: String,
    /// Byte range the replacement occupies after applying.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_span: Option<Range<usize>>,
}

impl EditBlock {
    pub fn new(search: impl Into<String>, replace: impl Into<String>) -> Self {
        Self {
            search: search.into(),
            replace: replace.into(),
            source_span: None,
        }
    }

    pub fn render(&self) -> String {
        format!(
            "{SEARCH_MARKER}\n{}\n{DIVIDER_MARKER}\n{}\n{REPLACE_MARKER}\n",
            self.search, self.replace
        )
    }

    pub fn inverse(&self) -> Self {
        Self::new(self.replace.clone(), self.search.clone())
    }
}

fn strip_eol(line: &str) -> &str {
    line.strip_suffix('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .unwrap_or(line)
}

/// Body text between two marker lines, minus the newline that precedes
/// the closing marker.
fn finish_body(mut body: String) -> String {
    if body.ends_with('\n') {
        body.pop();
        if body.ends_with('\r') {
            body.pop();
        }
    }
    body
}

enum State {
    Outside,
    Search { opened: usize, body: String },
    Replace { opened: usize, search: String, body: String },
}

/// Extract every edit block in document order. Text outside blocks is
/// ignored; markers must start at column 0.
pub fn parse_patch(text: &str) -> Result<Vec<EditBlock>, PatchError> {
    let mut blocks = Vec::new();
    let mut state = State::Outside;
    for (idx, raw) in text.split_inclusive('\n').enumerate() {
        let line_no = idx + 1;
        let line = strip_eol(raw);
        state = match state {
            State::Outside => {
                if line == SEARCH_MARKER {
                    State::Search {
                        opened: line_no,
                        body: String::new(),
                    }
                } else {
                    State::Outside
                }
            }
            State::Search { opened, mut body } => {
                if line == DIVIDER_MARKER {
                    let search = finish_body(body);
                    if search.is_empty() {
                        return Err(PatchError::Parse {
                            line: opened,
                            reason: "empty search text",
                        });
                    }
                    State::Replace {
                        opened,
                        search,
                        body: String::new(),
                    }
                } else if line == REPLACE_MARKER {
                    return Err(PatchError::Parse {
                        line: line_no,
                        reason: "replace marker before divider",
                    });
                } else if line == SEARCH_MARKER {
                    return Err(PatchError::Parse {
                        line: line_no,
                        reason: "nested search marker",
                    });
                } else {
                    body.push_str(raw);
                    State::Search { opened, body }
                }
            }
            State::Replace { opened, search, mut body } => {
                if line == REPLACE_MARKER {
                    blocks.push(EditBlock::new(search, finish_body(body)));
                    State::Outside
                } else if line == SEARCH_MARKER || line == DIVIDER_MARKER {
                    return Err(PatchError::Parse {
                        line: line_no,
                        reason: "marker inside replace text",
                    });
                } else {
                    body.push_str(raw);
                    State::Replace { opened, search, body }
                }
            }
        };
    }
    match state {
        State::Outside if blocks.is_empty() => Err(PatchError::EmptyPatch),
        State::Outside => Ok(blocks),
        State::Search { opened, .. } | State::Replace { opened, .. } => Err(PatchError::Parse {
            line: opened,
            reason: "unterminated edit block",
        }),
    }
}

/// Occurrences of `needle` in `hay`, overlapping ones included.
fn occurrences(hay: &str, needle: &str) -> Vec<usize> {
    let mut out = Vec::new();
    let mut from = 0;
    while let Some(pos) = hay[from..].find(needle) {
        out.push(from + pos);
        let step = hay[from + pos..].chars().next().map_or(1, char::len_utf8);
        from += pos + step;
        if from > hay.len() {
            break;
        }
    }
    out
}

/// Apply blocks in order, each against the text left by the previous one.
/// All-or-nothing: on error nothing is returned but the error.
pub fn apply_patch(source: &str, blocks: &[EditBlock]) -> Result<(String, Vec<EditBlock>), PatchError> {
    let mut text = source.to_string();
    let mut applied = Vec::with_capacity(blocks.len());
    for (index, block) in blocks.iter().enumerate() {
        if block.search.is_empty() {
            return Err(PatchError::EmptySearch { index });
        }
        let hits = occurrences(&text, &block.search);
        match hits.len() {
            0 => return Err(PatchError::NotFound { index }),
            1 => {
                let at = hits[0];
                text.replace_range(at..at + block.search.len(), &block.replace);
                let mut b = block.clone();
                b.source_span = Some(at..at + block.replace.len());
                applied.push(b);
            }
            count => return Err(PatchError::Ambiguous { index, count }),
        }
    }
    Ok((text, applied))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateReport {
    pub accepted: bool,
    pub fixed: BTreeSet<String>,
    pub regressed: BTreeSet<String>,
    pub unchanged_failing: BTreeSet<String>,
}

/// Accept iff every test that passed before still passes.
pub fn regression_gate(
    before: &BTreeMap<String, bool>,
    after: &BTreeMap<String, bool>,
) -> Result<GateReport, PatchError> {
    if !before.keys().eq(after.keys()) {
        return Err(PatchError::MismatchedTests);
    }
    let mut r = GateReport {
        accepted: true,
        fixed: BTreeSet::new(),
        regressed: BTreeSet::new(),
        unchanged_failing: BTreeSet::new(),
    };
    for (id, &was) in before {
        match (was, after[id]) {
            (true, false) => {
                r.regressed.insert(id.clone());
            }
            (false, true) => {
                r.fixed.insert(id.clone());
            }
            (false, false) => {
                r.unchanged_failing.insert(id.clone());
            }
            (true, true) => {}
        }
    }
    r.accepted = r.regressed.is_empty();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EXAMPLE: &str = concat!(
        "Here is the fix.\n",
        "<<<<<<< SEARCH\n",
        "    for (int i = 1; i <= n; i++) {\n",
        "        sum += arr[i];\n",
        "    }\n",
        "=======\n",
        "    for (int i = 0; i < n; i++) {\n",
        "        sum += arr[i];\n",
        "    }\n",
        ">>>>>>> REPLACE\n",
    );

    #[test]
    fn parses_loop_bound_example() {
        let blocks = parse_patch(EXAMPLE).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].search, "    for (int i = 1; i <= n; i++) {\n        sum += arr[i];\n    }");
        assert_eq!(blocks[0].replace, "    for (int i = 0; i < n; i++) {\n        sum += arr[i];\n    }");
    }

    #[test]
    fn parses_two_blocks_in_order() {
        let text = format!("{}\nnoise\n{}", EditBlock::new("a", "b").render(), EditBlock::new("c", "d").render());
        let blocks = parse_patch(&text).unwrap();
        assert_eq!(blocks, vec![EditBlock::new("a", "b"), EditBlock::new("c", "d")]);
    }

    #[test]
    fn malformed_patches() {
        assert_eq!(
            parse_patch("<<<<<<< SEARCH\nx\n>>>>>>> REPLACE\n"),
            Err(PatchError::Parse {
                line: 3,
                reason: "replace marker before divider"
            })
        );
        assert_eq!(
            parse_patch("a\n<<<<<<< SEARCH\nx\n=======\ny\n"),
            Err(PatchError::Parse {
                line: 2,
                reason: "unterminated edit block"
            })
        );
        assert_eq!(parse_patch("no blocks here"), Err(PatchError::EmptyPatch));
        assert!(parse_patch("<<<<<<< SEARCH\n=======\ny\n>>>>>>> REPLACE\n").is_err());
        // Indented markers are not markers.
        assert_eq!(parse_patch(" <<<<<<< SEARCH\nx\n=======\ny\n>>>>>>> REPLACE\n"), Err(PatchError::EmptyPatch));
    }

    #[test]
    fn apply_single_and_failures() {
        let src = "int a = 1;\nint b = 2;\n";
        let (out, spans) = apply_patch(src, &[EditBlock::new("int b = 2;", "int b = 3;")]).unwrap();
        assert_eq!(out, "int a = 1;\nint b = 3;\n");
        assert_eq!(spans[0].source_span, Some(11..21));
        assert_eq!(
            apply_patch(src, &[EditBlock::new("zzz", "y")]),
            Err(PatchError::NotFound { index: 0 })
        );
        assert_eq!(
            apply_patch(src, &[EditBlock::new("int a", "int c"), EditBlock::new("int", "y")]),
            Err(PatchError::Ambiguous { index: 1, count: 2 })
        );
        assert_eq!(apply_patch(src, &[EditBlock::new("", "y")]), Err(PatchError::EmptySearch { index: 0 }));
    }

    #[test]
    fn ambiguity_counts_overlaps() {
        assert_eq!(apply_patch("aaa", &[EditBlock::new("aa", "b")]), Err(PatchError::Ambiguous { index: 0, count: 2 }));
        assert_eq!(
            apply_patch("x = 1; x = 1;", &[EditBlock::new("x = 1;", "y")]),
            Err(PatchError::Ambiguous { index: 0, count: 2 })
        );
    }

    #[test]
    fn later_blocks_see_earlier_edits() {
        let (out, _) = apply_patch(
            "alpha",
            &[EditBlock::new("alpha", "beta gamma"), EditBlock::new("gamma", "delta")],
        )
        .unwrap();
        assert_eq!(out, "beta delta");
    }

    #[test]
    fn gate_examples() {
        let m = |v: &[(&str, bool)]| v.iter().map(|(k, b)| (k.to_string(), *b)).collect::<BTreeMap<_, _>>();
        let r = regression_gate(&m(&[("t1", true), ("t2", false)]), &m(&[("t1", true), ("t2", true)])).unwrap();
        assert!(r.accepted);
        assert_eq!(r.fixed, ["t2".to_string()].into());
        let r = regression_gate(&m(&[("t1", true)]), &m(&[("t1", false)])).unwrap();
        assert!(!r.accepted);
        assert_eq!(r.regressed, ["t1".to_string()].into());
        let same = m(&[("a", true), ("b", false)]);
        let r = regression_gate(&same, &same).unwrap();
        assert!(r.accepted && r.fixed.is_empty() && r.regressed.is_empty());
        assert_eq!(regression_gate(&m(&[("a", true)]), &m(&[("b", true)])), Err(PatchError::MismatchedTests));
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(search in "[a-z{};\n ]{1,40}", replace in "[a-z{};\n ]{0,40}") {
            prop_assume!(!search.is_empty());
            let b = EditBlock::new(search, replace);
            prop_assert_eq!(parse_patch(&b.render()).unwrap(), vec![b]);
        }

        #[test]
        fn apply_is_atomic(src in "[ab\n]{0,30}", search in "[ab]{1,3}", replace in "[xy]{0,3}") {
            let blocks = [EditBlock::new(search, replace)];
            if let Ok((out, _)) = apply_patch(&src, &blocks) {
                // Unique replacement text lets the inverse restore the source.
                let back = apply_patch(&out, &[blocks[0].inverse()]);
                if let Ok((orig, _)) = back {
                    prop_assert_eq!(orig, src);
                }
            }
        }

        #[test]
        fn gate_monotone_in_new_passes(before in proptest::collection::vec(any::<bool>(), 1..10), after in proptest::collection::vec(any::<bool>(), 10), flip in 0usize..10) {
            let ids: Vec<String> = (0..before.len()).map(|i| format!("t{i}")).collect();
            let b: BTreeMap<String, bool> = ids.iter().cloned().zip(before.iter().copied()).collect();
            let a: BTreeMap<String, bool> = ids.iter().cloned().zip(after.iter().copied()).collect();
            let r1 = regression_gate(&b, &a).unwrap();
            let mut a2 = a.clone();
            *a2.get_mut(&ids[flip % ids.len()]).unwrap() = true;
            let r2 = regression_gate(&b, &a2).unwrap();
            prop_assert!(!r1.accepted || r2.accepted);
        }
    }
}
