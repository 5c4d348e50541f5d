use super::exec::ExitKind;
use super::toolchain::Program;
use super::{ExecutionLimits, JudgeSource, SandboxError, Verdict, VerdictKind};

/// Strip every trailing `\n` / `\r\n`.
pub fn normalize_trailing_newlines(b: &[u8]) -> &[u8] {
    let mut end = b.len();
    while end > 0 && (b[end - 1] == b'\n' || b[end - 1] == b'\r') {
        end -= 1;
    }
    &b[..end]
}

pub fn exact_equal(a: &[u8], b: &[u8]) -> bool {
    normalize_trailing_newlines(a) == normalize_trailing_newlines(b)
}

/// Whitespace-delimited token streams compared as opaque strings.
pub fn tokens_equal(a: &[u8], b: &[u8]) -> bool {
    a.split(u8::is_ascii_whitespace)
        .filter(|t| !t.is_empty())
        .eq(b.split(u8::is_ascii_whitespace).filter(|t| !t.is_empty()))
}

/// Judges available for a problem, consulted strictly in priority order:
/// checker, then reference solution, then stored output.
#[derive(Debug, Clone, Default)]
pub struct Judge {
    pub checker: Option<Program>,
    pub reference: Option<Program>,
    pub limits: ExecutionLimits,
}

impl Judge {
    pub fn is_available(&self, expected: Option<&[u8]>) -> bool {
        self.checker.is_some() || self.reference.is_some() || expected.is_some()
    }

    fn reference_output(&self, reference: &Program, input: &[u8]) -> Result<Vec<u8>, SandboxError> {
        match reference.run_classified(&[], input, &self.limits)? {
            Ok(raw) => Ok(raw.stdout),
            Err(v) => Err(SandboxError::JudgeFailed(format!("reference solution: {} {}", v.kind, v.diagnostic))),
        }
    }

    /// The answer a checker sees as its third argument.
    pub fn answer_for(&self, input: &[u8], expected: Option<&[u8]>) -> Result<Option<Vec<u8>>, SandboxError> {
        if let Some(e) = expected {
            return Ok(Some(e.to_vec()));
        }
        match &self.reference {
            Some(r) => self.reference_output(r, input).map(Some),
            None => Ok(None),
        }
    }

    /// Decide AC/WA for output that came from a cleanly exiting run.
    pub fn resolve(
        &self,
        input: &[u8],
        candidate_stdout: &[u8],
        expected: Option<&[u8]>,
    ) -> Result<(VerdictKind, JudgeSource, String), SandboxError> {
        let ok = |b: bool| if b { VerdictKind::Accepted } else { VerdictKind::WrongAnswer };
        if let Some(checker) = &self.checker {
            let answer = self.answer_for(input, expected)?.unwrap_or_default();
            let dir = tempfile::Builder::new().prefix("cploop-check-").tempdir()?;
            let paths = ["input.txt", "output.txt", "answer.txt"].map(|n| dir.path().join(n));
            std::fs::write(&paths[0], input)?;
            std::fs::write(&paths[1], candidate_stdout)?;
            std::fs::write(&paths[2], &answer)?;
            let args: Vec<String> = paths.iter().map(|p| p.to_string_lossy().into_owned()).collect();
            let raw = checker.run(&args, b"", &self.limits)?;
            if raw.limit_hit.is_some() {
                return Err(SandboxError::JudgeFailed(format!("checker hit {:?} limit", raw.limit_hit)));
            }
            return match raw.status {
                ExitKind::Exited(code) => {
                    let msg = String::from_utf8_lossy(&raw.stderr).trim().to_string();
                    Ok((ok(code == 0), JudgeSource::Checker, msg))
                }
                ExitKind::Signaled(s) => Err(SandboxError::JudgeFailed(format!("checker killed by signal {s}"))),
            };
        }
        if let Some(reference) = &self.reference {
            let want = self.reference_output(reference, input)?;
            let same = tokens_equal(candidate_stdout, &want);
            return Ok((ok(same), JudgeSource::Reference, String::new()));
        }
        if let Some(e) = expected {
            return Ok((ok(exact_equal(candidate_stdout, e)), JudgeSource::Exact, String::new()));
        }
        Err(SandboxError::Unjudgeable)
    }

    /// Run `candidate` on `input` and produce a full verdict.
    pub fn judge(
        &self,
        candidate: &Program,
        input: &[u8],
        expected: Option<&[u8]>,
        limits: &ExecutionLimits,
    ) -> Result<Verdict, SandboxError> {
        if !self.is_available(expected) {
            return Err(SandboxError::Unjudgeable);
        }
        match candidate.run_classified(&[], input, limits)? {
            Err(v) => Ok(v),
            Ok(raw) => {
                let (kind, source, diagnostic) = self.resolve(input, &raw.stdout, expected)?;
                Ok(Verdict {
                    kind,
                    elapsed: raw.elapsed,
                    peak_memory: raw.peak_memory,
                    judge_source: Some(source),
                    secondary: None,
                    diagnostic,
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_comparison() {
        assert!(tokens_equal(b"1 2\n3", b"1 2 3"));
        assert!(tokens_equal(b"  a\t\tb \n\n", b"a b"));
        assert!(!tokens_equal(b"1 2", b"1 2 3"));
        assert!(!tokens_equal(b"1.0", b"1"));
        assert!(tokens_equal(b"", b" \n"));
    }

    #[test]
    fn exact_comparison() {
        assert!(exact_equal(b"ab\n", b"ab"));
        assert!(exact_equal(b"ab\r\n\n", b"ab"));
        assert!(!exact_equal(b"ab \n", b"ab"));
        assert!(!exact_equal(b"1 2\n3", b"1 2 3"));
    }

    #[test]
    fn exact_path_and_unjudgeable() {
        let j = Judge::default();
        assert_eq!(
            j.resolve(b"", b"1 2\n3", Some(b"1 2 3")).unwrap(),
            (VerdictKind::WrongAnswer, JudgeSource::Exact, String::new())
        );
        assert_eq!(j.resolve(b"", b"x", None), Err(SandboxError::Unjudgeable));
    }

    proptest::proptest! {
        #[test]
        fn token_compare_ignores_whitespace_runs(
            toks in proptest::collection::vec("[a-z0-9]{1,4}", 0..8),
            seps in proptest::collection::vec("[ \t\n]{1,3}", 8),
        ) {
            let a = toks.join(" ");
            let mut b = String::new();
            for (t, s) in toks.iter().zip(&seps) {
                b.push_str(s);
                b.push_str(t);
            }
            proptest::prop_assert!(tokens_equal(a.as_bytes(), b.as_bytes()));
        }
    }
}
