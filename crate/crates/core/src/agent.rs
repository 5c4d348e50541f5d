//! Prompt rendering plus LLM dispatch with a recorded transcript.

use serde::{Deserialize, Serialize};

use crate::llm::{Decoding, LlmError, LlmPort, LlmRequest};
use crate::pipeline::{Constraints, TestCase};
use crate::prompts::{Bindings, PromptError, PromptLibrary};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("model call {prompt} failed twice: {source}")]
    Llm { prompt: String, source: LlmError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub phase: String,
    pub prompt_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub struct Caller<'a> {
    llm: &'a dyn LlmPort,
    prompts: &'a PromptLibrary,
    decoding: Decoding,
    phase: String,
    pub transcript: Vec<TranscriptEntry>,
}

impl<'a> Caller<'a> {
    pub fn new(llm: &'a dyn LlmPort, prompts: &'a PromptLibrary, decoding: Decoding) -> Self {
        Self {
            llm,
            prompts,
            decoding,
            phase: String::new(),
            transcript: Vec::new(),
        }
    }

    pub fn set_phase(&mut self, phase: impl Into<String>) {
        self.phase = phase.into();
    }

    /// Render `name` and send it. A failed call is retried once; the second
    /// failure is returned. Every attempt lands in the transcript.
    pub fn call(&mut self, name: &str, b: &Bindings) -> Result<String, AgentError> {
        let rendered = self.prompts.render(name, b)?;
        let req = LlmRequest {
            prompt_name: name.to_string(),
            system: rendered.system.clone(),
            user: rendered.user.clone(),
            decoding: self.decoding,
        };
        let mut last = None;
        for _ in 0..2 {
            let result = self.llm.complete(&req);
            self.transcript.push(TranscriptEntry {
                phase: self.phase.clone(),
                prompt_name: name.to_string(),
                system: rendered.system.clone(),
                prompt: rendered.user.clone(),
                completion: result.as_ref().ok().cloned(),
                error: result.as_ref().err().map(ToString::to_string),
            });
            match result {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("model call {name} failed: {e}");
                    last = Some(e);
                }
            }
        }
        Err(AgentError::Llm {
            prompt: name.to_string(),
            source: last.expect("two attempts made"),
        })
    }
}

/// Human-readable constraint block for prompts.
pub fn constraints_text(c: &Constraints) -> String {
    let mut out = String::new();
    if !c.input_spec.is_empty() {
        out += &format!("Input: {}\n", c.input_spec);
    }
    if !c.output_spec.is_empty() {
        out += &format!("Output: {}\n", c.output_spec);
    }
    for (name, b) in &c.bounds {
        out += &format!("{} <= {name} <= {}\n", b.min, b.max);
    }
    if let Some(t) = c.time_limit_ms {
        out += &format!("Time limit: {t} ms\n");
    }
    if let Some(m) = c.memory_limit_mb {
        out += &format!("Memory limit: {m} MB\n");
    }
    out
}

pub fn constraints_json(c: &Constraints) -> String {
    serde_json::to_string(c).expect("constraints serialize")
}

pub fn tests_block(tests: &[TestCase]) -> String {
    tests
        .iter()
        .enumerate()
        .map(|(i, t)| format!("Input {}:\n{}\nOutput {}:\n{}\n", i + 1, t.input.trim_end(), i + 1, t.output.trim_end()))
        .collect::<Vec<_>>()
        .join("\n")
}
