//! Prompt templates with `<KEY>` placeholders and single-pass rendering.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub const DEFAULT_PROMPTS: &str = include_str!("../prompts/default.toml");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("template {template}: unbound placeholders {keys:?}")]
    Unbound { template: String, keys: Vec<String> },
    #[error("no template named {0}")]
    UnknownTemplate(String),
    #[error("prompt file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub system: Option<String>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub name: String,
    pub system: Option<String>,
    pub user: String,
}

pub type Bindings = BTreeMap<String, String>;

/// Byte ranges and keys of every `<KEY>` token, KEY = `[A-Z][A-Z0-9_]*`.
fn scan(text: &str) -> Vec<(usize, usize, &str)> {
    let b = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < b.len() {
        if b[i] == b'<' && i + 1 < b.len() && b[i + 1].is_ascii_uppercase() {
            let mut j = i + 1;
            while j < b.len() && (b[j].is_ascii_uppercase() || b[j].is_ascii_digit() || b[j] == b'_') {
                j += 1;
            }
            if j < b.len() && b[j] == b'>' {
                out.push((i, j + 1, &text[i + 1..j]));
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

impl PromptTemplate {
    /// Required keys: every placeholder in the system text and body.
    pub fn placeholders(&self) -> BTreeSet<String> {
        let mut keys: BTreeSet<String> = scan(&self.body).into_iter().map(|t| t.2.to_string()).collect();
        if let Some(s) = &self.system {
            keys.extend(scan(s).into_iter().map(|t| t.2.to_string()));
        }
        keys
    }
}

fn substitute(text: &str, bindings: &Bindings, missing: &mut BTreeSet<String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    for (s, e, key) in scan(text) {
        out.push_str(&text[last..s]);
        match bindings.get(key) {
            Some(v) => out.push_str(v),
            None => {
                missing.insert(key.to_string());
            }
        }
        last = e;
    }
    out.push_str(&text[last..]);
    out
}

/// Replace every placeholder in one pass. Bound values are inserted
/// verbatim and never rescanned; any unbound placeholder is an error.
pub fn render_prompt(t: &PromptTemplate, bindings: &Bindings) -> Result<RenderedPrompt, PromptError> {
    let mut missing = BTreeSet::new();
    let user = substitute(&t.body, bindings, &mut missing);
    let system = t.system.as_deref().map(|s| substitute(s, bindings, &mut missing));
    if !missing.is_empty() {
        return Err(PromptError::Unbound {
            template: t.name.clone(),
            keys: missing.into_iter().collect(),
        });
    }
    Ok(RenderedPrompt {
        name: t.name.clone(),
        system,
        user,
    })
}

#[derive(Debug, Deserialize)]
struct PromptFile {
    prompts: BTreeMap<String, PromptTemplate>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLibrary {
    templates: BTreeMap<String, PromptTemplate>,
}

impl PromptLibrary {
    /// TOML with one `[prompts."<name>"]` table per template.
    pub fn from_toml(text: &str) -> Result<Self, PromptError> {
        let file: PromptFile = toml::from_str(text).map_err(|e| PromptError::Parse(e.to_string()))?;
        let templates = file
            .prompts
            .into_iter()
            .map(|(name, mut t)| {
                t.name = name.clone();
                (name, t)
            })
            .collect();
        Ok(Self { templates })
    }

    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_PROMPTS).expect("bundled prompt file parses")
    }

    pub fn get(&self, name: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates
            .get(name)
            .ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn render(&self, name: &str, bindings: &Bindings) -> Result<RenderedPrompt, PromptError> {
        render_prompt(self.get(name)?, bindings)
    }
}

/// Build bindings from `(key, value)` pairs.
pub fn bindings<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Bindings {
    pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect()
}
