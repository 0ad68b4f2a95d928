//! Prompt template loading, per-flow instantiation, and context assembly.

use std::path::Path;

use num_traits::Float;
use thiserror::Error;

use crate::dfd::{derive_sensitive_flag, DataFlow};
use crate::retrieval::ScoredFragment;

/// Placeholders the template may use. `context` is filled last, by
/// [`assemble`]; the rest come from data-flow metadata.
pub const METADATA_PLACEHOLDERS: [&str; 7] = [
    "df_id",
    "source",
    "destination",
    "data_type",
    "sensitive",
    "sensitive_info",
    "lifecycle_stage",
];

/// Rendered in place of the context block when retrieval returned nothing.
pub const EMPTY_CONTEXT_SENTINEL: &str = "No retrieved context.";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub raw_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstantiatedPrompt {
    pub df_id: String,
    /// All metadata placeholders filled; `{context}` still open.
    pub text_with_context_hole: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedPrompt {
    pub df_id: String,
    pub text: String,
    pub used_fragment_ids: Vec<String>,
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read template {path}: {reason}")]
    Unreadable { path: String, reason: String },
    #[error("unknown placeholder `{{{0}}}` in template")]
    UnknownPlaceholder(String),
    #[error("template has no `{{context}}` placeholder")]
    MissingContextPlaceholder,
    #[error("template has {0} `{{context}}` placeholders, expected exactly one")]
    DuplicateContextPlaceholder(usize),
}

/// Scan for `{name}` occurrences where `name` is a lowercase identifier.
fn placeholders(text: &str) -> Vec<String> {
    let mut found = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(end) = text[i + 1..].find('}') {
                let name = &text[i + 1..i + 1 + end];
                if !name.is_empty()
                    && name
                        .chars()
                        .all(|c| c.is_ascii_lowercase() || c == '_')
                {
                    found.push(name.to_string());
                    i += end + 2;
                    continue;
                }
            }
        }
        i += 1;
    }
    found
}

/// Load a template and validate its placeholder set. Line endings are
/// normalized to `\n` so golden files are stable across platforms.
pub fn load_template(path: &Path) -> Result<PromptTemplate, TemplateError> {
    let raw = std::fs::read_to_string(path).map_err(|e| TemplateError::Unreadable {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_template(&raw)
}

pub fn parse_template(raw: &str) -> Result<PromptTemplate, TemplateError> {
    let raw_text = raw.replace("\r\n", "\n");
    let mut context_count = 0;
    for name in placeholders(&raw_text) {
        if name == "context" {
            context_count += 1;
        } else if !METADATA_PLACEHOLDERS.contains(&name.as_str()) {
            return Err(TemplateError::UnknownPlaceholder(name));
        }
    }
    match context_count {
        0 => Err(TemplateError::MissingContextPlaceholder),
        1 => Ok(PromptTemplate { raw_text }),
        n => Err(TemplateError::DuplicateContextPlaceholder(n)),
    }
}

/// Fill every metadata placeholder from the flow; `{context}` stays open.
/// Pure: identical inputs give identical output.
pub fn instantiate(template: &PromptTemplate, flow: &DataFlow) -> InstantiatedPrompt {
    let sensitive = if derive_sensitive_flag(flow) { "true" } else { "false" };
    let text = template
        .raw_text
        .replace("{df_id}", &flow.id)
        .replace("{source}", &flow.source)
        .replace("{destination}", &flow.destination)
        .replace("{data_type}", &flow.data_type)
        .replace("{sensitive}", sensitive)
        .replace("{sensitive_info}", &flow.sensitive_info)
        .replace("{lifecycle_stage}", &flow.lifecycle_stage);
    InstantiatedPrompt {
        df_id: flow.id.clone(),
        text_with_context_hole: text,
    }
}

/// Replace `{context}` with the retrieved fragments in rank order, each on
/// its own block, prefixed by its source-KB label.
pub fn assemble<F: Float>(
    prompt: &InstantiatedPrompt,
    fragments: &[ScoredFragment<F>],
) -> AugmentedPrompt {
    let (assembled, _) = assemble_with_budget(prompt, fragments, None);
    assembled
}

/// Like [`assemble`], but drops fragments from the tail (lowest rank first)
/// until the assembled prompt fits `max_chars`. Returns the number dropped.
pub fn assemble_with_budget<F: Float>(
    prompt: &InstantiatedPrompt,
    fragments: &[ScoredFragment<F>],
    max_chars: Option<usize>,
) -> (AugmentedPrompt, usize) {
    let mut keep = fragments.len();
    loop {
        let kept = &fragments[..keep];
        let context = if kept.is_empty() {
            EMPTY_CONTEXT_SENTINEL.to_string()
        } else {
            kept.iter()
                .map(|sf| format!("[{}] {}", sf.fragment.source_kb, sf.fragment.text))
                .collect::<Vec<_>>()
                .join("\n\n")
        };
        let text = prompt.text_with_context_hole.replace("{context}", &context);
        let within_budget = max_chars.map_or(true, |max| text.chars().count() <= max);
        if within_budget || keep == 0 {
            return (
                AugmentedPrompt {
                    df_id: prompt.df_id.clone(),
                    text,
                    used_fragment_ids: kept
                        .iter()
                        .map(|sf| sf.fragment.fragment_id.clone())
                        .collect(),
                },
                fragments.len() - keep,
            );
        }
        keep -= 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{KbSource, KnowledgeFragment};

    const MINI_TEMPLATE: &str = "DF {df_id}: {source} -> {destination} ({data_type})\n\
        Sensitive: {sensitive} ({sensitive_info})\n\
        Stage: {lifecycle_stage}\n\
        Context:\n{context}\n";

    fn flow() -> DataFlow {
        DataFlow {
            id: "DF1".into(),
            source: "E1".into(),
            destination: "P1".into(),
            data_type: "camera images/video".into(),
            sensitive: None,
            sensitive_info: "visual scene data".into(),
            description: "Transfer of camera data to sensor fusion.".into(),
            lifecycle_stage: "Data Collection to Data Processing".into(),
        }
    }

    fn scored(id: &str, source: KbSource, text: &str) -> ScoredFragment<f64> {
        ScoredFragment {
            fragment: KnowledgeFragment {
                fragment_id: id.into(),
                source_kb: source,
                text: text.into(),
                origin_path: id.into(),
            },
            similarity: 0.5,
        }
    }

    #[test]
    fn unknown_placeholder_rejected() {
        let r = parse_template("hello {foo} {context}");
        assert!(matches!(r, Err(TemplateError::UnknownPlaceholder(n)) if n == "foo"));
    }

    #[test]
    fn missing_context_rejected() {
        let r = parse_template("just {df_id}");
        assert!(matches!(r, Err(TemplateError::MissingContextPlaceholder)));
    }

    #[test]
    fn instantiate_fills_metadata_and_keeps_context() {
        let template = parse_template(MINI_TEMPLATE).unwrap();
        let p = instantiate(&template, &flow());
        assert!(p.text_with_context_hole.contains("camera images/video"));
        assert!(p.text_with_context_hole.contains("Data Collection to Data Processing"));
        assert!(p.text_with_context_hole.contains("Sensitive: true"));
        assert!(p.text_with_context_hole.contains("{context}"));
        assert_eq!(instantiate(&template, &flow()), p);
    }

    #[test]
    fn sensitive_false_when_info_empty() {
        let template = parse_template(MINI_TEMPLATE).unwrap();
        let mut f = flow();
        f.sensitive_info = String::new();
        let p = instantiate(&template, &f);
        assert!(p.text_with_context_hole.contains("Sensitive: false"));
    }

    #[test]
    fn assemble_labels_fragments_in_rank_order() {
        let template = parse_template(MINI_TEMPLATE).unwrap();
        let p = instantiate(&template, &flow());
        let frags = vec![
            scored("l1", KbSource::Linddun, "linkability of events"),
            scored("a1", KbSource::AiPrivacyKb, "model inversion"),
        ];
        let out = assemble(&p, &frags);
        let li = out.text.find("[LINDDUN] linkability of events").unwrap();
        let ai = out.text.find("[AI_PRIVACY_KB] model inversion").unwrap();
        assert!(li < ai);
        assert!(!out.text.contains('{'));
        assert_eq!(out.used_fragment_ids, vec!["l1", "a1"]);
    }

    #[test]
    fn empty_fragments_render_sentinel() {
        let template = parse_template(MINI_TEMPLATE).unwrap();
        let p = instantiate(&template, &flow());
        let out = assemble::<f64>(&p, &[]);
        assert!(out.text.contains(EMPTY_CONTEXT_SENTINEL));
        assert!(out.used_fragment_ids.is_empty());
    }

    #[test]
    fn budget_drops_lowest_rank_first() {
        let template = parse_template(MINI_TEMPLATE).unwrap();
        let p = instantiate(&template, &flow());
        let frags = vec![
            scored("a", KbSource::Linddun, &"x".repeat(100)),
            scored("b", KbSource::Linddun, &"y".repeat(100)),
            scored("c", KbSource::Linddun, &"z".repeat(100)),
        ];
        let full = assemble(&p, &frags);
        let budget = full.text.chars().count() - 1;
        let (out, dropped) = assemble_with_budget(&p, &frags, Some(budget));
        assert_eq!(dropped, 1);
        assert_eq!(out.used_fragment_ids, vec!["a", "b"]);
    }
}
