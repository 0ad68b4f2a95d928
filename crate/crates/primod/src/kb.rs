//! Knowledge-base loading, validation, and chunking.
//!
//! Two knowledge bases feed the retrieval pipeline: the LINDDUN taxonomy
//! (a tree of threat nodes per category) and the AI privacy attack catalog
//! (a flat list of threat entries). Both are loaded from JSON, validated,
//! rendered to prose, and cut into concept-level fragments for embedding.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default fragment size cap, in characters.
pub const DEFAULT_MAX_CHUNK_CHARS: usize = 1200;

/// The seven LINDDUN privacy threat categories. Closed set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LinddunCategory {
    Linkability,
    Identifiability,
    #[serde(rename = "Non-repudiation")]
    NonRepudiation,
    Detectability,
    #[serde(rename = "Disclosure of Information")]
    DisclosureOfInformation,
    Unawareness,
    #[serde(rename = "Non-compliance")]
    NonCompliance,
}

impl LinddunCategory {
    pub const ALL: [LinddunCategory; 7] = [
        LinddunCategory::Linkability,
        LinddunCategory::Identifiability,
        LinddunCategory::NonRepudiation,
        LinddunCategory::Detectability,
        LinddunCategory::DisclosureOfInformation,
        LinddunCategory::Unawareness,
        LinddunCategory::NonCompliance,
    ];

    /// Canonical display name.
    pub fn name(self) -> &'static str {
        match self {
            LinddunCategory::Linkability => "Linkability",
            LinddunCategory::Identifiability => "Identifiability",
            LinddunCategory::NonRepudiation => "Non-repudiation",
            LinddunCategory::Detectability => "Detectability",
            LinddunCategory::DisclosureOfInformation => "Disclosure of Information",
            LinddunCategory::Unawareness => "Unawareness",
            LinddunCategory::NonCompliance => "Non-compliance",
        }
    }

    /// Short abbreviation, as used in per-flow category tables.
    pub fn abbrev(self) -> &'static str {
        match self {
            LinddunCategory::Linkability => "L",
            LinddunCategory::Identifiability => "I",
            LinddunCategory::NonRepudiation => "NR",
            LinddunCategory::Detectability => "DT",
            LinddunCategory::DisclosureOfInformation => "DI",
            LinddunCategory::Unawareness => "U",
            LinddunCategory::NonCompliance => "NC",
        }
    }

    /// Parse a category from its canonical name (case-insensitive) or from
    /// any of the documented abbreviations: L, I, NR/Nr, DT/D, DI/DD, U, NC/Nc.
    pub fn parse(s: &str) -> Option<LinddunCategory> {
        let t = s.trim();
        match t {
            "L" => return Some(LinddunCategory::Linkability),
            "I" => return Some(LinddunCategory::Identifiability),
            "NR" | "Nr" => return Some(LinddunCategory::NonRepudiation),
            "DT" | "D" => return Some(LinddunCategory::Detectability),
            "DI" | "DD" => return Some(LinddunCategory::DisclosureOfInformation),
            "U" => return Some(LinddunCategory::Unawareness),
            "NC" | "Nc" => return Some(LinddunCategory::NonCompliance),
            _ => {}
        }
        let lower = t.to_lowercase();
        Self::ALL
            .into_iter()
            .find(|c| c.name().to_lowercase() == lower)
    }
}

impl fmt::Display for LinddunCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which knowledge base a fragment or threat attribution came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum KbSource {
    #[serde(rename = "LINDDUN")]
    Linddun,
    #[serde(rename = "AI_PRIVACY_KB")]
    AiPrivacyKb,
}

impl KbSource {
    pub fn label(self) -> &'static str {
        match self {
            KbSource::Linddun => "LINDDUN",
            KbSource::AiPrivacyKb => "AI_PRIVACY_KB",
        }
    }

    pub fn parse(s: &str) -> Option<KbSource> {
        match s.trim() {
            "LINDDUN" => Some(KbSource::Linddun),
            "AI_PRIVACY_KB" => Some(KbSource::AiPrivacyKb),
            _ => None,
        }
    }
}

impl fmt::Display for KbSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Bibliographic reference attached to an AI privacy KB entry.
/// Any subset of fields may be empty except `title`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    #[serde(rename = "type", default)]
    pub kind: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub authors: Vec<String>,
    #[serde(default, alias = "journal")]
    pub venue: String,
    #[serde(default)]
    pub year: String,
    #[serde(default)]
    pub pages: String,
    #[serde(default)]
    pub url: String,
}

/// One entry of the AI model-centric privacy attack knowledge base.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AiPrivacyEntry {
    #[serde(rename = "threatId")]
    pub threat_id: String,
    #[serde(rename = "privacyThreatName")]
    pub name: String,
    #[serde(rename = "flowType", default)]
    pub flow_type: String,
    #[serde(rename = "aiLifecycleStage", default)]
    pub lifecycle_stage: String,
    #[serde(rename = "shortDescription")]
    pub short_description: String,
    #[serde(rename = "privacyThreatJustification", default)]
    pub justification: String,
    #[serde(default)]
    pub reference: Reference,
}

/// One node of the LINDDUN taxonomy tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinddunNode {
    pub category: LinddunCategory,
    pub node_id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub examples: Vec<String>,
    #[serde(default)]
    pub criteria: Vec<String>,
    #[serde(default)]
    pub impacts: Vec<String>,
    #[serde(default)]
    pub children: Vec<LinddunNode>,
}

/// A concept-level chunk of one KB, ready for embedding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeFragment {
    pub fragment_id: String,
    pub source_kb: KbSource,
    pub text: String,
    pub origin_path: String,
}

#[derive(Debug, Error)]
pub enum KbError {
    #[error("malformed KB file {path}: {reason}")]
    MalformedFile { path: String, reason: String },
    #[error("entry {threat_id}: missing or empty field `{field}`")]
    MissingField { threat_id: String, field: String },
    #[error("duplicate threatId `{0}`")]
    DuplicateThreatId(String),
    #[error("LINDDUN KB is missing categories: {}", .0.iter().map(|c| c.name()).collect::<Vec<_>>().join(", "))]
    MissingCategory(Vec<LinddunCategory>),
    #[error("duplicate node_id `{0}` in LINDDUN KB")]
    DuplicateNodeId(String),
}

/// Load and validate the AI privacy KB (array of catalog entries).
pub fn load_ai_privacy_kb(path: &Path) -> Result<Vec<AiPrivacyEntry>, KbError> {
    let text = std::fs::read_to_string(path).map_err(|e| KbError::MalformedFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let entries: Vec<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| KbError::MalformedFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    let mut out = Vec::with_capacity(entries.len());
    let mut seen_ids = BTreeSet::new();
    for value in entries {
        // Field-level diagnostics: resolve the threatId first so schema
        // errors can name the entry they belong to.
        let threat_id = value
            .get("threatId")
            .and_then(|v| v.as_str())
            .unwrap_or("")
            .to_string();
        if threat_id.is_empty() {
            return Err(KbError::MissingField {
                threat_id: "<unknown>".into(),
                field: "threatId".into(),
            });
        }
        let entry: AiPrivacyEntry =
            serde_json::from_value(value).map_err(|e| KbError::MissingField {
                threat_id: threat_id.clone(),
                field: field_from_serde_error(&e),
            })?;
        if entry.name.trim().is_empty() {
            return Err(KbError::MissingField {
                threat_id,
                field: "privacyThreatName".into(),
            });
        }
        if entry.short_description.trim().is_empty() {
            return Err(KbError::MissingField {
                threat_id,
                field: "shortDescription".into(),
            });
        }
        if !seen_ids.insert(entry.threat_id.clone()) {
            return Err(KbError::DuplicateThreatId(entry.threat_id));
        }
        out.push(entry);
    }
    Ok(out)
}

fn field_from_serde_error(e: &serde_json::Error) -> String {
    // serde reports "missing field `name`"; pull the backticked name out.
    let msg = e.to_string();
    if let Some(start) = msg.find('`') {
        if let Some(end) = msg[start + 1..].find('`') {
            return msg[start + 1..start + 1 + end].to_string();
        }
    }
    msg
}

/// Load and validate the LINDDUN KB (array of category root nodes).
pub fn load_linddun_kb(path: &Path) -> Result<Vec<LinddunNode>, KbError> {
    let text = std::fs::read_to_string(path).map_err(|e| KbError::MalformedFile {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    let roots: Vec<LinddunNode> =
        serde_json::from_str(&text).map_err(|e| KbError::MalformedFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;

    let present: BTreeSet<LinddunCategory> = roots.iter().map(|n| n.category).collect();
    let missing: Vec<LinddunCategory> = LinddunCategory::ALL
        .into_iter()
        .filter(|c| !present.contains(c))
        .collect();
    if !missing.is_empty() {
        return Err(KbError::MissingCategory(missing));
    }

    // node_id uniqueness across the whole tree; a child that repeats an
    // ancestor id (the only way to encode a cycle in a serde tree) trips this.
    let mut seen = BTreeSet::new();
    fn walk(node: &LinddunNode, seen: &mut BTreeSet<String>) -> Result<(), KbError> {
        if !seen.insert(node.node_id.clone()) {
            return Err(KbError::DuplicateNodeId(node.node_id.clone()));
        }
        for child in &node.children {
            walk(child, seen)?;
        }
        Ok(())
    }
    for root in &roots {
        walk(root, &mut seen)?;
    }
    Ok(roots)
}

/// Render a LINDDUN node (without its children) to retrieval prose.
pub fn render_linddun_node(node: &LinddunNode) -> String {
    let mut parts = vec![format!("{}.", node.title)];
    if !node.description.trim().is_empty() {
        parts.push(node.description.trim().to_string());
    }
    if !node.examples.is_empty() {
        parts.push(format!("Examples: {}.", node.examples.join("; ")));
    }
    if !node.criteria.is_empty() {
        parts.push(format!("Criteria: {}.", node.criteria.join("; ")));
    }
    if !node.impacts.is_empty() {
        parts.push(format!("Impacts: {}.", node.impacts.join("; ")));
    }
    parts.join(" ")
}

/// Render an AI privacy KB entry to retrieval prose.
pub fn render_ai_entry(entry: &AiPrivacyEntry) -> String {
    let mut parts = vec![format!("{}.", entry.name)];
    if !entry.short_description.trim().is_empty() {
        parts.push(entry.short_description.trim().to_string());
    }
    if !entry.justification.trim().is_empty() {
        parts.push(format!("Justification: {}", entry.justification.trim()));
    }
    if !entry.flow_type.trim().is_empty() {
        parts.push(format!("Flow type: {}.", entry.flow_type.trim()));
    }
    if !entry.lifecycle_stage.trim().is_empty() {
        parts.push(format!("AI lifecycle stage: {}.", entry.lifecycle_stage.trim()));
    }
    parts.join(" ")
}

/// Cut both KBs into concept-level fragments. Each taxonomy node and each
/// AI entry is rendered and split on its own, so no fragment spans two
/// nodes. Deterministic: identical inputs and config give identical output.
pub fn chunk_kb(
    linddun: &[LinddunNode],
    ai: &[AiPrivacyEntry],
    max_chunk_chars: usize,
) -> Vec<KnowledgeFragment> {
    let mut fragments = Vec::new();
    for root in linddun {
        chunk_node(root, &format!("linddun/{}", root.node_id), max_chunk_chars, &mut fragments);
    }
    for entry in ai {
        let origin = format!("ai/{}", entry.threat_id);
        push_fragments(
            &render_ai_entry(entry),
            KbSource::AiPrivacyKb,
            &origin,
            max_chunk_chars,
            &mut fragments,
        );
    }
    fragments
}

fn chunk_node(
    node: &LinddunNode,
    origin: &str,
    max_chunk_chars: usize,
    out: &mut Vec<KnowledgeFragment>,
) {
    push_fragments(
        &render_linddun_node(node),
        KbSource::Linddun,
        origin,
        max_chunk_chars,
        out,
    );
    for child in &node.children {
        chunk_node(child, &format!("{origin}/{}", child.node_id), max_chunk_chars, out);
    }
}

fn push_fragments(
    text: &str,
    source_kb: KbSource,
    origin: &str,
    max_chunk_chars: usize,
    out: &mut Vec<KnowledgeFragment>,
) {
    if text.is_empty() {
        return;
    }
    for (i, piece) in split_text(text, max_chunk_chars).into_iter().enumerate() {
        out.push(KnowledgeFragment {
            fragment_id: format!("{origin}#{i:03}"),
            source_kb,
            text: piece,
            origin_path: origin.to_string(),
        });
    }
}

/// Recursive, lossless text splitter: paragraph boundaries first, then
/// sentence boundaries, then a hard cut. Pieces concatenate back to the
/// input exactly (separators stay attached to the preceding piece), and
/// every piece is at most `max` characters.
pub fn split_text(text: &str, max: usize) -> Vec<String> {
    assert!(max > 0, "max_chunk_chars must be positive");
    split_level(text, max, 0)
}

fn split_level(text: &str, max: usize, level: usize) -> Vec<String> {
    if text.chars().count() <= max {
        return vec![text.to_string()];
    }
    let segments = match level {
        0 => split_keep(text, |rest| rest.starts_with("\n\n").then_some(2)),
        1 => split_keep(text, sentence_break),
        _ => return hard_cut(text, max),
    };
    if segments.len() <= 1 {
        // No boundary at this level; fall through to the finer one.
        return split_level(text, max, level + 1);
    }
    // Greedy packing: accumulate whole segments up to `max`; a segment that
    // is itself oversized gets split at the next level.
    let mut chunks: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut current_len = 0usize;
    for seg in segments {
        let seg_len = seg.chars().count();
        if current_len + seg_len > max && current_len > 0 {
            chunks.push(std::mem::take(&mut current));
            current_len = 0;
        }
        if seg_len > max {
            chunks.extend(split_level(&seg, max, level + 1));
        } else {
            current.push_str(&seg);
            current_len += seg_len;
        }
    }
    if !current.is_empty() {
        chunks.push(current);
    }
    chunks
}

/// Split `text` into pieces, keeping each matched separator attached to the
/// piece before it. `sep` inspects the remaining input at a byte offset and
/// returns the separator's byte length when one starts there.
fn split_keep(text: &str, sep: impl Fn(&str) -> Option<usize>) -> Vec<String> {
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < text.len() {
        if !text.is_char_boundary(i) {
            i += 1;
            continue;
        }
        if let Some(len) = sep(&text[i..]) {
            let end = i + len;
            pieces.push(text[start..end].to_string());
            start = end;
            i = end;
        } else {
            i += 1;
        }
    }
    if start < text.len() {
        pieces.push(text[start..].to_string());
    }
    pieces
}

/// A sentence break is '.', '!' or '?' followed by whitespace (the
/// whitespace is part of the separator), or a single newline.
fn sentence_break(rest: &str) -> Option<usize> {
    let mut chars = rest.chars();
    let first = chars.next()?;
    if first == '\n' {
        return Some(1);
    }
    if matches!(first, '.' | '!' | '?') {
        let mut len = first.len_utf8();
        let mut any_ws = false;
        for c in chars {
            if c.is_whitespace() && c != '\n' {
                any_ws = true;
                len += c.len_utf8();
            } else {
                break;
            }
        }
        if any_ws {
            return Some(len);
        }
    }
    None
}

fn hard_cut(text: &str, max: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    chars
        .chunks(max)
        .map(|c| c.iter().collect::<String>())
        .collect()
}
