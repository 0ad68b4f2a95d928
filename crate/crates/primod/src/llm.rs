//! Chat-completion client: send assembled prompts, validate the structured
//! JSON reply, and repair or re-prompt when the reply does not parse.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{KbSource, LinddunCategory};
use crate::prompt::AugmentedPrompt;

/// Endpoint and decoding configuration for one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub endpoint_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub max_repair_attempts: u32,
    #[serde(with = "duration_secs")]
    pub request_timeout: Duration,
    /// Path of keys to the completion text in the response JSON.
    pub response_field_path: Vec<String>,
}

mod duration_secs {
    use super::Duration;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(secs))
    }
}

impl ModelConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        ModelConfig {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            temperature: 0.7,
            top_p: 0.9,
            max_tokens: 1024,
            max_repair_attempts: 2,
            request_timeout: Duration::from_secs(120),
            response_field_path: vec!["response".to_string()],
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.temperature < 0.0 {
            return Err(LlmError::InvalidConfig("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(LlmError::InvalidConfig("top_p must be in (0, 1]".into()));
        }
        if self.max_tokens < 1 {
            return Err(LlmError::InvalidConfig("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// One identified threat, validated against the closed enums.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreatRecord {
    pub name: String,
    pub justification: String,
    pub linddun_category: LinddunCategory,
    pub ai_lifecycle_stage: String,
    pub source: KbSource,
}

/// Per-flow analysis output. `model_name`, `run_id` and `raw_attempts` are
/// run metadata; they are omitted from serialization when unset so a bare
/// `{df_id, identified_threats}` document round-trips unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub df_id: String,
    pub identified_threats: Vec<ThreatRecord>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub model_name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub run_id: String,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub raw_attempts: u32,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("endpoint error (status {status}): {body_excerpt}")]
    EndpointError { status: u16, body_excerpt: String },
    #[error("endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("model returned an empty completion")]
    EmptyCompletion,
    #[error("completion is not JSON: {0}")]
    NotJson(String),
    #[error("schema violation at `{path}`: {reason}")]
    SchemaViolation { path: String, reason: String },
    #[error("df_id mismatch: expected `{expected}`, got `{actual}`")]
    DfIdMismatch { expected: String, actual: String },
    #[error("unknown LINDDUN category `{0}`")]
    UnknownCategory(String),
    #[error("unknown source `{0}` (expected LINDDUN or AI_PRIVACY_KB)")]
    UnknownSource(String),
    #[error("repairs exhausted after {attempts} attempts; last error: {last_error}; last raw text: {last_raw}")]
    ExhaustedRepairs {
        attempts: u32,
        last_error: String,
        last_raw: String,
    },
}

/// Send one prompt and return the raw completion string.
pub fn generate(prompt: &str, config: &ModelConfig) -> Result<String, LlmError> {
    config.validate()?;
    let body = serde_json::json!({
        "model": config.model_name,
        "prompt": prompt,
        "options": {
            "temperature": config.temperature,
            "top_p": config.top_p,
            "num_predict": config.max_tokens,
        },
        "format": "json",
        "stream": false,
    });
    let response = ureq::post(&config.endpoint_url)
        .timeout(config.request_timeout)
        .send_json(body)
        .map_err(|e| match e {
            ureq::Error::Status(status, resp) => {
                let body_excerpt = resp
                    .into_string()
                    .unwrap_or_default()
                    .chars()
                    .take(200)
                    .collect();
                LlmError::EndpointError {
                    status,
                    body_excerpt,
                }
            }
            ureq::Error::Transport(t) => {
                let msg = t.to_string();
                if msg.contains("timed out") || msg.contains("timeout") {
                    LlmError::Timeout(config.request_timeout)
                } else {
                    LlmError::Unreachable(msg)
                }
            }
        })?;
    let value: serde_json::Value = response
        .into_json()
        .map_err(|e| LlmError::NotJson(e.to_string()))?;
    let mut cursor = &value;
    for key in &config.response_field_path {
        cursor = cursor.get(key).ok_or_else(|| LlmError::SchemaViolation {
            path: key.clone(),
            reason: "missing completion-text field in endpoint response".into(),
        })?;
    }
    let text = cursor.as_str().ok_or_else(|| LlmError::SchemaViolation {
        path: config.response_field_path.join("."),
        reason: "completion-text field is not a string".into(),
    })?;
    if text.trim().is_empty() {
        return Err(LlmError::EmptyCompletion);
    }
    Ok(text.to_string())
}

/// Strict validation of a raw completion against the output schema.
/// Category strings are normalized through the abbreviation table before
/// enum parsing; a df_id other than `expected_df_id` is an error.
pub fn parse_result(raw: &str, expected_df_id: &str) -> Result<AnalysisResult, LlmError> {
    let value: serde_json::Value =
        serde_json::from_str(raw).map_err(|e| LlmError::NotJson(e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| LlmError::SchemaViolation {
        path: "$".into(),
        reason: "top level must be a JSON object".into(),
    })?;
    let df_id = obj
        .get("df_id")
        .and_then(|v| v.as_str())
        .ok_or_else(|| LlmError::SchemaViolation {
            path: "df_id".into(),
            reason: "missing or not a string".into(),
        })?;
    if df_id != expected_df_id {
        return Err(LlmError::DfIdMismatch {
            expected: expected_df_id.to_string(),
            actual: df_id.to_string(),
        });
    }
    let threats_value = obj
        .get("identified_threats")
        .ok_or_else(|| LlmError::SchemaViolation {
            path: "identified_threats".into(),
            reason: "missing".into(),
        })?;
    let threats_array = threats_value
        .as_array()
        .ok_or_else(|| LlmError::SchemaViolation {
            path: "identified_threats".into(),
            reason: "not an array".into(),
        })?;
    let mut threats = Vec::with_capacity(threats_array.len());
    for (i, t) in threats_array.iter().enumerate() {
        threats.push(parse_threat(t, i)?);
    }
    Ok(AnalysisResult {
        df_id: df_id.to_string(),
        identified_threats: threats,
        model_name: String::new(),
        run_id: String::new(),
        raw_attempts: 0,
    })
}

fn parse_threat(value: &serde_json::Value, index: usize) -> Result<ThreatRecord, LlmError> {
    let path = |field: &str| format!("identified_threats[{index}].{field}");
    let obj = value.as_object().ok_or_else(|| LlmError::SchemaViolation {
        path: format!("identified_threats[{index}]"),
        reason: "not an object".into(),
    })?;
    let get_string = |field: &str| -> Result<String, LlmError> {
        let s = obj
            .get(field)
            .and_then(|v| v.as_str())
            .ok_or_else(|| LlmError::SchemaViolation {
                path: path(field),
                reason: "missing or not a string".into(),
            })?;
        if s.trim().is_empty() {
            return Err(LlmError::SchemaViolation {
                path: path(field),
                reason: "empty".into(),
            });
        }
        Ok(s.to_string())
    };
    let category_raw = get_string("linddun_category")?;
    let linddun_category = LinddunCategory::parse(&category_raw)
        .ok_or_else(|| LlmError::UnknownCategory(category_raw.clone()))?;
    let source_raw = get_string("source")?;
    let source =
        KbSource::parse(&source_raw).ok_or_else(|| LlmError::UnknownSource(source_raw.clone()))?;
    Ok(ThreatRecord {
        name: get_string("name")?,
        justification: get_string("justification")?,
        linddun_category,
        ai_lifecycle_stage: get_string("ai_lifecycle_stage")?,
        source,
    })
}

/// Extract the outermost balanced JSON object from free text (handles the
/// common "Here is the analysis: {...}" preamble failure mode). Respects
/// string literals and escapes.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Full analysis of one flow: generate, validate, and on failure climb the
/// repair ladder (mechanical JSON extraction first, then re-prompting with
/// the validation error appended). Issues at most
/// `1 + max_repair_attempts` generate calls.
pub fn analyze_flow(
    prompt: &AugmentedPrompt,
    config: &ModelConfig,
    run_id: &str,
) -> Result<AnalysisResult, LlmError> {
    let mut attempts = 0u32;
    let mut current_prompt = prompt.text.clone();
    let mut last_error = String::new();
    let mut last_raw = String::new();
    while attempts < 1 + config.max_repair_attempts {
        attempts += 1;
        let raw = generate(&current_prompt, config)?;
        match try_parse_with_repair(&raw, &prompt.df_id) {
            Ok(mut result) => {
                result.model_name = config.model_name.clone();
                result.run_id = run_id.to_string();
                result.raw_attempts = attempts;
                return Ok(result);
            }
            Err(e) => {
                last_error = e.to_string();
                last_raw = raw;
                current_prompt = format!(
                    "{}\n\nYour previous reply was rejected: {}. \
                     Return ONLY a single JSON object matching the required schema.",
                    prompt.text, last_error
                );
            }
        }
    }
    Err(LlmError::ExhaustedRepairs {
        attempts,
        last_error,
        last_raw: last_raw.chars().take(500).collect(),
    })
}

fn try_parse_with_repair(raw: &str, df_id: &str) -> Result<AnalysisResult, LlmError> {
    match parse_result(raw, df_id) {
        Ok(r) => Ok(r),
        Err(first_err) => {
            if let Some(extracted) = extract_json_object(raw) {
                if extracted != raw.trim() {
                    return parse_result(extracted, df_id).map_err(|_| first_err);
                }
            }
            Err(first_err)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // The structured output for DF5 as published, verbatim.
    pub const DF5_PAYLOAD: &str = r#"{
"df_id": "DF5",
"identified_threats":[ {
    "name": "Unencrypted Data Transfer",
    "justification": "Sensitive biometric data may be exposed if transferred without encryption.",
    "linddun_category": "Disclosure of information",
    "ai_lifecycle_stage": "Inference/Storage",
    "source": "LINDDUN"
    },
    {
    "name": "Model Inversion Attack",
    "justification": "Stored embeddings could be exploited to reconstruct facial traits.",
    "linddun_category": "Disclosure of information",
    "ai_lifecycle_stage": "Inference",
    "source": "AI_PRIVACY_KB"
    }]}"#;

    #[test]
    fn parses_df5_payload() {
        let result = parse_result(DF5_PAYLOAD, "DF5").unwrap();
        assert_eq!(result.identified_threats.len(), 2);
        let t0 = &result.identified_threats[0];
        assert_eq!(t0.name, "Unencrypted Data Transfer");
        assert_eq!(t0.linddun_category, LinddunCategory::DisclosureOfInformation);
        assert_eq!(t0.source, KbSource::Linddun);
        let t1 = &result.identified_threats[1];
        assert_eq!(t1.name, "Model Inversion Attack");
        assert_eq!(t1.linddun_category, LinddunCategory::DisclosureOfInformation);
        assert_eq!(t1.source, KbSource::AiPrivacyKb);
    }

    #[test]
    fn unknown_category_rejected() {
        let raw = r#"{"df_id":"DF1","identified_threats":[{"name":"x","justification":"y","linddun_category":"Privacy","ai_lifecycle_stage":"Inference","source":"LINDDUN"}]}"#;
        assert!(matches!(
            parse_result(raw, "DF1"),
            Err(LlmError::UnknownCategory(c)) if c == "Privacy"
        ));
    }

    #[test]
    fn empty_threat_list_is_valid() {
        let result = parse_result(r#"{"df_id":"DF5","identified_threats":[]}"#, "DF5").unwrap();
        assert!(result.identified_threats.is_empty());
    }

    #[test]
    fn df_id_mismatch_rejected() {
        assert!(matches!(
            parse_result(r#"{"df_id":"DF2","identified_threats":[]}"#, "DF1"),
            Err(LlmError::DfIdMismatch { .. })
        ));
    }

    #[test]
    fn parse_serialize_round_trip() {
        let result = parse_result(DF5_PAYLOAD, "DF5").unwrap();
        let serialized = serde_json::to_string(&result).unwrap();
        let reparsed = parse_result(&serialized, "DF5").unwrap();
        assert_eq!(result, reparsed);
    }

    #[test]
    fn extract_json_strips_preamble() {
        let wrapped = format!("Here is the analysis: {DF5_PAYLOAD}\nLet me know!");
        let extracted = extract_json_object(&wrapped).unwrap();
        let result = parse_result(extracted, "DF5").unwrap();
        assert_eq!(result.identified_threats.len(), 2);
    }

    #[test]
    fn extract_json_respects_braces_in_strings() {
        let raw = r#"note {"df_id":"D","identified_threats":[],"x":"brace } in string"} tail"#;
        let extracted = extract_json_object(raw).unwrap();
        assert!(serde_json::from_str::<serde_json::Value>(extracted).is_ok());
    }

    #[test]
    fn config_invariants_checked() {
        let mut config = ModelConfig::new("http://localhost", "m");
        config.top_p = 1.5;
        assert!(matches!(config.validate(), Err(LlmError::InvalidConfig(_))));
        config.top_p = 0.9;
        config.temperature = -0.1;
        assert!(matches!(config.validate(), Err(LlmError::InvalidConfig(_))));
    }
}
