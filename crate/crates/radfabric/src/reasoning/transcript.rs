//! Think-then-answer transcript parsing and rendering.
//!
//! A well-formed transcript carries its reasoning inside `<think>...</think>`
//! delimiter tags followed by a box block whose contents are a JSON object of
//! the fourteen evaluation labels. The delimiters are configurable to match a
//! deployed trainer.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::pathology::Pathology;

use super::DiagnosisVector;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptFormat {
    pub think_open: String,
    pub think_close: String,
    pub box_open: String,
}

impl Default for TranscriptFormat {
    fn default() -> Self {
        TranscriptFormat {
            think_open: "<think>".to_string(),
            think_close: "</think>".to_string(),
            box_open: "\\boxed{".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("missing think span")]
    MissingThink,
    #[error("missing box block")]
    MissingBox,
    #[error("unbalanced box block")]
    UnbalancedBox,
    #[error("box contents are not a JSON object: {0}")]
    BadJson(String),
    #[error("unknown label in box: {0}")]
    UnknownLabel(String),
    #[error("unparsable probability for {label}: {value}")]
    BadProbability { label: String, value: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningTranscript {
    pub raw: String,
    pub think: String,
    pub answer: DiagnosisVector,
    /// Evaluation labels absent from the box, filled with 0.
    pub missing_labels: Vec<Pathology>,
}

/// Render the canonical transcript text for a think span and answer vector.
pub fn render_transcript(
    think: &str,
    answer: &DiagnosisVector,
    format: &TranscriptFormat,
) -> String {
    let mut obj = serde_json::Map::new();
    for p in Pathology::EVAL_LABELS {
        let v = answer.probabilities.get(&p).copied().unwrap_or(0.0);
        obj.insert(
            p.label().to_string(),
            Value::Number(serde_json::Number::from_f64(v).expect("finite probability")),
        );
    }
    let json = Value::Object(obj).to_string();
    // The box opener's brace doubles as the object's opening brace, so the
    // object body goes in without its own outer braces.
    let body = &json[1..json.len() - 1];
    format!(
        "{}{}{}\n{}{}{}",
        format.think_open, think, format.think_close, format.box_open, body, "}"
    )
}

/// Parse a raw model output into a transcript.
///
/// The first think span binds; the first box block after it is the answer.
/// Labels are alias-resolved; missing evaluation labels are filled with 0 and
/// flagged. Probabilities must be JSON numbers in `[0, 1]`; anything else
/// (strings, percentages) is a format error, never silently converted.
pub fn parse_transcript(
    raw: &str,
    format: &TranscriptFormat,
) -> Result<ReasoningTranscript, FormatError> {
    let think_start = raw.find(&format.think_open).ok_or(FormatError::MissingThink)?;
    let after_open = think_start + format.think_open.len();
    let close_rel = raw[after_open..]
        .find(&format.think_close)
        .ok_or(FormatError::MissingThink)?;
    let think = raw[after_open..after_open + close_rel].to_string();
    let after_think = after_open + close_rel + format.think_close.len();

    let box_rel = raw[after_think..]
        .find(&format.box_open)
        .ok_or(FormatError::MissingBox)?;
    let body_start = after_think + box_rel + format.box_open.len();
    let body = extract_braced(&raw[body_start..])?;

    // The box braces are the object's braces; restore them for parsing.
    let value: Value = serde_json::from_str(&format!("{{{body}}}"))
        .map_err(|e| FormatError::BadJson(e.to_string()))?;
    let Value::Object(map) = value else {
        return Err(FormatError::BadJson("expected an object".into()));
    };

    let mut probabilities = BTreeMap::new();
    for (label, v) in map {
        let p = Pathology::parse_label(&label)
            .map_err(|_| FormatError::UnknownLabel(label.clone()))?;
        if !Pathology::EVAL_LABELS.contains(&p) {
            return Err(FormatError::UnknownLabel(label));
        }
        let prob = v.as_f64().filter(|x| (0.0..=1.0).contains(x)).ok_or_else(|| {
            FormatError::BadProbability {
                label: label.clone(),
                value: v.to_string(),
            }
        })?;
        probabilities.insert(p, prob);
    }
    let mut missing_labels = Vec::new();
    for p in Pathology::EVAL_LABELS {
        if !probabilities.contains_key(&p) {
            probabilities.insert(p, 0.0);
            missing_labels.push(p);
        }
    }
    let answer = DiagnosisVector::new(probabilities)
        .map_err(|e| FormatError::BadJson(e.to_string()))?;
    Ok(ReasoningTranscript {
        raw: raw.to_string(),
        think,
        answer,
        missing_labels,
    })
}

/// Take the contents of a `{...}` block starting at the character after the
/// opening brace (already consumed by the box opener), tracking nesting and
/// JSON string state.
fn extract_braced(rest: &str) -> Result<&str, FormatError> {
    let mut depth = 1usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in rest.char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Ok(&rest[..i]);
                }
            }
            _ => {}
        }
    }
    Err(FormatError::UnbalancedBox)
}
