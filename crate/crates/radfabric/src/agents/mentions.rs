//! Pathology mention extraction from report narratives.
//!
//! Case-insensitive phrase matching over a data-file lexicon. A negation cue
//! within five tokens before a phrase flips polarity to negative; an
//! uncertainty cue within the same window marks it uncertain.

use std::path::Path;

use crate::pathology::Pathology;

const DEFAULT_LEXICON: &str = include_str!("../../data/mention_lexicon.txt");
const CUE_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Uncertain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Mention {
    pub pathology: Pathology,
    pub polarity: Polarity,
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    /// Phrase tokens plus target pathology, longest phrases first.
    entries: Vec<(Vec<String>, Pathology)>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::parse(DEFAULT_LEXICON).expect("bundled lexicon is well-formed")
    }
}

impl Lexicon {
    pub fn from_file(path: &Path) -> Result<Lexicon, LexiconError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LexiconError(format!("{}: {e}", path.display())))?;
        Lexicon::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Lexicon, LexiconError> {
        let mut entries = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (phrase, label) = line
                .split_once('|')
                .ok_or_else(|| LexiconError(format!("bad lexicon line: {line:?}")))?;
            let tokens = tokenize(phrase);
            if tokens.is_empty() {
                return Err(LexiconError(format!("empty phrase in line: {line:?}")));
            }
            let pathology = Pathology::parse_label(label.trim())
                .map_err(|e| LexiconError(e.to_string()))?;
            entries.push((tokens, pathology));
        }
        entries.sort_by_key(|(tokens, _)| std::cmp::Reverse(tokens.len()));
        Ok(Lexicon { entries })
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("lexicon error: {0}")]
pub struct LexiconError(pub String);

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_ascii_lowercase())
        .collect()
}

fn is_negation_cue(tokens: &[String], at: usize) -> bool {
    match tokens[at].as_str() {
        "no" | "not" | "without" => true,
        "negative" => tokens.get(at + 1).map(String::as_str) == Some("for"),
        "free" => tokens.get(at + 1).map(String::as_str) == Some("of"),
        _ => false,
    }
}

fn is_uncertainty_cue(token: &str) -> bool {
    matches!(
        token,
        "possible" | "possibly" | "may" | "might" | "suggest" | "suggests" | "suggestive"
    )
}

/// Extract pathology mentions from free-form report text.
pub fn extract_mentions(text: &str, lexicon: &Lexicon) -> Vec<Mention> {
    let tokens = tokenize(text);
    let mut mentions = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let matched = lexicon
            .entries
            .iter()
            .find(|(phrase, _)| tokens[i..].starts_with(phrase.as_slice()));
        let Some((phrase, pathology)) = matched else {
            i += 1;
            continue;
        };
        let window_start = i.saturating_sub(CUE_WINDOW);
        let mut polarity = Polarity::Positive;
        for j in window_start..i {
            if is_negation_cue(&tokens, j) {
                polarity = Polarity::Negative;
                break;
            }
            if is_uncertainty_cue(&tokens[j]) {
                polarity = Polarity::Uncertain;
            }
        }
        mentions.push(Mention {
            pathology: *pathology,
            polarity,
        });
        i += phrase.len();
    }
    mentions
}

#[cfg(test)]
mod tests {
    use super::*;

    fn extract(text: &str) -> Vec<Mention> {
        extract_mentions(text, &Lexicon::default())
    }

    #[test]
    fn positive_mention() {
        assert_eq!(
            extract("a right-sided pneumonia"),
            vec![Mention {
                pathology: Pathology::Pneumonia,
                polarity: Polarity::Positive
            }]
        );
    }

    #[test]
    fn generic_phrases_match_nothing() {
        assert_eq!(extract("negative findings for the lungs"), vec![]);
        assert_eq!(extract(""), vec![]);
    }

    #[test]
    fn negation_within_window_flips_polarity() {
        assert_eq!(
            extract("no pleural effusion"),
            vec![Mention {
                pathology: Pathology::PleuralEffusion,
                polarity: Polarity::Negative
            }]
        );
        assert_eq!(
            extract("the lungs are without focal consolidation"),
            vec![Mention {
                pathology: Pathology::Consolidation,
                polarity: Polarity::Negative
            }]
        );
    }

    #[test]
    fn negation_outside_window_does_not_apply() {
        let text = "no acute process is seen however there is clear evidence of pneumonia";
        assert_eq!(
            extract(text),
            vec![Mention {
                pathology: Pathology::Pneumonia,
                polarity: Polarity::Positive
            }]
        );
    }

    #[test]
    fn uncertainty_cues() {
        assert_eq!(
            extract("findings may suggest early pneumonia"),
            vec![Mention {
                pathology: Pathology::Pneumonia,
                polarity: Polarity::Uncertain
            }]
        );
    }

    #[test]
    fn longest_phrase_wins() {
        // "pleural effusion" must not also emit a bare "effusion" mention.
        let m = extract("small pleural effusion");
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].pathology, Pathology::PleuralEffusion);
    }

    #[test]
    fn multiword_alias_resolves() {
        let m = extract("hazy opacities at the lung bases");
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].pathology, Pathology::LungOpacity);
        assert_eq!(m[0].polarity, Polarity::Positive);
    }
}
