//! Reward scoring over reasoning transcripts: format adherence, thresholded
//! accuracy against ground truth, and group-relative advantage normalization
//! for an external trainer. The policy-gradient update itself is out of
//! scope.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::pathology::Pathology;
use crate::reasoning::{parse_transcript, DiagnosisVector, TranscriptFormat};

pub const DEFAULT_FORMAT_WEIGHT: f64 = 0.1;
pub const DEFAULT_ACCURACY_WEIGHT: f64 = 0.9;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RewardError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("ground truth error: {0}")]
    GroundTruth(String),
    #[error("batch io error: {0}")]
    BatchIo(String),
}

/// Per-study truth labels. Uncertain (-1) and unlabeled entries are excluded
/// from accuracy denominators.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthLabel {
    Present,
    Absent,
    Uncertain,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GroundTruth {
    pub study_id: String,
    pub labels: BTreeMap<Pathology, TruthLabel>,
}

impl GroundTruth {
    pub fn new(
        study_id: impl Into<String>,
        labels: BTreeMap<Pathology, TruthLabel>,
    ) -> Result<GroundTruth, RewardError> {
        for p in labels.keys() {
            if !Pathology::EVAL_LABELS.contains(p) {
                return Err(RewardError::InvalidInput(format!(
                    "{p} is not an evaluation label"
                )));
            }
        }
        Ok(GroundTruth {
            study_id: study_id.into(),
            labels,
        })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RewardWeights {
    pub format: f64,
    pub accuracy: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            format: DEFAULT_FORMAT_WEIGHT,
            accuracy: DEFAULT_ACCURACY_WEIGHT,
        }
    }
}

impl RewardWeights {
    pub fn new(format: f64, accuracy: f64) -> Result<RewardWeights, RewardError> {
        if (format + accuracy - 1.0).abs() > 1e-9 || format < 0.0 || accuracy < 0.0 {
            return Err(RewardError::InvalidInput(
                "reward weights must be nonnegative and sum to 1".into(),
            ));
        }
        Ok(RewardWeights { format, accuracy })
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RewardBreakdown {
    pub format: u8,
    pub accuracy: f64,
    pub total: f64,
    pub weights: RewardWeights,
    /// Set when accuracy had an empty denominator (no 0/1 labels).
    pub empty_denominator: bool,
}

/// 1 iff the transcript parses under the configured delimiters.
pub fn format_reward(raw: &str, format: &TranscriptFormat) -> u8 {
    u8::from(parse_transcript(raw, format).is_ok())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyOutcome {
    pub value: f64,
    pub labeled: usize,
    pub matches: usize,
    pub empty_denominator: bool,
}

/// Binarize predictions at `threshold` and count matches over the labels that
/// are present/absent in the ground truth.
pub fn accuracy_reward(
    pred: &DiagnosisVector,
    gt: &GroundTruth,
    threshold: f64,
) -> Result<AccuracyOutcome, RewardError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(RewardError::InvalidInput(format!(
            "threshold {threshold} outside (0, 1)"
        )));
    }
    let mut labeled = 0usize;
    let mut matches = 0usize;
    for (p, label) in &gt.labels {
        let expected = match label {
            TruthLabel::Present => true,
            TruthLabel::Absent => false,
            TruthLabel::Uncertain => continue,
        };
        let Some(&prob) = pred.probabilities.get(p) else {
            continue;
        };
        labeled += 1;
        if (prob >= threshold) == expected {
            matches += 1;
        }
    }
    if labeled == 0 {
        return Ok(AccuracyOutcome {
            value: 0.0,
            labeled: 0,
            matches: 0,
            empty_denominator: true,
        });
    }
    Ok(AccuracyOutcome {
        value: matches as f64 / labeled as f64,
        labeled,
        matches,
        empty_denominator: false,
    })
}

/// Full reward: format gates accuracy — an unparsable answer cannot score.
pub fn total_reward(
    raw: &str,
    gt: &GroundTruth,
    weights: &RewardWeights,
    threshold: f64,
    format: &TranscriptFormat,
) -> Result<RewardBreakdown, RewardError> {
    let parsed = parse_transcript(raw, format);
    let (format_score, accuracy, empty) = match parsed {
        Ok(transcript) => {
            let outcome = accuracy_reward(&transcript.answer, gt, threshold)?;
            (1u8, outcome.value, outcome.empty_denominator)
        }
        Err(_) => (0u8, 0.0, false),
    };
    Ok(RewardBreakdown {
        format: format_score,
        accuracy,
        total: weights.format * f64::from(format_score) + weights.accuracy * accuracy,
        weights: weights.clone(),
        empty_denominator: empty,
    })
}

/// Group-relative advantages: `(r_i - mean) / (population std + epsilon)`.
pub fn group_advantage(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::InvalidInput(
            "group advantage needs at least two rewards".into(),
        ));
    }
    if !(epsilon > 0.0) {
        return Err(RewardError::InvalidInput("epsilon must be positive".into()));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + epsilon;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Load a ground-truth CSV: header `study_id` plus the fourteen label
/// columns; cells are `1`, `0`, `-1` or blank.
pub fn load_ground_truth_csv(path: &Path) -> Result<Vec<GroundTruth>, RewardError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| RewardError::GroundTruth(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| RewardError::GroundTruth(e.to_string()))?
        .clone();
    let mut columns = Vec::new();
    for (i, name) in headers.iter().enumerate() {
        if i == 0 {
            if name != "study_id" {
                return Err(RewardError::GroundTruth(
                    "first column must be study_id".into(),
                ));
            }
            continue;
        }
        let p = Pathology::parse_label(name)
            .map_err(|e| RewardError::GroundTruth(e.to_string()))?;
        columns.push(p);
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| RewardError::GroundTruth(e.to_string()))?;
        let study_id = record
            .get(0)
            .ok_or_else(|| RewardError::GroundTruth("missing study_id".into()))?
            .to_string();
        let mut labels = BTreeMap::new();
        for (i, &p) in columns.iter().enumerate() {
            let cell = record.get(i + 1).unwrap_or("").trim();
            let label = match cell {
                "" => continue,
                "1" => TruthLabel::Present,
                "0" => TruthLabel::Absent,
                "-1" => TruthLabel::Uncertain,
                other => {
                    return Err(RewardError::GroundTruth(format!(
                        "bad ground-truth cell {other:?} for {p}"
                    )))
                }
            };
            labels.insert(p, label);
        }
        out.push(GroundTruth::new(study_id, labels)?);
    }
    Ok(out)
}

#[derive(Debug, serde::Deserialize)]
struct TranscriptRecord {
    study_id: String,
    transcript: String,
}

#[derive(Debug, serde::Serialize)]
struct ScoredRecord<'a> {
    study_id: &'a str,
    #[serde(flatten)]
    breakdown: RewardBreakdown,
}

/// Score a JSONL transcript batch against a ground-truth set, writing one
/// breakdown per input line, order-preserving. Records without matching
/// ground truth score with an empty label set.
pub fn score_batch<R: BufRead, W: Write>(
    transcripts: R,
    ground_truth: &[GroundTruth],
    weights: &RewardWeights,
    threshold: f64,
    format: &TranscriptFormat,
    mut out: W,
) -> Result<usize, RewardError> {
    let mut count = 0;
    for line in transcripts.lines() {
        let line = line.map_err(|e| RewardError::BatchIo(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TranscriptRecord = serde_json::from_str(&line)
            .map_err(|e| RewardError::BatchIo(format!("bad transcript record: {e}")))?;
        let empty_gt = GroundTruth {
            study_id: record.study_id.clone(),
            labels: BTreeMap::new(),
        };
        let gt = ground_truth
            .iter()
            .find(|g| g.study_id == record.study_id)
            .unwrap_or(&empty_gt);
        let breakdown = total_reward(&record.transcript, gt, weights, threshold, format)?;
        let scored = ScoredRecord {
            study_id: &record.study_id,
            breakdown,
        };
        serde_json::to_writer(&mut out, &scored)
            .map_err(|e| RewardError::BatchIo(e.to_string()))?;
        out.write_all(b"\n")
            .map_err(|e| RewardError::BatchIo(e.to_string()))?;
        count += 1;
    }
    Ok(count)
}
