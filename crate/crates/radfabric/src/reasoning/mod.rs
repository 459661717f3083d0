//! Evidence aggregation, cross-validation, think-then-answer transcripts and
//! the deterministic fusion fallback.

mod prompt;
mod remote;
mod transcript;

pub use prompt::build_prompt;
pub use remote::{query_reasoner, ReasonerEndpoint, ReasonerError};
pub use transcript::{
    parse_transcript, render_transcript, FormatError, ReasoningTranscript, TranscriptFormat,
};

use std::collections::BTreeMap;

use crate::agents::{AgentFindingSet, ClinicalReport, Polarity};
use crate::anatomy::AnatomicalDescription;
use crate::pathology::Pathology;

/// Default spread threshold for contradiction flagging.
pub const DEFAULT_DELTA: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReasoningError {
    #[error("invalid evidence package: {0}")]
    InvalidInput(String),
}

/// The aggregated bundle handed to the reasoning stage.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvidencePackage {
    pub study_id: String,
    /// Sorted ascending by agent id.
    pub finding_sets: Vec<AgentFindingSet>,
    pub descriptions: Vec<AnatomicalDescription>,
    pub reports: Vec<ClinicalReport>,
}

/// Canonicalize findings, descriptions and reports into one package.
pub fn assemble_evidence(
    finding_sets: Vec<AgentFindingSet>,
    descriptions: Vec<AnatomicalDescription>,
    reports: Vec<ClinicalReport>,
) -> Result<EvidencePackage, ReasoningError> {
    let Some(first) = finding_sets.first() else {
        return Err(ReasoningError::InvalidInput(
            "at least one finding set is required".into(),
        ));
    };
    let study_id = first.study_id.clone();
    for fs in &finding_sets {
        if fs.study_id != study_id {
            return Err(ReasoningError::InvalidInput(format!(
                "mixed study ids: {:?} and {:?}",
                study_id, fs.study_id
            )));
        }
    }
    for r in &reports {
        if r.study_id != study_id {
            return Err(ReasoningError::InvalidInput(format!(
                "report study id {:?} does not match {:?}",
                r.study_id, study_id
            )));
        }
    }
    let mut finding_sets = finding_sets;
    finding_sets.sort_by_key(|fs| fs.agent_id);
    if finding_sets.windows(2).any(|w| w[0].agent_id == w[1].agent_id) {
        return Err(ReasoningError::InvalidInput("duplicate agent id".into()));
    }
    let mut descriptions = descriptions;
    descriptions.sort_by_key(|d| d.pathology);
    let mut reports = reports;
    reports.sort_by(|a, b| a.agent_name.cmp(&b.agent_name));
    Ok(EvidencePackage {
        study_id,
        finding_sets,
        descriptions,
        reports,
    })
}

/// Per-pathology consistency statistics over the agents that scored it.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PathologyConsistency {
    pub covering_agents: usize,
    /// Scores in agent-id order.
    pub scores: Vec<f64>,
    pub mean: f64,
    /// max - min; zero below two covering agents.
    pub spread: f64,
    pub contradiction: bool,
    /// Sign of (#positive - #negative) report mentions.
    pub report_support: i8,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConsistencyReport {
    pub delta: f64,
    pub per_pathology: BTreeMap<Pathology, PathologyConsistency>,
}

/// Cross-validate agent findings: per-pathology statistics plus net report
/// support. A contradiction requires at least two covering agents and a
/// spread above `delta`.
pub fn cross_validate(
    pkg: &EvidencePackage,
    delta: f64,
) -> Result<ConsistencyReport, ReasoningError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(ReasoningError::InvalidInput(format!(
            "delta {delta} outside (0, 1]"
        )));
    }
    let mut per_pathology = BTreeMap::new();
    for p in Pathology::ALL {
        let scores: Vec<f64> = pkg
            .finding_sets
            .iter()
            .filter_map(|fs| fs.scores.get(&p).copied())
            .collect();
        let covering_agents = scores.len();
        let mean = if scores.is_empty() {
            0.0
        } else {
            scores.iter().sum::<f64>() / covering_agents as f64
        };
        let spread = if covering_agents >= 2 {
            let max = scores.iter().cloned().fold(f64::MIN, f64::max);
            let min = scores.iter().cloned().fold(f64::MAX, f64::min);
            max - min
        } else {
            0.0
        };
        let mut net = 0i32;
        for report in &pkg.reports {
            for m in &report.extracted_mentions {
                if m.pathology == p {
                    match m.polarity {
                        Polarity::Positive => net += 1,
                        Polarity::Negative => net -= 1,
                        Polarity::Uncertain => {}
                    }
                }
            }
        }
        per_pathology.insert(
            p,
            PathologyConsistency {
                covering_agents,
                scores,
                mean,
                spread,
                contradiction: covering_agents >= 2 && spread > delta,
                report_support: net.signum() as i8,
            },
        );
    }
    Ok(ConsistencyReport {
        delta,
        per_pathology,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    High,
    Medium,
    Low,
}

/// Final per-study probabilities over the fourteen evaluation labels.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiagnosisVector {
    pub probabilities: BTreeMap<Pathology, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub confidence: BTreeMap<Pathology, Confidence>,
}

impl DiagnosisVector {
    /// Check the fourteen-label key set and probability range.
    pub fn new(probabilities: BTreeMap<Pathology, f64>) -> Result<Self, ReasoningError> {
        let expected: BTreeMap<Pathology, ()> =
            Pathology::EVAL_LABELS.iter().map(|&p| (p, ())).collect();
        if probabilities.len() != expected.len()
            || !probabilities.keys().all(|p| expected.contains_key(p))
        {
            return Err(ReasoningError::InvalidInput(
                "diagnosis vector must contain exactly the fourteen evaluation labels".into(),
            ));
        }
        for (p, &v) in &probabilities {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(ReasoningError::InvalidInput(format!(
                    "probability {v} for {p} outside [0, 1]"
                )));
            }
        }
        Ok(DiagnosisVector {
            probabilities,
            confidence: BTreeMap::new(),
        })
    }
}

/// Deterministic fusion fallback: mean of covering agents' scores, a ±0.1
/// report-mention adjustment, and No Finding as the complement of the
/// strongest other label. A stand-in policy so the pipeline runs with no
/// model attached; it is not the remote reasoner's behavior.
pub fn fuse_deterministic(
    pkg: &EvidencePackage,
    consistency: &ConsistencyReport,
) -> DiagnosisVector {
    let _ = pkg;
    let mut probabilities = BTreeMap::new();
    let mut confidence = BTreeMap::new();
    for p in Pathology::EVAL_LABELS {
        if p == Pathology::NoFinding {
            continue;
        }
        let stats = &consistency.per_pathology[&p];
        let mut value = stats.mean;
        value += 0.1 * f64::from(stats.report_support);
        probabilities.insert(p, value.clamp(0.0, 1.0));
        confidence.insert(p, confidence_level(stats));
    }
    let max_other = probabilities
        .values()
        .cloned()
        .fold(0.0_f64, f64::max);
    probabilities.insert(Pathology::NoFinding, 1.0 - max_other);
    confidence.insert(
        Pathology::NoFinding,
        confidence_level(&consistency.per_pathology[&Pathology::NoFinding]),
    );
    DiagnosisVector {
        probabilities,
        confidence,
    }
}

fn confidence_level(stats: &PathologyConsistency) -> Confidence {
    if stats.contradiction || stats.covering_agents == 0 {
        Confidence::Low
    } else if stats.covering_agents >= 3 {
        Confidence::High
    } else {
        Confidence::Medium
    }
}
