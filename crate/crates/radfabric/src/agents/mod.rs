//! CXR and report agent specifications, the default coverage registry, and
//! the pluggable backends (fixture, remote tool, constant) that produce
//! findings and clinical reports.

pub mod mentions;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::mcp::{McpError, ToolClient};
use crate::pathology::Pathology;
use crate::raster::{parse_grid, Heatmap, RasterError};

pub use mentions::{extract_mentions, Lexicon, Mention, Polarity};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("no fixture for agent {agent_id}, study {study_id:?}")]
    FixtureMiss { agent_id: u32, study_id: String },
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("agent {agent_id} protocol violation: {reason}")]
    ProtocolViolation { agent_id: u32, reason: String },
    #[error("agent {agent_id} transport failure: {source}")]
    Transport { agent_id: u32, source: McpError },
    #[error("backend not configured: {0}")]
    Unconfigured(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// How an agent produces its output.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Backend {
    /// Replay stored results from the fixture store.
    Fixture,
    /// Invoke a remote MCP tool.
    Remote { tool: String, endpoint: String },
    /// Emit a fixed score for every covered pathology.
    Constant { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentRole {
    Cxr,
    Report,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AgentSpec {
    pub id: u32,
    pub name: String,
    pub role: AgentRole,
    pub dataset: String,
    pub coverage: BTreeSet<Pathology>,
    pub backend: Backend,
}

/// One CXR agent's per-pathology scores plus optional heatmaps: the paired
/// textual hypothesis and visual evidence.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AgentFindingSet {
    pub agent_id: u32,
    pub agent_name: String,
    pub study_id: String,
    pub scores: BTreeMap<Pathology, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub heatmaps: BTreeMap<Pathology, Heatmap>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClinicalReport {
    pub agent_name: String,
    pub study_id: String,
    pub text: String,
    pub extracted_mentions: Vec<Mention>,
}

fn coverage(labels: &[Pathology]) -> BTreeSet<Pathology> {
    labels.iter().copied().collect()
}

/// The shipped registry: seven CXR agents encoding the coverage matrix
/// row-for-row, plus the two report agents. All default to fixture backends.
pub fn default_registry() -> Vec<AgentSpec> {
    use Pathology::*;
    let cxr = |id: u32, name: &str, dataset: &str, labels: &[Pathology]| AgentSpec {
        id,
        name: name.to_string(),
        role: AgentRole::Cxr,
        dataset: dataset.to_string(),
        coverage: coverage(labels),
        backend: Backend::Fixture,
    };
    let report = |id: u32, name: &str| AgentSpec {
        id,
        name: name.to_string(),
        role: AgentRole::Report,
        dataset: String::new(),
        coverage: Pathology::EVAL_LABELS.iter().copied().collect(),
        backend: Backend::Fixture,
    };
    vec![
        cxr(
            1,
            "Torchxrayvision_all",
            "All Datasets",
            &[
                Atelectasis,
                Cardiomegaly,
                Consolidation,
                Edema,
                PleuralEffusion,
                Emphysema,
                EnlargedCardiomediastinum,
                Fracture,
                Fibrosis,
                Hernia,
                Infiltration,
                LungLesion,
                LungOpacity,
                Mass,
                Nodule,
                PleuralThickening,
                Pneumonia,
                Pneumothorax,
            ],
        ),
        cxr(
            2,
            "Torchxrayvision_mimic",
            "MIMIC-CXR",
            &[
                Atelectasis,
                Cardiomegaly,
                Consolidation,
                Edema,
                PleuralEffusion,
                EnlargedCardiomediastinum,
                Fracture,
                LungLesion,
                LungOpacity,
                Pneumonia,
                Pneumothorax,
            ],
        ),
        cxr(
            3,
            "Torchxrayvision_rsna",
            "RSNA Pneumonia Challenge",
            &[LungOpacity, Pneumonia],
        ),
        cxr(
            4,
            "Torchxrayvision_nih",
            "NIH Chest X-Ray8",
            &[
                Atelectasis,
                Cardiomegaly,
                Consolidation,
                Edema,
                Emphysema,
                Fibrosis,
                Hernia,
                Mass,
                Nodule,
                PleuralThickening,
                Pneumonia,
                Pneumothorax,
            ],
        ),
        cxr(
            5,
            "Torchxrayvision_pc",
            "PadChest",
            &[
                Atelectasis,
                Cardiomegaly,
                Consolidation,
                Edema,
                PleuralEffusion,
                Emphysema,
                Fracture,
                Fibrosis,
                Hernia,
                Infiltration,
                Mass,
                Nodule,
                PleuralThickening,
                Pneumonia,
                Pneumothorax,
            ],
        ),
        cxr(
            6,
            "JFHealthcare",
            "JFhealthcare",
            &[Atelectasis, Cardiomegaly, Consolidation, Edema, PleuralEffusion],
        ),
        cxr(
            7,
            "CheXpert",
            "CheXpert",
            &[Atelectasis, Cardiomegaly, Consolidation, Edema, PleuralEffusion],
        ),
        report(8, "CheXagent"),
        report(9, "Qwen2-VL-7b"),
    ]
}

/// On-disk layout: `<root>/<study_id>/agent<k>.json` plus
/// `<root>/<study_id>/report_<name>.txt`; heatmap grid files live next to the
/// JSON that names them.
#[derive(Debug, Clone)]
pub struct FixtureStore {
    root: PathBuf,
}

#[derive(Debug, serde::Deserialize)]
struct CxrFixtureFile {
    scores: BTreeMap<String, f64>,
    #[serde(default)]
    heatmaps: BTreeMap<String, String>,
}

impl FixtureStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FixtureStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn study_dir(&self, study_id: &str) -> PathBuf {
        self.root.join(study_id)
    }

    pub fn load_cxr(
        &self,
        agent_id: u32,
        study_id: &str,
    ) -> Result<(BTreeMap<Pathology, f64>, BTreeMap<Pathology, Heatmap>), AgentError> {
        let path = self.study_dir(study_id).join(format!("agent{agent_id}.json"));
        if !path.exists() {
            return Err(AgentError::FixtureMiss {
                agent_id,
                study_id: study_id.to_string(),
            });
        }
        let text = std::fs::read_to_string(&path)
            .map_err(|e| AgentError::Fixture(format!("{}: {e}", path.display())))?;
        let file: CxrFixtureFile = serde_json::from_str(&text)
            .map_err(|e| AgentError::Fixture(format!("{}: {e}", path.display())))?;
        let mut scores = BTreeMap::new();
        for (label, score) in file.scores {
            let p = Pathology::parse_label(&label).map_err(|e| AgentError::Fixture(e.to_string()))?;
            scores.insert(p, score);
        }
        let mut heatmaps = BTreeMap::new();
        for (label, file_name) in file.heatmaps {
            let p = Pathology::parse_label(&label).map_err(|e| AgentError::Fixture(e.to_string()))?;
            let map = Heatmap::read_from(&self.study_dir(study_id).join(file_name))?;
            heatmaps.insert(p, map);
        }
        Ok((scores, heatmaps))
    }

    pub fn load_report(&self, agent_name: &str, study_id: &str) -> Result<String, AgentError> {
        let path = self
            .study_dir(study_id)
            .join(format!("report_{agent_name}.txt"));
        std::fs::read_to_string(&path)
            .map_err(|_| AgentError::Fixture(format!("no report fixture at {}", path.display())))
    }

    pub fn study_ids(&self) -> Result<Vec<String>, AgentError> {
        let mut ids = Vec::new();
        let entries = std::fs::read_dir(&self.root)
            .map_err(|e| AgentError::Fixture(format!("{}: {e}", self.root.display())))?;
        for entry in entries.flatten() {
            if entry.path().is_dir() {
                ids.push(entry.file_name().to_string_lossy().into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }
}

/// Shared handles for backend execution.
#[derive(Default)]
pub struct RunContext {
    pub fixtures: Option<FixtureStore>,
    pub mcp: Option<ToolClient>,
}

impl RunContext {
    pub fn with_fixtures(root: impl Into<PathBuf>) -> Self {
        RunContext {
            fixtures: Some(FixtureStore::new(root)),
            mcp: None,
        }
    }
}

fn check_scores(
    spec: &AgentSpec,
    scores: &BTreeMap<Pathology, f64>,
) -> Result<(), AgentError> {
    for (p, &score) in scores {
        if !spec.coverage.contains(p) {
            return Err(AgentError::ProtocolViolation {
                agent_id: spec.id,
                reason: format!("score for {p} outside agent coverage"),
            });
        }
        if !(0.0..=1.0).contains(&score) || !score.is_finite() {
            return Err(AgentError::ProtocolViolation {
                agent_id: spec.id,
                reason: format!("score {score} for {p} outside [0, 1]"),
            });
        }
    }
    Ok(())
}

/// Run one CXR agent through its configured backend.
pub fn run_cxr_agent(
    spec: &AgentSpec,
    study_id: &str,
    image_ref: &str,
    ctx: &RunContext,
) -> Result<AgentFindingSet, AgentError> {
    if study_id.is_empty() {
        return Err(AgentError::Fixture("study_id must be nonempty".into()));
    }
    let (scores, heatmaps) = match &spec.backend {
        Backend::Fixture => {
            let store = ctx
                .fixtures
                .as_ref()
                .ok_or_else(|| AgentError::Unconfigured("no fixture store in context".into()))?;
            store.load_cxr(spec.id, study_id)?
        }
        Backend::Constant { value } => {
            let scores = spec.coverage.iter().map(|&p| (p, *value)).collect();
            (scores, BTreeMap::new())
        }
        Backend::Remote { tool, .. } => {
            let client = ctx
                .mcp
                .as_ref()
                .ok_or_else(|| AgentError::Unconfigured("no MCP client in context".into()))?;
            let result = client
                .call_tool(tool, json!({"study_id": study_id, "image_ref": image_ref}))
                .map_err(|source| AgentError::Transport {
                    agent_id: spec.id,
                    source,
                })?;
            parse_remote_findings(spec.id, &result)?
        }
    };
    check_scores(spec, &scores)?;
    Ok(AgentFindingSet {
        agent_id: spec.id,
        agent_name: spec.name.clone(),
        study_id: study_id.to_string(),
        scores,
        heatmaps,
    })
}

fn parse_remote_findings(
    agent_id: u32,
    result: &Value,
) -> Result<(BTreeMap<Pathology, f64>, BTreeMap<Pathology, Heatmap>), AgentError> {
    let violation = |reason: &str| AgentError::ProtocolViolation {
        agent_id,
        reason: reason.to_string(),
    };
    let scores_obj = result
        .get("scores")
        .and_then(Value::as_object)
        .ok_or_else(|| violation("response missing scores object"))?;
    let mut scores = BTreeMap::new();
    for (label, v) in scores_obj {
        let p = Pathology::parse_label(label)
            .map_err(|e| violation(&e.to_string()))?;
        let score = v
            .as_f64()
            .ok_or_else(|| violation(&format!("non-numeric score for {label}")))?;
        scores.insert(p, score);
    }
    let mut heatmaps = BTreeMap::new();
    if let Some(maps) = result.get("heatmaps").and_then(Value::as_object) {
        for (label, v) in maps {
            let p = Pathology::parse_label(label)
                .map_err(|e| violation(&e.to_string()))?;
            let text = v
                .as_str()
                .ok_or_else(|| violation("heatmap value must be a string"))?;
            // Inline grid text carries its newline framing; otherwise treat
            // the string as a path.
            let map = if text.contains('\n') {
                Heatmap::from_grid(parse_grid(text)?)?
            } else {
                Heatmap::read_from(Path::new(text))?
            };
            heatmaps.insert(p, map);
        }
    }
    Ok((scores, heatmaps))
}

/// Run one report agent through its configured backend.
pub fn run_report_agent(
    spec: &AgentSpec,
    study_id: &str,
    image_ref: &str,
    ctx: &RunContext,
    lexicon: &Lexicon,
) -> Result<ClinicalReport, AgentError> {
    if study_id.is_empty() {
        return Err(AgentError::Fixture("study_id must be nonempty".into()));
    }
    let text = match &spec.backend {
        Backend::Fixture => {
            let store = ctx
                .fixtures
                .as_ref()
                .ok_or_else(|| AgentError::Unconfigured("no fixture store in context".into()))?;
            store.load_report(&spec.name, study_id)?
        }
        Backend::Constant { .. } => {
            return Err(AgentError::Unconfigured(
                "constant backend cannot produce a report".into(),
            ))
        }
        Backend::Remote { tool, .. } => {
            let client = ctx
                .mcp
                .as_ref()
                .ok_or_else(|| AgentError::Unconfigured("no MCP client in context".into()))?;
            let result = client
                .call_tool(tool, json!({"study_id": study_id, "image_ref": image_ref}))
                .map_err(|source| AgentError::Transport {
                    agent_id: spec.id,
                    source,
                })?;
            result
                .get("text")
                .and_then(Value::as_str)
                .or(result.as_str())
                .unwrap_or("")
                .to_string()
        }
    };
    if text.trim().is_empty() {
        return Err(AgentError::ProtocolViolation {
            agent_id: spec.id,
            reason: "empty report text".into(),
        });
    }
    let extracted_mentions = extract_mentions(&text, lexicon);
    Ok(ClinicalReport {
        agent_name: spec.name.clone(),
        study_id: study_id.to_string(),
        text,
        extracted_mentions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_has_seven_cxr_and_two_report_agents() {
        let registry = default_registry();
        assert_eq!(
            registry.iter().filter(|a| a.role == AgentRole::Cxr).count(),
            7
        );
        assert_eq!(
            registry.iter().filter(|a| a.role == AgentRole::Report).count(),
            2
        );
        let mut ids: Vec<u32> = registry.iter().map(|a| a.id).collect();
        ids.dedup();
        assert_eq!(ids.len(), registry.len());
        for spec in &registry {
            assert!(!spec.coverage.is_empty());
        }
    }

    #[test]
    fn registry_matches_coverage_matrix_spot_checks() {
        let registry = default_registry();
        let agent = |id: u32| registry.iter().find(|a| a.id == id).unwrap();
        // Agent 3 covers exactly lung opacity and pneumonia.
        assert_eq!(
            agent(3).coverage,
            [Pathology::LungOpacity, Pathology::Pneumonia].into_iter().collect()
        );
        // Agent 4 covers hernia and mass but not effusion.
        assert!(agent(4).coverage.contains(&Pathology::Hernia));
        assert!(agent(4).coverage.contains(&Pathology::Mass));
        assert!(!agent(4).coverage.contains(&Pathology::PleuralEffusion));
        // Agent 1 covers everything except the one unchecked row.
        assert!(!agent(1).coverage.contains(&Pathology::PleuralOther));
        assert_eq!(agent(1).coverage.len(), 18);
        // Agent 6: the five-label frontal set.
        assert_eq!(
            agent(6).coverage,
            [
                Pathology::Atelectasis,
                Pathology::Cardiomegaly,
                Pathology::Consolidation,
                Pathology::Edema,
                Pathology::PleuralEffusion
            ]
            .into_iter()
            .collect()
        );
    }

    #[test]
    fn constant_backend_scores_every_covered_pathology() {
        let registry = default_registry();
        let mut spec = registry.iter().find(|a| a.id == 6).unwrap().clone();
        spec.backend = Backend::Constant { value: 0.5 };
        let ctx = RunContext::default();
        let findings = run_cxr_agent(&spec, "s1", "img.png", &ctx).unwrap();
        assert_eq!(findings.scores.len(), 5);
        assert!(findings.scores.values().all(|&v| v == 0.5));
    }

    #[test]
    fn constant_backend_out_of_range_is_a_protocol_violation() {
        let mut spec = default_registry()[0].clone();
        spec.backend = Backend::Constant { value: 1.5 };
        let err = run_cxr_agent(&spec, "s1", "", &RunContext::default()).unwrap_err();
        assert!(matches!(err, AgentError::ProtocolViolation { .. }));
    }

    #[test]
    fn fixture_miss_names_agent_and_study() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = RunContext::with_fixtures(dir.path());
        let spec = default_registry()[0].clone();
        let err = run_cxr_agent(&spec, "absent", "", &ctx).unwrap_err();
        match err {
            AgentError::FixtureMiss { agent_id, study_id } => {
                assert_eq!(agent_id, 1);
                assert_eq!(study_id, "absent");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn fixture_backend_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let study = dir.path().join("s1");
        std::fs::create_dir_all(&study).unwrap();
        std::fs::write(
            study.join("agent3.json"),
            r#"{"scores": {"Lung Opacity": 0.7, "Pneumonia": 0.9}}"#,
        )
        .unwrap();
        let ctx = RunContext::with_fixtures(dir.path());
        let spec = default_registry()
            .into_iter()
            .find(|a| a.id == 3)
            .unwrap();
        let a = run_cxr_agent(&spec, "s1", "", &ctx).unwrap();
        let b = run_cxr_agent(&spec, "s1", "", &ctx).unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
    }

    #[test]
    fn fixture_score_outside_coverage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let study = dir.path().join("s1");
        std::fs::create_dir_all(&study).unwrap();
        std::fs::write(
            study.join("agent3.json"),
            r#"{"scores": {"Fracture": 0.7}}"#,
        )
        .unwrap();
        let ctx = RunContext::with_fixtures(dir.path());
        let spec = default_registry()
            .into_iter()
            .find(|a| a.id == 3)
            .unwrap();
        assert!(matches!(
            run_cxr_agent(&spec, "s1", "", &ctx),
            Err(AgentError::ProtocolViolation { .. })
        ));
    }

    #[test]
    fn report_fixture_round_trip_and_empty_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let study = dir.path().join("s1");
        std::fs::create_dir_all(&study).unwrap();
        std::fs::write(study.join("report_CheXagent.txt"), "mild pulmonary edema\n").unwrap();
        std::fs::write(study.join("report_Qwen2-VL-7b.txt"), "  \n").unwrap();
        let ctx = RunContext::with_fixtures(dir.path());
        let lexicon = Lexicon::default();
        let registry = default_registry();
        let chexagent = registry.iter().find(|a| a.name == "CheXagent").unwrap();
        let report = run_report_agent(chexagent, "s1", "", &ctx, &lexicon).unwrap();
        assert_eq!(report.extracted_mentions.len(), 1);
        assert_eq!(report.extracted_mentions[0].pathology, Pathology::Edema);

        let qwen = registry.iter().find(|a| a.name == "Qwen2-VL-7b").unwrap();
        assert!(matches!(
            run_report_agent(qwen, "s1", "", &ctx, &lexicon),
            Err(AgentError::ProtocolViolation { .. })
        ));
    }
}
