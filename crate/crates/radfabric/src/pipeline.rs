//! Pipeline wiring: configuration, per-study execution in the staged order
//! (parallel CXR and report agents, anatomical interpretation, reasoning),
//! persistence, and the per-pathology accuracy evaluation harness.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::agents::{
    self, default_registry, AgentFindingSet, AgentRole, AgentSpec, ClinicalReport, Lexicon,
    RunContext,
};
use crate::anatomy::{
    correlate, describe, partition_lung_fields, AnatomicalDescription, AnatomyError, PhraseTables,
    DEFAULT_TAU,
};
use crate::pathology::Pathology;
use crate::raster::SegmentationMask;
use crate::reasoning::{
    assemble_evidence, build_prompt, cross_validate, fuse_deterministic, parse_transcript,
    query_reasoner, ConsistencyReport, DiagnosisVector, ReasonerEndpoint, TranscriptFormat,
    DEFAULT_DELTA,
};
use crate::reward::{GroundTruth, RewardWeights, TruthLabel, DEFAULT_THRESHOLD};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("persistence error: {0}")]
    Persist(String),
    #[error("evaluation error: {0}")]
    Eval(String),
}

fn default_tau() -> f64 {
    DEFAULT_TAU
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_true() -> bool {
    true
}

/// Single JSON configuration document; its hash is embedded in every record.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Config {
    #[serde(default = "default_fixtures_dir")]
    pub fixtures_dir: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Agent registry override; the shipped coverage registry when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agents: Option<Vec<AgentSpec>>,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub reward_weights: RewardWeights,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoner: Option<ReasonerEndpoint>,
    /// Use the deterministic fusion fallback when no reasoner is configured
    /// or the remote call fails.
    #[serde(default = "default_true")]
    pub fallback: bool,
    #[serde(default)]
    pub serial: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon_path: Option<PathBuf>,
}

fn default_fixtures_dir() -> PathBuf {
    PathBuf::from("fixtures")
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for Config {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    /// Hash of the configuration's canonical serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        format!("{digest:x}")
    }

    pub fn registry(&self) -> Vec<AgentSpec> {
        self.agents.clone().unwrap_or_else(default_registry)
    }

    pub fn lexicon(&self) -> Result<Lexicon, PipelineError> {
        match &self.lexicon_path {
            Some(path) => {
                Lexicon::from_file(path).map_err(|e| PipelineError::Config(e.to_string()))
            }
            None => Ok(Lexicon::default()),
        }
    }
}

/// Dataset manifest: study ids and their input paths, relative to the
/// manifest's directory.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetManifest {
    pub studies: Vec<StudyInput>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<DatasetManifest, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| PipelineError::Manifest(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StudyInput {
    pub study_id: String,
    #[serde(default)]
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasonerKind {
    Remote,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Provenance {
    pub reasoner: ReasonerKind,
    /// Backend kind per agent id.
    pub agent_backends: BTreeMap<u32, String>,
    pub timestamp_unix: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StageFailure {
    pub stage: String,
    pub error: String,
}

/// Everything produced for one study, persisted as pretty-printed JSON.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StudyRecord {
    pub study_id: String,
    pub inputs: StudyInput,
    pub finding_sets: Vec<AgentFindingSet>,
    pub descriptions: Vec<AnatomicalDescription>,
    pub reports: Vec<ClinicalReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency: Option<ConsistencyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    /// The decision source: the remote transcript's parsed answer, or the
    /// deterministic fallback vector, per `provenance.reasoner`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<DiagnosisVector>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<StageFailure>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    pub failed: bool,
}

fn backend_name(spec: &AgentSpec) -> String {
    match &spec.backend {
        agents::Backend::Fixture => "fixture".to_string(),
        agents::Backend::Remote { tool, .. } => format!("remote:{tool}"),
        agents::Backend::Constant { value } => format!("constant:{value}"),
    }
}

/// Execute the staged workflow for one study and persist the record.
///
/// Stage errors never abort the run: they are recorded with the failing
/// stage named and the partial record is persisted with `failed` set.
pub fn run_study(config: &Config, input: &StudyInput) -> Result<StudyRecord, PipelineError> {
    let record = execute_study(config, input);
    persist_record(config, &record)?;
    Ok(record)
}

fn execute_study(config: &Config, input: &StudyInput) -> StudyRecord {
    let registry = config.registry();
    let ctx = RunContext::with_fixtures(&config.fixtures_dir);
    let lexicon = config.lexicon().unwrap_or_default();
    let mut failures = Vec::new();
    let mut flags = Vec::new();

    let cxr_specs: Vec<&AgentSpec> =
        registry.iter().filter(|a| a.role == AgentRole::Cxr).collect();
    let report_specs: Vec<&AgentSpec> =
        registry.iter().filter(|a| a.role == AgentRole::Report).collect();

    // CXR fan-out; findings are canonically sorted afterwards so run order
    // never affects the record.
    let mut finding_sets = Vec::new();
    let cxr_results: Vec<(u32, Result<AgentFindingSet, agents::AgentError>)> = if config.serial {
        cxr_specs
            .iter()
            .map(|spec| {
                (
                    spec.id,
                    agents::run_cxr_agent(spec, &input.study_id, &input.image, &ctx),
                )
            })
            .collect()
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = cxr_specs
                .iter()
                .map(|spec| {
                    let ctx = &ctx;
                    let id = spec.id;
                    (
                        id,
                        scope.spawn(move || {
                            agents::run_cxr_agent(spec, &input.study_id, &input.image, ctx)
                        }),
                    )
                })
                .collect();
            handles
                .into_iter()
                .map(|(id, h)| (id, h.join().expect("agent thread")))
                .collect()
        })
    };
    for (id, result) in cxr_results {
        match result {
            Ok(fs) => finding_sets.push(fs),
            Err(agents::AgentError::FixtureMiss { .. }) => {
                flags.push(format!("no-findings:agent{id}"));
            }
            Err(e) => failures.push(StageFailure {
                stage: format!("cxr-agent-{id}"),
                error: e.to_string(),
            }),
        }
    }
    finding_sets.sort_by_key(|fs| fs.agent_id);

    let mut reports = Vec::new();
    for spec in &report_specs {
        match agents::run_report_agent(spec, &input.study_id, &input.image, &ctx, &lexicon) {
            Ok(report) => reports.push(report),
            Err(agents::AgentError::Fixture(_)) => {
                flags.push(format!("no-report:{}", spec.name));
            }
            Err(e) => failures.push(StageFailure {
                stage: format!("report-agent-{}", spec.name),
                error: e.to_string(),
            }),
        }
    }

    // Anatomical interpretation over each returned heatmap.
    let mut descriptions = Vec::new();
    match &input.mask {
        None => flags.push("no-anatomy".to_string()),
        Some(mask_path) => {
            let full = config.fixtures_dir.join(&input.study_id).join(mask_path);
            let path = if full.exists() {
                full
            } else {
                PathBuf::from(mask_path)
            };
            match SegmentationMask::read_from(&path)
                .map_err(|e| e.to_string())
                .and_then(|m| partition_lung_fields(&m).map_err(|e| e.to_string()))
            {
                Ok(partitioned) => {
                    let tables = PhraseTables::default();
                    for fs in &finding_sets {
                        for (&pathology, heatmap) in &fs.heatmaps {
                            match correlate(heatmap, &partitioned, config.tau) {
                                Ok(c) => match describe(pathology, &c, &tables) {
                                    Ok(d) => descriptions.push(d),
                                    Err(AnatomyError::NoActivation) => {
                                        flags.push(format!("no-focal-localization:{pathology}"));
                                    }
                                    Err(e) => failures.push(StageFailure {
                                        stage: "anatomy-describe".to_string(),
                                        error: e.to_string(),
                                    }),
                                },
                                Err(e) => failures.push(StageFailure {
                                    stage: "anatomy-correlate".to_string(),
                                    error: e.to_string(),
                                }),
                            }
                        }
                    }
                }
                Err(e) => {
                    failures.push(StageFailure {
                        stage: "anatomy-segmentation".to_string(),
                        error: e,
                    });
                    flags.push("no-anatomy".to_string());
                }
            }
        }
    }

    let provenance = |reasoner: ReasonerKind| Provenance {
        reasoner,
        agent_backends: registry.iter().map(|s| (s.id, backend_name(s))).collect(),
        timestamp_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config_hash: config.hash(),
    };

    let package = match assemble_evidence(finding_sets.clone(), descriptions.clone(), reports.clone())
    {
        Ok(pkg) => pkg,
        Err(e) => {
            failures.push(StageFailure {
                stage: "assemble-evidence".to_string(),
                error: e.to_string(),
            });
            return StudyRecord {
                study_id: input.study_id.clone(),
                inputs: input.clone(),
                finding_sets,
                descriptions,
                reports,
                consistency: None,
                prompt: None,
                transcript: None,
                decision: None,
                provenance: provenance(ReasonerKind::Fallback),
                failures,
                flags,
                failed: true,
            };
        }
    };

    let consistency = cross_validate(&package, config.delta).expect("delta validated in config");
    let prompt = build_prompt(&package, &consistency);

    let mut transcript = None;
    let mut reasoner_kind = ReasonerKind::Fallback;
    let mut decision = None;
    if let Some(endpoint) = &config.reasoner {
        match query_reasoner(&prompt, endpoint) {
            Ok(raw) => match parse_transcript(&raw, &TranscriptFormat::default()) {
                Ok(parsed) => {
                    transcript = Some(raw);
                    decision = Some(parsed.answer);
                    reasoner_kind = ReasonerKind::Remote;
                }
                Err(e) => failures.push(StageFailure {
                    stage: "reasoner-parse".to_string(),
                    error: e.to_string(),
                }),
            },
            Err(e) => failures.push(StageFailure {
                stage: "reasoner-query".to_string(),
                error: e.to_string(),
            }),
        }
    }
    if decision.is_none() {
        if config.fallback {
            decision = Some(fuse_deterministic(&package, &consistency));
        } else {
            failures.push(StageFailure {
                stage: "reasoner".to_string(),
                error: "no decision source: remote failed and fallback disabled".to_string(),
            });
        }
    }

    let failed = decision.is_none();
    StudyRecord {
        study_id: input.study_id.clone(),
        inputs: input.clone(),
        finding_sets,
        descriptions,
        reports,
        consistency: Some(consistency),
        prompt: Some(prompt),
        transcript,
        decision,
        provenance: provenance(reasoner_kind),
        failures,
        flags,
        failed,
    }
}

fn persist_record(config: &Config, record: &StudyRecord) -> Result<(), PipelineError> {
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| PipelineError::Persist(format!("{}: {e}", config.out_dir.display())))?;
    let path = config.out_dir.join(format!("{}.json", record.study_id));
    let text = serde_json::to_string_pretty(record)
        .map_err(|e| PipelineError::Persist(e.to_string()))?;
    std::fs::write(&path, text)
        .map_err(|e| PipelineError::Persist(format!("{}: {e}", path.display())))
}

/// Run every study in a manifest, in order.
pub fn run_dataset(
    config: &Config,
    manifest: &DatasetManifest,
) -> Result<Vec<StudyRecord>, PipelineError> {
    manifest
        .studies
        .iter()
        .map(|input| run_study(config, input))
        .collect()
}

pub fn load_records(dir: &Path) -> Result<Vec<StudyRecord>, PipelineError> {
    let mut records = Vec::new();
    let entries = std::fs::read_dir(dir)
        .map_err(|e| PipelineError::Eval(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| PipelineError::Eval(format!("{}: {e}", path.display())))?;
        let record: StudyRecord = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Eval(format!("{}: {e}", path.display())))?;
        records.push(record);
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PathologyAccuracy {
    pub correct: usize,
    pub total: usize,
}

impl PathologyAccuracy {
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Per-pathology accuracies plus both overall aggregations.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EvalTable {
    pub per_pathology: BTreeMap<Pathology, PathologyAccuracy>,
    /// Mean of per-pathology accuracies (labeled pathologies only).
    pub macro_overall: f64,
    /// Pooled correct-over-total across all (study, pathology) pairs.
    pub micro_overall: f64,
    pub threshold: f64,
    /// Records without matching ground truth.
    pub skipped: usize,
}

/// Compute the accuracy table over persisted records.
///
/// Records are deduplicated by study id; a record without a decision source
/// is an error, a record without matching ground truth is skipped and
/// tallied.
pub fn evaluate(
    records: &[StudyRecord],
    ground_truth: &[GroundTruth],
    threshold: f64,
) -> Result<EvalTable, PipelineError> {
    let mut seen = std::collections::BTreeSet::new();
    let mut per_pathology: BTreeMap<Pathology, PathologyAccuracy> = Pathology::EVAL_LABELS
        .iter()
        .map(|&p| (p, PathologyAccuracy { correct: 0, total: 0 }))
        .collect();
    let mut skipped = 0usize;
    for record in records {
        if !seen.insert(record.study_id.clone()) {
            continue;
        }
        let Some(decision) = &record.decision else {
            return Err(PipelineError::Eval(format!(
                "record {} has no decision source",
                record.study_id
            )));
        };
        let Some(gt) = ground_truth.iter().find(|g| g.study_id == record.study_id) else {
            skipped += 1;
            continue;
        };
        for (p, label) in &gt.labels {
            let expected = match label {
                TruthLabel::Present => true,
                TruthLabel::Absent => false,
                TruthLabel::Uncertain => continue,
            };
            let Some(&prob) = decision.probabilities.get(p) else {
                continue;
            };
            let cell = per_pathology.get_mut(p).expect("eval label");
            cell.total += 1;
            if (prob >= threshold) == expected {
                cell.correct += 1;
            }
        }
    }
    let labeled: Vec<f64> = per_pathology
        .values()
        .filter_map(PathologyAccuracy::accuracy)
        .collect();
    let macro_overall = if labeled.is_empty() {
        0.0
    } else {
        labeled.iter().sum::<f64>() / labeled.len() as f64
    };
    let pooled_total: usize = per_pathology.values().map(|a| a.total).sum();
    let pooled_correct: usize = per_pathology.values().map(|a| a.correct).sum();
    let micro_overall = if pooled_total == 0 {
        0.0
    } else {
        pooled_correct as f64 / pooled_total as f64
    };
    Ok(EvalTable {
        per_pathology,
        macro_overall,
        micro_overall,
        threshold,
        skipped,
    })
}

impl EvalTable {
    /// Render the per-pathology + Overall accuracy layout.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<28} {:>6} {:>8}\n",
            "Pathology", "Acc", "Studies"
        ));
        for (p, cell) in &self.per_pathology {
            match cell.accuracy() {
                Some(acc) => out.push_str(&format!(
                    "{:<28} {:>6.3} {:>8}\n",
                    p.label(),
                    acc,
                    cell.total
                )),
                None => out.push_str(&format!("{:<28} {:>6} {:>8}\n", p.label(), "-", 0)),
            }
        }
        out.push_str(&format!(
            "{:<28} {:>6.3}   (macro, threshold {})\n",
            "Overall",
            self.macro_overall,
            self.threshold
        ));
        out.push_str(&format!(
            "{:<28} {:>6.3}   (micro)\n",
            "Overall", self.micro_overall
        ));
        if self.skipped > 0 {
            out.push_str(&format!("skipped (no ground truth): {}\n", self.skipped));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record_with(study: &str, entries: &[(Pathology, f64)]) -> StudyRecord {
        let mut probs: BTreeMap<Pathology, f64> =
            Pathology::EVAL_LABELS.iter().map(|&p| (p, 0.0)).collect();
        for &(p, v) in entries {
            probs.insert(p, v);
        }
        StudyRecord {
            study_id: study.to_string(),
            inputs: StudyInput {
                study_id: study.to_string(),
                image: String::new(),
                mask: None,
            },
            finding_sets: vec![],
            descriptions: vec![],
            reports: vec![],
            consistency: None,
            prompt: None,
            transcript: None,
            decision: Some(DiagnosisVector::new(probs).unwrap()),
            provenance: Provenance {
                reasoner: ReasonerKind::Fallback,
                agent_backends: BTreeMap::new(),
                timestamp_unix: 0,
                config_hash: String::new(),
            },
            failures: vec![],
            flags: vec![],
            failed: false,
        }
    }

    fn gt(study: &str, entries: &[(Pathology, TruthLabel)]) -> GroundTruth {
        GroundTruth::new(study, entries.iter().cloned().collect()).unwrap()
    }

    #[test]
    fn evaluate_matches_hand_counted_three_study_oracle() {
        use TruthLabel::*;
        // Study a: Pneumonia present, predicted 0.9 (hit); Edema absent,
        //          predicted 0.1 (hit).
        // Study b: Pneumonia present, predicted 0.2 (miss).
        // Study c: Edema absent, predicted 0.8 (miss); Fracture present,
        //          predicted 0.9 (hit).
        let records = vec![
            record_with("a", &[(Pathology::Pneumonia, 0.9), (Pathology::Edema, 0.1)]),
            record_with("b", &[(Pathology::Pneumonia, 0.2)]),
            record_with("c", &[(Pathology::Edema, 0.8), (Pathology::Fracture, 0.9)]),
        ];
        let gts = vec![
            gt("a", &[(Pathology::Pneumonia, Present), (Pathology::Edema, Absent)]),
            gt("b", &[(Pathology::Pneumonia, Present)]),
            gt("c", &[(Pathology::Edema, Absent), (Pathology::Fracture, Present)]),
        ];
        let table = evaluate(&records, &gts, 0.5).unwrap();
        // Pneumonia 1/2, Edema 1/2, Fracture 1/1.
        assert_eq!(table.per_pathology[&Pathology::Pneumonia].correct, 1);
        assert_eq!(table.per_pathology[&Pathology::Pneumonia].total, 2);
        assert_eq!(table.per_pathology[&Pathology::Fracture].accuracy(), Some(1.0));
        assert!((table.macro_overall - (0.5 + 0.5 + 1.0) / 3.0).abs() < 1e-12);
        assert!((table.micro_overall - 3.0 / 5.0).abs() < 1e-12);
        assert!(table.render_text().contains("Fracture"));
        assert!(table.render_text().contains("1.000"));
    }

    #[test]
    fn evaluate_skips_records_without_ground_truth() {
        let records = vec![record_with("a", &[])];
        let table = evaluate(&records, &[], 0.5).unwrap();
        assert_eq!(table.skipped, 1);
    }

    #[test]
    fn evaluate_dedups_by_study_id() {
        use TruthLabel::*;
        let records = vec![
            record_with("a", &[(Pathology::Pneumonia, 0.9)]),
            record_with("a", &[(Pathology::Pneumonia, 0.1)]),
        ];
        let gts = vec![gt("a", &[(Pathology::Pneumonia, Present)])];
        let table = evaluate(&records, &gts, 0.5).unwrap();
        assert_eq!(table.per_pathology[&Pathology::Pneumonia].total, 1);
        assert_eq!(table.per_pathology[&Pathology::Pneumonia].correct, 1);
    }

    #[test]
    fn evaluate_rejects_record_without_decision() {
        let mut r = record_with("a", &[]);
        r.decision = None;
        assert!(evaluate(&[r], &[], 0.5).is_err());
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = Config::default();
        let b = Config::default();
        assert_eq!(a.hash(), b.hash());
        let mut c = Config::default();
        c.tau = 0.7;
        assert_ne!(a.hash(), c.hash());
    }
}
