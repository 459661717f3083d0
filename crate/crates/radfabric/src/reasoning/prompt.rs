//! Deterministic prompt construction for the remote reasoner.
//!
//! Output is golden-file stable: same package, same bytes. Empty sections are
//! elided entirely, headers included.

use crate::pathology::Pathology;

use super::{ConsistencyReport, EvidencePackage};

/// Build the think-then-answer prompt from an evidence package.
pub fn build_prompt(pkg: &EvidencePackage, consistency: &ConsistencyReport) -> String {
    let labels: Vec<&str> = Pathology::EVAL_LABELS.iter().map(|p| p.label()).collect();
    let mut out = String::new();
    out.push_str(
        "You are the reasoning agent of a multi-agent chest X-ray diagnostic system.\n\
         Review the evidence below, then reason step by step with your reasoning \
         enclosed in delimiter tags <think>...</think>.\n\
         After reasoning, present your final disease probability predictions inside \
         a box block \\boxed{...} containing a single JSON object with exactly these \
         fourteen labels, each mapped to a probability in [0, 1]:\n",
    );
    out.push_str(&labels.join(", "));
    out.push_str(".\n\n");
    out.push_str(&format!("# Study {}\n", pkg.study_id));

    let scored: Vec<Pathology> = Pathology::ALL
        .into_iter()
        .filter(|p| pkg.finding_sets.iter().any(|fs| fs.scores.contains_key(p)))
        .collect();
    if !scored.is_empty() {
        out.push_str("\n## Agent findings\n");
        for p in scored {
            out.push_str(&format!("{}:\n", p.label()));
            for fs in &pkg.finding_sets {
                if let Some(score) = fs.scores.get(&p) {
                    out.push_str(&format!("{}: {}\n", fs.agent_name, score));
                }
            }
        }
    }

    let contradictions: Vec<_> = consistency
        .per_pathology
        .iter()
        .filter(|(_, s)| s.contradiction)
        .collect();
    if !contradictions.is_empty() {
        out.push_str("\n## Cross-validation\n");
        for (p, stats) in contradictions {
            out.push_str(&format!(
                "Contradiction for {}: agent scores disagree (spread {} > delta {}).\n",
                p.label(),
                stats.spread,
                consistency.delta
            ));
        }
    }

    if !pkg.descriptions.is_empty() {
        out.push_str("\n## Anatomical interpretation\n");
        for d in &pkg.descriptions {
            out.push_str(&d.sentence);
            out.push('\n');
        }
    }

    if !pkg.reports.is_empty() {
        out.push_str("\n## Reports\n");
        for r in &pkg.reports {
            out.push_str(&format!("### {}\n{}\n", r.agent_name, r.text.trim_end()));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentFindingSet, ClinicalReport};
    use crate::reasoning::{assemble_evidence, cross_validate, DEFAULT_DELTA};
    use std::collections::BTreeMap;

    fn package_with_reports(reports: Vec<ClinicalReport>) -> EvidencePackage {
        let fs = AgentFindingSet {
            agent_id: 1,
            agent_name: "Torchxrayvision_all".to_string(),
            study_id: "s1".to_string(),
            scores: [(Pathology::Atelectasis, 0.8503)].into_iter().collect(),
            heatmaps: BTreeMap::new(),
        };
        assemble_evidence(vec![fs], vec![], reports).unwrap()
    }

    #[test]
    fn same_package_builds_byte_identical_prompts() {
        let pkg = package_with_reports(vec![]);
        let c = cross_validate(&pkg, DEFAULT_DELTA).unwrap();
        assert_eq!(build_prompt(&pkg, &c), build_prompt(&pkg, &c));
    }

    #[test]
    fn score_line_renders_agent_name_and_value() {
        let pkg = package_with_reports(vec![]);
        let c = cross_validate(&pkg, DEFAULT_DELTA).unwrap();
        let prompt = build_prompt(&pkg, &c);
        assert!(prompt
            .lines()
            .any(|l| l == "Torchxrayvision_all: 0.8503"));
        assert!(prompt.contains("Atelectasis:\n"));
    }

    #[test]
    fn empty_report_section_is_elided() {
        let pkg = package_with_reports(vec![]);
        let c = cross_validate(&pkg, DEFAULT_DELTA).unwrap();
        assert!(!build_prompt(&pkg, &c).contains("## Reports"));

        let with = package_with_reports(vec![ClinicalReport {
            agent_name: "CheXagent".to_string(),
            study_id: "s1".to_string(),
            text: "clear lungs".to_string(),
            extracted_mentions: vec![],
        }]);
        let c2 = cross_validate(&with, DEFAULT_DELTA).unwrap();
        assert!(build_prompt(&with, &c2).contains("## Reports"));
    }
}
