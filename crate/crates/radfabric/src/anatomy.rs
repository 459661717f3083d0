//! Anatomical interpretation: lung-field partitioning, heatmap/region overlap
//! quantification, and clinical-language localization.

use std::collections::BTreeMap;
use std::path::Path;

use crate::pathology::Pathology;
use crate::raster::{Heatmap, RegionCode, SegmentationMask};

/// Default activation threshold for overlap quantification.
pub const DEFAULT_TAU: f64 = 0.4;

/// Deterministic tie-break order for dominant-region selection: left lung
/// regions before right, then diaphragm, esophagus, background.
const TIE_ORDER: [RegionCode; 11] = [
    RegionCode::LeftLung,
    RegionCode::LeftUpper,
    RegionCode::LeftMiddle,
    RegionCode::LeftLower,
    RegionCode::RightLung,
    RegionCode::RightUpper,
    RegionCode::RightMiddle,
    RegionCode::RightLower,
    RegionCode::Diaphragm,
    RegionCode::Esophagus,
    RegionCode::Background,
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnatomyError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no focal localization: heatmap has no activation at this threshold")]
    NoActivation,
    #[error("phrase table error: {0}")]
    PhraseTable(String),
}

/// How a heatmap's activation mass distributes over anatomical regions.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpatialCorrelation {
    /// Activation-mass fraction per region present in the mask.
    pub fractions: BTreeMap<RegionCode, f64>,
    pub dominant_region: RegionCode,
    /// Mass-weighted centroid in image coordinates; `None` when there is no
    /// activation.
    pub centroid: Option<(f64, f64)>,
    /// Total heatmap value over active cells.
    pub active_mass: f64,
    pub tau: f64,
    /// Binary IoU between the active-cell set and each region, kept for
    /// diagnostics alongside the mass-weighted fractions.
    pub iou: BTreeMap<RegionCode, f64>,
}

impl SpatialCorrelation {
    pub fn has_activation(&self) -> bool {
        self.active_mass > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnatomicalDescription {
    pub pathology: Pathology,
    pub region_phrase: String,
    pub sentence: String,
    pub correlation: SpatialCorrelation,
}

/// Relabel each lung's cells Upper/Middle/Lower by splitting that lung's
/// bounding-box height into three bands; remainder rows are assigned
/// top-down. Non-lung labels are unchanged.
pub fn partition_lung_fields(mask: &SegmentationMask) -> Result<SegmentationMask, AnatomyError> {
    let has_lung = mask
        .labels
        .iter()
        .any(|&r| r == RegionCode::LeftLung || r == RegionCode::RightLung);
    if !has_lung {
        return Err(AnatomyError::InvalidInput(
            "mask contains no LeftLung or RightLung cells".into(),
        ));
    }
    let mut labels = mask.labels.clone();
    for (side, bands) in [
        (
            RegionCode::LeftLung,
            [RegionCode::LeftUpper, RegionCode::LeftMiddle, RegionCode::LeftLower],
        ),
        (
            RegionCode::RightLung,
            [RegionCode::RightUpper, RegionCode::RightMiddle, RegionCode::RightLower],
        ),
    ] {
        let rows: Vec<usize> = (0..mask.height)
            .filter(|&y| (0..mask.width).any(|x| mask.get(x, y) == side))
            .collect();
        let (Some(&top), Some(&bottom)) = (rows.first(), rows.last()) else {
            continue;
        };
        let span = bottom - top + 1;
        let base = span / 3;
        let rem = span % 3;
        // Band heights top-down, e.g. span 7 -> 3/2/2.
        let heights = [
            base + usize::from(rem > 0),
            base + usize::from(rem > 1),
            base,
        ];
        for y in top..=bottom {
            let offset = y - top;
            let band = if offset < heights[0] {
                0
            } else if offset < heights[0] + heights[1] {
                1
            } else {
                2
            };
            for x in 0..mask.width {
                if mask.get(x, y) == side {
                    labels[y * mask.width + x] = bands[band];
                }
            }
        }
    }
    SegmentationMask::new(mask.width, mask.height, labels)
        .map_err(|e| AnatomyError::InvalidInput(e.to_string()))
}

/// Quantify how a heatmap's activation mass overlaps the mask's regions.
///
/// Active cells are those with value `>= tau`. Region fractions are ratios of
/// summed heatmap values; the centroid is the value-weighted mean coordinate
/// over active cells. When no activation mass exists the distinguished
/// no-activation result is returned (all fractions zero, Background dominant,
/// no centroid).
pub fn correlate(
    heatmap: &Heatmap,
    mask: &SegmentationMask,
    tau: f64,
) -> Result<SpatialCorrelation, AnatomyError> {
    if heatmap.width != mask.width || heatmap.height != mask.height {
        return Err(AnatomyError::InvalidInput(format!(
            "heatmap {}x{} does not match mask {}x{}",
            heatmap.width, heatmap.height, mask.width, mask.height
        )));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(AnatomyError::InvalidInput(format!("tau {tau} outside [0, 1]")));
    }

    let mut mass: BTreeMap<RegionCode, f64> = BTreeMap::new();
    let mut region_cells: BTreeMap<RegionCode, usize> = BTreeMap::new();
    let mut active_in_region: BTreeMap<RegionCode, usize> = BTreeMap::new();
    for &r in &mask.labels {
        mass.entry(r).or_insert(0.0);
        *region_cells.entry(r).or_insert(0) += 1;
        active_in_region.entry(r).or_insert(0);
    }

    let mut total = 0.0;
    let mut active_cells = 0usize;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for y in 0..mask.height {
        for x in 0..mask.width {
            let v = heatmap.get(x, y);
            if v < tau {
                continue;
            }
            active_cells += 1;
            let r = mask.get(x, y);
            *active_in_region.get_mut(&r).unwrap() += 1;
            *mass.get_mut(&r).unwrap() += v;
            total += v;
            cx += v * x as f64;
            cy += v * y as f64;
        }
    }

    let mut iou = BTreeMap::new();
    for (&r, &inter) in &active_in_region {
        let union = region_cells[&r] + active_cells - inter;
        iou.insert(r, if union == 0 { 0.0 } else { inter as f64 / union as f64 });
    }

    if total <= 0.0 {
        let fractions = mass.keys().map(|&r| (r, 0.0)).collect();
        return Ok(SpatialCorrelation {
            fractions,
            dominant_region: RegionCode::Background,
            centroid: None,
            active_mass: 0.0,
            tau,
            iou,
        });
    }

    let fractions: BTreeMap<RegionCode, f64> =
        mass.iter().map(|(&r, &m)| (r, m / total)).collect();
    // First strict maximum in TIE_ORDER wins, so ties resolve leftward.
    let mut dominant: Option<(RegionCode, f64)> = None;
    for r in TIE_ORDER {
        if let Some(&f) = fractions.get(&r) {
            if dominant.is_none_or(|(_, best)| f > best) {
                dominant = Some((r, f));
            }
        }
    }
    let dominant_region = dominant.expect("mask is nonempty").0;

    Ok(SpatialCorrelation {
        fractions,
        dominant_region,
        centroid: Some((cx / total, cy / total)),
        active_mass: total,
        tau,
        iou,
    })
}

/// Editable phrase tables for localization sentences.
#[derive(Debug, Clone)]
pub struct PhraseTables {
    region: BTreeMap<RegionCode, String>,
    pathology: BTreeMap<Pathology, String>,
}

const DEFAULT_REGION_PHRASES: &str = include_str!("../data/region_phrases.txt");
const DEFAULT_PATHOLOGY_PHRASES: &str = include_str!("../data/pathology_phrases.txt");

impl Default for PhraseTables {
    fn default() -> Self {
        PhraseTables::parse(DEFAULT_REGION_PHRASES, DEFAULT_PATHOLOGY_PHRASES)
            .expect("bundled phrase tables are well-formed")
    }
}

fn region_by_name(name: &str) -> Option<RegionCode> {
    RegionCode::ALL
        .into_iter()
        .find(|r| format!("{r:?}").eq_ignore_ascii_case(name))
}

impl PhraseTables {
    pub fn from_files(region_path: &Path, pathology_path: &Path) -> Result<Self, AnatomyError> {
        let read = |p: &Path| {
            std::fs::read_to_string(p)
                .map_err(|e| AnatomyError::PhraseTable(format!("{}: {e}", p.display())))
        };
        PhraseTables::parse(&read(region_path)?, &read(pathology_path)?)
    }

    pub fn parse(region_text: &str, pathology_text: &str) -> Result<Self, AnatomyError> {
        let mut region = BTreeMap::new();
        for (name, phrase) in parse_table(region_text)? {
            let code = region_by_name(&name)
                .ok_or_else(|| AnatomyError::PhraseTable(format!("unknown region {name:?}")))?;
            region.insert(code, phrase);
        }
        let mut pathology = BTreeMap::new();
        for (label, phrase) in parse_table(pathology_text)? {
            let p = Pathology::parse_label(&label)
                .map_err(|e| AnatomyError::PhraseTable(e.to_string()))?;
            pathology.insert(p, phrase);
        }
        Ok(PhraseTables { region, pathology })
    }

    pub fn region_phrase(&self, r: RegionCode) -> Result<&str, AnatomyError> {
        self.region
            .get(&r)
            .map(String::as_str)
            .ok_or_else(|| AnatomyError::PhraseTable(format!("no phrase for region {r:?}")))
    }

    pub fn pathology_phrase(&self, p: Pathology) -> Result<&str, AnatomyError> {
        self.pathology
            .get(&p)
            .map(String::as_str)
            .ok_or_else(|| AnatomyError::PhraseTable(format!("no phrase for {p}")))
    }
}

fn parse_table(text: &str) -> Result<Vec<(String, String)>, AnatomyError> {
    let mut rows = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, phrase) = line
            .split_once('|')
            .ok_or_else(|| AnatomyError::PhraseTable(format!("bad table line: {line:?}")))?;
        rows.push((key.trim().to_string(), phrase.trim().to_string()));
    }
    Ok(rows)
}

/// Render the localization sentence for a pathology's dominant region.
///
/// An effusion dominating either lower lung field gains the costophrenic
/// clause for the matching side.
pub fn describe(
    pathology: Pathology,
    correlation: &SpatialCorrelation,
    tables: &PhraseTables,
) -> Result<AnatomicalDescription, AnatomyError> {
    if !correlation.has_activation() {
        return Err(AnatomyError::NoActivation);
    }
    let region = correlation.dominant_region;
    let region_phrase = tables.region_phrase(region)?.to_string();
    let pathology_phrase = tables.pathology_phrase(pathology)?;
    let lower_field = matches!(region, RegionCode::LeftLower | RegionCode::RightLower);
    let sentence = if pathology == Pathology::PleuralEffusion && lower_field {
        format!(
            "The {pathology_phrase} is localized to the {region_phrase}, with associated blunting of the costophrenic angle."
        )
    } else {
        format!("The {pathology_phrase} is localized to the {region_phrase}.")
    };
    Ok(AnatomicalDescription {
        pathology,
        region_phrase,
        sentence,
        correlation: correlation.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Grid;

    fn mask_from_codes(width: usize, height: usize, codes: &[RegionCode]) -> SegmentationMask {
        SegmentationMask::new(width, height, codes.to_vec()).unwrap()
    }

    fn heatmap(width: usize, height: usize, values: &[f64]) -> Heatmap {
        Heatmap::from_grid(Grid::new(width, height, values.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn partition_exact_thirds() {
        use RegionCode::*;
        let mask = mask_from_codes(1, 3, &[LeftLung, LeftLung, LeftLung]);
        let out = partition_lung_fields(&mask).unwrap();
        assert_eq!(out.labels, vec![LeftUpper, LeftMiddle, LeftLower]);
    }

    #[test]
    fn partition_seven_row_bands_are_3_2_2() {
        use RegionCode::*;
        let mask = mask_from_codes(1, 7, &[RightLung; 7]);
        let out = partition_lung_fields(&mask).unwrap();
        assert_eq!(
            out.labels,
            vec![
                RightUpper, RightUpper, RightUpper, RightMiddle, RightMiddle, RightLower,
                RightLower
            ]
        );
    }

    #[test]
    fn partition_right_only_leaves_no_left_codes() {
        use RegionCode::*;
        let mask = mask_from_codes(2, 2, &[RightLung, Background, RightLung, Diaphragm]);
        let out = partition_lung_fields(&mask).unwrap();
        assert!(out.labels.iter().all(|r| !r.is_left_lung()));
        // Lung cells stay lung cells.
        for (before, after) in mask.labels.iter().zip(&out.labels) {
            assert_eq!(before.is_lung(), after.is_lung());
        }
    }

    #[test]
    fn partition_requires_lung_cells() {
        let mask = mask_from_codes(1, 2, &[RegionCode::Background, RegionCode::Diaphragm]);
        assert!(partition_lung_fields(&mask).is_err());
    }

    #[test]
    fn correlate_containment_gives_unit_fraction() {
        use RegionCode::*;
        let mask = mask_from_codes(2, 1, &[LeftLower, Background]);
        let h = heatmap(2, 1, &[0.8, 0.0]);
        let c = correlate(&h, &mask, 0.4).unwrap();
        assert_eq!(c.fractions[&LeftLower], 1.0);
        assert_eq!(c.fractions[&Background], 0.0);
        assert_eq!(c.dominant_region, LeftLower);
    }

    #[test]
    fn correlate_symmetric_tie_breaks_left() {
        use RegionCode::*;
        let mask = mask_from_codes(2, 1, &[RightLung, LeftLung]);
        let h = heatmap(2, 1, &[0.5, 0.5]);
        let c = correlate(&h, &mask, 0.0).unwrap();
        assert_eq!(c.fractions[&LeftLung], 0.5);
        assert_eq!(c.fractions[&RightLung], 0.5);
        assert_eq!(c.dominant_region, LeftLung);
    }

    #[test]
    fn correlate_no_activation_is_distinguished() {
        let mask = mask_from_codes(2, 1, &[RegionCode::LeftLung, RegionCode::LeftLung]);
        let h = heatmap(2, 1, &[0.0, 0.0]);
        let c = correlate(&h, &mask, 0.0).unwrap();
        assert!(!c.has_activation());
        assert_eq!(c.dominant_region, RegionCode::Background);
        assert_eq!(c.centroid, None);
        assert!(c.fractions.values().all(|&f| f == 0.0));
    }

    #[test]
    fn correlate_rejects_dimension_mismatch() {
        let mask = mask_from_codes(2, 1, &[RegionCode::LeftLung, RegionCode::LeftLung]);
        let h = heatmap(1, 1, &[0.5]);
        assert!(correlate(&h, &mask, 0.0).is_err());
    }

    #[test]
    fn correlate_centroid_is_mass_weighted() {
        let mask = mask_from_codes(3, 1, &[RegionCode::LeftLung; 3]);
        let h = heatmap(3, 1, &[0.0, 0.25, 0.75]);
        let c = correlate(&h, &mask, 0.1).unwrap();
        let (cx, cy) = c.centroid.unwrap();
        assert!((cx - (0.25 * 1.0 + 0.75 * 2.0)).abs() < 1e-12);
        assert_eq!(cy, 0.0);
    }

    #[test]
    fn describe_effusion_in_left_lower_gets_costophrenic_clause() {
        use RegionCode::*;
        let mask = mask_from_codes(1, 1, &[LeftLower]);
        let h = heatmap(1, 1, &[1.0]);
        let c = correlate(&h, &mask, 0.4).unwrap();
        let d = describe(Pathology::PleuralEffusion, &c, &PhraseTables::default()).unwrap();
        assert_eq!(
            d.sentence,
            "The effusion is localized to the left lower lung field, with associated blunting of the costophrenic angle."
        );
    }

    #[test]
    fn describe_plain_template() {
        let mask = mask_from_codes(1, 1, &[RegionCode::RightLung]);
        let h = heatmap(1, 1, &[0.9]);
        let c = correlate(&h, &mask, 0.4).unwrap();
        let d = describe(Pathology::Pneumonia, &c, &PhraseTables::default()).unwrap();
        assert_eq!(d.sentence, "The pneumonia is localized to the right lung.");
    }

    #[test]
    fn describe_no_activation_is_an_error() {
        let mask = mask_from_codes(1, 1, &[RegionCode::LeftLung]);
        let h = heatmap(1, 1, &[0.0]);
        let c = correlate(&h, &mask, 0.4).unwrap();
        assert_eq!(
            describe(Pathology::Pneumonia, &c, &PhraseTables::default()),
            Err(AnatomyError::NoActivation)
        );
    }

    #[test]
    fn describe_background_only_when_truly_maximal() {
        use RegionCode::*;
        let mask = mask_from_codes(3, 1, &[Background, Background, LeftLung]);
        let h = heatmap(3, 1, &[0.9, 0.9, 0.3]);
        let c = correlate(&h, &mask, 0.2).unwrap();
        assert_eq!(c.dominant_region, Background);
        let h2 = heatmap(3, 1, &[0.1, 0.1, 0.9]);
        let c2 = correlate(&h2, &mask, 0.05).unwrap();
        assert_eq!(c2.dominant_region, LeftLung);
    }
}
