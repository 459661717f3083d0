//! Canonical pathology vocabulary and alias resolution.
//!
//! Every label that crosses a module boundary is a [`Pathology`]; free-form
//! spellings ("Effusion", "Enlarged  Cardiomediastinum") are resolved at the
//! edges via [`Pathology::parse_label`] and rejected when unknown.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The diagnostic vocabulary: the union of the coverage-matrix labels and the
/// fourteen evaluation labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pathology {
    Atelectasis,
    Cardiomegaly,
    Consolidation,
    Edema,
    Emphysema,
    EnlargedCardiomediastinum,
    Fibrosis,
    Fracture,
    Hernia,
    Infiltration,
    LungLesion,
    LungOpacity,
    Mass,
    NoFinding,
    Nodule,
    PleuralEffusion,
    PleuralOther,
    PleuralThickening,
    Pneumonia,
    Pneumothorax,
    SupportDevices,
}

impl Pathology {
    /// Every known pathology, in canonical order.
    pub const ALL: [Pathology; 21] = [
        Pathology::Atelectasis,
        Pathology::Cardiomegaly,
        Pathology::Consolidation,
        Pathology::Edema,
        Pathology::Emphysema,
        Pathology::EnlargedCardiomediastinum,
        Pathology::Fibrosis,
        Pathology::Fracture,
        Pathology::Hernia,
        Pathology::Infiltration,
        Pathology::LungLesion,
        Pathology::LungOpacity,
        Pathology::Mass,
        Pathology::NoFinding,
        Pathology::Nodule,
        Pathology::PleuralEffusion,
        Pathology::PleuralOther,
        Pathology::PleuralThickening,
        Pathology::Pneumonia,
        Pathology::Pneumothorax,
        Pathology::SupportDevices,
    ];

    /// The fourteen labels of the evaluation vocabulary, the key set of every
    /// diagnosis vector and ground-truth record.
    pub const EVAL_LABELS: [Pathology; 14] = [
        Pathology::Atelectasis,
        Pathology::Cardiomegaly,
        Pathology::Consolidation,
        Pathology::Edema,
        Pathology::EnlargedCardiomediastinum,
        Pathology::Fracture,
        Pathology::LungLesion,
        Pathology::LungOpacity,
        Pathology::NoFinding,
        Pathology::PleuralEffusion,
        Pathology::PleuralOther,
        Pathology::Pneumonia,
        Pathology::Pneumothorax,
        Pathology::SupportDevices,
    ];

    /// Canonical display spelling.
    pub fn label(self) -> &'static str {
        match self {
            Pathology::Atelectasis => "Atelectasis",
            Pathology::Cardiomegaly => "Cardiomegaly",
            Pathology::Consolidation => "Consolidation",
            Pathology::Edema => "Edema",
            Pathology::Emphysema => "Emphysema",
            Pathology::EnlargedCardiomediastinum => "Enlarged Cardiomediastinum",
            Pathology::Fibrosis => "Fibrosis",
            Pathology::Fracture => "Fracture",
            Pathology::Hernia => "Hernia",
            Pathology::Infiltration => "Infiltration",
            Pathology::LungLesion => "Lung Lesion",
            Pathology::LungOpacity => "Lung Opacity",
            Pathology::Mass => "Mass",
            Pathology::NoFinding => "No Finding",
            Pathology::Nodule => "Nodule",
            Pathology::PleuralEffusion => "Pleural Effusion",
            Pathology::PleuralOther => "Pleural Other",
            Pathology::PleuralThickening => "Pleural Thickening",
            Pathology::Pneumonia => "Pneumonia",
            Pathology::Pneumothorax => "Pneumothorax",
            Pathology::SupportDevices => "Support Devices",
        }
    }

    /// Resolve a free-form label to its canonical pathology.
    ///
    /// Matching is case-insensitive and ignores spacing and punctuation, so
    /// "pleural_effusion", "Pleural  Effusion" and "Effusion" all resolve to
    /// [`Pathology::PleuralEffusion`]. Unknown labels are an error, never
    /// silently dropped.
    pub fn parse_label(label: &str) -> Result<Pathology, UnknownLabel> {
        let key = normalize(label);
        for p in Pathology::ALL {
            if normalize(p.label()) == key {
                return Ok(p);
            }
        }
        match key.as_str() {
            "effusion" => Ok(Pathology::PleuralEffusion),
            "opacity" => Ok(Pathology::LungOpacity),
            "lesion" => Ok(Pathology::LungLesion),
            _ => Err(UnknownLabel(label.to_string())),
        }
    }
}

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

impl fmt::Display for Pathology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown pathology label: {0:?}")]
pub struct UnknownLabel(pub String);

impl Serialize for Pathology {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for Pathology {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Pathology::parse_label(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alias_resolution_covers_table_spellings() {
        assert_eq!(
            Pathology::parse_label("Effusion").unwrap(),
            Pathology::PleuralEffusion
        );
        assert_eq!(
            Pathology::parse_label("enlarged cardiomediastinum").unwrap(),
            Pathology::EnlargedCardiomediastinum
        );
        assert_eq!(
            Pathology::parse_label("Enlarged\nCardiomediastinum").unwrap(),
            Pathology::EnlargedCardiomediastinum
        );
        assert_eq!(
            Pathology::parse_label("lung_opacity").unwrap(),
            Pathology::LungOpacity
        );
    }

    #[test]
    fn unknown_labels_are_rejected() {
        assert!(Pathology::parse_label("Tuberculosis").is_err());
        assert!(Pathology::parse_label("").is_err());
    }

    #[test]
    fn parse_then_render_is_idempotent() {
        for p in Pathology::ALL {
            assert_eq!(Pathology::parse_label(p.label()).unwrap(), p);
            assert_eq!(
                Pathology::parse_label(&p.label().to_uppercase()).unwrap(),
                p
            );
        }
    }

    #[test]
    fn eval_labels_are_fourteen_and_known() {
        assert_eq!(Pathology::EVAL_LABELS.len(), 14);
        for p in Pathology::EVAL_LABELS {
            assert!(Pathology::ALL.contains(&p));
        }
    }
}
