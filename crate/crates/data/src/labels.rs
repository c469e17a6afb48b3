//! Raw-label normalization: versioned two-column maps turning dataset folder
//! names into prompt-ready class names.

use crate::DataError;
use std::collections::BTreeMap;
use std::path::Path;

macro_rules! builtin_map {
    ($name:expr) => {
        (
            $name,
            include_str!(concat!(
                env!("CARGO_MANIFEST_DIR"),
                "/../../assets/labelmaps/",
                $name,
                ".tsv"
            )),
        )
    };
}

const BUILTIN_MAPS: [(&str, &str); 9] = [
    builtin_map!("uc_merced"),
    builtin_map!("aid"),
    builtin_map!("eurosat"),
    builtin_map!("resisc45"),
    builtin_map!("rsscn7"),
    builtin_map!("siri_whu"),
    builtin_map!("clrs"),
    builtin_map!("optimal31"),
    builtin_map!("mlrsnet"),
];

/// Total raw-to-normalized mapping for one dataset.
#[derive(Debug, Clone)]
pub struct LabelMap {
    pub dataset: String,
    pub version: String,
    map: BTreeMap<String, String>,
}

impl LabelMap {
    /// The shipped map for a registered dataset.
    pub fn builtin(dataset: &str) -> Result<Self, DataError> {
        let (_, text) = BUILTIN_MAPS
            .iter()
            .find(|(n, _)| *n == dataset)
            .ok_or_else(|| DataError::UnknownDataset(dataset.to_string()))?;
        Self::from_text(dataset, text)
    }

    /// Parse `raw<TAB>normalized` lines. A `version N` token in the first
    /// comment line is recorded; normalized names must be underscore-free.
    pub fn from_text(dataset: &str, text: &str) -> Result<Self, DataError> {
        let mut map = BTreeMap::new();
        let mut version = "unversioned".to_string();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('#') {
                if let Some(pos) = line.find("version") {
                    version = line[pos..].trim().to_string();
                }
                continue;
            }
            let (raw, normalized) = line.split_once('\t').ok_or_else(|| {
                DataError::BadLabelMap(dataset.to_string(), format!("line {}: no tab", i + 1))
            })?;
            let normalized = normalized.trim();
            if normalized.contains('_') {
                return Err(DataError::BadLabelMap(
                    dataset.to_string(),
                    format!("normalized name {normalized:?} contains an underscore"),
                ));
            }
            if map.insert(raw.trim().to_string(), normalized.to_string()).is_some() {
                return Err(DataError::BadLabelMap(
                    dataset.to_string(),
                    format!("duplicate raw label {raw:?}"),
                ));
            }
        }
        if map.is_empty() {
            return Err(DataError::BadLabelMap(dataset.to_string(), "empty map".into()));
        }
        Ok(LabelMap {
            dataset: dataset.to_string(),
            version,
            map,
        })
    }

    pub fn from_file(dataset: &str, path: &Path) -> Result<Self, DataError> {
        Self::from_text(dataset, &std::fs::read_to_string(path)?)
    }

    /// Normalize one raw label. Lookup is exact first, then
    /// case-insensitive; anything unmapped is an error so maps stay total.
    pub fn normalize(&self, raw: &str) -> Result<&str, DataError> {
        if let Some(n) = self.map.get(raw) {
            return Ok(n);
        }
        let lower = raw.to_lowercase();
        self.map
            .iter()
            .find(|(k, _)| k.to_lowercase() == lower)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| DataError::UnmappedLabel(raw.to_string(), self.version.clone()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Raw labels in sorted order.
    pub fn raw_labels(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }
}

/// Free-function form of [`LabelMap::normalize`].
pub fn normalize_label(raw: &str, map: &LabelMap) -> Result<String, DataError> {
    map.normalize(raw).map(str::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_normalization_examples() {
        let resisc = LabelMap::builtin("resisc45").unwrap();
        assert_eq!(resisc.normalize("mobile_home_park").unwrap(), "mobile home park");
        let aid = LabelMap::builtin("aid").unwrap();
        assert_eq!(aid.normalize("bareland").unwrap(), "bare land");
        let eurosat = LabelMap::builtin("eurosat").unwrap();
        assert_eq!(eurosat.normalize("AnnualCrop").unwrap(), "annual crop land");
    }

    #[test]
    fn builtin_maps_have_expected_sizes() {
        for (name, classes) in [
            ("uc_merced", 21),
            ("aid", 30),
            ("eurosat", 10),
            ("resisc45", 45),
            ("rsscn7", 7),
            ("siri_whu", 12),
            ("clrs", 25),
            ("optimal31", 31),
        ] {
            assert_eq!(LabelMap::builtin(name).unwrap().len(), classes, "{name}");
        }
        // the mlrsnet export ships the known scene folders; manifests may
        // extend it (unmapped labels fail loudly)
        assert!(LabelMap::builtin("mlrsnet").unwrap().len() >= 46);
    }

    #[test]
    fn normalized_names_never_contain_underscores() {
        for (name, _) in super::BUILTIN_MAPS {
            let m = LabelMap::builtin(name).unwrap();
            for raw in m.raw_labels() {
                assert!(!m.normalize(raw).unwrap().contains('_'));
            }
        }
    }

    #[test]
    fn unmapped_label_is_an_error() {
        let m = LabelMap::builtin("eurosat").unwrap();
        assert!(matches!(
            m.normalize("Glacier"),
            Err(DataError::UnmappedLabel(_, _))
        ));
    }

    #[test]
    fn underscore_in_normalized_name_rejected() {
        let err = LabelMap::from_text("x", "raw\tstill_bad\n");
        assert!(matches!(err, Err(DataError::BadLabelMap(_, _))));
    }

    #[test]
    fn version_recorded() {
        let m = LabelMap::builtin("eurosat").unwrap();
        assert!(m.version.contains("version 1"));
    }
}
