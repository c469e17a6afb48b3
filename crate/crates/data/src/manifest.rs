//! Split manifests and dataset loading.
//!
//! Manifests are line-oriented text, `path<TAB>raw_label`, with `#` comment
//! lines. Image ids are root-relative paths. Test manifests are immutable
//! inputs and never resampled; reading one during a training phase trips the
//! access guard.

use crate::descriptor::{builtin, DatasetDescriptor};
use crate::guard::{is_evaluation_phase, is_training_phase};
use crate::labels::LabelMap;
use crate::DataError;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn file_name(&self) -> &'static str {
        match self {
            Split::Train => "train.tsv",
            Split::Test => "test.tsv",
        }
    }
}

/// One split of one dataset: `(image id, raw label)` entries plus protocol
/// provenance.
#[derive(Debug, Clone)]
pub struct SplitManifest {
    pub split: Split,
    pub protocol: String,
    entries: Vec<(String, String)>,
}

impl SplitManifest {
    pub fn new(split: Split, protocol: &str, entries: Vec<(String, String)>) -> Self {
        SplitManifest {
            split,
            protocol: protocol.to_string(),
            entries,
        }
    }

    pub fn read(path: &Path, split: Split) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::BadManifest {
            path: path.display().to_string(),
            problem: e.to_string(),
        })?;
        let mut protocol = "unspecified".to_string();
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(p) = rest.trim().strip_prefix("protocol=") {
                    protocol = p.to_string();
                }
                continue;
            }
            let (path_part, label) = line.split_once('\t').ok_or_else(|| {
                DataError::BadManifest {
                    path: path.display().to_string(),
                    problem: format!("line {}: expected path<TAB>label", i + 1),
                }
            })?;
            entries.push((path_part.to_string(), label.to_string()));
        }
        if entries.is_empty() {
            return Err(DataError::BadManifest {
                path: path.display().to_string(),
                problem: "no entries".into(),
            });
        }
        Ok(SplitManifest {
            split,
            protocol,
            entries,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let mut out = String::new();
        out.push_str(&format!("# protocol={}\n", self.protocol));
        for (p, l) in &self.entries {
            out.push_str(p);
            out.push('\t');
            out.push_str(l);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Entries of this split. Reading a test manifest during a training
    /// phase, or a train manifest during an evaluation phase, is a protocol
    /// violation and aborts.
    pub fn items(&self) -> &[(String, String)] {
        if self.split == Split::Test && is_training_phase() {
            panic!(
                "access guard: test manifest read during a training/sampling phase \
                 (protocol {})",
                self.protocol
            );
        }
        if self.split == Split::Train && is_evaluation_phase() {
            panic!(
                "access guard: train manifest read during an evaluation phase \
                 (protocol {})",
                self.protocol
            );
        }
        &self.entries
    }

    /// Entry count (allowed in any phase; reveals no content).
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Content digest of the manifest (split, protocol, all entries).
    pub fn digest(&self) -> String {
        let mut buf = format!("{:?}|{}|", self.split, self.protocol);
        for (p, l) in &self.entries {
            buf.push_str(p);
            buf.push('\t');
            buf.push_str(l);
            buf.push('\n');
        }
        rsprompt_backbone::archive::digest_bytes(buf.as_bytes())
    }
}

/// A loaded dataset: descriptor, label map, both splits, and the derived
/// class table (ids follow the sorted raw labels).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub descriptor: DatasetDescriptor,
    pub root: PathBuf,
    pub label_map: LabelMap,
    pub train: SplitManifest,
    pub test: SplitManifest,
    /// Raw class labels in id order.
    pub class_raw: Vec<String>,
    /// Normalized class names in id order (the prompt vocabulary).
    pub class_vocab: Vec<String>,
}

impl Dataset {
    /// Load a registered dataset with its shipped label map.
    pub fn load(name: &str, root: &Path, manifest_root: &Path) -> Result<Self, DataError> {
        let descriptor = builtin(name)?;
        let label_map = LabelMap::builtin(name)?;
        Self::load_with(descriptor, label_map, root, manifest_root)
    }

    /// Load either a registered dataset or a user-supplied one: when
    /// `<manifests>/<name>/descriptor.json` exists it defines the dataset
    /// (with `labelmap.tsv` beside it); otherwise the registry is consulted.
    pub fn load_auto(name: &str, root: &Path, manifest_root: &Path) -> Result<Self, DataError> {
        let descriptor_path = manifest_root.join(name).join("descriptor.json");
        if descriptor_path.is_file() {
            let descriptor: DatasetDescriptor =
                serde_json::from_str(&std::fs::read_to_string(&descriptor_path)?).map_err(
                    |e| DataError::BadManifest {
                        path: descriptor_path.display().to_string(),
                        problem: e.to_string(),
                    },
                )?;
            let label_map =
                LabelMap::from_file(name, &manifest_root.join(name).join("labelmap.tsv"))?;
            return Self::load_with(descriptor, label_map, root, manifest_root);
        }
        Self::load(name, root, manifest_root)
    }

    /// Load against an explicit descriptor and label map (custom data,
    /// tests). All integrity checks still apply.
    pub fn load_with(
        descriptor: DatasetDescriptor,
        label_map: LabelMap,
        root: &Path,
        manifest_root: &Path,
    ) -> Result<Self, DataError> {
        let dir = manifest_root.join(&descriptor.name);
        let train = SplitManifest::read(&dir.join(Split::Train.file_name()), Split::Train)?;
        let test = SplitManifest::read(&dir.join(Split::Test.file_name()), Split::Test)?;

        let total = train.len() + test.len();
        if total != descriptor.image_count {
            return Err(DataError::Integrity {
                name: descriptor.name.clone(),
                what: "images",
                expected: descriptor.image_count,
                found: total,
            });
        }
        // class table from both splits, raw labels sorted
        let mut classes: BTreeMap<String, ()> = BTreeMap::new();
        for (_, label) in train.entries.iter().chain(test.entries.iter()) {
            classes.entry(label.clone()).or_insert(());
        }
        if classes.len() != descriptor.class_count {
            return Err(DataError::Integrity {
                name: descriptor.name.clone(),
                what: "classes",
                expected: descriptor.class_count,
                found: classes.len(),
            });
        }
        let class_raw: Vec<String> = classes.into_keys().collect();
        let class_vocab = class_raw
            .iter()
            .map(|raw| label_map.normalize(raw).map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;

        // every manifest image must exist on disk at load time
        for (p, _) in train.entries.iter().chain(test.entries.iter()) {
            let full = root.join(p);
            if !full.is_file() {
                return Err(DataError::MissingImage(full.display().to_string()));
            }
        }

        Ok(Dataset {
            descriptor,
            root: root.to_path_buf(),
            label_map,
            train,
            test,
            class_raw,
            class_vocab,
        })
    }

    /// Class id of a raw label.
    pub fn class_id(&self, raw: &str) -> Result<usize, DataError> {
        self.class_raw
            .binary_search_by(|c| c.as_str().cmp(raw))
            .map_err(|_| DataError::UnmappedLabel(raw.to_string(), "class table".into()))
    }

    /// Absolute path of an image id.
    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }
}
