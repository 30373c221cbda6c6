use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, write_canonical_json, DataError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestItem {
    pub image_id: String,
    pub true_class: String,
}

/// Labelled evaluation images over a fixed class set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub class_ids: Vec<String>,
    pub items: Vec<ManifestItem>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<(), DataError> {
        let mut classes = BTreeSet::new();
        for c in &self.class_ids {
            if c.trim().is_empty() {
                return Err(DataError::Manifest("empty class id".into()));
            }
            if !classes.insert(c.as_str()) {
                return Err(DataError::Manifest(format!("duplicate class id {c:?}")));
            }
        }
        let mut images = BTreeSet::new();
        for item in &self.items {
            if !classes.contains(item.true_class.as_str()) {
                return Err(DataError::Manifest(format!(
                    "item {:?} has class {:?} not in class_ids",
                    item.image_id, item.true_class
                )));
            }
            if !images.insert(item.image_id.as_str()) {
                return Err(DataError::Manifest(format!(
                    "duplicate image id {:?}",
                    item.image_id
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let manifest: Self = read_json(path)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        self.validate()?;
        write_canonical_json(path, self)
    }
}

/// Class list for tree building: either a bare JSON array of names or an
/// object with a `class_ids` array (a manifest qualifies).
pub fn load_labels(path: &Path) -> Result<Vec<String>, DataError> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Labels {
        List(Vec<String>),
        Object { class_ids: Vec<String> },
    }
    let labels = match read_json::<Labels>(path)? {
        Labels::List(l) => l,
        Labels::Object { class_ids } => class_ids,
    };
    let mut seen = BTreeSet::new();
    for l in &labels {
        if l.trim().is_empty() || !seen.insert(l.as_str()) {
            return Err(DataError::Manifest(format!(
                "invalid or duplicate label {l:?}"
            )));
        }
    }
    Ok(labels)
}
