//! Dataset manifests: the JSON files binding tile images, label maps, and
//! box annotations into train/test splits.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BBox, DataError};

/// Which side of the train/test split a manifest describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => f.write_str("train"),
            Split::Test => f.write_str("test"),
        }
    }
}

/// One tile's worth of dataset: an id, optional image and label-map paths
/// (relative paths resolve against the manifest's own directory), and the
/// box annotations.
///
/// `image` is absent for sampled label maps that have not been rendered
/// yet; `labelmap` is absent when only boxes were recorded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub image: Option<PathBuf>,
    pub labelmap: Option<PathBuf>,
    pub boxes: Vec<BBox>,
    /// Where the entry came from: `real`, or `synthetic:<model>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

/// An ordered set of [`ManifestEntry`]s with unique ids.
///
/// Equality ignores where the manifest was loaded from, so a manifest
/// round-trips through JSON bit-for-bit comparable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
    /// Directory the manifest was loaded from, for resolving relative
    /// paths. In-memory manifests have none until saved or loaded.
    #[serde(skip)]
    base_dir: Option<PathBuf>,
}

impl PartialEq for DatasetManifest {
    fn eq(&self, other: &Self) -> bool {
        self.split == other.split && self.entries == other.entries
    }
}

impl DatasetManifest {
    pub fn new(split: Split) -> Self {
        DatasetManifest {
            split,
            entries: Vec::new(),
            base_dir: None,
        }
    }

    pub fn base_dir(&self) -> Option<&Path> {
        self.base_dir.as_deref()
    }

    pub fn set_base_dir(&mut self, dir: impl Into<PathBuf>) {
        self.base_dir = Some(dir.into());
    }

    /// Appends an entry, rejecting a duplicate id.
    pub fn push(&mut self, entry: ManifestEntry) -> Result<(), DataError> {
        if self.entries.iter().any(|e| e.id == entry.id) {
            return Err(DataError::DuplicateId(entry.id));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    /// Resolves a stored path against the manifest's directory.
    pub fn resolve(&self, stored: &Path) -> PathBuf {
        if stored.is_absolute() {
            return stored.to_path_buf();
        }
        match &self.base_dir {
            Some(base) => base.join(stored),
            None => stored.to_path_buf(),
        }
    }

    /// Parses and fully validates a manifest file: well-formed JSON, unique
    /// ids, and every referenced image or label map present on disk.
    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
            context: "reading manifest",
            path: path.to_path_buf(),
            source,
        })?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|source| DataError::MalformedManifest {
                path: path.to_path_buf(),
                source,
            })?;
        manifest.base_dir = path.parent().map(Path::to_path_buf);
        manifest.validate()?;
        Ok(manifest)
    }

    /// Checks id uniqueness and that referenced files exist.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(DataError::DuplicateId(e.id.clone()));
            }
            for stored in [&e.image, &e.labelmap].into_iter().flatten() {
                let resolved = self.resolve(stored);
                if !resolved.is_file() {
                    return Err(DataError::MissingFile {
                        id: e.id.clone(),
                        path: resolved,
                    });
                }
            }
        }
        Ok(())
    }

    /// Writes the manifest as pretty-printed JSON and records the new
    /// location as the base directory.
    pub fn save(&mut self, path: &Path) -> Result<(), DataError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serialization is total");
        std::fs::write(path, text.as_bytes()).map_err(|source| DataError::Io {
            context: "writing manifest",
            path: path.to_path_buf(),
            source,
        })?;
        self.base_dir = path.parent().map(Path::to_path_buf);
        Ok(())
    }

    /// Rewrites stored paths so the manifest stays valid when saved under
    /// `new_base`: paths under it become relative, everything else becomes
    /// absolute.
    pub fn rebase(&mut self, new_base: &Path) {
        let old_base = self.base_dir.clone();
        for e in &mut self.entries {
            for stored in [&mut e.image, &mut e.labelmap].into_iter().flatten() {
                let absolute = if stored.is_absolute() {
                    stored.clone()
                } else {
                    match &old_base {
                        Some(base) => base.join(&*stored),
                        None => stored.clone(),
                    }
                };
                *stored = match absolute.strip_prefix(new_base) {
                    Ok(rel) => rel.to_path_buf(),
                    Err(_) => absolute,
                };
            }
        }
        self.base_dir = Some(new_base.to_path_buf());
    }

    /// Verifies two manifests share no entry ids, a precondition for
    /// merging and for honest train/test separation.
    pub fn ensure_disjoint(&self, other: &DatasetManifest) -> Result<(), DataError> {
        let mine: BTreeSet<&str> = self.ids().collect();
        let shared: Vec<String> = other
            .ids()
            .filter(|id| mine.contains(id))
            .map(str::to_owned)
            .collect();
        if shared.is_empty() {
            Ok(())
        } else {
            Err(DataError::OverlappingIds(shared))
        }
    }
}
