//! Dataset formats, split handling, label masking and the synthetic
//! cross-domain generator.
//!
//! On disk a dataset is a directory with
//!
//! ```text
//! mapping.txt            "id name" per line
//! features/<video>.fseq  FSEQ feature sequences
//! groundTruth/<video>.txt  one class name per frame
//! splits/<name>.bundle   one video id per line
//! ```

mod fseq;
mod mask;
mod synth;
mod text;

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

pub use fseq::{decode_features, encode_features, read_features, write_features, MAGIC, VERSION};
pub use mask::{make_label_mask, retained_count, video_seed, MaskMode};
pub use synth::{generate_synthetic, synthetic_corpus, DomainTransform, SynthConfig, SOURCE_SPLIT, TARGET_SPLIT};
pub use text::{
    parse_bundle, parse_key_values, parse_labels, parse_value, read_bundle, read_key_values, read_labels,
    render_labels, write_bundle, write_labels, ClassMap,
};

use crate::{Error, Result};

pub const MAPPING_FILE: &str = "mapping.txt";
pub const FEATURES_DIR: &str = "features";
pub const LABELS_DIR: &str = "groundTruth";
pub const SPLITS_DIR: &str = "splits";

/// One video: `T x D` features and `T` class ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    pub features: Array2<f32>,
    pub labels: Vec<usize>,
}

impl Video {
    pub fn frames(&self) -> usize {
        self.labels.len()
    }
}

/// Validated, immutable collection of videos and named splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    mapping: ClassMap,
    videos: BTreeMap<String, Video>,
    splits: BTreeMap<String, Vec<String>>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl Dataset {
    pub fn new(mapping: ClassMap, videos: Vec<Video>, splits: Vec<(String, Vec<String>)>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        let mut dim = None;
        for v in videos {
            if !valid_id(&v.id) {
                return Err(Error::Dataset(format!("invalid video id {:?}", v.id)));
            }
            if v.features.nrows() != v.labels.len() {
                return Err(Error::Dataset(format!(
                    "video {}: {} feature frames but {} labels",
                    v.id,
                    v.features.nrows(),
                    v.labels.len()
                )));
            }
            if v.labels.is_empty() {
                return Err(Error::Dataset(format!("video {} has no frames", v.id)));
            }
            if let Some(&bad) = v.labels.iter().find(|&&l| l >= mapping.len()) {
                return Err(Error::Dataset(format!("video {}: class id {bad} not in mapping", v.id)));
            }
            if v.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::Dataset(format!("video {} has non-finite features", v.id)));
            }
            match dim {
                None => dim = Some(v.features.ncols()),
                Some(d) if d != v.features.ncols() => {
                    return Err(Error::Dataset(format!(
                        "video {} has feature dimension {}, others {d}",
                        v.id,
                        v.features.ncols()
                    )))
                }
                _ => {}
            }
            let id = v.id.clone();
            if by_id.insert(id.clone(), v).is_some() {
                return Err(Error::Dataset(format!("duplicate video id {id}")));
            }
        }
        let mut split_map = BTreeMap::new();
        for (name, ids) in splits {
            if !valid_id(&name) {
                return Err(Error::Dataset(format!("invalid split name {name:?}")));
            }
            if ids.is_empty() {
                return Err(Error::Dataset(format!("split {name} is empty")));
            }
            if let Some(missing) = ids.iter().find(|i| !by_id.contains_key(*i)) {
                return Err(Error::Dataset(format!("split {name} references missing video {missing}")));
            }
            if split_map.insert(name.clone(), ids).is_some() {
                return Err(Error::Dataset(format!("duplicate split {name}")));
            }
        }
        Ok(Dataset {
            mapping,
            videos: by_id,
            splits: split_map,
        })
    }

    pub fn mapping(&self) -> &ClassMap {
        &self.mapping
    }

    pub fn num_classes(&self) -> usize {
        self.mapping.len()
    }

    /// Feature dimension shared by every video.
    pub fn feature_dim(&self) -> usize {
        self.videos.values().next().map_or(0, |v| v.features.ncols())
    }

    pub fn videos(&self) -> impl Iterator<Item = &Video> {
        self.videos.values()
    }

    pub fn video(&self, id: &str) -> Option<&Video> {
        self.videos.get(id)
    }

    pub fn split_names(&self) -> impl Iterator<Item = &str> {
        self.splits.keys().map(String::as_str)
    }

    /// Videos of a split in bundle order.
    pub fn split(&self, name: &str) -> Result<Vec<&Video>> {
        let ids = self
            .splits
            .get(name)
            .ok_or_else(|| Error::Dataset(format!("no split named {name:?}")))?;
        Ok(ids.iter().map(|i| &self.videos[i]).collect())
    }

    /// Union of two datasets with identical class mappings.
    pub fn merge(self, other: Dataset) -> Result<Dataset> {
        if self.mapping != other.mapping {
            return Err(Error::Dataset("cannot merge datasets with different class mappings".into()));
        }
        let videos = self.videos.into_values().chain(other.videos.into_values()).collect();
        let splits = self.splits.into_iter().chain(other.splits).collect();
        Dataset::new(self.mapping, videos, splits)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        for dir in [FEATURES_DIR, LABELS_DIR, SPLITS_DIR] {
            let p = root.join(dir);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        self.mapping.write(&root.join(MAPPING_FILE))?;
        for v in self.videos.values() {
            write_features(&root.join(FEATURES_DIR).join(format!("{}.fseq", v.id)), &v.features)?;
            write_labels(&root.join(LABELS_DIR).join(format!("{}.txt", v.id)), &v.labels, &self.mapping)?;
        }
        for (name, ids) in &self.splits {
            write_bundle(&root.join(SPLITS_DIR).join(format!("{name}.bundle")), ids)?;
        }
        Ok(())
    }
}

/// Loads every split under `root/splits` together with the videos they
/// reference, checking cross-file consistency.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let mapping = ClassMap::read(&root.join(MAPPING_FILE))?;
    let split_dir = root.join(SPLITS_DIR);
    let entries = std::fs::read_dir(&split_dir).map_err(|e| Error::io(&split_dir, e))?;
    let mut splits = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&split_dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("bundle") {
            continue;
        }
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Dataset(format!("unreadable split file name {}", path.display())))?
            .to_string();
        splits.push((name, read_bundle(&path)?));
    }
    if splits.is_empty() {
        return Err(Error::Dataset(format!("no .bundle files in {}", split_dir.display())));
    }
    splits.sort();
    let mut ids: Vec<&String> = splits.iter().flat_map(|(_, ids)| ids).collect();
    ids.sort();
    ids.dedup();
    let mut videos = Vec::with_capacity(ids.len());
    for id in ids {
        if !valid_id(id) {
            return Err(Error::Dataset(format!("invalid video id {id:?} in a split bundle")));
        }
        let fpath = root.join(FEATURES_DIR).join(format!("{id}.fseq"));
        let lpath = root.join(LABELS_DIR).join(format!("{id}.txt"));
        if !fpath.exists() || !lpath.exists() {
            return Err(Error::Dataset(format!(
                "split bundle references missing video {id} (need {} and {})",
                fpath.display(),
                lpath.display()
            )));
        }
        let features = read_features(&fpath)?;
        let labels = read_labels(&lpath, &mapping)?;
        if features.nrows() != labels.len() {
            return Err(Error::Dataset(format!(
                "video {id}: features have {} frames but labels have {}",
                features.nrows(),
                labels.len()
            )));
        }
        videos.push(Video {
            id: id.clone(),
            features,
            labels,
        });
    }
    Dataset::new(mapping, videos, splits)
}
