use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid_data, Error, Result};
use crate::recording::{LaneDepartureEvent, Recording};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SIGNAL_FILE: &str = "signal.f64le";
pub const DATASET_FILE: &str = "dataset.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    subject_id: String,
    fs_hz: f64,
    channel_labels: Vec<String>,
    earlobe_indices: Option<[usize; 2]>,
    n_samples: usize,
    events: Vec<LaneDepartureEvent>,
}

pub fn save_recording(rec: &Recording, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        subject_id: rec.subject_id().to_string(),
        fs_hz: rec.fs_hz(),
        channel_labels: rec.channel_labels().to_vec(),
        earlobe_indices: rec.earlobe_indices(),
        n_samples: rec.n_samples(),
        events: rec.events().to_vec(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let path = dir.join(SIGNAL_FILE);
    fs::write(&path, f64s_to_le_bytes(rec.data())).map_err(|e| Error::io(&path, e))
}

pub fn load_recording(dir: &Path) -> Result<Recording> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    let path = dir.join(SIGNAL_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let expected = m.channel_labels.len() * m.n_samples * 8;
    if bytes.len() != expected {
        return Err(invalid_data!(
            "{}: {} bytes, expected {} ({} channels x {} samples x 8)",
            path.display(),
            bytes.len(),
            expected,
            m.channel_labels.len(),
            m.n_samples
        ));
    }
    Recording::new(
        m.subject_id,
        m.fs_hz,
        m.channel_labels,
        m.earlobe_indices,
        le_bytes_to_f64s(&bytes),
        m.events,
    )
}

pub(crate) fn f64s_to_le_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn le_bytes_to_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

/// `dataset.json`: ordered subject directory names plus free-form metadata
/// (the synthetic generator stores its profile there).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub subjects: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<serde_json::Value>,
}

/// A dataset directory opened for reading.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub index: DatasetIndex,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(DATASET_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let index: DatasetIndex = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if index.subjects.is_empty() {
            return Err(invalid_data!("{} lists no subjects", path.display()));
        }
        Ok(Self {
            root: root.to_path_buf(),
            index,
        })
    }

    pub fn subjects(&self) -> &[String] {
        &self.index.subjects
    }

    pub fn subject_dir(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn load(&self, name: &str) -> Result<Recording> {
        load_recording(&self.subject_dir(name))
    }
}

pub fn write_dataset_index(root: &Path, index: &DatasetIndex) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let path = root.join(DATASET_FILE);
    let text = serde_json::to_string_pretty(index).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
