//! Dataset manifests and train/test splitting.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

/// Held-out share used when no test count is given: 10 of 95 samples.
pub const DEFAULT_TEST_FRACTION: f64 = 10.0 / 95.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// Our-camera cube (`.hsc`), relative paths resolve against the manifest directory.
    pub input_path: PathBuf,
    /// Reference cube (`.hsc`).
    pub gt_path: PathBuf,
    /// Root segmentation at ground-truth resolution (PNG, nonzero = root).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seg_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: Vec<SampleRecord>,
    pub split: Split,
    pub seed: u64,
}

/// Test count for `total` samples at the default held-out share, at least 1 when possible.
pub fn default_test_count(total: usize) -> usize {
    if total < 2 {
        return 0;
    }
    ((total as f64 * DEFAULT_TEST_FRACTION).round() as usize).clamp(1, total - 1)
}

/// Uniform random split, deterministic per seed. Spatial overlap between
/// samples is not considered.
pub fn split_dataset(ids: &[String], seed: u64, test_count: usize) -> Result<Split> {
    if test_count > 0 && test_count >= ids.len() {
        return Err(TrainError::Manifest(format!(
            "test count {test_count} must be smaller than the {} samples",
            ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test_idx = order[..test_count].to_vec();
    let mut train_idx = order[test_count..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok(Split {
        train: train_idx.into_iter().map(|i| ids[i].clone()).collect(),
        test: test_idx.into_iter().map(|i| ids[i].clone()).collect(),
    })
}

impl DatasetManifest {
    /// Manifest with a fresh split of `samples`.
    pub fn new(samples: Vec<SampleRecord>, seed: u64, test_count: usize) -> Result<Self> {
        let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
        let split = split_dataset(&ids, seed, test_count)?;
        let m = DatasetManifest { samples, split, seed };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(TrainError::Manifest(format!("duplicate sample id {:?}", s.id)));
            }
        }
        let mut seen = HashSet::new();
        for id in self.split.train.iter().chain(&self.split.test) {
            if !ids.contains(id.as_str()) {
                return Err(TrainError::Manifest(format!("split names unknown sample {id:?}")));
            }
            if !seen.insert(id.as_str()) {
                return Err(TrainError::Manifest(format!("sample {id:?} appears twice in the split")));
            }
        }
        if seen.len() != ids.len() {
            return Err(TrainError::Manifest("split does not cover every sample".into()));
        }
        Ok(())
    }

    pub fn record(&self, id: &str) -> Option<&SampleRecord> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| TrainError::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|source| TrainError::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut m.samples {
            s.input_path = resolve(base, &s.input_path);
            s.gt_path = resolve(base, &s.gt_path);
            s.seg_path = s.seg_path.as_ref().map(|p| resolve(base, p));
        }
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| TrainError::io(path, e))
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
