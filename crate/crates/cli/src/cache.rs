//! Content-addressed store of finished solver runs.
//!
//! The key is a SHA-256 over the serialized run inputs, so any change to
//! the structure, orientation or solver settings misses the cache.

use std::path::{Path, PathBuf};

use nvsic::collection::CollectionSettings;
use nvsic::farfield::DipoleAxis;
use nvsic::geometry::StructureSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Serialize)]
struct Key<'a> {
    structure: &'a StructureSpec,
    orientation: DipoleAxis,
    settings: &'a CollectionSettings,
}

/// What a finished run leaves behind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub efficiency: f64,
    pub collected_power: f64,
    pub total_emitted_power: f64,
    pub plane_efficiency: f64,
    pub steps: u64,
    pub decayed_fraction: f64,
    pub warning: Option<String>,
}

pub fn run_hash(structure: &StructureSpec, orientation: DipoleAxis, settings: &CollectionSettings) -> String {
    let text = toml::to_string(&Key { structure, orientation, settings }).expect("run inputs serialize");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub struct RunCache {
    dir: PathBuf,
}

impl RunCache {
    pub fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf() }
    }

    fn path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.toml"))
    }

    pub fn get(&self, hash: &str) -> Option<RunRecord> {
        let text = std::fs::read_to_string(self.path(hash)).ok()?;
        toml::from_str(&text).ok()
    }

    pub fn put(&self, hash: &str, record: &RunRecord) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let tmp = self.dir.join(format!("{hash}.tmp"));
        std::fs::write(&tmp, toml::to_string(record).expect("record serializes"))?;
        std::fs::rename(tmp, self.path(hash))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_inputs() {
        let s = CollectionSettings::default();
        let a = run_hash(&StructureSpec::bulk(), DipoleAxis::Horizontal, &s);
        assert_eq!(a, run_hash(&StructureSpec::bulk(), DipoleAxis::Horizontal, &s));
        assert_ne!(a, run_hash(&StructureSpec::bulk(), DipoleAxis::Vertical, &s));
        assert_ne!(a, run_hash(&StructureSpec::bulk(), DipoleAxis::Horizontal, &s.with_cell_size(20.0)));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cache = RunCache::new(dir.path());
        let r = RunRecord {
            efficiency: 0.03,
            collected_power: 1.5,
            total_emitted_power: 50.0,
            plane_efficiency: 0.031,
            steps: 1200,
            decayed_fraction: 1e-5,
            warning: None,
        };
        assert!(cache.get("abc").is_none());
        cache.put("abc", &r).unwrap();
        assert_eq!(cache.get("abc"), Some(r));
    }
}
