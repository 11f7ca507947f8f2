//! Manifest format: one JSON record per line
//! `{"id":..., "path":..., "label":..., "fps":..., "n_frames":...}`,
//! with the split stored as a sibling `split.json` mapping id -> partition.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video::{ppm, VideoMeta};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitSet {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct WireRecord {
    id: String,
    path: String,
    label: String,
    fps: f64,
    n_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct DatasetManifest {
    pub records: Vec<VideoMeta>,
    /// Sorted unique labels.
    pub classes: Vec<String>,
    /// Empty until a split is assigned.
    pub split: BTreeMap<String, SplitSet>,
}

impl DatasetManifest {
    pub fn from_records(records: Vec<VideoMeta>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Manifest("empty manifest".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut classes = std::collections::BTreeSet::new();
        for r in &records {
            r.validate()?;
            if r.label.is_empty() {
                return Err(Error::Manifest(format!("record {}: empty label", r.id)));
            }
            if !seen.insert(r.id.clone()) {
                return Err(Error::Manifest(format!("duplicate id {}", r.id)));
            }
            classes.insert(r.label.clone());
        }
        Ok(DatasetManifest {
            records,
            classes: classes.into_iter().collect(),
            split: BTreeMap::new(),
        })
    }

    pub fn record(&self, id: &str) -> Option<&VideoMeta> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Records assigned to one side of the split.
    pub fn records_for(&self, side: SplitSet) -> Vec<VideoMeta> {
        self.records
            .iter()
            .filter(|r| self.split.get(&r.id) == Some(&side))
            .cloned()
            .collect()
    }

    pub fn has_split(&self) -> bool {
        !self.split.is_empty()
    }

    /// The split must cover every record exactly.
    pub fn validate_split(&self) -> Result<()> {
        for r in &self.records {
            if !self.split.contains_key(&r.id) {
                return Err(Error::Manifest(format!("split missing id {}", r.id)));
            }
        }
        for id in self.split.keys() {
            if self.record(id).is_none() {
                return Err(Error::Manifest(format!("split names unknown id {id}")));
            }
        }
        Ok(())
    }
}

fn split_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_file_name("split.json")
}

/// Parse a manifest (and sibling split.json when present) without touching
/// the frame directories.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireRecord = serde_json::from_str(line)
            .map_err(|e| Error::Manifest(format!("line {}: {e}", lineno + 1)))?;
        records.push(VideoMeta {
            id: wire.id,
            fps: wire.fps,
            n_frames: wire.n_frames,
            label: wire.label,
            source_path: wire.path,
        });
    }
    let mut manifest = DatasetManifest::from_records(records)?;
    let sp = split_path(path);
    if sp.exists() {
        let text = std::fs::read_to_string(&sp).map_err(|e| Error::io(&sp, e))?;
        manifest.split = serde_json::from_str(&text)?;
        manifest.validate_split()?;
    }
    Ok(manifest)
}

/// Read and validate: every frame directory is spot-checked (first frame
/// decodable, frame files match the declared count).
pub fn ingest_manifest(path: &Path) -> Result<DatasetManifest> {
    let manifest = read_manifest(path)?;
    for r in &manifest.records {
        let dir = PathBuf::from(&r.source_path);
        ppm::read_frame(&dir, 0)
            .map_err(|e| Error::Manifest(format!("record {}: first frame unreadable: {e}", r.id)))?;
        let last = ppm::frame_path(&dir, r.n_frames - 1);
        if !last.exists() {
            return Err(Error::Manifest(format!(
                "record {}: expected {} frames but {} is missing",
                r.id,
                r.n_frames,
                last.display()
            )));
        }
        let past = ppm::frame_path(&dir, r.n_frames);
        if past.exists() {
            return Err(Error::Manifest(format!(
                "record {}: more frames on disk than the declared {}",
                r.id, r.n_frames
            )));
        }
    }
    Ok(manifest)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut out = String::new();
    for r in &manifest.records {
        let wire = WireRecord {
            id: r.id.clone(),
            path: r.source_path.clone(),
            label: r.label.clone(),
            fps: r.fps,
            n_frames: r.n_frames,
        };
        out.push_str(&serde_json::to_string(&wire)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
    if manifest.has_split() {
        let sp = split_path(path);
        std::fs::write(&sp, serde_json::to_string_pretty(&manifest.split)?)
            .map_err(|e| Error::io(&sp, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta(id: &str, label: &str) -> VideoMeta {
        VideoMeta {
            id: id.into(),
            fps: 30.0,
            n_frames: 10,
            label: label.into(),
            source_path: format!("/data/{id}"),
        }
    }

    #[test]
    fn empty_manifest_is_rejected() {
        let err = DatasetManifest::from_records(vec![]).unwrap_err();
        assert!(err.to_string().contains("empty manifest"));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let err =
            DatasetManifest::from_records(vec![meta("a", "x"), meta("a", "y")]).unwrap_err();
        assert!(err.to_string().contains("duplicate id a"));
    }

    #[test]
    fn classes_are_sorted_unique_labels() {
        let m = DatasetManifest::from_records(vec![
            meta("a", "normal"),
            meta("b", "fight"),
            meta("c", "normal"),
        ])
        .unwrap();
        assert_eq!(m.classes, vec!["fight", "normal"]);
    }

    #[test]
    fn round_trip_manifest_with_split() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("manifest.jsonl");
        let mut m = DatasetManifest::from_records(
            (0..50)
                .map(|i| meta(&format!("v{i:02}"), if i % 2 == 0 { "calm" } else { "agitated" }))
                .collect(),
        )
        .unwrap();
        for (i, r) in m.records.clone().iter().enumerate() {
            m.split.insert(
                r.id.clone(),
                if i % 3 == 0 { SplitSet::Test } else { SplitSet::Train },
            );
        }
        write_manifest(&path, &m).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn ingest_detects_missing_frames() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("vid");
        let frames: Vec<crate::tensor::Tensor<f32>> = (0..3)
            .map(|_| crate::tensor::Tensor::filled(&[3, 4, 4], 0.5))
            .collect();
        let mut m = meta("vid", "calm");
        m.n_frames = 4; // claims one more frame than exists
        m.source_path = dir.to_string_lossy().into_owned();
        ppm::write_video(&dir, &frames, &m).unwrap();
        let path = tmp.path().join("manifest.jsonl");
        write_manifest(&path, &DatasetManifest::from_records(vec![m]).unwrap()).unwrap();
        let err = ingest_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("vid"), "{err}");
    }
}
