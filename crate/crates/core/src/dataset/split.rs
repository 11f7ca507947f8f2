//! Stratified train/test splitting: each class is shuffled and divided
//! separately so the per-class train fraction stays within one record of the
//! requested ratio.

use rand::seq::SliceRandom;

use super::manifest::{DatasetManifest, SplitSet};
use crate::error::{Error, Result};
use crate::rng;

pub fn split_dataset(manifest: &mut DatasetManifest, ratio: f64, seed: u64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio {ratio} must lie in (0, 1)"
        )));
    }
    manifest.split.clear();
    for (class_idx, class) in manifest.classes.clone().iter().enumerate() {
        let mut ids: Vec<String> = manifest
            .records
            .iter()
            .filter(|r| &r.label == class)
            .map(|r| r.id.clone())
            .collect();
        if ids.len() < 2 {
            return Err(Error::Manifest(format!(
                "class {class} has {} record(s); need at least 2 to split",
                ids.len()
            )));
        }
        let mut r = rng::chacha(rng::mix(&[rng::mix_tag(seed, "split"), class_idx as u64]));
        ids.shuffle(&mut r);
        // round(ratio * n), clamped so both sides keep at least one record
        let n = ids.len();
        let n_train = (((ratio * n as f64) + 0.5).floor() as usize).clamp(1, n - 1);
        for (i, id) in ids.into_iter().enumerate() {
            let side = if i < n_train { SplitSet::Train } else { SplitSet::Test };
            manifest.split.insert(id, side);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::VideoMeta;

    fn manifest(counts: &[(&str, usize)]) -> DatasetManifest {
        let mut records = Vec::new();
        for (label, n) in counts {
            for i in 0..*n {
                records.push(VideoMeta {
                    id: format!("{label}-{i:04}"),
                    fps: 30.0,
                    n_frames: 10,
                    label: label.to_string(),
                    source_path: "/dev/null".into(),
                });
            }
        }
        DatasetManifest::from_records(records).unwrap()
    }

    fn train_count(m: &DatasetManifest, label: &str) -> usize {
        m.records
            .iter()
            .filter(|r| r.label == label && m.split[&r.id] == SplitSet::Train)
            .count()
    }

    #[test]
    fn sixty_forty_on_balanced_hundred() {
        let mut m = manifest(&[("calm", 50), ("agitated", 50)]);
        split_dataset(&mut m, 0.6, 7).unwrap();
        assert_eq!(train_count(&m, "calm"), 30);
        assert_eq!(train_count(&m, "agitated"), 30);
        assert_eq!(m.records_for(SplitSet::Train).len(), 60);
        assert_eq!(m.records_for(SplitSet::Test).len(), 40);
    }

    #[test]
    fn deterministic_under_seed() {
        let mut a = manifest(&[("x", 9), ("y", 13)]);
        let mut b = a.clone();
        split_dataset(&mut a, 0.6, 42).unwrap();
        split_dataset(&mut b, 0.6, 42).unwrap();
        assert_eq!(a.split, b.split);
        let mut c = a.clone();
        split_dataset(&mut c, 0.6, 43).unwrap();
        assert_ne!(a.split, c.split);
    }

    #[test]
    fn thirteen_class_counts_round_correctly() {
        let sizes = [310, 295, 410, 105, 77, 512, 233, 209, 301, 450, 388, 260, 480];
        let counts: Vec<(String, usize)> = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| (format!("class{i:02}"), n))
            .collect();
        let refs: Vec<(&str, usize)> = counts.iter().map(|(s, n)| (s.as_str(), *n)).collect();
        let mut m = manifest(&refs);
        assert_eq!(m.records.len(), 4030);
        split_dataset(&mut m, 0.6, 3).unwrap();
        for (label, n) in &refs {
            let t = train_count(&m, label) as f64;
            let want = (0.6 * *n as f64 + 0.5).floor();
            assert!((t - want).abs() <= 1.0, "{label}: {t} vs {want}");
        }
    }

    #[test]
    fn split_is_a_partition() {
        let mut m = manifest(&[("a", 7), ("b", 4)]);
        split_dataset(&mut m, 0.6, 1).unwrap();
        m.validate_split().unwrap();
        let train = m.records_for(SplitSet::Train).len();
        let test = m.records_for(SplitSet::Test).len();
        assert_eq!(train + test, m.records.len());
    }

    #[test]
    fn tiny_class_is_rejected() {
        let mut m = manifest(&[("a", 5), ("lonely", 1)]);
        let err = split_dataset(&mut m, 0.6, 1).unwrap_err();
        assert!(err.to_string().contains("lonely"));
    }

    #[test]
    fn bad_ratio_is_rejected() {
        let mut m = manifest(&[("a", 4)]);
        assert!(split_dataset(&mut m, 0.0, 1).is_err());
        assert!(split_dataset(&mut m, 1.0, 1).is_err());
    }
}
