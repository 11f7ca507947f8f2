//! Batch generator: one producer thread reads, samples, resizes, and batches
//! sequences into a bounded channel; the training loop consumes. Order is the
//! seeded shuffle order no matter how producer and consumer interleave, and
//! at most `buffer_batches` prepared batches exist at any moment.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::augment::{augment, AugmentSpec};
use super::ppm::read_frame;
use super::resize::resize_frame;
use super::sampler::{compute_step, sample_whole_video};
use super::{stack_sequence, FrameSequence, VideoMeta};
use crate::error::{Error, Result};
use crate::layers::ModelConfig;
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    /// One whole-video sequence per video.
    SingleSequence,
    /// Overlapping windows along the video.
    Sliding,
}

#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    pub seq_len: usize,
    pub frame_size: usize,
    pub batch: usize,
    pub mode: SampleMode,
    /// Span of one sliding window in seconds; fixes the sampling step from fps.
    pub window_seconds: f64,
    /// Frames between sliding starts; default `(seq_len/2) * step`.
    pub sliding_stride: Option<usize>,
    pub augment: Option<AugmentSpec>,
    pub seed: u64,
    /// Channel capacity in batches; bounds producer memory.
    pub buffer_batches: usize,
}

impl GeneratorConfig {
    pub fn from_model(cfg: &ModelConfig, mode: SampleMode, seed: u64) -> Self {
        GeneratorConfig {
            seq_len: cfg.seq_len,
            frame_size: cfg.frame_size,
            batch: cfg.batch,
            mode,
            window_seconds: 1.0,
            sliding_stride: None,
            augment: None,
            seed,
            buffer_batches: 2,
        }
    }
}

/// One prepared batch: sequences stacked to `[B, L, 3, S, S]`.
pub struct Batch {
    pub sequences: Tensor<f32>,
    pub labels: Vec<String>,
    pub ids: Vec<String>,
    pub starts: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Sequence `i` as an `[L,3,S,S]` tensor.
    pub fn sequence(&self, i: usize) -> Tensor<f32> {
        let shape = self.sequences.shape();
        let len: usize = shape[1..].iter().product();
        Tensor::new(
            shape[1..].to_vec(),
            self.sequences.data()[i * len..(i + 1) * len].to_vec(),
        )
        .expect("batch slice is well-formed")
    }
}

/// An item is one sequence to be cut from one video.
#[derive(Clone, Debug)]
struct WorkItem {
    video: usize,
    start: usize,
    step: usize,
    whole_video: bool,
}

/// Enumerate the sequence starts for one video under a mode.
fn enumerate_items(cfg: &GeneratorConfig, video: usize, meta: &VideoMeta) -> Result<Vec<WorkItem>> {
    match cfg.mode {
        SampleMode::SingleSequence => Ok(vec![WorkItem {
            video,
            start: 0,
            step: 0,
            whole_video: true,
        }]),
        SampleMode::Sliding => {
            let step = compute_step(meta.fps, cfg.window_seconds, cfg.seq_len)?;
            let span = cfg.seq_len * step;
            if meta.n_frames < span {
                // Too short for one window: fall back to a padded whole-video
                // sequence so the video still contributes.
                return Ok(vec![WorkItem {
                    video,
                    start: 0,
                    step: 0,
                    whole_video: true,
                }]);
            }
            let stride = cfg
                .sliding_stride
                .unwrap_or_else(|| (cfg.seq_len / 2).max(1) * step)
                .max(1);
            let mut items = Vec::new();
            let mut start = 0;
            // A window needs its last frame start + (L-1)*step; this matches
            // the streaming emission schedule exactly.
            while start + (cfg.seq_len - 1) * step + 1 <= meta.n_frames {
                items.push(WorkItem {
                    video,
                    start,
                    step,
                    whole_video: false,
                });
                start += stride;
            }
            Ok(items)
        }
    }
}

/// Cut, resize, and optionally augment one sequence from a stored video.
pub fn load_sequence(
    meta: &VideoMeta,
    item_start: usize,
    item_step: usize,
    whole_video: bool,
    cfg: &GeneratorConfig,
) -> Result<FrameSequence> {
    let dir = PathBuf::from(&meta.source_path);
    let (indices, step, padded) = if whole_video {
        let s = sample_whole_video(meta.n_frames, cfg.seq_len)?;
        (s.indices, s.step, s.padded)
    } else {
        (
            (0..cfg.seq_len).map(|i| item_start + i * item_step).collect(),
            item_step,
            false,
        )
    };
    let mut frames = Vec::with_capacity(indices.len());
    for &idx in &indices {
        let frame = read_frame(&dir, idx)?;
        frames.push(resize_frame(&frame, cfg.frame_size)?);
    }
    let seq = stack_sequence(&frames, &meta.id, indices[0], step, padded)?;
    match &cfg.augment {
        Some(spec) => {
            // Per-item randomization happens here, not in `augment` itself:
            // the transform seed is re-mixed per sequence, and a base spec
            // with flip enabled mirrors roughly half the sequences.
            let mut spec = spec.clone();
            spec.seed = rng::mix(&[spec.seed, cfg.seed, item_start as u64, hash_id(&meta.id)]);
            if spec.flip {
                spec.flip = rng::chacha(rng::mix_tag(spec.seed, "flip")).gen::<bool>();
            }
            augment(&seq, &spec)
        }
        None => Ok(seq),
    }
}

fn hash_id(id: &str) -> u64 {
    rng::mix_tag(0, id)
}

pub struct BatchGenerator {
    rx: Option<Receiver<Result<Batch>>>,
    handle: Option<JoinHandle<()>>,
    skipped: Arc<AtomicUsize>,
}

impl BatchGenerator {
    pub fn new(records: Vec<VideoMeta>, cfg: GeneratorConfig) -> Result<BatchGenerator> {
        if records.is_empty() {
            return Err(Error::InvalidArgument("batch generator: empty record list".into()));
        }
        if cfg.batch == 0 || cfg.seq_len == 0 {
            return Err(Error::InvalidArgument("batch generator: batch and seq_len must be >= 1".into()));
        }
        if let Some(spec) = &cfg.augment {
            spec.validate()?;
        }
        let mut items = Vec::new();
        for (i, meta) in records.iter().enumerate() {
            meta.validate()?;
            items.extend(enumerate_items(&cfg, i, meta)?);
        }
        let mut shuffle_rng = rng::chacha(rng::mix_tag(cfg.seed, "shuffle"));
        items.shuffle(&mut shuffle_rng);

        let skipped = Arc::new(AtomicUsize::new(0));
        let (tx, rx) = sync_channel(cfg.buffer_batches.max(1));
        let skip_count = Arc::clone(&skipped);
        let handle = std::thread::spawn(move || {
            for chunk in items.chunks(cfg.batch) {
                let mut seqs = Vec::new();
                let mut labels = Vec::new();
                let mut ids = Vec::new();
                let mut starts = Vec::new();
                for item in chunk {
                    let meta = &records[item.video];
                    match load_sequence(meta, item.start, item.step, item.whole_video, &cfg) {
                        Ok(seq) => {
                            starts.push(seq.start_index);
                            seqs.push(seq.frames);
                            labels.push(meta.label.clone());
                            ids.push(meta.id.clone());
                        }
                        Err(e) => {
                            log::warn!("skipping sequence from video {}: {e}", meta.id);
                            skip_count.fetch_add(1, Ordering::SeqCst);
                        }
                    }
                }
                if seqs.is_empty() {
                    continue;
                }
                let shape = seqs[0].shape().to_vec();
                let mut data = Vec::with_capacity(seqs.len() * seqs[0].numel());
                for s in &seqs {
                    data.extend_from_slice(s.data());
                }
                let sequences = Tensor::new(
                    vec![seqs.len(), shape[0], shape[1], shape[2], shape[3]],
                    data,
                )
                .expect("sequence shapes agree");
                let batch = Batch {
                    sequences,
                    labels,
                    ids,
                    starts,
                };
                if tx.send(Ok(batch)).is_err() {
                    return; // consumer went away
                }
            }
        });
        Ok(BatchGenerator {
            rx: Some(rx),
            handle: Some(handle),
            skipped,
        })
    }

    /// Sequences skipped because their video could not be read.
    pub fn skipped(&self) -> usize {
        self.skipped.load(Ordering::SeqCst)
    }
}

impl Iterator for BatchGenerator {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        self.rx.as_ref()?.recv().ok()
    }
}

impl Drop for BatchGenerator {
    fn drop(&mut self) {
        drop(self.rx.take());
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::ppm::write_video;
    use std::path::Path;

    fn write_test_video(root: &Path, id: &str, n_frames: usize, label: &str) -> VideoMeta {
        let dir = root.join(id);
        let frames: Vec<Tensor<f32>> = (0..n_frames)
            .map(|t| Tensor::from_fn(&[3, 6, 6], |i| ((i + t * 11) % 19) as f32 / 19.0))
            .collect();
        let meta = VideoMeta {
            id: id.to_string(),
            fps: 30.0,
            n_frames,
            label: label.to_string(),
            source_path: dir.to_string_lossy().into_owned(),
        };
        write_video(&dir, &frames, &meta).unwrap();
        meta
    }

    fn base_cfg(mode: SampleMode) -> GeneratorConfig {
        GeneratorConfig {
            seq_len: 4,
            frame_size: 6,
            batch: 16,
            mode,
            window_seconds: 4.0 / 30.0,
            sliding_stride: None,
            augment: None,
            seed: 7,
            buffer_batches: 2,
        }
    }

    #[test]
    fn single_sequence_batch_count() {
        let tmp = tempfile::tempdir().unwrap();
        let records: Vec<VideoMeta> = (0..32)
            .map(|i| write_test_video(tmp.path(), &format!("v{i:02}"), 8, "calm"))
            .collect();
        let batches: Vec<Batch> = BatchGenerator::new(records, base_cfg(SampleMode::SingleSequence))
            .unwrap()
            .map(|b| b.unwrap())
            .collect();
        assert_eq!(batches.len(), 2);
        assert!(batches.iter().all(|b| b.len() == 16));
    }

    #[test]
    fn same_seed_gives_identical_stream() {
        let tmp = tempfile::tempdir().unwrap();
        let records: Vec<VideoMeta> = (0..5)
            .map(|i| write_test_video(tmp.path(), &format!("v{i}"), 10, "calm"))
            .collect();
        let collect = || -> Vec<(Vec<String>, Vec<u32>)> {
            BatchGenerator::new(records.clone(), base_cfg(SampleMode::SingleSequence))
                .unwrap()
                .map(|b| {
                    let b = b.unwrap();
                    let bits = b.sequences.data().iter().map(|v| v.to_bits()).collect();
                    (b.ids.clone(), bits)
                })
                .collect()
        };
        assert_eq!(collect(), collect());
    }

    #[test]
    fn sliding_start_enumeration() {
        // 300 frames, L=30, step 1, stride 15 -> 19 sequences.
        let cfg = GeneratorConfig {
            seq_len: 30,
            window_seconds: 1.0,
            ..base_cfg(SampleMode::Sliding)
        };
        let meta = VideoMeta {
            id: "x".into(),
            fps: 30.0,
            n_frames: 300,
            label: "calm".into(),
            source_path: "/nonexistent".into(),
        };
        let items = enumerate_items(&cfg, 0, &meta).unwrap();
        assert_eq!(items.len(), 19);
        assert_eq!(items[0].start, 0);
        assert_eq!(items[1].start, 15);
        assert_eq!(items[18].start, 270);
        assert!(items.iter().all(|i| i.step == 1));
    }

    #[test]
    fn unreadable_video_is_skipped_and_counted() {
        let tmp = tempfile::tempdir().unwrap();
        let good = write_test_video(tmp.path(), "good", 8, "calm");
        let mut bad = good.clone();
        bad.id = "bad".into();
        bad.source_path = tmp.path().join("missing").to_string_lossy().into_owned();
        let mut gen =
            BatchGenerator::new(vec![good, bad], base_cfg(SampleMode::SingleSequence)).unwrap();
        let batches: Vec<Batch> = gen.by_ref().map(|b| b.unwrap()).collect();
        let total: usize = batches.iter().map(|b| b.len()).sum();
        assert_eq!(total, 1);
        assert_eq!(gen.skipped(), 1);
        assert_eq!(batches[0].ids, vec!["good"]);
    }

    #[test]
    fn short_video_is_padded_in_single_mode() {
        let tmp = tempfile::tempdir().unwrap();
        let meta = write_test_video(tmp.path(), "short", 2, "calm");
        let cfg = base_cfg(SampleMode::SingleSequence);
        let seq = load_sequence(&meta, 0, 0, true, &cfg).unwrap();
        assert!(seq.padded);
        assert_eq!(seq.seq_len(), 4);
        // Frames 0,1 then frame 1 repeated twice.
        let len = 3 * 6 * 6;
        let d = seq.frames.data();
        assert_eq!(&d[len..2 * len], &d[2 * len..3 * len]);
        assert_eq!(&d[len..2 * len], &d[3 * len..4 * len]);
    }
}
