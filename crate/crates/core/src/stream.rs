//! Real-time window inference over a frame feed, plus offline per-video
//! inference. A stored video pushed frame-by-frame produces exactly the same
//! probabilities as offline sliding evaluation: both enumerate window starts
//! `0, stride, 2*stride, ...`, a window needs its last frame
//! `start + (L-1)*step` to have arrived, and nothing is emitted before
//! `L*step` frames exist (warm-up).

use std::collections::VecDeque;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::SequenceClassifier;
use crate::tensor::Tensor;
use crate::video::sampler::{compute_step, sample_whole_video};
use crate::video::{ppm, resize_frame, SampleMode, VideoMeta};

/// Anything that can score one `[L,3,S,S]` window into a probability.
pub trait WindowScorer: Send + Sync {
    fn seq_len(&self) -> usize;
    fn frame_size(&self) -> usize;
    fn score(&self, window: &Tensor<f32>) -> Result<f32>;
}

impl WindowScorer for SequenceClassifier<f32> {
    fn seq_len(&self) -> usize {
        self.config().seq_len
    }

    fn frame_size(&self) -> usize {
        self.config().frame_size
    }

    fn score(&self, window: &Tensor<f32>) -> Result<f32> {
        self.predict(window)
    }
}

/// One emitted prediction. `span` is `[first, last]` source frame index of
/// the window; `frame` is the stream position at emission time.
#[derive(Clone, Debug, Serialize)]
pub struct AlertRecord {
    pub frame: u64,
    pub wall_ms: f64,
    pub p: f32,
    pub label: String,
    pub span: [u64; 2],
}

pub fn label_for(p: f32, threshold: f32) -> String {
    if p >= threshold { "anomaly" } else { "normal" }.to_string()
}

#[derive(Clone, Debug)]
pub struct StreamConfig {
    pub fps: f64,
    pub window_seconds: f64,
    pub threshold: f32,
    /// Frames between predictions; default `(L/2) * step` (half-window overlap).
    pub emit_stride: Option<usize>,
}

/// Ring buffer + emission schedule, shared by the sync and async paths.
struct WindowPlanner {
    seq_len: usize,
    frame_size: usize,
    step: usize,
    span: usize,
    stride: usize,
    ring: VecDeque<Tensor<f32>>,
    frames_seen: u64,
    next_start: u64,
    expected_dims: Option<(usize, usize)>,
}

impl WindowPlanner {
    fn new(seq_len: usize, frame_size: usize, cfg: &StreamConfig) -> Result<Self> {
        let step = compute_step(cfg.fps, cfg.window_seconds, seq_len)?;
        let stride = cfg
            .emit_stride
            .unwrap_or_else(|| (seq_len / 2).max(1) * step)
            .max(1);
        Ok(WindowPlanner {
            seq_len,
            frame_size,
            step,
            span: seq_len * step,
            stride,
            ring: VecDeque::new(),
            frames_seen: 0,
            next_start: 0,
            expected_dims: None,
        })
    }

    /// Ingest one raw frame; if a window became due, return
    /// `(start, window_tensor)`. At most one window per push; a backlog
    /// drains one window per subsequent frame.
    fn push(&mut self, frame: &Tensor<f32>) -> Result<Option<(u64, Tensor<f32>)>> {
        let shape = frame.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::InvalidShape {
                op: "push_frame",
                shape: shape.to_vec(),
                reason: "expected [3,H,W]".into(),
            });
        }
        let dims = (shape[1], shape[2]);
        match self.expected_dims {
            None => self.expected_dims = Some(dims),
            Some(want) if want != dims => {
                return Err(Error::InvalidShape {
                    op: "push_frame",
                    shape: shape.to_vec(),
                    reason: format!("frame geometry changed mid-stream, session saw {want:?}"),
                });
            }
            _ => {}
        }
        self.ring.push_back(resize_frame(frame, self.frame_size)?);
        if self.ring.len() > self.span {
            self.ring.pop_front();
        }
        self.frames_seen += 1;

        let last_needed = self.next_start + ((self.seq_len - 1) * self.step) as u64;
        if self.frames_seen < self.span as u64 || last_needed + 1 > self.frames_seen {
            return Ok(None);
        }
        let base = self.frames_seen - self.ring.len() as u64;
        debug_assert!(self.next_start >= base, "window evicted before emission");
        let mut frames = Vec::with_capacity(self.seq_len);
        for i in 0..self.seq_len {
            let src = self.next_start + (i * self.step) as u64;
            frames.push(self.ring[(src - base) as usize].clone());
        }
        let seq = crate::video::stack_sequence(&frames, "stream", self.next_start as usize, self.step, false)?;
        let start = self.next_start;
        self.next_start += self.stride as u64;
        Ok(Some((start, seq.frames)))
    }
}

/// Synchronous streaming session: inference runs inside `push_frame`.
pub struct StreamSession {
    scorer: Arc<dyn WindowScorer>,
    planner: WindowPlanner,
    threshold: f32,
    latencies_ms: Vec<f64>,
}

impl StreamSession {
    pub fn new(scorer: Arc<dyn WindowScorer>, cfg: &StreamConfig) -> Result<Self> {
        let planner = WindowPlanner::new(scorer.seq_len(), scorer.frame_size(), cfg)?;
        Ok(StreamSession {
            scorer,
            planner,
            threshold: cfg.threshold,
            latencies_ms: Vec::new(),
        })
    }

    pub fn step(&self) -> usize {
        self.planner.step
    }

    pub fn frames_seen(&self) -> u64 {
        self.planner.frames_seen
    }

    pub fn push_frame(&mut self, frame: &Tensor<f32>) -> Result<Option<AlertRecord>> {
        let Some((start, window)) = self.planner.push(frame)? else {
            return Ok(None);
        };
        let t0 = Instant::now();
        let p = self.scorer.score(&window)?;
        let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        self.latencies_ms.push(wall_ms);
        Ok(Some(AlertRecord {
            frame: self.planner.frames_seen - 1,
            wall_ms,
            p,
            label: label_for(p, self.threshold),
            span: [start, start + ((self.planner.seq_len - 1) * self.planner.step) as u64],
        }))
    }

    pub fn latencies_ms(&self) -> &[f64] {
        &self.latencies_ms
    }
}

/// (p50, p95) of recorded inference latencies.
pub fn latency_percentiles(latencies_ms: &[f64]) -> Option<(f64, f64)> {
    if latencies_ms.is_empty() {
        return None;
    }
    let mut sorted = latencies_ms.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pick = |q: f64| sorted[((sorted.len() - 1) as f64 * q).round() as usize];
    Some((pick(0.50), pick(0.95)))
}

struct Handoff {
    slot: Mutex<HandoffSlot>,
    ready: Condvar,
}

struct HandoffSlot {
    pending: Option<(u64, Tensor<f32>)>,
    done: bool,
    dropped: u64,
}

/// Pipelined session: ingestion never blocks on inference. Complete windows
/// go through a capacity-1 newest-wins handoff; replacing an unscored window
/// bumps the drop counter.
pub struct AsyncStream {
    planner: WindowPlanner,
    handoff: Arc<Handoff>,
    worker: Option<std::thread::JoinHandle<Result<Vec<AlertRecord>>>>,
}

pub struct AsyncOutcome {
    pub records: Vec<AlertRecord>,
    pub dropped_windows: u64,
}

impl AsyncStream {
    pub fn new(scorer: Arc<dyn WindowScorer>, cfg: &StreamConfig) -> Result<Self> {
        let planner = WindowPlanner::new(scorer.seq_len(), scorer.frame_size(), cfg)?;
        let (seq_len, step) = (planner.seq_len, planner.step);
        let threshold = cfg.threshold;
        let handoff = Arc::new(Handoff {
            slot: Mutex::new(HandoffSlot {
                pending: None,
                done: false,
                dropped: 0,
            }),
            ready: Condvar::new(),
        });
        let shared = Arc::clone(&handoff);
        let worker = std::thread::spawn(move || -> Result<Vec<AlertRecord>> {
            let mut records = Vec::new();
            loop {
                let taken = {
                    let mut slot = shared.slot.lock().expect("handoff poisoned");
                    loop {
                        if let Some(w) = slot.pending.take() {
                            break Some(w);
                        }
                        if slot.done {
                            break None;
                        }
                        slot = shared.ready.wait(slot).expect("handoff poisoned");
                    }
                };
                let Some((start, window)) = taken else {
                    return Ok(records);
                };
                let t0 = Instant::now();
                let p = scorer.score(&window)?;
                let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
                records.push(AlertRecord {
                    frame: start + ((seq_len - 1) * step) as u64,
                    wall_ms,
                    p,
                    label: label_for(p, threshold),
                    span: [start, start + ((seq_len - 1) * step) as u64],
                });
            }
        });
        Ok(AsyncStream {
            planner,
            handoff,
            worker: Some(worker),
        })
    }

    pub fn push_frame(&mut self, frame: &Tensor<f32>) -> Result<()> {
        if let Some(window) = self.planner.push(frame)? {
            let mut slot = self.handoff.slot.lock().expect("handoff poisoned");
            if slot.pending.replace(window).is_some() {
                slot.dropped += 1;
            }
            drop(slot);
            self.handoff.ready.notify_one();
        }
        Ok(())
    }

    pub fn dropped_windows(&self) -> u64 {
        self.handoff.slot.lock().expect("handoff poisoned").dropped
    }

    /// Signal end of stream and collect the worker's records.
    pub fn finish(mut self) -> Result<AsyncOutcome> {
        {
            let mut slot = self.handoff.slot.lock().expect("handoff poisoned");
            slot.done = true;
        }
        self.handoff.ready.notify_one();
        let records = self
            .worker
            .take()
            .expect("finish called once")
            .join()
            .expect("worker panicked")?;
        let dropped = self.handoff.slot.lock().expect("handoff poisoned").dropped;
        Ok(AsyncOutcome {
            records,
            dropped_windows: dropped,
        })
    }
}

impl Drop for AsyncStream {
    fn drop(&mut self) {
        if let Some(worker) = self.worker.take() {
            {
                let mut slot = self.handoff.slot.lock().expect("handoff poisoned");
                slot.done = true;
            }
            self.handoff.ready.notify_one();
            let _ = worker.join();
        }
    }
}

/// Per-video verdict from offline inference.
#[derive(Clone, Debug, Serialize)]
pub struct VideoVerdict {
    pub records: Vec<AlertRecord>,
    pub verdict: String,
    pub max_probability: f32,
    /// Set when the video was shorter than one window and the sequence was
    /// padded by repeating the last frame.
    pub padded: bool,
}

/// Offline inference over a stored video directory.
pub fn infer_video(
    scorer: &dyn WindowScorer,
    dir: &Path,
    mode: SampleMode,
    cfg: &StreamConfig,
) -> Result<VideoVerdict> {
    let meta = VideoMeta::load(dir)?;
    infer_video_meta(scorer, &meta, mode, cfg)
}

pub fn infer_video_meta(
    scorer: &dyn WindowScorer,
    meta: &VideoMeta,
    mode: SampleMode,
    cfg: &StreamConfig,
) -> Result<VideoVerdict> {
    meta.validate()?;
    let dir = Path::new(&meta.source_path);
    let seq_len = scorer.seq_len();
    let mut records = Vec::new();
    let mut padded = false;

    let mut score_window = |indices: &[usize], step: usize| -> Result<f32> {
        let mut frames = Vec::with_capacity(indices.len());
        for &i in indices {
            frames.push(resize_frame(&ppm::read_frame(dir, i)?, scorer.frame_size())?);
        }
        let seq = crate::video::stack_sequence(&frames, &meta.id, indices[0], step, false)?;
        let t0 = Instant::now();
        let p = scorer.score(&seq.frames)?;
        let wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        records.push(AlertRecord {
            frame: *indices.last().expect("non-empty window") as u64,
            wall_ms,
            p,
            label: label_for(p, cfg.threshold),
            span: [indices[0] as u64, *indices.last().unwrap() as u64],
        });
        Ok(p)
    };

    match mode {
        SampleMode::SingleSequence => {
            let s = sample_whole_video(meta.n_frames, seq_len)?;
            padded = s.padded;
            score_window(&s.indices, s.step)?;
        }
        SampleMode::Sliding => {
            let step = compute_step(meta.fps, cfg.window_seconds, seq_len)?;
            let span = seq_len * step;
            if meta.n_frames < span {
                // Shorter than one full window: fall back to the padded
                // whole-video sequence, flagged, like the generator does.
                let s = sample_whole_video(meta.n_frames, seq_len)?;
                padded = true;
                score_window(&s.indices, s.step)?;
            } else {
                let stride = cfg
                    .emit_stride
                    .unwrap_or_else(|| (seq_len / 2).max(1) * step)
                    .max(1);
                let mut start = 0usize;
                while start + (seq_len - 1) * step + 1 <= meta.n_frames {
                    let indices: Vec<usize> = (0..seq_len).map(|i| start + i * step).collect();
                    score_window(&indices, step)?;
                    start += stride;
                }
            }
        }
    }
    if records.is_empty() {
        return Err(Error::Video {
            id: meta.id.clone(),
            reason: "no windows could be formed".into(),
        });
    }
    let best = records
        .iter()
        .map(|r| r.p)
        .fold(f32::NEG_INFINITY, f32::max);
    Ok(VideoVerdict {
        verdict: label_for(best, cfg.threshold),
        max_probability: best,
        padded,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::video::ppm::write_video;

    /// Deterministic stand-in for a trained model: probability is the mean
    /// pixel value of the window. Sensitive to exactly which frames are in
    /// the window, which is what the equivalence tests need.
    struct MeanScorer {
        seq_len: usize,
        frame_size: usize,
        delay: Option<std::time::Duration>,
    }

    impl WindowScorer for MeanScorer {
        fn seq_len(&self) -> usize {
            self.seq_len
        }
        fn frame_size(&self) -> usize {
            self.frame_size
        }
        fn score(&self, window: &Tensor<f32>) -> Result<f32> {
            if let Some(d) = self.delay {
                std::thread::sleep(d);
            }
            Ok(window.data().iter().sum::<f32>() / window.numel() as f32)
        }
    }

    fn test_frames(n: usize) -> Vec<Tensor<f32>> {
        (0..n)
            .map(|t| Tensor::from_fn(&[3, 8, 8], |i| ((i * 5 + t * 17) % 97) as f32 / 97.0))
            .collect()
    }

    fn write_test_video(dir: &Path, n: usize, fps: f64) -> VideoMeta {
        let frames = test_frames(n);
        let meta = VideoMeta {
            id: "v".into(),
            fps,
            n_frames: n,
            label: "calm".into(),
            source_path: dir.to_string_lossy().into_owned(),
        };
        write_video(dir, &frames, &meta).unwrap();
        meta
    }

    fn scorer(seq_len: usize) -> Arc<MeanScorer> {
        Arc::new(MeanScorer {
            seq_len,
            frame_size: 8,
            delay: None,
        })
    }

    #[test]
    fn warm_up_boundary_is_exactly_l_times_step() {
        for (fps, window, expect_step) in [(30.0, 1.0, 1usize), (60.0, 1.0, 2)] {
            let seq_len = 30;
            let cfg = StreamConfig {
                fps,
                window_seconds: window,
                threshold: 0.5,
                emit_stride: None,
            };
            let mut session = StreamSession::new(scorer(seq_len), &cfg).unwrap();
            assert_eq!(session.step(), expect_step);
            let boundary = seq_len * expect_step;
            let frames = test_frames(boundary + 1);
            for (i, f) in frames.iter().enumerate() {
                let out = session.push_frame(f).unwrap();
                if i + 1 < boundary {
                    assert!(out.is_none(), "premature alert at frame {}", i + 1);
                } else if i + 1 == boundary {
                    let alert = out.expect("first alert exactly at L*step");
                    assert_eq!(alert.frame, boundary as u64 - 1);
                    assert_eq!(alert.span[0], 0);
                }
            }
        }
    }

    #[test]
    fn streaming_equals_offline_sliding() {
        for (n, fps) in [(90usize, 30.0), (100, 60.0)] {
            let tmp = tempfile::tempdir().unwrap();
            let meta = write_test_video(tmp.path(), n, fps);
            let seq_len = 10;
            let cfg = StreamConfig {
                fps,
                window_seconds: seq_len as f64 / 30.0,
                threshold: 0.5,
                emit_stride: None,
            };
            let verdict =
                infer_video_meta(&*scorer(seq_len), &meta, SampleMode::Sliding, &cfg).unwrap();

            let mut session = StreamSession::new(scorer(seq_len), &cfg).unwrap();
            let mut streamed = Vec::new();
            for i in 0..n {
                let frame = ppm::read_frame(tmp.path(), i).unwrap();
                if let Some(alert) = session.push_frame(&frame).unwrap() {
                    streamed.push(alert);
                }
            }
            assert!(!streamed.is_empty());
            assert_eq!(streamed.len(), verdict.records.len(), "n={n} fps={fps}");
            for (s, o) in streamed.iter().zip(&verdict.records) {
                assert_eq!(s.span, o.span);
                assert_eq!(s.p.to_bits(), o.p.to_bits(), "span {:?}", s.span);
                assert_eq!(s.label, o.label);
            }
        }
    }

    #[test]
    fn geometry_change_is_rejected() {
        let cfg = StreamConfig {
            fps: 30.0,
            window_seconds: 0.2,
            threshold: 0.5,
            emit_stride: None,
        };
        let mut session = StreamSession::new(scorer(6), &cfg).unwrap();
        session
            .push_frame(&Tensor::filled(&[3, 8, 8], 0.1))
            .unwrap();
        let err = session
            .push_frame(&Tensor::filled(&[3, 9, 8], 0.1))
            .unwrap_err();
        assert!(err.to_string().contains("geometry"), "{err}");
    }

    #[test]
    fn async_stream_drops_oldest_and_counts() {
        let slow = Arc::new(MeanScorer {
            seq_len: 4,
            frame_size: 8,
            delay: Some(std::time::Duration::from_millis(30)),
        });
        let cfg = StreamConfig {
            fps: 30.0,
            window_seconds: 4.0 / 30.0,
            threshold: 0.5,
            emit_stride: Some(1),
        };
        let mut stream = AsyncStream::new(slow, &cfg).unwrap();
        for f in test_frames(60) {
            stream.push_frame(&f).unwrap();
        }
        let outcome = stream.finish().unwrap();
        // 4-frame window, stride 1: 57 windows eligible; the slow worker
        // cannot keep up, so some are replaced before scoring.
        assert!(outcome.dropped_windows > 0);
        assert!(!outcome.records.is_empty());
        assert!((outcome.records.len() as u64) + outcome.dropped_windows <= 57);
        // Records that were scored carry strictly increasing spans.
        for pair in outcome.records.windows(2) {
            assert!(pair[1].span[0] > pair[0].span[0]);
        }
    }

    #[test]
    fn short_video_single_mode_is_padded_and_flagged() {
        let tmp = tempfile::tempdir().unwrap();
        let _meta = write_test_video(tmp.path(), 3, 30.0);
        let cfg = StreamConfig {
            fps: 30.0,
            window_seconds: 1.0,
            threshold: 0.5,
            emit_stride: None,
        };
        let verdict =
            infer_video(&*scorer(8), tmp.path(), SampleMode::SingleSequence, &cfg).unwrap();
        assert!(verdict.padded);
        assert_eq!(verdict.records.len(), 1);
    }

    #[test]
    fn sliding_verdict_is_max_over_windows() {
        let tmp = tempfile::tempdir().unwrap();
        let meta = write_test_video(tmp.path(), 60, 30.0);
        let cfg = StreamConfig {
            fps: 30.0,
            window_seconds: 8.0 / 30.0,
            threshold: 0.5,
            emit_stride: None,
        };
        let verdict = infer_video_meta(&*scorer(8), &meta, SampleMode::Sliding, &cfg).unwrap();
        assert!(verdict.records.len() > 1);
        let max = verdict
            .records
            .iter()
            .map(|r| r.p)
            .fold(f32::NEG_INFINITY, f32::max);
        assert_eq!(verdict.max_probability, max);
        assert!(verdict.records.iter().all(|r| r.p <= verdict.max_probability));
    }

    #[test]
    fn latency_percentiles_pick_order_statistics() {
        let lat: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let (p50, p95) = latency_percentiles(&lat).unwrap();
        assert_eq!(p50, 51.0);
        assert_eq!(p95, 95.0);
        assert!(latency_percentiles(&[]).is_none());
    }
}
