//! Frame pipeline: codec-free PPM storage, fps-aware sampling, resizing,
//! augmentation, and the bounded batch generator.
//!
//! A video on disk is a directory of `frame_000000.ppm` ... (binary P6,
//! maxval 255) plus a `meta.json` with the [`VideoMeta`] fields. In memory a
//! frame is a `Tensor<f32>` of shape `[3, H, W]` with pixels in `[0, 1]`.

pub mod augment;
pub mod generator;
pub mod ppm;
pub mod resize;
pub mod sampler;

pub use augment::{augment, AugmentSpec, CropAnchor};
pub use generator::{Batch, BatchGenerator, GeneratorConfig, SampleMode};
pub use resize::resize_frame;
pub use sampler::{compute_step, sample_whole_video, SampledIndices};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stored-video metadata, persisted as `meta.json` beside the frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub id: String,
    pub fps: f64,
    pub n_frames: usize,
    pub label: String,
    pub source_path: String,
}

impl VideoMeta {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0) {
            return Err(Error::Video {
                id: self.id.clone(),
                reason: format!("fps must be positive, got {}", self.fps),
            });
        }
        if self.n_frames == 0 {
            return Err(Error::Video {
                id: self.id.clone(),
                reason: "n_frames must be >= 1".into(),
            });
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<VideoMeta> {
        let path = dir.join("meta.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: VideoMeta = serde_json::from_str(&text)?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join("meta.json");
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

/// A fixed-geometry stack of L resized frames: the unit of prediction.
#[derive(Clone, Debug)]
pub struct FrameSequence {
    /// `[L, 3, S, S]`, pixels in `[0, 1]`.
    pub frames: Tensor<f32>,
    /// Id of the source video.
    pub origin: String,
    /// First source frame index.
    pub start_index: usize,
    /// Sampling stride between source frames.
    pub step: usize,
    /// True when the source was shorter than L and the last frame repeats.
    pub padded: bool,
}

impl FrameSequence {
    pub fn seq_len(&self) -> usize {
        self.frames.shape()[0]
    }
}

/// Assemble a sequence from already-resized frames.
pub fn stack_sequence(
    frames: &[Tensor<f32>],
    origin: &str,
    start_index: usize,
    step: usize,
    padded: bool,
) -> Result<FrameSequence> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("stack_sequence: no frames".into()))?;
    let shape = first.shape().to_vec();
    let mut data = Vec::with_capacity(frames.len() * first.numel());
    for f in frames {
        if f.shape() != shape {
            return Err(Error::ShapeMismatch {
                op: "stack_sequence",
                lhs: shape,
                rhs: f.shape().to_vec(),
            });
        }
        data.extend_from_slice(f.data());
    }
    let frames_tensor = Tensor::new(vec![frames.len(), shape[0], shape[1], shape[2]], data)?;
    Ok(FrameSequence {
        frames: frames_tensor,
        origin: origin.to_string(),
        start_index,
        step,
        padded,
    })
}
