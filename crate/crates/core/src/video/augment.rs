//! Training-time augmentation: horizontal flip, crop, zoom. One spec is
//! resolved into a single spatial transform and applied identically to every
//! frame of a sequence, so the motion signal is never distorted over time.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::resize::resize;
use super::FrameSequence;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropAnchor {
    Center,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub flip: bool,
    /// Window fraction kept by the crop, in (0.5, 1].
    pub crop_fraction: f64,
    /// Center zoom factor, in [1, 1.5].
    pub zoom: f64,
    pub seed: u64,
    #[serde(default = "default_anchor")]
    pub crop_anchor: CropAnchor,
}

fn default_anchor() -> CropAnchor {
    CropAnchor::Center
}

impl AugmentSpec {
    pub fn identity() -> Self {
        AugmentSpec {
            flip: false,
            crop_fraction: 1.0,
            zoom: 1.0,
            seed: 0,
            crop_anchor: CropAnchor::Center,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.crop_fraction > 0.5 && self.crop_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "crop_fraction {} outside (0.5, 1]",
                self.crop_fraction
            )));
        }
        if !(1.0..=1.5).contains(&self.zoom) {
            return Err(Error::InvalidArgument(format!(
                "zoom {} outside [1, 1.5]",
                self.zoom
            )));
        }
        Ok(())
    }
}

/// Transform every frame of `seq` with the same crop/zoom/flip.
pub fn augment(seq: &FrameSequence, spec: &AugmentSpec) -> Result<FrameSequence> {
    spec.validate()?;
    let shape = seq.frames.shape().to_vec();
    let (l, c, s) = (shape[0], shape[1], shape[2]);

    // Resolve the transform once; every frame shares it.
    let crop = if spec.crop_fraction < 1.0 {
        let window = ((s as f64) * spec.crop_fraction).round() as usize;
        if window < 2 {
            return Err(Error::InvalidArgument(format!(
                "degenerate crop: window {window}px"
            )));
        }
        let max_off = s - window;
        let (ox, oy) = match spec.crop_anchor {
            CropAnchor::Center => (max_off / 2, max_off / 2),
            CropAnchor::Random => {
                let mut r = rng::chacha(rng::mix_tag(spec.seed, "crop"));
                (r.gen_range(0..=max_off), r.gen_range(0..=max_off))
            }
        };
        Some((ox, oy, window))
    } else {
        None
    };
    let zoom = if spec.zoom > 1.0 {
        let window = ((s as f64) / spec.zoom).round() as usize;
        if window < 2 {
            return Err(Error::InvalidArgument(format!(
                "degenerate zoom window {window}px"
            )));
        }
        let off = (s - window) / 2;
        Some((off, window))
    } else {
        None
    };

    let frame_len = c * s * s;
    let mut out = Vec::with_capacity(l);
    for t in 0..l {
        let mut frame = Tensor::new(
            vec![c, s, s],
            seq.frames.data()[t * frame_len..(t + 1) * frame_len].to_vec(),
        )?;
        if let Some((ox, oy, window)) = crop {
            frame = resize(&crop_window(&frame, ox, oy, window), s, s)?;
        }
        if let Some((off, window)) = zoom {
            frame = resize(&crop_window(&frame, off, off, window), s, s)?;
        }
        if spec.flip {
            frame = flip_horizontal(&frame);
        }
        out.push(frame);
    }
    super::stack_sequence(&out, &seq.origin, seq.start_index, seq.step, seq.padded)
}

fn crop_window(frame: &Tensor<f32>, ox: usize, oy: usize, window: usize) -> Tensor<f32> {
    let shape = frame.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    Tensor::from_fn(&[c, window, window], |i| {
        let ch = i / (window * window);
        let rest = i % (window * window);
        let y = rest / window + oy;
        let x = rest % window + ox;
        frame.data()[ch * h * w + y * w + x]
    })
}

fn flip_horizontal(frame: &Tensor<f32>) -> Tensor<f32> {
    let shape = frame.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    Tensor::from_fn(&[c, h, w], |i| {
        let ch = i / (h * w);
        let rest = i % (h * w);
        let y = rest / w;
        let x = rest % w;
        frame.data()[ch * h * w + y * w + (w - 1 - x)]
    })
}
