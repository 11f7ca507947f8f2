//! Frame-index selection: the fps-aware streaming step and the constant-step
//! whole-video sampler.

use crate::error::{Error, Result};

/// Sampling stride so that L frames span about `window_seconds` of video:
/// `max(1, round(fps * window_seconds / seq_len))`, round half up.
pub fn compute_step(fps: f64, window_seconds: f64, seq_len: usize) -> Result<usize> {
    if !(fps > 0.0) || !(window_seconds > 0.0) || seq_len == 0 {
        return Err(Error::InvalidArgument(format!(
            "compute_step: all inputs must be positive (fps={fps}, window={window_seconds}, seq_len={seq_len})"
        )));
    }
    let raw = fps * window_seconds / seq_len as f64;
    Ok(((raw + 0.5).floor() as usize).max(1))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampledIndices {
    pub indices: Vec<usize>,
    pub step: usize,
    /// True when the video was shorter than seq_len and the last frame repeats.
    pub padded: bool,
}

/// Constant-step indices covering a stored video.
///
/// For `n_frames >= seq_len` the step is `floor(n_frames / seq_len)` and the
/// indices are `0, step, ..., (seq_len-1)*step`. Shorter videos yield every
/// frame in order, then repeat the last frame up to `seq_len`.
pub fn sample_whole_video(n_frames: usize, seq_len: usize) -> Result<SampledIndices> {
    if n_frames == 0 {
        return Err(Error::InvalidArgument("sample_whole_video: empty video".into()));
    }
    if seq_len == 0 {
        return Err(Error::InvalidArgument("sample_whole_video: seq_len must be >= 1".into()));
    }
    if n_frames >= seq_len {
        let step = n_frames / seq_len;
        Ok(SampledIndices {
            indices: (0..seq_len).map(|i| i * step).collect(),
            step,
            padded: false,
        })
    } else {
        let mut indices: Vec<usize> = (0..n_frames).collect();
        indices.resize(seq_len, n_frames - 1);
        Ok(SampledIndices {
            indices,
            step: 1,
            padded: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_fixtures() {
        assert_eq!(compute_step(30.0, 1.0, 30).unwrap(), 1);
        assert_eq!(compute_step(60.0, 1.0, 30).unwrap(), 2);
        // 25 * 2 / 30 = 1.67 rounds up to 2
        assert_eq!(compute_step(25.0, 2.0, 30).unwrap(), 2);
        // very low rate still clamps to 1
        assert_eq!(compute_step(1.0, 0.1, 30).unwrap(), 1);
    }

    #[test]
    fn step_rejects_non_positive() {
        assert!(compute_step(0.0, 1.0, 30).is_err());
        assert!(compute_step(30.0, -1.0, 30).is_err());
        assert!(compute_step(30.0, 1.0, 0).is_err());
    }

    #[test]
    fn whole_video_fixtures() {
        let s = sample_whole_video(300, 30).unwrap();
        assert_eq!(s.step, 10);
        assert_eq!(s.indices[0], 0);
        assert_eq!(s.indices[29], 290);
        assert!(!s.padded);

        let s = sample_whole_video(30, 30).unwrap();
        assert_eq!(s.step, 1);
        assert_eq!(s.indices, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn short_video_repeats_last_frame() {
        let s = sample_whole_video(20, 30).unwrap();
        assert!(s.padded);
        assert_eq!(&s.indices[..20], (0..20).collect::<Vec<_>>().as_slice());
        assert!(s.indices[20..].iter().all(|&i| i == 19));
    }

    #[test]
    fn empty_video_is_an_error() {
        assert!(sample_whole_video(0, 30).is_err());
    }
}
