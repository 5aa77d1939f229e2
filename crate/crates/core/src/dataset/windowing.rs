use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};
use crate::channel::CsiStream;
use crate::rng::{rng_from, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowingParams {
    pub window_width: usize,
    pub stride: usize,
    pub clip_length: usize,
    pub clips_per_stream: usize,
}

impl Default for WindowingParams {
    fn default() -> Self {
        Self { window_width: 100, stride: 8, clip_length: 16, clips_per_stream: 1 }
    }
}

impl WindowingParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("window_width", self.window_width),
            ("stride", self.stride),
            ("clip_length", self.clip_length),
            ("clips_per_stream", self.clips_per_stream),
        ] {
            if v == 0 {
                return Err(DatasetError::Argument(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Number of windows a stream of `n` samples yields.
    pub fn frame_count(&self, n: usize) -> Option<usize> {
        (n >= self.window_width).then(|| (n - self.window_width) / self.stride + 1)
    }
}

/// One `n_channels × window_width` image cut from a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// First stream column covered.
    pub start: usize,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Cut a stream into overlapping windows: frame `i` covers columns
/// `[i·stride, i·stride + window_width)`.
pub fn segment_windows(stream: &CsiStream, params: &WindowingParams) -> Result<Vec<Frame>> {
    params.validate()?;
    let count = params.frame_count(stream.n_samples).ok_or(DatasetError::InputTooShort {
        what: "stream samples",
        have: stream.n_samples,
        need: params.window_width,
    })?;
    let w = params.window_width;
    Ok((0..count)
        .map(|i| {
            let start = i * params.stride;
            let mut data = Vec::with_capacity(stream.n_channels * w);
            for c in 0..stream.n_channels {
                data.extend_from_slice(&stream.row(c)[start..start + w]);
            }
            Frame { start, rows: stream.n_channels, cols: w, data }
        })
        .collect())
}

/// A run of consecutive frames stacked into a `[clip_length, rows, cols]` volume.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub start_frame: usize,
    pub shape: [usize; 3],
    pub volume: Vec<f32>,
}

/// Pick `clip_length` consecutive frames starting at a uniformly random offset.
pub fn sample_clip(frames: &[Frame], clip_length: usize, seed: u64) -> Result<ClipSample> {
    if clip_length == 0 {
        return Err(DatasetError::Argument("clip_length must be >= 1".into()));
    }
    if frames.len() < clip_length {
        return Err(DatasetError::InputTooShort { what: "frames", have: frames.len(), need: clip_length });
    }
    let mut rng = rng_from(seed, &[tag::CLIP]);
    let start = rng.random_range(0..=frames.len() - clip_length);
    let (rows, cols) = (frames[0].rows, frames[0].cols);
    let mut volume = Vec::with_capacity(clip_length * rows * cols);
    for f in &frames[start..start + clip_length] {
        volume.extend(f.data.iter().map(|&x| x as f32));
    }
    Ok(ClipSample { start_frame: start, shape: [clip_length, rows, cols], volume })
}
