//! Clip datasets: windowing, splitting, normalisation and persistence.
//!
//! A dataset on disk is a directory:
//!
//! - `dataset.toml`: class names, clip shape, windowing, normalisation stats
//! - `clips.bin`: tensor file `[n_clips, clip_length, n_channels, window_width]`
//!   whose label table carries each clip's class and split
//! - `features.bin`: tensor file `[n_clips, n_channels]` holding the temporal
//!   mean of each clip's source stream (same label table)
//!
//! See [`format`] for the binary layout.

pub mod format;
mod windowing;

pub use windowing::{sample_clip, segment_windows, ClipSample, Frame, WindowingParams};

use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{generate_activity_stream, ActivitySpec, ChannelConfig, ChannelError, CsiStream};
use crate::rng::{derive_seed, rng_from, tag};
use format::{LabelEntry, TensorFile};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("input too short: {what} has {have}, need at least {need}")]
    InputTooShort { what: &'static str, have: usize, need: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Split::Train),
            1 => Ok(Split::Test),
            other => Err(DatasetError::Format(format!("unknown split code {other}"))),
        }
    }
}

/// Global mean and standard deviation used to normalise network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub const STD_FLOOR: f64 = 1e-8;

    /// Population mean and standard deviation of `values`.
    pub fn from_values<'a, I: IntoIterator<Item = &'a f32>>(values: I) -> Self {
        let (mut n, mut sum, mut sq) = (0usize, 0.0f64, 0.0f64);
        let vals: Vec<f64> = values.into_iter().map(|&v| v as f64).collect();
        for &v in &vals {
            n += 1;
            sum += v;
        }
        if n == 0 {
            return Self { mean: 0.0, std: 1.0 };
        }
        let mean = sum / n as f64;
        for &v in &vals {
            sq += (v - mean) * (v - mean);
        }
        Self { mean, std: (sq / n as f64).sqrt() }
    }
}

/// `(x - mean) / max(std, 1e-8)` elementwise.
pub fn normalize(volume: &[f32], stats: &NormStats) -> Vec<f64> {
    let std = stats.std.max(NormStats::STD_FLOOR);
    volume.iter().map(|&x| (x as f64 - stats.mean) / std).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsiClip {
    pub label: usize,
    /// `[clip_length, n_channels, window_width]`.
    pub shape: [usize; 3],
    pub volume: Vec<f32>,
    /// Per-channel temporal mean of the whole source stream.
    pub stream_mean: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub windowing: WindowingParams,
    pub clips: Vec<CsiClip>,
    pub split: Vec<Split>,
    /// Computed from the training split only.
    pub norm: NormStats,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.clips.len()).filter(|&i| self.split[i] == which).collect()
    }

    pub fn clip_shape(&self) -> Option<[usize; 3]> {
        self.clips.first().map(|c| c.shape)
    }

    /// Check the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.split.len() != self.clips.len() {
            return Err(DatasetError::Format("split table length differs from clip count".into()));
        }
        let shape = self.clip_shape();
        for (i, c) in self.clips.iter().enumerate() {
            if c.label >= self.class_names.len() {
                return Err(DatasetError::Format(format!("clip {i} has label {} >= {}", c.label, self.n_classes())));
            }
            if Some(c.shape) != shape || c.volume.len() != c.shape.iter().product::<usize>() {
                return Err(DatasetError::Format(format!("clip {i} has inconsistent shape")));
            }
            if c.stream_mean.len() != c.shape[1] {
                return Err(DatasetError::Format(format!("clip {i} stream mean has wrong length")));
            }
            if !c.volume.iter().all(|x| x.is_finite()) {
                return Err(DatasetError::Format(format!("clip {i} has non-finite values")));
            }
        }
        Ok(())
    }
}

/// Per-channel arithmetic mean over time.
pub fn stream_row_means(stream: &CsiStream) -> Vec<f64> {
    (0..stream.n_channels).map(|c| stream.row(c).iter().sum::<f64>() / stream.n_samples as f64).collect()
}

/// Generate, window and clip `per_class` streams for each activity, then
/// split each class 50/50 into train and test at stream level.
pub fn build_dataset(
    specs: &[ActivitySpec],
    per_class: usize,
    params: &WindowingParams,
    channel: &ChannelConfig,
    seed: u64,
) -> Result<Dataset> {
    params.validate()?;
    if per_class < 2 {
        return Err(DatasetError::Argument(format!("per_class must be >= 2, got {per_class}")));
    }
    if specs.len() < 2 {
        return Err(DatasetError::Argument("need at least two activity classes".into()));
    }
    let mut by_label: Vec<&ActivitySpec> = specs.iter().collect();
    by_label.sort_by_key(|s| s.label);
    if by_label.iter().enumerate().any(|(i, s)| s.label != i) {
        return Err(DatasetError::Argument("activity labels must be exactly 0..K-1".into()));
    }

    let jobs: Vec<(usize, usize)> = (0..by_label.len()).flat_map(|k| (0..per_class).map(move |i| (k, i))).collect();
    let per_stream: Vec<Vec<CsiClip>> = jobs
        .par_iter()
        .map(|&(k, i)| {
            let spec = by_label[k];
            let stream_seed = derive_seed(seed, &[tag::STREAM, k as u64, i as u64]);
            let stream = generate_activity_stream(spec, channel, stream_seed)?;
            let frames = segment_windows(&stream, params)?;
            let mean: Vec<f32> = stream_row_means(&stream).into_iter().map(|m| m as f32).collect();
            (0..params.clips_per_stream)
                .map(|j| {
                    let clip = sample_clip(&frames, params.clip_length, derive_seed(stream_seed, &[tag::CLIP, j as u64]))?;
                    Ok(CsiClip { label: k, shape: clip.shape, volume: clip.volume, stream_mean: mean.clone() })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut stream_split = vec![Split::Test; jobs.len()];
    for k in 0..by_label.len() {
        let mut order: Vec<usize> = (0..per_class).collect();
        order.shuffle(&mut rng_from(seed, &[tag::SPLIT, k as u64]));
        for &i in &order[..per_class / 2] {
            stream_split[k * per_class + i] = Split::Train;
        }
    }

    let mut clips = Vec::with_capacity(jobs.len() * params.clips_per_stream);
    let mut split = Vec::with_capacity(clips.capacity());
    for (s, stream_clips) in per_stream.into_iter().enumerate() {
        for c in stream_clips {
            clips.push(c);
            split.push(stream_split[s]);
        }
    }
    let norm = NormStats::from_values(
        clips.iter().zip(&split).filter(|(_, &s)| s == Split::Train).flat_map(|(c, _)| c.volume.iter()),
    );
    let ds = Dataset {
        class_names: by_label.iter().map(|s| s.name.clone()).collect(),
        windowing: *params,
        clips,
        split,
        norm,
    };
    ds.validate()?;
    Ok(ds)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    format: String,
    version: u32,
    class_names: Vec<String>,
    n_clips: usize,
    clip_shape: [usize; 3],
    windowing: WindowingParams,
    normalization: NormStats,
}

const MANIFEST_FORMAT: &str = "csilab-dataset";

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    let shape = dataset
        .clip_shape()
        .ok_or_else(|| DatasetError::Argument("cannot save an empty dataset".into()))?;
    fs::create_dir_all(dir)?;
    let labels: Vec<LabelEntry> = dataset
        .clips
        .iter()
        .zip(&dataset.split)
        .map(|(c, s)| LabelEntry { label: c.label as u32, split: s.code() })
        .collect();
    let n = dataset.clips.len();
    let clips = TensorFile {
        dims: vec![n, shape[0], shape[1], shape[2]],
        labels: labels.clone(),
        data: dataset.clips.iter().flat_map(|c| c.volume.iter().copied()).collect(),
    };
    let features = TensorFile {
        dims: vec![n, shape[1]],
        labels,
        data: dataset.clips.iter().flat_map(|c| c.stream_mean.iter().copied()).collect(),
    };
    format::write_tensor_file(&dir.join("clips.bin"), &clips)?;
    format::write_tensor_file(&dir.join("features.bin"), &features)?;
    let manifest = DatasetManifest {
        format: MANIFEST_FORMAT.into(),
        version: format::VERSION,
        class_names: dataset.class_names.clone(),
        n_clips: n,
        clip_shape: shape,
        windowing: dataset.windowing,
        normalization: dataset.norm,
    };
    let text = toml::to_string(&manifest).map_err(|e| DatasetError::Format(e.to_string()))?;
    format::write_atomic(&dir.join("dataset.toml"), text.as_bytes())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(dir.join("dataset.toml"))?;
    let m: DatasetManifest =
        toml::from_str(&text).map_err(|e| DatasetError::Format(format!("dataset.toml: {e}")))?;
    if m.format != MANIFEST_FORMAT || m.version != format::VERSION {
        return Err(DatasetError::Format(format!("unsupported dataset format {} v{}", m.format, m.version)));
    }
    let clips = format::read_tensor_file(&dir.join("clips.bin"))?;
    let features = format::read_tensor_file(&dir.join("features.bin"))?;
    let [l, r, w] = m.clip_shape;
    if clips.dims != [m.n_clips, l, r, w] {
        return Err(DatasetError::Format(format!(
            "clips.bin dims {:?} disagree with manifest {:?}",
            clips.dims,
            [m.n_clips, l, r, w]
        )));
    }
    if features.dims != [m.n_clips, r] {
        return Err(DatasetError::Format(format!("features.bin dims {:?} disagree with manifest", features.dims)));
    }
    if clips.labels.len() != m.n_clips || features.labels != clips.labels {
        return Err(DatasetError::Format("label tables missing or inconsistent".into()));
    }
    let vol = l * r * w;
    let mut out = Vec::with_capacity(m.n_clips);
    let mut split = Vec::with_capacity(m.n_clips);
    for (i, e) in clips.labels.iter().enumerate() {
        out.push(CsiClip {
            label: e.label as usize,
            shape: m.clip_shape,
            volume: clips.data[i * vol..(i + 1) * vol].to_vec(),
            stream_mean: features.data[i * r..(i + 1) * r].to_vec(),
        });
        split.push(Split::from_code(e.split)?);
    }
    let ds = Dataset { class_names: m.class_names, windowing: m.windowing, clips: out, split, norm: m.normalization };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::default_activity_library;

    fn small_channel() -> ChannelConfig {
        ChannelConfig::builder().n_channels(6).build().unwrap()
    }

    fn small_params() -> WindowingParams {
        WindowingParams { window_width: 20, stride: 4, clip_length: 4, clips_per_stream: 1 }
    }

    fn small_dataset(seed: u64) -> Dataset {
        let specs = default_activity_library(0.3).unwrap();
        build_dataset(&specs, 6, &small_params(), &small_channel(), seed).unwrap()
    }

    #[test]
    fn normalize_examples() {
        let c = vec![3.5f32; 50];
        let stats = NormStats::from_values(&c);
        assert!(normalize(&c, &stats).iter().all(|&x| x == 0.0));

        let v: Vec<f32> = (0..500).map(|i| ((i as f32) * 0.37).sin() * 4.0 + 2.0).collect();
        let stats = NormStats::from_values(&v);
        let z = normalize(&v, &stats);
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        let std = (z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / z.len() as f64).sqrt();
        assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-6);

        let zf: Vec<f32> = z.iter().map(|&x| x as f32).collect();
        let again = normalize(&zf, &NormStats::from_values(&zf));
        let m2 = again.iter().sum::<f64>() / again.len() as f64;
        assert!(m2.abs() < 1e-6);
    }

    #[test]
    fn build_counts_and_stratification() {
        let ds = small_dataset(3);
        assert_eq!(ds.clips.len(), 36);
        assert_eq!(ds.indices(Split::Train).len(), 18);
        assert_eq!(ds.indices(Split::Test).len(), 18);
        for k in 0..6 {
            let train = ds.indices(Split::Train).iter().filter(|&&i| ds.clips[i].label == k).count();
            let test = ds.indices(Split::Test).iter().filter(|&&i| ds.clips[i].label == k).count();
            assert_eq!((train, test), (3, 3));
        }
        assert_eq!(ds.clip_shape(), Some([4, 6, 20]));
    }

    #[test]
    fn odd_per_class_split_differs_by_one() {
        let specs = default_activity_library(0.3).unwrap();
        let ds = build_dataset(&specs, 5, &small_params(), &small_channel(), 1).unwrap();
        for k in 0..6 {
            let train = ds.indices(Split::Train).iter().filter(|&&i| ds.clips[i].label == k).count();
            assert!(train == 2 || train == 3);
        }
    }

    #[test]
    fn build_is_deterministic() {
        assert_eq!(small_dataset(5), small_dataset(5));
        assert_ne!(small_dataset(5).clips, small_dataset(6).clips);
    }

    #[test]
    fn build_rejects_bad_arguments() {
        let specs = default_activity_library(0.3).unwrap();
        assert!(build_dataset(&specs, 1, &small_params(), &small_channel(), 0).is_err());
        let long = WindowingParams { window_width: 1000, ..small_params() };
        assert!(matches!(
            build_dataset(&specs, 2, &long, &small_channel(), 0),
            Err(DatasetError::InputTooShort { .. })
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let ds = small_dataset(8);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.norm.mean.to_bits(), ds.norm.mean.to_bits());
        assert_eq!(back.norm.std.to_bits(), ds.norm.std.to_bits());
    }

    #[test]
    fn load_rejects_corruption() {
        let ds = small_dataset(8);
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join("clips.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 10);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DatasetError::Format(_))));
        bytes[0] = 0;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(DatasetError::Format(_))));
    }
}
