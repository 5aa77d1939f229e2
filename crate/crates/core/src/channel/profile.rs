use serde::{Deserialize, Serialize};

use super::{ChannelError, Result};

/// Piecewise-constant speed profile over `[0, duration]`.
///
/// Stored as consecutive `(length, speed)` segments. Displacement is the exact
/// integral of the profile, so path length is continuous in time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct SpeedProfile {
    segments: Vec<(f64, f64)>,
    /// `starts[i]` is the start time of segment `i`; one trailing entry holds the total duration.
    starts: Vec<f64>,
    /// Displacement accumulated at each segment start.
    offsets: Vec<f64>,
}

impl SpeedProfile {
    pub fn constant(speed: f64, duration: f64) -> Result<Self> {
        Self::piecewise(&[(duration, speed)])
    }

    /// Build from `(segment_length_seconds, speed_m_per_s)` pairs.
    pub fn piecewise(segments: &[(f64, f64)]) -> Result<Self> {
        if segments.is_empty() {
            return Err(ChannelError::Argument("speed profile needs at least one segment".into()));
        }
        let mut starts = Vec::with_capacity(segments.len() + 1);
        let mut offsets = Vec::with_capacity(segments.len() + 1);
        let (mut t, mut d) = (0.0, 0.0);
        for &(len, v) in segments {
            if !(len > 0.0) || !len.is_finite() {
                return Err(ChannelError::Argument(format!("segment length must be > 0, got {len}")));
            }
            if !v.is_finite() {
                return Err(ChannelError::Argument(format!("segment speed must be finite, got {v}")));
            }
            starts.push(t);
            offsets.push(d);
            t += len;
            d += len * v;
        }
        starts.push(t);
        offsets.push(d);
        Ok(Self { segments: segments.to_vec(), starts, offsets })
    }

    pub fn duration(&self) -> f64 {
        *self.starts.last().expect("profile has a trailing start")
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    fn segment_index(&self, t: f64) -> Result<usize> {
        let duration = self.duration();
        if !(t >= 0.0 && t <= duration) {
            return Err(ChannelError::Domain { t, duration });
        }
        // Last segment whose start is <= t; t == duration falls into the final segment.
        let idx = self.starts[..self.segments.len()].partition_point(|&s| s <= t);
        Ok(idx.saturating_sub(1))
    }

    pub fn speed_at(&self, t: f64) -> Result<f64> {
        Ok(self.segments[self.segment_index(t)?].1)
    }

    /// `∫_0^t v(s) ds`.
    pub fn displacement(&self, t: f64) -> Result<f64> {
        let i = self.segment_index(t)?;
        Ok(self.offsets[i] + (t - self.starts[i]) * self.segments[i].1)
    }

    /// Copy with every speed multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let segs: Vec<_> = self.segments.iter().map(|&(l, v)| (l, v * factor)).collect();
        Self::piecewise(&segs).expect("scaling preserves validity")
    }

    /// Copy whose total duration is stretched or truncated to `duration`.
    ///
    /// Segments are repeated cyclically when the target is longer.
    pub fn fitted_to(&self, duration: f64) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(ChannelError::Argument(format!("duration must be > 0, got {duration}")));
        }
        let mut out = Vec::new();
        let mut t = 0.0;
        'outer: loop {
            for &(len, v) in &self.segments {
                let remaining = duration - t;
                if remaining <= 1e-12 {
                    break 'outer;
                }
                let take = len.min(remaining);
                out.push((take, v));
                t += take;
            }
        }
        Self::piecewise(&out)
    }
}

impl TryFrom<Vec<(f64, f64)>> for SpeedProfile {
    type Error = ChannelError;

    fn try_from(v: Vec<(f64, f64)>) -> Result<Self> {
        Self::piecewise(&v)
    }
}

impl From<SpeedProfile> for Vec<(f64, f64)> {
    fn from(p: SpeedProfile) -> Self {
        p.segments
    }
}
