//! Multipath Doppler channel model.
//!
//! The channel frequency response is split into a static part `H_s(f)`, the
//! sum over paths that do not move, and a dynamic part `H_d(f, t)`, the sum
//! over paths whose length changes with body motion:
//!
//! ```text
//! H(f, t) = exp(-j2π Δf t) · ( H_s(f) + Σ_k a_k exp(-j2π d_k(t) / λ) )
//! ```
//!
//! The power `|H(f, t)|²` is a constant offset plus sinusoids whose
//! frequencies are path-length change speeds divided by the wavelength. Both
//! routes to the power are exposed: [`cfr_power`] via the complex modulus and
//! [`power_expansion`] via the explicit sum of sinusoids.

mod activity;
mod profile;

pub use activity::{default_activity_library, generate_activity_stream, ActivitySpec, PathTemplate};
pub use profile::SpeedProfile;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("time {t} s outside speed profile domain [0, {duration}] s")]
    Domain { t: f64, duration: f64 },
    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type Result<T> = std::result::Result<T, ChannelError>;

/// A path that does not move during the activity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticPath {
    pub attenuation: Complex64,
    /// Time of flight in seconds.
    pub delay: f64,
}

impl StaticPath {
    pub fn new(attenuation: Complex64, delay: f64) -> Result<Self> {
        if !(attenuation.norm() > 0.0) || !attenuation.is_finite() {
            return Err(ChannelError::Argument(format!(
                "static path attenuation must be nonzero and finite, got {attenuation}"
            )));
        }
        if !(delay >= 0.0) || !delay.is_finite() {
            return Err(ChannelError::Argument(format!("static path delay must be >= 0, got {delay}")));
        }
        Ok(Self { attenuation, delay })
    }
}

/// One path whose length changes with body motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    pub attenuation: Complex64,
    /// Path length at `t = 0`, metres.
    pub initial_length: f64,
    pub speed: SpeedProfile,
}

impl PathComponent {
    pub fn new(attenuation: Complex64, initial_length: f64, speed: SpeedProfile) -> Result<Self> {
        if !(initial_length >= 0.0) || !initial_length.is_finite() {
            return Err(ChannelError::Argument(format!(
                "initial path length must be >= 0, got {initial_length}"
            )));
        }
        if !attenuation.is_finite() {
            return Err(ChannelError::Argument("path attenuation must be finite".into()));
        }
        Ok(Self { attenuation, initial_length, speed })
    }

    pub fn constant_speed(attenuation: Complex64, initial_length: f64, speed: f64, duration: f64) -> Result<Self> {
        Self::new(attenuation, initial_length, SpeedProfile::constant(speed, duration)?)
    }
}

/// Path length in metres at time `t`.
pub fn path_length(path: &PathComponent, t: f64) -> Result<f64> {
    Ok(path.initial_length + path.speed.displacement(t)?)
}

/// Radio and sampling parameters shared by every channel of a stream.
///
/// Serialises as its builder fields, so the derived wavelength is never stored.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(into = "ChannelConfigBuilder")]
pub struct ChannelConfig {
    pub carrier_frequency: f64,
    /// Derived as `c / carrier_frequency`.
    pub wavelength: f64,
    /// Carrier frequency offset between sender and receiver, Hz.
    pub freq_offset: f64,
    pub static_paths: Vec<StaticPath>,
    /// Standard deviation of the additive Gaussian noise, as a fraction of the
    /// clean stream's standard deviation.
    pub noise_std: f64,
    /// CSI packets per second.
    pub sample_rate: f64,
    /// Tx × Rx × subcarriers.
    pub n_channels: usize,
    pub subcarriers_per_link: usize,
    pub subcarrier_spacing: f64,
    /// Relative jitter applied per channel to dynamic path attenuations and
    /// initial lengths.
    pub channel_jitter: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig::builder().build().expect("default channel config is valid")
    }
}

impl ChannelConfig {
    pub fn builder() -> ChannelConfigBuilder {
        ChannelConfigBuilder::default()
    }

    /// Centre frequency of channel `index`. Channels are ordered link-major:
    /// `index = link * subcarriers_per_link + subcarrier`.
    pub fn channel_frequency(&self, index: usize) -> f64 {
        let sub = index % self.subcarriers_per_link;
        let centre = (self.subcarriers_per_link as f64 - 1.0) / 2.0;
        self.carrier_frequency + (sub as f64 - centre) * self.subcarrier_spacing
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfigBuilder {
    pub carrier_frequency: f64,
    pub freq_offset: f64,
    pub static_paths: Vec<StaticPath>,
    pub noise_std: f64,
    pub sample_rate: f64,
    pub n_channels: usize,
    pub subcarriers_per_link: usize,
    pub subcarrier_spacing: f64,
    pub channel_jitter: f64,
}

impl Default for ChannelConfigBuilder {
    fn default() -> Self {
        Self {
            carrier_frequency: 5.32e9,
            freq_offset: 0.0,
            static_paths: vec![
                StaticPath { attenuation: Complex64::new(1.0, 0.0), delay: 10.0e-9 },
                StaticPath { attenuation: Complex64::new(0.25, 0.15), delay: 23.0e-9 },
            ],
            noise_std: 0.02,
            sample_rate: 500.0,
            n_channels: 90,
            subcarriers_per_link: 30,
            subcarrier_spacing: 625.0e3,
            channel_jitter: 0.05,
        }
    }
}

impl ChannelConfigBuilder {
    pub fn carrier_frequency(mut self, hz: f64) -> Self {
        self.carrier_frequency = hz;
        self
    }
    pub fn freq_offset(mut self, hz: f64) -> Self {
        self.freq_offset = hz;
        self
    }
    pub fn static_paths(mut self, paths: Vec<StaticPath>) -> Self {
        self.static_paths = paths;
        self
    }
    pub fn noise_std(mut self, std: f64) -> Self {
        self.noise_std = std;
        self
    }
    pub fn sample_rate(mut self, rate: f64) -> Self {
        self.sample_rate = rate;
        self
    }
    pub fn n_channels(mut self, n: usize) -> Self {
        self.n_channels = n;
        self
    }
    pub fn channel_jitter(mut self, jitter: f64) -> Self {
        self.channel_jitter = jitter;
        self
    }

    pub fn build(self) -> Result<ChannelConfig> {
        let bad = |msg: String| Err(ChannelError::Argument(msg));
        if !(self.carrier_frequency > 0.0) || !self.carrier_frequency.is_finite() {
            return bad(format!("carrier_frequency must be > 0, got {}", self.carrier_frequency));
        }
        if !self.freq_offset.is_finite() {
            return bad("freq_offset must be finite".into());
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return bad(format!("sample_rate must be > 0, got {}", self.sample_rate));
        }
        if self.n_channels == 0 {
            return bad("n_channels must be > 0".into());
        }
        if self.subcarriers_per_link == 0 {
            return bad("subcarriers_per_link must be > 0".into());
        }
        if !(self.subcarrier_spacing >= 0.0) || !self.subcarrier_spacing.is_finite() {
            return bad(format!("subcarrier_spacing must be >= 0, got {}", self.subcarrier_spacing));
        }
        if !(0.0..1.0).contains(&self.channel_jitter) {
            return bad(format!("channel_jitter must be in [0, 1), got {}", self.channel_jitter));
        }
        let static_paths = self
            .static_paths
            .into_iter()
            .map(|p| StaticPath::new(p.attenuation, p.delay))
            .collect::<Result<Vec<_>>>()?;
        Ok(ChannelConfig {
            carrier_frequency: self.carrier_frequency,
            wavelength: SPEED_OF_LIGHT / self.carrier_frequency,
            freq_offset: self.freq_offset,
            static_paths,
            noise_std: self.noise_std,
            sample_rate: self.sample_rate,
            n_channels: self.n_channels,
            subcarriers_per_link: self.subcarriers_per_link,
            subcarrier_spacing: self.subcarrier_spacing,
            channel_jitter: self.channel_jitter,
        })
    }
}

impl From<&ChannelConfig> for ChannelConfigBuilder {
    fn from(c: &ChannelConfig) -> Self {
        Self {
            carrier_frequency: c.carrier_frequency,
            freq_offset: c.freq_offset,
            static_paths: c.static_paths.clone(),
            noise_std: c.noise_std,
            sample_rate: c.sample_rate,
            n_channels: c.n_channels,
            subcarriers_per_link: c.subcarriers_per_link,
            subcarrier_spacing: c.subcarrier_spacing,
            channel_jitter: c.channel_jitter,
        }
    }
}

impl From<ChannelConfig> for ChannelConfigBuilder {
    fn from(c: ChannelConfig) -> Self {
        Self {
            carrier_frequency: c.carrier_frequency,
            freq_offset: c.freq_offset,
            static_paths: c.static_paths,
            noise_std: c.noise_std,
            sample_rate: c.sample_rate,
            n_channels: c.n_channels,
            subcarriers_per_link: c.subcarriers_per_link,
            subcarrier_spacing: c.subcarrier_spacing,
            channel_jitter: c.channel_jitter,
        }
    }
}

impl<'de> Deserialize<'de> for ChannelConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        ChannelConfigBuilder::deserialize(d)?.build().map_err(serde::de::Error::custom)
    }
}

/// Static CFR `H_s(f) = Σ a_k exp(-j2π f τ_k)`.
pub fn static_cfr(config: &ChannelConfig, f: f64) -> Complex64 {
    config
        .static_paths
        .iter()
        .map(|p| p.attenuation * Complex64::from_polar(1.0, -2.0 * PI * f * p.delay))
        .sum()
}

/// Dynamic CFR `H_d(t) = Σ a_k exp(-j2π d_k(t) / λ)`.
pub fn dynamic_cfr(paths: &[PathComponent], wavelength: f64, t: f64) -> Result<Complex64> {
    if !(wavelength > 0.0) {
        return Err(ChannelError::Argument(format!("wavelength must be > 0, got {wavelength}")));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for p in paths {
        let d = path_length(p, t)?;
        acc += p.attenuation * Complex64::from_polar(1.0, -2.0 * PI * d / wavelength);
    }
    Ok(acc)
}

/// Full CFR including the carrier-offset phase rotation.
pub fn cfr(config: &ChannelConfig, paths: &[PathComponent], f: f64, t: f64) -> Result<Complex64> {
    let rotation = Complex64::from_polar(1.0, -2.0 * PI * config.freq_offset * t);
    Ok(rotation * (static_cfr(config, f) + dynamic_cfr(paths, config.wavelength, t)?))
}

/// CFR power `|H(f, t)|²`.
///
/// The carrier-offset rotation has unit modulus, so it is dropped before the
/// modulus is taken. This makes the result bit-identical for every `Δf`.
pub fn cfr_power(config: &ChannelConfig, paths: &[PathComponent], f: f64, t: f64) -> Result<f64> {
    let h = static_cfr(config, f) + dynamic_cfr(paths, config.wavelength, t)?;
    Ok(h.norm_sqr())
}

/// A single sinusoid `amplitude · cos(phase)` in the power expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerTone {
    pub amplitude: f64,
    /// Instantaneous frequency (Hz) implied by the current path speeds.
    pub frequency: f64,
    /// Full phase at the evaluation time, radians.
    pub phase: f64,
}

impl PowerTone {
    pub fn value(&self) -> f64 {
        self.amplitude * self.phase.cos()
    }
}

/// CFR power written as a constant offset plus sinusoids.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerExpansion {
    /// `|H_s|² + Σ |a_k|²`.
    pub offset: f64,
    /// Static × dynamic terms, one per dynamic path, at `v_k / λ`.
    pub static_dynamic: Vec<PowerTone>,
    /// Dynamic × dynamic terms, one per unordered path pair, at `(v_k - v_l) / λ`.
    pub cross: Vec<PowerTone>,
}

impl PowerExpansion {
    pub fn total(&self) -> f64 {
        self.offset
            + self.static_dynamic.iter().map(PowerTone::value).sum::<f64>()
            + self.cross.iter().map(PowerTone::value).sum::<f64>()
    }
}

/// Expand `|H(f, t)|²` into offset and sinusoids.
///
/// With `ψ_k = 2π d_k(t) / λ`:
///
/// ```text
/// |H|² = |H_s|² + Σ_k |a_k|²
///      + Σ_k   2 |H_s a_k|  cos(ψ_k + arg H_s - arg a_k)
///      + Σ_k<l 2 |a_k a_l|  cos(ψ_k - ψ_l - arg a_k + arg a_l)
/// ```
///
/// Each cross pair appears once with factor 2.
pub fn power_expansion(config: &ChannelConfig, paths: &[PathComponent], f: f64, t: f64) -> Result<PowerExpansion> {
    let lambda = config.wavelength;
    if !(lambda > 0.0) {
        return Err(ChannelError::Argument(format!("wavelength must be > 0, got {lambda}")));
    }
    let hs = static_cfr(config, f);
    let mut psi = Vec::with_capacity(paths.len());
    let mut speeds = Vec::with_capacity(paths.len());
    for p in paths {
        psi.push(2.0 * PI * path_length(p, t)? / lambda);
        speeds.push(p.speed.speed_at(t)?);
    }
    let offset = hs.norm_sqr() + paths.iter().map(|p| p.attenuation.norm_sqr()).sum::<f64>();
    let static_dynamic = paths
        .iter()
        .zip(&psi)
        .zip(&speeds)
        .map(|((p, &psi_k), &v)| PowerTone {
            amplitude: 2.0 * hs.norm() * p.attenuation.norm(),
            frequency: v / lambda,
            phase: psi_k + hs.arg() - p.attenuation.arg(),
        })
        .collect();
    let mut cross = Vec::new();
    for k in 0..paths.len() {
        for l in (k + 1)..paths.len() {
            let (ak, al) = (paths[k].attenuation, paths[l].attenuation);
            cross.push(PowerTone {
                amplitude: 2.0 * ak.norm() * al.norm(),
                frequency: (speeds[k] - speeds[l]) / lambda,
                phase: psi[k] - psi[l] - ak.arg() + al.arg(),
            });
        }
    }
    Ok(PowerExpansion { offset, static_dynamic, cross })
}

/// Power modulation frequency induced by a reflector moving at `speed`.
pub fn doppler_frequency(speed: f64, wavelength: f64) -> Result<f64> {
    if !(wavelength > 0.0) {
        return Err(ChannelError::Argument(format!("wavelength must be > 0, got {wavelength}")));
    }
    Ok(speed / wavelength)
}

/// Matrix of CFR power (or amplitude) samples for one activity recording.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiStream {
    pub label: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    /// Row-major `[n_channels × n_samples]`.
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl CsiStream {
    pub fn row(&self, channel: usize) -> &[f64] {
        &self.samples[channel * self.n_samples..(channel + 1) * self.n_samples]
    }

    pub fn duration(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate
    }
}
