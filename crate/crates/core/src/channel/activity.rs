use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{cfr_power, ChannelConfig, ChannelError, CsiStream, PathComponent, Result, SpeedProfile};
use crate::rng::{rng_from, tag};

/// Nominal parameters of one moving path; each channel of a generated stream
/// draws jittered attenuation and initial length around these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathTemplate {
    pub attenuation: Complex64,
    pub initial_length: f64,
    /// `(segment_length_seconds, speed_m_per_s)` pairs.
    pub speed: SpeedProfile,
}

/// A synthetic activity class: a set of moving paths and a duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivitySpec {
    pub label: usize,
    pub name: String,
    pub duration: f64,
    /// Relative per-stream jitter on every path speed.
    #[serde(default = "default_speed_jitter")]
    pub speed_jitter: f64,
    pub dynamic_paths: Vec<PathTemplate>,
}

fn default_speed_jitter() -> f64 {
    0.05
}

impl ActivitySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(ChannelError::Argument(format!(
                "activity '{}': duration must be > 0, got {}",
                self.name, self.duration
            )));
        }
        if self.dynamic_paths.is_empty() {
            return Err(ChannelError::Argument(format!(
                "activity '{}': needs at least one dynamic path",
                self.name
            )));
        }
        if !(0.0..1.0).contains(&self.speed_jitter) {
            return Err(ChannelError::Argument(format!(
                "activity '{}': speed_jitter must be in [0, 1)",
                self.name
            )));
        }
        for p in &self.dynamic_paths {
            if p.speed.duration() + 1e-9 < self.duration {
                return Err(ChannelError::Argument(format!(
                    "activity '{}': speed profile covers {} s of a {} s activity",
                    self.name,
                    p.speed.duration(),
                    self.duration
                )));
            }
            PathComponent::new(p.attenuation, p.initial_length, p.speed.clone())?;
        }
        Ok(())
    }
}

/// Six classes told apart only by their speed profiles.
///
/// The summed squared attenuation of the moving paths is the same for every
/// class, so the expected time-averaged power is too. Every class pattern
/// repeats well within one clip so any clip carries its class signature.
pub fn default_activity_library(duration: f64) -> Result<Vec<ActivitySpec>> {
    let amp = 0.3;
    let split = amp / 2f64.sqrt();
    let single = |profile: &[(f64, f64)]| -> Result<Vec<PathTemplate>> {
        Ok(vec![PathTemplate {
            attenuation: Complex64::new(amp, 0.0),
            initial_length: 3.0,
            speed: SpeedProfile::piecewise(profile)?.fitted_to(duration)?,
        }])
    };
    let ramp: Vec<(f64, f64)> = (0..5).map(|i| (duration / 5.0, 0.55 + 0.1 * i as f64)).collect();
    let classes: Vec<(&str, Vec<PathTemplate>)> = vec![
        ("constant-slow", single(&[(duration, 0.25)])?),
        ("constant-fast", single(&[(duration, 1.5)])?),
        ("ramp", single(&ramp)?),
        ("oscillatory", single(&[(0.1, 0.4), (0.1, -0.4)])?),
        (
            "two-path-opposing",
            vec![
                PathTemplate {
                    attenuation: Complex64::new(split, 0.0),
                    initial_length: 3.0,
                    speed: SpeedProfile::constant(0.3, duration)?,
                },
                PathTemplate {
                    attenuation: Complex64::new(0.0, split),
                    initial_length: 3.6,
                    speed: SpeedProfile::constant(-1.1, duration)?,
                },
            ],
        ),
        ("burst-idle", single(&[(0.15, 1.0), (0.15, 0.0)])?),
    ];
    classes
        .into_iter()
        .enumerate()
        .map(|(label, (name, dynamic_paths))| {
            let spec = ActivitySpec {
                label,
                name: name.to_string(),
                duration,
                speed_jitter: default_speed_jitter(),
                dynamic_paths,
            };
            spec.validate().map(|_| spec)
        })
        .collect()
}

/// Generate one labelled CSI power stream.
///
/// Per stream, every path speed is scaled by `1 ± speed_jitter`. Per channel,
/// path attenuations and initial lengths are scaled by `1 ± channel_jitter`.
/// Channels are evaluated at their own subcarrier frequency. Gaussian noise
/// with standard deviation `noise_std · std(clean)` is then added and the
/// result clipped at zero. The output depends only on the arguments.
pub fn generate_activity_stream(spec: &ActivitySpec, config: &ChannelConfig, seed: u64) -> Result<CsiStream> {
    spec.validate()?;
    let n_samples = (spec.duration * config.sample_rate + 1e-9).floor();
    if n_samples < 1.0 {
        return Err(ChannelError::Argument(format!(
            "duration {} s at {} samples/s yields no samples",
            spec.duration, config.sample_rate
        )));
    }
    let n_samples = n_samples as usize;
    let mut rng = rng_from(seed, &[tag::STREAM]);
    let sj = spec.speed_jitter;
    let speed_factors: Vec<f64> = spec
        .dynamic_paths
        .iter()
        .map(|_| if sj > 0.0 { 1.0 + rng.random_range(-sj..=sj) } else { 1.0 })
        .collect();

    let cj = config.channel_jitter;
    let jitter = |rng: &mut rand_chacha::ChaCha8Rng| if cj > 0.0 { 1.0 + rng.random_range(-cj..=cj) } else { 1.0 };

    let mut samples = Vec::with_capacity(config.n_channels * n_samples);
    for channel in 0..config.n_channels {
        let paths = spec
            .dynamic_paths
            .iter()
            .zip(&speed_factors)
            .map(|(tpl, &sf)| {
                let a = tpl.attenuation * jitter(&mut rng);
                let d0 = tpl.initial_length * jitter(&mut rng);
                PathComponent::new(a, d0, tpl.speed.scaled(sf))
            })
            .collect::<Result<Vec<_>>>()?;
        let f = config.channel_frequency(channel);
        for n in 0..n_samples {
            let t = n as f64 / config.sample_rate;
            samples.push(cfr_power(config, &paths, f, t)?);
        }
    }

    if config.noise_std > 0.0 {
        let len = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / len;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / len;
        let sigma = config.noise_std * var.sqrt();
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).map_err(|e| ChannelError::Argument(e.to_string()))?;
            for x in &mut samples {
                *x = (*x + normal.sample(&mut rng)).max(0.0);
            }
        }
    }

    Ok(CsiStream {
        label: spec.label,
        n_channels: config.n_channels,
        n_samples,
        samples,
        sample_rate: config.sample_rate,
    })
}
