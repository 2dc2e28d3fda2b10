//! Phase 3: pulse shaping, discrimination, and counting.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReadoutError {
    #[error("invalid shaping: {0}")]
    InvalidShaping(String),
    #[error("invalid discriminator: {0}")]
    InvalidDiscriminator(String),
    #[error("no counter channel for detector {0}")]
    UnknownDetector(usize),
}

/// Sampled voltage pulse U(t), `t_i = t0 + i * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseTrace {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<f64>,
}

impl PulseTrace {
    pub fn peak(&self) -> f64 {
        self.samples.iter().copied().fold(0.0, f64::max)
    }

    pub fn argmax(&self) -> Option<usize> {
        self.samples.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i)
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// `t_s,U_V` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,U_V\n");
        for (i, u) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "{:.15},{:.12}", self.time(i), u);
        }
        out
    }
}

/// Two-exponential shaping: U(t) = A (exp(-t/decay) - exp(-t/rise)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shaping {
    /// Peak volts per coulomb of collected charge.
    pub amplitude_per_coulomb: f64,
    pub rise_time: f64,
    pub decay_time: f64,
}

impl Shaping {
    pub fn validate(&self) -> Result<(), ReadoutError> {
        let all_positive =
            [self.amplitude_per_coulomb, self.rise_time, self.decay_time].iter().all(|v| *v > 0.0 && v.is_finite());
        if !all_positive {
            return Err(ReadoutError::InvalidShaping("shaping parameters must be positive".into()));
        }
        if self.decay_time <= self.rise_time {
            return Err(ReadoutError::InvalidShaping(format!(
                "decay time {} must exceed rise time {}",
                self.decay_time, self.rise_time
            )));
        }
        Ok(())
    }

    /// Stationary point of the unscaled pulse.
    pub fn peak_time(&self) -> f64 {
        let (r, d) = (self.rise_time, self.decay_time);
        r * d / (d - r) * (d / r).ln()
    }

    fn unit_shape(&self, t: f64) -> f64 {
        (-t / self.decay_time).exp() - (-t / self.rise_time).exp()
    }
}

/// Shaper with the unit pulse tabulated once for a fixed sampling grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseShaper {
    shaping: Shaping,
    dt: f64,
    /// Pulse for 1 C, peak-normalized to `amplitude_per_coulomb`.
    template: Vec<f64>,
}

impl PulseShaper {
    pub fn new(shaping: Shaping, dt: f64, duration: f64) -> Result<Self, ReadoutError> {
        shaping.validate()?;
        if !(dt > 0.0 && dt.is_finite()) || !(duration >= dt && duration.is_finite()) {
            return Err(ReadoutError::InvalidShaping(format!(
                "need 0 < dt <= duration, got dt {dt}, duration {duration}"
            )));
        }
        let n = (duration / dt).floor() as usize + 1;
        let scale = shaping.amplitude_per_coulomb / shaping.unit_shape(shaping.peak_time());
        let template = (0..n).map(|i| scale * shaping.unit_shape(i as f64 * dt)).collect();
        Ok(Self { shaping, dt, template })
    }

    pub fn shaping(&self) -> &Shaping {
        &self.shaping
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn samples_per_trace(&self) -> usize {
        self.template.len()
    }

    pub fn shape(&self, charge: f64) -> PulseTrace {
        PulseTrace { t0: 0.0, dt: self.dt, samples: self.template.iter().map(|u| u * charge).collect() }
    }
}

/// Voltage pulse for `charge` coulombs sampled every `dt` over `[0, duration]`.
pub fn shape_pulse(charge: f64, shaping: &Shaping, dt: f64, duration: f64) -> Result<PulseTrace, ReadoutError> {
    Ok(PulseShaper::new(*shaping, dt, duration)?.shape(charge))
}

/// Adds white Gaussian noise of standard deviation `sigma` volts to every sample.
pub fn add_noise<R: Rng + ?Sized>(trace: &mut PulseTrace, sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let Ok(normal) = Normal::new(0.0, sigma) else {
        return;
    };
    for s in &mut trace.samples {
        *s += normal.sample(rng);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    /// U_thr (V).
    pub threshold: f64,
    pub logic_high: f64,
    pub logic_low: f64,
}

/// Logical output levels of the reference set-up: 1 V when fired, 0 V otherwise.
pub const DEFAULT_LOGIC_HIGH: f64 = 1.0;
pub const DEFAULT_LOGIC_LOW: f64 = 0.0;

impl DiscriminatorSpec {
    pub fn new(threshold: f64, logic_high: f64, logic_low: f64) -> Result<Self, ReadoutError> {
        if !(threshold >= 0.0 && threshold.is_finite()) {
            return Err(ReadoutError::InvalidDiscriminator(format!("threshold {threshold} must be >= 0")));
        }
        if !(logic_high > logic_low) {
            return Err(ReadoutError::InvalidDiscriminator(format!(
                "logic high {logic_high} must exceed logic low {logic_low}"
            )));
        }
        Ok(Self { threshold, logic_high, logic_low })
    }

    pub fn with_threshold(threshold: f64) -> Result<Self, ReadoutError> {
        Self::new(threshold, DEFAULT_LOGIC_HIGH, DEFAULT_LOGIC_LOW)
    }

    pub fn is_high(&self, signal: f64) -> bool {
        signal == self.logic_high
    }
}

/// Logical output U^L: high iff some sample strictly exceeds the threshold.
pub fn discriminate(trace: &PulseTrace, d: &DiscriminatorSpec) -> f64 {
    if trace.samples.iter().any(|&u| u > d.threshold) {
        d.logic_high
    } else {
        d.logic_low
    }
}

/// Per-detector counters, indexed by 1-based detector index.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct CounterMemory {
    counts: Vec<u64>,
}

impl CounterMemory {
    pub fn new(detectors: usize) -> Self {
        Self { counts: vec![0; detectors] }
    }

    pub fn get(&self, detector_index: usize) -> Option<u64> {
        detector_index.checked_sub(1).and_then(|i| self.counts.get(i)).copied()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Increments detector `detector_index` iff `signal` is the logic-high level.
    pub fn count(&mut self, signal: f64, detector_index: usize, d: &DiscriminatorSpec) -> Result<(), ReadoutError> {
        let slot = detector_index
            .checked_sub(1)
            .and_then(|i| self.counts.get_mut(i))
            .ok_or(ReadoutError::UnknownDetector(detector_index))?;
        if d.is_high(signal) {
            *slot += 1;
        }
        Ok(())
    }

    /// Elementwise sum of two counters of the same size.
    pub fn merge(&mut self, other: &CounterMemory) {
        if self.counts.len() < other.counts.len() {
            self.counts.resize(other.counts.len(), 0);
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Shaper, optional noise, and discriminator applied in sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutChain {
    pub shaper: PulseShaper,
    pub discriminator: DiscriminatorSpec,
    pub noise_sigma: f64,
}

impl ReadoutChain {
    pub fn new(shaper: PulseShaper, discriminator: DiscriminatorSpec, noise_sigma: f64) -> Result<Self, ReadoutError> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(ReadoutError::InvalidShaping(format!("noise sigma {noise_sigma} must be >= 0")));
        }
        Ok(Self { shaper, discriminator, noise_sigma })
    }

    /// Pulse and logical output for `charge` coulombs.
    pub fn process<R: Rng + ?Sized>(&self, charge: f64, rng: &mut R) -> (PulseTrace, f64) {
        let mut trace = self.shaper.shape(charge);
        add_noise(&mut trace, self.noise_sigma, rng);
        let signal = discriminate(&trace, &self.discriminator);
        (trace, signal)
    }

    pub fn with_threshold(&self, threshold: f64) -> Result<Self, ReadoutError> {
        let d = DiscriminatorSpec::new(threshold, self.discriminator.logic_high, self.discriminator.logic_low)?;
        Ok(Self { discriminator: d, ..self.clone() })
    }
}
