//! Phase 1: a single detector's start reaction and deposited energy.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amplification::AmplifierModel;
use crate::quantum_source::EntranceWindow;

/// Neutron rest energy (eV), CODATA 2018.
pub const NEUTRON_REST_ENERGY_EV: f64 = 939.565_420_52e6;

/// Upper bound on kinetic / rest energy accepted for massive particles.
pub const NONRELATIVISTIC_LIMIT: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("particle energy must be positive and finite, got {0} eV")]
    NonPositiveEnergy(f64),
    #[error("particle is relativistic: kinetic/rest energy = {0} (limit {NONRELATIVISTIC_LIMIT})")]
    Relativistic(f64),
    #[error("charge sign must be +1 or -1, got {0}")]
    InvalidChargeSign(i8),
    #[error("invalid detector {index}: {reason}")]
    InvalidSpec { index: usize, reason: String },
    #[error("detector {detector_index} is inoperable; a start reaction occurred but no signal can be produced")]
    InoperableDetector { detector_index: usize, outcome: StartReactionOutcome },
}

/// Incident quantum object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Particle {
    Charged { charge_sign: i8, kinetic_energy: f64, rest_mass_energy: f64 },
    Neutron { kinetic_energy: f64 },
    Photon { energy: f64 },
}

impl Particle {
    pub fn charged(charge_sign: i8, kinetic_energy: f64, rest_mass_energy: f64) -> Result<Self, DetectorError> {
        if charge_sign != 1 && charge_sign != -1 {
            return Err(DetectorError::InvalidChargeSign(charge_sign));
        }
        check_positive(kinetic_energy)?;
        check_positive(rest_mass_energy)?;
        check_nonrelativistic(kinetic_energy, rest_mass_energy)?;
        Ok(Particle::Charged { charge_sign, kinetic_energy, rest_mass_energy })
    }

    pub fn neutron(kinetic_energy: f64) -> Result<Self, DetectorError> {
        check_positive(kinetic_energy)?;
        check_nonrelativistic(kinetic_energy, NEUTRON_REST_ENERGY_EV)?;
        Ok(Particle::Neutron { kinetic_energy })
    }

    pub fn photon(energy: f64) -> Result<Self, DetectorError> {
        check_positive(energy)?;
        Ok(Particle::Photon { energy })
    }

    /// Kinetic energy for massive kinds, total energy for photons (eV).
    pub fn energy(&self) -> f64 {
        match *self {
            Particle::Charged { kinetic_energy, .. } | Particle::Neutron { kinetic_energy } => kinetic_energy,
            Particle::Photon { energy } => energy,
        }
    }

    /// Whether this particle can start a reaction in `material` at all.
    pub fn compatible_with(&self, material: &Material) -> bool {
        matches!(
            (self, material),
            (Particle::Charged { .. }, _)
                | (Particle::Neutron { .. }, Material::Bf3Gas { .. })
                | (Particle::Photon { .. }, Material::Photocathode { .. })
        )
    }
}

fn check_positive(e: f64) -> Result<(), DetectorError> {
    if e > 0.0 && e.is_finite() {
        Ok(())
    } else {
        Err(DetectorError::NonPositiveEnergy(e))
    }
}

fn check_nonrelativistic(kinetic: f64, rest: f64) -> Result<(), DetectorError> {
    let ratio = kinetic / rest;
    if ratio < NONRELATIVISTIC_LIMIT {
        Ok(())
    } else {
        Err(DetectorError::Relativistic(ratio))
    }
}

/// Charged product of a start reaction and its share of the released energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChargedSecondary {
    pub label: &'static str,
    pub energy_fraction: f64,
}

/// How a channel turns the incident energy into deposited energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Energetics {
    /// Incident particle stops in the detector.
    FullStop,
    /// Exothermic nuclear reaction releasing `q_value` eV.
    QValue(f64),
    /// Photoemission costing `work_function` eV.
    WorkFunction(f64),
}

/// Exit channel of a start reaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StartReactionChannel {
    pub name: &'static str,
    pub secondaries: &'static [ChargedSecondary],
    pub energetics: Energetics,
}

impl StartReactionChannel {
    /// a + X -> a + X+ + e-; the energy split is bookkeeping only.
    pub const IONISATION: &'static [ChargedSecondary] = &[
        ChargedSecondary { label: "X+", energy_fraction: 0.5 },
        ChargedSecondary { label: "e-", energy_fraction: 0.5 },
    ];
    /// n + 10B -> 11B* -> alpha + 7Li; two-body momentum balance gives 7/11 and 4/11.
    pub const BORON_CAPTURE: &'static [ChargedSecondary] = &[
        ChargedSecondary { label: "alpha", energy_fraction: 7.0 / 11.0 },
        ChargedSecondary { label: "7Li", energy_fraction: 4.0 / 11.0 },
    ];
    pub const PHOTOELECTRIC: &'static [ChargedSecondary] = &[ChargedSecondary { label: "e-", energy_fraction: 1.0 }];

    pub fn ionisation() -> Self {
        Self { name: "ionisation", secondaries: Self::IONISATION, energetics: Energetics::FullStop }
    }

    pub fn boron_capture(q_value: f64) -> Self {
        Self { name: "n+10B->alpha+7Li", secondaries: Self::BORON_CAPTURE, energetics: Energetics::QValue(q_value) }
    }

    pub fn photoelectric(work_function: f64) -> Self {
        Self {
            name: "photoelectric",
            secondaries: Self::PHOTOELECTRIC,
            energetics: Energetics::WorkFunction(work_function),
        }
    }

    /// At least one charged secondary; fractions in (0, 1] summing to at most 1.
    pub fn is_valid(&self) -> bool {
        let sum: f64 = self.secondaries.iter().map(|s| s.energy_fraction).sum();
        !self.secondaries.is_empty()
            && self.secondaries.iter().all(|s| s.energy_fraction > 0.0 && s.energy_fraction <= 1.0)
            && sum <= 1.0 + 1e-12
    }
}

/// Detector material and the parameters of its start reaction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Material {
    /// BF3 proportional chamber. `opacity` is n*sigma*L for the 10B capture.
    Bf3Gas {
        boron10_fraction: f64,
        opacity: f64,
        q_value: f64,
    },
    Photocathode {
        quantum_efficiency: f64,
        work_function: f64,
    },
    ChargedStopper {
        w_value: f64,
    },
}

/// 10B enrichment of the reference BF3 counter.
pub const DEFAULT_BORON10_FRACTION: f64 = 0.96;

impl Material {
    fn validate(&self) -> Result<(), String> {
        match *self {
            Material::Bf3Gas { boron10_fraction, opacity, q_value } => {
                if !(0.0..=1.0).contains(&boron10_fraction) {
                    return Err(format!("boron10_fraction {boron10_fraction} not in [0, 1]"));
                }
                if !(opacity >= 0.0 && opacity.is_finite()) {
                    return Err(format!("opacity {opacity} must be >= 0"));
                }
                if !(q_value >= 0.0 && q_value.is_finite()) {
                    return Err(format!("q_value {q_value} must be >= 0"));
                }
            }
            Material::Photocathode { quantum_efficiency, work_function } => {
                if !(0.0..=1.0).contains(&quantum_efficiency) {
                    return Err(format!("quantum_efficiency {quantum_efficiency} not in [0, 1]"));
                }
                if !(work_function >= 0.0 && work_function.is_finite()) {
                    return Err(format!("work_function {work_function} must be >= 0"));
                }
            }
            Material::ChargedStopper { w_value } => {
                if !(w_value > 0.0 && w_value.is_finite()) {
                    return Err(format!("w_value {w_value} must be > 0"));
                }
            }
        }
        Ok(())
    }
}

/// One detector of the array.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSpec {
    pub window: EntranceWindow,
    pub material: Material,
    /// E_thr in eV.
    pub threshold_energy: f64,
    pub amplifier: AmplifierModel,
    pub operable: bool,
}

impl DetectorSpec {
    pub fn new(
        window: EntranceWindow,
        material: Material,
        threshold_energy: f64,
        amplifier: AmplifierModel,
        operable: bool,
    ) -> Result<Self, DetectorError> {
        let index = window.detector_index;
        let invalid = |reason: String| DetectorError::InvalidSpec { index, reason };
        material.validate().map_err(invalid)?;
        amplifier.validate().map_err(invalid)?;
        if !(threshold_energy >= 0.0 && threshold_energy.is_finite()) {
            return Err(invalid(format!("threshold energy {threshold_energy} must be >= 0")));
        }
        Ok(Self { window, material, threshold_energy, amplifier, operable })
    }

    pub fn index(&self) -> usize {
        self.window.detector_index
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum StartReactionOutcome {
    Occurred { channel: StartReactionChannel, deposited_energy: f64 },
    NoReaction,
}

impl StartReactionOutcome {
    pub fn deposited_energy(&self) -> Option<f64> {
        match *self {
            StartReactionOutcome::Occurred { deposited_energy, .. } => Some(deposited_energy),
            StartReactionOutcome::NoReaction => None,
        }
    }
}

/// Probability of a start reaction given the particle reached `d`'s window.
pub fn start_reaction_probability(p: &Particle, d: &DetectorSpec) -> f64 {
    match (p, d.material) {
        (Particle::Charged { .. }, _) => 1.0,
        (Particle::Neutron { .. }, Material::Bf3Gas { boron10_fraction, opacity, .. }) => {
            boron10_fraction * -(-opacity).exp_m1()
        }
        (Particle::Photon { .. }, Material::Photocathode { quantum_efficiency, .. }) => quantum_efficiency,
        _ => 0.0,
    }
}

/// Exit channel used by `material` for particle `p`, if any.
pub fn channel_for(p: &Particle, material: &Material) -> Option<StartReactionChannel> {
    match (p, *material) {
        (Particle::Charged { .. }, _) => Some(StartReactionChannel::ionisation()),
        (Particle::Neutron { .. }, Material::Bf3Gas { q_value, .. }) => {
            Some(StartReactionChannel::boron_capture(q_value))
        }
        (Particle::Photon { .. }, Material::Photocathode { work_function, .. }) => {
            Some(StartReactionChannel::photoelectric(work_function))
        }
        _ => None,
    }
}

/// E_dep in eV for a start reaction through `channel`.
pub fn deposited_energy(p: &Particle, channel: &StartReactionChannel) -> f64 {
    let e = p.energy();
    match channel.energetics {
        Energetics::FullStop => e,
        Energetics::QValue(q) => e + q,
        Energetics::WorkFunction(w) => (e - w).max(0.0),
    }
}

/// Energy threshold gate: strictly greater.
pub fn check_threshold(deposited: f64, threshold: f64) -> bool {
    deposited > threshold
}

/// Samples phase 1 in detector `d`. One uniform draw per call.
///
/// A photon at or below the work function ejects nothing and yields
/// `NoReaction`. An inoperable detector returns `InoperableDetector`
/// carrying the reaction that did occur.
pub fn attempt_start_reaction<R: Rng + ?Sized>(
    p: &Particle,
    d: &DetectorSpec,
    rng: &mut R,
) -> Result<StartReactionOutcome, DetectorError> {
    let prob = start_reaction_probability(p, d);
    let u: f64 = rng.random();
    if u >= prob {
        return Ok(StartReactionOutcome::NoReaction);
    }
    let Some(channel) = channel_for(p, &d.material) else {
        return Ok(StartReactionOutcome::NoReaction);
    };
    let e_dep = deposited_energy(p, &channel);
    if e_dep <= 0.0 {
        return Ok(StartReactionOutcome::NoReaction);
    }
    let outcome = StartReactionOutcome::Occurred { channel, deposited_energy: e_dep };
    if !d.operable {
        return Err(DetectorError::InoperableDetector { detector_index: d.index(), outcome });
    }
    Ok(outcome)
}
