//! Two-step spin measurement: an ideal magnet correlates S_z with position,
//! then a position measurement in one of two detectors reduces the spin state.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::detector::{DetectorSpec, Particle};
use crate::experiment::{respond, EventRecord, ResponseClass, Z_TOLERANCE};
use crate::quantum_source::{window_probability, ArrivalOutcome, ArrivalSampler, Wavefunction};
use crate::readout::ReadoutChain;
use crate::rng::TrialStreams;

/// Minimum fraction of each branch its detector window must capture.
pub const CALIBRATION_CAPTURE: f64 = 1.0 - 1e-6;

const NORM_TOLERANCE: f64 = 1e-9;
const BLOCK_SIZE: u64 = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SternGerlachError {
    #[error("|alpha|^2 + |beta|^2 = {0}, expected 1")]
    NotNormalized(f64),
    #[error("separation must be positive, got {0}")]
    InvalidSeparation(f64),
    #[error("apparatus miscalibrated: up window captures {up_capture}, down window captures {down_capture} (need >= {CALIBRATION_CAPTURE})")]
    MiscalibratedApparatus { up_capture: f64, down_capture: f64 },
    #[error("up detector must carry index 1 and down detector index 2")]
    DetectorIndices,
    #[error("up and down windows overlap")]
    OverlappingWindows,
    #[error("at least one trial is required")]
    NoTrials,
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// alpha |up> psi_up(x) + beta |down> psi_down(x).
#[derive(Debug, Clone, PartialEq)]
pub struct SpinorPacket {
    pub alpha: Complex64,
    pub beta: Complex64,
    pub up_packet: Wavefunction,
    pub down_packet: Wavefunction,
}

impl SpinorPacket {
    /// Probability of the spin-up branch.
    pub fn up_probability(&self) -> f64 {
        self.alpha.norm_sqr()
    }

    /// |<psi_up | psi_down>|, evaluated on the up-packet grid with the
    /// down packet linearly interpolated.
    pub fn branch_overlap(&self) -> f64 {
        let up = &self.up_packet;
        let sum: Complex64 =
            (0..up.len()).map(|i| up.amplitudes()[i].conj() * self.down_packet.amplitude_at(up.position(i))).sum();
        (sum * up.grid_step()).norm()
    }
}

/// Idealized magnet: the up branch moves by +separation/2, the down branch by -separation/2.
pub fn pass_magnet(
    alpha: Complex64,
    beta: Complex64,
    incoming: &Wavefunction,
    separation: f64,
) -> Result<SpinorPacket, SternGerlachError> {
    let norm = alpha.norm_sqr() + beta.norm_sqr();
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(SternGerlachError::NotNormalized(norm));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(SternGerlachError::InvalidSeparation(separation));
    }
    Ok(SpinorPacket {
        alpha,
        beta,
        up_packet: incoming.displaced(0.5 * separation),
        down_packet: incoming.displaced(-0.5 * separation),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Spin {
    Up,
    Down,
}

/// Definite S_z eigenstate left after detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ReducedState {
    pub spin: Spin,
    pub detector_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgMeasurement {
    pub event: EventRecord,
    /// None when neither detector fired.
    pub reduced: Option<ReducedState>,
}

/// Magnet plus the two calibrated detectors. Detector 1 sits on the up branch.
#[derive(Debug, Clone)]
pub struct SternGerlachApparatus {
    pub incoming: Wavefunction,
    pub separation: f64,
    pub particle: Particle,
    pub up_detector: DetectorSpec,
    pub down_detector: DetectorSpec,
    pub readout: ReadoutChain,
}

/// Branch samplers for one spinor state in a checked apparatus.
#[derive(Debug, Clone)]
pub struct PreparedMeasurement<'a> {
    apparatus: &'a SternGerlachApparatus,
    up_probability: f64,
    up_branch: ArrivalSampler,
    down_branch: ArrivalSampler,
}

impl SternGerlachApparatus {
    pub fn new(
        incoming: Wavefunction,
        separation: f64,
        particle: Particle,
        up_detector: DetectorSpec,
        down_detector: DetectorSpec,
        readout: ReadoutChain,
    ) -> Result<Self, SternGerlachError> {
        if up_detector.index() != 1 || down_detector.index() != 2 {
            return Err(SternGerlachError::DetectorIndices);
        }
        let (a, b) = (up_detector.window, down_detector.window);
        if a.lo() < b.hi() && b.lo() < a.hi() {
            return Err(SternGerlachError::OverlappingWindows);
        }
        if !(separation > 0.0 && separation.is_finite()) {
            return Err(SternGerlachError::InvalidSeparation(separation));
        }
        Ok(Self { incoming, separation, particle, up_detector, down_detector, readout })
    }

    fn windows(&self) -> [crate::quantum_source::EntranceWindow; 2] {
        [self.up_detector.window, self.down_detector.window]
    }

    /// Verifies the window-separation precondition for `state`.
    pub fn check_calibration(&self, state: &SpinorPacket) -> Result<(), SternGerlachError> {
        let up_capture = window_probability(&state.up_packet, &self.up_detector.window);
        let down_capture = window_probability(&state.down_packet, &self.down_detector.window);
        if up_capture >= CALIBRATION_CAPTURE && down_capture >= CALIBRATION_CAPTURE {
            Ok(())
        } else {
            Err(SternGerlachError::MiscalibratedApparatus { up_capture, down_capture })
        }
    }

    pub fn prepare(&self, state: &SpinorPacket) -> Result<PreparedMeasurement<'_>, SternGerlachError> {
        self.check_calibration(state)?;
        let windows = self.windows();
        Ok(PreparedMeasurement {
            apparatus: self,
            up_probability: state.up_probability(),
            up_branch: ArrivalSampler::new(&state.up_packet, &windows),
            down_branch: ArrivalSampler::new(&state.down_packet, &windows),
        })
    }

    /// Spinor state for a definite spin, passed through this magnet.
    pub fn eigenstate(&self, spin: Spin) -> SpinorPacket {
        let (one, zero) = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        let (alpha, beta) = match spin {
            Spin::Up => (one, zero),
            Spin::Down => (zero, one),
        };
        SpinorPacket {
            alpha,
            beta,
            up_packet: self.incoming.displaced(0.5 * self.separation),
            down_packet: self.incoming.displaced(-0.5 * self.separation),
        }
    }
}

impl PreparedMeasurement<'_> {
    /// Samples the spin branch, the window it reaches, and the three-phase response there.
    pub fn measure<R: Rng + ?Sized>(&self, trial_id: u64, rng: &mut R) -> SgMeasurement {
        let app = self.apparatus;
        let branch_up = rng.random::<f64>() < self.up_probability;
        let sampler = if branch_up { &self.up_branch } else { &self.down_branch };
        // Sampler indices are the detector indices 1 (up) and 2 (down).
        let arrival = sampler.sample(rng);
        let mut event = EventRecord {
            trial_id,
            arrival,
            start: None,
            dead_channel: false,
            avalanche: None,
            logical_outputs: vec![app.readout.discriminator.logic_low; 2],
        };
        let ArrivalOutcome::Hit { detector_index } = arrival else {
            return SgMeasurement { event, reduced: None };
        };
        let detector = if detector_index == 1 { &app.up_detector } else { &app.down_detector };
        let response = respond(&app.particle, detector, &app.readout, rng);
        event.start = Some(response.start);
        event.dead_channel = response.dead_channel;
        event.avalanche = response.avalanche;
        event.logical_outputs[detector_index - 1] = response.signal;
        let reduced = (response.class == ResponseClass::Counted)
            .then_some(ReducedState { spin: if detector_index == 1 { Spin::Up } else { Spin::Down }, detector_index });
        SgMeasurement { event, reduced }
    }
}

/// Position measurement behind the magnet, reduced to a definite spin by the firing detector.
pub fn measure_position<R: Rng + ?Sized>(
    state: &SpinorPacket,
    apparatus: &SternGerlachApparatus,
    rng: &mut R,
) -> Result<SgMeasurement, SternGerlachError> {
    Ok(apparatus.prepare(state)?.measure(0, rng))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SgReport {
    pub trials: u64,
    pub seed: u64,
    pub expected_up: f64,
    pub up_count: u64,
    pub down_count: u64,
    pub no_detection: u64,
    pub up_fraction: f64,
    pub stderr: f64,
    /// None when the expected fraction is exactly 0 or 1.
    pub z_score: Option<f64>,
    pub exclusivity_violations: u64,
    /// Reduced states measured a second time.
    pub repeat_trials: u64,
    /// Second measurements reproducing the first spin.
    pub repeat_agreements: u64,
}

impl SgReport {
    pub fn born_ok(&self) -> bool {
        match self.z_score {
            Some(z) => z.abs() <= Z_TOLERANCE,
            None => self.up_count == (self.expected_up * self.trials as f64).round() as u64,
        }
    }

    pub fn repeatable(&self) -> bool {
        self.repeat_agreements == self.repeat_trials
    }

    pub fn pass(&self) -> bool {
        self.born_ok() && self.repeatable() && self.exclusivity_violations == 0
    }
}

#[derive(Debug, Clone, Default)]
struct SgTally {
    up: u64,
    down: u64,
    none: u64,
    exclusivity: u64,
    repeats: u64,
    agreements: u64,
}

impl SgTally {
    fn merge(self, o: SgTally) -> SgTally {
        SgTally {
            up: self.up + o.up,
            down: self.down + o.down,
            none: self.none + o.none,
            exclusivity: self.exclusivity + o.exclusivity,
            repeats: self.repeats + o.repeats,
            agreements: self.agreements + o.agreements,
        }
    }
}

/// Runs `trials` spin measurements of `state`, re-measuring every reduced state
/// in a second identical apparatus.
pub fn run_stern_gerlach(
    apparatus: &SternGerlachApparatus,
    state: &SpinorPacket,
    trials: u64,
    seed: u64,
    workers: usize,
) -> Result<SgReport, SternGerlachError> {
    if trials == 0 {
        return Err(SternGerlachError::NoTrials);
    }
    let first = apparatus.prepare(state)?;
    let up_state = apparatus.eigenstate(Spin::Up);
    let down_state = apparatus.eigenstate(Spin::Down);
    let again_up = apparatus.prepare(&up_state)?;
    let again_down = apparatus.prepare(&down_state)?;
    let streams = TrialStreams::new(seed);
    let disc = apparatus.readout.discriminator;

    let run_block = |block: u64| {
        let mut t = SgTally::default();
        for trial_id in block * BLOCK_SIZE..((block + 1) * BLOCK_SIZE).min(trials) {
            let mut rng = streams.stream(trial_id);
            let m = first.measure(trial_id, &mut rng);
            if m.event.high_detectors(&disc).count() > 1 {
                t.exclusivity += 1;
            }
            match m.reduced {
                None => t.none += 1,
                Some(r) => {
                    match r.spin {
                        Spin::Up => t.up += 1,
                        Spin::Down => t.down += 1,
                    }
                    let second = if r.spin == Spin::Up { &again_up } else { &again_down };
                    let mut aux = streams.auxiliary_stream(trial_id);
                    t.repeats += 1;
                    if second.measure(trial_id, &mut aux).reduced.map(|s| s.spin) == Some(r.spin) {
                        t.agreements += 1;
                    }
                }
            }
        }
        t
    };

    let blocks = trials.div_ceil(BLOCK_SIZE);
    let tally = if workers <= 1 {
        (0..blocks).map(run_block).fold(SgTally::default(), SgTally::merge)
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| SternGerlachError::ThreadPool(e.to_string()))?;
        pool.install(|| (0..blocks).into_par_iter().map(run_block).reduce(SgTally::default, SgTally::merge))
    };

    let p = state.up_probability();
    let n = trials as f64;
    let stderr = (p * (1.0 - p) / n).sqrt();
    let up_fraction = tally.up as f64 / n;
    let z_score = (p > 0.0 && p < 1.0).then(|| (up_fraction - p) / stderr);
    Ok(SgReport {
        trials,
        seed,
        expected_up: p,
        up_count: tally.up,
        down_count: tally.down,
        no_detection: tally.none,
        up_fraction,
        stderr,
        z_score,
        exclusivity_violations: tally.exclusivity,
        repeat_trials: tally.repeats,
        repeat_agreements: tally.agreements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amplification::AmplifierModel;
    use crate::detector::Material;
    use crate::quantum_source::{EntranceWindow, GridSpec};
    use crate::readout::{DiscriminatorSpec, PulseShaper, Shaping};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn incoming() -> Wavefunction {
        Wavefunction::gaussian(&GridSpec { min: -5.0, max: 5.0, points: 501 }, 0.0, 0.5).unwrap()
    }

    fn detector(lo: f64, hi: f64, index: usize) -> DetectorSpec {
        DetectorSpec::new(
            EntranceWindow::spanning(lo, hi, index).unwrap(),
            Material::ChargedStopper { w_value: 26.0 },
            1e3,
            AmplifierModel::GasGain { w_value: 26.0, gain: 1e3 },
            true,
        )
        .unwrap()
    }

    fn apparatus(separation: f64) -> SternGerlachApparatus {
        let shaper =
            PulseShaper::new(Shaping { amplitude_per_coulomb: 1e14, rise_time: 5e-9, decay_time: 50e-9 }, 2e-9, 100e-9)
                .unwrap();
        let readout = ReadoutChain::new(shaper, DiscriminatorSpec::with_threshold(0.05).unwrap(), 0.0).unwrap();
        let h = 0.5 * separation;
        SternGerlachApparatus::new(
            incoming(),
            separation,
            Particle::charged(1, 1e4, 938.272e6).unwrap(),
            detector(h - 5.01, h + 5.01, 1),
            detector(-h - 5.01, -h + 5.01, 2),
            readout,
        )
        .unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn eigenstate_passes_undisturbed() {
        let s = pass_magnet(c(1.0, 0.0), c(0.0, 0.0), &incoming(), 12.0).unwrap();
        assert_eq!(s.up_probability(), 1.0);
        assert_eq!(s.up_packet.grid_min(), incoming().grid_min() + 6.0);
        let app = apparatus(12.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let m = measure_position(&s, &app, &mut rng).unwrap();
            assert_eq!(m.reduced, Some(ReducedState { spin: Spin::Up, detector_index: 1 }));
        }
    }

    #[test]
    fn equal_superposition_has_equal_weights() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let s = pass_magnet(c(h, 0.0), c(0.0, h), &incoming(), 12.0).unwrap();
        assert!((s.up_probability() - 0.5).abs() < 1e-15);
        assert!((s.beta.norm_sqr() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn separated_branches_do_not_overlap() {
        let s = pass_magnet(c(1.0, 0.0), c(0.0, 0.0), &incoming(), 12.0).unwrap();
        // |psi|^2 sigma 0.5 displaced by 12: analytic overlap exp(-144 / (8 * 0.25)) ~ 5e-32
        assert!(s.branch_overlap() < 1e-6);
        let close = pass_magnet(c(1.0, 0.0), c(0.0, 0.0), &incoming(), 0.2).unwrap();
        assert!((close.branch_overlap() - (-0.04f64 / 2.0).exp()).abs() < 1e-3);
    }

    #[test]
    fn unnormalized_amplitudes_rejected() {
        assert!(matches!(
            pass_magnet(c(1.0, 0.0), c(1.0, 0.0), &incoming(), 1.0),
            Err(SternGerlachError::NotNormalized(_))
        ));
        assert!(matches!(
            pass_magnet(c(1.0, 0.0), c(0.0, 0.0), &incoming(), 0.0),
            Err(SternGerlachError::InvalidSeparation(_))
        ));
    }

    #[test]
    fn miscalibration_detected() {
        let app = apparatus(12.0);
        // branches only 2 m apart never reach the 6 m-offset windows fully
        let s = pass_magnet(c(1.0, 0.0), c(0.0, 0.0), &incoming(), 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(measure_position(&s, &app, &mut rng), Err(SternGerlachError::MiscalibratedApparatus { .. })));
    }

    #[test]
    fn born_fraction_and_repeatability() {
        let app = apparatus(12.0);
        let a = 0.2f64.sqrt();
        let s = pass_magnet(c(a, 0.0), c((0.8f64).sqrt(), 0.0), &incoming(), 12.0).unwrap();
        let r = run_stern_gerlach(&app, &s, 100_000, 9, 2).unwrap();
        assert!(r.born_ok(), "{r:?}");
        assert!(r.repeatable());
        assert_eq!(r.no_detection, 0);
        assert_eq!(r.repeat_trials, r.trials);
    }

    #[test]
    fn global_phase_is_unobservable() {
        let app = apparatus(12.0);
        let (a, b) = (c(0.6, 0.0), c(0.0, 0.8));
        let phase = Complex64::from_polar(1.0, 0.7);
        let s1 = pass_magnet(a, b, &incoming(), 12.0).unwrap();
        let s2 = pass_magnet(a * phase, b * phase, &incoming(), 12.0).unwrap();
        let r1 = run_stern_gerlach(&app, &s1, 50_000, 4, 1).unwrap();
        let r2 = run_stern_gerlach(&app, &s2, 50_000, 4, 1).unwrap();
        assert_eq!((r1.up_count, r1.down_count), (r2.up_count, r2.down_count));
    }
}
