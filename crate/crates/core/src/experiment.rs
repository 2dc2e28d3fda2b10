//! Trial orchestration across a detector array and the statistical checks
//! comparing counter-derived probabilities with Born-rule window probabilities.
//!
//! Each trial runs arrival sampling, the start reaction, amplification,
//! shaping, discrimination, and counting. Trials are independent and each
//! owns the random substream selected by its id, so the aggregate report is
//! identical for any worker count.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::amplification::{amplify, primary_carriers, AvalancheResult};
use crate::detector::{
    attempt_start_reaction, channel_for, check_threshold, deposited_energy, start_reaction_probability, DetectorError,
    DetectorSpec, Particle, StartReactionOutcome,
};
use crate::quantum_source::{
    validate_windows, window_probability, ArrivalOutcome, ArrivalSampler, EntranceWindow, SourceError, Wavefunction,
};
use crate::readout::{discriminate, DiscriminatorSpec, PulseTrace, ReadoutChain};
use crate::rng::TrialStreams;

/// Per-detector |z| bound for agreement.
pub const Z_TOLERANCE: f64 = 4.0;
pub const DEFAULT_CHI_SQUARE_QUANTILE: f64 = 0.999;
pub const DEFAULT_EVENT_LOG_CAP: usize = 1000;

const BLOCK_SIZE: u64 = 4096;
/// Residual (uncounted) probability below this is treated as exactly zero.
const RESIDUAL_EPS: f64 = 1e-9;
/// Predicted probabilities this close to 0 or 1 are treated as exact.
const DEGENERATE_EPS: f64 = 1e-12;

fn is_degenerate(p: f64) -> bool {
    p <= DEGENERATE_EPS || p >= 1.0 - DEGENERATE_EPS
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("particle kind is incompatible with every detector material")]
    ConfigMismatch,
    #[error("at least one particle must be emitted")]
    NoEvents,
    #[error("detector at position {position} carries index {index}; indices must run 1..=Z in order")]
    BadIndex { position: usize, index: usize },
    #[error(transparent)]
    Windows(#[from] SourceError),
    #[error("verification needs a complete event log, got a sampled one")]
    SampledLog,
    #[error("workers must be >= 1")]
    NoWorkers,
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// What the source emits: one state, one particle template.
#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub wavefunction: Wavefunction,
    pub particle: Particle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub workers: usize,
    /// Keep every EventRecord. Otherwise keep a reservoir of `event_log_cap`.
    pub retain_event_log: bool,
    pub event_log_cap: usize,
    pub dump_pulses: BTreeSet<u64>,
    pub chi_square_quantile: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            retain_event_log: false,
            event_log_cap: DEFAULT_EVENT_LOG_CAP,
            dump_pulses: BTreeSet::new(),
            chi_square_quantile: DEFAULT_CHI_SQUARE_QUANTILE,
        }
    }
}

/// Full trace of one trial.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventRecord {
    pub trial_id: u64,
    pub arrival: ArrivalOutcome,
    /// Absent on a miss.
    pub start: Option<StartReactionOutcome>,
    /// The start reaction happened in an inoperable detector.
    pub dead_channel: bool,
    /// Absent unless a reaction passed the energy threshold in an operable detector.
    pub avalanche: Option<AvalancheResult>,
    /// U_n^L for n = 1..=Z.
    pub logical_outputs: Vec<f64>,
}

impl EventRecord {
    pub fn high_detectors<'a>(&'a self, d: &'a DiscriminatorSpec) -> impl Iterator<Item = usize> + 'a {
        self.logical_outputs.iter().enumerate().filter(|(_, u)| d.is_high(**u)).map(|(i, _)| i + 1)
    }

    /// One CSV line: `trial_id,arrival,start,deposited_energy_ev,dead_channel,carriers,charge_c,logical_outputs_v`.
    pub fn to_row(&self) -> String {
        let arrival = match self.arrival {
            ArrivalOutcome::Hit { detector_index } => format!("hit:{detector_index}"),
            ArrivalOutcome::Miss => "miss".into(),
        };
        let (start, e_dep) = match &self.start {
            None => (String::new(), String::new()),
            Some(StartReactionOutcome::NoReaction) => ("none".into(), String::new()),
            Some(StartReactionOutcome::Occurred { channel, deposited_energy }) => {
                (channel.name.to_string(), fmt_sig(*deposited_energy))
            }
        };
        let (carriers, charge) = match &self.avalanche {
            Some(a) => (a.carrier_count.to_string(), fmt_sig(a.collected_charge)),
            None => (String::new(), String::new()),
        };
        let mut outputs = String::new();
        for (i, u) in self.logical_outputs.iter().enumerate() {
            if i > 0 {
                outputs.push(';');
            }
            let _ = write!(outputs, "{u}");
        }
        format!("{},{arrival},{start},{e_dep},{},{carriers},{charge},{outputs}", self.trial_id, self.dead_channel)
    }
}

pub const EVENT_LOG_HEADER: &str =
    "trial_id,arrival,start,deposited_energy_ev,dead_channel,carriers,charge_c,logical_outputs_v";

/// Event records in trial order. `complete` is false for a reservoir sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub records: Vec<EventRecord>,
    pub complete: bool,
    pub discriminator: DiscriminatorSpec,
}

impl EventLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(EVENT_LOG_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.to_row());
            out.push('\n');
        }
        out
    }
}

/// Per-detector line of the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectorRow {
    pub detector_index: usize,
    pub center: f64,
    pub width: f64,
    /// N(D_n).
    pub counts: u64,
    /// N(D_n) / N_s.
    pub empirical_prob: f64,
    /// Born-rule probability of passing the entrance window.
    pub window_prob: f64,
    /// Start-reaction probability given arrival.
    pub start_prob: f64,
    /// Predicted firing probability: window probability times start probability,
    /// zero when the nominal deposit fails the energy threshold or the detector is dead.
    pub theoretical_prob: f64,
    /// Binomial standard error of `empirical_prob` under `theoretical_prob`.
    pub stderr: f64,
    /// Start reactions depositing more than E_thr, including those in a dead channel.
    pub qualifying_reactions: u64,
}

/// Why counted trials produced no logical output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct NoSignalBreakdown {
    pub no_reaction: u64,
    pub below_threshold: u64,
    pub dead_channel: u64,
    pub discriminator_reject: u64,
}

impl NoSignalBreakdown {
    pub fn total(&self) -> u64 {
        self.no_reaction + self.below_threshold + self.dead_channel + self.discriminator_reject
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub emitted: u64,
    pub seed: u64,
    pub detectors: Vec<DetectorRow>,
    pub miss_count: u64,
    pub no_signal_count: u64,
    pub no_signal: NoSignalBreakdown,
    /// Trials with more than one logic-high output.
    pub exclusivity_violations: u64,
    /// Trials in which some detector fired without having had the start reaction.
    pub misattributed_signals: u64,
    pub residual_prob: f64,
    pub chi_square: f64,
    pub chi_square_dof: usize,
    pub chi_square_quantile: f64,
}

impl ExperimentReport {
    pub fn total_counts(&self) -> u64 {
        self.detectors.iter().map(|d| d.counts).sum()
    }

    /// Sum of counts, misses, and silent trials equals the emitted number.
    pub fn is_conserved(&self) -> bool {
        self.total_counts() + self.miss_count + self.no_signal_count == self.emitted
            && self.no_signal.total() == self.no_signal_count
    }
}

pub struct RunOutput {
    pub report: ExperimentReport,
    pub event_log: EventLog,
    pub pulses: BTreeMap<u64, PulseTrace>,
}

/// Source, detector array, and readout, validated together.
#[derive(Debug, Clone)]
pub struct Experiment {
    source: Source,
    detectors: Vec<DetectorSpec>,
    readout: ReadoutChain,
    options: RunOptions,
}

impl Experiment {
    pub fn new(
        source: Source,
        detectors: Vec<DetectorSpec>,
        readout: ReadoutChain,
        options: RunOptions,
    ) -> Result<Self, ExperimentError> {
        for (position, d) in detectors.iter().enumerate() {
            if d.index() != position + 1 {
                return Err(ExperimentError::BadIndex { position, index: d.index() });
            }
        }
        let windows: Vec<EntranceWindow> = detectors.iter().map(|d| d.window).collect();
        validate_windows(&windows)?;
        if !detectors.is_empty() && !detectors.iter().any(|d| source.particle.compatible_with(&d.material)) {
            return Err(ExperimentError::ConfigMismatch);
        }
        if options.workers == 0 {
            return Err(ExperimentError::NoWorkers);
        }
        Ok(Self { source, detectors, readout, options })
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    pub fn detectors(&self) -> &[DetectorSpec] {
        &self.detectors
    }

    pub fn readout(&self) -> &ReadoutChain {
        &self.readout
    }

    pub fn options(&self) -> &RunOptions {
        &self.options
    }

    pub fn options_mut(&mut self) -> &mut RunOptions {
        &mut self.options
    }

    pub fn windows(&self) -> Vec<EntranceWindow> {
        self.detectors.iter().map(|d| d.window).collect()
    }

    /// Born-rule window probabilities of the array.
    pub fn window_probabilities(&self) -> Vec<f64> {
        self.detectors.iter().map(|d| window_probability(&self.source.wavefunction, &d.window)).collect()
    }

    /// Predicted firing probability of each detector.
    pub fn theoretical_probabilities(&self) -> Vec<f64> {
        let p = &self.source.particle;
        self.detectors
            .iter()
            .zip(self.window_probabilities())
            .map(|(d, w)| {
                let fires = d.operable
                    && channel_for(p, &d.material)
                        .is_some_and(|ch| check_threshold(deposited_energy(p, &ch), d.threshold_energy));
                if fires {
                    w * start_reaction_probability(p, d)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Outcome of phases 1-3 in one detector for a particle that reached its window.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorResponse {
    pub start: StartReactionOutcome,
    pub dead_channel: bool,
    pub avalanche: Option<AvalancheResult>,
    pub trace: Option<PulseTrace>,
    /// Logical output of this detector.
    pub signal: f64,
    pub class: ResponseClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseClass {
    Counted,
    NoReaction,
    BelowThreshold,
    DeadChannel,
    DiscriminatorReject,
}

/// Runs start reaction, amplification, and readout in `detector`.
///
/// The energy threshold gates the chain: a deposit at or below E_thr produces no pulse.
pub fn respond<R: Rng + ?Sized>(
    particle: &Particle,
    detector: &DetectorSpec,
    readout: &ReadoutChain,
    rng: &mut R,
) -> DetectorResponse {
    let low = readout.discriminator.logic_low;
    let silent = |start, dead_channel, class| DetectorResponse {
        start,
        dead_channel,
        avalanche: None,
        trace: None,
        signal: low,
        class,
    };
    let (channel, e_dep) = match attempt_start_reaction(particle, detector, rng) {
        Ok(StartReactionOutcome::NoReaction) => {
            return silent(StartReactionOutcome::NoReaction, false, ResponseClass::NoReaction)
        }
        Err(DetectorError::InoperableDetector { outcome, .. }) => {
            return silent(outcome, true, ResponseClass::DeadChannel)
        }
        Err(_) => return silent(StartReactionOutcome::NoReaction, false, ResponseClass::NoReaction),
        Ok(StartReactionOutcome::Occurred { channel, deposited_energy }) => (channel, deposited_energy),
    };
    let start = StartReactionOutcome::Occurred { channel, deposited_energy: e_dep };
    if !check_threshold(e_dep, detector.threshold_energy) {
        return silent(start, false, ResponseClass::BelowThreshold);
    }
    let primaries = primary_carriers(e_dep, &detector.amplifier, rng);
    let avalanche = amplify(primaries, &detector.amplifier, rng);
    let (trace, signal) = readout.process(avalanche.collected_charge, rng);
    let class =
        if readout.discriminator.is_high(signal) { ResponseClass::Counted } else { ResponseClass::DiscriminatorReject };
    DetectorResponse { start, dead_channel: false, avalanche: Some(avalanche), trace: Some(trace), signal, class }
}

/// Mergeable per-block accumulator.
#[derive(Debug, Clone, Default)]
struct Tally {
    counts: Vec<u64>,
    qualifying: Vec<u64>,
    miss: u64,
    no_signal: NoSignalBreakdown,
    exclusivity_violations: u64,
    misattributed: u64,
    log: LogAccumulator,
    pulses: BTreeMap<u64, PulseTrace>,
}

#[derive(Debug, Clone, Default)]
enum LogAccumulator {
    #[default]
    Empty,
    Full(Vec<EventRecord>),
    Reservoir {
        cap: usize,
        heap: BinaryHeap<Reserved>,
    },
}

/// Reservoir entry ordered by priority, so the max-heap evicts the largest.
#[derive(Debug, Clone)]
struct Reserved {
    priority: u64,
    record: EventRecord,
}

impl PartialEq for Reserved {
    fn eq(&self, other: &Self) -> bool {
        (self.priority, self.record.trial_id) == (other.priority, other.record.trial_id)
    }
}
impl Eq for Reserved {}
impl PartialOrd for Reserved {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Reserved {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.priority, self.record.trial_id).cmp(&(other.priority, other.record.trial_id))
    }
}

impl LogAccumulator {
    fn new(options: &RunOptions) -> Self {
        if options.retain_event_log {
            LogAccumulator::Full(Vec::new())
        } else if options.event_log_cap > 0 {
            LogAccumulator::Reservoir { cap: options.event_log_cap, heap: BinaryHeap::new() }
        } else {
            LogAccumulator::Empty
        }
    }

    fn push(&mut self, priority: u64, record: EventRecord) {
        match self {
            LogAccumulator::Empty => {}
            LogAccumulator::Full(v) => v.push(record),
            LogAccumulator::Reservoir { cap, heap } => {
                heap.push(Reserved { priority, record });
                if heap.len() > *cap {
                    heap.pop();
                }
            }
        }
    }

    /// `self` holds earlier trials than `other`.
    fn merge(self, other: Self) -> Self {
        match (self, other) {
            (LogAccumulator::Empty, x) | (x, LogAccumulator::Empty) => x,
            (LogAccumulator::Full(mut a), LogAccumulator::Full(b)) => {
                a.extend(b);
                LogAccumulator::Full(a)
            }
            (LogAccumulator::Reservoir { cap, mut heap }, LogAccumulator::Reservoir { heap: other, .. }) => {
                for r in other {
                    heap.push(r);
                    if heap.len() > cap {
                        heap.pop();
                    }
                }
                LogAccumulator::Reservoir { cap, heap }
            }
            (a, _) => a,
        }
    }

    fn finish(self) -> (Vec<EventRecord>, bool) {
        match self {
            LogAccumulator::Empty => (Vec::new(), false),
            LogAccumulator::Full(v) => (v, true),
            LogAccumulator::Reservoir { heap, .. } => {
                let mut v: Vec<EventRecord> = heap.into_iter().map(|r| r.record).collect();
                v.sort_by_key(|r| r.trial_id);
                (v, false)
            }
        }
    }
}

impl Tally {
    fn new(z: usize, options: &RunOptions) -> Self {
        Self { counts: vec![0; z], qualifying: vec![0; z], log: LogAccumulator::new(options), ..Default::default() }
    }

    fn merge(mut self, other: Tally) -> Tally {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.qualifying.iter_mut().zip(&other.qualifying) {
            *a += b;
        }
        self.miss += other.miss;
        self.no_signal.no_reaction += other.no_signal.no_reaction;
        self.no_signal.below_threshold += other.no_signal.below_threshold;
        self.no_signal.dead_channel += other.no_signal.dead_channel;
        self.no_signal.discriminator_reject += other.no_signal.discriminator_reject;
        self.exclusivity_violations += other.exclusivity_violations;
        self.misattributed += other.misattributed;
        self.log = std::mem::take(&mut self.log).merge(other.log);
        self.pulses.extend(other.pulses);
        self
    }
}

struct Prepared<'a> {
    exp: &'a Experiment,
    sampler: ArrivalSampler,
    streams: TrialStreams,
    idle_signal: f64,
}

impl Prepared<'_> {
    fn run_trial(&self, trial_id: u64, tally: &mut Tally) {
        let exp = self.exp;
        let z = exp.detectors.len();
        let disc = &exp.readout.discriminator;
        let mut rng = self.streams.stream(trial_id);
        let arrival = self.sampler.sample(&mut rng);
        let mut record = EventRecord {
            trial_id,
            arrival,
            start: None,
            dead_channel: false,
            avalanche: None,
            logical_outputs: vec![self.idle_signal; z],
        };
        match arrival {
            ArrivalOutcome::Miss => tally.miss += 1,
            ArrivalOutcome::Hit { detector_index } => {
                let slot = detector_index - 1;
                let detector = &exp.detectors[slot];
                let response = respond(&exp.source.particle, detector, &exp.readout, &mut rng);
                if let Some(e) = response.start.deposited_energy() {
                    if check_threshold(e, detector.threshold_energy) {
                        tally.qualifying[slot] += 1;
                    }
                }
                record.start = Some(response.start);
                record.dead_channel = response.dead_channel;
                record.avalanche = response.avalanche;
                record.logical_outputs[slot] = response.signal;
                match response.class {
                    ResponseClass::NoReaction => tally.no_signal.no_reaction += 1,
                    ResponseClass::BelowThreshold => tally.no_signal.below_threshold += 1,
                    ResponseClass::DeadChannel => tally.no_signal.dead_channel += 1,
                    ResponseClass::DiscriminatorReject => tally.no_signal.discriminator_reject += 1,
                    ResponseClass::Counted => {}
                }
                if let Some(trace) = response.trace {
                    if exp.options.dump_pulses.contains(&trial_id) {
                        tally.pulses.insert(trial_id, trace);
                    }
                }
            }
        }
        // Counting reads the logical outputs, not the trial's internal state.
        let mut highs = 0;
        for n in record.high_detectors(disc) {
            highs += 1;
            tally.counts[n - 1] += 1;
            let reacted = matches!(record.arrival, ArrivalOutcome::Hit { detector_index } if detector_index == n)
                && matches!(record.start, Some(StartReactionOutcome::Occurred { .. }));
            if !reacted {
                tally.misattributed += 1;
            }
        }
        if highs > 1 {
            tally.exclusivity_violations += 1;
        }
        let priority = self.streams.priority(trial_id);
        tally.log.push(priority, record);
    }

    fn run_block(&self, block: u64, emitted: u64) -> Tally {
        let mut tally = Tally::new(self.exp.detectors.len(), &self.exp.options);
        let start = block * BLOCK_SIZE;
        let end = (start + BLOCK_SIZE).min(emitted);
        for trial_id in start..end {
            self.run_trial(trial_id, &mut tally);
        }
        tally
    }
}

/// Emits `emitted` particles from the source into the array under master `seed`.
pub fn run_experiment(exp: &Experiment, emitted: u64, seed: u64) -> Result<RunOutput, ExperimentError> {
    if emitted == 0 {
        return Err(ExperimentError::NoEvents);
    }
    let windows = exp.windows();
    let prepared = Prepared {
        exp,
        sampler: ArrivalSampler::new(&exp.source.wavefunction, &windows),
        streams: TrialStreams::new(seed),
        idle_signal: discriminate(&exp.readout.shaper.shape(0.0), &exp.readout.discriminator),
    };
    let blocks = emitted.div_ceil(BLOCK_SIZE);
    let z = exp.detectors.len();
    let empty = || Tally::new(z, &exp.options);
    let tally = if exp.options.workers == 1 {
        (0..blocks).map(|b| prepared.run_block(b, emitted)).fold(empty(), Tally::merge)
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(exp.options.workers)
            .build()
            .map_err(|e| ExperimentError::ThreadPool(e.to_string()))?;
        pool.install(|| (0..blocks).into_par_iter().map(|b| prepared.run_block(b, emitted)).reduce(empty, Tally::merge))
    };

    let window_probs = exp.window_probabilities();
    let theoretical = exp.theoretical_probabilities();
    let n = emitted as f64;
    let detectors: Vec<DetectorRow> = exp
        .detectors
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let p = theoretical[i];
            DetectorRow {
                detector_index: d.index(),
                center: d.window.center,
                width: d.window.width,
                counts: tally.counts[i],
                empirical_prob: tally.counts[i] as f64 / n,
                window_prob: window_probs[i],
                start_prob: start_reaction_probability(&exp.source.particle, d),
                theoretical_prob: p,
                stderr: (p * (1.0 - p) / n).sqrt(),
                qualifying_reactions: tally.qualifying[i],
            }
        })
        .collect();
    let residual_prob = (1.0 - theoretical.iter().sum::<f64>()).max(0.0);
    let no_signal_count = tally.no_signal.total();
    let (chi_square, chi_square_dof) =
        pearson_chi_square(&detectors, tally.miss + no_signal_count, residual_prob, emitted);
    let report = ExperimentReport {
        emitted,
        seed,
        detectors,
        miss_count: tally.miss,
        no_signal_count,
        no_signal: tally.no_signal,
        exclusivity_violations: tally.exclusivity_violations,
        misattributed_signals: tally.misattributed,
        residual_prob,
        chi_square,
        chi_square_dof,
        chi_square_quantile: exp.options.chi_square_quantile,
    };
    let (records, complete) = tally.log.finish();
    Ok(RunOutput {
        report,
        event_log: EventLog { records, complete, discriminator: exp.readout.discriminator },
        pulses: tally.pulses,
    })
}

/// Pearson statistic over the non-degenerate detectors plus the uncounted
/// residual category. Returns the statistic and its degrees of freedom.
fn pearson_chi_square(rows: &[DetectorRow], uncounted: u64, residual_prob: f64, emitted: u64) -> (f64, usize) {
    let n = emitted as f64;
    let mut categories = 0usize;
    let mut chi = 0.0;
    let mut add = |observed: f64, p: f64| {
        let expected = n * p;
        chi += (observed - expected).powi(2) / expected;
        categories += 1;
    };
    for r in rows {
        if !is_degenerate(r.theoretical_prob) {
            add(r.counts as f64, r.theoretical_prob);
        }
    }
    if residual_prob > RESIDUAL_EPS && residual_prob < 1.0 {
        add(uncounted as f64, residual_prob);
    }
    (chi, categories.saturating_sub(1))
}

/// Agreement of one detector's empirical and predicted firing probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DetectorAgreement {
    /// `(empirical - theoretical) / stderr`.
    ZScore(f64),
    /// Predicted probability is 0 or 1; counts must match exactly.
    Exact { expected: u64, observed: u64 },
}

impl DetectorAgreement {
    pub fn passes(&self) -> bool {
        match *self {
            DetectorAgreement::ZScore(z) => z.abs() <= Z_TOLERANCE,
            DetectorAgreement::Exact { expected, observed } => expected == observed,
        }
    }

    pub fn z(&self) -> Option<f64> {
        match *self {
            DetectorAgreement::ZScore(z) => Some(z),
            DetectorAgreement::Exact { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BornAgreement {
    pub per_detector: Vec<DetectorAgreement>,
    pub chi_square: f64,
    pub dof: usize,
    /// Quantile of chi-square(dof) the statistic must stay below; 0 when dof = 0.
    pub critical_value: f64,
    /// Indices handled by exact matching because their stderr is zero.
    pub degenerate: Vec<usize>,
    /// Uncounted trials are consistent with the residual probability.
    pub residual_ok: bool,
    pub pass: bool,
}

impl BornAgreement {
    pub fn max_abs_z(&self) -> f64 {
        self.per_detector.iter().filter_map(|a| a.z()).map(f64::abs).fold(0.0, f64::max)
    }
}

/// Per-detector z-scores and the chi-square test of empirical against predicted probabilities.
pub fn verify_born_agreement(report: &ExperimentReport) -> BornAgreement {
    let n = report.emitted as f64;
    let mut degenerate = Vec::new();
    let per_detector: Vec<DetectorAgreement> = report
        .detectors
        .iter()
        .map(|r| {
            let p = r.theoretical_prob;
            if is_degenerate(p) {
                degenerate.push(r.detector_index);
                DetectorAgreement::Exact { expected: (p.clamp(0.0, 1.0) * n).round() as u64, observed: r.counts }
            } else {
                DetectorAgreement::ZScore((r.empirical_prob - p) / r.stderr)
            }
        })
        .collect();
    let uncounted = report.miss_count + report.no_signal_count;
    let residual_ok = report.residual_prob > RESIDUAL_EPS || uncounted == 0;
    let critical_value = if report.chi_square_dof > 0 {
        ChiSquared::new(report.chi_square_dof as f64)
            .map(|c| c.inverse_cdf(report.chi_square_quantile))
            .unwrap_or(f64::INFINITY)
    } else {
        0.0
    };
    let chi_ok = report.chi_square_dof == 0 || report.chi_square < critical_value;
    let pass = per_detector.iter().all(DetectorAgreement::passes) && chi_ok && residual_ok;
    BornAgreement {
        per_detector,
        chi_square: report.chi_square,
        dof: report.chi_square_dof,
        critical_value,
        degenerate,
        residual_ok,
        pass,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OneToOneReport {
    pub holds: bool,
    /// Per detector: start reactions depositing more than E_thr.
    pub reactions: Vec<u64>,
    /// Per detector: logic-high outputs.
    pub signals: Vec<u64>,
    /// Detectors where the two counts differ or a signal lacks its own start reaction.
    pub mismatched: Vec<usize>,
}

/// Checks that start reactions passing the energy threshold and logic-high
/// outputs correspond one to one, detector by detector.
///
/// Reactions in an inoperable detector still count as reactions, so a dead
/// channel shows up as a mismatch at its index.
pub fn verify_one_to_one(log: &EventLog, detectors: &[DetectorSpec]) -> Result<OneToOneReport, ExperimentError> {
    if !log.complete {
        return Err(ExperimentError::SampledLog);
    }
    let z = detectors.len();
    let mut reactions = vec![0u64; z];
    let mut signals = vec![0u64; z];
    let mut misattributed = BTreeSet::new();
    for r in &log.records {
        if let (ArrivalOutcome::Hit { detector_index }, Some(StartReactionOutcome::Occurred { deposited_energy, .. })) =
            (r.arrival, r.start)
        {
            if let Some(d) = detectors.get(detector_index - 1) {
                if check_threshold(deposited_energy, d.threshold_energy) {
                    reactions[detector_index - 1] += 1;
                }
            }
        }
        for n in r.high_detectors(&log.discriminator) {
            if n > z {
                misattributed.insert(n);
                continue;
            }
            signals[n - 1] += 1;
            let own = r.arrival == ArrivalOutcome::Hit { detector_index: n }
                && matches!(r.start, Some(StartReactionOutcome::Occurred { .. }));
            if !own {
                misattributed.insert(n);
            }
        }
    }
    let mut mismatched: BTreeSet<usize> = (0..z).filter(|&i| reactions[i] != signals[i]).map(|i| i + 1).collect();
    mismatched.extend(misattributed);
    let mismatched: Vec<usize> = mismatched.into_iter().collect();
    Ok(OneToOneReport { holds: mismatched.is_empty(), reactions, signals, mismatched })
}

/// Trial ids whose record has more than one logic-high output.
pub fn exclusivity_violations(log: &EventLog) -> Vec<u64> {
    log.records.iter().filter(|r| r.high_detectors(&log.discriminator).count() > 1).map(|r| r.trial_id).collect()
}

/// Formats with 12 significant digits.
pub fn fmt_sig(x: f64) -> String {
    format!("{x:.11e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::amplification::AmplifierModel;
    use crate::detector::Material;
    use crate::quantum_source::GridSpec;
    use crate::readout::{PulseShaper, Shaping};

    fn readout(threshold: f64) -> ReadoutChain {
        let shaper =
            PulseShaper::new(Shaping { amplitude_per_coulomb: 1e14, rise_time: 5e-9, decay_time: 50e-9 }, 2e-9, 100e-9)
                .unwrap();
        ReadoutChain::new(shaper, DiscriminatorSpec::with_threshold(threshold).unwrap(), 0.0).unwrap()
    }

    fn chamber(lo: f64, hi: f64, index: usize, operable: bool) -> DetectorSpec {
        DetectorSpec::new(
            EntranceWindow::spanning(lo, hi, index).unwrap(),
            Material::ChargedStopper { w_value: 26.0 },
            1e4,
            AmplifierModel::GasGain { w_value: 26.0, gain: 100.0 },
            operable,
        )
        .unwrap()
    }

    fn proton(energy: f64) -> Particle {
        Particle::charged(1, energy, 938.272e6).unwrap()
    }

    fn gaussian_source(energy: f64) -> Source {
        let wf = Wavefunction::gaussian(&GridSpec { min: -6.0, max: 6.0, points: 601 }, 0.0, 1.0).unwrap();
        Source { wavefunction: wf, particle: proton(energy) }
    }

    fn four_chambers(dead: Option<usize>) -> Vec<DetectorSpec> {
        let edges = [-6.01, -1.0, 0.0, 1.0, 6.01];
        (0..4).map(|i| chamber(edges[i], edges[i + 1], i + 1, dead != Some(i + 1))).collect()
    }

    fn options(retain: bool) -> RunOptions {
        RunOptions { retain_event_log: retain, ..Default::default() }
    }

    #[test]
    fn single_covering_detector_counts_everything() {
        let exp =
            Experiment::new(gaussian_source(1e5), vec![chamber(-6.01, 6.01, 1, true)], readout(0.1), options(false))
                .unwrap();
        let out = run_experiment(&exp, 20_000, 1).unwrap();
        let r = &out.report;
        assert_eq!(r.detectors[0].counts, 20_000);
        assert_eq!(r.detectors[0].empirical_prob, 1.0);
        assert!(r.is_conserved());
        let agreement = verify_born_agreement(r);
        assert!(agreement.pass);
        assert_eq!(agreement.degenerate, vec![1]);
    }

    #[test]
    fn below_threshold_is_silent() {
        let exp = Experiment::new(gaussian_source(5e3), four_chambers(None), readout(0.1), options(false)).unwrap();
        let out = run_experiment(&exp, 20_000, 2).unwrap();
        let r = &out.report;
        assert_eq!(r.total_counts(), 0);
        assert_eq!(r.no_signal_count, 20_000);
        assert_eq!(r.no_signal.below_threshold, 20_000);
        assert!(r.is_conserved());
    }

    #[test]
    fn one_to_one_holds_and_dead_channel_is_located() {
        let exp = Experiment::new(gaussian_source(1e5), four_chambers(None), readout(0.1), options(true)).unwrap();
        let out = run_experiment(&exp, 20_000, 3).unwrap();
        let check = verify_one_to_one(&out.event_log, exp.detectors()).unwrap();
        assert!(check.holds, "{check:?}");

        let exp = Experiment::new(gaussian_source(1e5), four_chambers(Some(3)), readout(0.1), options(true)).unwrap();
        let out = run_experiment(&exp, 20_000, 3).unwrap();
        let check = verify_one_to_one(&out.event_log, exp.detectors()).unwrap();
        assert!(!check.holds);
        assert_eq!(check.mismatched, vec![3]);
        assert!(out.report.is_conserved());
        assert!(out.report.no_signal.dead_channel > 0);
    }

    #[test]
    fn empty_log_is_one_to_one() {
        let log = EventLog {
            records: vec![],
            complete: true,
            discriminator: DiscriminatorSpec::with_threshold(0.1).unwrap(),
        };
        assert!(verify_one_to_one(&log, &four_chambers(None)).unwrap().holds);
    }

    #[test]
    fn sampled_log_refused() {
        let exp = Experiment::new(gaussian_source(1e5), four_chambers(None), readout(0.1), options(false)).unwrap();
        let out = run_experiment(&exp, 10_000, 4).unwrap();
        assert!(!out.event_log.complete);
        assert_eq!(out.event_log.records.len(), DEFAULT_EVENT_LOG_CAP);
        assert_eq!(verify_one_to_one(&out.event_log, exp.detectors()), Err(ExperimentError::SampledLog));
    }

    #[test]
    fn reservoir_is_worker_independent() {
        let mut exp = Experiment::new(gaussian_source(1e5), four_chambers(None), readout(0.1), options(false)).unwrap();
        let serial = run_experiment(&exp, 30_000, 5).unwrap();
        exp.options_mut().workers = 4;
        let parallel = run_experiment(&exp, 30_000, 5).unwrap();
        assert_eq!(serial.report, parallel.report);
        assert_eq!(serial.event_log, parallel.event_log);
    }

    #[test]
    fn exact_agreement_passes_and_corruption_fails() {
        let exp = Experiment::new(gaussian_source(1e5), four_chambers(None), readout(0.1), options(false)).unwrap();
        let mut report = run_experiment(&exp, 100_000, 6).unwrap().report;
        let n = report.emitted as f64;
        for r in &mut report.detectors {
            r.empirical_prob = r.theoretical_prob;
        }
        let exact = ExperimentReport { chi_square: 0.0, ..report.clone() };
        let a = verify_born_agreement(&exact);
        assert!(a.pass);
        assert!(a.per_detector.iter().all(|d| d.z() == Some(0.0)));

        let mut corrupted = report.clone();
        let row = &mut corrupted.detectors[1];
        let bump = (10.0 * row.stderr * n).ceil() as u64;
        row.counts = (row.theoretical_prob * n).round() as u64 + bump;
        row.empirical_prob = row.counts as f64 / n;
        let a = verify_born_agreement(&corrupted);
        assert!(!a.pass);
        assert!(a.per_detector[1].z().unwrap() >= 10.0);
    }

    #[test]
    fn incompatible_particle_rejected() {
        let src = Source { particle: Particle::neutron(0.025).unwrap(), ..gaussian_source(1e5) };
        assert_eq!(
            Experiment::new(src, four_chambers(None), readout(0.1), options(false)).err(),
            Some(ExperimentError::ConfigMismatch)
        );
    }

    #[test]
    fn overlapping_array_rejected() {
        let dets = vec![chamber(-1.0, 0.5, 1, true), chamber(0.0, 1.0, 2, true)];
        assert!(matches!(
            Experiment::new(gaussian_source(1e5), dets, readout(0.1), options(false)),
            Err(ExperimentError::Windows(SourceError::Overlap { first: 1, second: 2 }))
        ));
    }

    #[test]
    fn pulses_dumped_for_requested_trials() {
        let opts = RunOptions { dump_pulses: [0u64, 5, 7].into_iter().collect(), ..options(false) };
        let exp = Experiment::new(gaussian_source(1e5), four_chambers(None), readout(0.1), opts).unwrap();
        let out = run_experiment(&exp, 100, 8).unwrap();
        assert_eq!(out.pulses.keys().copied().collect::<Vec<_>>(), vec![0, 5, 7]);
        assert!(out.pulses.values().all(|t| t.peak() > 0.1));
    }

    #[test]
    fn event_row_format() {
        let r = EventRecord {
            trial_id: 3,
            arrival: ArrivalOutcome::Hit { detector_index: 2 },
            start: Some(StartReactionOutcome::NoReaction),
            dead_channel: false,
            avalanche: None,
            logical_outputs: vec![0.0, 0.0],
        };
        assert_eq!(r.to_row(), "3,hit:2,none,,false,,,0;0");
    }
}
