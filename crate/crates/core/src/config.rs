//! Run configuration: TOML schema, defaults, and validation.
//!
//! Parsing failures (syntax, wrong types, missing fields) are [`ConfigError::Parse`];
//! semantic violations are collected with their field paths into
//! [`ConfigError::Validation`].

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::amplification::{AmplifierModel, ELEMENTARY_CHARGE};
use crate::detector::{DetectorSpec, Material, Particle, DEFAULT_BORON10_FRACTION};
use crate::experiment::{Experiment, RunOptions, Source, DEFAULT_CHI_SQUARE_QUANTILE, DEFAULT_EVENT_LOG_CAP};
use crate::quantum_source::{EntranceWindow, GridSpec, Wavefunction};
use crate::readout::{DiscriminatorSpec, PulseShaper, ReadoutChain, Shaping, DEFAULT_LOGIC_HIGH, DEFAULT_LOGIC_LOW};
use crate::sterngerlach::{pass_magnet, SpinorPacket, SternGerlachApparatus};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub reason: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration:\n{}", list(.0))]
    Validation(Vec<Violation>),
}

fn list(v: &[Violation]) -> String {
    v.iter().map(|x| format!("  {x}")).collect::<Vec<_>>().join("\n")
}

// ---- file schema ----------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    /// N_s, the number of emitted particles.
    pub events: u64,
    pub seed: u64,
    pub workers: Option<usize>,
    pub chi_square_quantile: Option<f64>,
    pub source: RawSource,
    pub readout: RawReadout,
    pub discriminator: RawDiscriminator,
    #[serde(default)]
    pub detectors: Vec<RawDetector>,
    pub output: Option<RawOutput>,
    pub stern_gerlach: Option<RawSternGerlach>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSource {
    /// Required for analytic forms; ignored by `table`.
    pub grid: Option<GridSpec>,
    pub wavefunction: RawWavefunction,
    pub particle: RawParticle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum RawWavefunction {
    Gaussian {
        mean: f64,
        sigma: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// `weights` are `[re, im]` pairs.
    TwoGaussian {
        means: Vec<f64>,
        sigmas: Vec<f64>,
        weights: Vec<[f64; 2]>,
    },
    /// `(position, re, im)` rows on a uniform grid.
    Table {
        rows: Vec<[f64; 3]>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RawParticle {
    Charged { charge_sign: i8, kinetic_energy_ev: f64, rest_mass_energy_ev: f64 },
    Neutron { kinetic_energy_ev: f64 },
    Photon { energy_ev: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawReadout {
    pub amplitude_per_coulomb: f64,
    pub rise_time_s: f64,
    pub decay_time_s: f64,
    pub dt_s: f64,
    pub duration_s: f64,
    pub noise_sigma_v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDiscriminator {
    pub threshold_v: f64,
    /// Default 1 V, the logical output level of the reference set-up.
    pub logic_high_v: Option<f64>,
    /// Default 0 V, the ground state of the discriminator outputs.
    pub logic_low_v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawDetector {
    pub center_m: f64,
    pub width_m: f64,
    pub threshold_energy_ev: f64,
    pub operable: Option<bool>,
    pub material: RawMaterial,
    pub amplifier: RawAmplifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RawMaterial {
    Bf3Gas {
        /// Default 0.96: BF3 enriched to 96 % 10B.
        boron10_fraction: Option<f64>,
        opacity: f64,
        q_value_ev: f64,
    },
    Photocathode {
        quantum_efficiency: f64,
        work_function_ev: f64,
    },
    ChargedStopper {
        w_value_ev: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RawAmplifier {
    DynodeChain { stage_means: Vec<f64> },
    GasGain { w_value_ev: f64, gain: f64 },
    Semiconductor { pair_energy_ev: f64, collection_efficiency: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawOutput {
    pub dir: Option<PathBuf>,
    pub retain_event_log: Option<bool>,
    pub event_log_cap: Option<usize>,
    pub dump_pulses: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSternGerlach {
    pub alpha_re: f64,
    pub alpha_im: f64,
    pub beta_re: f64,
    pub beta_im: f64,
    pub separation_m: f64,
    pub up_detector: RawDetector,
    pub down_detector: RawDetector,
}

// ---- validated configuration ----------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub retain_event_log: bool,
    pub event_log_cap: usize,
    pub dump_pulses: BTreeSet<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SternGerlachConfig {
    pub alpha: Complex64,
    pub beta: Complex64,
    pub separation: f64,
    pub up_detector: DetectorSpec,
    pub down_detector: DetectorSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub events: u64,
    pub seed: u64,
    pub workers: usize,
    pub chi_square_quantile: f64,
    pub source: Source,
    pub detectors: Vec<DetectorSpec>,
    pub readout: ReadoutChain,
    pub output: OutputConfig,
    pub stern_gerlach: Option<SternGerlachConfig>,
    /// Non-fatal findings, e.g. energy and voltage thresholds that disagree.
    pub warnings: Vec<String>,
    /// The file contents with every default filled in.
    pub normalized: RawConfig,
}

/// Reads, parses, and validates a TOML run configuration.
pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    validate(raw)
}

impl RunConfig {
    /// Normalized TOML; loading it yields an equal configuration.
    pub fn to_toml(&self) -> Result<String, toml::ser::Error> {
        toml::to_string(&self.normalized)
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            workers: self.workers,
            retain_event_log: self.output.retain_event_log,
            event_log_cap: self.output.event_log_cap,
            dump_pulses: self.output.dump_pulses.clone(),
            chi_square_quantile: self.chi_square_quantile,
        }
    }

    pub fn experiment(&self) -> Result<Experiment, crate::experiment::ExperimentError> {
        Experiment::new(self.source.clone(), self.detectors.clone(), self.readout.clone(), self.run_options())
    }

    /// Apparatus and magnet output for the `stern_gerlach` block, if present.
    pub fn stern_gerlach(
        &self,
    ) -> Option<Result<(SternGerlachApparatus, SpinorPacket), crate::sterngerlach::SternGerlachError>> {
        let sg = self.stern_gerlach.as_ref()?;
        Some((|| {
            let app = SternGerlachApparatus::new(
                self.source.wavefunction.clone(),
                sg.separation,
                self.source.particle,
                sg.up_detector.clone(),
                sg.down_detector.clone(),
                self.readout.clone(),
            )?;
            let state = pass_magnet(sg.alpha, sg.beta, &self.source.wavefunction, sg.separation)?;
            Ok((app, state))
        })())
    }
}

struct Collector(Vec<Violation>);

impl Collector {
    fn push(&mut self, path: impl Into<String>, reason: impl fmt::Display) {
        self.0.push(Violation { path: path.into(), reason: reason.to_string() });
    }

    fn check<T, E: fmt::Display>(&mut self, path: &str, r: Result<T, E>) -> Option<T> {
        match r {
            Ok(v) => Some(v),
            Err(e) => {
                self.push(path, e);
                None
            }
        }
    }
}

fn normalize_raw(mut raw: RawConfig) -> RawConfig {
    raw.workers.get_or_insert(1);
    raw.chi_square_quantile.get_or_insert(DEFAULT_CHI_SQUARE_QUANTILE);
    raw.readout.noise_sigma_v.get_or_insert(0.0);
    raw.discriminator.logic_high_v.get_or_insert(DEFAULT_LOGIC_HIGH);
    raw.discriminator.logic_low_v.get_or_insert(DEFAULT_LOGIC_LOW);
    let fill = |d: &mut RawDetector| {
        d.operable.get_or_insert(true);
        if let RawMaterial::Bf3Gas { boron10_fraction, .. } = &mut d.material {
            boron10_fraction.get_or_insert(DEFAULT_BORON10_FRACTION);
        }
    };
    raw.detectors.iter_mut().for_each(fill);
    if let Some(sg) = &mut raw.stern_gerlach {
        fill(&mut sg.up_detector);
        fill(&mut sg.down_detector);
    }
    let out = raw.output.get_or_insert(RawOutput {
        dir: None,
        retain_event_log: None,
        event_log_cap: None,
        dump_pulses: None,
    });
    out.dir.get_or_insert_with(|| PathBuf::from("out"));
    out.retain_event_log.get_or_insert(false);
    out.event_log_cap.get_or_insert(DEFAULT_EVENT_LOG_CAP);
    let dumps = out.dump_pulses.get_or_insert_with(Vec::new);
    dumps.sort_unstable();
    dumps.dedup();
    raw
}

fn build_wavefunction(src: &RawSource, c: &mut Collector) -> Option<Wavefunction> {
    let path = "source.wavefunction";
    let grid = || -> Result<GridSpec, String> { src.grid.ok_or_else(|| "analytic forms need source.grid".into()) };
    let built = match &src.wavefunction {
        RawWavefunction::Table { rows } => Wavefunction::from_table(rows).map_err(|e| e.to_string()),
        form => {
            let g = match grid() {
                Ok(g) => g,
                Err(e) => {
                    c.push("source.grid", e);
                    return None;
                }
            };
            if let Err(e) = g.step() {
                c.push("source.grid", e);
                return None;
            }
            match form {
                RawWavefunction::Gaussian { mean, sigma } => Wavefunction::gaussian(&g, *mean, *sigma),
                RawWavefunction::Uniform { lo, hi } => Wavefunction::uniform(&g, *lo, *hi),
                RawWavefunction::TwoGaussian { means, sigmas, weights } => {
                    let w: Vec<Complex64> = weights.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
                    Wavefunction::gaussian_superposition(&g, means, sigmas, &w)
                }
                RawWavefunction::Table { .. } => unreachable!(),
            }
            .map_err(|e| e.to_string())
        }
    };
    c.check(path, built)
}

fn build_particle(p: &RawParticle, c: &mut Collector) -> Option<Particle> {
    let r = match *p {
        RawParticle::Charged { charge_sign, kinetic_energy_ev, rest_mass_energy_ev } => {
            Particle::charged(charge_sign, kinetic_energy_ev, rest_mass_energy_ev)
        }
        RawParticle::Neutron { kinetic_energy_ev } => Particle::neutron(kinetic_energy_ev),
        RawParticle::Photon { energy_ev } => Particle::photon(energy_ev),
    };
    c.check("source.particle", r)
}

fn build_detector(d: &RawDetector, index: usize, path: &str, c: &mut Collector) -> Option<DetectorSpec> {
    let window = c.check(&format!("{path}.width_m"), EntranceWindow::new(d.center_m, d.width_m, index));
    if !(d.threshold_energy_ev >= 0.0) {
        c.push(format!("{path}.threshold_energy_ev"), format!("must be >= 0, got {}", d.threshold_energy_ev));
    }
    let material = match d.material {
        RawMaterial::Bf3Gas { boron10_fraction, opacity, q_value_ev } => Material::Bf3Gas {
            boron10_fraction: boron10_fraction.unwrap_or(DEFAULT_BORON10_FRACTION),
            opacity,
            q_value: q_value_ev,
        },
        RawMaterial::Photocathode { quantum_efficiency, work_function_ev } => {
            Material::Photocathode { quantum_efficiency, work_function: work_function_ev }
        }
        RawMaterial::ChargedStopper { w_value_ev } => Material::ChargedStopper { w_value: w_value_ev },
    };
    let amplifier = match &d.amplifier {
        RawAmplifier::DynodeChain { stage_means } => AmplifierModel::DynodeChain { stage_means: stage_means.clone() },
        RawAmplifier::GasGain { w_value_ev, gain } => AmplifierModel::GasGain { w_value: *w_value_ev, gain: *gain },
        RawAmplifier::Semiconductor { pair_energy_ev, collection_efficiency } => AmplifierModel::Semiconductor {
            pair_energy: *pair_energy_ev,
            collection_efficiency: *collection_efficiency,
        },
    };
    let window = window?;
    if !(d.threshold_energy_ev >= 0.0) {
        return None;
    }
    c.check(path, DetectorSpec::new(window, material, d.threshold_energy_ev, amplifier, d.operable.unwrap_or(true)))
}

fn validate(raw: RawConfig) -> Result<RunConfig, ConfigError> {
    let raw = normalize_raw(raw);
    let mut c = Collector(Vec::new());

    if raw.events < 1 {
        c.push("events", "must be >= 1");
    }
    let workers = raw.workers.unwrap_or(1);
    if workers < 1 {
        c.push("workers", "must be >= 1");
    }
    let quantile = raw.chi_square_quantile.unwrap_or(DEFAULT_CHI_SQUARE_QUANTILE);
    if !(quantile > 0.0 && quantile < 1.0) {
        c.push("chi_square_quantile", format!("must lie in (0, 1), got {quantile}"));
    }

    let wavefunction = build_wavefunction(&raw.source, &mut c);
    let particle = build_particle(&raw.source.particle, &mut c);

    let r = &raw.readout;
    let shaping = Shaping {
        amplitude_per_coulomb: r.amplitude_per_coulomb,
        rise_time: r.rise_time_s,
        decay_time: r.decay_time_s,
    };
    let shaper = c.check("readout", PulseShaper::new(shaping, r.dt_s, r.duration_s));
    let d = &raw.discriminator;
    let disc = c.check(
        "discriminator",
        DiscriminatorSpec::new(
            d.threshold_v,
            d.logic_high_v.unwrap_or(DEFAULT_LOGIC_HIGH),
            d.logic_low_v.unwrap_or(DEFAULT_LOGIC_LOW),
        ),
    );
    let readout = match (shaper, disc) {
        (Some(s), Some(d)) => c.check("readout.noise_sigma_v", ReadoutChain::new(s, d, r.noise_sigma_v.unwrap_or(0.0))),
        _ => None,
    };

    let detectors: Vec<Option<DetectorSpec>> = raw
        .detectors
        .iter()
        .enumerate()
        .map(|(i, d)| build_detector(d, i + 1, &format!("detectors[{i}]"), &mut c))
        .collect();
    let windows: Vec<(usize, f64, f64)> = raw
        .detectors
        .iter()
        .enumerate()
        .map(|(i, d)| (i + 1, d.center_m - 0.5 * d.width_m, d.center_m + 0.5 * d.width_m))
        .collect();
    for (a, b) in raw.detectors.iter().enumerate().zip(raw.detectors.iter().enumerate().skip(1)) {
        if b.1.center_m < a.1.center_m {
            c.push(
                format!("detectors[{}]", b.0),
                format!("detectors must be sorted by center_m (detector {} precedes detector {})", a.0 + 1, b.0 + 1),
            );
        }
    }
    for (i, &(ia, alo, ahi)) in windows.iter().enumerate() {
        for &(ib, blo, bhi) in &windows[i + 1..] {
            if alo < bhi && blo < ahi {
                c.push("detectors", format!("windows of detectors {ia} and {ib} overlap"));
            }
        }
    }
    if let Some(p) = particle {
        let built: Vec<&DetectorSpec> = detectors.iter().flatten().collect();
        if !built.is_empty() && built.len() == detectors.len() && !built.iter().any(|d| p.compatible_with(&d.material))
        {
            c.push("source.particle", "particle kind is incompatible with every detector material");
        }
    }

    let stern_gerlach = raw.stern_gerlach.as_ref().and_then(|sg| {
        let up = build_detector(&sg.up_detector, 1, "stern_gerlach.up_detector", &mut c);
        let down = build_detector(&sg.down_detector, 2, "stern_gerlach.down_detector", &mut c);
        let alpha = Complex64::new(sg.alpha_re, sg.alpha_im);
        let beta = Complex64::new(sg.beta_re, sg.beta_im);
        let norm = alpha.norm_sqr() + beta.norm_sqr();
        if (norm - 1.0).abs() > 1e-9 {
            c.push("stern_gerlach", format!("|alpha|^2 + |beta|^2 = {norm}, expected 1"));
        }
        if !(sg.separation_m > 0.0) {
            c.push("stern_gerlach.separation_m", "must be > 0");
        }
        Some(SternGerlachConfig { alpha, beta, separation: sg.separation_m, up_detector: up?, down_detector: down? })
    });
    if let (Some(sg), Some(wf)) = (&stern_gerlach, &wavefunction) {
        if let Ok(state) = pass_magnet(sg.alpha, sg.beta, wf, sg.separation) {
            let up = crate::quantum_source::window_probability(&state.up_packet, &sg.up_detector.window);
            let down = crate::quantum_source::window_probability(&state.down_packet, &sg.down_detector.window);
            if up < crate::sterngerlach::CALIBRATION_CAPTURE || down < crate::sterngerlach::CALIBRATION_CAPTURE {
                c.push("stern_gerlach", format!("apparatus miscalibrated: branch capture up {up}, down {down}"));
            }
        }
    }

    if !c.0.is_empty() {
        return Err(ConfigError::Validation(c.0));
    }
    let (Some(wavefunction), Some(particle), Some(readout)) = (wavefunction, particle, readout) else {
        unreachable!("every missing piece records a violation");
    };
    let detectors: Vec<DetectorSpec> = detectors.into_iter().flatten().collect();
    let mut warnings = Vec::new();
    for d in &detectors {
        warnings.extend(threshold_consistency(d, &particle, &readout));
    }
    if let Some(sg) = &stern_gerlach {
        for d in [&sg.up_detector, &sg.down_detector] {
            warnings.extend(threshold_consistency(d, &particle, &readout));
        }
    }
    let out = raw.output.clone().unwrap_or_else(|| unreachable!());
    Ok(RunConfig {
        events: raw.events,
        seed: raw.seed,
        workers,
        chi_square_quantile: quantile,
        source: Source { wavefunction, particle },
        detectors,
        readout,
        output: OutputConfig {
            dir: out.dir.unwrap_or_default(),
            retain_event_log: out.retain_event_log.unwrap_or(false),
            event_log_cap: out.event_log_cap.unwrap_or(DEFAULT_EVENT_LOG_CAP),
            dump_pulses: out.dump_pulses.unwrap_or_default().into_iter().collect(),
        },
        stern_gerlach,
        warnings,
        normalized: raw,
    })
}

/// Mean sampled pulse peak (V) for a deposit of `e_dep` eV in `d`.
pub fn expected_peak(d: &DetectorSpec, e_dep: f64, readout: &ReadoutChain) -> f64 {
    let carriers = d.amplifier.mean_primaries(e_dep) * d.amplifier.mean_multiplication();
    readout.shaper.shape(carriers * ELEMENTARY_CHARGE * d.amplifier.charge_gain()).peak()
}

/// Warns when the energy threshold E_thr and the voltage threshold U_thr disagree:
/// a mean deposit just above E_thr must give a pulse above U_thr.
pub fn threshold_consistency(d: &DetectorSpec, particle: &Particle, readout: &ReadoutChain) -> Vec<String> {
    let mut w = Vec::new();
    let u_thr = readout.discriminator.threshold;
    let at_threshold = expected_peak(d, d.threshold_energy, readout);
    if at_threshold <= u_thr {
        w.push(format!(
            "detector {}: mean pulse at E_thr = {} eV is {at_threshold:.4e} V, not above U_thr = {u_thr} V; \
             deposits just above E_thr may not fire",
            d.index(),
            d.threshold_energy
        ));
    }
    if let Some(ch) = crate::detector::channel_for(particle, &d.material) {
        let e = crate::detector::deposited_energy(particle, &ch);
        let peak = expected_peak(d, e, readout);
        if crate::detector::check_threshold(e, d.threshold_energy) && peak <= u_thr {
            w.push(format!(
                "detector {}: configured particle deposits {e} eV > E_thr but its mean pulse {peak:.4e} V does not exceed U_thr",
                d.index()
            ));
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
events = 1000
seed = 7

[source.grid]
min = -6.0
max = 6.0
points = 601

[source.wavefunction]
form = "gaussian"
mean = 0.0
sigma = 1.0

[source.particle]
kind = "charged"
charge_sign = 1
kinetic_energy_ev = 1.0e5
rest_mass_energy_ev = 938.272e6

[readout]
amplitude_per_coulomb = 1.0e14
rise_time_s = 5.0e-9
decay_time_s = 50.0e-9
dt_s = 2.0e-9
duration_s = 100.0e-9

[discriminator]
threshold_v = 0.1

[[detectors]]
center_m = 0.0
width_m = 12.02
threshold_energy_ev = 1.0e4
material = { type = "charged_stopper", w_value_ev = 26.0 }
amplifier = { type = "gas_gain", w_value_ev = 26.0, gain = 100.0 }
"#;

    fn violations(text: &str) -> Vec<Violation> {
        match parse_config(text) {
            Err(ConfigError::Validation(v)) => v,
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.workers, 1);
        assert_eq!(cfg.readout.discriminator.logic_high, 1.0);
        assert_eq!(cfg.readout.discriminator.logic_low, 0.0);
        assert_eq!(cfg.chi_square_quantile, 0.999);
        assert_eq!(cfg.output.dir, PathBuf::from("out"));
        assert!(cfg.detectors[0].operable);
        assert!(cfg.warnings.is_empty(), "{:?}", cfg.warnings);
    }

    #[test]
    fn boron_fraction_default() {
        let text = MINIMAL.replace(
            r#"material = { type = "charged_stopper", w_value_ev = 26.0 }"#,
            r#"material = { type = "bf3_gas", opacity = 1.2, q_value_ev = 2.31e6 }"#,
        );
        let cfg = parse_config(&text).unwrap();
        assert!(
            matches!(cfg.detectors[0].material, Material::Bf3Gas { boron10_fraction, .. } if boron10_fraction == 0.96)
        );
    }

    #[test]
    fn overlapping_windows_name_both_detectors() {
        let text = MINIMAL.replace("width_m = 12.02", "width_m = 2.0")
            + r#"
[[detectors]]
center_m = 0.5
width_m = 1.0
threshold_energy_ev = 1.0e4
material = { type = "charged_stopper", w_value_ev = 26.0 }
amplifier = { type = "gas_gain", w_value_ev = 26.0, gain = 100.0 }
"#;
        let v = violations(&text);
        assert!(v.iter().any(|x| x.reason.contains("detectors 1 and 2 overlap")), "{v:?}");
    }

    #[test]
    fn negative_threshold_energy_rejected() {
        let v = violations(&MINIMAL.replace("threshold_energy_ev = 1.0e4", "threshold_energy_ev = -5.0"));
        assert!(v.iter().any(|x| x.path == "detectors[0].threshold_energy_ev"), "{v:?}");
    }

    #[test]
    fn several_violations_reported_together() {
        let text = MINIMAL
            .replace("events = 1000", "events = 0")
            .replace("threshold_v = 0.1", "threshold_v = -0.1")
            .replace("sigma = 1.0", "sigma = -1.0");
        let v = violations(&text);
        let paths: Vec<&str> = v.iter().map(|x| x.path.as_str()).collect();
        assert!(paths.contains(&"events"));
        assert!(paths.contains(&"discriminator"));
        assert!(paths.contains(&"source.wavefunction"));
    }

    #[test]
    fn syntax_and_type_errors_are_parse_errors() {
        assert!(matches!(parse_config("events = "), Err(ConfigError::Parse(_))));
        assert!(matches!(parse_config(&MINIMAL.replace("seed = 7", "seed = \"x\"")), Err(ConfigError::Parse(_))));
        assert!(matches!(parse_config(&(MINIMAL.to_string() + "\nbogus = 1\n")), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn incompatible_particle_is_validation_error() {
        let text = MINIMAL.replace(
            "kind = \"charged\"\ncharge_sign = 1\nkinetic_energy_ev = 1.0e5\nrest_mass_energy_ev = 938.272e6",
            "kind = \"photon\"\nenergy_ev = 3.0",
        );
        let v = violations(&text);
        assert!(v.iter().any(|x| x.path == "source.particle"), "{v:?}");
    }

    #[test]
    fn inconsistent_thresholds_warn() {
        let cfg = parse_config(&MINIMAL.replace("threshold_v = 0.1", "threshold_v = 50.0")).unwrap();
        assert_eq!(cfg.warnings.len(), 2, "{:?}", cfg.warnings);
    }

    #[test]
    fn normalized_round_trip() {
        let cfg = parse_config(MINIMAL).unwrap();
        let again = parse_config(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn table_wavefunction_needs_no_grid() {
        let text = MINIMAL.replace(
            "form = \"gaussian\"\nmean = 0.0\nsigma = 1.0",
            "form = \"table\"\nrows = [[-1.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]]",
        );
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.source.wavefunction.len(), 3);
    }
}
