//! Monte Carlo model of single-particle position measurements with an array
//! of detectors.
//!
//! Each emitted particle goes through three phases:
//!
//! 1. **Start reaction** ([`quantum_source`], [`detector`]): the state
//!    collapses onto one detector's entrance window with Born-rule weight, and
//!    the particle interacts with a single constituent of that detector.
//! 2. **Amplification** ([`amplification`]): the reaction products seed an
//!    avalanche of secondary carriers.
//! 3. **Readout** ([`readout`]): the collected charge becomes a voltage pulse,
//!    the discriminator turns it into a logical output, and the counter
//!    advances.
//!
//! [`experiment`] runs many trials and compares the counter-derived
//! probabilities with the window probabilities computed from the wavefunction.
//! [`sterngerlach`] builds a spin measurement on top of the same pipeline.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod amplification;
pub mod config;
pub mod detector;
pub mod experiment;
pub mod quantum_source;
pub mod readout;
pub mod report;
pub mod rng;
pub mod sterngerlach;

pub use amplification::{amplify, primary_carriers, AmplifierModel, AvalancheResult};
pub use config::{load_config, parse_config, ConfigError, RunConfig};
pub use detector::{
    attempt_start_reaction, check_threshold, deposited_energy, start_reaction_probability, DetectorSpec, Material,
    Particle, StartReactionChannel, StartReactionOutcome,
};
pub use experiment::{
    run_experiment, verify_born_agreement, verify_one_to_one, EventLog, EventRecord, Experiment, ExperimentReport,
    RunOptions, Source,
};
pub use quantum_source::{
    expected_counts, normalize, sample_arrival, window_probability, ArrivalOutcome, EntranceWindow, GridSpec,
    Wavefunction,
};
pub use readout::{discriminate, shape_pulse, CounterMemory, DiscriminatorSpec, PulseTrace, ReadoutChain, Shaping};
pub use sterngerlach::{measure_position, pass_magnet, run_stern_gerlach, ReducedState, Spin, SpinorPacket};
