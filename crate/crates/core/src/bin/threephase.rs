use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use threephase::config::{load_config, ConfigError, RunConfig};
use threephase::experiment::{exclusivity_violations, run_experiment, verify_born_agreement, verify_one_to_one};
use threephase::quantum_source::expected_counts;
use threephase::report::{emit_event_log, emit_pulses, emit_report, emit_sg_report, sg_summary_json, summary_json};
use threephase::sterngerlach::run_stern_gerlach;

#[derive(Parser)]
#[command(name = "threephase", version, about = "Detector-array Monte Carlo for single-particle position measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full experiment and write the report.
    Run(CommonArgs),
    /// Run the Stern-Gerlach scenario from the `stern_gerlach` block.
    Sg(CommonArgs),
    /// Validate the configuration only.
    Validate(CommonArgs),
    /// Print window probabilities without simulating.
    Probe(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of emitted particles.
    #[arg(long)]
    events: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Exit with status 5 unless the statistical checks pass.
    #[arg(long)]
    check: bool,
    /// Comma-separated trial ids whose pulses are written out.
    #[arg(long, value_delimiter = ',')]
    dump_pulses: Vec<u64>,
}

enum Failure {
    Config(ConfigError),
    Io(std::io::Error),
    Check(String),
    Other(String),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(ConfigError::Parse(_)) => 2,
            Failure::Config(ConfigError::Validation(_)) => 3,
            Failure::Config(ConfigError::Read { .. }) | Failure::Io(_) => 4,
            Failure::Check(_) => 5,
            Failure::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "{e}"),
            Failure::Io(e) => write!(f, "I/O error: {e}"),
            Failure::Check(s) => write!(f, "check failed: {s}"),
            Failure::Other(s) => write!(f, "{s}"),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

fn load(args: &CommonArgs) -> Result<RunConfig, Failure> {
    let mut cfg = load_config(&args.config).map_err(Failure::Config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(events) = args.events {
        if events == 0 {
            return Err(Failure::Config(ConfigError::Validation(vec![threephase::config::Violation {
                path: "--events".into(),
                reason: "must be >= 1".into(),
            }])));
        }
        cfg.events = events;
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    if let Some(w) = args.workers {
        cfg.workers = w.max(1);
    }
    cfg.output.dump_pulses.extend(args.dump_pulses.iter().copied());
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn run(args: &CommonArgs) -> Result<(), Failure> {
    let mut cfg = load(args)?;
    if args.check {
        // one-to-one verification needs every record
        cfg.output.retain_event_log = true;
    }
    let exp = cfg.experiment().map_err(|e| Failure::Other(e.to_string()))?;
    let out = run_experiment(&exp, cfg.events, cfg.seed).map_err(|e| Failure::Other(e.to_string()))?;
    let one_to_one = if out.event_log.complete {
        Some(verify_one_to_one(&out.event_log, exp.detectors()).map_err(|e| Failure::Other(e.to_string()))?)
    } else {
        None
    };
    let dir = &cfg.output.dir;
    emit_report(&out.report, one_to_one.as_ref(), dir)?;
    if !out.event_log.records.is_empty() {
        emit_event_log(&out.event_log, dir)?;
    }
    emit_pulses(&out.pulses, dir)?;
    print!("{}", summary_json(&out.report, one_to_one.as_ref()));

    if args.check {
        let born = verify_born_agreement(&out.report);
        let mut problems = Vec::new();
        if !born.pass {
            problems.push(format!(
                "Born agreement failed (max |z| = {:.3}, chi2 = {:.3})",
                born.max_abs_z(),
                born.chi_square
            ));
        }
        if let Some(o) = &one_to_one {
            if !o.holds {
                problems.push(format!("one-to-one correlation broken at detectors {:?}", o.mismatched));
            }
        }
        let excl = exclusivity_violations(&out.event_log);
        if !excl.is_empty() {
            problems.push(format!("{} trials with more than one logical output", excl.len()));
        }
        if !out.report.is_conserved() {
            problems.push("count conservation violated".into());
        }
        if !problems.is_empty() {
            return Err(Failure::Check(problems.join("; ")));
        }
    }
    Ok(())
}

fn sg(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = load(args)?;
    let (app, state) = match cfg.stern_gerlach() {
        None => {
            return Err(Failure::Config(ConfigError::Validation(vec![threephase::config::Violation {
                path: "stern_gerlach".into(),
                reason: "block required for the sg command".into(),
            }])))
        }
        Some(r) => r.map_err(|e| Failure::Other(e.to_string()))?,
    };
    let report = run_stern_gerlach(&app, &state, cfg.events, cfg.seed, cfg.workers)
        .map_err(|e| Failure::Other(e.to_string()))?;
    emit_sg_report(&report, &cfg.output.dir)?;
    print!("{}", sg_summary_json(&report));
    if args.check && !report.pass() {
        return Err(Failure::Check(format!(
            "up fraction {} vs expected {} (z = {:?}), repeatability {}/{}",
            report.up_fraction, report.expected_up, report.z_score, report.repeat_agreements, report.repeat_trials
        )));
    }
    Ok(())
}

fn probe(args: &CommonArgs) -> Result<(), Failure> {
    let cfg = load(args)?;
    let exp = cfg.experiment().map_err(|e| Failure::Other(e.to_string()))?;
    let window = exp.window_probabilities();
    let theoretical = exp.theoretical_probabilities();
    let expected = expected_counts(cfg.events, &window);
    println!("detector_index,center_m,width_m,window_prob,theoretical_prob,expected_passes");
    for (i, d) in exp.detectors().iter().enumerate() {
        println!(
            "{},{:.11e},{:.11e},{:.11e},{:.11e},{:.11e}",
            d.index(),
            d.window.center,
            d.window.width,
            window[i],
            theoretical[i],
            expected[i]
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Sg(a) => sg(a),
        Command::Validate(a) => load(a).map(|_| println!("configuration ok")),
        Command::Probe(a) => probe(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
