//! Output files: per-detector table, JSON summary, event log, pulse dumps.
//!
//! Every file is written to a temporary sibling and renamed into place.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::experiment::{
    fmt_sig, verify_born_agreement, EventLog, ExperimentReport, NoSignalBreakdown, OneToOneReport,
};
use crate::readout::PulseTrace;
use crate::sterngerlach::SgReport;

pub const TABLE_HEADER: &str = "detector_index,center_m,width_m,counts,empirical_prob,theoretical_prob,stderr,z_score";
pub const TABLE_FILE: &str = "detectors.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EVENT_LOG_FILE: &str = "events.csv";
pub const SG_SUMMARY_FILE: &str = "sg_summary.json";

/// Writes `contents` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Rounds to 12 significant digits.
fn sig12(x: f64) -> f64 {
    if x.is_finite() {
        fmt_sig(x).parse().unwrap_or(x)
    } else {
        x
    }
}

/// Per-detector CSV, ordered by detector index.
pub fn detector_table(report: &ExperimentReport) -> String {
    let agreement = verify_born_agreement(report);
    let mut rows: Vec<_> = report.detectors.iter().zip(&agreement.per_detector).collect();
    rows.sort_by_key(|(r, _)| r.detector_index);
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for (r, a) in rows {
        let z = a.z().map(fmt_sig).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.detector_index,
            fmt_sig(r.center),
            fmt_sig(r.width),
            r.counts,
            fmt_sig(r.empirical_prob),
            fmt_sig(r.theoretical_prob),
            fmt_sig(r.stderr),
            z
        );
    }
    out
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    emitted: u64,
    seed: u64,
    miss_count: u64,
    no_signal_count: u64,
    no_signal: NoSignalBreakdown,
    total_counts: u64,
    exclusivity_violations: u64,
    misattributed_signals: u64,
    chi_square: f64,
    chi_square_dof: usize,
    chi_square_quantile: f64,
    chi_square_critical: f64,
    max_abs_z: f64,
    degenerate_detectors: &'a [usize],
    conserved: bool,
    born_pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    one_to_one: Option<&'a OneToOneReport>,
    pass: bool,
}

/// Machine-readable summary of a run.
pub fn summary_json(report: &ExperimentReport, one_to_one: Option<&OneToOneReport>) -> String {
    let agreement = verify_born_agreement(report);
    let conserved = report.is_conserved();
    let pass = agreement.pass && conserved && report.exclusivity_violations == 0 && one_to_one.is_none_or(|o| o.holds);
    let summary = Summary {
        emitted: report.emitted,
        seed: report.seed,
        miss_count: report.miss_count,
        no_signal_count: report.no_signal_count,
        no_signal: report.no_signal,
        total_counts: report.total_counts(),
        exclusivity_violations: report.exclusivity_violations,
        misattributed_signals: report.misattributed_signals,
        chi_square: sig12(report.chi_square),
        chi_square_dof: report.chi_square_dof,
        chi_square_quantile: report.chi_square_quantile,
        chi_square_critical: sig12(agreement.critical_value),
        max_abs_z: sig12(agreement.max_abs_z()),
        degenerate_detectors: &agreement.degenerate,
        conserved,
        born_pass: agreement.pass,
        one_to_one,
        pass,
    };
    let mut s = serde_json::to_string_pretty(&summary).unwrap_or_default();
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub table: PathBuf,
    pub summary: PathBuf,
}

/// Writes `detectors.csv` and `summary.json` into `dir`.
pub fn emit_report(
    report: &ExperimentReport,
    one_to_one: Option<&OneToOneReport>,
    dir: &Path,
) -> io::Result<ReportFiles> {
    let files = ReportFiles { table: dir.join(TABLE_FILE), summary: dir.join(SUMMARY_FILE) };
    write_atomic(&files.table, detector_table(report).as_bytes())?;
    write_atomic(&files.summary, summary_json(report, one_to_one).as_bytes())?;
    Ok(files)
}

pub fn emit_event_log(log: &EventLog, dir: &Path) -> io::Result<PathBuf> {
    let path = dir.join(EVENT_LOG_FILE);
    write_atomic(&path, log.to_csv().as_bytes())?;
    Ok(path)
}

/// One `pulse_<trial>.csv` per dumped trial under `dir/pulses`.
pub fn emit_pulses(pulses: &BTreeMap<u64, PulseTrace>, dir: &Path) -> io::Result<Vec<PathBuf>> {
    pulses
        .iter()
        .map(|(id, trace)| {
            let path = dir.join("pulses").join(format!("pulse_{id}.csv"));
            write_atomic(&path, trace.to_csv().as_bytes()).map(|_| path)
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct SgSummary<'a> {
    #[serde(flatten)]
    report: &'a SgReport,
    born_pass: bool,
    repeatable: bool,
    pass: bool,
}

pub fn sg_summary_json(report: &SgReport) -> String {
    let rounded = SgReport {
        up_fraction: sig12(report.up_fraction),
        stderr: sig12(report.stderr),
        z_score: report.z_score.map(sig12),
        expected_up: sig12(report.expected_up),
        ..report.clone()
    };
    let s = SgSummary {
        report: &rounded,
        born_pass: report.born_ok(),
        repeatable: report.repeatable(),
        pass: report.pass(),
    };
    let mut out = serde_json::to_string_pretty(&s).unwrap_or_default();
    out.push('\n');
    out
}

pub fn emit_sg_report(report: &SgReport, dir: &Path) -> io::Result<PathBuf> {
    let path = dir.join(SG_SUMMARY_FILE);
    write_atomic(&path, sg_summary_json(report).as_bytes())?;
    Ok(path)
}
