//! Run artifacts: `trajectory.csv`, `events.csv` and `summary.toml`.
//!
//! Column order is frozen; see `docs/FORMATS.md`. Floats are written in
//! Rust's shortest round-trip scientific form, so identical runs give
//! byte-identical files.

use std::fs;
use std::path::Path;

use orbgov_core::sim::{output_theta, GovernorEvent, Sample, Termination};
use orbgov_core::{SlowElements, TrajectoryRecord};
use serde::Serialize;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

pub const TRAJECTORY_COLUMNS: [&str; 25] = [
    "t", "segment", "a", "e", "i", "raan", "argp", "theta", "ref_a", "ref_e", "ref_i", "ref_raan",
    "ref_argp", "mode", "u_norm", "u_s", "u_t", "u_w", "v", "c1", "c2", "c3", "r", "r_p",
    "delta_v",
];

pub const EVENT_COLUMNS: [&str; 16] = [
    "k",
    "t",
    "mode_desired",
    "mode",
    "mode_tested",
    "mode_switched",
    "direction",
    "candidates",
    "accepted",
    "backtracked",
    "step",
    "ref_a",
    "ref_e",
    "ref_i",
    "ref_raan",
    "ref_argp",
];

const DIRECTIONS: [&str; 6] = ["a", "e", "i", "raan", "argp", "all"];

fn f(x: f64) -> String {
    format!("{x:e}")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn trajectory_row(s: &Sample) -> Vec<String> {
    let x = &s.state.elements;
    let r = &s.reference;
    vec![
        f(s.t),
        s.segment.to_string(),
        f(x.a),
        f(x.e),
        f(x.i),
        f(x.raan),
        f(x.argp),
        f(output_theta(&s.state)),
        f(r.a),
        f(r.e),
        f(r.i),
        f(r.raan),
        f(r.argp),
        (s.p_index + 1).to_string(),
        f(s.thrust.norm()),
        f(s.thrust.s),
        f(s.thrust.t),
        f(s.thrust.w),
        f(s.v),
        f(s.c1),
        f(s.c2),
        f(s.c3),
        f(s.r),
        f(s.r_p),
        f(s.delta_v),
    ]
}

fn event_row(ev: &GovernorEvent) -> Vec<String> {
    let d = &ev.decision;
    let r = &ev.reference;
    vec![
        d.k.to_string(),
        f(ev.t),
        (d.p_desired + 1).to_string(),
        (ev.p_index + 1).to_string(),
        u8::from(d.mode_tested).to_string(),
        u8::from(d.mode_switched).to_string(),
        DIRECTIONS[d.direction].to_string(),
        d.candidates.to_string(),
        d.accepted.to_string(),
        u8::from(d.backtracked).to_string(),
        f(d.step),
        f(r.a),
        f(r.e),
        f(r.i),
        f(r.raan),
        f(r.argp),
    ]
}

fn write_csv<T>(
    path: &Path,
    header: &[&str],
    rows: &[T],
    row: impl Fn(&T) -> Vec<String>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for item in rows {
        w.write_record(row(item)).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElementsOut {
    pub a: f64,
    pub e: f64,
    pub i: f64,
    pub raan: f64,
    pub argp: f64,
}

impl From<&SlowElements> for ElementsOut {
    fn from(x: &SlowElements) -> Self {
        Self {
            a: x.a,
            e: x.e,
            i: x.i,
            raan: x.raan,
            argp: x.argp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginsOut {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Counts {
    pub samples: usize,
    pub governor_instants: usize,
    pub held_instants: usize,
    pub mode_switches: usize,
    pub admissibility_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub scenario: String,
    pub backend: String,
    /// `converged`, `time-limit`, `violation` or `integration-failure`.
    pub status: String,
    pub t_final: f64,
    /// Absent when the final state is outside the settle band.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maneuver_duration: Option<f64>,
    pub delta_v: f64,
    pub violations: usize,
    pub final_elements: ElementsOut,
    pub final_reference: ElementsOut,
    pub target: ElementsOut,
    pub min_margins: MarginsOut,
    pub counts: Counts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Summary of a (possibly partial) record.
pub fn summarize(
    scenario: &str,
    record: &TrajectoryRecord,
    x_des: &SlowElements,
    settle: (f64, f64),
    violations: usize,
    status_override: Option<(&str, String)>,
) -> Summary {
    let last = record.last();
    let m = record.min_margins();
    let (status, error) = match status_override {
        Some((s, e)) => (s.to_string(), Some(e)),
        None => (
            match record.termination {
                Termination::Converged => "converged",
                Termination::TimeLimit => "time-limit",
            }
            .to_string(),
            None,
        ),
    };
    let nan = SlowElements {
        a: f64::NAN,
        e: f64::NAN,
        i: f64::NAN,
        raan: f64::NAN,
        argp: f64::NAN,
    };
    Summary {
        schema_version: SCHEMA_VERSION,
        scenario: scenario.to_string(),
        backend: record.backend.name().to_string(),
        status,
        t_final: last.map_or(0.0, |s| s.t),
        maneuver_duration: record.maneuver_duration(x_des, settle.0, settle.1),
        delta_v: record.delta_v(),
        violations,
        final_elements: last.map_or(&nan, |s| &s.state.elements).into(),
        final_reference: last.map_or(&nan, |s| &s.reference).into(),
        target: x_des.into(),
        min_margins: MarginsOut {
            c1: m.c1,
            c2: m.c2,
            c3: m.c3,
        },
        counts: Counts {
            samples: record.samples.len(),
            governor_instants: record.events.len(),
            held_instants: record.events.iter().filter(|e| e.decision.held()).count(),
            mode_switches: record
                .events
                .iter()
                .filter(|e| e.decision.mode_switched)
                .count(),
            admissibility_queries: record
                .events
                .iter()
                .map(|e| e.decision.admissibility_queries())
                .sum(),
        },
        error,
    }
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = toml::to_string(value).map_err(|e| io_err(path, e))?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Writes all three artifacts into `dir`, creating it if needed.
pub fn write_artifacts(dir: &Path, record: &TrajectoryRecord, summary: &Summary) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_csv(
        &dir.join("trajectory.csv"),
        &TRAJECTORY_COLUMNS,
        &record.samples,
        trajectory_row,
    )?;
    write_csv(&dir.join("events.csv"), &EVENT_COLUMNS, &record.events, event_row)?;
    write_toml(&dir.join("summary.toml"), summary)
}
