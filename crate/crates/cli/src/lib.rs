//! Scenario runner: loads TOML scenarios, runs the governed closed loop and
//! writes CSV/TOML artifacts.

pub mod output;
pub mod scenario;

use std::path::{Path, PathBuf};

use orbgov_core::sim::{SimError, ViolationTolerances};
use orbgov_core::{run_closed_loop, Backend, TrajectoryRecord};
use serde::Serialize;

pub use output::Summary;
pub use scenario::{Problem, Scenario};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("scenario error: {0}")]
    Parse(String),
    #[error("initial state infeasible: {0}")]
    Infeasible(String),
    #[error("integration failed: {0}")]
    Integration(String),
    #[error("constraint violation: {0}")]
    Violation(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Integration(_) => 4,
            CliError::Violation(_) => 5,
            CliError::Io(_) => 1,
        }
    }
}

/// Scenarios shipped with the binary, addressable by name.
pub const BUNDLED: [(&str, &str); 3] = [
    ("geo-lower", include_str!("../scenarios/geo-lower.toml")),
    ("leo-raise", include_str!("../scenarios/leo-raise.toml")),
    ("smoke", include_str!("../scenarios/smoke.toml")),
];

pub fn bundled(name: &str) -> Option<Scenario> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| Scenario::from_toml_str(text).expect("bundled scenario parses"))
}

/// Loads a scenario from a file, falling back to a bundled name.
pub fn resolve(spec: &str) -> Result<Scenario, CliError> {
    let path = Path::new(spec);
    if path.exists() {
        return Scenario::load(path);
    }
    bundled(spec).ok_or_else(|| {
        let names: Vec<_> = BUNDLED.iter().map(|(n, _)| *n).collect();
        CliError::Io(format!(
            "{spec}: no such file or bundled scenario (bundled: {})",
            names.join(", ")
        ))
    })
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub backend: Option<Backend>,
    pub t_end: Option<f64>,
}

impl RunOptions {
    pub fn apply(&self, scenario: &Scenario) -> Result<Problem, CliError> {
        let mut p = scenario.to_problem()?;
        if let Some(b) = self.backend {
            p.governor.backend = b;
        }
        if let Some(t) = self.t_end {
            p.sim.t_end = t;
            p.sim
                .validate()
                .map_err(|e| CliError::Parse(format!("--t-end: {e}")))?;
        }
        Ok(p)
    }

    pub fn output_dir(&self, scenario: &Scenario) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| scenario.output.dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| Path::new("runs").join(&scenario.name))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub record: TrajectoryRecord,
    pub summary: Summary,
    /// Integration failure or constraint violation; artifacts were still
    /// written.
    pub failure: Option<CliError>,
}

impl RunOutcome {
    pub fn into_result(self) -> Result<Self, CliError> {
        match self.failure {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }
}

fn count_violations(record: &TrajectoryRecord, tol: &ViolationTolerances) -> usize {
    record
        .samples
        .iter()
        .filter(|s| s.c1 < -tol.c1 || s.c2 < -tol.c2 || s.c3 < -tol.c3)
        .count()
}

/// Runs a problem and writes its artifacts into `dir`. Integration
/// failures and violations keep the partial record and are reported in
/// [`RunOutcome::failure`].
pub fn run_problem(problem: &Problem, dir: &Path) -> Result<RunOutcome, CliError> {
    let p = problem;
    let result = run_closed_loop(
        &p.x0,
        &p.x_des,
        &p.modes,
        &p.governor,
        &p.limits,
        &p.constants,
        &p.sim,
    );
    let settle = (p.sim.settle_rel, p.sim.settle_ang);
    let tol = &p.sim.violation;
    let (record, failure) = match result {
        Ok(r) => (r, None),
        Err(SimError::Config(e)) => return Err(CliError::Parse(e.to_string())),
        Err(SimError::InfeasibleInitial(m)) => return Err(CliError::Infeasible(m)),
        Err(e @ SimError::Integration { .. }) => {
            let msg = e.to_string();
            let SimError::Integration { record, .. } = e else { unreachable!() };
            (*record, Some(("integration-failure", CliError::Integration(msg))))
        }
        Err(e @ SimError::Violation { .. }) => {
            let msg = e.to_string();
            let SimError::Violation { record, .. } = e else { unreachable!() };
            (*record, Some(("violation", CliError::Violation(msg))))
        }
    };
    let violations = count_violations(&record, tol);
    let summary = output::summarize(
        &p.name,
        &record,
        &p.x_des,
        settle,
        violations,
        failure.as_ref().map(|(s, e)| (*s, e.to_string())),
    );
    output::write_artifacts(dir, &record, &summary)?;
    let failure = match failure {
        Some((_, e)) => Some(e),
        None if violations > 0 => Some(CliError::Violation(format!(
            "{violations} logged samples below tolerance"
        ))),
        None => None,
    };
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        record,
        summary,
        failure,
    })
}

/// Runs a scenario; a failed run is an error after its artifacts are written.
pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let problem = opts.apply(scenario)?;
    run_problem(&problem, &opts.output_dir(scenario))?.into_result()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub backend: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maneuver_duration: Option<f64>,
    pub delta_v: f64,
    pub min_c1: f64,
    pub min_c2: f64,
    pub min_c3: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub scenario: String,
    pub runs: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<14} {:<20} {:>14} {:>12} {:>12} {:>12} {:>12}\n",
            "backend", "status", "duration [d]", "dV [km/s]", "min c1", "min c2", "min c3"
        );
        for r in &self.runs {
            let dur = r
                .maneuver_duration
                .map_or("-".to_string(), |d| format!("{:.4}", d / 86_400.0));
            out += &format!(
                "{:<14} {:<20} {:>14} {:>12.6} {:>12.4e} {:>12.4e} {:>12.4e}\n",
                r.backend, r.status, dur, r.delta_v, r.min_c1, r.min_c2, r.min_c3
            );
        }
        out
    }
}

fn comparison_row(backend: Backend, res: &Result<RunOutcome, CliError>) -> ComparisonRow {
    match res {
        Ok(o) => {
            let s = &o.summary;
            ComparisonRow {
                backend: backend.name().to_string(),
                status: s.status.clone(),
                maneuver_duration: s.maneuver_duration,
                delta_v: s.delta_v,
                min_c1: s.min_margins.c1,
                min_c2: s.min_margins.c2,
                min_c3: s.min_margins.c3,
                violations: s.violations,
            }
        }
        Err(_) => ComparisonRow {
            backend: backend.name().to_string(),
            status: "error".into(),
            maneuver_duration: None,
            delta_v: f64::NAN,
            min_c1: f64::NAN,
            min_c2: f64::NAN,
            min_c3: f64::NAN,
            violations: 0,
        },
    }
}

pub struct CompareOutcome {
    pub comparison: Comparison,
    pub results: Vec<(Backend, Result<RunOutcome, CliError>)>,
}

/// Runs the Lyapunov-set and prediction backends concurrently, each into
/// its own subdirectory, and writes `comparison.toml` next to them.
pub fn compare_backends(scenario: &Scenario, opts: &RunOptions) -> Result<CompareOutcome, CliError> {
    let root = opts.output_dir(scenario);
    let backends = [Backend::LyapunovSet, Backend::Prediction];
    let problems = backends
        .iter()
        .map(|b| {
            opts.apply(scenario).map(|mut p| {
                p.governor.backend = *b;
                p
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = backends
            .iter()
            .zip(&problems)
            .map(|(b, p)| {
                let dir = root.join(b.name());
                s.spawn(move || (*b, run_problem(p, &dir)))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("backend run panicked"))
            .collect()
    });
    let comparison = Comparison {
        schema_version: output::SCHEMA_VERSION,
        scenario: scenario.name.clone(),
        runs: results
            .iter()
            .map(|(b, r)| comparison_row(*b, r))
            .collect(),
    };
    output::write_toml(&root.join("comparison.toml"), &comparison)?;
    Ok(CompareOutcome {
        comparison,
        results,
    })
}
