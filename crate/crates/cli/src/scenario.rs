//! TOML scenario files.
//!
//! Angles may be written as plain radians (`1.5707963`), degrees
//! (`"90deg"`) or multiples of π (`"pi/2"`, `"3pi/2"`, `"-0.5pi"`).
//! Unknown keys are rejected.

use std::fmt;
use std::path::Path;

use nalgebra::Matrix5;
use orbgov_core::governor::{build_rotated_p, Backend, PredictionConfig, PredictionHorizon};
use orbgov_core::sim::ViolationTolerances;
use orbgov_core::{
    ConstraintLimits, Constants, FullState, GovernorConfig, ModeSet, SimConfig, SlowElements, WeightMatrix,
};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::CliError;

/// Angle in radians, parsed from a number or an annotated string.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angle(pub f64);

impl Angle {
    pub fn parse(text: &str) -> Result<Self, String> {
        let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let s = s.to_ascii_lowercase();
        if let Some(deg) = s.strip_suffix("deg") {
            let v: f64 = deg.parse().map_err(|_| format!("bad degree value `{text}`"))?;
            return Ok(Angle(v.to_radians()));
        }
        if let Some(at) = s.find("pi") {
            let (coef, rest) = s.split_at(at);
            let rest = &rest[2..];
            let coef = match coef {
                "" | "+" => 1.0,
                "-" => -1.0,
                c => c
                    .trim_end_matches('*')
                    .parse::<f64>()
                    .map_err(|_| format!("bad multiple of pi `{text}`"))?,
            };
            let div = match rest {
                "" => 1.0,
                r => r
                    .strip_prefix('/')
                    .and_then(|d| d.parse::<f64>().ok())
                    .filter(|d| *d != 0.0)
                    .ok_or_else(|| format!("bad divisor in `{text}`"))?,
            };
            return Ok(Angle(coef * std::f64::consts::PI / div));
        }
        s.parse::<f64>()
            .map(Angle)
            .map_err(|_| format!("cannot read angle `{text}` (use radians, \"<x>deg\" or \"<k>pi/<n>\")"))
    }
}

impl<'de> Deserialize<'de> for Angle {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = Angle;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an angle in radians, \"<x>deg\" or \"<k>pi/<n>\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Angle, E> {
                Ok(Angle(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Angle, E> {
                Ok(Angle(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Angle, E> {
                Ok(Angle(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Angle, E> {
                Angle::parse(v).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

impl Serialize for Angle {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub a: f64,
    pub e: f64,
    pub i: Angle,
    pub raan: Angle,
    pub argp: Angle,
    pub theta: Angle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetElements {
    pub a: f64,
    pub e: f64,
    pub i: Angle,
    pub raan: Angle,
    pub argp: Angle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Limits {
    pub r_min: f64,
    pub u_max: f64,
    pub e_min: f64,
    #[serde(default = "default_eps_r")]
    pub eps_r: f64,
    #[serde(default = "default_eps_e")]
    pub eps_e: f64,
}

fn default_eps_r() -> f64 {
    1.0
}

fn default_eps_e() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendName {
    LyapunovSet,
    Prediction,
    Off,
}

impl From<BackendName> for Backend {
    fn from(b: BackendName) -> Self {
        match b {
            BackendName::LyapunovSet => Backend::LyapunovSet,
            BackendName::Prediction => Backend::Prediction,
            BackendName::Off => Backend::Off,
        }
    }
}

impl From<Backend> for BackendName {
    fn from(b: Backend) -> Self {
        match b {
            Backend::LyapunovSet => BackendName::LyapunovSet,
            Backend::Prediction => BackendName::Prediction,
            Backend::Off => BackendName::Off,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    /// Horizon in orbital periods at the current semi-major axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_periods: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_seconds: Option<f64>,
    #[serde(default = "PredictionDefaults::sample")]
    pub sample: f64,
    #[serde(default = "PredictionDefaults::rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "PredictionDefaults::abs_tol")]
    pub abs_tol: f64,
    #[serde(default = "PredictionDefaults::max_step")]
    pub max_step: f64,
    #[serde(default = "PredictionDefaults::terminal_ratio")]
    pub terminal_ratio: f64,
    #[serde(default = "PredictionDefaults::thrust_margin")]
    pub thrust_margin: f64,
}

struct PredictionDefaults;

impl PredictionDefaults {
    fn get() -> PredictionConfig {
        PredictionConfig::default()
    }
    fn sample() -> f64 {
        Self::get().sample
    }
    fn rel_tol() -> f64 {
        Self::get().rel_tol
    }
    fn abs_tol() -> f64 {
        Self::get().abs_tol
    }
    fn max_step() -> f64 {
        Self::get().max_step
    }
    fn terminal_ratio() -> f64 {
        Self::get().terminal_ratio
    }
    fn thrust_margin() -> f64 {
        Self::get().thrust_margin
    }
}

impl Default for Prediction {
    fn default() -> Self {
        let d = PredictionConfig::default();
        Self {
            horizon_periods: None,
            horizon_seconds: None,
            sample: d.sample,
            rel_tol: d.rel_tol,
            abs_tol: d.abs_tol,
            max_step: d.max_step,
            terminal_ratio: d.terminal_ratio,
            thrust_margin: d.thrust_margin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Governor {
    pub backend: BackendName,
    pub delta: f64,
    pub gamma: f64,
    pub n: usize,
    /// Seconds between governor instants.
    pub update_period: f64,
    /// Snap tolerances for (a, e, i, Ω, ω).
    #[serde(default = "default_snap")]
    pub snap_tol: [f64; 5],
    #[serde(default)]
    pub prediction: Prediction,
}

fn default_snap() -> [f64; 5] {
    GovernorConfig::default().snap_tol
}

/// Either explicit matrices or a diagonal P⁰ rotated at each breakpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Modes {
    /// Semi-major-axis thresholds, km, strictly decreasing.
    pub thresholds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrices: Option<Vec<[[f64; 5]; 5]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p0_diag: Option<[f64; 5]>,
    /// Semi-major axes at which the rotated matrices are built, km.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakpoints: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Violation {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

impl Default for Violation {
    fn default() -> Self {
        let v = ViolationTolerances::default();
        Self {
            c1: v.c1,
            c2: v.c2,
            c3: v.c3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sim {
    pub t_end: f64,
    #[serde(default = "SimDefaults::rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "SimDefaults::abs_tol")]
    pub abs_tol: f64,
    #[serde(default = "SimDefaults::max_step")]
    pub max_step: f64,
    #[serde(default = "SimDefaults::log_period")]
    pub log_period: f64,
    #[serde(default = "SimDefaults::convergence_ratio")]
    pub convergence_ratio: f64,
    #[serde(default = "SimDefaults::settle_rel")]
    pub settle_rel: f64,
    #[serde(default = "SimDefaults::settle_ang")]
    pub settle_ang: f64,
    #[serde(default = "SimDefaults::abort_on_violation")]
    pub abort_on_violation: bool,
    #[serde(default)]
    pub violation: Violation,
}

struct SimDefaults;

impl SimDefaults {
    fn rel_tol() -> f64 {
        SimConfig::default().rel_tol
    }
    fn abs_tol() -> f64 {
        SimConfig::default().abs_tol
    }
    fn max_step() -> f64 {
        SimConfig::default().max_step
    }
    fn log_period() -> f64 {
        SimConfig::default().log_period
    }
    fn convergence_ratio() -> f64 {
        SimConfig::default().convergence_ratio
    }
    fn settle_rel() -> f64 {
        SimConfig::default().settle_rel
    }
    fn settle_ang() -> f64 {
        SimConfig::default().settle_ang
    }
    fn abort_on_violation() -> bool {
        SimConfig::default().abort_on_violation
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    /// Output directory, relative to the working directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    /// Gravitational parameter, km³/s². Earth when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    pub initial: InitialState,
    pub target: TargetElements,
    pub limits: Limits,
    pub governor: Governor,
    pub modes: Modes,
    pub sim: Sim,
    #[serde(default)]
    pub output: Output,
}

/// A scenario converted to library types.
#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub constants: Constants,
    pub x0: FullState,
    pub x_des: SlowElements,
    pub limits: ConstraintLimits,
    pub modes: ModeSet,
    pub governor: GovernorConfig,
    pub sim: SimConfig,
}

fn field<T>(path: &str, r: orbgov_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Parse(format!("{path}: {e}")))
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let s: Scenario = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        s.to_problem()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            CliError::Parse(m) => CliError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serialises")
    }

    pub fn to_problem(&self) -> Result<Problem, CliError> {
        let constants = match self.mu {
            Some(mu) => field("mu", Constants::new(mu))?,
            None => Constants::EARTH,
        };
        let i = &self.initial;
        let x0 = FullState::new(
            field(
                "initial",
                SlowElements::try_new(i.a, i.e, i.i.0, i.raan.0, i.argp.0),
            )?,
            i.theta.0,
        );
        if !x0.theta.is_finite() {
            return Err(CliError::Parse("initial.theta: not finite".into()));
        }
        let t = &self.target;
        let x_des = field(
            "target",
            SlowElements::try_new(t.a, t.e, t.i.0, t.raan.0, t.argp.0),
        )?;
        let l = &self.limits;
        let limits = field(
            "limits",
            ConstraintLimits::new(l.r_min, l.u_max, l.e_min, l.eps_r, l.eps_e),
        )?;

        let m = &self.modes;
        let matrices = match (&m.matrices, &m.p0_diag, &m.breakpoints) {
            (Some(ms), None, None) => ms
                .iter()
                .enumerate()
                .map(|(k, rows)| {
                    let mat = Matrix5::from_fn(|r, c| rows[r][c]);
                    field(&format!("modes.matrices[{k}]"), WeightMatrix::new(mat))
                })
                .collect::<Result<Vec<_>, _>>()?,
            (None, Some(diag), Some(bps)) => bps
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    field(
                        &format!("modes.breakpoints[{k}]"),
                        build_rotated_p(*diag, *a, l.r_min),
                    )
                })
                .collect::<Result<Vec<_>, _>>()?,
            _ => {
                return Err(CliError::Parse(
                    "modes: give either `matrices` or both `p0_diag` and `breakpoints`".into(),
                ))
            }
        };
        let modes = field("modes", ModeSet::new(matrices, m.thresholds.clone()))?;

        let g = &self.governor;
        let pr = &g.prediction;
        let horizon = match (pr.horizon_periods, pr.horizon_seconds) {
            (Some(n), None) => PredictionHorizon::Periods(n),
            (None, Some(s)) => PredictionHorizon::Seconds(s),
            (None, None) => PredictionConfig::default().horizon,
            (Some(_), Some(_)) => {
                return Err(CliError::Parse(
                    "governor.prediction: give at most one of horizon_periods and horizon_seconds"
                        .into(),
                ))
            }
        };
        let governor = GovernorConfig {
            delta: g.delta,
            gamma: g.gamma,
            n: g.n,
            update_period: g.update_period,
            backend: g.backend.into(),
            prediction: PredictionConfig {
                horizon,
                sample: pr.sample,
                rel_tol: pr.rel_tol,
                abs_tol: pr.abs_tol,
                max_step: pr.max_step,
                terminal_ratio: pr.terminal_ratio,
                thrust_margin: pr.thrust_margin,
            },
            snap_tol: g.snap_tol,
        };
        field("governor", governor.validate())?;

        let s = &self.sim;
        let sim = SimConfig {
            t_end: s.t_end,
            rel_tol: s.rel_tol,
            abs_tol: s.abs_tol,
            max_step: s.max_step,
            log_period: s.log_period,
            convergence_ratio: s.convergence_ratio,
            settle_rel: s.settle_rel,
            settle_ang: s.settle_ang,
            violation: ViolationTolerances {
                c1: s.violation.c1,
                c2: s.violation.c2,
                c3: s.violation.c3,
            },
            abort_on_violation: s.abort_on_violation,
        };
        field("sim", sim.validate())?;

        Ok(Problem {
            name: self.name.clone(),
            constants,
            x0,
            x_des,
            limits,
            modes,
            governor,
            sim,
        })
    }
}
