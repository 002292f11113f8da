//! Multi-step, multi-mode incremental reference governor.
//!
//! At each governor instant the reference X̃ is pushed toward X_des in small
//! increments; each candidate is kept only if it is admissible, i.e. the
//! closed loop with the candidate frozen provably (sublevel-set backend) or
//! predictably (prediction backend) respects every constraint. The weight
//! matrix is drawn from a finite mode set according to the current
//! semi-major axis.

use std::cell::Cell;
use std::ops::ControlFlow;

use nalgebra::{Matrix2, Matrix5, Vector5};

use crate::admissibility::{check_admissibility, Constraint, Rejection};
use crate::constraints::{c1, c2, c3, reference_admissible_margin, ConstraintLimits};
use crate::controller::{lyapunov_value, WeightMatrix};
use crate::elements::{Constants, FullState, SlowElements};
use crate::integrator::{Dopri5, Tolerances};
use crate::sim::{closed_loop_rate, pack_state, unpack_state};
use crate::{Error, Result};

/// How admissibility of a candidate reference is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Constraint minimisation over the Lyapunov sublevel set.
    LyapunovSet,
    /// Forward simulation of the frozen-reference closed loop.
    Prediction,
    /// No governor: the reference is X_des from the start.
    Off,
}

impl Backend {
    pub fn name(&self) -> &'static str {
        match self {
            Backend::LyapunovSet => "lyapunov-set",
            Backend::Prediction => "prediction",
            Backend::Off => "off",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lyapunov-set" => Ok(Backend::LyapunovSet),
            "prediction" => Ok(Backend::Prediction),
            "off" => Ok(Backend::Off),
            other => Err(Error::InvalidConfig(format!(
                "unknown backend `{other}` (expected lyapunov-set, prediction or off)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictionHorizon {
    /// Multiples of the Keplerian period at a(t_k).
    Periods(f64),
    Seconds(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionConfig {
    pub horizon: PredictionHorizon,
    /// Spacing of constraint samples along the prediction, s.
    pub sample: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// The prediction stops with success once V has dropped by this factor.
    pub terminal_ratio: f64,
    /// Thrust samples must satisfy ‖U‖² ≤ (1 − margin)·U_max².
    pub thrust_margin: f64,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self {
            horizon: PredictionHorizon::Periods(10.0),
            sample: 60.0,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            max_step: 60.0,
            terminal_ratio: 1e-6,
            thrust_margin: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GovernorConfig {
    /// Nominal step Δ.
    pub delta: f64,
    /// Backtracking factor γ.
    pub gamma: f64,
    /// Maximum increments tested per instant.
    pub n: usize,
    /// Seconds between governor instants.
    pub update_period: f64,
    pub backend: Backend,
    pub prediction: PredictionConfig,
    /// Coordinates of a candidate closer than this to X_des snap onto it.
    pub snap_tol: [f64; 5],
}

impl Default for GovernorConfig {
    fn default() -> Self {
        Self {
            delta: 0.01,
            gamma: 0.2,
            n: 12,
            update_period: 900.0,
            backend: Backend::LyapunovSet,
            prediction: PredictionConfig::default(),
            snap_tol: [1e-3, 1e-8, 1e-8, 1e-8, 1e-8],
        }
    }
}

impl GovernorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.delta > 0.0) {
            return bad("governor delta must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("governor gamma must lie in (0, 1)");
        }
        if self.n == 0 {
            return bad("governor n must be at least 1");
        }
        if !(self.update_period > 0.0) {
            return bad("governor update period must be positive");
        }
        if self.snap_tol.iter().any(|v| !(*v >= 0.0)) {
            return bad("snap tolerances must be non-negative");
        }
        let pc = &self.prediction;
        let horizon_ok = match pc.horizon {
            PredictionHorizon::Periods(k) | PredictionHorizon::Seconds(k) => k > 0.0,
        };
        if !horizon_ok
            || !(pc.sample > 0.0)
            || !(pc.rel_tol > 0.0)
            || !(pc.abs_tol > 0.0)
            || !(pc.max_step > 0.0)
            || !(pc.terminal_ratio > 0.0 && pc.terminal_ratio < 1.0)
            || !(pc.thrust_margin >= 0.0 && pc.thrust_margin < 1.0)
        {
            return bad("invalid prediction settings");
        }
        Ok(())
    }
}

/// Ordered weight matrices with semi-major-axis breakpoints: matrix 0 for
/// a ≥ thresholds[0], matrix k for thresholds[k] ≤ a < thresholds[k−1], and
/// the last matrix below the last threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    matrices: Vec<WeightMatrix>,
    thresholds: Vec<f64>,
}

impl ModeSet {
    pub fn new(matrices: Vec<WeightMatrix>, thresholds: Vec<f64>) -> Result<Self> {
        if matrices.is_empty() {
            return Err(Error::InvalidConfig("mode set needs at least one matrix".into()));
        }
        if thresholds.len() + 1 != matrices.len() {
            return Err(Error::InvalidConfig(format!(
                "{} matrices need {} thresholds, got {}",
                matrices.len(),
                matrices.len() - 1,
                thresholds.len()
            )));
        }
        if thresholds.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::InvalidConfig(
                "mode thresholds must be strictly decreasing".into(),
            ));
        }
        Ok(Self {
            matrices,
            thresholds,
        })
    }

    pub fn single(p: WeightMatrix) -> Self {
        Self {
            matrices: vec![p],
            thresholds: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn matrices(&self) -> &[WeightMatrix] {
        &self.matrices
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn get(&self, index: usize) -> &WeightMatrix {
        &self.matrices[index]
    }
}

/// Index of the mode whose band contains `a` (bands closed on the left).
pub fn select_p_des(a: f64, modes: &ModeSet) -> usize {
    modes
        .thresholds
        .iter()
        .position(|&t| a >= t)
        .unwrap_or(modes.thresholds.len())
}

/// Weight matrix whose (a, e) block is the diagonal P⁰ block rotated so the
/// long axis of the V sublevel cross-section follows the tangent of the
/// periapsis boundary a(1 − e) = r_min at `a_j`, i.e. by
/// α = arctan(r_min / a_j²). The other diagonal entries are copied.
pub fn build_rotated_p(p0_diag: [f64; 5], a_j: f64, r_min: f64) -> Result<WeightMatrix> {
    if p0_diag.iter().any(|v| !(*v > 0.0)) || !(a_j > 0.0) {
        return Err(Error::InvalidConfig(
            "rotated weight needs positive diagonal and semi-major axis".into(),
        ));
    }
    let alpha = (r_min / (a_j * a_j)).atan();
    let (s, c) = alpha.sin_cos();
    let rot = Matrix2::new(c, s, -s, c);
    let block = rot.transpose() * Matrix2::new(p0_diag[0], 0.0, 0.0, p0_diag[1]) * rot;
    let mut p = Matrix5::from_diagonal(&Vector5::from(p0_diag));
    p.fixed_view_mut::<2, 2>(0, 0).copy_from(&block);
    // exact symmetry
    p[(1, 0)] = p[(0, 1)];
    WeightMatrix::new(p)
}

/// X̃ʲ = X̃ʲ⁻¹ + Δ·E·(X_des − X̃ʲ⁻¹).
pub fn increment(
    prev: &SlowElements,
    x_des: &SlowElements,
    delta: f64,
    e_mat: &Matrix5<f64>,
) -> SlowElements {
    let p = prev.to_vector();
    SlowElements::from_vector(&(p + e_mat * (x_des.to_vector() - p) * delta))
}

/// Direction selector for instant `k`: a single coordinate (k mod 6) for
/// k mod 6 ∈ {0, …, 4}, every coordinate for k mod 6 = 5.
pub fn direction_schedule(k: u64) -> Matrix5<f64> {
    match (k % 6) as usize {
        5 => Matrix5::identity(),
        l => {
            let mut e = Matrix5::zeros();
            e[(l, l)] = 1.0;
            e
        }
    }
}

fn snap(cand: &SlowElements, x_des: &SlowElements, tol: &[f64; 5], e_mat: &Matrix5<f64>) -> SlowElements {
    let mut v = cand.to_vector();
    let d = x_des.to_vector();
    for m in 0..5 {
        if e_mat[(m, m)] != 0.0 && (d[m] - v[m]).abs() <= tol[m] {
            v[m] = d[m];
        }
    }
    SlowElements::from_vector(&v)
}

/// Diagnostics of one governor instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    /// Governor instant counter.
    pub k: u64,
    /// Mode matching a(t_k).
    pub p_desired: usize,
    pub mode_tested: bool,
    pub mode_switched: bool,
    /// Increment candidates tested.
    pub candidates: usize,
    /// Increment candidates accepted.
    pub accepted: usize,
    pub backtracked: bool,
    /// Step size of the accepted increments, 0 when nothing was accepted.
    pub step: f64,
    /// Coordinate moved (0–4) or 5 for the full-vector step.
    pub direction: usize,
}

impl Decision {
    pub fn held(&self) -> bool {
        self.accepted == 0
    }

    pub fn admissibility_queries(&self) -> usize {
        self.candidates + usize::from(self.mode_tested)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GovernorState {
    pub x_tilde: SlowElements,
    pub p_index: usize,
    /// Index of the next governor instant.
    pub k: u64,
    pub last: Option<Decision>,
}

impl GovernorState {
    /// X̃(0) = X(0) and the mode matching a(0); with the governor off the
    /// reference is X_des immediately.
    pub fn initial(x0: &SlowElements, x_des: &SlowElements, modes: &ModeSet, backend: Backend) -> Self {
        Self {
            x_tilde: if backend == Backend::Off { *x_des } else { *x0 },
            p_index: select_p_des(x0.a, modes),
            k: 0,
            last: None,
        }
    }
}

/// Admissibility under the configured backend.
pub fn admissibility(
    reference: &SlowElements,
    p: &WeightMatrix,
    x_k: &FullState,
    cfg: &GovernorConfig,
    lim: &ConstraintLimits,
    c: &Constants,
) -> std::result::Result<(), Rejection> {
    match cfg.backend {
        Backend::LyapunovSet => check_admissibility(reference, p, x_k, lim, c),
        Backend::Prediction => prediction_check(reference, p, x_k, &cfg.prediction, lim, c),
        Backend::Off => Ok(()),
    }
}

/// One governor instant at state `x_k`.
pub fn governor_step(
    state: &GovernorState,
    x_k: &FullState,
    x_des: &SlowElements,
    modes: &ModeSet,
    cfg: &GovernorConfig,
    lim: &ConstraintLimits,
    c: &Constants,
) -> GovernorState {
    let k = state.k;
    let e_mat = direction_schedule(k);
    let mut decision = Decision {
        k,
        p_desired: select_p_des(x_k.elements.a, modes),
        mode_tested: false,
        mode_switched: false,
        candidates: 0,
        accepted: 0,
        backtracked: false,
        step: 0.0,
        direction: (k % 6) as usize,
    };
    let mut next = GovernorState {
        x_tilde: state.x_tilde,
        p_index: state.p_index,
        k: k + 1,
        last: None,
    };
    if cfg.backend == Backend::Off {
        next.last = Some(decision);
        return next;
    }
    let ok = |r: &SlowElements, p: &WeightMatrix| admissibility(r, p, x_k, cfg, lim, c).is_ok();

    if decision.p_desired != state.p_index {
        decision.mode_tested = true;
        if ok(&state.x_tilde, modes.get(decision.p_desired)) {
            next.p_index = decision.p_desired;
            decision.mode_switched = true;
        }
    }

    let p = modes.get(next.p_index);
    let mut step = cfg.delta;
    let mut current = state.x_tilde;
    while decision.candidates < cfg.n {
        let cand = snap(&increment(&current, x_des, step, &e_mat), x_des, &cfg.snap_tol, &e_mat);
        if cand == current {
            break;
        }
        decision.candidates += 1;
        if ok(&cand, p) {
            current = cand;
            decision.accepted += 1;
            decision.step = step;
        } else if decision.accepted == 0 && !decision.backtracked {
            step *= cfg.gamma;
            decision.backtracked = true;
        } else {
            break;
        }
    }
    next.x_tilde = current;
    next.last = Some(decision);
    next
}

/// Prediction-based admissibility: simulate the closed loop with `reference`
/// and `p` frozen and accept when every sampled constraint holds until V has
/// contracted by the terminal ratio, or, failing that within the horizon,
/// when the sublevel-set test passes at the predicted terminal state.
pub fn prediction_admissible(
    reference: &SlowElements,
    p: &WeightMatrix,
    x_k: &FullState,
    cfg: &GovernorConfig,
    lim: &ConstraintLimits,
    c: &Constants,
) -> bool {
    prediction_check(reference, p, x_k, &cfg.prediction, lim, c).is_ok()
}

fn prediction_check(
    reference: &SlowElements,
    p: &WeightMatrix,
    x_k: &FullState,
    pc: &PredictionConfig,
    lim: &ConstraintLimits,
    c: &Constants,
) -> std::result::Result<(), Rejection> {
    if !reference_admissible_margin(reference, lim) {
        return Err(Rejection::Margin);
    }
    let thrust_floor = pc.thrust_margin * lim.u_max_squared();
    match c2(x_k, reference, p, lim, c) {
        Ok(v) if v >= thrust_floor => {}
        _ => return Err(Rejection::InstantThrust),
    }
    let v0 = lyapunov_value(&x_k.elements, reference, p);
    if v0 == 0.0 {
        return Ok(());
    }
    let v_term = pc.terminal_ratio * v0;
    let horizon = match pc.horizon {
        PredictionHorizon::Periods(n) => n * x_k.elements.period(c),
        PredictionHorizon::Seconds(s) => s,
    };

    let mut ig = Dopri5::new(Tolerances {
        rel: pc.rel_tol,
        abs: pc.abs_tol,
        max_step: pc.max_step.min(pc.sample),
    });
    let verdict: Cell<Option<std::result::Result<(), Rejection>>> = Cell::new(None);
    let mut observe = |_t: f64, y: &nalgebra::Vector6<f64>| {
        let x = unpack_state(y);
        let failed = if c1(&x.elements, lim) < 0.0 {
            Some(Constraint::Periapsis)
        } else if c3(&x.elements, lim) < 0.0 {
            Some(Constraint::Eccentricity)
        } else {
            match c2(&x, reference, p, lim, c) {
                Ok(v) if v >= thrust_floor => None,
                _ => Some(Constraint::Thrust),
            }
        };
        if let Some(which) = failed {
            verdict.set(Some(Err(Rejection::Predicted(which))));
            return ControlFlow::Break(());
        }
        if lyapunov_value(&x.elements, reference, p) <= v_term {
            verdict.set(Some(Ok(())));
            return ControlFlow::Break(());
        }
        ControlFlow::Continue(())
    };

    let rhs = |_t: f64, y: &nalgebra::Vector6<f64>| closed_loop_rate(y, reference, p, c);
    let mut t = 0.0;
    let mut y = pack_state(x_k);
    while t < horizon && verdict.get().is_none() {
        let t_next = (t + pc.sample).min(horizon);
        match ig.integrate(rhs, t, y, t_next, &mut observe) {
            Ok((t_reached, y_reached)) => {
                t = t_reached;
                y = y_reached;
            }
            Err(_) => return Err(Rejection::IntegrationFailure),
        }
    }
    match verdict.get() {
        Some(v) => v,
        None => check_admissibility(reference, p, &unpack_state(&y), lim, c),
    }
}
