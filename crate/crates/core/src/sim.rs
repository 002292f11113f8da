//! Closed-loop simulation: slow elements and true anomaly under the tracking
//! law, with the governor updating (X̃, P) on a fixed time grid.

use std::ops::ControlFlow;

use nalgebra::{Matrix5, SVector, Vector5, Vector6};

type Vector7 = SVector<f64, 7>;

use crate::constraints::{c1, c3, ConstraintLimits};
use crate::controller::{lyapunov_value, WeightMatrix};
use crate::elements::{
    gve_matrix, periapsis_radius, radius, theta_rate, wrap_two_pi, Constants, FullState,
    SlowElements, ThrustAccel,
};
use crate::governor::{governor_step, Backend, Decision, GovernorConfig, GovernorState, ModeSet};
use crate::integrator::{Dopri5, Tolerances};
use crate::{Error, Result};

pub fn pack_state(x: &FullState) -> Vector6<f64> {
    let e = &x.elements;
    Vector6::new(e.a, e.e, e.i, e.raan, e.argp, x.theta)
}

pub fn unpack_state(y: &Vector6<f64>) -> FullState {
    FullState::new(SlowElements::new(y[0], y[1], y[2], y[3], y[4]), y[5])
}

fn closed_loop(
    y: &Vector6<f64>,
    reference: &SlowElements,
    p: &WeightMatrix,
    c: &Constants,
) -> Result<(Vector6<f64>, ThrustAccel)> {
    let x = unpack_state(y);
    closed_loop_with_error(&x, &(x.elements.to_vector() - reference.to_vector()), p, c)
}

/// Closed-loop rates at `x` with the tracking error `d` supplied separately,
/// so it keeps full precision when it is tiny next to the elements.
fn closed_loop_with_error(
    x: &FullState,
    d: &Vector5<f64>,
    p: &WeightMatrix,
    c: &Constants,
) -> Result<(Vector6<f64>, ThrustAccel)> {
    let g = gve_matrix(x, c)?;
    let d = p.matrix() * d;
    let u = ThrustAccel::from_vector(&(-(g.transpose() * d)));
    let slow = g * u.to_vector();
    let th = theta_rate(x, &u, c)?;
    Ok((
        Vector6::new(slow[0], slow[1], slow[2], slow[3], slow[4], th),
        u,
    ))
}

/// Time derivative of (a, e, i, Ω, ω, θ) with the tracking law toward
/// `reference` closed around the Gauss variational equations.
pub fn closed_loop_rate(
    y: &Vector6<f64>,
    reference: &SlowElements,
    p: &WeightMatrix,
    c: &Constants,
) -> Result<Vector6<f64>> {
    closed_loop(y, reference, p, c).map(|(dy, _)| dy)
}

/// Propagates the closed loop with (reference, p) frozen for `duration`
/// seconds, calling `visit` at every accepted step.
pub fn propagate_frozen<F>(
    x0: &FullState,
    reference: &SlowElements,
    p: &WeightMatrix,
    c: &Constants,
    tol: Tolerances,
    duration: f64,
    mut visit: F,
) -> Result<FullState>
where
    F: FnMut(f64, &FullState),
{
    tol.validate()?;
    let mut ig = Dopri5::new(tol);
    let (_, y) = ig.integrate(
        |_, y: &Vector6<f64>| closed_loop_rate(y, reference, p, c),
        0.0,
        pack_state(x0),
        duration,
        |t, y| {
            visit(t, &unpack_state(y));
            ControlFlow::Continue(())
        },
    )?;
    Ok(unpack_state(&y))
}

/// Logged samples below these values count as constraint violations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViolationTolerances {
    /// km
    pub c1: f64,
    /// km²/s⁴
    pub c2: f64,
    pub c3: f64,
}

impl Default for ViolationTolerances {
    fn default() -> Self {
        Self {
            c1: 1e-3,
            c2: 1e-12,
            c3: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Simulated duration, s.
    pub t_end: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// s
    pub max_step: f64,
    /// Spacing of logged samples, s.
    pub log_period: f64,
    /// The run stops once X̃ = X_des, V(X, X_des, P) has dropped below
    /// this fraction of V(X(0), X_des, P) and X is inside the settle band.
    pub convergence_ratio: f64,
    /// Relative band on a and e for the stopping rule and maneuver duration.
    pub settle_rel: f64,
    /// Band on the angles, rad.
    pub settle_ang: f64,
    pub violation: ViolationTolerances,
    /// Stop with [`SimError::Violation`] at the first violating sample.
    pub abort_on_violation: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_end: 30.0 * 86_400.0,
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: 60.0,
            log_period: 60.0,
            convergence_ratio: 1e-10,
            settle_rel: 1e-3,
            settle_ang: 1e-3,
            violation: ViolationTolerances::default(),
            abort_on_violation: true,
        }
    }
}

impl SimConfig {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            rel: self.rel_tol,
            abs: self.abs_tol,
            max_step: self.max_step,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0) || !(self.log_period > 0.0) {
            return Err(Error::InvalidConfig(
                "t_end and log_period must be positive".into(),
            ));
        }
        if !(self.convergence_ratio > 0.0) || !(self.settle_rel > 0.0) || !(self.settle_ang > 0.0) {
            return Err(Error::InvalidConfig(
                "convergence ratio and settle bands must be positive".into(),
            ));
        }
        let v = &self.violation;
        if !(v.c1 >= 0.0 && v.c2 >= 0.0 && v.c3 >= 0.0) {
            return Err(Error::InvalidConfig(
                "violation tolerances must be non-negative".into(),
            ));
        }
        self.tolerances().validate()
    }
}

/// One logged sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// Index of the governor instant whose (X̃, P) drives this sample.
    pub segment: u64,
    pub state: FullState,
    pub reference: SlowElements,
    pub p_index: usize,
    pub thrust: ThrustAccel,
    /// V(X, X̃, P) with the active reference and weight.
    pub v: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub r: f64,
    pub r_p: f64,
    /// ∫‖U‖dt so far, km/s.
    pub delta_v: f64,
}

/// Governor instant with the state it saw and the (X̃, P) it produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GovernorEvent {
    pub t: f64,
    pub state: FullState,
    pub reference: SlowElements,
    pub p_index: usize,
    pub decision: Decision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    TimeLimit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMargins {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub samples: Vec<Sample>,
    pub events: Vec<GovernorEvent>,
    pub termination: Termination,
    pub backend: Backend,
}

impl TrajectoryRecord {
    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    pub fn min_margins(&self) -> MinMargins {
        let fold = |f: fn(&Sample) -> f64| {
            self.samples.iter().map(f).fold(f64::INFINITY, f64::min)
        };
        MinMargins {
            c1: fold(|s| s.c1),
            c2: fold(|s| s.c2),
            c3: fold(|s| s.c3),
        }
    }

    pub fn delta_v(&self) -> f64 {
        self.last().map_or(0.0, |s| s.delta_v)
    }

    /// Earliest logged time from which every later sample keeps a and e
    /// within relative `rel` of the target and the angles within `ang` rad.
    /// `None` when the final sample is outside the band.
    pub fn maneuver_duration(&self, x_des: &SlowElements, rel: f64, ang: f64) -> Option<f64> {
        let mut duration = None;
        for s in self.samples.iter().rev() {
            if !within_band(&s.state.elements, x_des, rel, ang) {
                break;
            }
            duration = Some(s.t);
        }
        duration
    }

    /// Samples grouped by governor instant.
    pub fn segments(&self) -> impl Iterator<Item = &[Sample]> {
        self.samples.chunk_by(|a, b| a.segment == b.segment)
    }
}

/// Whether `x` is within relative `rel` of `target` in a and e and within
/// `ang` rad in the three angles.
pub fn within_band(x: &SlowElements, target: &SlowElements, rel: f64, ang: f64) -> bool {
    (x.a - target.a).abs() <= rel * target.a.abs()
        && (x.e - target.e).abs() <= rel * target.e.abs()
        && (x.i - target.i).abs() <= ang
        && (x.raan - target.raan).abs() <= ang
        && (x.argp - target.argp).abs() <= ang
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(Error),
    #[error("initial state infeasible: {0}")]
    InfeasibleInitial(String),
    #[error("integration failed: {error}")]
    Integration {
        error: Error,
        record: Box<TrajectoryRecord>,
    },
    #[error("constraint violated at t = {t} s: c1 = {c1:e}, c2 = {c2:e}, c3 = {c3:e}", t = sample.t, c1 = sample.c1, c2 = sample.c2, c3 = sample.c3)]
    Violation {
        sample: Box<Sample>,
        record: Box<TrajectoryRecord>,
    },
}

/// Coordinates used inside one segment: w = Lᵀ(X − X̃)/s with P = LLᵀ and
/// s = √(2V(t_k)), the anomaly advance θ − θ(t_k), and ΔV. With V = ½s²‖w‖²
/// the integrator's error control is relative to V however small it gets.
struct Frame {
    reference: Vector5<f64>,
    theta0: f64,
    scale: f64,
    lt: Matrix5<f64>,
    lt_inv: Matrix5<f64>,
}

impl Frame {
    fn new(y: &Vector7, reference: &SlowElements, p: &WeightMatrix) -> Self {
        let lt = p.cholesky().transpose();
        let r = reference.to_vector();
        let s = (lt * (y.fixed_rows::<5>(0) - r)).norm();
        Self {
            reference: r,
            theta0: y[5],
            scale: if s > 0.0 { s } else { 1.0 },
            lt,
            lt_inv: p.cholesky_inverse().transpose(),
        }
    }

    fn enter(&self, y: &Vector7) -> Vector7 {
        let w = self.lt * (y.fixed_rows::<5>(0) - self.reference) / self.scale;
        Vector7::from([w[0], w[1], w[2], w[3], w[4], y[5] - self.theta0, y[6]])
    }

    fn error(&self, z: &Vector7) -> Vector5<f64> {
        self.lt_inv * z.fixed_rows::<5>(0) * self.scale
    }

    fn absolute(&self, z: &Vector7) -> Vector7 {
        let x = self.reference + self.lt_inv * z.fixed_rows::<5>(0) * self.scale;
        Vector7::from([x[0], x[1], x[2], x[3], x[4], self.theta0 + z[5], z[6]])
    }

    fn rate(&self, dy: &Vector6<f64>, u: &ThrustAccel) -> Vector7 {
        let dw = self.lt * dy.fixed_rows::<5>(0) / self.scale;
        Vector7::from([dw[0], dw[1], dw[2], dw[3], dw[4], dy[5], u.norm()])
    }

    fn lyapunov(&self, z: &Vector7) -> f64 {
        0.5 * (self.scale * z.fixed_rows::<5>(0).norm()).powi(2)
    }
}

struct Active<'a> {
    reference: SlowElements,
    frame: Frame,
    p: &'a WeightMatrix,
    p_index: usize,
    segment: u64,
}

/// `z` is in the coordinates of `act.frame`.
fn sample_at(
    t: f64,
    z: &Vector7,
    act: &Active<'_>,
    lim: &ConstraintLimits,
    c: &Constants,
) -> Result<Sample> {
    let y = act.frame.absolute(z);
    let x = unpack_state(&y.fixed_rows::<6>(0).into_owned());
    let (_, u) = closed_loop_with_error(&x, &act.frame.error(z), act.p, c)?;
    Ok(Sample {
        t,
        segment: act.segment,
        state: x,
        reference: act.reference,
        p_index: act.p_index,
        thrust: u,
        v: act.frame.lyapunov(z),
        c1: c1(&x.elements, lim),
        c2: lim.u_max_squared() - u.norm_squared(),
        c3: c3(&x.elements, lim),
        r: radius(&x),
        r_p: periapsis_radius(&x.elements),
        delta_v: y[6],
    })
}

fn violates(s: &Sample, tol: &ViolationTolerances) -> bool {
    s.c1 < -tol.c1 || s.c2 < -tol.c2 || s.c3 < -tol.c3
}

/// Simulates the governed closed loop from `x0` toward `x_des`.
///
/// Governor instants fall on t_k = k·update_period starting at t = 0;
/// samples are logged every `log_period` seconds on the interval
/// [t_k, t_{k+1}) belonging to instant k, plus a final sample at the stop
/// time.
pub fn run_closed_loop(
    x0: &FullState,
    x_des: &SlowElements,
    modes: &ModeSet,
    gov: &GovernorConfig,
    lim: &ConstraintLimits,
    c: &Constants,
    cfg: &SimConfig,
) -> std::result::Result<TrajectoryRecord, SimError> {
    cfg.validate().map_err(SimError::Config)?;
    gov.validate().map_err(SimError::Config)?;
    lim.validate().map_err(SimError::Config)?;
    x0.elements.validate().map_err(SimError::Config)?;
    x_des.validate().map_err(SimError::Config)?;
    if c1(&x0.elements, lim) < 0.0 || c3(&x0.elements, lim) < 0.0 {
        return Err(SimError::InfeasibleInitial(format!(
            "c1 = {:e} km, c3 = {:e}",
            c1(&x0.elements, lim),
            c3(&x0.elements, lim)
        )));
    }

    let mut record = TrajectoryRecord {
        samples: Vec::new(),
        events: Vec::new(),
        termination: Termination::TimeLimit,
        backend: gov.backend,
    };
    let mut gs = GovernorState::initial(&x0.elements, x_des, modes, gov.backend);
    let v_start: Vec<f64> = modes
        .matrices()
        .iter()
        .map(|p| lyapunov_value(&x0.elements, x_des, p))
        .collect();

    let mut ig = Dopri5::new(cfg.tolerances());
    let mut t = 0.0;
    let mut y = Vector7::from([
        x0.elements.a,
        x0.elements.e,
        x0.elements.i,
        x0.elements.raan,
        x0.elements.argp,
        x0.theta,
        0.0,
    ]);

    macro_rules! fail {
        ($err:expr) => {
            return Err(SimError::Integration {
                error: $err,
                record: Box::new(record),
            })
        };
    }

    let mut k: u64 = 0;
    'outer: loop {
        let t_k = k as f64 * gov.update_period;
        let x_k = unpack_state(&y.fixed_rows::<6>(0).into_owned());
        gs = governor_step(&gs, &x_k, x_des, modes, gov, lim, c);
        let decision = gs.last.expect("governor step records a decision");
        record.events.push(GovernorEvent {
            t: t_k,
            state: x_k,
            reference: gs.x_tilde,
            p_index: gs.p_index,
            decision,
        });
        let act = Active {
            frame: Frame::new(&y, &gs.x_tilde, modes.get(gs.p_index)),
            reference: gs.x_tilde,
            p: modes.get(gs.p_index),
            p_index: gs.p_index,
            segment: k,
        };
        let t_next = ((k + 1) as f64 * gov.update_period).min(cfg.t_end);
        let p = act.p;
        let frame = &act.frame;
        let mut z = frame.enter(&y);
        let rhs = |_t: f64, z: &Vector7| -> Result<Vector7> {
            let x = unpack_state(&frame.absolute(z).fixed_rows::<6>(0).into_owned());
            let (dy, u) = closed_loop_with_error(&x, &frame.error(z), p, c)?;
            Ok(frame.rate(&dy, &u))
        };

        let mut j: u64 = 0;
        loop {
            // log grid anchored at t_k so every segment starts with a sample
            let t_log = t_k + j as f64 * cfg.log_period;
            if t_log >= t_next {
                break;
            }
            if t_log > t {
                match ig.integrate(rhs, t, z, t_log, |_, _| ControlFlow::Continue(())) {
                    Ok((tr, zr)) => {
                        t = tr;
                        z = zr;
                    }
                    Err(e) => fail!(e),
                }
            }
            let s = match sample_at(t, &z, &act, lim, c) {
                Ok(s) => s,
                Err(e) => fail!(e),
            };
            record.samples.push(s);
            if cfg.abort_on_violation && violates(&s, &cfg.violation) {
                return Err(SimError::Violation {
                    sample: Box::new(s),
                    record: Box::new(record),
                });
            }
            let v_des = lyapunov_value(&s.state.elements, x_des, act.p);
            if gs.x_tilde == *x_des
                && v_des < cfg.convergence_ratio * v_start[act.p_index]
                && within_band(&s.state.elements, x_des, cfg.settle_rel, cfg.settle_ang)
            {
                record.termination = Termination::Converged;
                break 'outer;
            }
            j += 1;
        }

        match ig.integrate(rhs, t, z, t_next, |_, _| ControlFlow::Continue(())) {
            Ok((tr, zr)) => {
                t = tr;
                z = zr;
            }
            Err(e) => fail!(e),
        }
        y = frame.absolute(&z);
        if t_next >= cfg.t_end {
            let s = match sample_at(t, &z, &act, lim, c) {
                Ok(s) => s,
                Err(e) => fail!(e),
            };
            record.samples.push(s);
            if cfg.abort_on_violation && violates(&s, &cfg.violation) {
                return Err(SimError::Violation {
                    sample: Box::new(s),
                    record: Box::new(record),
                });
            }
            break;
        }
        k += 1;
    }
    Ok(record)
}

/// Wrapped true anomaly for output.
pub fn output_theta(x: &FullState) -> f64 {
    wrap_two_pi(x.theta)
}
