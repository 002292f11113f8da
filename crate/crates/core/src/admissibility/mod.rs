//! Constraint admissibility of a reference over the Lyapunov sublevel set
//!
//! Q(X̃, P, X(t_k)) = { X : V(X, X̃, P) ≤ V(X(t_k), X̃, P) }.
//!
//! With the reference frozen, the closed loop never leaves Q, so a reference
//! is admissible when each constraint is non-negative everywhere on Q (and,
//! for the thrust constraint, for every true anomaly). The minimisations use
//! the substitution X = X̃ + ρ L⁻ᵀ w with P = LLᵀ and ρ = √(2·level), which
//! turns Q into the unit ball ‖w‖ ≤ 1.

mod nlp;

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Vector5, Vector6};

use crate::constraints::{c1, c2, c3, reference_admissible_margin, ConstraintLimits};
use crate::controller::{lyapunov_value, WeightMatrix};
use crate::elements::{
    gve_matrix, wrap_two_pi, Constants, FullState, SlowElements, ECC_FLOOR, INC_FLOOR,
};

use nlp::{multistart, Objective};

pub use nlp::{ACCEPT_TOL, MAX_ITERATIONS, STATIONARITY_TOL};

/// Slack kept between optimiser iterates and the GVE singular set when the
/// thrust constraint is evaluated.
pub const ELEMENT_GUARD: f64 = 1e-8;

/// Number of true-anomaly samples used to seed the thrust-constraint search.
const THETA_SEEDS: usize = 16;
/// Seeds polished in addition to the warm start.
const POLISH_LINEAR: usize = 3;
const POLISH_THRUST: usize = 4;

/// Ellipsoidal sublevel set of V centred at the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct SublevelSet {
    pub center: SlowElements,
    pub p: WeightMatrix,
    pub level: f64,
    /// State whose V value defines the level, when known. Used as warm start.
    pub anchor: Option<FullState>,
}

impl SublevelSet {
    /// Sublevel set through `x_k`: level = V(x_k, center, P).
    pub fn through(center: SlowElements, p: WeightMatrix, x_k: &FullState) -> Self {
        let level = lyapunov_value(&x_k.elements, &center, &p);
        Self {
            center,
            p,
            level,
            anchor: Some(*x_k),
        }
    }

    pub fn with_level(center: SlowElements, p: WeightMatrix, level: f64) -> Self {
        assert!(level >= 0.0, "sublevel-set level must be non-negative");
        Self {
            center,
            p,
            level,
            anchor: None,
        }
    }

    /// Radius ρ of the ball in whitened coordinates.
    pub fn radius(&self) -> f64 {
        (2.0 * self.level).sqrt()
    }

    pub fn contains(&self, x: &SlowElements) -> bool {
        lyapunov_value(x, &self.center, &self.p) <= self.level * (1.0 + 1e-12)
    }

    /// Maps a point of the unit ball to elements.
    pub fn point(&self, w: &Vector5<f64>) -> SlowElements {
        let offset = self.p.cholesky_inverse().transpose() * (w * self.radius());
        SlowElements::from_vector(&(self.center.to_vector() + offset))
    }

    /// Inverse of [`SublevelSet::point`].
    pub fn whiten(&self, x: &SlowElements) -> Vector5<f64> {
        let rho = self.radius();
        if rho == 0.0 {
            return Vector5::zeros();
        }
        self.p.cholesky().transpose() * (x.to_vector() - self.center.to_vector()) / rho
    }

    /// Unit-ball point minimising a linear function with gradient `grad`
    /// (in element coordinates), together with the whitened gradient norm.
    fn linear_minimizer(&self, grad: &Vector5<f64>) -> (Vector5<f64>, f64) {
        let gw = self.p.cholesky_inverse() * grad;
        let n = gw.norm();
        if n == 0.0 {
            (Vector5::zeros(), 0.0)
        } else {
            (-gw / n, n)
        }
    }
}

/// Outcome of one constraint minimisation over a sublevel set.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub minimum: f64,
    pub argmin: SlowElements,
    /// Minimising true anomaly (thrust constraint only), in [0, 2π).
    pub theta: Option<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl SolveReport {
    fn trivial(minimum: f64, argmin: SlowElements, theta: Option<f64>) -> Self {
        Self {
            minimum,
            argmin,
            theta,
            converged: true,
            iterations: 0,
        }
    }
}

fn ball_seeds(q: &SublevelSet, linear: Vector5<f64>) -> Vec<Vector5<f64>> {
    let mut seeds = vec![Vector5::zeros(), linear];
    if let Some(anchor) = &q.anchor {
        seeds.push(q.whiten(&anchor.elements));
    }
    for m in 0..5 {
        let mut e = Vector5::zeros();
        e[m] = 1.0;
        seeds.push(e);
        seeds.push(-e);
    }
    seeds
}

/// A constraint that is affine or bilinear in the slow elements, scaled so
/// the unit-ball problem is O(1).
struct ElementObjective<'a, F> {
    q: &'a SublevelSet,
    f: F,
    grad: fn(&SlowElements) -> Vector5<f64>,
    offset: f64,
    scale: f64,
}

impl<F: Fn(&SlowElements) -> f64> Objective<5> for ElementObjective<'_, F> {
    fn value(&self, w: &Vector5<f64>) -> f64 {
        ((self.f)(&self.q.point(w)) - self.offset) / self.scale
    }

    fn gradient(&self, w: &Vector5<f64>) -> Vector5<f64> {
        let g = (self.grad)(&self.q.point(w));
        self.q.p.cholesky_inverse() * g * (self.q.radius() / self.scale)
    }
}

fn minimize_element_function<F: Fn(&SlowElements) -> f64>(
    q: &SublevelSet,
    f: F,
    grad: fn(&SlowElements) -> Vector5<f64>,
) -> SolveReport {
    let at_center = f(&q.center);
    if q.level == 0.0 {
        return SolveReport::trivial(at_center, q.center, None);
    }
    let (linear, gnorm) = q.linear_minimizer(&grad(&q.center));
    let scale = if gnorm > 0.0 { gnorm * q.radius() } else { 1.0 };
    let obj = ElementObjective {
        q,
        f,
        grad,
        offset: at_center,
        scale,
    };
    let seeds = ball_seeds(q, linear);
    let (sol, iterations) = multistart(&obj, &seeds, POLISH_LINEAR, &[]);
    let argmin = q.point(&sol.x);
    SolveReport {
        minimum: (obj.f)(&argmin),
        argmin,
        theta: None,
        converged: sol.converged(),
        iterations,
    }
}

fn c1_gradient(x: &SlowElements) -> Vector5<f64> {
    Vector5::new(1.0 - x.e, -x.a, 0.0, 0.0, 0.0)
}

fn c3_gradient(_: &SlowElements) -> Vector5<f64> {
    Vector5::new(0.0, 1.0, 0.0, 0.0, 0.0)
}

/// min over Q of c₁ = a(1 − e) − r_min.
pub fn c1_star(q: &SublevelSet, lim: &ConstraintLimits) -> SolveReport {
    minimize_element_function(q, |x| c1(x, lim), c1_gradient)
}

/// min over Q of c₃ = e − e_min.
pub fn c3_star(q: &SublevelSet, lim: &ConstraintLimits) -> SolveReport {
    minimize_element_function(q, |x| c3(x, lim), c3_gradient)
}

/// Exact minimum of c₃ over Q: the objective is linear, so
/// c₃* = e_X̃ − e_min − √(2·level·(P⁻¹)_ee).
pub fn c3_star_closed_form(q: &SublevelSet, lim: &ConstraintLimits) -> f64 {
    q.center.e - lim.e_min - (2.0 * q.level * q.p.inverse_diagonal(1)).sqrt()
}

fn guarded(mut x: SlowElements) -> SlowElements {
    x.a = x.a.max(ELEMENT_GUARD);
    x.e = x.e.clamp(ECC_FLOOR + ELEMENT_GUARD, 1.0 - ELEMENT_GUARD);
    x.i = x
        .i
        .clamp(INC_FLOOR + ELEMENT_GUARD, PI - INC_FLOOR - ELEMENT_GUARD);
    x
}

/// −‖U‖² over (w, θ), scaled.
struct ThrustObjective<'a> {
    q: &'a SublevelSet,
    c: &'a Constants,
    scale: f64,
}

impl ThrustObjective<'_> {
    /// ‖U‖² at whitened point w and anomaly θ. P(X − X̃) = ρ L w.
    fn thrust_squared(&self, w: &Vector5<f64>, theta: f64) -> f64 {
        let x = FullState::new(guarded(self.q.point(w)), theta);
        match gve_matrix(&x, self.c) {
            Ok(g) => {
                let pd = self.q.p.cholesky() * (w * self.q.radius());
                (g.transpose() * pd).norm_squared()
            }
            Err(_) => f64::INFINITY,
        }
    }
}

impl Objective<6> for ThrustObjective<'_> {
    fn value(&self, v: &Vector6<f64>) -> f64 {
        let w = Vector5::new(v[0], v[1], v[2], v[3], v[4]);
        -self.thrust_squared(&w, v[5]) / self.scale
    }
}

fn join(w: &Vector5<f64>, theta: f64) -> Vector6<f64> {
    Vector6::new(w[0], w[1], w[2], w[3], w[4], theta)
}

/// Dominant right singular direction of Gᵀ(X̃, θ) L.
fn dominant_direction(q: &SublevelSet, theta: f64, c: &Constants) -> Option<Vector5<f64>> {
    let g = gve_matrix(&FullState::new(guarded(q.center), theta), c).ok()?;
    let a = g.transpose() * q.p.cholesky();
    let aat: Matrix3<f64> = a * a.transpose();
    let eig = aat.symmetric_eigen();
    let k = eig.eigenvalues.imax();
    let v = a.transpose() * eig.eigenvectors.column(k);
    let n = v.norm();
    (n > 0.0).then(|| v / n)
}

/// min over Q × [0, 2π) of c₂ = U_max² − ‖Gᵀ(X, θ) P (X − X̃)‖².
pub fn c2_star(q: &SublevelSet, lim: &ConstraintLimits, c: &Constants) -> SolveReport {
    let u2 = lim.u_max_squared();
    let theta0 = q.anchor.map(|a| a.theta).unwrap_or(0.0);
    if q.level == 0.0 {
        return SolveReport::trivial(u2, q.center, Some(wrap_two_pi(theta0)));
    }

    let mut seeds: Vec<Vector6<f64>> = Vec::with_capacity(11 + 2 * THETA_SEEDS);
    let mut always = Vec::new();
    if let Some(anchor) = &q.anchor {
        always.push(seeds.len());
        seeds.push(join(&q.whiten(&anchor.elements), anchor.theta));
    }
    for m in 0..5 {
        let mut e = Vector5::zeros();
        e[m] = 1.0;
        seeds.push(join(&e, theta0));
        seeds.push(join(&-e, theta0));
    }
    for j in 0..THETA_SEEDS {
        let theta = TAU * j as f64 / THETA_SEEDS as f64;
        if let Some(v) = dominant_direction(q, theta, c) {
            seeds.push(join(&v, theta));
            seeds.push(join(&-v, theta));
        }
    }

    let unscaled = ThrustObjective { q, c, scale: 1.0 };
    let scale = seeds
        .iter()
        .map(|s| -unscaled.value(&nlp::project(s)))
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return SolveReport::trivial(u2, q.center, Some(wrap_two_pi(theta0)));
    }
    let obj = ThrustObjective { q, c, scale };
    let (sol, iterations) = multistart(&obj, &seeds, POLISH_THRUST, &always);
    let w = Vector5::new(sol.x[0], sol.x[1], sol.x[2], sol.x[3], sol.x[4]);
    let thrust2 = obj.thrust_squared(&w, sol.x[5]);
    SolveReport {
        minimum: u2 - thrust2,
        argmin: q.point(&w),
        theta: Some(wrap_two_pi(sol.x[5])),
        converged: sol.converged() && thrust2.is_finite(),
        iterations,
    }
}

/// Which test rejected a reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    Margin,
    InstantThrust,
    Unconverged(Constraint),
    Violated(Constraint),
    /// A forward prediction crossed a constraint.
    Predicted(Constraint),
    IntegrationFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    Periapsis,
    Thrust,
    Eccentricity,
}

/// Admissibility of `reference` with weight `p` at the state `x_k`; the
/// checks run cheapest first and stop at the first failure.
pub fn check_admissibility(
    reference: &SlowElements,
    p: &WeightMatrix,
    x_k: &FullState,
    lim: &ConstraintLimits,
    c: &Constants,
) -> Result<(), Rejection> {
    if !reference_admissible_margin(reference, lim) {
        return Err(Rejection::Margin);
    }
    match c2(x_k, reference, p, lim, c) {
        Ok(v) if v >= 0.0 => {}
        _ => return Err(Rejection::InstantThrust),
    }
    let q = SublevelSet::through(*reference, p.clone(), x_k);
    let judge = |report: SolveReport, which| {
        if !report.converged {
            Err(Rejection::Unconverged(which))
        } else if !(report.minimum >= 0.0) {
            Err(Rejection::Violated(which))
        } else {
            Ok(())
        }
    };
    judge(c3_star(&q, lim), Constraint::Eccentricity)?;
    judge(c1_star(&q, lim), Constraint::Periapsis)?;
    judge(c2_star(&q, lim, c), Constraint::Thrust)
}

/// True iff all three constraint minima over Q converged and are
/// non-negative, the thrust constraint holds at `x_k`, and the reference
/// keeps its boundary margins.
pub fn is_admissible(
    reference: &SlowElements,
    p: &WeightMatrix,
    x_k: &FullState,
    lim: &ConstraintLimits,
    c: &Constants,
) -> bool {
    check_admissibility(reference, p, x_k, lim, c).is_ok()
}

#[cfg(test)]
mod tests;
