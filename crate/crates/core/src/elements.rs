//! Classical orbital elements and the Gauss variational equations in
//! radial/transverse/normal (S, T, W) thrust components.

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Matrix5x3, Vector3, Vector5};

use crate::{Error, Result};

/// Eccentricity below which the argument-of-periapsis row of the GVEs is
/// treated as singular.
pub const ECC_FLOOR: f64 = 1e-9;
/// Distance from 0 or π below which the node rows are treated as singular.
pub const INC_FLOOR: f64 = 1e-9;

/// Earth gravitational parameter, km³/s².
pub const MU_EARTH: f64 = 3.986004418e5;

/// The five slowly varying elements X = (a, e, i, Ω, ω).
///
/// Angles are kept unwrapped while integrating so that the tracking error
/// X − X̃ stays continuous; use [`SlowElements::normalized`] at output time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlowElements {
    /// Semi-major axis, km.
    pub a: f64,
    pub e: f64,
    /// Inclination, rad.
    pub i: f64,
    /// Right ascension of the ascending node, rad.
    pub raan: f64,
    /// Argument of periapsis, rad.
    pub argp: f64,
}

impl SlowElements {
    pub const fn new(a: f64, e: f64, i: f64, raan: f64, argp: f64) -> Self {
        Self {
            a,
            e,
            i,
            raan,
            argp,
        }
    }

    /// Builds elements after checking the elliptic-regime invariants.
    pub fn try_new(a: f64, e: f64, i: f64, raan: f64, argp: f64) -> Result<Self> {
        let x = Self::new(a, e, i, raan, argp);
        x.validate()?;
        Ok(x)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.e, self.i, self.raan, self.argp]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidElements(format!("non-finite value in {self:?}")));
        }
        if self.a <= 0.0 {
            return Err(Error::InvalidElements(format!(
                "semi-major axis must be positive, got {}",
                self.a
            )));
        }
        if !(0.0..1.0).contains(&self.e) {
            return Err(Error::InvalidElements(format!(
                "eccentricity must lie in [0, 1), got {}",
                self.e
            )));
        }
        if !(0.0..=PI).contains(&self.i) {
            return Err(Error::InvalidElements(format!(
                "inclination must lie in [0, pi], got {}",
                self.i
            )));
        }
        Ok(())
    }

    pub fn to_vector(&self) -> Vector5<f64> {
        Vector5::new(self.a, self.e, self.i, self.raan, self.argp)
    }

    pub fn from_vector(v: &Vector5<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    /// Copy with Ω and ω wrapped into [0, 2π).
    pub fn normalized(&self) -> Self {
        Self {
            raan: wrap_two_pi(self.raan),
            argp: wrap_two_pi(self.argp),
            ..*self
        }
    }

    /// Semi-latus rectum p = a(1 − e²).
    pub fn semi_latus_rectum(&self) -> f64 {
        self.a * (1.0 - self.e * self.e)
    }

    /// Keplerian period, s.
    pub fn period(&self, c: &Constants) -> f64 {
        TAU * (self.a.powi(3) / c.mu).sqrt()
    }
}

/// Slow elements plus the true anomaly θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullState {
    pub elements: SlowElements,
    /// True anomaly, rad.
    pub theta: f64,
}

impl FullState {
    pub const fn new(elements: SlowElements, theta: f64) -> Self {
        Self { elements, theta }
    }

    pub fn normalized(&self) -> Self {
        Self {
            elements: self.elements.normalized(),
            theta: wrap_two_pi(self.theta),
        }
    }
}

/// Thrust acceleration in the local radial/transverse/normal frame, km/s².
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ThrustAccel {
    pub s: f64,
    pub t: f64,
    pub w: f64,
}

impl ThrustAccel {
    pub const ZERO: Self = Self {
        s: 0.0,
        t: 0.0,
        w: 0.0,
    };

    pub const fn new(s: f64, t: f64, w: f64) -> Self {
        Self { s, t, w }
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.s, self.t, self.w)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn norm_squared(&self) -> f64 {
        self.s * self.s + self.t * self.t + self.w * self.w
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }
}

/// Physical constants of the primary body.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    /// Gravitational parameter, km³/s².
    pub mu: f64,
}

impl Constants {
    pub const EARTH: Self = Self { mu: MU_EARTH };

    pub fn new(mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gravitational parameter must be positive, got {mu}"
            )));
        }
        Ok(Self { mu })
    }
}

impl Default for Constants {
    fn default() -> Self {
        Self::EARTH
    }
}

pub fn wrap_two_pi(angle: f64) -> f64 {
    let w = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

fn check_regular(x: &SlowElements) -> Result<()> {
    let singular = |reason| Error::SingularElements {
        reason,
        a: x.a,
        e: x.e,
        i: x.i,
    };
    if !(x.a.is_finite() && x.e.is_finite() && x.i.is_finite()) {
        return Err(singular("non-finite elements"));
    }
    if x.e < ECC_FLOOR {
        return Err(singular("eccentricity below floor"));
    }
    if x.i < INC_FLOOR || x.i > PI - INC_FLOOR {
        return Err(singular("inclination at 0 or pi"));
    }
    if x.a <= 0.0 || x.e >= 1.0 {
        return Err(singular("orbit is not elliptic"));
    }
    Ok(())
}

/// Quantities shared by the GVE rows.
struct Geometry {
    p: f64,
    h: f64,
    r: f64,
    sin_nu: f64,
    cos_nu: f64,
}

impl Geometry {
    fn new(x: &FullState, c: &Constants) -> Self {
        let el = &x.elements;
        let p = el.semi_latus_rectum();
        let (sin_nu, cos_nu) = x.theta.sin_cos();
        Self {
            p,
            h: (c.mu * p).sqrt(),
            r: p / (1.0 + el.e * cos_nu),
            sin_nu,
            cos_nu,
        }
    }
}

/// Input matrix G(X, θ) of the Gauss variational equations: Ẋ = G·[S, T, W]ᵀ.
pub fn gve_matrix(x: &FullState, c: &Constants) -> Result<Matrix5x3<f64>> {
    let el = &x.elements;
    check_regular(el)?;
    let Geometry {
        p,
        h,
        r,
        sin_nu,
        cos_nu,
    } = Geometry::new(x, c);
    let (a, e) = (el.a, el.e);
    let (sin_u, cos_u) = (x.theta + el.argp).sin_cos();
    let (sin_i, cos_i) = el.i.sin_cos();

    let k_a = 2.0 * a * a / h;
    let he = h * e;
    #[rustfmt::skip]
    let g = Matrix5x3::new(
        k_a * e * sin_nu,        k_a * p / r,                                0.0,
        p * sin_nu / h,          ((p + r) * cos_nu + r * e) / h,             0.0,
        0.0,                     0.0,                                        r * cos_u / h,
        0.0,                     0.0,                                        r * sin_u / (h * sin_i),
        -p * cos_nu / he,        (p + r) * sin_nu / he,                      -r * sin_u * cos_i / (h * sin_i),
    );
    Ok(g)
}

/// True-anomaly rate dθ/dt, including the thrust-induced correction to the
/// Keplerian term h/r².
pub fn theta_rate(x: &FullState, u: &ThrustAccel, c: &Constants) -> Result<f64> {
    check_regular(&x.elements)?;
    let Geometry {
        p,
        h,
        r,
        sin_nu,
        cos_nu,
    } = Geometry::new(x, c);
    let e = x.elements.e;
    Ok(h / (r * r) + (p * cos_nu * u.s - (p + r) * sin_nu * u.t) / (h * e))
}

/// Periapsis radius r_p = a(1 − e), km.
pub fn periapsis_radius(x: &SlowElements) -> f64 {
    x.a * (1.0 - x.e)
}

/// Instantaneous orbital radius r = a(1 − e²)/(1 + e cos θ), km.
pub fn radius(x: &FullState) -> f64 {
    x.elements.semi_latus_rectum() / (1.0 + x.elements.e * x.theta.cos())
}

/// Perifocal-to-inertial rotation for the given node, inclination and
/// argument of periapsis.
fn perifocal_to_inertial(el: &SlowElements) -> Matrix3<f64> {
    let (so, co) = el.raan.sin_cos();
    let (si, ci) = el.i.sin_cos();
    let (sw, cw) = el.argp.sin_cos();
    #[rustfmt::skip]
    let m = Matrix3::new(
        co * cw - so * sw * ci,  -co * sw - so * cw * ci,  so * si,
        so * cw + co * sw * ci,  -so * sw + co * cw * ci,  -co * si,
        sw * si,                 cw * si,                  ci,
    );
    m
}

/// Osculating elements to inertial position (km) and velocity (km/s).
pub fn elements_to_cartesian(
    x: &FullState,
    c: &Constants,
) -> Result<(Vector3<f64>, Vector3<f64>)> {
    check_regular(&x.elements)?;
    let el = &x.elements;
    let p = el.semi_latus_rectum();
    let r = radius(x);
    let (s, co) = x.theta.sin_cos();
    let vk = (c.mu / p).sqrt();
    let rot = perifocal_to_inertial(el);
    let pos = rot * Vector3::new(r * co, r * s, 0.0);
    let vel = rot * Vector3::new(-vk * s, vk * (el.e + co), 0.0);
    Ok((pos, vel))
}

/// Inverse of [`elements_to_cartesian`]. Angles are returned in [0, 2π).
pub fn cartesian_to_elements(
    pos: &Vector3<f64>,
    vel: &Vector3<f64>,
    c: &Constants,
) -> Result<FullState> {
    let r = pos.norm();
    let v2 = vel.norm_squared();
    let h_vec = pos.cross(vel);
    let h = h_vec.norm();
    let e_vec = ((v2 - c.mu / r) * pos - pos.dot(vel) * vel) / c.mu;
    let e = e_vec.norm();
    let energy = 0.5 * v2 - c.mu / r;
    if energy >= 0.0 {
        return Err(Error::InvalidElements("state is not on an elliptic orbit".into()));
    }
    let a = -c.mu / (2.0 * energy);
    let i = (h_vec.z / h).clamp(-1.0, 1.0).acos();
    let sin_i = i.sin();
    if sin_i < INC_FLOOR || e < ECC_FLOOR {
        return Err(Error::SingularElements {
            reason: "node or periapsis undefined",
            a,
            e,
            i,
        });
    }
    let raan = h_vec.x.atan2(-h_vec.y);
    // argument of latitude measured from the ascending node
    let (so, co) = raan.sin_cos();
    let arg_lat = (pos.z / sin_i).atan2(pos.x * co + pos.y * so);
    let theta = (h_vec.dot(&e_vec.cross(pos)) / h).atan2(e_vec.dot(pos));
    let argp = arg_lat - theta;
    Ok(FullState::new(
        SlowElements::new(a, e, i, wrap_two_pi(raan), wrap_two_pi(argp)),
        wrap_two_pi(theta),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn sample() -> FullState {
        FullState::new(SlowElements::new(21378.0, 0.65, PI / 10.0, 0.3, PI), 1.1)
    }

    #[test]
    fn inclination_row_vanishes_at_quadrature() {
        let mut x = sample();
        x.theta = FRAC_PI_2 - x.elements.argp;
        let g = gve_matrix(&x, &Constants::EARTH).unwrap();
        assert!(g[(2, 2)].abs() < 1e-12 * g[(3, 2)].abs());
    }

    #[test]
    fn eccentricity_radial_entry_vanishes_at_periapsis() {
        let mut x = sample();
        x.theta = 0.0;
        let g = gve_matrix(&x, &Constants::EARTH).unwrap();
        assert_eq!(g[(1, 0)], 0.0);
        assert_eq!(g[(0, 0)], 0.0);
    }

    #[test]
    fn column_structure() {
        let g = gve_matrix(&sample(), &Constants::EARTH).unwrap();
        assert_eq!(g[(2, 0)], 0.0);
        assert_eq!(g[(2, 1)], 0.0);
        assert_eq!(g[(0, 2)], 0.0);
        assert_eq!(g[(1, 2)], 0.0);
    }

    #[test]
    fn singular_elements_rejected() {
        let c = Constants::EARTH;
        let mut x = sample();
        x.elements.e = 1e-10;
        assert!(matches!(gve_matrix(&x, &c), Err(Error::SingularElements { .. })));
        let mut x = sample();
        x.elements.i = 0.0;
        assert!(gve_matrix(&x, &c).is_err());
        assert!(elements_to_cartesian(&x, &c).is_err());
        let mut x = sample();
        x.elements.i = PI;
        assert!(theta_rate(&x, &ThrustAccel::ZERO, &c).is_err());
    }

    #[test]
    fn near_circular_rate_is_mean_motion() {
        let c = Constants::EARTH;
        let x = FullState::new(SlowElements::new(6878.0, 1e-3, 1.0, 0.0, 0.0), 2.3);
        let n = (c.mu / 6878f64.powi(3)).sqrt();
        let rate = theta_rate(&x, &ThrustAccel::ZERO, &c).unwrap();
        assert!((rate - n).abs() < 3e-3 * n);
    }

    #[test]
    fn periapsis_values() {
        assert_relative_eq!(
            periapsis_radius(&SlowElements::new(6878.0, 0.02, 1.0, 0.0, 0.0)),
            6740.44,
            max_relative = 1e-12
        );
        assert_eq!(periapsis_radius(&SlowElements::new(6628.0, 0.0, 1.0, 0.0, 0.0)), 6628.0);
    }

    #[test]
    fn radius_at_apsides() {
        let mut x = sample();
        x.theta = 0.0;
        assert_relative_eq!(radius(&x), periapsis_radius(&x.elements), max_relative = 1e-14);
        x.theta = PI;
        assert_relative_eq!(radius(&x), 21378.0 * 1.65, max_relative = 1e-14);
    }

    #[test]
    fn position_norm_matches_radius() {
        let x = sample();
        let (r, _) = elements_to_cartesian(&x, &Constants::EARTH).unwrap();
        assert_relative_eq!(r.norm(), radius(&x), max_relative = 1e-12);
    }

    #[test]
    fn validation() {
        assert!(SlowElements::try_new(7000.0, -0.1, 1.0, 0.0, 0.0).is_err());
        assert!(SlowElements::try_new(-7000.0, 0.1, 1.0, 0.0, 0.0).is_err());
        assert!(SlowElements::try_new(7000.0, 0.1, 4.0, 0.0, 0.0).is_err());
        assert!(SlowElements::try_new(7000.0, 0.1, 1.0, 7.0, -1.0).is_ok());
        assert!(Constants::new(0.0).is_err());
    }

    #[test]
    fn wrap_handles_negative_zero_edge() {
        assert_eq!(wrap_two_pi(-1e-300), 0.0);
        assert_relative_eq!(wrap_two_pi(-FRAC_PI_2), 1.5 * PI);
        assert_relative_eq!(wrap_two_pi(5.0 * PI), PI, max_relative = 1e-15);
    }
}
