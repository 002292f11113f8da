//! Pointwise maneuver constraints. Each returns a signed margin: ≥ 0 means
//! satisfied.

use crate::controller::{control, WeightMatrix};
use crate::elements::{periapsis_radius, Constants, FullState, SlowElements};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintLimits {
    /// Minimum periapsis radius, km.
    pub r_min: f64,
    /// Maximum thrust acceleration, km/s².
    pub u_max: f64,
    /// Minimum eccentricity.
    pub e_min: f64,
    /// Periapsis margin a reference must keep from `r_min`, km.
    pub eps_r: f64,
    /// Eccentricity margin a reference must keep from `e_min`.
    pub eps_e: f64,
}

impl ConstraintLimits {
    pub fn new(r_min: f64, u_max: f64, e_min: f64, eps_r: f64, eps_e: f64) -> Result<Self> {
        let lim = Self {
            r_min,
            u_max,
            e_min,
            eps_r,
            eps_e,
        };
        lim.validate()?;
        Ok(lim)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.r_min > 0.0
            && self.u_max > 0.0
            && self.e_min >= 0.0
            && self.eps_r > 0.0
            && self.eps_e > 0.0
            && [self.r_min, self.u_max, self.e_min, self.eps_r, self.eps_e]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid constraint limits {self:?}")))
        }
    }

    pub fn u_max_squared(&self) -> f64 {
        self.u_max * self.u_max
    }
}

/// c₁ = a(1 − e) − r_min, km.
pub fn c1(x: &SlowElements, lim: &ConstraintLimits) -> f64 {
    periapsis_radius(x) - lim.r_min
}

/// c₂ = U_max² − ‖U‖², with U the tracking law toward `reference`.
pub fn c2(
    x: &FullState,
    reference: &SlowElements,
    p: &WeightMatrix,
    lim: &ConstraintLimits,
    c: &Constants,
) -> Result<f64> {
    let u = control(x, reference, p, c)?;
    Ok(lim.u_max_squared() - u.norm_squared())
}

/// c₃ = e − e_min.
pub fn c3(x: &SlowElements, lim: &ConstraintLimits) -> f64 {
    x.e - lim.e_min
}

/// A reference must stay at least `eps_r` / `eps_e` inside the periapsis and
/// eccentricity boundaries.
pub fn reference_admissible_margin(reference: &SlowElements, lim: &ConstraintLimits) -> bool {
    c1(reference, lim) >= lim.eps_r && c3(reference, lim) >= lim.eps_e
}
