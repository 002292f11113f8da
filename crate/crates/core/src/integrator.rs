//! Dormand–Prince 5(4) with embedded error control and FSAL.

use std::ops::ControlFlow;

use nalgebra::SVector;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel: f64,
    pub abs: f64,
    /// Largest step the controller may take, s.
    pub max_step: f64,
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        if self.rel > 0.0 && self.abs > 0.0 && self.max_step > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid integrator tolerances {self:?}")))
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// fifth-order weights minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Adaptive integrator. The suggested next step is carried between calls so
/// consecutive segments continue smoothly.
#[derive(Debug, Clone)]
pub struct Dopri5 {
    tol: Tolerances,
    h: Option<f64>,
    pub stats: Stats,
}

impl Dopri5 {
    pub fn new(tol: Tolerances) -> Self {
        Self {
            tol,
            h: None,
            stats: Stats::default(),
        }
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    fn error_norm<const N: usize>(
        &self,
        err: &SVector<f64, N>,
        y0: &SVector<f64, N>,
        y1: &SVector<f64, N>,
    ) -> f64 {
        let sum: f64 = (0..N)
            .map(|k| {
                let sc = self.tol.abs + self.tol.rel * y0[k].abs().max(y1[k].abs());
                (err[k] / sc).powi(2)
            })
            .sum();
        (sum / N as f64).sqrt()
    }

    fn initial_step<const N: usize, F>(
        &mut self,
        rhs: &mut F,
        t0: f64,
        y0: &SVector<f64, N>,
        f0: &SVector<f64, N>,
        span: f64,
    ) -> Result<f64>
    where
        F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
    {
        let scale = |y: &SVector<f64, N>, k: usize| self.tol.abs + self.tol.rel * y[k].abs();
        let rms = |v: &SVector<f64, N>| {
            ((0..N).map(|k| (v[k] / scale(y0, k)).powi(2)).sum::<f64>() / N as f64).sqrt()
        };
        let d0 = rms(y0);
        let d1 = rms(f0);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        }
        .min(span)
        .min(self.tol.max_step);
        let y1 = y0 + f0 * h0;
        let f1 = rhs(t0 + h0, &y1)?;
        self.stats.evaluations += 1;
        let d2 = rms(&(f1 - f0)) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(span).min(self.tol.max_step))
    }

    /// Integrates from `t0` to `t1`, calling `observer` after every accepted
    /// step with the new time and state. Breaking from the observer stops
    /// the integration early; the returned time tells where it stopped.
    pub fn integrate<const N: usize, F, O>(
        &mut self,
        mut rhs: F,
        t0: f64,
        y0: SVector<f64, N>,
        t1: f64,
        mut observer: O,
    ) -> Result<(f64, SVector<f64, N>)>
    where
        F: FnMut(f64, &SVector<f64, N>) -> Result<SVector<f64, N>>,
        O: FnMut(f64, &SVector<f64, N>) -> ControlFlow<()>,
    {
        let wrap = |t: f64, e: Error| Error::Integration {
            t,
            source: Box::new(e),
        };
        if t1 <= t0 {
            return Ok((t0, y0));
        }
        let mut t = t0;
        let mut y = y0;
        let mut k1 = rhs(t, &y).map_err(|e| wrap(t, e))?;
        self.stats.evaluations += 1;
        let mut h = match self.h {
            Some(h) => h,
            None => self
                .initial_step(&mut rhs, t0, &y0, &k1, t1 - t0)
                .map_err(|e| wrap(t, e))?,
        };

        while t < t1 {
            h = h.min(self.tol.max_step);
            let remaining = t1 - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            let min_step = 1e-12 * t.abs().max(1.0);
            if step < min_step && !last {
                return Err(Error::StepSizeUnderflow { t, h: step });
            }

            let k2 = rhs(t + C2 * step, &(y + k1 * (A21 * step)));
            let k2 = k2.map_err(|e| wrap(t, e))?;
            let k3 = rhs(t + C3 * step, &(y + (k1 * A31 + k2 * A32) * step))
                .map_err(|e| wrap(t, e))?;
            let k4 = rhs(t + C4 * step, &(y + (k1 * A41 + k2 * A42 + k3 * A43) * step))
                .map_err(|e| wrap(t, e))?;
            let k5 = rhs(
                t + C5 * step,
                &(y + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * step),
            )
            .map_err(|e| wrap(t, e))?;
            let k6 = rhs(
                t + step,
                &(y + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * step),
            )
            .map_err(|e| wrap(t, e))?;
            let y_new = y + (k1 * A71 + k3 * A73 + k4 * A74 + k5 * A75 + k6 * A76) * step;
            let t_new = if last { t1 } else { t + step };
            let k7 = rhs(t_new, &y_new).map_err(|e| wrap(t, e))?;
            self.stats.evaluations += 6;

            let err = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * step;
            let en = self.error_norm(&err, &y, &y_new);
            let factor = if en == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * en.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };

            if en <= 1.0 {
                self.stats.accepted += 1;
                t = t_new;
                y = y_new;
                k1 = k7;
                // a step truncated to hit t1 says nothing about the next one
                h = if last && step < h { h } else { step * factor };
                if observer(t, &y).is_break() {
                    break;
                }
            } else {
                self.stats.rejected += 1;
                h = step * factor.min(1.0);
                if !h.is_finite() {
                    return Err(Error::StepSizeUnderflow { t, h });
                }
            }
        }
        self.h = Some(h);
        Ok((t, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    fn tol(rel: f64) -> Tolerances {
        Tolerances {
            rel,
            abs: rel * 1e-2,
            max_step: 1.0,
        }
    }

    #[test]
    fn harmonic_oscillator_period() {
        let mut ig = Dopri5::new(tol(1e-10));
        let (t, y) = ig
            .integrate(
                |_, y: &Vector2<f64>| Ok(Vector2::new(y[1], -y[0])),
                0.0,
                Vector2::new(1.0, 0.0),
                std::f64::consts::TAU,
                |_, _| ControlFlow::Continue(()),
            )
            .unwrap();
        assert_eq!(t, std::f64::consts::TAU);
        assert!((y[0] - 1.0).abs() < 1e-8 && y[1].abs() < 1e-8);
    }

    #[test]
    fn tighter_tolerance_converges() {
        let run = |rel| {
            let mut ig = Dopri5::new(tol(rel));
            ig.integrate(
                |t, y: &Vector2<f64>| Ok(Vector2::new(y[1], -y[0] + 0.1 * t.sin())),
                0.0,
                Vector2::new(1.0, 0.0),
                20.0,
                |_, _| ControlFlow::Continue(()),
            )
            .unwrap()
            .1
        };
        let coarse = run(1e-6);
        let fine = run(5e-7);
        let finest = run(1e-11);
        assert!((coarse - finest).amax() < 1e-4);
        assert!((fine - finest).amax() < (coarse - finest).amax() * 1.5 + 1e-9);
    }

    #[test]
    fn observer_can_stop() {
        let mut ig = Dopri5::new(tol(1e-8));
        let (t, _) = ig
            .integrate(
                |_, y: &Vector2<f64>| Ok(Vector2::new(1.0, y[0])),
                0.0,
                Vector2::zeros(),
                100.0,
                |_, y| {
                    if y[0] > 3.0 {
                        ControlFlow::Break(())
                    } else {
                        ControlFlow::Continue(())
                    }
                },
            )
            .unwrap();
        assert!(t > 3.0 && t < 5.0);
    }

    #[test]
    fn rhs_errors_propagate() {
        let mut ig = Dopri5::new(tol(1e-8));
        let r = ig.integrate(
            |t, y: &Vector2<f64>| {
                if t > 0.5 {
                    Err(Error::InvalidConfig("boom".into()))
                } else {
                    Ok(*y)
                }
            },
            0.0,
            Vector2::new(1.0, 1.0),
            2.0,
            |_, _| ControlFlow::Continue(()),
        );
        assert!(matches!(r, Err(Error::Integration { .. })));
    }
}
