//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here calls the crate's own conversions or solvers: orbital
//! rates come from finite differences of a Cartesian two-body propagation,
//! and sublevel-set minima from sampling plus a derivative-free polish.

#![allow(dead_code)]

use std::f64::consts::{PI, TAU};

use nalgebra::{Matrix3, Matrix5, Rotation3, SVector, Vector3, Vector5};
use orbgov_core::admissibility::SublevelSet;
use orbgov_core::controller::control;
use orbgov_core::{ConstraintLimits, Constants, FullState, SlowElements, ThrustAccel, WeightMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const MU: f64 = 3.986004418e5;

pub fn reference_limits() -> ConstraintLimits {
    ConstraintLimits::new(6628.0, 1.25e-3, 1e-6, 1.0, 1e-4).unwrap()
}

pub fn p0() -> WeightMatrix {
    WeightMatrix::from_diagonal([5e-11, 0.1, 5e-3, 7.5e-3, 5e-4]).unwrap()
}

pub fn random_state(rng: &mut ChaCha8Rng) -> FullState {
    FullState::new(
        SlowElements::new(
            rng.random_range(7000.0..40000.0),
            rng.random_range(0.05..0.8),
            rng.random_range(0.2..2.9),
            rng.random_range(0.0..TAU),
            rng.random_range(0.0..TAU),
        ),
        rng.random_range(0.0..TAU),
    )
}

pub fn random_thrust(rng: &mut ChaCha8Rng) -> ThrustAccel {
    ThrustAccel::new(
        rng.random_range(-1e-3..1e-3),
        rng.random_range(-1e-3..1e-3),
        rng.random_range(-1e-3..1e-3),
    )
}

fn rz(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rx(t: f64) -> Matrix3<f64> {
    let (s, c) = t.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Position and velocity from elements via Rz(Ω)·Rx(i)·Rz(ω) on the
/// perifocal state.
pub fn to_cartesian(x: &FullState) -> (Vector3<f64>, Vector3<f64>) {
    let el = &x.elements;
    let p = el.a * (1.0 - el.e * el.e);
    let (s, c) = x.theta.sin_cos();
    let r = p / (1.0 + el.e * c);
    let q = rz(el.raan) * rx(el.i) * rz(el.argp);
    let k = (MU / p).sqrt();
    (
        q * Vector3::new(r * c, r * s, 0.0),
        q * Vector3::new(-k * s, k * (el.e + c), 0.0),
    )
}

/// [a, e, i, Ω, ω, θ] from position and velocity, angles via arccos with
/// quadrant fixes.
pub fn from_cartesian(r: &Vector3<f64>, v: &Vector3<f64>) -> [f64; 6] {
    let rn = r.norm();
    let h = r.cross(v);
    let n = Vector3::z().cross(&h);
    let ev = (r * (v.norm_squared() - MU / rn) - v * r.dot(v)) / MU;
    let e = ev.norm();
    let a = 1.0 / (2.0 / rn - v.norm_squared() / MU);
    let i = (h.z / h.norm()).acos();
    let mut raan = (n.x / n.norm()).clamp(-1.0, 1.0).acos();
    if n.y < 0.0 {
        raan = TAU - raan;
    }
    let mut argp = (n.dot(&ev) / (n.norm() * e)).clamp(-1.0, 1.0).acos();
    if ev.z < 0.0 {
        argp = TAU - argp;
    }
    let mut theta = (ev.dot(r) / (e * rn)).clamp(-1.0, 1.0).acos();
    if r.dot(v) < 0.0 {
        theta = TAU - theta;
    }
    [a, e, i, raan, argp, theta]
}

/// Two-body acceleration plus a thrust held constant in the local
/// radial / transverse / normal frame.
fn accel(r: &Vector3<f64>, v: &Vector3<f64>, u: &ThrustAccel) -> Vector3<f64> {
    let rn = r.norm();
    let rhat = r / rn;
    let what = r.cross(v).normalize();
    let that = what.cross(&rhat);
    -r * (MU / (rn * rn * rn)) + rhat * u.s + that * u.t + what * u.w
}

fn rk4(r: Vector3<f64>, v: Vector3<f64>, u: &ThrustAccel, dt: f64, steps: usize) -> (Vector3<f64>, Vector3<f64>) {
    let (mut r, mut v) = (r, v);
    let h = dt / steps as f64;
    for _ in 0..steps {
        let (k1r, k1v) = (v, accel(&r, &v, u));
        let (k2r, k2v) = (v + k1v * (h / 2.0), accel(&(r + k1r * (h / 2.0)), &(v + k1v * (h / 2.0)), u));
        let (k3r, k3v) = (v + k2v * (h / 2.0), accel(&(r + k2r * (h / 2.0)), &(v + k2v * (h / 2.0)), u));
        let (k4r, k4v) = (v + k3v * h, accel(&(r + k3r * h), &(v + k3v * h), u));
        r += (k1r + k2r * 2.0 + k3r * 2.0 + k4r) * (h / 6.0);
        v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
    }
    (r, v)
}

fn angle_diff(b: f64, a: f64) -> f64 {
    let d = (b - a).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// Central-difference rates of [a, e, i, Ω, ω, θ] under thrust `u`.
pub fn finite_difference_rates(x: &FullState, u: &ThrustAccel, dt: f64) -> [f64; 6] {
    let (r, v) = to_cartesian(x);
    let (rp, vp) = rk4(r, v, u, dt, 20);
    let (rm, vm) = rk4(r, v, u, -dt, 20);
    let ep = from_cartesian(&rp, &vp);
    let em = from_cartesian(&rm, &vm);
    let mut out = [0.0; 6];
    for k in 0..6 {
        let d = if k < 2 { ep[k] - em[k] } else { angle_diff(ep[k], em[k]) };
        out[k] = d / (2.0 * dt);
    }
    out
}

/// Random SPD weight: the diagonal of P⁰ with the (e, i, Ω) block rotated.
pub fn random_weight(rng: &mut ChaCha8Rng) -> WeightMatrix {
    let rot = Rotation3::from_euler_angles(
        rng.random_range(-PI..PI),
        rng.random_range(-PI..PI),
        rng.random_range(-PI..PI),
    );
    let d = Matrix3::from_diagonal(&Vector3::new(0.1, 5e-3, 7.5e-3));
    let block = rot.matrix() * d * rot.matrix().transpose();
    let mut m = Matrix5::from_diagonal(&Vector5::new(5e-11, 0.0, 0.0, 0.0, 5e-4));
    m.fixed_view_mut::<3, 3>(1, 1).copy_from(&block);
    WeightMatrix::new((m + m.transpose()) * 0.5).unwrap()
}

pub fn random_in_ball(rng: &mut ChaCha8Rng, on_surface: bool) -> Vector5<f64> {
    loop {
        let v = Vector5::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            let r = if on_surface { 1.0 } else { rng.random::<f64>().powf(0.2) };
            return v / n * r;
        }
    }
}

/// Unit ball → Q through the eigendecomposition of P.
pub struct Ellipsoid {
    center: Vector5<f64>,
    map: Matrix5<f64>,
}

impl Ellipsoid {
    pub fn new(q: &SublevelSet) -> Self {
        let eig = q.p.matrix().symmetric_eigen();
        let mut map = Matrix5::zeros();
        let rho = (2.0 * q.level).sqrt();
        for k in 0..5 {
            map.set_column(k, &(eig.eigenvectors.column(k) * (rho / eig.eigenvalues[k].sqrt())));
        }
        Self {
            center: q.center.to_vector(),
            map,
        }
    }

    pub fn point(&self, w: &Vector5<f64>) -> SlowElements {
        SlowElements::from_vector(&(self.center + self.map * w))
    }
}

/// Compass search inside the unit ball; trailing coordinates beyond the
/// fifth are unconstrained.
pub fn compass_polish<const N: usize>(f: impl Fn(&SVector<f64, N>) -> f64, start: SVector<f64, N>) -> f64 {
    let clamp = |mut v: SVector<f64, N>| {
        let n = v.fixed_rows::<5>(0).norm();
        if n > 1.0 {
            for k in 0..5 {
                v[k] /= n;
            }
        }
        v
    };
    let mut x = clamp(start);
    let mut fx = f(&x);
    let mut step = 0.05;
    while step > 1e-10 {
        let mut improved = false;
        for k in 0..N {
            for sgn in [-1.0, 1.0] {
                let mut y = x;
                y[k] += sgn * step;
                let y = clamp(y);
                let fy = f(&y);
                if fy < fx {
                    x = y;
                    fx = fy;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    fx
}

/// Keeps the `k` lowest (value, point) pairs seen.
struct Best<T> {
    k: usize,
    items: Vec<(f64, T)>,
}

impl<T: Copy> Best<T> {
    fn new(k: usize) -> Self {
        Self { k, items: Vec::new() }
    }

    fn offer(&mut self, v: f64, x: T) {
        if self.items.len() < self.k || v < self.items[self.items.len() - 1].0 {
            let at = self.items.partition_point(|(u, _)| *u <= v);
            self.items.insert(at, (v, x));
            self.items.truncate(self.k);
        }
    }

    fn min(&self) -> f64 {
        self.items[0].0
    }
}

/// Starting points polished per oracle call.
const POLISH_STARTS: usize = 8;

/// Sampled minimum of c₁ over Q, and the lowest compass polish of the best
/// samples.
pub fn c1_oracle(q: &SublevelSet, lim: &ConstraintLimits, rng: &mut ChaCha8Rng, samples: usize) -> (f64, f64) {
    let ell = Ellipsoid::new(q);
    let f = |w: &Vector5<f64>| {
        let x = ell.point(w);
        x.a * (1.0 - x.e) - lim.r_min
    };
    let mut best = Best::new(POLISH_STARTS);
    for k in 0..samples {
        let w = random_in_ball(rng, k % 2 == 0);
        best.offer(f(&w), w);
    }
    let polished = best.items.iter().map(|(_, w)| compass_polish(f, *w)).fold(f64::INFINITY, f64::min);
    (best.min(), polished)
}

/// Sampled (ball points × θ grid) and polished minima of c₂ over
/// Q × [0, 2π).
pub fn c2_oracle(
    q: &SublevelSet,
    lim: &ConstraintLimits,
    c: &Constants,
    rng: &mut ChaCha8Rng,
    samples: usize,
    thetas: usize,
) -> (f64, f64) {
    let ell = Ellipsoid::new(q);
    let f = |z: &SVector<f64, 6>| {
        let el = ell.point(&z.fixed_rows::<5>(0).into_owned());
        let u = control(&FullState::new(el, z[5]), &q.center, &q.p, c).unwrap();
        lim.u_max_squared() - u.norm_squared()
    };
    let mut best = Best::new(POLISH_STARTS);
    for k in 0..samples {
        let w = random_in_ball(rng, k % 2 == 0);
        for j in 0..thetas {
            let z = SVector::<f64, 6>::from([w[0], w[1], w[2], w[3], w[4], TAU * j as f64 / thetas as f64]);
            best.offer(f(&z), z);
        }
    }
    let polished = best.items.iter().map(|(_, z)| compass_polish(f, *z)).fold(f64::INFINITY, f64::min);
    (best.min(), polished)
}
