use super::*;
use crate::controller::control;
use approx::assert_relative_eq;
use nalgebra::{Matrix5, Rotation3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn limits() -> ConstraintLimits {
    ConstraintLimits::new(6628.0, 1.25e-3, 1e-6, 1.0, 1e-4).unwrap()
}

fn p0() -> WeightMatrix {
    WeightMatrix::from_diagonal([5e-11, 0.1, 5e-3, 7.5e-3, 5e-4]).unwrap()
}

fn target() -> SlowElements {
    SlowElements::new(6878.0, 0.02, PI / 2.0, 1.5 * PI, PI)
}

/// P₀ with a random rotation mixing the (e, i, Ω) block and a small a–e
/// coupling, still SPD.
fn rotated_p(rng: &mut ChaCha8Rng) -> WeightMatrix {
    let r = Rotation3::from_euler_angles(
        rng.random_range(-PI..PI),
        rng.random_range(-PI..PI),
        rng.random_range(-PI..PI),
    );
    let d = nalgebra::Matrix3::from_diagonal(&nalgebra::Vector3::new(0.1, 5e-3, 7.5e-3));
    let block = r.matrix() * d * r.matrix().transpose();
    let mut m = Matrix5::from_diagonal(&Vector5::new(5e-11, 0.0, 0.0, 0.0, 5e-4));
    m.fixed_view_mut::<3, 3>(1, 1).copy_from(&block);
    let m = (m + m.transpose()) * 0.5;
    WeightMatrix::new(m).unwrap()
}

fn uniform_in_ball(rng: &mut ChaCha8Rng, on_surface: bool) -> Vector5<f64> {
    loop {
        let v = Vector5::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            if on_surface {
                return v / n;
            }
            let r: f64 = rng.random::<f64>().powf(0.2);
            return v / n * r;
        }
    }
}

/// Maps the unit ball onto Q through an eigendecomposition of P, independent
/// of the Cholesky map the solvers use.
fn sample_point(q: &SublevelSet, w: &Vector5<f64>) -> SlowElements {
    let eig = q.p.matrix().symmetric_eigen();
    let mut y = Vector5::zeros();
    for k in 0..5 {
        y += eig.eigenvectors.column(k) * (w[k] / eig.eigenvalues[k].sqrt());
    }
    SlowElements::from_vector(&(q.center.to_vector() + y * (2.0 * q.level).sqrt()))
}

/// Compass search over the unit ball (plus any free trailing coordinates),
/// started from the best of the sampled points.
fn compass_polish<const N: usize>(
    f: impl Fn(&nalgebra::SVector<f64, N>) -> f64,
    start: nalgebra::SVector<f64, N>,
) -> f64 {
    let clamp = |mut v: nalgebra::SVector<f64, N>| {
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

#[test]
fn singleton_set_gives_pointwise_values() {
    let lim = limits();
    let q = SublevelSet::with_level(target(), p0(), 0.0);
    assert_eq!(c1_star(&q, &lim).minimum, c1(&target(), &lim));
    assert_eq!(c3_star(&q, &lim).minimum, c3(&target(), &lim));
    let r2 = c2_star(&q, &lim, &Constants::EARTH);
    assert_eq!(r2.minimum, lim.u_max_squared());
    assert!(r2.converged);
}

#[test]
fn c3_diagonal_closed_form() {
    let lim = limits();
    let level = 1e-6;
    let q = SublevelSet::with_level(target(), p0(), level);
    let expect = 0.02 - 1e-6 - (2.0 * level / 0.1f64).sqrt();
    let r = c3_star(&q, &lim);
    assert!(r.converged);
    assert_relative_eq!(r.minimum, expect, max_relative = 1e-10);
    assert_relative_eq!(c3_star_closed_form(&q, &lim), expect, max_relative = 1e-12);
}

#[test]
fn c3_matches_closed_form_for_rotated_weights() {
    let lim = limits();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let p = rotated_p(&mut rng);
        let center = SlowElements::new(
            rng.random_range(8000.0..30000.0),
            rng.random_range(0.05..0.7),
            rng.random_range(0.2..2.9),
            rng.random_range(0.0..6.0),
            rng.random_range(0.0..6.0),
        );
        let level = 10f64.powf(rng.random_range(-8.0..-3.0));
        let q = SublevelSet::with_level(center, p, level);
        let r = c3_star(&q, &lim);
        let exact = c3_star_closed_form(&q, &lim);
        assert!(r.converged);
        assert_relative_eq!(r.minimum, exact, max_relative = 1e-10);
        assert!(q.contains(&r.argmin));
    }
}

#[test]
fn c1_matches_sampling_on_diagonal_weights() {
    let lim = limits();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let center = SlowElements::new(12000.0, 0.3, 1.0, 2.0, 3.0);
    let q = SublevelSet::with_level(center, p0(), 2e-3);
    let r = c1_star(&q, &lim);
    assert!(r.converged);
    assert!(q.contains(&r.argmin));
    let mut best = (f64::INFINITY, Vector5::zeros());
    for k in 0..200_000 {
        let w = uniform_in_ball(&mut rng, k % 2 == 0);
        let v = c1(&sample_point(&q, &w), &lim);
        if v < best.0 {
            best = (v, w);
        }
    }
    assert!(r.minimum <= best.0 + 1e-9);
    let polished = compass_polish(|w: &Vector5<f64>| c1(&sample_point(&q, w), &lim), best.1);
    assert!(r.minimum <= polished + 1e-9);
    assert!(polished - r.minimum < 0.5, "solver {} vs polished {}", r.minimum, polished);
}

#[test]
fn shrinking_level_raises_minimum() {
    let lim = limits();
    let c = Constants::EARTH;
    let center = SlowElements::new(15000.0, 0.4, 0.8, 1.0, 2.0);
    let mut last = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for level in [1e-3, 1e-4, 1e-5, 1e-6] {
        let q = SublevelSet::with_level(center, p0(), level);
        let m1 = c1_star(&q, &lim).minimum;
        let m2 = c2_star(&q, &lim, &c).minimum;
        assert!(m1 >= last.0 - 1e-9);
        assert!(m2 >= last.1 - 1e-15);
        last = (m1, m2);
    }
}

#[test]
fn c2_periodic_in_anchor_anomaly() {
    let lim = limits();
    let c = Constants::EARTH;
    let center = SlowElements::new(15000.0, 0.4, 0.8, 1.0, 2.0);
    let mut x = FullState::new(SlowElements::new(15100.0, 0.41, 0.81, 1.01, 2.0), 1.3);
    let a = c2_star(&SublevelSet::through(center, p0(), &x), &lim, &c);
    x.theta += 2.0 * PI;
    let b = c2_star(&SublevelSet::through(center, p0(), &x), &lim, &c);
    assert_relative_eq!(a.minimum, b.minimum, max_relative = 1e-9);
    assert!(a.theta.unwrap() >= 0.0 && a.theta.unwrap() < 2.0 * PI);
}

#[test]
fn c2_bounded_by_sampling() {
    let lim = limits();
    let c = Constants::EARTH;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let center = SlowElements::new(15000.0, 0.4, 0.8, 1.0, 2.0);
    let x = FullState::new(SlowElements::new(15200.0, 0.405, 0.81, 1.02, 2.0), 0.3);
    let q = SublevelSet::through(center, p0(), &x);
    let r = c2_star(&q, &lim, &c);
    assert!(r.converged);
    assert!(q.contains(&r.argmin));
    let thrust = |w: &nalgebra::SVector<f64, 6>| {
        let el = sample_point(&q, &w.fixed_rows::<5>(0).into_owned());
        let u = control(&FullState::new(el, w[5]), &center, &q.p, &c).unwrap();
        lim.u_max_squared() - u.norm_squared()
    };
    let mut best = (f64::INFINITY, nalgebra::SVector::<f64, 6>::zeros());
    for k in 0..20_000 {
        let w = uniform_in_ball(&mut rng, k % 2 == 0);
        for j in 0..64 {
            let th = 2.0 * PI * j as f64 / 64.0;
            let z = nalgebra::SVector::<f64, 6>::from([w[0], w[1], w[2], w[3], w[4], th]);
            let v = thrust(&z);
            if v < best.0 {
                best = (v, z);
            }
        }
    }
    assert!(r.minimum <= best.0 + 1e-18, "solver {} sampled {}", r.minimum, best.0);
    let polished = compass_polish(thrust, best.1);
    assert!(r.minimum <= polished + 1e-15, "solver {} polished {}", r.minimum, polished);
    assert!(polished - r.minimum < 1e-9);
}

#[test]
fn admissibility_of_current_state_as_reference() {
    let lim = limits();
    let c = Constants::EARTH;
    let x = FullState::new(target(), 0.5);
    assert!(is_admissible(&target(), &p0(), &x, &lim, &c));
}

#[test]
fn margin_rejection_precedes_solves() {
    let lim = limits();
    let c = Constants::EARTH;
    let mut r = target();
    r.a = (lim.r_min + 0.5) / (1.0 - r.e);
    let x = FullState::new(r, 0.5);
    assert_eq!(
        check_admissibility(&r, &p0(), &x, &lim, &c),
        Err(Rejection::Margin)
    );
}

#[test]
fn instant_thrust_rejection() {
    let lim = limits();
    let c = Constants::EARTH;
    let x = FullState::new(SlowElements::new(21378.0, 0.65, PI / 10.0, 0.0, PI), PI);
    let mut far = x.elements;
    far.e -= 0.1;
    assert_eq!(
        check_admissibility(&far, &p0(), &x, &lim, &c),
        Err(Rejection::InstantThrust)
    );
}
