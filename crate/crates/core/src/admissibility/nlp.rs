//! Small dense minimiser over B × ℝᵏ, where B is the closed unit ball in the
//! first five coordinates and the remaining coordinates are free.
//!
//! The local method is a spectral projected gradient iteration
//! (Barzilai–Borwein scalar Hessian model, projection onto the ball,
//! non-monotone Armijo line search). A deterministic multistart wrapper
//! ranks seed points and polishes the most promising ones.

use nalgebra::SVector;

pub(crate) const BALL_DIM: usize = 5;

/// Stationarity target on the projected gradient (scaled problem).
pub const STATIONARITY_TOL: f64 = 1e-10;
/// A polish counts as (approximately) converged at this stationarity.
pub const ACCEPT_TOL: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 600;

const MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;
const STEP_MIN: f64 = 1e-30;
const STEP_MAX: f64 = 1e30;
const STALL_WINDOW: usize = 25;
/// Longest trial move per coordinate; keeps unbounded coordinates where
/// finite differences still resolve them.
const MAX_MOVE: f64 = 4.0;
const FD_STEP: f64 = 1e-6;

pub(crate) trait Objective<const N: usize> {
    fn value(&self, x: &SVector<f64, N>) -> f64;

    /// Central finite differences unless overridden.
    fn gradient(&self, x: &SVector<f64, N>) -> SVector<f64, N> {
        let mut g = SVector::<f64, N>::zeros();
        let mut xp = *x;
        for k in 0..N {
            let orig = xp[k];
            xp[k] = orig + FD_STEP;
            let fp = self.value(&xp);
            xp[k] = orig - FD_STEP;
            let fm = self.value(&xp);
            xp[k] = orig;
            g[k] = (fp - fm) / (2.0 * FD_STEP);
        }
        g
    }
}

pub(crate) fn project<const N: usize>(x: &SVector<f64, N>) -> SVector<f64, N> {
    let mut y = *x;
    let r2: f64 = (0..BALL_DIM).map(|k| y[k] * y[k]).sum();
    if r2 > 1.0 {
        let s = r2.sqrt().recip();
        for k in 0..BALL_DIM {
            y[k] *= s;
        }
    }
    y
}

fn stationarity<const N: usize>(x: &SVector<f64, N>, g: &SVector<f64, N>) -> f64 {
    (project(&(x - g)) - x).amax()
}

#[derive(Debug, Clone)]
pub(crate) struct LocalSolution<const N: usize> {
    pub x: SVector<f64, N>,
    pub f: f64,
    pub stationarity: f64,
    pub iterations: usize,
}

impl<const N: usize> LocalSolution<N> {
    pub fn converged(&self) -> bool {
        self.stationarity <= ACCEPT_TOL
    }
}

/// Spectral projected gradient from `start`.
pub(crate) fn spg<const N: usize, F: Objective<N>>(
    obj: &F,
    start: &SVector<f64, N>,
) -> LocalSolution<N> {
    let mut x = project(start);
    let mut f = obj.value(&x);
    let mut g = obj.gradient(&x);
    let mut stat = stationarity(&x, &g);
    let mut lambda = if stat > 0.0 {
        (1.0 / stat).clamp(STEP_MIN, STEP_MAX)
    } else {
        1.0
    };
    let mut history = [f; MEMORY];
    let mut best = f;
    let mut since_best = 0;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS && stat > STATIONARITY_TOL {
        iterations += 1;
        let d = project(&(x - g * lambda)) - x;
        let gtd = g.dot(&d);
        if gtd >= 0.0 {
            break;
        }
        let f_ref = history.iter().copied().fold(f64::NEG_INFINITY, f64::max);

        let mut alpha = 1.0;
        let (x_new, f_new) = loop {
            let xt = x + d * alpha;
            let ft = obj.value(&xt);
            if ft.is_finite() && ft <= f_ref + ARMIJO * alpha * gtd {
                break (xt, ft);
            }
            let denom = ft - f - alpha * gtd;
            let trial = if ft.is_finite() && denom > 0.0 {
                -0.5 * alpha * alpha * gtd / denom
            } else {
                0.5 * alpha
            };
            alpha = if trial >= 0.1 * alpha && trial <= 0.9 * alpha {
                trial
            } else {
                0.5 * alpha
            };
            if alpha < 1e-20 {
                break (x, f);
            }
        };
        if x_new == x {
            break;
        }

        let g_new = obj.gradient(&x_new);
        let s = x_new - x;
        let y = g_new - g;
        let sy = s.dot(&y);
        lambda = if sy > 0.0 {
            (s.norm_squared() / sy).clamp(STEP_MIN, STEP_MAX)
        } else {
            STEP_MAX
        };
        let gmax = g_new.amax();
        if gmax > 0.0 {
            lambda = lambda.min(MAX_MOVE / gmax);
        }
        x = x_new;
        f = f_new;
        g = g_new;
        history[iterations % MEMORY] = f;
        stat = stationarity(&x, &g);

        if f < best - 1e-15 * best.abs().max(1.0) {
            best = f;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= STALL_WINDOW {
                break;
            }
        }
    }

    LocalSolution {
        x,
        f,
        stationarity: stat,
        iterations,
    }
}

/// Ranks `seeds` by objective value and polishes the `polish` best of them
/// (plus every index listed in `always`). Returns the lowest local solution
/// and the total iteration count. Ties keep the earliest seed.
pub(crate) fn multistart<const N: usize, F: Objective<N>>(
    obj: &F,
    seeds: &[SVector<f64, N>],
    polish: usize,
    always: &[usize],
) -> (LocalSolution<N>, usize) {
    assert!(!seeds.is_empty());
    let mut ranked: Vec<(usize, f64)> = seeds
        .iter()
        .enumerate()
        .map(|(k, s)| (k, obj.value(&project(s))))
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let mut chosen: Vec<usize> = always.to_vec();
    for &(k, _) in ranked.iter() {
        if chosen.len() >= polish + always.len() {
            break;
        }
        if !chosen.contains(&k) {
            chosen.push(k);
        }
    }

    let mut total = 0;
    let mut best: Option<LocalSolution<N>> = None;
    for k in chosen {
        let sol = spg(obj, &seeds[k]);
        total += sol.iterations;
        let better = match &best {
            None => true,
            Some(b) => sol.f < b.f,
        };
        if better {
            best = Some(sol);
        }
    }
    (best.expect("at least one seed polished"), total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector5;

    struct Linear(Vector5<f64>);

    impl Objective<5> for Linear {
        fn value(&self, x: &Vector5<f64>) -> f64 {
            self.0.dot(x)
        }
    }

    struct Shifted(Vector5<f64>);

    impl Objective<5> for Shifted {
        fn value(&self, x: &Vector5<f64>) -> f64 {
            (x - self.0).norm_squared()
        }
        fn gradient(&self, x: &Vector5<f64>) -> Vector5<f64> {
            2.0 * (x - self.0)
        }
    }

    #[test]
    fn linear_objective_hits_antipodal_boundary_point() {
        let c = Vector5::new(1.0, -2.0, 0.5, 0.0, 3.0);
        let sol = spg(&Linear(c), &Vector5::zeros());
        assert!(sol.converged());
        assert!((sol.f + c.norm()).abs() < 1e-8);
    }

    #[test]
    fn interior_minimum_is_found() {
        let target = Vector5::new(0.1, 0.2, -0.3, 0.0, 0.1);
        let sol = spg(&Shifted(target), &Vector5::new(0.9, 0.0, 0.0, 0.0, 0.0));
        assert!(sol.converged());
        assert!((sol.x - target).norm() < 1e-8);
    }

    #[test]
    fn exterior_target_projects_to_sphere() {
        let target = Vector5::new(3.0, 0.0, 4.0, 0.0, 0.0);
        let sol = spg(&Shifted(target), &Vector5::zeros());
        let expect = target / 5.0;
        assert!((sol.x - expect).norm() < 1e-6);
    }

    #[test]
    fn projection_leaves_free_coordinate() {
        let x = nalgebra::SVector::<f64, 6>::from([3.0, 4.0, 0.0, 0.0, 0.0, 10.0]);
        let y = project(&x);
        assert!((y[0] - 0.6).abs() < 1e-15 && (y[1] - 0.8).abs() < 1e-15);
        assert_eq!(y[5], 10.0);
    }
}
