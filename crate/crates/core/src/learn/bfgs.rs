//! A small BFGS maximizer with backtracking line search.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{abs, sqrt};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    /// Stop once the largest gradient component is at most this.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Coefficients larger than this in magnitude indicate separation.
    pub separation_bound: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            grad_tol: 1e-6,
            max_iters: 200,
            separation_bound: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Some coefficient left `[-separation_bound, separation_bound]`.
    pub separation: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| f64::max(m, abs(*x)))
}

type Objective<'a> = dyn FnMut(&[f64]) -> (f64, Vec<f64>) + 'a;

/// Maximizes `f`, which returns the value and gradient at a point. The
/// result never has a lower value than `start`.
pub fn bfgs_maximize(mut f: impl FnMut(&[f64]) -> (f64, Vec<f64>), start: &[f64], opts: &BfgsOptions) -> BfgsOutcome {
    let n = start.len();
    let mut x = start.to_vec();
    // minimize g = -f
    let eval = |f: &mut Objective<'_>, x: &[f64]| {
        let (v, g) = f(x);
        (-v, g.into_iter().map(|v| -v).collect::<Vec<f64>>())
    };
    let (mut fx, mut gx) = eval(&mut f, &x);
    let mut h = identity(n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = max_abs(&gx) <= opts.grad_tol;

    while !converged && iterations < opts.max_iters && fx.is_finite() {
        iterations += 1;
        let mut p = mat_vec(&h, &gx, n);
        p.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&p, &gx);
        if !(slope < 0.0) {
            h = identity(n);
            fresh = true;
            p = gx.iter().map(|v| -v).collect();
            slope = dot(&p, &gx);
        }
        // backtracking Armijo search
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + step * b).collect();
            let (fn_, gn) = eval(&mut f, &xn);
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else {
            if fresh {
                break;
            }
            // stale curvature; retry along steepest ascent
            h = identity(n);
            fresh = true;
            continue;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let progress = fx - fn_;
        x = xn;
        fx = fn_;
        gx = gn;
        if sy > 1e-12 * sqrt(dot(&s, &s) * dot(&y, &y)) {
            if fresh {
                let scale = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v *= scale);
                fresh = false;
            }
            bfgs_update(&mut h, &s, &y, sy, n);
        }
        converged = max_abs(&gx) <= opts.grad_tol;
        if !converged && progress <= 1e-15 * abs(fx).max(1.0) && max_abs(&s) <= 1e-15 * max_abs(&x).max(1.0) {
            break;
        }
    }
    BfgsOutcome {
        separation: x.iter().any(|v| abs(*v) > opts.separation_bound),
        gradient_norm: max_abs(&gx),
        value: -fx,
        x,
        iterations,
        converged,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn mat_vec(h: &[f64], v: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|i| dot(&h[i * n..(i + 1) * n], v)).collect()
}

/// Inverse-Hessian update `H <- (I - r s y') H (I - r y s') + r s s'`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64, n: usize) {
    let r = 1.0 / sy;
    let hy = mat_vec(h, y, n);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -r * (s[i] * hy[j] + hy[i] * s[j]) + (r * r * yhy + r) * s[i] * s[j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::logistic::LogisticObjective;

    #[test]
    fn concave_quadratic_in_one_dimension() {
        let out = bfgs_maximize(|x| (-(x[0] - 3.0).powi(2), vec![-2.0 * (x[0] - 3.0)]), &[0.0], &BfgsOptions::default());
        assert!(out.converged);
        assert!((out.x[0] - 3.0).abs() < 1e-8, "{:?}", out.x);
        assert!(!out.separation);
    }

    #[test]
    fn rosenbrock_ridge() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2));
            let g = vec![2.0 * (1.0 - a) + 400.0 * a * (b - a * a), -200.0 * (b - a * a)];
            (v, g)
        };
        let opts = BfgsOptions {
            grad_tol: 1e-9,
            max_iters: 1000,
            ..Default::default()
        };
        let out = bfgs_maximize(f, &[-1.2, 1.0], &opts);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6, "{:?}", out);
    }

    #[test]
    fn matches_grid_search_on_two_parameter_logistic() {
        let obj = LogisticObjective::new(
            2,
            1,
            vec![-1.0, -0.5, 0.0, 0.5, 1.0, 1.5],
            vec![0.9, 0.1, 0.7, 0.3, 0.6, 0.4, 0.3, 0.7, 0.4, 0.6, 0.1, 0.9],
            0.0,
        )
        .unwrap();
        let opts = BfgsOptions {
            grad_tol: 1e-10,
            ..Default::default()
        };
        let out = bfgs_maximize(|x| obj.value_and_gradient(x), &[0.0, 0.0], &opts);
        // coarse grid, then a fine grid around its winner
        let grid = |c: [f64; 2], half: f64, steps: i32| {
            let mut best = (f64::NEG_INFINITY, [0.0, 0.0]);
            for i in -steps..=steps {
                for j in -steps..=steps {
                    let x = [c[0] + half * i as f64 / steps as f64, c[1] + half * j as f64 / steps as f64];
                    let v = obj.value_and_gradient(&x).0;
                    if v > best.0 {
                        best = (v, x);
                    }
                }
            }
            best.1
        };
        let mut c = grid([0.0, 0.0], 5.0, 100);
        for half in [0.1, 2e-3, 4e-5] {
            c = grid(c, half, 50);
        }
        assert!((out.x[0] - c[0]).abs() < 1e-4 && (out.x[1] - c[1]).abs() < 1e-4, "{:?} vs {c:?}", out.x);
    }

    #[test]
    fn separable_data_is_flagged() {
        // outcome 0 whenever w < 0, outcome 1 whenever w > 0
        let obj = LogisticObjective::new(
            2,
            1,
            vec![-2.0, -1.0, 1.0, 2.0],
            vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
            0.0,
        )
        .unwrap();
        // the supremum is approached only as the coefficients grow without
        // bound, so a tight tolerance drives them past the watchdog
        let tight = BfgsOptions {
            grad_tol: 1e-15,
            max_iters: 1000,
            ..Default::default()
        };
        let out = bfgs_maximize(|x| obj.value_and_gradient(x), &[0.0, 0.0], &tight);
        assert!(out.separation, "{out:?}");
        assert!(out.value.is_finite());
        // a ridge keeps the coefficients bounded
        let ridged = LogisticObjective::new(
            2,
            1,
            vec![-2.0, -1.0, 1.0, 2.0],
            vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
            0.01,
        )
        .unwrap();
        let out = bfgs_maximize(|x| ridged.value_and_gradient(x), &[0.0, 0.0], &BfgsOptions::default());
        assert!(!out.separation && out.converged, "{out:?}");
    }

    #[test]
    fn never_worse_than_start() {
        let obj = LogisticObjective::new(3, 0, vec![], vec![0.2, 0.3, 0.5], 0.0).unwrap();
        let start = [0.1, 0.4];
        let v0 = obj.value_and_gradient(&start).0;
        let out = bfgs_maximize(|x| obj.value_and_gradient(x), &start, &BfgsOptions::default());
        assert!(out.value >= v0);
        // optimum is the log ratio against the reference
        assert!((out.x[0] - (0.2f64 / 0.5).ln()).abs() < 1e-5);
        assert!((out.x[1] - (0.3f64 / 0.5).ln()).abs() < 1e-5);
    }
}
