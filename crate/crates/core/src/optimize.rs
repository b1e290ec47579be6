//! Box-constrained quasi-Newton minimization on finite-difference gradients.
//!
//! Coordinates are either clamped to `[lower, upper]` or, when marked
//! periodic, wrapped into it. The search direction is the L-BFGS two-loop
//! recursion applied to the projected gradient, followed by a projected
//! Armijo backtracking line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub periodic: Vec<bool>,
}

impl Bounds {
    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn project(&self, x: &mut [f64]) {
        for (i, xi) in x.iter_mut().enumerate() {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if self.periodic[i] {
                let span = hi - lo;
                *xi = lo + (*xi - lo).rem_euclid(span);
            } else {
                *xi = xi.clamp(lo, hi);
            }
        }
    }

    fn clamp_only(&self, x: &mut [f64]) {
        for (i, xi) in x.iter_mut().enumerate() {
            if !self.periodic[i] {
                *xi = xi.clamp(self.lower[i], self.upper[i]);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    pub max_iterations: usize,
    pub memory: usize,
    pub fd_step: f64,
    /// Stop when the projected-gradient max norm falls below this.
    pub gradient_tolerance: f64,
    /// Stop when an iteration improves the objective by less than this.
    pub value_tolerance: f64,
    /// Stop once the objective is at or below this.
    pub target_value: f64,
    pub max_evaluations: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            memory: 10,
            fd_step: 1e-6,
            gradient_tolerance: 1e-9,
            value_tolerance: 1e-15,
            target_value: f64::NEG_INFINITY,
            max_evaluations: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective after every accepted iteration, starting with the initial point.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub budget_exhausted: bool,
}

/// Central-difference gradient, one-sided at clamped bounds.
pub fn fd_gradient(f: &impl Fn(&[f64]) -> f64, x: &[f64], bounds: &Bounds, h: f64, evals: &mut usize) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut probe = x.to_vec();
    let f0 = std::cell::OnceCell::new();
    for i in 0..x.len() {
        let up_ok = bounds.periodic[i] || x[i] + h <= bounds.upper[i];
        let down_ok = bounds.periodic[i] || x[i] - h >= bounds.lower[i];
        g[i] = match (up_ok, down_ok) {
            (true, true) => {
                probe[i] = x[i] + h;
                let a = f(&probe);
                probe[i] = x[i] - h;
                let b = f(&probe);
                *evals += 2;
                (a - b) / (2.0 * h)
            }
            (true, false) => {
                probe[i] = x[i] + h;
                let a = f(&probe);
                *evals += 1;
                (a - *f0.get_or_init(|| {
                    *evals += 1;
                    f(x)
                })) / h
            }
            (false, true) => {
                probe[i] = x[i] - h;
                let b = f(&probe);
                *evals += 1;
                (*f0.get_or_init(|| {
                    *evals += 1;
                    f(x)
                }) - b)
                    / h
            }
            (false, false) => 0.0,
        };
        probe[i] = x[i];
    }
    g
}

fn projected_gradient(x: &[f64], g: &[f64], bounds: &Bounds) -> Vec<f64> {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&xi, &gi))| {
            if bounds.periodic[i] {
                gi
            } else if (xi <= bounds.lower[i] && gi > 0.0) || (xi >= bounds.upper[i] && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn minimize(f: impl Fn(&[f64]) -> f64, x0: &[f64], bounds: &Bounds, opts: &LbfgsOptions) -> Minimum {
    assert_eq!(x0.len(), bounds.len(), "start point and bounds differ in length");
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut evals = 1;
    let mut fx = f(&x);
    let mut trace = vec![fx];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut g = fd_gradient(&f, &x, bounds, opts.fd_step, &mut evals);
    let mut converged = false;
    let mut budget_exhausted = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        if fx <= opts.target_value {
            converged = true;
            break;
        }
        let pg = projected_gradient(&x, &g, bounds);
        if pg.iter().fold(0.0_f64, |m, v| m.max(v.abs())) < opts.gradient_tolerance {
            converged = true;
            break;
        }
        if evals >= opts.max_evaluations {
            budget_exhausted = true;
            break;
        }

        // two-loop recursion on the projected gradient
        let mut q = pg.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut d: Vec<f64> = q.iter().map(|v| -v).collect();
        for (i, di) in d.iter_mut().enumerate() {
            if pg[i] == 0.0 && g[i] != 0.0 {
                *di = 0.0;
            }
        }
        if dot(&d, &pg) >= 0.0 {
            d = pg.iter().map(|v| -v).collect();
            history.clear();
        }
        if history.is_empty() {
            // unit-length first step
            let norm = dot(&d, &d).sqrt();
            if norm > 1.0 {
                d.iter_mut().for_each(|v| *v /= norm);
            }
        }

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            bounds.clamp_only(&mut trial);
            let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let mut wrapped = trial.clone();
            bounds.project(&mut wrapped);
            let ft = f(&wrapped);
            evals += 1;
            if ft.is_finite() && ft <= fx + 1e-4 * dot(&g, &step) {
                accepted = Some((wrapped, step, ft));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, s, f_new)) = accepted else {
            converged = true;
            break;
        };
        let g_new = fd_gradient(&f, &x_new, bounds, opts.fd_step, &mut evals);
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 {
            history.push_back((s, y, 1.0 / sy));
            if history.len() > opts.memory {
                history.pop_front();
            }
        }
        let improvement = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        iterations += 1;
        trace.push(fx);
        if improvement < opts.value_tolerance {
            converged = true;
            break;
        }
    }

    Minimum {
        x,
        value: fx,
        iterations,
        evaluations: evals,
        trace,
        converged,
        budget_exhausted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free(n: usize) -> Bounds {
        Bounds {
            lower: vec![-10.0; n],
            upper: vec![10.0; n],
            periodic: vec![false; n],
        }
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(f, &[-1.2, 1.0], &free(2), &LbfgsOptions::default());
        assert!((m.x[0] - 1.0).abs() < 1e-4 && (m.x[1] - 1.0).abs() < 1e-4, "{m:?}");
    }

    #[test]
    fn active_bound() {
        let f = |x: &[f64]| (x[0] + 3.0).powi(2) + (x[1] - 0.5).powi(2);
        let b = Bounds {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
            periodic: vec![false; 2],
        };
        let m = minimize(f, &[0.7, 0.9], &b, &LbfgsOptions::default());
        assert_eq!(m.x[0], 0.0);
        assert!((m.x[1] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn periodic_coordinate_wraps() {
        let f = |x: &[f64]| 1.0 - (x[0] - 3.0).cos();
        let b = Bounds {
            lower: vec![-std::f64::consts::PI],
            upper: vec![std::f64::consts::PI],
            periodic: vec![true],
        };
        let m = minimize(f, &[-3.0], &b, &LbfgsOptions::default());
        assert!(m.value < 1e-12);
        assert!((m.x[0] - 3.0).abs() < 1e-5);
    }

    #[test]
    fn evaluation_budget() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = LbfgsOptions {
            max_evaluations: 30,
            ..Default::default()
        };
        let m = minimize(f, &[-1.2, 1.0], &free(2), &opts);
        assert!(m.budget_exhausted);
        assert!(m.value <= m.trace[0]);
    }
}
