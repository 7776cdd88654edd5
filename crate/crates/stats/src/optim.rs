//! Small dense quasi-Newton (BFGS) minimiser with finite-difference gradients.
//!
//! Intended for the handful of covariance parameters of a mixed model, where
//! objective evaluations are cheap and analytic gradients are not worth it.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop once an accepted step changes the objective by less than this.
    pub f_tol: f64,
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 500, f_tol: 1e-8, grad_tol: 1e-5 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn gradient<F: Fn(&[f64]) -> f64>(f: &F, x: &DVector<f64>) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let h = 1e-6 * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let up = f(probe.as_slice());
        probe[i] = x[i] - h;
        let down = f(probe.as_slice());
        probe[i] = x[i];
        g[i] = (up - down) / (2.0 * h);
    }
    g
}

pub fn bfgs<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], opts: BfgsOptions) -> Minimum {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    if !fx.is_finite() {
        return Minimum { x: x0.to_vec(), value: fx, iterations: 0, converged: false };
    }
    let mut g = gradient(&f, &x);
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut reset_pending = false;

    for iter in 1..=opts.max_iter {
        if g.norm() < opts.grad_tol {
            return Minimum { x: x.as_slice().to_vec(), value: fx, iterations: iter - 1, converged: true };
        }
        let mut dir = -(&h_inv * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }

        // Armijo backtracking
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &dir * step;
            let fc = f(cand.as_slice());
            if fc.is_finite() && fc <= fx + 1e-4 * step * slope {
                accepted = Some((cand, fc));
                break;
            }
            step *= 0.5;
        }

        let Some((x_new, f_new)) = accepted else {
            if reset_pending {
                let converged = g.norm() < 1e-3;
                return Minimum { x: x.as_slice().to_vec(), value: fx, iterations: iter, converged };
            }
            h_inv = DMatrix::identity(n, n);
            reset_pending = true;
            continue;
        };
        reset_pending = false;

        let g_new = gradient(&f, &x_new);
        let s = &x_new - &x;
        let y = &g_new - &g;
        let change = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;

        if change.abs() < opts.f_tol {
            return Minimum { x: x.as_slice().to_vec(), value: fx, iterations: iter, converged: true };
        }

        let sy = s.dot(&y);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - (&s * y.transpose()) * rho;
            let right = &eye - (&y * s.transpose()) * rho;
            h_inv = &left * &h_inv * &right + (&s * s.transpose()) * rho;
        }
    }
    Minimum { x: x.as_slice().to_vec(), value: fx, iterations: opts.max_iter, converged: false }
}
