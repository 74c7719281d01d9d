//! Limited-memory BFGS with Armijo backtracking.
//!
//! Sized for the tiny per-pixel subproblems (dimension 3), but dimension
//! agnostic. The objective may return non-finite values outside its domain;
//! such steps are backtracked, and only thirty consecutive failures on a
//! non-finite value abort the minimization.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::grid::{dot, norm};

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LbfgsOptions {
    /// Number of curvature pairs kept.
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when `|g| <= grad_tol * max(1, |g0|)`.
    pub grad_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 5,
            max_iters: 50,
            grad_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 30;

/// Minimizes `objective`, returning the best visited point.
///
/// The returned value never exceeds the objective at `x0`.
pub fn lbfgs_minimize<F>(mut objective: F, x0: &[f64], opts: &LbfgsOptions) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let (mut fx, mut grad) = objective(&x);
    if !fx.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let g0_norm = norm(&grad);
    let tol = opts.grad_tol * g0_norm.max(1.0);

    let mut best_x = x.clone();
    let mut best_f = fx;

    // (s, y, rho) curvature pairs, newest last
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;

    for _ in 0..opts.max_iters {
        if norm(&grad) <= tol {
            break;
        }

        // two-loop recursion for the search direction
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let alpha = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= alpha * yi;
            }
            alphas.push(alpha);
        }
        if let Some((s, y, _)) = history.back() {
            let scale = dot(s, y) / dot(y, y).max(f64::MIN_POSITIVE);
            for qi in q.iter_mut() {
                *qi *= scale;
            }
        }
        for ((s, y, rho), alpha) in history.iter().zip(alphas.into_iter().rev()) {
            let beta = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (alpha - beta) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|&v| -v).collect();
        let mut slope = dot(&grad, &dir);
        if slope >= 0.0 {
            // not a descent direction; fall back to steepest descent
            history.clear();
            dir = grad.iter().map(|&v| -v).collect();
            slope = -dot(&grad, &grad);
            if slope == 0.0 {
                break;
            }
        }

        // Armijo backtracking, treating non-finite values as rejections
        let mut step = 1.0;
        let mut accepted = None;
        let mut last_nonfinite = false;
        for _ in 0..MAX_BACKTRACKS {
            let xt: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            let (ft, gt) = objective(&xt);
            if ft.is_finite() {
                last_nonfinite = false;
                if ft <= fx + ARMIJO_C1 * step * slope {
                    accepted = Some((xt, ft, gt));
                    break;
                }
            } else {
                last_nonfinite = true;
            }
            step *= 0.5;
        }
        let (x_new, f_new, g_new) = match accepted {
            Some(t) => t,
            None if last_nonfinite => return Err(Error::NonFiniteObjective),
            None => break, // no progress possible along this direction
        };
        iterations += 1;

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        x = x_new;
        fx = f_new;
        grad = g_new;
        if fx < best_f {
            best_f = fx;
            best_x = x.clone();
        }
        debug_assert_eq!(x.len(), n);
    }

    // report the gradient at the best point when it differs from the last
    let grad_norm = if best_f < fx {
        let (_, g) = objective(&best_x);
        norm(&g)
    } else {
        norm(&grad)
    };
    Ok(LbfgsResult {
        x: best_x,
        value: best_f,
        iterations,
        grad_norm,
    })
}
