//! Limited-memory BFGS with a bracketing weak-Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when the gradient 2-norm drops below this.
    pub grad_tol: f64,
    /// Stop when the relative cost decrease of an iteration drops below this.
    pub rel_tol: f64,
    pub max_line_steps: usize,
    /// Sufficient-decrease constant.
    pub armijo: f64,
    /// Curvature constant.
    pub wolfe: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            memory: 32,
            max_iterations: 200,
            grad_tol: 1e-5,
            rel_tol: 1e-8,
            max_line_steps: 40,
            armijo: 1e-4,
            wolfe: 0.9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    RelativeDecrease,
    MaxIterations,
    LineSearchFailed,
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub reason: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Step {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

/// Minimises `f`, which writes the gradient into its second argument and
/// returns the value. `x` holds the start on entry and the best point on
/// return; accepted iterates never increase the cost.
pub fn minimize<F>(mut f: F, x: &mut [f64], cfg: &LbfgsConfig) -> LbfgsReport
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let mut g = vec![0.0; n];
    let mut fx = f(x, &mut g);
    let mut evaluations = 1;
    let report = |iterations, evaluations, cost, g: &[f64], reason| LbfgsReport {
        iterations,
        evaluations,
        cost,
        grad_norm: norm(g),
        reason,
    };
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return report(0, evaluations, fx, &g, StopReason::NonFinite);
    }
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut alpha_buf = vec![0.0; cfg.memory];
    let mut iterations = 0;
    loop {
        if norm(&g) < cfg.grad_tol {
            return report(
                iterations,
                evaluations,
                fx,
                &g,
                StopReason::GradientTolerance,
            );
        }
        if iterations >= cfg.max_iterations {
            return report(iterations, evaluations, fx, &g, StopReason::MaxIterations);
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        for (idx, (s, y, rho)) in pairs.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alpha_buf[idx] = a;
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
        }
        let gamma = match pairs.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => 1.0 / norm(&g).max(1.0),
        };
        for v in d.iter_mut() {
            *v *= gamma;
        }
        for (idx, (s, y, rho)) in pairs.iter().enumerate() {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (alpha_buf[idx] - b) * si;
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d = g.iter().map(|v| -v / norm(&g).max(1.0)).collect();
            slope = dot(&g, &d);
        }

        let found = line_search(&mut f, x, fx, &d, slope, cfg, &mut evaluations);
        let Some(step) = found else {
            if pairs.is_empty() {
                return report(
                    iterations,
                    evaluations,
                    fx,
                    &g,
                    StopReason::LineSearchFailed,
                );
            }
            pairs.clear();
            continue;
        };
        iterations += 1;
        let s: Vec<f64> = step.x.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        let previous = fx;
        x.copy_from_slice(&step.x);
        fx = step.f;
        g = step.g;
        let scale = previous.abs().max(fx.abs()).max(1.0);
        if (previous - fx) <= cfg.rel_tol * scale {
            return report(
                iterations,
                evaluations,
                fx,
                &g,
                StopReason::RelativeDecrease,
            );
        }
    }
}

/// Bisection/doubling search for a weak-Wolfe step; falls back to the best
/// sufficient-decrease point found.
fn line_search<F>(
    f: &mut F,
    x: &[f64],
    fx: f64,
    d: &[f64],
    slope: f64,
    cfg: &LbfgsConfig,
    evaluations: &mut usize,
) -> Option<Step>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
    let mut t = 1.0;
    let mut armijo_best: Option<Step> = None;
    for _ in 0..cfg.max_line_steps {
        let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
        let mut gt = vec![0.0; n];
        let ft = f(&xt, &mut gt);
        *evaluations += 1;
        let finite = ft.is_finite() && gt.iter().all(|v| v.is_finite());
        if !finite || ft > fx + cfg.armijo * t * slope {
            hi = t;
        } else {
            let st = dot(&gt, d);
            if st < cfg.wolfe * slope {
                lo = t;
                if armijo_best.as_ref().is_none_or(|b| ft < b.f) {
                    armijo_best = Some(Step {
                        x: xt,
                        f: ft,
                        g: gt,
                    });
                }
            } else {
                return Some(Step {
                    x: xt,
                    f: ft,
                    g: gt,
                });
            }
        }
        t = if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            2.0 * lo
        };
        if hi.is_finite() && hi - lo < 1e-16 * hi.max(1.0) {
            break;
        }
    }
    armijo_best.filter(|b| b.f < fx)
}
