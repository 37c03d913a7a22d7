//! Dense BFGS with a strong-Wolfe line search.
//!
//! The inverse Hessian approximation is kept as a full matrix (parameter
//! counts here stay in the tens), updated with the standard rank-two
//! formula and rescaled after the first accepted step. Gradients default
//! to central finite differences; an objective can override
//! [`Objective::gradient`] with an analytic rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WOLFE_C1: f64 = 1e-4;
pub const WOLFE_C2: f64 = 0.9;

/// Why the optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TargetLoss,
    GradientConverged,
    MaxIterations,
    LineSearchStalled,
}

#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Stop once the objective value drops to this level.
    pub target_value: f64,
    /// Stop once the gradient ∞-norm drops below this level.
    pub gradient_tolerance: f64,
    /// Step for the default central-difference gradient.
    pub fd_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iterations: 500,
            target_value: 1e-6,
            gradient_tolerance: 1e-10,
            fd_step: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub point: Vec<f64>,
    pub value: f64,
    /// Objective at the start followed by every accepted iterate.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

/// Something BFGS can minimize.
pub trait Objective {
    fn value(&mut self, p: &[f64]) -> Result<f64>;

    /// Central-difference gradient by default.
    fn gradient(&mut self, p: &[f64], fd_step: f64) -> Result<Vec<f64>> {
        let mut probe = p.to_vec();
        let mut grad = Vec::with_capacity(p.len());
        for i in 0..p.len() {
            probe[i] = p[i] + fd_step;
            let up = self.value(&probe)?;
            probe[i] = p[i] - fd_step;
            let down = self.value(&probe)?;
            probe[i] = p[i];
            grad.push((up - down) / (2.0 * fd_step));
        }
        Ok(grad)
    }
}

impl<F: FnMut(&[f64]) -> Result<f64>> Objective for F {
    fn value(&mut self, p: &[f64]) -> Result<f64> {
        self(p)
    }
}

/// Standalone central-difference gradient of a value function.
pub fn finite_difference_gradient(
    objective: &mut dyn Objective,
    p: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    objective.gradient(p, step)
}

/// Minimize `objective` from `p0`. The accepted-iterate trace is strictly
/// nonincreasing; a failed line search returns the best iterate reached.
pub fn bfgs_minimize(
    objective: &mut dyn Objective,
    p0: &[f64],
    opts: &BfgsOptions,
) -> Result<MinimizeResult> {
    if opts.max_iterations == 0 {
        return Err(Error::contract("max_iterations must be ≥ 1"));
    }
    let n = p0.len();
    let mut x = p0.to_vec();
    let mut f = objective.value(&x)?;
    if !f.is_finite() {
        return Err(Error::contract(format!(
            "objective is not finite at the start point ({f})"
        )));
    }
    let mut trace = vec![f];
    let mut g = objective.gradient(&x, opts.fd_step)?;
    // Inverse Hessian approximation, row-major.
    let mut h = identity(n);
    let mut first_update = true;

    let mut iterations = 0;
    let termination = loop {
        if f <= opts.target_value {
            break Termination::TargetLoss;
        }
        if inf_norm(&g) <= opts.gradient_tolerance {
            break Termination::GradientConverged;
        }
        if iterations >= opts.max_iterations {
            break Termination::MaxIterations;
        }

        let mut direction = neg_mat_vec(&h, &g);
        if dot(&direction, &g) >= 0.0 {
            // Not a descent direction; restart from steepest descent.
            h = identity(n);
            first_update = true;
            direction = g.iter().map(|gi| -gi).collect();
        }

        // With a fresh (unscaled) Hessian the raw gradient step can be
        // enormous; cap the first trial step at unit parameter length.
        let alpha_init = if first_update {
            (1.0 / norm(&direction)).min(1.0)
        } else {
            1.0
        };
        let Some(step) = line_search(objective, &x, f, &g, &direction, alpha_init, opts)? else {
            break Termination::LineSearchStalled;
        };
        iterations += 1;

        let s: Vec<f64> = step.point.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.gradient.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) {
            if first_update {
                let yy = dot(&y, &y);
                if yy > 0.0 {
                    scale_in_place(&mut h, sy / yy);
                }
                first_update = false;
            }
            bfgs_update(&mut h, &s, &y, sy);
        }

        x = step.point;
        f = step.value;
        g = step.gradient;
        trace.push(f);
    };

    Ok(MinimizeResult { point: x, value: f, trace, iterations, termination })
}

struct AcceptedStep {
    point: Vec<f64>,
    value: f64,
    gradient: Vec<f64>,
}

/// Strong-Wolfe line search: bracketing phase with doubling steps, then
/// bisection-based zoom. Returns `None` when no acceptable step exists
/// within the evaluation budget.
fn line_search(
    objective: &mut dyn Objective,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    direction: &[f64],
    alpha_init: f64,
    opts: &BfgsOptions,
) -> Result<Option<AcceptedStep>> {
    let dphi0 = dot(g0, direction);
    debug_assert!(dphi0 < 0.0);
    let probe = |objective: &mut dyn Objective, alpha: f64| -> Result<(Vec<f64>, f64)> {
        let point: Vec<f64> = x
            .iter()
            .zip(direction)
            .map(|(xi, di)| xi + alpha * di)
            .collect();
        let value = objective.value(&point)?;
        Ok((point, value))
    };
    let slope = |objective: &mut dyn Objective, point: &[f64]| -> Result<(Vec<f64>, f64)> {
        let gradient = objective.gradient(point, opts.fd_step)?;
        let s = dot(&gradient, direction);
        Ok((gradient, s))
    };

    let mut alpha_prev = 0.0;
    let mut phi_prev = f0;
    let mut alpha = alpha_init;
    let max_bracket = 30;
    let mut bracket: Option<(f64, f64, f64, f64)> = None; // (lo, phi_lo, hi, phi_hi)
    for i in 0..max_bracket {
        let (point, phi) = probe(objective, alpha)?;
        if !phi.is_finite() || phi > f0 + WOLFE_C1 * alpha * dphi0 || (i > 0 && phi >= phi_prev) {
            bracket = Some((alpha_prev, phi_prev, alpha, phi));
            break;
        }
        let (gradient, dphi) = slope(objective, &point)?;
        if dphi.abs() <= -WOLFE_C2 * dphi0 {
            return Ok(Some(AcceptedStep { point, value: phi, gradient }));
        }
        if dphi >= 0.0 {
            bracket = Some((alpha, phi, alpha_prev, phi_prev));
            break;
        }
        alpha_prev = alpha;
        phi_prev = phi;
        alpha *= 2.0;
    }
    let Some((mut lo, mut phi_lo, mut hi, mut phi_hi)) = bracket else {
        return Ok(None);
    };

    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if (hi - lo).abs() <= 1e-16 * (1.0 + lo.abs()) || mid == lo || mid == hi {
            break;
        }
        let (point, phi) = probe(objective, mid)?;
        if !phi.is_finite() || phi > f0 + WOLFE_C1 * mid * dphi0 || phi >= phi_lo {
            hi = mid;
            phi_hi = phi;
        } else {
            let (gradient, dphi) = slope(objective, &point)?;
            if dphi.abs() <= -WOLFE_C2 * dphi0 {
                return Ok(Some(AcceptedStep { point, value: phi, gradient }));
            }
            if dphi * (hi - lo) >= 0.0 {
                hi = lo;
                phi_hi = phi_lo;
            }
            lo = mid;
            phi_lo = phi;
        }
    }
    let _ = phi_hi;
    // Settle for the best sufficient-decrease point found, if any.
    if phi_lo < f0 && lo > 0.0 {
        let (point, phi) = probe(objective, lo)?;
        let (gradient, _) = slope(objective, &point)?;
        return Ok(Some(AcceptedStep { point, value: phi, gradient }));
    }
    Ok(None)
}

/// `H ← (I - ρsyᵀ)H(I - ρysᵀ) + ρssᵀ` with `ρ = 1/(yᵀs)`, exploiting the
/// symmetry of `H`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    let c = rho * rho * yhy + rho;
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + c * s[i] * s[j];
        }
    }
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

fn scale_in_place(m: &mut [Vec<f64>], factor: f64) {
    for row in m {
        for v in row {
            *v *= factor;
        }
    }
}

fn neg_mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| -dot(row, v)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc: f64, &x| acc.max(x.abs()))
}
