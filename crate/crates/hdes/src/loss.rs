//! Loss assembly: collocation sampling, residual and boundary terms, and
//! the three boundary-condition strategies.
//!
//! The differential part is the mean squared residual
//! `(1/n_s) Σ_e Σ_s e(x_s)²`; the boundary part averages squared boundary
//! violations and enters with weight `η` under the penalty strategy. The
//! floating strategy instead shifts each attempt by the polynomial through
//! its boundary offsets so value conditions hold exactly, and the tangential
//! strategy turns a first-derivative condition into a value constraint on
//! the adjacent sample point. Residual terms are reduced with a pairwise
//! sum in a fixed order, so the result does not depend on how the term
//! evaluations are scheduled.

use std::collections::BTreeSet;

use rayon::prelude::*;

use crate::cheb::MultiIndex;
use crate::circuit::{probabilities, sample_counts, simulate, CircuitSpec};
use crate::encoding::VariableAllocation;
use crate::error::{Error, Result};
use crate::observable::{combine_linear, observables_at_points, DiagonalObservable, ObservableTable};
use crate::problem::{
    evaluate_residual, is_linear_single_function, BoundaryCondition, Bindings, DESystem, Domain,
};

/// How boundary conditions participate in the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryStrategy {
    /// Add `η · (1/n_BC) Σ (f(x_BC) - target)²` to the loss.
    Penalty,
    /// Shift each attempt so value conditions hold exactly; derivative
    /// conditions fall back to the penalty term.
    Floating,
    /// Floating for value conditions plus the finite-difference trick for
    /// first-derivative conditions; no boundary term remains.
    Tangential,
}

impl std::fmt::Display for BoundaryStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            BoundaryStrategy::Penalty => "penalty",
            BoundaryStrategy::Floating => "floating",
            BoundaryStrategy::Tangential => "tangential",
        };
        write!(f, "{name}")
    }
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub eta: f64,
    pub strategy: BoundaryStrategy,
    pub samples: Vec<Vec<f64>>,
}

impl LossConfig {
    pub fn new(eta: f64, strategy: BoundaryStrategy, samples: Vec<Vec<f64>>) -> Result<Self> {
        if eta < 0.0 {
            return Err(Error::contract(format!("boundary weight η must be ≥ 0, got {eta}")));
        }
        if samples.is_empty() {
            return Err(Error::contract("sample set must not be empty"));
        }
        Ok(LossConfig { eta, strategy, samples })
    }
}

/// Default boundary weight when the penalty strategy is used.
pub const DEFAULT_ETA: f64 = 10.0;

/// `n` equally spaced points per axis including both endpoints; one point
/// collapses to the midpoint and a degenerate axis to its single value.
/// Multivariate domains get a tensor grid whose per-axis count makes the
/// total closest to `n`.
pub fn generate_samples(n: usize, domains: &[Domain]) -> Result<Vec<Vec<f64>>> {
    if n == 0 {
        return Err(Error::contract("sample count must be ≥ 1"));
    }
    if domains.is_empty() {
        return Err(Error::contract("no domains to sample"));
    }
    let per_axis = if domains.len() == 1 {
        n
    } else {
        let v = domains.len() as u32;
        let mut best = (1usize, usize::MAX);
        for m in 1..=n {
            let count = m.checked_pow(v).unwrap_or(usize::MAX);
            let gap = count.abs_diff(n);
            if gap < best.1 {
                best = (m, gap);
            }
            if count >= n {
                break;
            }
        }
        best.0
    };
    let axes: Vec<Vec<f64>> = domains.iter().map(|d| linspace(d, per_axis)).collect();
    let mut points = vec![Vec::new()];
    for axis in &axes {
        let mut extended = Vec::with_capacity(points.len() * axis.len());
        for prefix in &points {
            for &x in axis {
                let mut p = prefix.clone();
                p.push(x);
                extended.push(p);
            }
        }
        points = extended;
    }
    Ok(points)
}

fn linspace(domain: &Domain, n: usize) -> Vec<f64> {
    if domain.lo == domain.hi {
        return vec![domain.lo];
    }
    if n == 1 {
        return vec![domain.midpoint()];
    }
    let step = (domain.hi - domain.lo) / (n - 1) as f64;
    let mut points: Vec<f64> = (0..n).map(|i| domain.lo + i as f64 * step).collect();
    points[n - 1] = domain.hi;
    points
}

/// Pairwise summation in index order; deterministic for any parallel
/// schedule that produced `values`.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Polynomial added to an attempt to pin its boundary values, stored in the
/// monomial basis.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftFunction {
    coeffs: Vec<f64>,
}

impl ShiftFunction {
    pub fn zero() -> Self {
        ShiftFunction { coeffs: vec![0.0] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// Value of the `q`-th derivative at `x`.
    pub fn derivative_eval(&self, q: u32, x: f64) -> f64 {
        let mut acc = 0.0;
        for (k, &c) in self.coeffs.iter().enumerate() {
            let k = k as u32;
            if k < q {
                continue;
            }
            let mut factor = 1.0;
            for j in 0..q {
                factor *= f64::from(k - j);
            }
            acc += c * factor * x.powi((k - q) as i32);
        }
        acc
    }

    /// Express the same polynomial in the Chebyshev basis.
    pub fn to_chebyshev(&self) -> Vec<f64> {
        let mut cheb = vec![0.0; self.coeffs.len().max(1)];
        for &c in self.coeffs.iter().rev() {
            cheb = cheb_times_x(&cheb);
            cheb[0] += c;
        }
        cheb.truncate(self.coeffs.len().max(1));
        cheb
    }
}

/// Multiply a Chebyshev series by `x` via `x·T_k = (T_{k+1} + T_{k-1})/2`.
fn cheb_times_x(coeffs: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; coeffs.len() + 1];
    for (k, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        if k == 0 {
            out[1] += c;
        } else {
            out[k + 1] += c / 2.0;
            out[k - 1] += c / 2.0;
        }
    }
    out
}

/// Fit the polynomial of degree `n_BC - 1` through the boundary offsets
/// `(x_j, attempt(x_j) - target_j)`.
pub fn floating_shift(
    abscissae: &[f64],
    attempt_values: &[f64],
    targets: &[f64],
) -> Result<ShiftFunction> {
    let n = abscissae.len();
    if n == 0 || attempt_values.len() != n || targets.len() != n {
        return Err(Error::contract(
            "floating shift needs matching abscissa/value/target lists",
        ));
    }
    for i in 0..n {
        for j in i + 1..n {
            if abscissae[i] == abscissae[j] {
                return Err(Error::contract(format!(
                    "duplicate boundary abscissa {}",
                    abscissae[i]
                )));
            }
        }
    }
    let offsets: Vec<f64> = attempt_values
        .iter()
        .zip(targets)
        .map(|(v, k)| v - k)
        .collect();

    // Newton divided differences, then expansion to the monomial basis.
    let mut table = offsets.clone();
    let mut newton = vec![table[0]];
    for level in 1..n {
        for i in 0..n - level {
            table[i] = (table[i + 1] - table[i]) / (abscissae[i + level] - abscissae[i]);
        }
        newton.push(table[0]);
    }
    let mut coeffs = vec![newton[n - 1]];
    for j in (0..n - 1).rev() {
        // coeffs ← coeffs·(x - x_j) + newton_j
        let mut next = vec![0.0; coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k + 1] += c;
            next[k] -= c * abscissae[j];
        }
        next[0] += newton[j];
        coeffs = next;
    }
    Ok(ShiftFunction { coeffs })
}

/// The finite-difference trick for a first-derivative boundary condition:
/// before residual evaluation the attempt value at `x0` is replaced by
/// `f(x1) - slope·(x1 - x0)` and the first derivative there by `slope`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentialPlan {
    pub function: usize,
    pub x0: f64,
    pub x1: f64,
    pub slope: f64,
}

/// Choose the auxiliary sample for a tangential boundary condition:
/// backward differencing when `x0` is the right end of the sample set,
/// forward differencing otherwise.
pub fn plan_tangential(
    bc: &BoundaryCondition,
    samples: &[f64],
    domain: &Domain,
) -> Result<TangentialPlan> {
    if bc.derivative.total_order() != 1 || bc.derivative.len() != 1 {
        return Err(Error::contract(format!(
            "tangential handling covers only first-order univariate conditions, got {}",
            bc.derivative
        )));
    }
    let x0 = bc.point[0];
    let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let candidate = if x0 >= max {
        samples
            .iter()
            .cloned()
            .filter(|&s| s < x0)
            .fold(f64::NEG_INFINITY, f64::max)
    } else {
        samples
            .iter()
            .cloned()
            .filter(|&s| s > x0)
            .fold(f64::INFINITY, f64::min)
    };
    if !candidate.is_finite() {
        return Err(Error::contract(format!(
            "no sample point adjacent to the boundary abscissa {x0}"
        )));
    }
    if !domain.contains(candidate) {
        return Err(Error::contract(format!(
            "auxiliary point {candidate} lies outside the domain [{}, {}]",
            domain.lo, domain.hi
        )));
    }
    Ok(TangentialPlan { function: bc.function, x0, x1: candidate, slope: bc.target })
}

/// Per-function circuit shape handed to the loss context.
#[derive(Debug, Clone)]
pub struct FunctionSetup {
    pub alloc: VariableAllocation,
    pub circuit: CircuitSpec,
}

/// Rotation angles and scaling of one attempt function.
#[derive(Debug, Clone)]
pub struct FunctionParams {
    pub angles: Vec<f64>,
    pub lambda: f64,
}

/// Loss value split into its components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub diff: f64,
    pub boundaries: f64,
}

/// One equation term bound during residual evaluation.
#[derive(Debug, Clone)]
struct BoundTerm {
    func: usize,
    mi: MultiIndex,
    order_idx: usize,
}

/// Remark-style regrouping of a linear single-function equation: residual
/// at a point is `λ·⟨D⟩ + c` for one combined diagonal `D`.
struct RegroupedEq {
    func: usize,
    /// Per residual point: combined observable and constant offset.
    per_point: Vec<(DiagonalObservable, f64)>,
}

enum EquationPlan {
    PerTerm(Vec<BoundTerm>),
    Regrouped(RegroupedEq),
}

/// Everything fixed across loss evaluations of one problem: observable
/// tables per function, the boundary plan and per-equation term lists.
pub struct LossContext {
    system: DESystem,
    eta: f64,
    strategy: BoundaryStrategy,
    samples: Vec<Vec<f64>>,
    /// Points the residual sum runs over (samples plus any tangential
    /// boundary abscissae not already sampled).
    residual_points: Vec<Vec<f64>>,
    setups: Vec<FunctionSetup>,
    /// Per function: all derivative orders it is ever evaluated at.
    orders: Vec<Vec<MultiIndex>>,
    /// Per function: observables over its projected evaluation points
    /// (residual points first, own boundary points appended).
    tables: Vec<ObservableTable>,
    /// Per function: indices of its boundary conditions handled by the
    /// floating shift, as (bc index, point index in the table).
    shift_plan: Vec<Vec<(usize, usize)>>,
    /// Tangential overrides as (plan, residual index of x0, residual index
    /// of x1).
    tangential: Vec<(TangentialPlan, usize, usize)>,
    /// Boundary conditions evaluated through the penalty term, as
    /// (bc index, point index in the owning function's table).
    penalty_plan: Vec<(usize, usize)>,
    equation_plans: Vec<EquationPlan>,
}

impl LossContext {
    pub fn new(system: DESystem, cfg: LossConfig, setups: Vec<FunctionSetup>) -> Result<Self> {
        if setups.len() != system.functions.len() {
            return Err(Error::contract(format!(
                "{} circuit setups for {} functions",
                setups.len(),
                system.functions.len()
            )));
        }
        for (f, setup) in setups.iter().enumerate() {
            if setup.alloc.n_vars() != system.functions[f].vars.len() {
                return Err(Error::contract(format!(
                    "allocation of `{}` covers {} variables, declaration has {}",
                    system.functions[f].name,
                    setup.alloc.n_vars(),
                    system.functions[f].vars.len()
                )));
            }
        }
        let LossConfig { eta, strategy, samples } = cfg;
        let n_funcs = system.functions.len();

        // Sort the boundary conditions into shift / tangential / penalty.
        let mut shift_bcs: Vec<Vec<usize>> = vec![Vec::new(); n_funcs];
        let mut tangential_plans: Vec<TangentialPlan> = Vec::new();
        let mut tangential_bc: Vec<usize> = Vec::new();
        let mut penalty_bcs: Vec<usize> = Vec::new();
        for (bi, bc) in system.boundary_conditions.iter().enumerate() {
            match strategy {
                BoundaryStrategy::Penalty => penalty_bcs.push(bi),
                BoundaryStrategy::Floating => {
                    if bc.is_value() {
                        require_univariate(&system, bc.function, "floating shift")?;
                        shift_bcs[bc.function].push(bi);
                    } else {
                        penalty_bcs.push(bi);
                    }
                }
                BoundaryStrategy::Tangential => {
                    if bc.is_value() {
                        require_univariate(&system, bc.function, "floating shift")?;
                        shift_bcs[bc.function].push(bi);
                    } else {
                        require_univariate(&system, bc.function, "tangential handling")?;
                        let func = &system.functions[bc.function];
                        let domain = &system.variables[func.vars[0]].domain;
                        let axis: Vec<f64> = samples.iter().map(|p| p[func.vars[0]]).collect();
                        tangential_plans.push(plan_tangential(bc, &axis, domain)?);
                        tangential_bc.push(bi);
                    }
                }
            }
        }

        // The residual sum runs over the samples plus any tangential
        // abscissae that are not sample points already.
        let mut residual_points = samples.clone();
        for plan in &tangential_plans {
            let func = &system.functions[plan.function];
            let var = func.vars[0];
            if !residual_points.iter().any(|p| p[var] == plan.x0) {
                if system.variables.len() != 1 {
                    return Err(Error::contract(
                        "tangential conditions off the sample grid need a univariate problem",
                    ));
                }
                residual_points.push(vec![plan.x0]);
            }
        }

        // Derivative orders each function is evaluated at: equation terms,
        // boundary orders, the bare value, and order one for tangential
        // overrides.
        let from_equations = system.derivative_orders();
        let mut orders: Vec<BTreeSet<MultiIndex>> = vec![BTreeSet::new(); n_funcs];
        for (f, set) in &from_equations {
            orders[*f].extend(set.iter().cloned());
        }
        for (f, order_set) in orders.iter_mut().enumerate() {
            order_set.insert(MultiIndex::zero(system.functions[f].vars.len()));
        }
        for &bi in &penalty_bcs {
            let bc = &system.boundary_conditions[bi];
            orders[bc.function].insert(bc.derivative.clone());
        }
        for plan in &tangential_plans {
            orders[plan.function].insert(MultiIndex::univariate(1, 0, 1));
        }
        let orders: Vec<Vec<MultiIndex>> = orders
            .into_iter()
            .map(|set| set.into_iter().collect())
            .collect();

        // Observable tables per function: projected residual points first,
        // then the function's own boundary points.
        let mut tables = Vec::with_capacity(n_funcs);
        let mut bc_point_index: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_funcs];
        for f in 0..n_funcs {
            let decl = &system.functions[f];
            let mut points: Vec<Vec<f64>> = residual_points
                .iter()
                .map(|p| decl.vars.iter().map(|&v| p[v]).collect())
                .collect();
            for (bi, bc) in system.boundary_conditions.iter().enumerate() {
                if bc.function == f {
                    bc_point_index[f].push((bi, points.len()));
                    points.push(bc.point.clone());
                }
            }
            tables.push(observables_at_points(&orders[f], &points, &setups[f].alloc)?);
        }

        let locate = |f: usize, bi: usize| -> usize {
            bc_point_index[f]
                .iter()
                .find(|(b, _)| *b == bi)
                .map(|(_, idx)| *idx)
                .expect("every boundary condition has a table point")
        };
        let shift_plan: Vec<Vec<(usize, usize)>> = shift_bcs
            .iter()
            .enumerate()
            .map(|(f, bis)| bis.iter().map(|&bi| (bi, locate(f, bi))).collect())
            .collect();
        let penalty_plan: Vec<(usize, usize)> = penalty_bcs
            .iter()
            .map(|&bi| {
                let f = system.boundary_conditions[bi].function;
                (bi, locate(f, bi))
            })
            .collect();

        // Tangential overrides index into the residual-point list.
        let mut tangential = Vec::new();
        for plan in tangential_plans {
            let var = system.functions[plan.function].vars[0];
            let find = |x: f64| -> Result<usize> {
                residual_points
                    .iter()
                    .position(|p| p[var] == x)
                    .ok_or_else(|| Error::contract(format!("point {x} missing from residual grid")))
            };
            let i0 = find(plan.x0)?;
            let i1 = find(plan.x1)?;
            tangential.push((plan, i0, i1));
        }

        // Equation plans: regroup linear single-function equations into one
        // observable per point when no per-iteration value overrides apply
        // (the penalty strategy leaves attempts untouched).
        let mut equation_plans = Vec::with_capacity(system.equations.len());
        for eq in &system.equations {
            let mut term_set = BTreeSet::new();
            crate::problem::function_terms(eq, &mut term_set);
            let terms: Vec<BoundTerm> = term_set
                .iter()
                .map(|(func, mi)| {
                    let order_idx = tables[*func]
                        .order_index(mi)
                        .expect("every equation order is in the table");
                    BoundTerm { func: *func, mi: mi.clone(), order_idx }
                })
                .collect();
            let regroup = strategy == BoundaryStrategy::Penalty
                && is_linear_single_function(eq)
                && !terms.is_empty();
            if regroup {
                let func = terms[0].func;
                let mut per_point = Vec::with_capacity(residual_points.len());
                for (pi, point) in residual_points.iter().enumerate() {
                    // Affine read-off: constant with all terms zeroed, then
                    // one coefficient per term.
                    let mut bindings = Bindings::new();
                    for t in &terms {
                        bindings.insert((t.func, t.mi.clone()), 0.0);
                    }
                    let constant = evaluate_residual(eq, &bindings, point)?;
                    let mut parts: Vec<(f64, &DiagonalObservable)> = Vec::new();
                    for t in &terms {
                        let mut unit = bindings.clone();
                        unit.insert((t.func, t.mi.clone()), 1.0);
                        let coeff = evaluate_residual(eq, &unit, point)? - constant;
                        parts.push((coeff, tables[func].get(t.order_idx, pi)));
                    }
                    per_point.push((combine_linear(&parts)?, constant));
                }
                equation_plans.push(EquationPlan::Regrouped(RegroupedEq { func, per_point }));
            } else {
                equation_plans.push(EquationPlan::PerTerm(terms));
            }
        }

        Ok(LossContext {
            system,
            eta,
            strategy,
            samples,
            residual_points,
            setups,
            orders,
            tables,
            shift_plan,
            tangential,
            penalty_plan,
            equation_plans,
        })
    }

    pub fn system(&self) -> &DESystem {
        &self.system
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn setups(&self) -> &[FunctionSetup] {
        &self.setups
    }

    pub fn strategy(&self) -> BoundaryStrategy {
        self.strategy
    }

    /// Probabilities per function, exact or estimated from sampled counts.
    fn function_probabilities(
        &self,
        params: &[FunctionParams],
        sampling: Option<(u64, u64)>,
    ) -> Result<Vec<Vec<f64>>> {
        if params.len() != self.setups.len() {
            return Err(Error::contract(format!(
                "{} parameter sets for {} functions",
                params.len(),
                self.setups.len()
            )));
        }
        let mut per_function = Vec::with_capacity(params.len());
        for (f, (setup, p)) in self.setups.iter().zip(params).enumerate() {
            let sv = simulate(&setup.circuit, &p.angles)?;
            let probs = match sampling {
                None => probabilities(&sv),
                Some((shots, seed)) => {
                    let counts = sample_counts(&sv, shots, seed.wrapping_add(f as u64))?;
                    let mut freq = vec![0.0; sv.amplitudes().len()];
                    for (idx, c) in counts {
                        freq[idx] = c as f64 / shots as f64;
                    }
                    freq
                }
            };
            per_function.push(probs);
        }
        Ok(per_function)
    }

    /// Attempt values `λ·⟨O⟩` for every function, order and table point,
    /// with the boundary strategy's adjustments applied. Also returns the
    /// shift applied to each function (identically zero when none).
    fn adjusted_values(
        &self,
        params: &[FunctionParams],
        probs: &[Vec<f64>],
    ) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Option<ShiftFunction>>)> {
        let n_funcs = self.setups.len();
        let mut values: Vec<Vec<Vec<f64>>> = Vec::with_capacity(n_funcs);
        for f in 0..n_funcs {
            let lambda = params[f].lambda;
            let table = &self.tables[f];
            let mut per_order = Vec::with_capacity(self.orders[f].len());
            for oi in 0..self.orders[f].len() {
                let row: Vec<f64> = (0..table.samples.len())
                    .map(|pi| {
                        let diag = table.get(oi, pi).diag();
                        lambda * dot(diag, &probs[f])
                    })
                    .collect();
                per_order.push(row);
            }
            values.push(per_order);
        }

        let mut shifts: Vec<Option<ShiftFunction>> = vec![None; n_funcs];
        for f in 0..n_funcs {
            if self.shift_plan[f].is_empty() {
                continue;
            }
            let zero_idx = self.order_index(f, &MultiIndex::zero(self.orders_len(f)));
            let mut abscissae = Vec::new();
            let mut attempt = Vec::new();
            let mut targets = Vec::new();
            for &(bi, pt) in &self.shift_plan[f] {
                let bc = &self.system.boundary_conditions[bi];
                abscissae.push(bc.point[0]);
                attempt.push(values[f][zero_idx][pt]);
                targets.push(bc.target);
            }
            let shift = floating_shift(&abscissae, &attempt, &targets)?;
            for (oi, mi) in self.orders[f].iter().enumerate() {
                let q = mi.total_order();
                for (pi, point) in self.tables[f].samples.iter().enumerate() {
                    values[f][oi][pi] -= shift.derivative_eval(q, point[0]);
                }
            }
            shifts[f] = Some(shift);
        }

        for (plan, i0, i1) in &self.tangential {
            let f = plan.function;
            let zero_idx = self.order_index(f, &MultiIndex::zero(self.orders_len(f)));
            let forced = values[f][zero_idx][*i1] - plan.slope * (plan.x1 - plan.x0);
            values[f][zero_idx][*i0] = forced;
            let first = MultiIndex::univariate(self.orders_len(f), 0, 1);
            if let Some(oi) = self.tables[f].order_index(&first) {
                values[f][oi][*i0] = plan.slope;
            }
        }
        Ok((values, shifts))
    }

    fn orders_len(&self, f: usize) -> usize {
        self.system.functions[f].vars.len()
    }

    fn order_index(&self, f: usize, mi: &MultiIndex) -> usize {
        self.tables[f]
            .order_index(mi)
            .expect("order present in the table")
    }

    /// Differential and boundary losses for one set of attempt parameters.
    pub fn breakdown(
        &self,
        params: &[FunctionParams],
        sampling: Option<(u64, u64)>,
    ) -> Result<LossBreakdown> {
        let probs = self.function_probabilities(params, sampling)?;
        let (values, _) = self.adjusted_values(params, &probs)?;

        let n_res = self.residual_points.len();
        let n_terms = self.system.equations.len() * n_res;
        let flat: Vec<Result<f64>> = if n_terms >= 256 {
            (0..n_terms)
                .into_par_iter()
                .map(|idx| self.residual_term(idx, &values, &probs, params))
                .collect()
        } else {
            (0..n_terms)
                .map(|idx| self.residual_term(idx, &values, &probs, params))
                .collect()
        };
        let squared: Vec<f64> = flat.into_iter().collect::<Result<Vec<f64>>>()?;
        let diff = pairwise_sum(&squared) / n_res as f64;

        let mut boundary_terms = Vec::with_capacity(self.penalty_plan.len());
        for &(bi, pt) in &self.penalty_plan {
            let bc = &self.system.boundary_conditions[bi];
            let oi = self.order_index(bc.function, &bc.derivative);
            let gap = values[bc.function][oi][pt] - bc.target;
            boundary_terms.push(gap * gap);
        }
        let boundaries = if boundary_terms.is_empty() {
            0.0
        } else {
            pairwise_sum(&boundary_terms) / boundary_terms.len() as f64
        };

        Ok(LossBreakdown { total: diff + self.eta * boundaries, diff, boundaries })
    }

    fn residual_term(
        &self,
        idx: usize,
        values: &[Vec<Vec<f64>>],
        probs: &[Vec<f64>],
        params: &[FunctionParams],
    ) -> Result<f64> {
        let n_res = self.residual_points.len();
        let (ei, pi) = (idx / n_res, idx % n_res);
        let point = &self.residual_points[pi];
        let residual = match &self.equation_plans[ei] {
            EquationPlan::Regrouped(re) => {
                let (obs, constant) = &re.per_point[pi];
                params[re.func].lambda * dot(obs.diag(), &probs[re.func]) + constant
            }
            EquationPlan::PerTerm(terms) => {
                let mut bindings = Bindings::new();
                for t in terms {
                    bindings.insert((t.func, t.mi.clone()), values[t.func][t.order_idx][pi]);
                }
                evaluate_residual(&self.system.equations[ei], &bindings, point)?
            }
        };
        Ok(residual * residual)
    }

    pub fn total_loss(
        &self,
        params: &[FunctionParams],
        sampling: Option<(u64, u64)>,
    ) -> Result<f64> {
        Ok(self.breakdown(params, sampling)?.total)
    }

    /// The shift each function would receive at these parameters; used to
    /// fold exact boundary handling into reported solutions.
    pub fn final_shifts(&self, params: &[FunctionParams]) -> Result<Vec<Option<ShiftFunction>>> {
        let probs = self.function_probabilities(params, None)?;
        let (_, shifts) = self.adjusted_values(params, &probs)?;
        Ok(shifts)
    }
}

fn require_univariate(system: &DESystem, func: usize, what: &str) -> Result<()> {
    if system.functions[func].vars.len() != 1 {
        return Err(Error::contract(format!(
            "{what} supports univariate functions only; `{}` has {} variables",
            system.functions[func].name,
            system.functions[func].vars.len()
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean squared equation residual of raw (unshifted) attempts.
pub fn loss_diff(
    system: &DESystem,
    setups: &[FunctionSetup],
    params: &[FunctionParams],
    samples: &[Vec<f64>],
) -> Result<f64> {
    let cfg = LossConfig::new(0.0, BoundaryStrategy::Penalty, samples.to_vec())?;
    let ctx = LossContext::new(system.clone(), cfg, setups.to_vec())?;
    Ok(ctx.breakdown(params, None)?.diff)
}

/// Mean squared boundary violation of raw attempts.
pub fn loss_boundaries(
    system: &DESystem,
    setups: &[FunctionSetup],
    params: &[FunctionParams],
) -> Result<f64> {
    let samples = generate_samples(1, &all_domains(system))?;
    let cfg = LossConfig::new(0.0, BoundaryStrategy::Penalty, samples)?;
    let ctx = LossContext::new(system.clone(), cfg, setups.to_vec())?;
    Ok(ctx.breakdown(params, None)?.boundaries)
}

/// Full loss under the configured boundary strategy.
pub fn total_loss(
    system: &DESystem,
    setups: &[FunctionSetup],
    params: &[FunctionParams],
    cfg: LossConfig,
) -> Result<f64> {
    let ctx = LossContext::new(system.clone(), cfg, setups.to_vec())?;
    ctx.total_loss(params, None)
}

pub fn all_domains(system: &DESystem) -> Vec<Domain> {
    system.variables.iter().map(|v| v.domain).collect()
}
