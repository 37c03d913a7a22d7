//! Solution scoring against reference solutions, an RK4 reference
//! integrator, and solver performance profiles.
//!
//! A score is always the pair (maximum absolute error, mean squared error)
//! over a validation grid. Per-derivative scores combine into a
//! per-function score (max of the first components, mean of the second),
//! and per-function scores combine the same way into the global score.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::cheb::MultiIndex;
use crate::error::{Error, Result};
use crate::problem::{evaluate_residual, Bindings, DESystem};

/// (max absolute error, mean squared error) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationScore(pub f64, pub f64);

/// Maximum absolute difference over the validation points.
pub fn distance_max(
    f: impl Fn(f64) -> Result<f64>,
    g: impl Fn(f64) -> Result<f64>,
    points: &[f64],
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::contract("validation grid must not be empty"));
    }
    let mut worst = 0.0f64;
    for &x in points {
        worst = worst.max((f(x)? - g(x)?).abs());
    }
    Ok(worst)
}

/// Mean squared difference over the validation points.
pub fn distance_mse(
    f: impl Fn(f64) -> Result<f64>,
    g: impl Fn(f64) -> Result<f64>,
    points: &[f64],
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::contract("validation grid must not be empty"));
    }
    let mut acc = 0.0;
    for &x in points {
        let d = f(x)? - g(x)?;
        acc += d * d;
    }
    Ok(acc / points.len() as f64)
}

/// Per-derivative scores and their per-function combination: the first
/// component is the worst max-error across orders, the second the mean of
/// the mean-squared errors.
pub fn score_levels(
    solved: &dyn Fn(f64, u32) -> Result<f64>,
    reference: &dyn Fn(f64, u32) -> Result<f64>,
    orders: &[u32],
    points: &[f64],
) -> Result<(BTreeMap<u32, ValidationScore>, ValidationScore)> {
    if orders.is_empty() {
        return Err(Error::contract("no derivative orders to score"));
    }
    let mut per_order = BTreeMap::new();
    for &q in orders {
        let d1 = distance_max(|x| solved(x, q), |x| reference(x, q), points)?;
        let d2 = distance_mse(|x| solved(x, q), |x| reference(x, q), points)?;
        per_order.insert(q, ValidationScore(d1, d2));
    }
    let combined = combine_scores(per_order.values().copied());
    Ok((per_order, combined))
}

/// Global score across functions: max of first components, mean of second.
pub fn score_global(per_function: &[ValidationScore]) -> Result<ValidationScore> {
    if per_function.is_empty() {
        return Err(Error::contract("no per-function scores to combine"));
    }
    Ok(combine_scores(per_function.iter().copied()))
}

fn combine_scores(scores: impl Iterator<Item = ValidationScore>) -> ValidationScore {
    let mut max = 0.0f64;
    let mut sum = 0.0;
    let mut count = 0usize;
    for ValidationScore(d1, d2) in scores {
        max = max.max(d1);
        sum += d2;
        count += 1;
    }
    ValidationScore(max, sum / count.max(1) as f64)
}

/// Where a reference solution came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ClosedForm,
    Rk4,
    Tabulated,
}

enum RefFunc {
    /// Derivative evaluators indexed by order.
    Closed(Vec<Box<dyn Fn(f64) -> f64 + Send + Sync>>),
    /// Component of an integrated trajectory.
    Dense { state_offset: usize, reduction_order: usize },
    /// Interpolated table columns per derivative order.
    Table(BTreeMap<u32, Vec<f64>>),
}

/// Evaluates reference values and derivatives for every solved function.
pub struct ReferenceSolution {
    pub provenance: Provenance,
    funcs: BTreeMap<String, RefFunc>,
    trajectory: Option<Trajectory>,
    table_xs: Vec<f64>,
}

impl ReferenceSolution {
    /// Closed-form reference: per function, derivative evaluators indexed
    /// by order (index 0 is the function itself).
    pub fn closed_form(
        funcs: BTreeMap<String, Vec<Box<dyn Fn(f64) -> f64 + Send + Sync>>>,
    ) -> Self {
        ReferenceSolution {
            provenance: Provenance::ClosedForm,
            funcs: funcs.into_iter().map(|(k, v)| (k, RefFunc::Closed(v))).collect(),
            trajectory: None,
            table_xs: Vec::new(),
        }
    }

    /// Tabulated reference from CSV text: first column `x`, then one column
    /// per function or derivative, named `f` or `f:q`.
    pub fn from_table_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::contract("reference table is empty"))?;
        let names: Vec<&str> = header.split(',').map(str::trim).collect();
        if names.is_empty() || names[0] != "x" {
            return Err(Error::contract("reference table must start with an `x` column"));
        }
        let mut columns: Vec<(String, u32, Vec<f64>)> = Vec::new();
        for name in &names[1..] {
            let (func, q) = match name.split_once(':') {
                Some((f, q)) => (
                    f.to_string(),
                    q.parse::<u32>().map_err(|_| {
                        Error::contract(format!("bad derivative order in column `{name}`"))
                    })?,
                ),
                None => (name.to_string(), 0),
            };
            columns.push((func, q, Vec::new()));
        }
        let mut xs = Vec::new();
        for line in lines {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != names.len() {
                return Err(Error::contract(format!(
                    "table row has {} cells, header has {}",
                    cells.len(),
                    names.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::contract(format!("bad number `{s}` in reference table")))
            };
            xs.push(parse(cells[0])?);
            for (col, cell) in columns.iter_mut().zip(&cells[1..]) {
                col.2.push(parse(cell)?);
            }
        }
        if xs.len() < 2 {
            return Err(Error::contract("reference table needs at least two rows"));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::contract("reference table abscissae must be increasing"));
        }
        let mut funcs: BTreeMap<String, BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
        for (func, q, values) in columns {
            funcs.entry(func).or_default().insert(q, values);
        }
        Ok(ReferenceSolution {
            provenance: Provenance::Tabulated,
            funcs: funcs.into_iter().map(|(k, v)| (k, RefFunc::Table(v))).collect(),
            trajectory: None,
            table_xs: xs,
        })
    }

    pub fn supports(&self, func: &str, order: u32) -> bool {
        match self.funcs.get(func) {
            None => false,
            Some(RefFunc::Closed(list)) => (order as usize) < list.len(),
            Some(RefFunc::Dense { .. }) => true,
            Some(RefFunc::Table(cols)) => cols.contains_key(&order),
        }
    }

    /// Value of the `order`-th derivative of `func` at `x`.
    pub fn eval(&self, func: &str, x: f64, order: u32) -> Result<f64> {
        match self.funcs.get(func) {
            None => Err(Error::contract(format!("reference has no function `{func}`"))),
            Some(RefFunc::Closed(list)) => list
                .get(order as usize)
                .map(|f| f(x))
                .ok_or_else(|| missing_order(func, order)),
            Some(RefFunc::Dense { state_offset, reduction_order }) => {
                let traj = self.trajectory.as_ref().expect("dense reference has a trajectory");
                traj.eval(x, *state_offset, *reduction_order, order)
            }
            Some(RefFunc::Table(cols)) => {
                let values = cols.get(&order).ok_or_else(|| missing_order(func, order))?;
                Ok(interp_table(&self.table_xs, values, x))
            }
        }
    }
}

fn missing_order(func: &str, order: u32) -> Error {
    Error::contract(format!(
        "reference does not provide derivative order {order} of `{func}`"
    ))
}

/// Four-point Lagrange interpolation, exact at the nodes.
fn interp_table(xs: &[f64], values: &[f64], x: f64) -> f64 {
    if let Some(i) = xs.iter().position(|&v| v == x) {
        return values[i];
    }
    let upper = xs.partition_point(|&v| v < x);
    let start = upper.saturating_sub(2).min(xs.len().saturating_sub(4));
    let window = (start..(start + 4).min(xs.len())).collect::<Vec<_>>();
    let mut acc = 0.0;
    for &i in &window {
        let mut weight = 1.0;
        for &j in &window {
            if i != j {
                weight *= (x - xs[j]) / (xs[i] - xs[j]);
            }
        }
        acc += weight * values[i];
    }
    acc
}

/// Dense RK4 trajectory with cubic-Hermite interpolation between nodes.
/// `slopes[node]` holds the full state derivative at the node, and `rhs`
/// maps `(x, state)` to that full derivative.
struct Trajectory {
    xs: Vec<f64>,
    states: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
    rhs: Box<dyn Fn(f64, &[f64]) -> Result<Vec<f64>> + Send + Sync>,
}

impl Trajectory {
    fn interp_state(&self, x: f64) -> Result<Vec<f64>> {
        let n = self.xs.len();
        if x < self.xs[0] - 1e-9 || x > self.xs[n - 1] + 1e-9 {
            return Err(Error::contract(format!(
                "point {x} outside the integrated range [{}, {}]",
                self.xs[0],
                self.xs[n - 1]
            )));
        }
        let x = x.clamp(self.xs[0], self.xs[n - 1]);
        let hi = self.xs.partition_point(|&v| v < x).clamp(1, n - 1);
        let lo = hi - 1;
        let h = self.xs[hi] - self.xs[lo];
        let t = (x - self.xs[lo]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let (h00, h10, h01, h11) = (
            2.0 * t3 - 3.0 * t2 + 1.0,
            t3 - 2.0 * t2 + t,
            -2.0 * t3 + 3.0 * t2,
            t3 - t2,
        );
        let dim = self.states[0].len();
        let mut out = Vec::with_capacity(dim);
        for c in 0..dim {
            out.push(
                h00 * self.states[lo][c]
                    + h10 * h * self.slope(lo, c)
                    + h01 * self.states[hi][c]
                    + h11 * h * self.slope(hi, c),
            );
        }
        Ok(out)
    }

    fn slope(&self, node: usize, component: usize) -> f64 {
        self.slopes[node][component]
    }

    /// Derivative `order` of the function whose components start at
    /// `offset` with reduction order `m`.
    fn eval(&self, x: f64, offset: usize, m: usize, order: u32) -> Result<f64> {
        if (order as usize) < m {
            let state = self.interp_state(x)?;
            Ok(state[offset + order as usize])
        } else if order as usize == m {
            // The slope of the function's last component is its top
            // derivative.
            let state = self.interp_state(x)?;
            let slopes = (self.rhs)(x, &state)?;
            Ok(slopes[offset + m - 1])
        } else {
            // Numerical differentiation one order above the reduction.
            let h = 1e-5;
            let up = self.eval(x + h, offset, m, order - 1);
            let down = self.eval(x - h, offset, m, order - 1);
            match (up, down) {
                (Ok(u), Ok(d)) => Ok((u - d) / (2.0 * h)),
                // Fall back to one-sided differences at the range ends.
                _ => {
                    let mid = self.eval(x, offset, m, order - 1)?;
                    if let Ok(u) = self.eval(x + h, offset, m, order - 1) {
                        Ok((u - mid) / h)
                    } else {
                        let d = self.eval(x - h, offset, m, order - 1)?;
                        Ok((mid - d) / h)
                    }
                }
            }
        }
    }
}

/// Build an RK4 reference for a system reducible to a first-order IVP.
///
/// Every function must be univariate in the same variable, each equation
/// must be affine in the highest derivative of the function it determines,
/// and the boundary conditions must pin the first `m` derivatives of every
/// function at one common abscissa. Integration runs forward and backward
/// from that abscissa to cover the whole domain.
pub fn rk4_reference(system: &DESystem, step: f64) -> Result<ReferenceSolution> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::contract(format!("step must be positive, got {step}")));
    }
    if system.variables.len() != 1 {
        return Err(Error::contract(
            "the RK4 reference covers single-variable systems only",
        ));
    }
    let n_funcs = system.functions.len();
    let orders = system.derivative_orders();

    // Reduction order per function.
    let mut reduction = vec![0usize; n_funcs];
    for f in 0..n_funcs {
        let m = orders
            .get(&f)
            .and_then(|set| set.iter().map(|mi| mi.total_order()).max())
            .unwrap_or(0);
        if m == 0 {
            return Err(Error::contract(format!(
                "`{}` is never differentiated; the system is not an IVP",
                system.functions[f].name
            )));
        }
        reduction[f] = m as usize;
    }

    // Match each equation to the function whose top derivative it carries.
    let mut eq_terms: Vec<BTreeSet<(usize, MultiIndex)>> = Vec::new();
    for eq in &system.equations {
        let mut terms = BTreeSet::new();
        crate::problem::function_terms(eq, &mut terms);
        eq_terms.push(terms);
    }
    if system.equations.len() != n_funcs {
        return Err(Error::contract(format!(
            "{} equations for {} functions; cannot reduce to an IVP",
            system.equations.len(),
            n_funcs
        )));
    }
    let mut assigned: Vec<Option<usize>> = vec![None; system.equations.len()];
    let mut taken = vec![false; n_funcs];
    loop {
        let mut progress = false;
        for (ei, terms) in eq_terms.iter().enumerate() {
            if assigned[ei].is_some() {
                continue;
            }
            let candidates: Vec<usize> = (0..n_funcs)
                .filter(|&f| {
                    !taken[f]
                        && terms.contains(&(f, MultiIndex::new(vec![reduction[f] as u32])))
                })
                .collect();
            if candidates.len() == 1 {
                assigned[ei] = Some(candidates[0]);
                taken[candidates[0]] = true;
                progress = true;
            }
        }
        if assigned.iter().all(Option::is_some) {
            break;
        }
        if !progress {
            return Err(Error::contract(
                "cannot match equations to top derivatives; the system is not reducible",
            ));
        }
    }

    // No equation may involve another function's top derivative.
    for (ei, terms) in eq_terms.iter().enumerate() {
        let own = assigned[ei].unwrap();
        for (f, mi) in terms {
            if *f != own && mi.total_order() as usize >= reduction[*f] {
                return Err(Error::contract(
                    "equations couple top derivatives; the system is not reducible",
                ));
            }
        }
    }

    // State layout: function components in declaration order.
    let mut state_offset = vec![0usize; n_funcs];
    let mut dim = 0usize;
    for f in 0..n_funcs {
        state_offset[f] = dim;
        dim += reduction[f];
    }
    // Full-state right-hand side: lower components shift up, and each
    // function's last component gets its equation solved for the top
    // derivative, which must enter affinely.
    let equations = system.equations.clone();
    let reduction_rhs = reduction.clone();
    let offsets = state_offset.clone();
    let eq_of_func: Vec<usize> = (0..n_funcs)
        .map(|f| assigned.iter().position(|&a| a == Some(f)).unwrap())
        .collect();
    let rhs = move |x: f64, state: &[f64]| -> Result<Vec<f64>> {
        let mut out = vec![0.0; state.len()];
        for f in 0..n_funcs {
            for q in 0..reduction_rhs[f] - 1 {
                out[offsets[f] + q] = state[offsets[f] + q + 1];
            }
            let eq = &equations[eq_of_func[f]];
            let top = MultiIndex::new(vec![reduction_rhs[f] as u32]);
            let mut bindings = Bindings::new();
            for g in 0..n_funcs {
                for q in 0..reduction_rhs[g] {
                    bindings.insert(
                        (g, MultiIndex::new(vec![q as u32])),
                        state[offsets[g] + q],
                    );
                }
            }
            bindings.insert((f, top.clone()), 0.0);
            let b = evaluate_residual(eq, &bindings, &[x])?;
            bindings.insert((f, top.clone()), 1.0);
            let ab = evaluate_residual(eq, &bindings, &[x])?;
            bindings.insert((f, top), 2.0);
            let a2b = evaluate_residual(eq, &bindings, &[x])?;
            let a = ab - b;
            if (a2b - ab - a).abs() > 1e-9 * (1.0 + a.abs()) {
                return Err(Error::contract(
                    "equation is not affine in its top derivative",
                ));
            }
            if a.abs() < 1e-12 {
                return Err(Error::eval(
                    "top-derivative coefficient vanishes; cannot solve for the derivative"
                        .to_string(),
                ));
            }
            out[offsets[f] + reduction_rhs[f] - 1] = -b / a;
        }
        Ok(out)
    };

    // Initial conditions: one common abscissa pinning derivatives
    // 0..m_f-1 of every function.
    let mut x0: Option<f64> = None;
    let mut initial = vec![None; dim];
    for bc in &system.boundary_conditions {
        let q = bc.derivative.total_order() as usize;
        if q >= reduction[bc.function] {
            return Err(Error::contract(format!(
                "boundary condition on derivative {q} of `{}` exceeds its reduction order",
                system.functions[bc.function].name
            )));
        }
        match x0 {
            None => x0 = Some(bc.point[0]),
            Some(existing) if existing == bc.point[0] => {}
            Some(existing) => {
                return Err(Error::contract(format!(
                    "boundary conditions at {existing} and {} do not form an initial value problem",
                    bc.point[0]
                )));
            }
        }
        initial[state_offset[bc.function] + q] = Some(bc.target);
    }
    let x0 = x0.ok_or_else(|| Error::contract("no boundary conditions; not an IVP"))?;
    let y0: Vec<f64> = initial
        .into_iter()
        .enumerate()
        .map(|(c, v)| {
            v.ok_or_else(|| {
                Error::contract(format!(
                    "missing initial condition for state component {c}; not a complete IVP"
                ))
            })
        })
        .collect::<Result<Vec<f64>>>()?;

    let domain = system.variables[0].domain;
    if !domain.contains(x0) {
        return Err(Error::contract(format!(
            "initial abscissa {x0} outside the domain [{}, {}]",
            domain.lo, domain.hi
        )));
    }

    // Integrate both directions and merge the nodes in ascending order.
    let mut nodes: Vec<(f64, Vec<f64>)> = vec![(x0, y0.clone())];
    for (target, dir) in [(domain.hi, 1.0), (domain.lo, -1.0)] {
        let mut x = x0;
        let mut y = y0.clone();
        while (target - x) * dir > 1e-14 {
            let h = step.min((target - x) * dir) * dir;
            y = rk4_step(&rhs, x, &y, h)?;
            x += h;
            nodes.push((x, y.clone()));
        }
    }
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    nodes.dedup_by(|a, b| a.0 == b.0);
    let xs: Vec<f64> = nodes.iter().map(|n| n.0).collect();
    let states: Vec<Vec<f64>> = nodes.iter().map(|n| n.1.clone()).collect();
    let slopes = states
        .iter()
        .zip(&xs)
        .map(|(y, &x)| rhs(x, y))
        .collect::<Result<Vec<_>>>()?;

    let mut funcs = BTreeMap::new();
    for f in 0..n_funcs {
        funcs.insert(
            system.functions[f].name.clone(),
            RefFunc::Dense { state_offset: state_offset[f], reduction_order: reduction[f] },
        );
    }
    Ok(ReferenceSolution {
        provenance: Provenance::Rk4,
        funcs,
        trajectory: Some(Trajectory {
            xs,
            states,
            slopes,
            rhs: Box::new(rhs),
        }),
        table_xs: Vec::new(),
    })
}

fn rk4_step(
    rhs: &impl Fn(f64, &[f64]) -> Result<Vec<f64>>,
    x: f64,
    y: &[f64],
    h: f64,
) -> Result<Vec<f64>> {
    let k1 = rhs(x, y)?;
    let k2 = rhs(x + h / 2.0, &axpy(y, &k1, h / 2.0))?;
    let k3 = rhs(x + h / 2.0, &axpy(y, &k2, h / 2.0))?;
    let k4 = rhs(x + h, &axpy(y, &k3, h))?;
    Ok(y.iter()
        .enumerate()
        .map(|(i, &yi)| yi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

fn axpy(y: &[f64], k: &[f64], h: f64) -> Vec<f64> {
    y.iter().zip(k).map(|(yi, ki)| yi + h * ki).collect()
}

/// Performance ratios for one problem: each solver's score divided by the
/// best score, with failures (score above the acceptance threshold) set to
/// `r_max`. A zero best score gives the zero scorers ratio 1 and everyone
/// else `r_max`.
pub fn performance_ratio(scores: &[f64], threshold: f64, r_max: f64) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::contract("no solver scores"));
    }
    if scores.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::contract("scores must be finite and non-negative"));
    }
    let best = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(scores
        .iter()
        .map(|&s| {
            if s > threshold {
                r_max
            } else if best == 0.0 {
                if s == 0.0 {
                    1.0
                } else {
                    r_max
                }
            } else {
                (s / best).min(r_max)
            }
        })
        .collect())
}

/// Cumulative profile `ρ(τ) = |{p : r_p ≤ τ}| / |P|` for one solver.
pub fn performance_profile(ratios: &[f64], tau_grid: &[f64]) -> Result<Vec<f64>> {
    if ratios.is_empty() {
        return Err(Error::contract("no problems in the ratio table"));
    }
    if tau_grid.is_empty() {
        return Err(Error::contract("empty τ grid"));
    }
    Ok(tau_grid
        .iter()
        .map(|&tau| ratios.iter().filter(|&&r| r <= tau).count() as f64 / ratios.len() as f64)
        .collect())
}

/// Step-function breakpoints covering every ratio plus 1 and `r_max`.
pub fn default_tau_grid(ratio_table: &[Vec<f64>], r_max: f64) -> Vec<f64> {
    let mut taus: Vec<f64> = ratio_table.iter().flatten().copied().collect();
    taus.push(1.0);
    taus.push(r_max);
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    taus
}

/// Scores serialized for one function.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FunctionScores {
    /// Derivative order (as a multi-index key, e.g. `"1"`) → score.
    pub orders: BTreeMap<String, ValidationScore>,
    #[serde(rename = "V_f")]
    pub combined: ValidationScore,
}

/// The full score report of one solved problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    pub per_function: BTreeMap<String, FunctionScores>,
    #[serde(rename = "V")]
    pub global: ValidationScore,
}

/// Score every solved function (and the derivatives appearing in the
/// equations) against a reference on `points` validation points spread
/// linearly over the domain.
pub fn score_solution(
    system: &DESystem,
    solved: &crate::solver::SolveResult,
    reference: &ReferenceSolution,
    points: usize,
) -> Result<ScoreReport> {
    if system.variables.len() != 1 {
        return Err(Error::contract("validation scoring covers univariate systems"));
    }
    let domain = system.variables[0].domain;
    let grid: Vec<f64> = crate::loss::generate_samples(points, &[domain])?
        .into_iter()
        .map(|p| p[0])
        .collect();
    let orders = system.derivative_orders();

    let mut per_function = BTreeMap::new();
    let mut combined_list = Vec::new();
    for (f, decl) in system.functions.iter().enumerate() {
        let wanted: Vec<u32> = orders
            .get(&f)
            .map(|set| set.iter().map(|mi| mi.total_order()).collect())
            .unwrap_or_default();
        for &q in &wanted {
            if !reference.supports(&decl.name, q) {
                return Err(Error::contract(format!(
                    "reference does not provide derivative order {q} of `{}`",
                    decl.name
                )));
            }
        }
        let expansion = solved
            .function(&decl.name)
            .ok_or_else(|| {
                Error::contract(format!("solution has no function `{}`", decl.name))
            })?
            .expansion();
        let solved_eval = |x: f64, q: u32| expansion.eval(&[x], &MultiIndex::new(vec![q]));
        let ref_eval = |x: f64, q: u32| reference.eval(&decl.name, x, q);
        let (per_order, combined) = score_levels(&solved_eval, &ref_eval, &wanted, &grid)?;
        combined_list.push(combined);
        per_function.insert(
            decl.name.clone(),
            FunctionScores {
                orders: per_order
                    .into_iter()
                    .map(|(q, s)| (q.to_string(), s))
                    .collect(),
                combined,
            },
        );
    }
    Ok(ScoreReport { per_function, global: score_global(&combined_list)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::parse_problem;
    use approx::assert_abs_diff_eq;

    fn grid(n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn distances_match_stated_examples() {
        let s = [0.0, 0.5, 1.0];
        let id = |x: f64| Ok(x);
        assert_eq!(distance_max(id, id, &s).unwrap(), 0.0);
        assert_eq!(distance_max(id, |x| Ok(x + 0.1), &s).unwrap(), 0.10000000000000009);
        assert_abs_diff_eq!(
            distance_max(id, |x| Ok(x * x), &s).unwrap(),
            0.25,
            epsilon = 1e-15
        );

        assert_eq!(distance_mse(id, id, &s).unwrap(), 0.0);
        assert_abs_diff_eq!(
            distance_mse(id, |x| Ok(x + 0.1), &s).unwrap(),
            0.01,
            epsilon = 1e-15
        );
        let two = [0.0, 1.0];
        let offsets = |x: f64| Ok(x + if x == 0.0 { 0.1 } else { 0.3 });
        assert_abs_diff_eq!(distance_mse(id, offsets, &two).unwrap(), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn mse_is_invariant_under_grid_resizing_for_constant_offsets() {
        let id = |x: f64| Ok(x);
        let shifted = |x: f64| Ok(x + 0.1);
        let coarse = distance_mse(id, shifted, &grid(50, 0.0, 1.0)).unwrap();
        let fine = distance_mse(id, shifted, &grid(200, 0.0, 1.0)).unwrap();
        assert_abs_diff_eq!(coarse, fine, epsilon = 1e-12);
        assert_abs_diff_eq!(coarse, 0.01, epsilon = 1e-12);
    }

    #[test]
    fn level_scores_match_stated_examples() {
        let pts = grid(10, 0.0, 1.0);
        // Exact match at all orders.
        let f = |x: f64, q: u32| Ok(if q == 0 { x } else if q == 1 { 1.0 } else { 0.0 });
        let (per, combined) = score_levels(&f, &f, &[0, 1], &pts).unwrap();
        assert_eq!(per[&0], ValidationScore(0.0, 0.0));
        assert_eq!(combined, ValidationScore(0.0, 0.0));

        // Constructed offsets: order 0 off by 0.1, order 1 off by 0.2.
        let g = |x: f64, q: u32| {
            Ok(if q == 0 { x + 0.1 } else if q == 1 { 1.2 } else { 0.0 })
        };
        let (per, combined) = score_levels(&g, &f, &[0, 1], &pts).unwrap();
        assert_abs_diff_eq!(per[&0].0, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(per[&1].0, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(combined.0, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(combined.1, 0.5 * (0.01 + 0.04), epsilon = 1e-12);

        // Single order: the combination is the score itself.
        let (per, combined) = score_levels(&g, &f, &[0], &pts).unwrap();
        assert_eq!(per[&0], combined);
    }

    #[test]
    fn global_score_matches_stated_examples() {
        let single = [ValidationScore(0.3, 0.02)];
        assert_eq!(score_global(&single).unwrap(), single[0]);

        let pair = [ValidationScore(0.1, 0.01), ValidationScore(0.4, 0.03)];
        let v = score_global(&pair).unwrap();
        assert_abs_diff_eq!(v.0, 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(v.1, 0.02, epsilon = 1e-15);

        let zeros = [ValidationScore(0.0, 0.0), ValidationScore(0.0, 0.0)];
        assert_eq!(score_global(&zeros).unwrap(), ValidationScore(0.0, 0.0));
    }

    #[test]
    fn rk4_reproduces_the_exponential() {
        let sys = parse_problem("var x in [0, 1]; fun y(x); eq: D(y, x) - y = 0; bc: y(0) = 1;")
            .unwrap();
        let reference = rk4_reference(&sys, 1e-3).unwrap();
        assert_abs_diff_eq!(
            reference.eval("y", 1.0, 0).unwrap(),
            std::f64::consts::E,
            epsilon = 1e-6
        );
        // First derivative equals the function for the exponential.
        assert_abs_diff_eq!(
            reference.eval("y", 0.5, 1).unwrap(),
            reference.eval("y", 0.5, 0).unwrap(),
            epsilon = 1e-6
        );
    }

    #[test]
    fn rk4_order_check() {
        let sys = parse_problem("var x in [0, 1]; fun y(x); eq: D(y, x) - y = 0; bc: y(0) = 1;")
            .unwrap();
        let coarse = rk4_reference(&sys, 0.1).unwrap();
        let fine = rk4_reference(&sys, 0.05).unwrap();
        let exact = std::f64::consts::E;
        let e_coarse = (coarse.eval("y", 1.0, 0).unwrap() - exact).abs();
        let e_fine = (fine.eval("y", 1.0, 0).unwrap() - exact).abs();
        let factor = e_coarse / e_fine;
        assert!(
            (8.0..=32.0).contains(&factor),
            "halving h changed the error by {factor}, expected ≈ 16"
        );
    }

    #[test]
    fn rk4_solves_the_coupled_system() {
        let sys = parse_problem(
            "var x in [0, 0.95]; fun f(x); fun g(x); eq: D(f, x) - 5 = 0; eq: D(g, x) - f - 5 = 0; bc: f(0) = 0; bc: g(0) = 0;",
        )
        .unwrap();
        let reference = rk4_reference(&sys, 1e-3).unwrap();
        for &x in &[0.0, 0.3, 0.7, 0.95] {
            assert_abs_diff_eq!(reference.eval("f", x, 0).unwrap(), 5.0 * x, epsilon = 1e-8);
            assert_abs_diff_eq!(
                reference.eval("g", x, 0).unwrap(),
                5.0 * x + 2.5 * x * x,
                epsilon = 1e-8
            );
            assert_abs_diff_eq!(reference.eval("g", x, 1).unwrap(), 5.0 * x + 5.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn rk4_integrates_backward_from_a_right_end_condition() {
        let sys = parse_problem(
            "param b = 10; var x in [0, 0.95]; fun sigma(x); eq: D(sigma, x) + b = 0; bc: sigma(0.9) = 2;",
        )
        .unwrap();
        let reference = rk4_reference(&sys, 1e-3).unwrap();
        for &x in &[0.0, 0.45, 0.9, 0.95] {
            assert_abs_diff_eq!(
                reference.eval("sigma", x, 0).unwrap(),
                2.0 + 10.0 * (0.9 - x),
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn rk4_handles_second_order_reductions() {
        // y'' = -y with y(0) = 0, y'(0) = 1 is sin(x).
        let sys = parse_problem(
            "var x in [0, 1.5]; fun y(x); eq: D(y, x, 2) + y = 0; bc: y(0) = 0; bc: D(y, x, 1)(0) = 1;",
        )
        .unwrap();
        let reference = rk4_reference(&sys, 1e-3).unwrap();
        for &x in &[0.2, 0.8, 1.4] {
            assert_abs_diff_eq!(reference.eval("y", x, 0).unwrap(), x.sin(), epsilon = 1e-8);
            assert_abs_diff_eq!(reference.eval("y", x, 1).unwrap(), x.cos(), epsilon = 1e-6);
            assert_abs_diff_eq!(reference.eval("y", x, 2).unwrap(), -x.sin(), epsilon = 1e-6);
        }
    }

    #[test]
    fn rk4_rejects_non_ivp_boundary_sets() {
        // Conditions at two different abscissae.
        let sys = parse_problem(
            "var x in [0, 1]; fun f(x); fun g(x); eq: D(f, x) - 1 = 0; eq: D(g, x) - f = 0; bc: f(0) = 0; bc: g(1) = 0;",
        )
        .unwrap();
        assert!(rk4_reference(&sys, 1e-3).is_err());

        // Missing initial condition.
        let sys = parse_problem(
            "var x in [0, 1]; fun y(x); eq: D(y, x, 2) + y = 0; bc: y(0) = 0;",
        )
        .unwrap();
        assert!(rk4_reference(&sys, 1e-3).is_err());

        // Not affine in the top derivative.
        let sys = parse_problem(
            "var x in [0, 1]; fun y(x); eq: D(y, x)^2 - y = 0; bc: y(0) = 1;",
        )
        .unwrap();
        assert!(rk4_reference(&sys, 1e-3).is_err());
    }

    #[test]
    fn tabulated_references_interpolate_and_report_missing_orders() {
        let mut csv = String::from("x,f,f:1\n");
        for i in 0..60 {
            let x = i as f64 / 59.0;
            csv.push_str(&format!("{x},{},{}\n", x * x * x, 3.0 * x * x));
        }
        let reference = ReferenceSolution::from_table_csv(&csv).unwrap();
        assert!(reference.supports("f", 1));
        assert!(!reference.supports("f", 2));
        assert!(!reference.supports("g", 0));
        // Exact at nodes.
        let node = 10.0 / 59.0;
        assert_eq!(reference.eval("f", node, 0).unwrap(), node * node * node);
        // Cubic interpolation is exact for a cubic between nodes too.
        assert_abs_diff_eq!(reference.eval("f", 0.4321, 0).unwrap(), 0.4321f64.powi(3), epsilon = 1e-12);
        assert!(reference.eval("f", 0.5, 2).is_err());
    }

    #[test]
    fn ratios_match_stated_examples() {
        let r = performance_ratio(&[1e-3, 2e-3], 5e-2, 1e6).unwrap();
        assert_eq!(r, vec![1.0, 2.0]);

        // A score above the acceptance threshold fails outright.
        let r = performance_ratio(&[1e-3, 0.9], 5e-2, 1e6).unwrap();
        assert_eq!(r[1], 1e6);

        // Zero best score: zero scorers tie at 1, the rest fail.
        let r = performance_ratio(&[0.0, 1e-3, 0.0], 5e-2, 1e6).unwrap();
        assert_eq!(r, vec![1.0, 1e6, 1.0]);
    }

    #[test]
    fn profiles_are_nondecreasing_and_saturate() {
        let ratios = vec![1.0, 2.0, 4.0, 1e6, 1e6];
        let grid = default_tau_grid(&[ratios.clone()], 1e6);
        let rho = performance_profile(&ratios, &grid).unwrap();
        for w in rho.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert_eq!(*rho.last().unwrap(), 1.0);
        // Below r_max the curve plateaus at the solved fraction 3/5.
        let below = performance_profile(&ratios, &[1e6 - 1.0]).unwrap();
        assert_abs_diff_eq!(below[0], 0.6, epsilon = 1e-15);

        let all_solved = performance_profile(&[1.0, 1.0, 1.0], &[1.0]).unwrap();
        assert_eq!(all_solved[0], 1.0);
    }
}
