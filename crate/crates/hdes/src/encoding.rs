//! Mapping between circuit probabilities and spectral coefficients.
//!
//! A register of `N = 1 + Σ l_j` qubits encodes one trial function: the
//! leading (most significant) qubit carries the coefficient sign and each
//! variable `j` owns the next `l_j` qubits, whose bit pattern is the order of
//! that variable's Chebyshev factor. The signed coefficient of basis index
//! `i < 2^(N-1)` is `λ·(p_i - p_{i+2^(N-1)})`.

use serde::{Deserialize, Serialize};

use crate::cheb::{cheb_multi_partial, MultiIndex};
use crate::circuit::{probabilities, simulate, CircuitSpec, Statevector};
use crate::error::{Error, Result};
use crate::observable::{build_observable, expectation};

/// Hard cap on the register size; beyond this the dense simulation and
/// observable tables stop being desk-scale.
pub const MAX_QUBITS: u32 = 20;

/// Per-variable qubit budget of one encoded function.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableAllocation {
    per_var: Vec<u32>,
}

impl VariableAllocation {
    pub fn new(per_var: Vec<u32>) -> Result<Self> {
        if per_var.is_empty() {
            return Err(Error::contract("allocation needs at least one variable"));
        }
        if per_var.iter().any(|&l| l == 0) {
            return Err(Error::contract("every variable needs at least one qubit"));
        }
        let total = 1 + per_var.iter().sum::<u32>();
        if total > MAX_QUBITS {
            return Err(Error::contract(format!(
                "register of {total} qubits exceeds the cap of {MAX_QUBITS}"
            )));
        }
        Ok(VariableAllocation { per_var })
    }

    /// Split `coeff_qubits` order-encoding qubits across `n_vars` variables,
    /// giving the extra qubits to earlier-declared variables.
    pub fn split(coeff_qubits: u32, n_vars: usize) -> Result<Self> {
        if n_vars == 0 {
            return Err(Error::contract("allocation needs at least one variable"));
        }
        if (coeff_qubits as usize) < n_vars {
            return Err(Error::contract(format!(
                "{coeff_qubits} qubits cannot cover {n_vars} variables"
            )));
        }
        let base = coeff_qubits / n_vars as u32;
        let extra = coeff_qubits as usize % n_vars;
        let per_var = (0..n_vars)
            .map(|j| base + u32::from(j < extra))
            .collect();
        VariableAllocation::new(per_var)
    }

    pub fn per_var_qubits(&self) -> &[u32] {
        &self.per_var
    }

    pub fn n_vars(&self) -> usize {
        self.per_var.len()
    }

    /// Total register size including the sign qubit.
    pub fn n_qubits(&self) -> u32 {
        1 + self.per_var.iter().sum::<u32>()
    }

    /// Number of signed coefficients, `2^(N-1)`.
    pub fn coefficient_count(&self) -> usize {
        1usize << (self.n_qubits() - 1)
    }
}

/// Split a basis index into its sign bit and per-variable orders.
pub fn index_split(index: usize, alloc: &VariableAllocation) -> Result<(bool, Vec<u32>)> {
    let n = alloc.n_qubits();
    if index >= (1usize << n) {
        return Err(Error::contract(format!(
            "basis index {index} out of range for {n} qubits"
        )));
    }
    let sign = index & (1usize << (n - 1)) != 0;
    let mut orders = Vec::with_capacity(alloc.n_vars());
    let mut remaining = n - 1;
    for &l in &alloc.per_var {
        remaining -= l;
        let mask = (1usize << l) - 1;
        orders.push(((index >> remaining) & mask) as u32);
    }
    Ok((sign, orders))
}

/// A trial solution: circuit shape, rotation angles and positive scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedFunction {
    pub alloc: VariableAllocation,
    pub circuit: CircuitSpec,
    pub angles: Vec<f64>,
    pub lambda: f64,
}

impl EncodedFunction {
    pub fn new(
        alloc: VariableAllocation,
        circuit: CircuitSpec,
        angles: Vec<f64>,
        lambda: f64,
    ) -> Result<Self> {
        if circuit.n_qubits != alloc.n_qubits() {
            return Err(Error::contract(format!(
                "circuit has {} qubits but the allocation needs {}",
                circuit.n_qubits,
                alloc.n_qubits()
            )));
        }
        if angles.len() != circuit.param_count() {
            return Err(Error::contract(format!(
                "expected {} angles, got {}",
                circuit.param_count(),
                angles.len()
            )));
        }
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::contract(format!("scaling λ must be positive, got {lambda}")));
        }
        Ok(EncodedFunction { alloc, circuit, angles, lambda })
    }

    pub fn state(&self) -> Result<Statevector> {
        simulate(&self.circuit, &self.angles)
    }
}

/// Signed coefficients `c_i = λ·(p_i - p_{i+2^(N-1)})`.
pub fn decode_coefficients(probs: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !probs.len().is_power_of_two() || probs.len() < 2 {
        return Err(Error::contract(format!(
            "probability vector length must be a power of two ≥ 2, got {}",
            probs.len()
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "probabilities sum to {total}, expected 1 ± 1e-9"
        )));
    }
    let half = probs.len() / 2;
    Ok((0..half).map(|i| lambda * (probs[i] - probs[i + half])).collect())
}

/// Evaluate the encoded function (or one of its derivatives) at a point, as
/// the scaled expectation of the matching diagonal observable.
pub fn evaluate(f: &EncodedFunction, point: &[f64], mi: &MultiIndex) -> Result<f64> {
    let probs = probabilities(&f.state()?);
    evaluate_probs(&f.alloc, f.lambda, &probs, point, mi)
}

/// Same evaluation from an explicit probability vector.
pub fn evaluate_probs(
    alloc: &VariableAllocation,
    lambda: f64,
    probs: &[f64],
    point: &[f64],
    mi: &MultiIndex,
) -> Result<f64> {
    let obs = build_observable(alloc, point, mi)?;
    Ok(lambda * expectation(&obs, probs)?)
}

/// One term of a closed-form spectral expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralTerm {
    pub orders: Vec<u32>,
    pub coefficient: f64,
}

/// A truncated Chebyshev expansion in closed form.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpectralExpansion {
    pub terms: Vec<SpectralTerm>,
}

impl SpectralExpansion {
    pub fn eval(&self, point: &[f64], mi: &MultiIndex) -> Result<f64> {
        let mut acc = 0.0;
        for term in &self.terms {
            acc += term.coefficient * cheb_multi_partial(&term.orders, mi, point)?;
        }
        Ok(acc)
    }

    pub fn value(&self, point: &[f64]) -> Result<f64> {
        let vars = self.terms.first().map_or(1, |t| t.orders.len());
        self.eval(point, &MultiIndex::zero(vars))
    }
}

/// Run the circuit once and decode the expansion, dropping negligible terms.
pub fn to_closed_form(f: &EncodedFunction) -> Result<SpectralExpansion> {
    let probs = probabilities(&f.state()?);
    let coeffs = decode_coefficients(&probs, f.lambda)?;
    let mut terms = Vec::new();
    for (i, &c) in coeffs.iter().enumerate() {
        if c.abs() < 1e-14 {
            continue;
        }
        let (_, orders) = index_split(i, &f.alloc)?;
        terms.push(SpectralTerm { orders, coefficient: c });
    }
    Ok(SpectralExpansion { terms })
}
