//! Diagonal observables whose expectation values evaluate encoded functions
//! and their derivatives.
//!
//! For a register with sign qubit in front, the observable at point `X` for
//! derivative multi-index `g` has entries `∂^g Cheb(orders(i), X)` on the
//! first half of the diagonal and their negations on the second half. Every
//! such observable decomposes into commuting I/Z Pauli strings, so in shot
//! mode a single set of computational-basis counts serves all observables.

use std::collections::BTreeMap;

use crate::cheb::{cheb_derivative_eval, MultiIndex};
use crate::encoding::VariableAllocation;
use crate::error::{Error, Result};
use crate::loss::generate_samples;
use crate::problem::Domain;

/// Dense diagonal of a `2^N × 2^N` observable, with the sample point and
/// derivative it was built for (when it came from [`build_observable`]).
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalObservable {
    diag: Vec<f64>,
    pub point: Option<Vec<f64>>,
    pub derivative: Option<MultiIndex>,
}

impl DiagonalObservable {
    pub fn from_diag(diag: Vec<f64>) -> Result<Self> {
        if !diag.len().is_power_of_two() || diag.is_empty() {
            return Err(Error::contract(format!(
                "diagonal length must be a power of two, got {}",
                diag.len()
            )));
        }
        Ok(DiagonalObservable { diag, point: None, derivative: None })
    }

    /// The identity observable (used to absorb constant equation terms).
    pub fn identity(n_qubits: u32) -> Self {
        DiagonalObservable {
            diag: vec![1.0; 1usize << n_qubits],
            point: None,
            derivative: None,
        }
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn n_qubits(&self) -> u32 {
        self.diag.len().trailing_zeros()
    }

    /// Whether the second half of the diagonal is the exact negation of the
    /// first half, as every observable built for a sign-qubit register is.
    pub fn is_sign_antisymmetric(&self) -> bool {
        let half = self.diag.len() / 2;
        (0..half).all(|i| self.diag[i + half] == -self.diag[i])
    }
}

/// Build the diagonal observable for sample point `point` and derivative
/// multi-index `mi` under the given variable allocation.
pub fn build_observable(
    alloc: &VariableAllocation,
    point: &[f64],
    mi: &MultiIndex,
) -> Result<DiagonalObservable> {
    if point.len() != alloc.n_vars() || mi.len() != alloc.n_vars() {
        return Err(Error::contract(format!(
            "allocation covers {} variables, got point of {} and derivative of {}",
            alloc.n_vars(),
            point.len(),
            mi.len()
        )));
    }
    let cache = UnivariateCache::build(alloc, point, std::slice::from_ref(mi))?;
    let diag = cache.diagonal(alloc, mi);
    Ok(DiagonalObservable {
        diag,
        point: Some(point.to_vec()),
        derivative: Some(mi.clone()),
    })
}

/// Univariate Chebyshev evaluations shared across observables at one point:
/// `values[var][derivative] = [Cheb^(q)(k, x_var) for k in 0..2^l_var]`.
struct UnivariateCache {
    values: Vec<BTreeMap<u32, Vec<f64>>>,
}

impl UnivariateCache {
    fn build(
        alloc: &VariableAllocation,
        point: &[f64],
        orders: &[MultiIndex],
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(alloc.n_vars());
        for (var, &l) in alloc.per_var_qubits().iter().enumerate() {
            let mut per_derivative = BTreeMap::new();
            let mut wanted: Vec<u32> = orders.iter().map(|mi| mi.counts()[var]).collect();
            wanted.push(0);
            wanted.sort_unstable();
            wanted.dedup();
            for q in wanted {
                let row = (0..1u32 << l)
                    .map(|k| cheb_derivative_eval(k, q, point[var]))
                    .collect::<Result<Vec<f64>>>()?;
                per_derivative.insert(q, row);
            }
            values.push(per_derivative);
        }
        Ok(UnivariateCache { values })
    }

    fn diagonal(&self, alloc: &VariableAllocation, mi: &MultiIndex) -> Vec<f64> {
        let half = alloc.coefficient_count();
        let mut diag = vec![0.0; 2 * half];
        for i in 0..half {
            let mut product = 1.0;
            let mut remaining = alloc.n_qubits() - 1;
            for (var, &l) in alloc.per_var_qubits().iter().enumerate() {
                remaining -= l;
                let order = (i >> remaining) & ((1usize << l) - 1);
                product *= self.values[var][&mi.counts()[var]][order];
            }
            diag[i] = product;
            diag[i + half] = -product;
        }
        diag
    }
}

/// Expectation value `Σ_i diag[i]·p[i]` of a diagonal observable.
pub fn expectation(obs: &DiagonalObservable, probs: &[f64]) -> Result<f64> {
    if probs.len() != obs.diag.len() {
        return Err(Error::contract(format!(
            "probability vector of {} entries does not match diagonal of {}",
            probs.len(),
            obs.diag.len()
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!(
            "probabilities sum to {total}, expected 1 ± 1e-9"
        )));
    }
    Ok(obs.diag.iter().zip(probs).map(|(d, p)| d * p).sum())
}

/// Expectation value estimated from computational-basis counts. All diagonal
/// observables can be evaluated from the same counts since their Pauli
/// strings commute.
pub fn expectation_from_counts(
    obs: &DiagonalObservable,
    counts: &BTreeMap<usize, u64>,
    shots: u64,
) -> Result<f64> {
    if counts.is_empty() {
        return Err(Error::contract("empty counts"));
    }
    let observed: u64 = counts.values().sum();
    if observed != shots || shots == 0 {
        return Err(Error::contract(format!(
            "counts sum to {observed} but {shots} shots were declared"
        )));
    }
    let mut acc = 0.0;
    for (&idx, &c) in counts {
        let d = obs.diag.get(idx).ok_or_else(|| {
            Error::contract(format!("count index {idx} out of range for the diagonal"))
        })?;
        acc += d * c as f64 / shots as f64;
    }
    Ok(acc)
}

/// A tensor product of I and Z factors with a real coefficient. The mask is
/// aligned with basis-index bits, so qubit `q` of an `N`-qubit register
/// carries a Z exactly when bit `N-1-q` of the mask is set.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliZString {
    pub mask: usize,
    pub n_qubits: u32,
    pub coefficient: f64,
}

impl PauliZString {
    /// Eigenvalue (±1) of the string on basis state `index`.
    pub fn eigenvalue(&self, index: usize) -> f64 {
        if (index & self.mask).count_ones() % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn has_z_on(&self, qubit: u32) -> bool {
        self.mask & (1usize << (self.n_qubits - 1 - qubit)) != 0
    }

    pub fn label(&self) -> String {
        (0..self.n_qubits)
            .map(|q| if self.has_z_on(q) { 'Z' } else { 'I' })
            .collect()
    }

    pub fn expectation(&self, probs: &[f64]) -> f64 {
        probs
            .iter()
            .enumerate()
            .map(|(i, p)| self.eigenvalue(i) * p)
            .sum()
    }
}

/// Decompose a diagonal observable into I/Z Pauli strings via the identity
/// `|i⟩⟨i| = ⊗_k (I + (-1)^{bit k} Z)/2`, dropping exactly-zero terms.
pub fn pauli_decompose(obs: &DiagonalObservable) -> Vec<PauliZString> {
    let n = obs.n_qubits();
    let mut spectrum = obs.diag.clone();
    walsh_hadamard(&mut spectrum);
    let scale = 1.0 / obs.diag.len() as f64;
    spectrum
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 0.0)
        .map(|(mask, &c)| PauliZString { mask, n_qubits: n, coefficient: c * scale })
        .collect()
}

/// In-place Walsh-Hadamard transform; entry `m` becomes
/// `Σ_i v[i]·(-1)^{popcount(m & i)}`.
fn walsh_hadamard(v: &mut [f64]) {
    let mut h = 1;
    while h < v.len() {
        let mut i = 0;
        while i < v.len() {
            for j in i..i + h {
                let (a, b) = (v[j], v[j + h]);
                v[j] = a + b;
                v[j + h] = a - b;
            }
            i += 2 * h;
        }
        h *= 2;
    }
}

/// Entrywise linear combination of observables.
pub fn combine_linear(terms: &[(f64, &DiagonalObservable)]) -> Result<DiagonalObservable> {
    let first = terms
        .first()
        .ok_or_else(|| Error::contract("cannot combine an empty term list"))?;
    let len = first.1.diag.len();
    let mut diag = vec![0.0; len];
    for (coeff, obs) in terms {
        if obs.diag.len() != len {
            return Err(Error::contract(format!(
                "cannot combine diagonals of lengths {len} and {}",
                obs.diag.len()
            )));
        }
        for (d, o) in diag.iter_mut().zip(&obs.diag) {
            *d += coeff * o;
        }
    }
    Ok(DiagonalObservable { diag, point: None, derivative: None })
}

/// Precomputed observables for every derivative order and sample point.
pub struct ObservableTable {
    pub samples: Vec<Vec<f64>>,
    pub orders: Vec<MultiIndex>,
    /// Indexed `[order][sample]`.
    pub entries: Vec<Vec<DiagonalObservable>>,
}

impl ObservableTable {
    pub fn get(&self, order_idx: usize, sample_idx: usize) -> &DiagonalObservable {
        &self.entries[order_idx][sample_idx]
    }

    pub fn order_index(&self, mi: &MultiIndex) -> Option<usize> {
        self.orders.iter().position(|o| o == mi)
    }

    pub fn len(&self) -> usize {
        self.orders.len() * self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Generate the sample set and one observable per (derivative order, sample
/// point), sharing univariate Chebyshev evaluations across orders.
pub fn generate_observables(
    orders: &[MultiIndex],
    domains: &[Domain],
    alloc: &VariableAllocation,
    n_samples: usize,
) -> Result<ObservableTable> {
    let samples = generate_samples(n_samples, domains)?;
    let table = observables_at_points(orders, &samples, alloc)?;
    Ok(table)
}

/// Build the observable table for an explicit point list.
pub fn observables_at_points(
    orders: &[MultiIndex],
    points: &[Vec<f64>],
    alloc: &VariableAllocation,
) -> Result<ObservableTable> {
    if orders.is_empty() {
        return Err(Error::contract("no derivative orders to build observables for"));
    }
    let mut entries: Vec<Vec<DiagonalObservable>> = vec![Vec::new(); orders.len()];
    for point in points {
        let cache = UnivariateCache::build(alloc, point, orders)?;
        for (oi, mi) in orders.iter().enumerate() {
            entries[oi].push(DiagonalObservable {
                diag: cache.diagonal(alloc, mi),
                point: Some(point.clone()),
                derivative: Some(mi.clone()),
            });
        }
    }
    Ok(ObservableTable {
        samples: points.to_vec(),
        orders: orders.to_vec(),
        entries,
    })
}
