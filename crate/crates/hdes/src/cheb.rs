//! Chebyshev polynomials of the first kind and their exact derivatives.
//!
//! `Cheb(k, x)` is defined piecewise so it stays real for any real `x`:
//! `cos(k·arccos x)` on `[-1, 1]`, `cosh(k·arcosh x)` for `x ≥ 1` and
//! `(-1)^k·cosh(k·arcosh(-x))` for `x ≤ -1`. Derivatives of any order are
//! computed from a closed-form re-expansion in the Chebyshev basis, never by
//! numerical differentiation. Multivariate polynomials are products of
//! independent univariate factors, one per coordinate.

use crate::error::{Error, Result};

/// Highest polynomial order for which derivative coefficients are computed
/// with exact integer arithmetic. Larger orders are rejected.
pub const MAX_DERIVATIVE_ORDER: u32 = 64;

/// A single term of a spectral expansion: polynomial order `k` under a
/// `q`-fold derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChebTerm {
    pub order: u32,
    pub derivative: u32,
}

/// Per-variable derivative counts of a mixed partial derivative.
///
/// The entry `g_l` is the number of times variable `l` is differentiated;
/// the all-zero index denotes the plain function value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(counts: Vec<u32>) -> Self {
        MultiIndex(counts)
    }

    /// The all-zero index over `vars` variables (the function value itself).
    pub fn zero(vars: usize) -> Self {
        MultiIndex(vec![0; vars])
    }

    /// A `q`-fold derivative in a single variable.
    pub fn univariate(vars: usize, var: usize, q: u32) -> Self {
        let mut counts = vec![0; vars];
        counts[var] = q;
        MultiIndex(counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total derivative order `g = Σ g_l`.
    pub fn total_order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// Number of distinct differentiated variables `h`.
    pub fn distinct_vars(&self) -> usize {
        self.0.iter().filter(|&&g| g > 0).count()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&g| g == 0)
    }

    /// Key form used in JSON maps: counts joined by commas, e.g. `"1,0"`.
    pub fn key(&self) -> String {
        self.0
            .iter()
            .map(|g| g.to_string())
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl std::fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({})", self.key())
    }
}

/// Affine map from an arbitrary interval onto `[-1, 1]`.
///
/// Problems are evaluated at raw coordinates by default; this map is provided
/// for callers who want to rescale a domain first. `derivative_scale(q)` is
/// the chain-rule factor for a `q`-fold derivative through the map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub lo: f64,
    pub hi: f64,
}

impl AffineMap {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::contract(format!(
                "affine map needs finite lo < hi, got [{lo}, {hi}]"
            )));
        }
        Ok(AffineMap { lo, hi })
    }

    pub fn map(&self, x: f64) -> f64 {
        2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0
    }

    pub fn derivative_scale(&self, q: u32) -> f64 {
        (2.0 / (self.hi - self.lo)).powi(q as i32)
    }
}

/// Evaluate `Cheb(k, x)` for any real `x`.
pub fn cheb_eval(k: u32, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("Cheb({k}, {x}): x must be finite")));
    }
    let kf = f64::from(k);
    let value = if x.abs() <= 1.0 {
        (kf * x.acos()).cos()
    } else if x >= 1.0 {
        (kf * x.acosh()).cosh()
    } else {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sign * (kf * (-x).acosh()).cosh()
    };
    Ok(value)
}

/// Exact `q`-th derivative of `Cheb(k, ·)` at `x`.
///
/// Uses the re-expansion of the derivative in the Chebyshev basis itself,
/// with the constant term halved. Returns 0 when `q > k` and the plain value
/// when `q = 0`.
pub fn cheb_derivative_eval(k: u32, q: u32, x: f64) -> Result<f64> {
    if q == 0 {
        return cheb_eval(k, x);
    }
    if q > k {
        if !x.is_finite() {
            return Err(Error::domain(format!(
                "Cheb({k}, {x}): x must be finite"
            )));
        }
        return Ok(0.0);
    }
    if k > MAX_DERIVATIVE_ORDER {
        return Err(Error::contract(format!(
            "derivative expansion is exact only up to order {MAX_DERIVATIVE_ORDER}, got {k}"
        )));
    }
    let mut acc = 0.0;
    // k' runs over the surviving orders, stepping by 2 to match parity.
    let mut kp = (k - q) % 2;
    while kp <= k - q {
        let coeff = expansion_coefficient(k, q, kp)?;
        let halved = if kp == 0 { coeff / 2.0 } else { coeff };
        acc += halved * cheb_eval(kp, x)?;
        kp += 2;
    }
    Ok(2f64.powi(q as i32) * f64::from(k) * acc)
}

/// Integer coefficient `binom((k+q-kp)/2 - 1, (k-q-kp)/2) · ((k+q+kp)/2 - 1)! / ((k-q+kp)/2)!`
/// of the derivative expansion, computed exactly.
fn expansion_coefficient(k: u32, q: u32, kp: u32) -> Result<f64> {
    let a = u128::from((k + q - kp) / 2 - 1);
    let b = u128::from((k - q - kp) / 2);
    let u = u128::from((k + q + kp) / 2 - 1);
    let v = u128::from((k - q + kp) / 2);
    let binom = checked_binomial(a, b)?;
    let ratio = checked_falling_product(v + 1, u)?;
    binom
        .checked_mul(ratio)
        .map(|c| c as f64)
        .ok_or_else(|| overflow(k, q))
}

fn checked_binomial(n: u128, r: u128) -> Result<u128> {
    if r > n {
        return Ok(0);
    }
    let r = r.min(n - r);
    let mut acc: u128 = 1;
    for t in 1..=r {
        acc = acc
            .checked_mul(n - r + t)
            .ok_or_else(|| overflow(n as u32, r as u32))?;
        acc /= t; // exact: product of t consecutive integers is divisible by t!
    }
    Ok(acc)
}

/// Product of the integers in `lo..=hi` (1 when the range is empty).
fn checked_falling_product(lo: u128, hi: u128) -> Result<u128> {
    let mut acc: u128 = 1;
    let mut t = lo;
    while t <= hi {
        acc = acc
            .checked_mul(t)
            .ok_or_else(|| overflow(hi as u32, lo as u32))?;
        t += 1;
    }
    Ok(acc)
}

fn overflow(k: u32, q: u32) -> Error {
    Error::contract(format!(
        "derivative coefficient for order {k}, derivative {q} overflows exact integer arithmetic"
    ))
}

/// Product of univariate polynomials, one per coordinate.
pub fn cheb_multi_eval(orders: &[u32], point: &[f64]) -> Result<f64> {
    if orders.len() != point.len() {
        return Err(Error::contract(format!(
            "orders/point length mismatch: {} vs {}",
            orders.len(),
            point.len()
        )));
    }
    let mut acc = 1.0;
    for (&k, &x) in orders.iter().zip(point) {
        acc *= cheb_eval(k, x)?;
    }
    Ok(acc)
}

/// Mixed partial derivative of the multivariate polynomial.
///
/// Computed as the explicit product of differentiated and plain univariate
/// factors, which stays finite at Chebyshev roots where the alternative
/// divide-out-the-factor form breaks down.
pub fn cheb_multi_partial(orders: &[u32], mi: &MultiIndex, point: &[f64]) -> Result<f64> {
    if orders.len() != point.len() || orders.len() != mi.len() {
        return Err(Error::contract(format!(
            "orders/derivative/point length mismatch: {} vs {} vs {}",
            orders.len(),
            mi.len(),
            point.len()
        )));
    }
    let mut acc = 1.0;
    for ((&k, &g), &x) in orders.iter().zip(mi.counts()).zip(point) {
        acc *= cheb_derivative_eval(k, g, x)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Independent oracle: the three-term recurrence T_{k+1} = 2xT_k - T_{k-1}.
    fn recurrence_eval(k: u32, x: f64) -> f64 {
        let (mut prev, mut cur) = (1.0, x);
        match k {
            0 => prev,
            1 => cur,
            _ => {
                for _ in 2..=k {
                    let next = 2.0 * x * cur - prev;
                    prev = cur;
                    cur = next;
                }
                cur
            }
        }
    }

    /// Divide-out form of the mixed partial, valid away from Chebyshev roots.
    fn division_form(orders: &[u32], mi: &MultiIndex, point: &[f64]) -> f64 {
        let full = cheb_multi_eval(orders, point).unwrap();
        let mut acc = 1.0;
        for ((&k, &g), &x) in orders.iter().zip(mi.counts()).zip(point) {
            if g > 0 {
                let factor = cheb_eval(k, x).unwrap();
                assert!(
                    factor.abs() >= 1e-12,
                    "division form guarded against vanishing factors"
                );
                acc *= cheb_derivative_eval(k, g, x).unwrap() / factor;
            }
        }
        acc * full
    }

    #[test]
    fn eval_matches_stated_values() {
        assert_eq!(cheb_eval(0, 0.5).unwrap(), 1.0);
        assert_eq!(cheb_eval(1, -0.3).unwrap(), -0.3);
        // Frozen from the recurrence oracle: T3(2) = 26, T2(-1.5) = 3.5.
        assert_abs_diff_eq!(cheb_eval(3, 2.0).unwrap(), 26.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cheb_eval(2, -1.5).unwrap(), 3.5, epsilon = 1e-12);
        assert_abs_diff_eq!(recurrence_eval(3, 2.0), 26.0, epsilon = 1e-12);
        assert_abs_diff_eq!(recurrence_eval(2, -1.5), 3.5, epsilon = 1e-12);
    }

    #[test]
    fn eval_rejects_non_finite() {
        assert!(cheb_eval(2, f64::NAN).is_err());
        assert!(cheb_eval(2, f64::INFINITY).is_err());
        assert!(cheb_derivative_eval(2, 1, f64::NAN).is_err());
        assert!(cheb_derivative_eval(2, 5, f64::NAN).is_err());
    }

    #[test]
    fn eval_agrees_with_recurrence_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        for k in 0..=8 {
            for _ in 0..200 {
                let x: f64 = rng.random_range(-1.0..=1.0);
                assert_abs_diff_eq!(
                    cheb_eval(k, x).unwrap(),
                    recurrence_eval(k, x),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn branches_are_continuous_at_unit_points() {
        for k in 0..=8 {
            let inner = cheb_eval(k, 1.0 - 1e-9).unwrap();
            let outer = cheb_eval(k, 1.0 + 1e-9).unwrap();
            assert!((inner - outer).abs() <= 1e-6, "k={k}: {inner} vs {outer}");
            let inner = cheb_eval(k, -1.0 + 1e-9).unwrap();
            let outer = cheb_eval(k, -1.0 - 1e-9).unwrap();
            assert!((inner - outer).abs() <= 1e-6, "k={k}: {inner} vs {outer}");
        }
    }

    #[test]
    fn derivative_matches_stated_values() {
        assert_eq!(cheb_derivative_eval(1, 1, 0.7).unwrap(), 1.0);
        assert_eq!(cheb_derivative_eval(2, 3, 0.2).unwrap(), 0.0);
        // T3'(x) = 12x^2 - 3 vanishes at 0.5.
        assert_abs_diff_eq!(cheb_derivative_eval(3, 1, 0.5).unwrap(), 0.0, epsilon = 1e-12);
        assert_eq!(cheb_derivative_eval(4, 0, 0.3).unwrap(), cheb_eval(4, 0.3).unwrap());
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(11);
        let h = 1e-5;
        for k in 0..=8u32 {
            for q in 1..=2u32 {
                for _ in 0..50 {
                    let x: f64 = rng.random_range(-0.9..=0.9);
                    let exact = cheb_derivative_eval(k, q, x).unwrap();
                    let fd = if q == 1 {
                        (cheb_eval(k, x + h).unwrap() - cheb_eval(k, x - h).unwrap()) / (2.0 * h)
                    } else {
                        (cheb_derivative_eval(k, 1, x + h).unwrap()
                            - cheb_derivative_eval(k, 1, x - h).unwrap())
                            / (2.0 * h)
                    };
                    let scale = exact.abs().max(1.0);
                    assert!(
                        (exact - fd).abs() <= 1e-6 * scale,
                        "k={k} q={q} x={x}: exact {exact} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn derivative_rejects_orders_beyond_exact_range() {
        assert!(cheb_derivative_eval(65, 1, 0.5).is_err());
        // Order 64 itself is still in range.
        assert!(cheb_derivative_eval(64, 1, 0.5).is_ok());
    }

    #[test]
    fn multi_eval_matches_stated_values() {
        for &y in &[-0.8, 0.1, 0.9] {
            let expected = 2.0 * 0.6 * 0.6 - 1.0;
            assert_abs_diff_eq!(
                cheb_multi_eval(&[2, 0], &[0.6, y]).unwrap(),
                expected,
                epsilon = 1e-12
            );
        }
        assert_eq!(cheb_multi_eval(&[0, 0, 0], &[0.3, -0.4, 0.9]).unwrap(), 1.0);
        assert_abs_diff_eq!(cheb_multi_eval(&[5, 3], &[1.0, 1.0]).unwrap(), 1.0, epsilon = 1e-12);
        assert!(cheb_multi_eval(&[1, 2], &[0.5]).is_err());
    }

    #[test]
    fn multi_partial_matches_stated_values() {
        for &y in &[-0.7, 0.0, 0.5] {
            let mi = MultiIndex::new(vec![1, 0]);
            assert_abs_diff_eq!(
                cheb_multi_partial(&[2, 0], &mi, &[0.5, y]).unwrap(),
                2.0,
                epsilon = 1e-12
            );
        }
        let mi = MultiIndex::new(vec![1, 1]);
        assert_abs_diff_eq!(
            cheb_multi_partial(&[1, 1], &mi, &[0.3, -0.8]).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let mi = MultiIndex::new(vec![1, 0]);
        assert_eq!(cheb_multi_partial(&[0, 3], &mi, &[0.2, 0.4]).unwrap(), 0.0);
    }

    #[test]
    fn product_form_agrees_with_division_form() {
        let mut rng = StdRng::seed_from_u64(23);
        let mut checked = 0;
        while checked < 200 {
            let v = rng.random_range(1..=3usize);
            let orders: Vec<u32> = (0..v).map(|_| rng.random_range(0..=6)).collect();
            let counts: Vec<u32> = (0..v).map(|_| rng.random_range(0..=2)).collect();
            let point: Vec<f64> = (0..v).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let clear = orders
                .iter()
                .zip(&point)
                .all(|(&k, &x)| cheb_eval(k, x).unwrap().abs() > 1e-6);
            if !clear {
                continue;
            }
            let mi = MultiIndex::new(counts);
            let product = cheb_multi_partial(&orders, &mi, &point).unwrap();
            let division = division_form(&orders, &mi, &point);
            assert!(
                (product - division).abs() <= 1e-10 * division.abs().max(1.0),
                "orders {orders:?} mi {mi} point {point:?}: {product} vs {division}"
            );
            checked += 1;
        }
    }

    #[test]
    fn multi_index_accounting() {
        let mi = MultiIndex::new(vec![2, 0, 1]);
        assert_eq!(mi.total_order(), 3);
        assert_eq!(mi.distinct_vars(), 2);
        assert!(mi.distinct_vars() as u32 <= mi.total_order());
        assert_eq!(mi.key(), "2,0,1");
        assert!(MultiIndex::zero(3).is_zero());
    }

    #[test]
    fn affine_map_rescales_and_chains() {
        let map = AffineMap::new(0.0, 0.95).unwrap();
        assert_abs_diff_eq!(map.map(0.0), -1.0);
        assert_abs_diff_eq!(map.map(0.95), 1.0);
        assert_abs_diff_eq!(map.map(0.475), 0.0);
        assert_abs_diff_eq!(map.derivative_scale(2), (2.0 / 0.95) * (2.0 / 0.95));
        assert!(AffineMap::new(1.0, 1.0).is_err());
    }
}
