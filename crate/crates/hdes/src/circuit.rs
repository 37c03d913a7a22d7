//! Hardware-efficient ansatz construction and exact statevector simulation.
//!
//! Each of the `d` layers applies one parametrized Ry rotation per qubit
//! followed by a braided CNOT entangler on linear connectivity: first the
//! pairs (0,1), (2,3), ..., then (1,2), (3,4), .... Ry/CNOT circuits acting
//! on |0...0⟩ keep every amplitude real, so the statevector stores plain
//! `f64` values. Qubit 0 is the most significant bit of a basis index.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// Shape of a hardware-efficient ansatz: `n_qubits · depth` rotation angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CircuitSpec {
    pub n_qubits: u32,
    pub depth: u32,
}

impl CircuitSpec {
    pub fn param_count(&self) -> usize {
        self.n_qubits as usize * self.depth as usize
    }

    /// CNOT (control, target) pairs of one entangling layer, braided order.
    pub fn cnot_pairs(&self) -> Vec<(u32, u32)> {
        let n = self.n_qubits;
        let mut pairs = Vec::new();
        let mut c = 0;
        while c + 1 < n {
            pairs.push((c, c + 1));
            c += 2;
        }
        let mut c = 1;
        while c + 1 < n {
            pairs.push((c, c + 1));
            c += 2;
        }
        pairs
    }
}

/// Build the ansatz description for `n` qubits and `d` layers.
pub fn build_hea(n_qubits: u32, depth: u32) -> Result<CircuitSpec> {
    if n_qubits == 0 || depth == 0 {
        return Err(Error::contract(format!(
            "ansatz needs at least one qubit and one layer, got n={n_qubits}, d={depth}"
        )));
    }
    Ok(CircuitSpec { n_qubits, depth })
}

/// Real-valued state of an `n`-qubit register.
#[derive(Debug, Clone, PartialEq)]
pub struct Statevector {
    amps: Vec<f64>,
}

impl Statevector {
    /// Wrap explicit amplitudes, checking the length and normalization.
    pub fn from_amplitudes(amps: Vec<f64>) -> Result<Self> {
        if !amps.len().is_power_of_two() || amps.is_empty() {
            return Err(Error::contract(format!(
                "amplitude count must be a power of two, got {}",
                amps.len()
            )));
        }
        let norm: f64 = amps.iter().map(|a| a * a).sum();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::contract(format!(
                "statevector norm² = {norm}, expected 1 ± 1e-12"
            )));
        }
        Ok(Statevector { amps })
    }

    pub fn n_qubits(&self) -> u32 {
        self.amps.len().trailing_zeros()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amps
    }
}

/// Run the ansatz on |0...0⟩ and return the final state.
pub fn simulate(spec: &CircuitSpec, angles: &[f64]) -> Result<Statevector> {
    if angles.len() != spec.param_count() {
        return Err(Error::contract(format!(
            "expected {} angles for n={}, d={}, got {}",
            spec.param_count(),
            spec.n_qubits,
            spec.depth,
            angles.len()
        )));
    }
    let n = spec.n_qubits;
    let dim = 1usize << n;
    let mut amps = vec![0.0; dim];
    amps[0] = 1.0;
    let pairs = spec.cnot_pairs();
    for layer in 0..spec.depth {
        let base = (layer * n) as usize;
        for q in 0..n {
            apply_ry(&mut amps, n, q, angles[base + q as usize]);
        }
        for &(c, t) in &pairs {
            apply_cnot(&mut amps, n, c, t);
        }
    }
    Ok(Statevector { amps })
}

/// Ry(θ) = [[cos θ/2, -sin θ/2], [sin θ/2, cos θ/2]] on qubit `q`.
fn apply_ry(amps: &mut [f64], n_qubits: u32, q: u32, theta: f64) {
    let (sin, cos) = (theta / 2.0).sin_cos();
    let mask = 1usize << (n_qubits - 1 - q);
    for i in 0..amps.len() {
        if i & mask == 0 {
            let j = i | mask;
            let (a0, a1) = (amps[i], amps[j]);
            amps[i] = cos * a0 - sin * a1;
            amps[j] = sin * a0 + cos * a1;
        }
    }
}

fn apply_cnot(amps: &mut [f64], n_qubits: u32, control: u32, target: u32) {
    let cmask = 1usize << (n_qubits - 1 - control);
    let tmask = 1usize << (n_qubits - 1 - target);
    for i in 0..amps.len() {
        if i & cmask != 0 && i & tmask == 0 {
            amps.swap(i, i | tmask);
        }
    }
}

/// Measurement probabilities `p_i = a_i²`.
pub fn probabilities(sv: &Statevector) -> Vec<f64> {
    sv.amplitudes().iter().map(|a| a * a).collect()
}

/// Multinomial sample of basis-state counts, deterministic per seed.
pub fn sample_counts(sv: &Statevector, shots: u64, seed: u64) -> Result<BTreeMap<usize, u64>> {
    if shots == 0 {
        return Err(Error::contract(
            "shots must be ≥ 1 (0 selects exact probabilities upstream)".to_string(),
        ));
    }
    let probs = probabilities(sv);
    let mut cumulative = Vec::with_capacity(probs.len());
    let mut acc = 0.0;
    for p in &probs {
        acc += p;
        cumulative.push(acc);
    }
    let total = acc;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut counts = BTreeMap::new();
    for _ in 0..shots {
        let u: f64 = rng.random::<f64>() * total;
        let idx = cumulative.partition_point(|&c| c <= u).min(probs.len() - 1);
        *counts.entry(idx).or_insert(0) += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    #[test]
    fn hea_shape_matches_stated_examples() {
        let spec = build_hea(5, 2).unwrap();
        assert_eq!(spec.param_count(), 10);
        assert_eq!(spec.cnot_pairs(), vec![(0, 1), (2, 3), (1, 2), (3, 4)]);

        let spec = build_hea(1, 3).unwrap();
        assert_eq!(spec.param_count(), 3);
        assert!(spec.cnot_pairs().is_empty());

        let spec = build_hea(2, 1).unwrap();
        assert_eq!(spec.param_count(), 2);
        assert_eq!(spec.cnot_pairs(), vec![(0, 1)]);

        assert!(build_hea(0, 1).is_err());
        assert!(build_hea(3, 0).is_err());
    }

    #[test]
    fn simulate_matches_stated_examples() {
        let spec = build_hea(2, 1).unwrap();
        let sv = simulate(&spec, &[0.0, 0.0]).unwrap();
        assert_eq!(sv.amplitudes()[0], 1.0);

        let spec = build_hea(1, 1).unwrap();
        let sv = simulate(&spec, &[PI]).unwrap();
        assert_abs_diff_eq!(sv.amplitudes()[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sv.amplitudes()[1], 1.0, epsilon = 1e-15);

        // Ry(π) flips qubit 0, then CNOT(0→1) flips qubit 1: |11⟩.
        let spec = build_hea(2, 1).unwrap();
        let sv = simulate(&spec, &[PI, 0.0]).unwrap();
        assert_abs_diff_eq!(sv.amplitudes()[3], 1.0, epsilon = 1e-15);

        assert!(simulate(&spec, &[0.0]).is_err());
    }

    #[test]
    fn simulate_preserves_normalization() {
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..500 {
            let n = rng.random_range(1..=6u32);
            let d = rng.random_range(1..=6u32);
            let spec = build_hea(n, d).unwrap();
            let angles: Vec<f64> = (0..spec.param_count())
                .map(|_| rng.random_range(0.0..2.0 * PI))
                .collect();
            let sv = simulate(&spec, &angles).unwrap();
            let norm: f64 = sv.amplitudes().iter().map(|a| a * a).sum();
            assert!((norm - 1.0).abs() <= 1e-12, "n={n} d={d}: norm² {norm}");
        }
    }

    #[test]
    fn all_zero_angles_leave_the_ground_state() {
        for n in 1..=5u32 {
            for d in 1..=4u32 {
                let spec = build_hea(n, d).unwrap();
                let sv = simulate(&spec, &vec![0.0; spec.param_count()]).unwrap();
                assert_eq!(sv.amplitudes()[0], 1.0);
                assert!(sv.amplitudes()[1..].iter().all(|&a| a == 0.0));
            }
        }
    }

    #[test]
    fn probabilities_match_stated_examples() {
        let sv = Statevector::from_amplitudes(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(probabilities(&sv), vec![1.0, 0.0, 0.0, 0.0]);

        let sv = Statevector::from_amplitudes(vec![
            0.0,
            (2.0f64 / 5.0).sqrt(),
            (3.0f64 / 5.0).sqrt(),
            0.0,
        ])
        .unwrap();
        let p = probabilities(&sv);
        assert_abs_diff_eq!(p[1], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(p[2], 0.6, epsilon = 1e-15);

        let sv = Statevector::from_amplitudes(vec![0.5; 4]).unwrap();
        assert_eq!(probabilities(&sv), vec![0.25; 4]);
    }

    #[test]
    fn from_amplitudes_enforces_normalization() {
        assert!(Statevector::from_amplitudes(vec![1.0, 1.0]).is_err());
        assert!(Statevector::from_amplitudes(vec![1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_concentrates() {
        let sv = Statevector::from_amplitudes(vec![1.0, 0.0]).unwrap();
        let counts = sample_counts(&sv, 100, 3).unwrap();
        assert_eq!(counts.get(&0), Some(&100));
        assert!(sample_counts(&sv, 0, 3).is_err());

        let sv =
            Statevector::from_amplitudes(vec![0.4f64.sqrt(), 0.6f64.sqrt()]).unwrap();
        let shots = 1_000_000u64;
        let counts = sample_counts(&sv, shots, 17).unwrap();
        let again = sample_counts(&sv, shots, 17).unwrap();
        assert_eq!(counts, again);
        assert_eq!(counts.values().sum::<u64>(), shots);
        for (idx, p) in [(0usize, 0.4), (1usize, 0.6)] {
            let freq = *counts.get(&idx).unwrap() as f64 / shots as f64;
            let sigma = (p * (1.0 - p) / shots as f64).sqrt();
            assert!(
                (freq - p).abs() <= 3.0 * sigma,
                "index {idx}: freq {freq} vs p {p}"
            );
        }
    }
}
