//! The hybrid solve loop: observables are generated once, then BFGS drives
//! the circuit parameters and scalings against the collocation loss, and
//! the optimized probabilities are decoded back into spectral expansions.

pub mod bfgs;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuit::build_hea;
use crate::encoding::{decode_coefficients, index_split, SpectralExpansion, SpectralTerm, VariableAllocation};
use crate::error::{Error, Result};
use crate::loss::{
    generate_samples, all_domains, BoundaryStrategy, FunctionParams, FunctionSetup, LossConfig,
    LossContext, ShiftFunction, DEFAULT_ETA,
};
use crate::problem::DESystem;

pub use bfgs::{bfgs_minimize, BfgsOptions, MinimizeResult, Objective, Termination};

/// A per-function positive integer setting with a global default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerFunction {
    pub default: u32,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, u32>,
}

impl PerFunction {
    pub fn uniform(value: u32) -> Self {
        PerFunction { default: value, overrides: BTreeMap::new() }
    }

    pub fn for_function(&self, name: &str) -> u32 {
        self.overrides.get(name).copied().unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Total register size per function, sign qubit included.
    pub qubits: PerFunction,
    pub depth: PerFunction,
    pub n_samples: usize,
    pub max_iterations: usize,
    /// Target loss; optimization stops early once reached.
    pub epsilon: f64,
    pub eta: f64,
    pub strategy: BoundaryStrategy,
    pub seed: u64,
    /// 0 runs on exact probabilities; otherwise each evaluation draws this
    /// many measurement shots.
    pub shots: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            qubits: PerFunction::uniform(4),
            depth: PerFunction::uniform(3),
            n_samples: 20,
            max_iterations: 500,
            epsilon: 1e-6,
            eta: DEFAULT_ETA,
            strategy: BoundaryStrategy::Penalty,
            seed: 0,
            shots: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::contract("max_iterations must be ≥ 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::contract(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.n_samples == 0 {
            return Err(Error::contract("sample count must be ≥ 1"));
        }
        Ok(())
    }

    /// Allocation and circuit per declared function.
    pub fn build_setups(&self, system: &DESystem) -> Result<Vec<FunctionSetup>> {
        system
            .functions
            .iter()
            .map(|decl| {
                let total = self.qubits.for_function(&decl.name);
                if total < 2 {
                    return Err(Error::contract(format!(
                        "`{}` needs at least 2 qubits (sign + order), got {total}",
                        decl.name
                    )));
                }
                let alloc = VariableAllocation::split(total - 1, decl.vars.len())?;
                let circuit = build_hea(total, self.depth.for_function(&decl.name))?;
                Ok(FunctionSetup { alloc, circuit })
            })
            .collect()
    }
}

/// Uniform random start: angles in `[0, 2π)` and one scaling pre-parameter
/// `s` in `[0, ln 10]` per function (so `λ = eˢ` starts in `[1, 10]`).
pub fn init_params(setups: &[FunctionSetup], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut params = Vec::new();
    for setup in setups {
        for _ in 0..setup.circuit.param_count() {
            params.push(rng.random_range(0.0..std::f64::consts::TAU));
        }
        params.push(rng.random_range(0.0..10f64.ln()));
    }
    params
}

/// Split the packed parameter vector into per-function angles and scalings.
pub fn unpack_params(setups: &[FunctionSetup], packed: &[f64]) -> Result<Vec<FunctionParams>> {
    let expected: usize = setups.iter().map(|s| s.circuit.param_count() + 1).sum();
    if packed.len() != expected {
        return Err(Error::contract(format!(
            "packed parameter vector has {} entries, expected {expected}",
            packed.len()
        )));
    }
    let mut offset = 0;
    let mut out = Vec::with_capacity(setups.len());
    for setup in setups {
        let n = setup.circuit.param_count();
        let angles = packed[offset..offset + n].to_vec();
        let lambda = packed[offset + n].exp();
        offset += n + 1;
        out.push(FunctionParams { angles, lambda });
    }
    Ok(out)
}

/// One function of a reported solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvedFunction {
    pub name: String,
    /// Per-variable Chebyshev orders, parallel to `coefficients`.
    pub orders: Vec<Vec<u32>>,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub angles: Vec<f64>,
}

impl SolvedFunction {
    pub fn expansion(&self) -> SpectralExpansion {
        SpectralExpansion {
            terms: self
                .orders
                .iter()
                .zip(&self.coefficients)
                .map(|(orders, &coefficient)| SpectralTerm { orders: orders.clone(), coefficient })
                .collect(),
        }
    }
}

/// Variable metadata echoed into results so downstream commands are
/// self-contained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableEcho {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub problem_path: Option<String>,
    pub qubits: PerFunction,
    pub depth: PerFunction,
    pub n_samples: usize,
    pub max_iterations: usize,
    pub epsilon: f64,
    pub eta: f64,
    pub strategy: BoundaryStrategy,
    pub seed: u64,
    pub shots: u64,
    pub restarts: usize,
    pub variables: Vec<VariableEcho>,
    /// Function name → the variables it depends on.
    pub function_vars: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveResult {
    pub functions: Vec<SolvedFunction>,
    pub final_loss: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub loss_trace: Vec<f64>,
    pub seed: u64,
    pub config_echo: ConfigEcho,
}

impl SolveResult {
    pub fn function(&self, name: &str) -> Option<&SolvedFunction> {
        self.functions.iter().find(|f| f.name == name)
    }
}

fn config_echo(system: &DESystem, config: &SolverConfig, problem_path: Option<&str>, restarts: usize) -> ConfigEcho {
    ConfigEcho {
        problem_path: problem_path.map(str::to_string),
        qubits: config.qubits.clone(),
        depth: config.depth.clone(),
        n_samples: config.n_samples,
        max_iterations: config.max_iterations,
        epsilon: config.epsilon,
        eta: config.eta,
        strategy: config.strategy,
        seed: config.seed,
        shots: config.shots,
        restarts,
        variables: system
            .variables
            .iter()
            .map(|v| VariableEcho { name: v.name.clone(), lo: v.domain.lo, hi: v.domain.hi })
            .collect(),
        function_vars: system
            .functions
            .iter()
            .map(|f| {
                (
                    f.name.clone(),
                    f.vars.iter().map(|&v| system.variables[v].name.clone()).collect(),
                )
            })
            .collect(),
    }
}

/// Objective adapter: packed parameters → total loss, drawing fresh
/// deterministic shot noise per evaluation when sampling is on.
struct LossObjective<'a> {
    context: &'a LossContext,
    setups: &'a [FunctionSetup],
    shots: u64,
    seed: u64,
    evaluations: u64,
}

impl Objective for LossObjective<'_> {
    fn value(&mut self, packed: &[f64]) -> Result<f64> {
        let params = unpack_params(self.setups, packed)?;
        let sampling = if self.shots == 0 {
            None
        } else {
            self.evaluations += 1;
            let stream = self
                .seed
                .wrapping_mul(0x9E3779B97F4A7C15)
                .wrapping_add(self.evaluations);
            Some((self.shots, stream))
        };
        self.context.total_loss(&params, sampling)
    }
}

/// Run the full hybrid loop on a parsed system.
pub fn solve(system: &DESystem, config: &SolverConfig) -> Result<SolveResult> {
    solve_with_path(system, config, None)
}

pub fn solve_with_path(
    system: &DESystem,
    config: &SolverConfig,
    problem_path: Option<&str>,
) -> Result<SolveResult> {
    config.validate()?;
    let setups = config.build_setups(system)?;
    let samples = generate_samples(config.n_samples, &all_domains(system))?;
    let loss_cfg = LossConfig::new(config.eta, config.strategy, samples)?;
    let context = LossContext::new(system.clone(), loss_cfg, setups.clone())?;

    let p0 = init_params(&setups, config.seed);
    let mut objective = LossObjective {
        context: &context,
        setups: &setups,
        shots: config.shots,
        seed: config.seed,
        evaluations: 0,
    };
    let opts = BfgsOptions {
        max_iterations: config.max_iterations,
        target_value: config.epsilon,
        ..Default::default()
    };
    let minimized = bfgs_minimize(&mut objective, &p0, &opts)?;

    let params = unpack_params(&setups, &minimized.point)?;
    let final_loss = if config.shots == 0 {
        context.total_loss(&params, None)?
    } else {
        minimized.value
    };
    let shifts = context.final_shifts(&params)?;

    let mut functions = Vec::with_capacity(setups.len());
    for (f, decl) in system.functions.iter().enumerate() {
        let expansion = reconstruct(&setups[f], &params[f], shifts[f].as_ref())?;
        let (orders, coefficients) = expansion
            .terms
            .into_iter()
            .map(|t| (t.orders, t.coefficient))
            .unzip();
        functions.push(SolvedFunction {
            name: decl.name.clone(),
            orders,
            coefficients,
            lambda: params[f].lambda,
            angles: params[f].angles.clone(),
        });
    }

    Ok(SolveResult {
        functions,
        final_loss,
        iterations: minimized.iterations,
        termination: minimized.termination,
        loss_trace: minimized.trace,
        seed: config.seed,
        config_echo: config_echo(system, config, problem_path, 1),
    })
}

/// Decode the optimized probabilities and fold in the final boundary shift.
fn reconstruct(
    setup: &FunctionSetup,
    params: &FunctionParams,
    shift: Option<&ShiftFunction>,
) -> Result<SpectralExpansion> {
    let sv = crate::circuit::simulate(&setup.circuit, &params.angles)?;
    let probs = crate::circuit::probabilities(&sv);
    let mut coeffs = decode_coefficients(&probs, params.lambda)?;
    if let Some(shift) = shift {
        let cheb = shift.to_chebyshev();
        if cheb.len() > coeffs.len() {
            return Err(Error::contract(format!(
                "boundary shift of degree {} exceeds the spectral basis of size {}",
                cheb.len() - 1,
                coeffs.len()
            )));
        }
        for (k, &c) in cheb.iter().enumerate() {
            coeffs[k] -= c;
        }
    }
    let mut terms = Vec::new();
    for (i, &c) in coeffs.iter().enumerate() {
        if c.abs() < 1e-14 {
            continue;
        }
        let (_, orders) = index_split(i, &setup.alloc)?;
        terms.push(SpectralTerm { orders, coefficient: c });
    }
    Ok(SpectralExpansion { terms })
}

/// Per-point mean and standard deviation of solution curves over restarts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveStats {
    pub points: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MultiStartSummary {
    pub restarts: usize,
    pub seeds: Vec<u64>,
    pub final_losses: Vec<f64>,
    pub best_seed: u64,
    pub best_final_loss: f64,
    pub median_final_loss: f64,
    pub curves: BTreeMap<String, CurveStats>,
}

/// Run `restarts` independent solves with seeds `seed..seed+R-1`.
pub fn multi_start(
    system: &DESystem,
    config: &SolverConfig,
    restarts: usize,
) -> Result<(Vec<SolveResult>, MultiStartSummary)> {
    multi_start_with_path(system, config, restarts, None)
}

pub fn multi_start_with_path(
    system: &DESystem,
    config: &SolverConfig,
    restarts: usize,
    problem_path: Option<&str>,
) -> Result<(Vec<SolveResult>, MultiStartSummary)> {
    if restarts == 0 {
        return Err(Error::contract("restarts must be ≥ 1"));
    }
    let seeds: Vec<u64> = (0..restarts as u64).map(|i| config.seed.wrapping_add(i)).collect();
    let mut runs: Vec<SolveResult> = seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = config.clone();
            cfg.seed = seed;
            solve_with_path(system, &cfg, problem_path)
        })
        .collect::<Result<Vec<_>>>()?;
    for run in &mut runs {
        run.config_echo.restarts = restarts;
    }

    let final_losses: Vec<f64> = runs.iter().map(|r| r.final_loss).collect();
    let best_idx = final_losses
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let mut sorted = final_losses.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };

    let samples = generate_samples(config.n_samples, &all_domains(system))?;
    let mut curves = BTreeMap::new();
    for decl in &system.functions {
        let points: Vec<Vec<f64>> = samples
            .iter()
            .map(|p| decl.vars.iter().map(|&v| p[v]).collect())
            .collect();
        let mut mean = vec![0.0; points.len()];
        let mut second = vec![0.0; points.len()];
        for run in &runs {
            let expansion = run.function(&decl.name).unwrap().expansion();
            for (i, point) in points.iter().enumerate() {
                let v = expansion.value(point)?;
                mean[i] += v;
                second[i] += v * v;
            }
        }
        let n = runs.len() as f64;
        for i in 0..points.len() {
            mean[i] /= n;
            second[i] = (second[i] / n - mean[i] * mean[i]).max(0.0).sqrt();
        }
        curves.insert(decl.name.clone(), CurveStats { points, mean, std: second });
    }

    let summary = MultiStartSummary {
        restarts,
        seeds: seeds.clone(),
        final_losses: final_losses.clone(),
        best_seed: seeds[best_idx],
        best_final_loss: final_losses[best_idx],
        median_final_loss: median,
        curves,
    };
    Ok((runs, summary))
}
