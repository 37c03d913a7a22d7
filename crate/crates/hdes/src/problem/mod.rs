//! Textual problem language: equations, domains and boundary conditions.
//!
//! Problem files are plain text, one statement per line kind:
//!
//! ```text
//! param b = 10;
//! var x in [0, 0.95];
//! fun f(x);
//! eq: D(f, x) - b = 0;
//! bc: f(0) = 0;
//! bc: D(f, x, 1)(0) = 2;
//! ```
//!
//! Equations must already be in `= 0` form; the parser does not rearrange.
//! `D(f, x, q)` is the `q`-fold derivative (default 1), with further
//! variable/order pairs for mixed partials. Named constants are declared
//! with `param` and inlined at parse time. Everything is validated up
//! front: unknown identifiers, arity mismatches and boundary points outside
//! their domain are reported as `line:col: message`.

mod ast;
mod parser;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub use ast::{
    evaluate_residual, function_terms, is_linear_single_function, BinOp, Bindings, ElemFn, Expr,
    ExprPrinter,
};
pub use parser::parse_problem;

use crate::cheb::MultiIndex;
use serde::{Deserialize, Serialize};

/// Closed interval a variable ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Domain {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub domain: Domain,
}

/// A declared solution function over a subset of the system's variables.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDecl {
    pub name: String,
    /// Indices into [`DESystem::variables`], in declaration order.
    pub vars: Vec<usize>,
}

/// A boundary condition `f^(derivative)(point) = target`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCondition {
    pub function: usize,
    /// Derivative over the function's own variable list; all-zero for a
    /// plain value condition.
    pub derivative: MultiIndex,
    pub point: Vec<f64>,
    pub target: f64,
}

impl BoundaryCondition {
    pub fn is_value(&self) -> bool {
        self.derivative.is_zero()
    }
}

/// A parsed, validated system of differential equations.
#[derive(Debug, Clone, PartialEq)]
pub struct DESystem {
    pub variables: Vec<Variable>,
    pub functions: Vec<FunctionDecl>,
    pub equations: Vec<Expr>,
    pub boundary_conditions: Vec<BoundaryCondition>,
}

impl DESystem {
    pub fn function_index(&self, name: &str) -> Option<usize> {
        self.functions.iter().position(|f| f.name == name)
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Per-function set of derivative multi-indices occurring in the
    /// equations (order 0 included when the bare function appears).
    pub fn derivative_orders(&self) -> BTreeMap<usize, BTreeSet<MultiIndex>> {
        let mut terms = BTreeSet::new();
        for eq in &self.equations {
            function_terms(eq, &mut terms);
        }
        let mut map: BTreeMap<usize, BTreeSet<MultiIndex>> = BTreeMap::new();
        for (func, mi) in terms {
            map.entry(func).or_default().insert(mi);
        }
        map
    }

    /// Boundary conditions of one function.
    pub fn bcs_of(&self, func: usize) -> Vec<&BoundaryCondition> {
        self.boundary_conditions
            .iter()
            .filter(|bc| bc.function == func)
            .collect()
    }

    pub fn printer<'a>(&'a self, expr: &'a Expr) -> ExprPrinter<'a> {
        ExprPrinter { expr, system: self }
    }
}

impl fmt::Display for DESystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.variables {
            writeln!(f, "var {} in [{}, {}];", v.name, v.domain.lo, v.domain.hi)?;
        }
        for func in &self.functions {
            let vars: Vec<&str> = func.vars.iter().map(|&i| self.variables[i].name.as_str()).collect();
            writeln!(f, "fun {}({});", func.name, vars.join(", "))?;
        }
        for eq in &self.equations {
            writeln!(f, "eq: {} = 0;", self.printer(eq))?;
        }
        for bc in &self.boundary_conditions {
            let func = &self.functions[bc.function];
            let point: Vec<String> = bc.point.iter().map(|p| p.to_string()).collect();
            if bc.is_value() {
                writeln!(f, "bc: {}({}) = {};", func.name, point.join(", "), bc.target)?;
            } else {
                write!(f, "bc: D({}", func.name)?;
                for (slot, &g) in bc.derivative.counts().iter().enumerate() {
                    if g > 0 {
                        write!(f, ", {}, {g}", self.variables[func.vars[slot]].name)?;
                    }
                }
                writeln!(f, ")({}) = {};", point.join(", "), bc.target)?;
            }
        }
        Ok(())
    }
}
