//! Expression AST, residual evaluation and structural analysis.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::cheb::MultiIndex;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemFn {
    Sqrt,
    Sin,
    Cos,
    Exp,
}

impl ElemFn {
    pub fn name(self) -> &'static str {
        match self {
            ElemFn::Sqrt => "sqrt",
            ElemFn::Sin => "sin",
            ElemFn::Cos => "cos",
            ElemFn::Exp => "exp",
        }
    }
}

/// One node of an equation. Variable and function references are indices
/// into the owning system's declaration lists; a `Func` node with the
/// all-zero multi-index is the bare function value.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Func { func: usize, derivative: MultiIndex },
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(ElemFn, Box<Expr>),
}

/// Values the residual evaluator looks function terms up in.
pub type Bindings = HashMap<(usize, MultiIndex), f64>;

/// Evaluate an equation's left-hand side with variables bound to `point`
/// and every `(function, derivative)` term bound through `bindings`.
pub fn evaluate_residual(expr: &Expr, bindings: &Bindings, point: &[f64]) -> Result<f64> {
    let value = eval(expr, bindings, point)?;
    if value.is_nan() {
        return Err(Error::eval("expression evaluated to NaN".to_string()));
    }
    Ok(value)
}

fn eval(expr: &Expr, bindings: &Bindings, point: &[f64]) -> Result<f64> {
    match expr {
        Expr::Const(c) => Ok(*c),
        Expr::Var(i) => point.get(*i).copied().ok_or_else(|| {
            Error::contract(format!("variable #{i} is not bound at this point"))
        }),
        Expr::Func { func, derivative } => bindings
            .get(&(*func, derivative.clone()))
            .copied()
            .ok_or_else(|| {
                Error::contract(format!(
                    "no binding for function #{func} at derivative {derivative}"
                ))
            }),
        Expr::Neg(inner) => Ok(-eval(inner, bindings, point)?),
        Expr::Bin(op, lhs, rhs) => {
            let a = eval(lhs, bindings, point)?;
            let b = eval(rhs, bindings, point)?;
            match op {
                BinOp::Add => Ok(a + b),
                BinOp::Sub => Ok(a - b),
                BinOp::Mul => Ok(a * b),
                BinOp::Div => {
                    if b == 0.0 {
                        Err(Error::eval("division by zero".to_string()))
                    } else {
                        Ok(a / b)
                    }
                }
                BinOp::Pow => {
                    if b.fract() == 0.0 && b.abs() <= i32::MAX as f64 {
                        Ok(a.powi(b as i32))
                    } else {
                        Ok(a.powf(b))
                    }
                }
            }
        }
        Expr::Call(f, inner) => {
            let a = eval(inner, bindings, point)?;
            match f {
                ElemFn::Sqrt => {
                    if a < 0.0 {
                        Err(Error::eval(format!("sqrt of negative value {a}")))
                    } else {
                        Ok(a.sqrt())
                    }
                }
                ElemFn::Sin => Ok(a.sin()),
                ElemFn::Cos => Ok(a.cos()),
                ElemFn::Exp => Ok(a.exp()),
            }
        }
    }
}

/// Collect every `(function, derivative)` term occurring in the expression.
pub fn function_terms(expr: &Expr, into: &mut BTreeSet<(usize, MultiIndex)>) {
    match expr {
        Expr::Const(_) | Expr::Var(_) => {}
        Expr::Func { func, derivative } => {
            into.insert((*func, derivative.clone()));
        }
        Expr::Neg(inner) | Expr::Call(_, inner) => function_terms(inner, into),
        Expr::Bin(_, lhs, rhs) => {
            function_terms(lhs, into);
            function_terms(rhs, into);
        }
    }
}

/// True iff the expression is an affine combination of values/derivatives of
/// exactly one function, with coefficients that are constants or depend only
/// on the independent variables.
pub fn is_linear_single_function(expr: &Expr) -> bool {
    match linear_shape(expr) {
        Some((1, funcs)) => funcs.len() == 1,
        _ => false,
    }
}

/// `Some((0, _))` for function-free subtrees, `Some((1, funcs))` for affine
/// ones, `None` once anything nonlinear in a function term appears.
fn linear_shape(expr: &Expr) -> Option<(u8, BTreeSet<usize>)> {
    match expr {
        Expr::Const(_) | Expr::Var(_) => Some((0, BTreeSet::new())),
        Expr::Func { func, .. } => {
            let mut funcs = BTreeSet::new();
            funcs.insert(*func);
            Some((1, funcs))
        }
        Expr::Neg(inner) => linear_shape(inner),
        Expr::Bin(op, lhs, rhs) => {
            let (dl, fl) = linear_shape(lhs)?;
            let (dr, fr) = linear_shape(rhs)?;
            let union = |mut a: BTreeSet<usize>, b: BTreeSet<usize>| {
                a.extend(b);
                a
            };
            match op {
                BinOp::Add | BinOp::Sub => Some((dl.max(dr), union(fl, fr))),
                BinOp::Mul => match (dl, dr) {
                    (0, d) | (d, 0) => Some((d, union(fl, fr))),
                    _ => None,
                },
                BinOp::Div => {
                    if dr == 0 {
                        Some((dl, union(fl, fr)))
                    } else {
                        None
                    }
                }
                BinOp::Pow => {
                    if dl == 0 && dr == 0 {
                        Some((0, union(fl, fr)))
                    } else if dr == 0 && matches!(**rhs, Expr::Const(c) if c == 1.0) {
                        Some((dl, union(fl, fr)))
                    } else {
                        None
                    }
                }
            }
        }
        Expr::Call(_, inner) => {
            let (d, funcs) = linear_shape(inner)?;
            if d == 0 {
                Some((0, funcs))
            } else {
                None
            }
        }
    }
}

/// Precedence-aware printer over a parsed system's name tables.
pub struct ExprPrinter<'a> {
    pub expr: &'a Expr,
    pub system: &'a super::DESystem,
}

impl fmt::Display for ExprPrinter<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(self.expr, f, 0)
    }
}

impl ExprPrinter<'_> {
    fn write(&self, expr: &Expr, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
        let prec = precedence(expr);
        let parens = prec < parent;
        if parens {
            write!(f, "(")?;
        }
        match expr {
            Expr::Const(c) => write!(f, "{c}")?,
            Expr::Var(i) => write!(f, "{}", self.system.variables[*i].name)?,
            Expr::Func { func, derivative } => {
                let decl = &self.system.functions[*func];
                if derivative.is_zero() {
                    write!(f, "{}", decl.name)?;
                } else {
                    write!(f, "D({}", decl.name)?;
                    for (slot, &g) in derivative.counts().iter().enumerate() {
                        if g > 0 {
                            let var = decl.vars[slot];
                            write!(f, ", {}, {g}", self.system.variables[var].name)?;
                        }
                    }
                    write!(f, ")")?;
                }
            }
            Expr::Neg(inner) => {
                write!(f, "-")?;
                self.write(inner, f, 3)?;
            }
            Expr::Bin(op, lhs, rhs) => {
                let (sym, left, right) = match op {
                    BinOp::Add => ("+", 1, 2),
                    BinOp::Sub => ("-", 1, 2),
                    BinOp::Mul => ("*", 2, 3),
                    BinOp::Div => ("/", 2, 3),
                    BinOp::Pow => ("^", 5, 4),
                };
                self.write(lhs, f, left)?;
                write!(f, " {sym} ")?;
                self.write(rhs, f, right)?;
            }
            Expr::Call(func, inner) => {
                write!(f, "{}(", func.name())?;
                self.write(inner, f, 0)?;
                write!(f, ")")?;
            }
        }
        if parens {
            write!(f, ")")?;
        }
        Ok(())
    }
}

fn precedence(expr: &Expr) -> u8 {
    match expr {
        Expr::Bin(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Bin(BinOp::Mul | BinOp::Div, ..) => 2,
        Expr::Neg(_) => 3,
        Expr::Bin(BinOp::Pow, ..) => 4,
        _ => 6,
    }
}
