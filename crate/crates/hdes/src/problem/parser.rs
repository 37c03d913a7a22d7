//! Lexer and recursive-descent parser for problem files.

use std::collections::HashMap;

use super::ast::{BinOp, ElemFn, Expr};
use super::{BoundaryCondition, DESystem, Domain, FunctionDecl, Variable};
use crate::cheb::MultiIndex;
use crate::error::{Error, Result};

const RESERVED: &[&str] = &[
    "var", "fun", "eq", "bc", "param", "in", "D", "sqrt", "sin", "cos", "exp",
];

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Punct(char),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: u32,
    col: u32,
}

fn err_at(line: u32, col: u32, msg: impl Into<String>) -> Error {
    Error::Parse { line, col, msg: msg.into() }
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut chars = text.chars().peekable();
    let (mut line, mut col) = (1u32, 1u32);
    while let Some(&c) = chars.peek() {
        let (tline, tcol) = (line, col);
        let mut bump = |chars: &mut std::iter::Peekable<std::str::Chars>| {
            let c = chars.next().unwrap();
            if c == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            c
        };
        if c.is_whitespace() {
            bump(&mut chars);
        } else if c == '#' {
            while let Some(&c) = chars.peek() {
                if c == '\n' {
                    break;
                }
                bump(&mut chars);
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut name = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    name.push(bump(&mut chars));
                } else {
                    break;
                }
            }
            tokens.push(Token { tok: Tok::Ident(name), line: tline, col: tcol });
        } else if c.is_ascii_digit() {
            let mut lit = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_digit() {
                    lit.push(bump(&mut chars));
                } else {
                    break;
                }
            }
            if chars.peek() == Some(&'.') {
                lit.push(bump(&mut chars));
                while let Some(&c) = chars.peek() {
                    if c.is_ascii_digit() {
                        lit.push(bump(&mut chars));
                    } else {
                        break;
                    }
                }
            }
            if matches!(chars.peek(), Some('e' | 'E')) {
                let mut probe = chars.clone();
                probe.next();
                let signed = matches!(probe.peek(), Some('+' | '-'));
                if signed {
                    probe.next();
                }
                if matches!(probe.peek(), Some(d) if d.is_ascii_digit()) {
                    lit.push(bump(&mut chars));
                    if signed {
                        lit.push(bump(&mut chars));
                    }
                    while let Some(&c) = chars.peek() {
                        if c.is_ascii_digit() {
                            lit.push(bump(&mut chars));
                        } else {
                            break;
                        }
                    }
                }
            }
            let value: f64 = lit
                .parse()
                .map_err(|_| err_at(tline, tcol, format!("invalid number literal `{lit}`")))?;
            tokens.push(Token { tok: Tok::Number(value), line: tline, col: tcol });
        } else if ";:,()[]=+-*/^".contains(c) {
            bump(&mut chars);
            tokens.push(Token { tok: Tok::Punct(c), line: tline, col: tcol });
        } else {
            return Err(err_at(tline, tcol, format!("unexpected character `{c}`")));
        }
    }
    tokens.push(Token { tok: Tok::Eof, line, col });
    Ok(tokens)
}

/// Parse and validate a problem description.
pub fn parse_problem(text: &str) -> Result<DESystem> {
    let mut parser = Parser {
        tokens: lex(text)?,
        pos: 0,
        variables: Vec::new(),
        functions: Vec::new(),
        func_positions: Vec::new(),
        params: HashMap::new(),
        equations: Vec::new(),
        bcs: Vec::new(),
    };
    parser.run()
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    variables: Vec<Variable>,
    functions: Vec<FunctionDecl>,
    func_positions: Vec<(u32, u32)>,
    params: HashMap<String, f64>,
    equations: Vec<Expr>,
    bcs: Vec<BoundaryCondition>,
}

impl Parser {
    fn run(&mut self) -> Result<DESystem> {
        while !matches!(self.peek().tok, Tok::Eof) {
            self.statement()?;
        }
        if self.equations.is_empty() {
            let t = self.peek().clone();
            return Err(err_at(t.line, t.col, "problem declares no equations"));
        }
        let system = DESystem {
            variables: std::mem::take(&mut self.variables),
            functions: std::mem::take(&mut self.functions),
            equations: std::mem::take(&mut self.equations),
            boundary_conditions: std::mem::take(&mut self.bcs),
        };
        let orders = system.derivative_orders();
        for (idx, func) in system.functions.iter().enumerate() {
            if !orders.contains_key(&idx) {
                let (line, col) = self.func_positions[idx];
                return Err(err_at(
                    line,
                    col,
                    format!("function `{}` never appears in an equation", func.name),
                ));
            }
        }
        Ok(system)
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn expect_punct(&mut self, c: char) -> Result<Token> {
        let t = self.next();
        if t.tok == Tok::Punct(c) {
            Ok(t)
        } else {
            Err(err_at(t.line, t.col, format!("expected `{c}`, found {}", describe(&t.tok))))
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek().tok == Tok::Punct(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_ident(&mut self) -> Result<(String, u32, u32)> {
        let t = self.next();
        match t.tok {
            Tok::Ident(name) => Ok((name, t.line, t.col)),
            other => Err(err_at(t.line, t.col, format!("expected a name, found {}", describe(&other)))),
        }
    }

    fn statement(&mut self) -> Result<()> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Ident(kw) => match kw.as_str() {
                "var" => self.parse_var(),
                "fun" => self.parse_fun(),
                "param" => self.parse_param(),
                "eq" => self.parse_eq(),
                "bc" => self.parse_bc(),
                other => Err(err_at(
                    t.line,
                    t.col,
                    format!("expected `var`, `fun`, `param`, `eq` or `bc`, found `{other}`"),
                )),
            },
            other => Err(err_at(
                t.line,
                t.col,
                format!("expected a statement, found {}", describe(other)),
            )),
        }
    }

    fn check_fresh(&self, name: &str, line: u32, col: u32) -> Result<()> {
        if RESERVED.contains(&name) {
            return Err(err_at(line, col, format!("`{name}` is a reserved word")));
        }
        if self.variables.iter().any(|v| v.name == name)
            || self.functions.iter().any(|f| f.name == name)
            || self.params.contains_key(name)
        {
            return Err(err_at(line, col, format!("`{name}` is already declared")));
        }
        Ok(())
    }

    fn parse_var(&mut self) -> Result<()> {
        self.next(); // var
        let (name, line, col) = self.expect_ident()?;
        self.check_fresh(&name, line, col)?;
        let (kw, kline, kcol) = self.expect_ident()?;
        if kw != "in" {
            return Err(err_at(kline, kcol, format!("expected `in`, found `{kw}`")));
        }
        self.expect_punct('[')?;
        let lo = self.constant_expr()?;
        self.expect_punct(',')?;
        let hi = self.constant_expr()?;
        self.expect_punct(']')?;
        self.expect_punct(';')?;
        if lo > hi {
            return Err(err_at(line, col, format!("domain [{lo}, {hi}] has lo > hi")));
        }
        self.variables.push(Variable { name, domain: Domain { lo, hi } });
        Ok(())
    }

    fn parse_fun(&mut self) -> Result<()> {
        self.next(); // fun
        let (name, line, col) = self.expect_ident()?;
        self.check_fresh(&name, line, col)?;
        self.expect_punct('(')?;
        let mut vars = Vec::new();
        loop {
            let (vname, vline, vcol) = self.expect_ident()?;
            let idx = self
                .variables
                .iter()
                .position(|v| v.name == vname)
                .ok_or_else(|| err_at(vline, vcol, format!("unknown variable `{vname}`")))?;
            if vars.contains(&idx) {
                return Err(err_at(vline, vcol, format!("variable `{vname}` listed twice")));
            }
            vars.push(idx);
            if !self.eat_punct(',') {
                break;
            }
        }
        self.expect_punct(')')?;
        self.expect_punct(';')?;
        self.functions.push(FunctionDecl { name, vars });
        self.func_positions.push((line, col));
        Ok(())
    }

    fn parse_param(&mut self) -> Result<()> {
        self.next(); // param
        let (name, line, col) = self.expect_ident()?;
        self.check_fresh(&name, line, col)?;
        self.expect_punct('=')?;
        let value = self.constant_expr()?;
        self.expect_punct(';')?;
        self.params.insert(name, value);
        Ok(())
    }

    fn parse_eq(&mut self) -> Result<()> {
        self.next(); // eq
        self.expect_punct(':')?;
        let expr = self.expr()?;
        self.expect_punct('=')?;
        let t = self.next();
        match t.tok {
            Tok::Number(value) if value == 0.0 => {}
            other => {
                return Err(err_at(
                    t.line,
                    t.col,
                    format!("right-hand side must be the literal 0, found {}", describe(&other)),
                ))
            }
        }
        self.expect_punct(';')?;
        self.equations.push(expr);
        Ok(())
    }

    fn parse_bc(&mut self) -> Result<()> {
        self.next(); // bc
        self.expect_punct(':')?;
        let t = self.peek().clone();
        let (func, derivative) = match &t.tok {
            Tok::Ident(name) if name == "D" => {
                let (func, mi) = self.derivative_spec()?;
                (func, mi)
            }
            Tok::Ident(name) => {
                let name = name.clone();
                self.next();
                let func = self.lookup_function(&name, t.line, t.col)?;
                let mi = MultiIndex::zero(self.functions[func].vars.len());
                (func, mi)
            }
            other => {
                return Err(err_at(
                    t.line,
                    t.col,
                    format!("expected a function or D(...), found {}", describe(other)),
                ))
            }
        };
        self.expect_punct('(')?;
        let mut point = Vec::new();
        loop {
            point.push(self.constant_expr()?);
            if !self.eat_punct(',') {
                break;
            }
        }
        self.expect_punct(')')?;
        self.expect_punct('=')?;
        let target = self.constant_expr()?;
        self.expect_punct(';')?;

        let decl = &self.functions[func];
        if point.len() != decl.vars.len() {
            return Err(err_at(
                t.line,
                t.col,
                format!(
                    "`{}` takes {} argument(s), boundary condition supplies {}",
                    decl.name,
                    decl.vars.len(),
                    point.len()
                ),
            ));
        }
        for (slot, &coord) in point.iter().enumerate() {
            let var = &self.variables[decl.vars[slot]];
            if !var.domain.contains(coord) {
                return Err(err_at(
                    t.line,
                    t.col,
                    format!(
                        "boundary point {coord} lies outside the domain [{}, {}] of `{}`",
                        var.domain.lo, var.domain.hi, var.name
                    ),
                ));
            }
        }
        self.bcs.push(BoundaryCondition { function: func, derivative, point, target });
        Ok(())
    }

    fn lookup_function(&self, name: &str, line: u32, col: u32) -> Result<usize> {
        self.functions
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| err_at(line, col, format!("unknown function `{name}`")))
    }

    /// `D(f, v [, q] {, v [, q]})` — shared by equations and boundary specs.
    fn derivative_spec(&mut self) -> Result<(usize, MultiIndex)> {
        self.next(); // D
        self.expect_punct('(')?;
        let (fname, fline, fcol) = self.expect_ident()?;
        let func = self.lookup_function(&fname, fline, fcol)?;
        let n_slots = self.functions[func].vars.len();
        let mut counts = vec![0u32; n_slots];
        let mut any = false;
        while self.eat_punct(',') {
            let (vname, vline, vcol) = self.expect_ident()?;
            let var = self
                .variables
                .iter()
                .position(|v| v.name == vname)
                .ok_or_else(|| err_at(vline, vcol, format!("unknown variable `{vname}`")))?;
            let slot = self.functions[func]
                .vars
                .iter()
                .position(|&v| v == var)
                .ok_or_else(|| {
                    err_at(vline, vcol, format!("`{fname}` does not depend on `{vname}`"))
                })?;
            let mut order = 1u32;
            if self.peek().tok == Tok::Punct(',') {
                // A number after the comma is this variable's order; an
                // identifier starts the next variable instead.
                if let Tok::Number(value) = self.tokens[self.pos + 1].tok {
                    self.next(); // ,
                    let t = self.next();
                    if value.fract() != 0.0 || value < 0.0 {
                        return Err(err_at(
                            t.line,
                            t.col,
                            format!("derivative order must be a non-negative integer, found {value}"),
                        ));
                    }
                    order = value as u32;
                }
            }
            counts[slot] += order;
            any = true;
        }
        if !any {
            let t = self.peek().clone();
            return Err(err_at(t.line, t.col, "D(...) needs at least one variable"));
        }
        self.expect_punct(')')?;
        Ok((func, MultiIndex::new(counts)))
    }

    /// Parse an expression and fold it to a number; used for parameter
    /// values, domain bounds and boundary points/targets.
    fn constant_expr(&mut self) -> Result<f64> {
        let start = self.peek().clone();
        let expr = self.expr()?;
        const_value(&expr).ok_or_else(|| {
            err_at(start.line, start.col, "expected a constant expression")
        })
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat_punct('+') {
                lhs = Expr::Bin(BinOp::Add, Box::new(lhs), Box::new(self.term()?));
            } else if self.eat_punct('-') {
                lhs = Expr::Bin(BinOp::Sub, Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_punct('*') {
                lhs = Expr::Bin(BinOp::Mul, Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat_punct('/') {
                lhs = Expr::Bin(BinOp::Div, Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat_punct('-') {
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek().tok == Tok::Punct('^') {
            let caret = self.next();
            let exponent = self.unary()?;
            let folded = const_value(&exponent).ok_or_else(|| {
                err_at(caret.line, caret.col, "exponent must be a constant")
            })?;
            return Ok(Expr::Bin(
                BinOp::Pow,
                Box::new(base),
                Box::new(Expr::Const(folded)),
            ));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let t = self.next();
        match t.tok {
            Tok::Number(value) => Ok(Expr::Const(value)),
            Tok::Punct('(') => {
                let inner = self.expr()?;
                self.expect_punct(')')?;
                Ok(inner)
            }
            Tok::Ident(name) => self.resolve_ident(name, t.line, t.col),
            other => Err(err_at(t.line, t.col, format!("expected an expression, found {}", describe(&other)))),
        }
    }

    fn resolve_ident(&mut self, name: String, line: u32, col: u32) -> Result<Expr> {
        if name == "D" {
            self.pos -= 1;
            let (func, mi) = self.derivative_spec()?;
            return Ok(Expr::Func { func, derivative: mi });
        }
        if let Some(elem) = match name.as_str() {
            "sqrt" => Some(ElemFn::Sqrt),
            "sin" => Some(ElemFn::Sin),
            "cos" => Some(ElemFn::Cos),
            "exp" => Some(ElemFn::Exp),
            _ => None,
        } {
            self.expect_punct('(')?;
            let inner = self.expr()?;
            self.expect_punct(')')?;
            return Ok(Expr::Call(elem, Box::new(inner)));
        }
        if let Some(&value) = self.params.get(&name) {
            return Ok(Expr::Const(value));
        }
        if let Some(idx) = self.variables.iter().position(|v| v.name == name) {
            return Ok(Expr::Var(idx));
        }
        if let Some(func) = self.functions.iter().position(|f| f.name == name) {
            if self.peek().tok == Tok::Punct('(') {
                // Application sugar: `f(x)` is the bare value when the
                // arguments are exactly the declared variables in order.
                self.next();
                let decl_vars = self.functions[func].vars.clone();
                for (i, &expected) in decl_vars.iter().enumerate() {
                    if i > 0 {
                        self.expect_punct(',')?;
                    }
                    let t = self.peek().clone();
                    let arg = self.expr()?;
                    if arg != Expr::Var(expected) {
                        return Err(err_at(
                            t.line,
                            t.col,
                            format!(
                                "`{name}` may only be applied to its declared variables inside an equation"
                            ),
                        ));
                    }
                }
                self.expect_punct(')')?;
            }
            let mi = MultiIndex::zero(self.functions[func].vars.len());
            return Ok(Expr::Func { func, derivative: mi });
        }
        Err(err_at(line, col, format!("unknown identifier `{name}`")))
    }
}

/// Fold an expression with no variable or function references to a number.
fn const_value(expr: &Expr) -> Option<f64> {
    match expr {
        Expr::Const(c) => Some(*c),
        Expr::Var(_) | Expr::Func { .. } => None,
        Expr::Neg(inner) => Some(-const_value(inner)?),
        Expr::Bin(op, lhs, rhs) => {
            let a = const_value(lhs)?;
            let b = const_value(rhs)?;
            let v = match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b == 0.0 {
                        return None;
                    }
                    a / b
                }
                BinOp::Pow => a.powf(b),
            };
            v.is_finite().then_some(v)
        }
        Expr::Call(f, inner) => {
            let a = const_value(inner)?;
            let v = match f {
                ElemFn::Sqrt => a.sqrt(),
                ElemFn::Sin => a.sin(),
                ElemFn::Cos => a.cos(),
                ElemFn::Exp => a.exp(),
            };
            v.is_finite().then_some(v)
        }
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Ident(name) => format!("`{name}`"),
        Tok::Number(value) => format!("number {value}"),
        Tok::Punct(c) => format!("`{c}`"),
        Tok::Eof => "end of input".to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{evaluate_residual, is_linear_single_function, Bindings};
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::collections::BTreeSet;

    const COUPLED: &str = "\
var x in [0, 0.95];
fun f(x);
fun g(x);
eq: D(f, x) - 5 = 0;
eq: D(g, x) - f - 5 = 0;
bc: f(0) = 0;
bc: g(0) = 0;
";

    const OSCILLATOR: &str = "\
param omega = 9/8;
param zeta = 45/8;
var t in [0, 0.95];
fun y(t);
eq: D(y, t, 2) + 2*zeta*omega*D(y, t) + omega^2*y = 0;
bc: y(0) = 2;
bc: D(y, t, 1)(0) = 0;
";

    const HYPOELASTIC: &str = "\
param b = 10;
param sigma0 = 5;
param eps0 = 0.1;
param K = 100;
var x in [0, 0.95];
fun u(x);
fun sigma(x);
eq: D(u, x) - (sigma/(3*K) + (2*eps0/sqrt(3)) * (sigma/(sqrt(3)*sigma0))^4) = 0;
eq: D(sigma, x) + b = 0;
bc: u(0) = 0;
bc: sigma(0.9) = 2;
";

    fn mi(counts: &[u32]) -> MultiIndex {
        MultiIndex::new(counts.to_vec())
    }

    #[test]
    fn parses_the_coupled_system() {
        let sys = parse_problem(COUPLED).unwrap();
        assert_eq!(sys.variables.len(), 1);
        assert_eq!(sys.variables[0].domain, Domain { lo: 0.0, hi: 0.95 });
        assert_eq!(sys.functions.len(), 2);
        assert_eq!(sys.equations.len(), 2);
        assert_eq!(sys.boundary_conditions.len(), 2);

        let orders = sys.derivative_orders();
        let f_orders: BTreeSet<_> = orders[&0].iter().cloned().collect();
        assert_eq!(f_orders, BTreeSet::from([mi(&[0]), mi(&[1])]));
        assert_eq!(orders[&1], BTreeSet::from([mi(&[1])]));
    }

    #[test]
    fn parses_derivative_orders_of_benchmark_systems() {
        let sys = parse_problem(OSCILLATOR).unwrap();
        let orders = sys.derivative_orders();
        assert_eq!(orders[&0], BTreeSet::from([mi(&[0]), mi(&[1]), mi(&[2])]));

        let sys = parse_problem(HYPOELASTIC).unwrap();
        let orders = sys.derivative_orders();
        assert_eq!(orders[&sys.function_index("u").unwrap()], BTreeSet::from([mi(&[1])]));
        assert_eq!(
            orders[&sys.function_index("sigma").unwrap()],
            BTreeSet::from([mi(&[0]), mi(&[1])])
        );

        let single = parse_problem("var x in [-1, 1]; fun f(x); eq: f - 5 = 0;").unwrap();
        assert_eq!(single.derivative_orders()[&0], BTreeSet::from([mi(&[0])]));
    }

    #[test]
    fn errors_carry_positions() {
        let err = parse_problem("eq: D(f, x) = 0;").unwrap_err();
        match err {
            Error::Parse { line, col, msg } => {
                assert_eq!(line, 1);
                assert!(col > 1);
                assert!(msg.contains("unknown function `f`"), "{msg}");
            }
            other => panic!("expected a parse error, got {other:?}"),
        }

        let err = parse_problem("var x in [0, 1];\nfun f(x);\neq: f - q = 0;").unwrap_err();
        assert!(err.to_string().starts_with("3:"), "{err}");
        assert!(err.to_string().contains("unknown identifier `q`"), "{err}");
    }

    #[test]
    fn rejects_malformed_declarations() {
        // Boundary point outside the domain closure.
        let err =
            parse_problem("var x in [0, 1]; fun f(x); eq: f = 0; bc: f(2) = 0;").unwrap_err();
        assert!(err.to_string().contains("outside the domain"), "{err}");

        // Arity mismatch in a boundary condition.
        let err =
            parse_problem("var x in [0, 1]; fun f(x); eq: f = 0; bc: f(0, 1) = 0;").unwrap_err();
        assert!(err.to_string().contains("argument"), "{err}");

        // Right-hand side must be the literal zero.
        let err = parse_problem("var x in [0, 1]; fun f(x); eq: f = 1;").unwrap_err();
        assert!(err.to_string().contains("literal 0"), "{err}");

        // Every declared function must appear in an equation.
        let err =
            parse_problem("var x in [0, 1]; fun f(x); fun g(x); eq: f = 0;").unwrap_err();
        assert!(err.to_string().contains("never appears"), "{err}");

        // Non-constant exponents are rejected up front.
        let err = parse_problem("var x in [0, 1]; fun f(x); eq: f^f = 0;").unwrap_err();
        assert!(err.to_string().contains("constant"), "{err}");
    }

    #[test]
    fn residual_evaluation_matches_hand_values() {
        let sys = parse_problem(COUPLED).unwrap();
        let mut bindings: Bindings = Bindings::new();
        bindings.insert((0, mi(&[1])), 5.0);
        let r = evaluate_residual(&sys.equations[0], &bindings, &[0.3]).unwrap();
        assert_eq!(r, 0.0);

        let sys = parse_problem("var x in [0, 1]; fun f(x); eq: f^2 = 0;").unwrap();
        let mut bindings = Bindings::new();
        bindings.insert((0, mi(&[0])), -3.0);
        assert_eq!(evaluate_residual(&sys.equations[0], &bindings, &[0.0]).unwrap(), 9.0);

        // Missing binding is a contract error.
        assert!(evaluate_residual(&sys.equations[0], &Bindings::new(), &[0.0]).is_err());

        // Division by zero surfaces as an evaluation error.
        let sys = parse_problem("var x in [0, 1]; fun f(x); eq: 1/f = 0;").unwrap();
        let mut bindings = Bindings::new();
        bindings.insert((0, mi(&[0])), 0.0);
        assert!(matches!(
            evaluate_residual(&sys.equations[0], &bindings, &[0.0]),
            Err(Error::Eval(_))
        ));
    }

    #[test]
    fn hypoelastic_constitutive_relation_closes() {
        let sys = parse_problem(HYPOELASTIC).unwrap();
        let u = sys.function_index("u").unwrap();
        let s = sys.function_index("sigma").unwrap();
        let sigma = 2.0;
        let strain = sigma / 300.0
            + (2.0 * 0.1 / 3.0f64.sqrt()) * (sigma / (3.0f64.sqrt() * 5.0)).powi(4);
        let mut bindings = Bindings::new();
        bindings.insert((u, mi(&[1])), strain);
        bindings.insert((s, mi(&[0])), sigma);
        let r = evaluate_residual(&sys.equations[0], &bindings, &[0.4]).unwrap();
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn residuals_match_a_direct_polynomial_oracle() {
        let sys = parse_problem(
            "var x in [-1, 1]; fun f(x); fun g(x); eq: f^2 - 2*g + 3*x*D(f, x) - 1 = 0; eq: g = 0;",
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(71);
        for _ in 0..20 {
            let fval = rng.random_range(-3.0..3.0);
            let fder = rng.random_range(-3.0..3.0);
            let gval = rng.random_range(-3.0..3.0);
            let x = rng.random_range(-1.0..1.0);
            let mut bindings = Bindings::new();
            bindings.insert((0, mi(&[0])), fval);
            bindings.insert((0, mi(&[1])), fder);
            bindings.insert((1, mi(&[0])), gval);
            let got = evaluate_residual(&sys.equations[0], &bindings, &[x]).unwrap();
            let expected = fval * fval - 2.0 * gval + 3.0 * x * fder - 1.0;
            assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn linearity_detection_matches_stated_examples() {
        let sys = parse_problem(COUPLED).unwrap();
        assert!(is_linear_single_function(&sys.equations[0]));
        assert!(!is_linear_single_function(&sys.equations[1]));

        let sys = parse_problem(HYPOELASTIC).unwrap();
        assert!(!is_linear_single_function(&sys.equations[0]));
        assert!(is_linear_single_function(&sys.equations[1]));

        // Variable-dependent coefficients stay linear.
        let sys =
            parse_problem("var x in [0, 1]; fun f(x); eq: x*D(f, x) + sin(x)*f - x^2 = 0;")
                .unwrap();
        assert!(is_linear_single_function(&sys.equations[0]));

        let sys = parse_problem(OSCILLATOR).unwrap();
        assert!(is_linear_single_function(&sys.equations[0]));
    }

    #[test]
    fn printing_and_reparsing_is_structurally_identical() {
        for text in [COUPLED, OSCILLATOR, HYPOELASTIC] {
            let sys = parse_problem(text).unwrap();
            let printed = sys.to_string();
            let reparsed = parse_problem(&printed)
                .unwrap_or_else(|e| panic!("failed to reparse:\n{printed}\n{e}"));
            assert_eq!(sys, reparsed, "round trip changed structure:\n{printed}");
        }
    }

    #[test]
    fn application_sugar_resolves_to_bare_values() {
        let sys =
            parse_problem("var x in [0, 1]; fun f(x); eq: f(x) - 1 = 0;").unwrap();
        assert_eq!(
            sys.equations[0],
            Expr::Bin(
                BinOp::Sub,
                Box::new(Expr::Func { func: 0, derivative: mi(&[0]) }),
                Box::new(Expr::Const(1.0))
            )
        );
        let err = parse_problem("var x in [0, 1]; fun f(x); eq: f(0.5) - 1 = 0;").unwrap_err();
        assert!(err.to_string().contains("declared variables"), "{err}");
    }

    #[test]
    fn mixed_partial_derivatives_parse() {
        let sys = parse_problem(
            "var x in [-1, 1]; var y in [-1, 1]; fun f(x, y); eq: D(f, x, 1, y, 2) - f = 0;",
        )
        .unwrap();
        let orders = sys.derivative_orders();
        assert!(orders[&0].contains(&mi(&[1, 2])));
        assert!(orders[&0].contains(&mi(&[0, 0])));
    }
}
