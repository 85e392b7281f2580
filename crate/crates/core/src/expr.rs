//! A small expression language with symbolic differentiation.
//!
//! Grammar (usual precedence, `^` binds tighter than unary minus and is
//! right-associative):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | name | func '(' expr ')' | '(' expr ')'
//! func  := sqrt | exp | sin | cos | ln | abs
//! ```
//!
//! Exponents must fold to constants. `pi` is predefined.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sqrt,
    Exp,
    Sin,
    Cos,
    Ln,
    Abs,
    Sign,
}

impl Func {
    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "ln" | "log" => Func::Ln,
            "abs" => Func::Abs,
            "sign" => Func::Sign,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Ln => "ln",
            Func::Abs => "abs",
            Func::Sign => "sign",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sqrt => v.sqrt(),
            Func::Exp => v.exp(),
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Ln => v.ln(),
            Func::Abs => v.abs(),
            Func::Sign => {
                if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, f64),
    Call(Func, Box<Expr>),
}

use Expr::*;

fn konst(e: &Expr) -> Option<f64> {
    match e {
        Const(c) => Some(*c),
        _ => None,
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (konst(&a), konst(&b)) {
        (Some(x), Some(y)) => Const(x + y),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (konst(&a), konst(&b)) {
        (Some(x), Some(y)) => Const(x - y),
        (Some(x), _) if x == 0.0 => neg(b),
        (_, Some(y)) if y == 0.0 => a,
        _ => Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (konst(&a), konst(&b)) {
        (Some(x), Some(y)) => Const(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Const(0.0),
        (Some(x), _) if x == 1.0 => b,
        (_, Some(y)) if y == 1.0 => a,
        _ => Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (konst(&a), konst(&b)) {
        (Some(x), Some(y)) => Const(x / y),
        (Some(x), _) if x == 0.0 => Const(0.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => Div(Box::new(a), Box::new(b)),
    }
}

fn neg(a: Expr) -> Expr {
    match a {
        Const(c) => Const(-c),
        Neg(inner) => *inner,
        other => Neg(Box::new(other)),
    }
}

fn pow(a: Expr, c: f64) -> Expr {
    if c == 0.0 {
        return Const(1.0);
    }
    if c == 1.0 {
        return a;
    }
    match a {
        Const(x) => Const(x.powf(c)),
        other => Pow(Box::new(other), c),
    }
}

fn call(f: Func, a: Expr) -> Expr {
    match a {
        Const(x) => Const(f.apply(x)),
        other => Call(f, Box::new(other)),
    }
}

impl Expr {
    /// Parses `src` with the given variable names (matched exactly).
    pub fn parse(src: &str, vars: &[&str]) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0, vars };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expression(format!("unexpected trailing input in `{src}`")));
        }
        Ok(e)
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Const(c) => *c,
            Var(i) => vars[*i],
            Neg(a) => -a.eval(vars),
            Add(a, b) => a.eval(vars) + b.eval(vars),
            Sub(a, b) => a.eval(vars) - b.eval(vars),
            Mul(a, b) => a.eval(vars) * b.eval(vars),
            Div(a, b) => a.eval(vars) / b.eval(vars),
            Pow(a, c) => {
                let v = a.eval(vars);
                if *c == 2.0 {
                    v * v
                } else if c.fract() == 0.0 && c.abs() < 64.0 {
                    v.powi(*c as i32)
                } else {
                    v.powf(*c)
                }
            }
            Call(f, a) => f.apply(a.eval(vars)),
        }
    }

    /// Symbolic partial derivative with respect to variable `var`.
    pub fn diff(&self, var: usize) -> Expr {
        match self {
            Const(_) => Const(0.0),
            Var(i) => Const(if *i == var { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.diff(var)),
            Add(a, b) => add(a.diff(var), b.diff(var)),
            Sub(a, b) => sub(a.diff(var), b.diff(var)),
            Mul(a, b) => add(mul(a.diff(var), (**b).clone()), mul((**a).clone(), b.diff(var))),
            Div(a, b) => div(
                sub(mul(a.diff(var), (**b).clone()), mul((**a).clone(), b.diff(var))),
                pow((**b).clone(), 2.0),
            ),
            Pow(a, c) => mul(mul(Const(*c), pow((**a).clone(), c - 1.0)), a.diff(var)),
            Call(f, a) => {
                let da = a.diff(var);
                let inner = (**a).clone();
                let outer = match f {
                    Func::Sqrt => div(Const(0.5), call(Func::Sqrt, inner)),
                    Func::Exp => call(Func::Exp, inner),
                    Func::Sin => call(Func::Cos, inner),
                    Func::Cos => neg(call(Func::Sin, inner)),
                    Func::Ln => div(Const(1.0), inner),
                    Func::Abs => call(Func::Sign, inner),
                    Func::Sign => Const(0.0),
                };
                mul(outer, da)
            }
        }
    }

    /// True if variable `var` does not occur.
    pub fn is_free_of(&self, var: usize) -> bool {
        match self {
            Const(_) => true,
            Var(i) => *i != var,
            Neg(a) | Pow(a, _) | Call(_, a) => a.is_free_of(var),
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) => a.is_free_of(var) && b.is_free_of(var),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Const(c) => write!(f, "{c}"),
            Var(i) => write!(f, "v{i}"),
            Neg(a) => write!(f, "(-{a})"),
            Add(a, b) => write!(f, "({a} + {b})"),
            Sub(a, b) => write!(f, "({a} - {b})"),
            Mul(a, b) => write!(f, "({a} * {b})"),
            Div(a, b) => write!(f, "({a} / {b})"),
            Pow(a, c) => write!(f, "({a}^{c})"),
            Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = i;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse::<f64>().map_err(|_| Error::Expression(format!("bad number `{s}`")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Expression(format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Tok>,
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn peek_op(&self) -> Option<char> {
        match self.tokens.get(self.pos) {
            Some(Tok::Op(c)) => Some(*c),
            _ => None,
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.peek_op() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(Error::Expression(format!("expected `{c}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' { add(lhs, rhs) } else { sub(lhs, rhs) };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' { mul(lhs, rhs) } else { div(lhs, rhs) };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek_op() == Some('-') {
            self.pos += 1;
            return Ok(neg(self.unary()?));
        }
        if self.peek_op() == Some('+') {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.pos += 1;
            let exponent = self.unary()?;
            let c = konst(&exponent)
                .ok_or_else(|| Error::Expression("exponents must be constant".into()))?;
            return Ok(pow(base, c));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.tokens.get(self.pos).cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Const(v))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if let Some(f) = Func::from_name(&name) {
                    self.expect('(')?;
                    let arg = self.expr()?;
                    self.expect(')')?;
                    return Ok(call(f, arg));
                }
                if name == "pi" {
                    return Ok(Const(std::f64::consts::PI));
                }
                self.vars
                    .iter()
                    .position(|v| *v == name)
                    .map(Var)
                    .ok_or_else(|| Error::Expression(format!("unknown name `{name}`")))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            _ => Err(Error::Expression("unexpected end of expression".into())),
        }
    }
}

/// Variable names `prefix1..prefixn`.
pub fn indexed_names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_power() {
        let e = Expr::parse("-x^2 + 3*x - 1/2", &["x"]).unwrap();
        assert_eq!(e.eval(&[2.0]), -4.0 + 6.0 - 0.5);
        let r = Expr::parse("2^3^2", &[]).unwrap();
        assert_eq!(r.eval(&[]), 512.0);
    }

    #[test]
    fn derivative_rules() {
        let e = Expr::parse("sin(x)*exp(y) + sqrt(x^2 + 1) + ln(x)", &["x", "y"]).unwrap();
        let (x, y) = (0.7, -0.3_f64);
        let dx = e.diff(0).eval(&[x, y]);
        let expect = x.cos() * y.exp() + x / (x * x + 1.0).sqrt() + 1.0 / x;
        assert!((dx - expect).abs() < 1e-14);
        let dy = e.diff(1).eval(&[x, y]);
        assert!((dy - x.sin() * y.exp()).abs() < 1e-14);
    }

    #[test]
    fn errors_are_reported() {
        assert!(Expr::parse("x +", &["x"]).is_err());
        assert!(Expr::parse("q", &["x"]).is_err());
        assert!(Expr::parse("x^y", &["x", "y"]).is_err());
        assert!(Expr::parse("(x", &["x"]).is_err());
        assert!(Expr::parse("x $ 2", &["x"]).is_err());
    }

    #[test]
    fn scientific_notation() {
        let e = Expr::parse("1.5e-1*x + 2E2", &["x"]).unwrap();
        assert_eq!(e.eval(&[10.0]), 1.5 + 200.0);
    }

    #[test]
    fn constant_folding_reports_free_variables() {
        let e = Expr::parse("0.5*p1^2 + 0*x1", &["p1", "x1"]).unwrap();
        assert!(e.is_free_of(1));
        assert!(!e.is_free_of(0));
    }
}
