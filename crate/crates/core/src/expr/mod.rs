//! A small expression language for writing periodic vector fields as text.
//!
//! Variables are `t`, `eps`, `x1..xk` and declared parameters. The function
//! set is `sin cos abs sqrt sign`; operators are `+ - * / ^` with `^`
//! binding tightest and associating to the right.

mod field;
mod parse;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use field::{field_from_spec, DslField, FieldSpec, FieldSpecError};
pub use parse::{parse, ParseError, Scope};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    Eps,
    /// Zero-based state component (`x1` is `X(0)`).
    X(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Abs,
    Sin,
    Cos,
    Sqrt,
    Sign,
}

impl UnaryOp {
    pub fn from_function_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Self::Sin,
            "cos" => Self::Cos,
            "abs" => Self::Abs,
            "sqrt" => Self::Sqrt,
            "sign" => Self::Sign,
            _ => return None,
        })
    }

    fn function_name(self) -> &'static str {
        match self {
            Self::Neg => "-",
            Self::Abs => "abs",
            Self::Sin => "sin",
            Self::Cos => "cos",
            Self::Sqrt => "sqrt",
            Self::Sign => "sign",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            Self::Add => '+',
            Self::Sub => '-',
            Self::Mul => '*',
            Self::Div => '/',
            Self::Pow => '^',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            Self::Add | Self::Sub => 1,
            Self::Mul | Self::Div => 2,
            Self::Pow => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Param(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
    #[error("domain error in `{0}`")]
    DomainError(String),
    #[error("unbound name `{0}`")]
    Unbound(String),
    #[error("state has {got} components, expression needs x{needed}")]
    StateTooShort { needed: usize, got: usize },
}

/// `sign` with `sign(0) = 0`.
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        v * 0.0
    }
}

pub(crate) fn apply_unary(op: UnaryOp, v: f64) -> Option<f64> {
    Some(match op {
        UnaryOp::Neg => -v,
        UnaryOp::Abs => v.abs(),
        UnaryOp::Sin => v.sin(),
        UnaryOp::Cos => v.cos(),
        UnaryOp::Sqrt => {
            if v < 0.0 {
                return None;
            }
            v.sqrt()
        }
        UnaryOp::Sign => sign(v),
    })
}

pub(crate) enum BinaryFault {
    DivisionByZero,
    Domain,
}

pub(crate) fn apply_binary(op: BinaryOp, a: f64, b: f64) -> Result<f64, BinaryFault> {
    match op {
        BinaryOp::Add => Ok(a + b),
        BinaryOp::Sub => Ok(a - b),
        BinaryOp::Mul => Ok(a * b),
        BinaryOp::Div => {
            if b == 0.0 {
                Err(BinaryFault::DivisionByZero)
            } else {
                Ok(a / b)
            }
        }
        BinaryOp::Pow => {
            if a == 0.0 && b < 0.0 {
                return Err(BinaryFault::DivisionByZero);
            }
            let r = a.powf(b);
            if r.is_nan() && !a.is_nan() && !b.is_nan() {
                Err(BinaryFault::Domain)
            } else {
                Ok(r)
            }
        }
    }
}

impl Expr {
    pub fn constant(v: f64) -> Self {
        Self::Const(v)
    }

    pub fn unary(op: UnaryOp, e: Expr) -> Self {
        Self::Unary(op, Box::new(e))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Self {
        Self::Binary(op, Box::new(a), Box::new(b))
    }

    /// Evaluates the expression in IEEE-754 double precision.
    pub fn eval(&self, t: f64, x: &[f64], eps: f64, params: &BTreeMap<String, f64>) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(Var::T) => Ok(t),
            Expr::Var(Var::Eps) => Ok(eps),
            Expr::Var(Var::X(i)) => x.get(*i).copied().ok_or(EvalError::StateTooShort {
                needed: i + 1,
                got: x.len(),
            }),
            Expr::Param(name) => params
                .get(name)
                .copied()
                .ok_or_else(|| EvalError::Unbound(name.clone())),
            Expr::Unary(op, e) => {
                let v = e.eval(t, x, eps, params)?;
                apply_unary(*op, v).ok_or_else(|| EvalError::DomainError(self.to_string()))
            }
            Expr::Binary(op, a, b) => {
                let va = a.eval(t, x, eps, params)?;
                let vb = b.eval(t, x, eps, params)?;
                apply_binary(*op, va, vb).map_err(|f| match f {
                    BinaryFault::DivisionByZero => EvalError::DivisionByZero(self.to_string()),
                    BinaryFault::Domain => EvalError::DomainError(self.to_string()),
                })
            }
        }
    }

    /// Names of all parameters referenced by the expression.
    pub fn params(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Param(p) = e {
                if !out.contains(p) {
                    out.push(p.clone());
                }
            }
        });
        out
    }

    /// Largest state index referenced (one-based), or 0.
    pub fn max_state_index(&self) -> usize {
        let mut m = 0;
        self.visit(&mut |e| {
            if let Expr::Var(Var::X(i)) = e {
                m = m.max(i + 1);
            }
        });
        m
    }

    pub fn depth(&self) -> usize {
        match self {
            Expr::Unary(_, e) => 1 + e.depth(),
            Expr::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
            _ => 1,
        }
    }

    fn visit(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Unary(_, e) => e.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            _ => {}
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, ..) => op.precedence(),
            Expr::Unary(UnaryOp::Neg, _) => 3,
            Expr::Const(c) if c.is_sign_negative() => 3,
            _ => 5,
        }
    }

    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, parens: bool) -> fmt::Result {
        if parens {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

/// Minimal-parenthesis printing; the output reparses to the same tree for
/// every tree the parser can produce.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Var(Var::T) => f.write_str("t"),
            Expr::Var(Var::Eps) => f.write_str("eps"),
            Expr::Var(Var::X(i)) => write!(f, "x{}", i + 1),
            Expr::Param(p) => f.write_str(p),
            Expr::Unary(UnaryOp::Neg, e) => {
                f.write_str("-")?;
                e.fmt_child(f, e.precedence() < 3)
            }
            Expr::Unary(op, e) => write!(f, "{}({e})", op.function_name()),
            Expr::Binary(op, a, b) => {
                let p = op.precedence();
                if *op == BinaryOp::Pow {
                    a.fmt_child(f, a.precedence() <= p)?;
                    write!(f, "{}", op.symbol())?;
                    b.fmt_child(f, b.precedence() < 3)
                } else {
                    a.fmt_child(f, a.precedence() < p)?;
                    write!(f, "{}", op.symbol())?;
                    b.fmt_child(f, b.precedence() <= p)
                }
            }
        }
    }
}

/// Serialized as its source text.
impl Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse(&s, &Scope::permissive()).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn ev(src: &str, t: f64, x: &[f64]) -> Result<f64, EvalError> {
        let e = parse(src, &Scope::permissive()).unwrap();
        e.eval(t, x, 0.0, &BTreeMap::new())
    }

    #[test]
    fn abs_minus_one() {
        assert_eq!(ev("abs(x1)-1", 0.0, &[-2.0]).unwrap(), 1.0);
    }

    #[test]
    fn sin_at_half_pi() {
        assert!((ev("sin(t)", PI / 2.0, &[]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn division_by_zero_reports_subexpression() {
        let err = ev("1+x1/x2", 0.0, &[1.0, 0.0]).unwrap_err();
        assert_eq!(err, EvalError::DivisionByZero("x1/x2".into()));
    }

    #[test]
    fn sqrt_of_negative_is_domain_error() {
        assert!(matches!(ev("sqrt(x1)", 0.0, &[-1.0]), Err(EvalError::DomainError(_))));
        assert!(matches!(ev("(0-2)^0.5", 0.0, &[]), Err(EvalError::DomainError(_))));
    }

    #[test]
    fn abs_and_sign_exact_at_zero() {
        assert_eq!(ev("abs(x1)", 0.0, &[0.0]).unwrap(), 0.0);
        assert_eq!(ev("sign(x1)", 0.0, &[0.0]).unwrap(), 0.0);
        assert_eq!(ev("sign(x1)", 0.0, &[-0.0]).unwrap(), 0.0);
        assert_eq!(ev("sign(x1)", 0.0, &[-3.0]).unwrap(), -1.0);
    }

    #[test]
    fn power_is_right_associative() {
        assert_eq!(ev("2^3^2", 0.0, &[]).unwrap(), 512.0);
        assert_eq!(ev("-2^2", 0.0, &[]).unwrap(), -4.0);
    }

    #[test]
    fn params_are_late_bound() {
        let e = parse("lam*sin(t)", &Scope::new(Some(1), ["lam"])).unwrap();
        let mut p = BTreeMap::new();
        p.insert("lam".to_string(), 2.0);
        assert_eq!(e.eval(PI / 2.0, &[0.0], 0.0, &p).unwrap(), 2.0);
        p.insert("lam".to_string(), 3.0);
        assert_eq!(e.eval(PI / 2.0, &[0.0], 0.0, &p).unwrap(), 3.0);
        assert_eq!(e.params(), vec!["lam".to_string()]);
    }

    #[test]
    fn display_round_trips_simple_cases() {
        for src in [
            "abs(x1)-1",
            "-(x1+x2)*3.5",
            "(2^3)^2",
            "2^-x1",
            "a-(b-c)",
            "a/(b*c)",
            "-x1^2",
            "(-x1)^2",
            "1e-7*x1",
        ] {
            let e = parse(src, &Scope::permissive()).unwrap();
            let back = parse(&e.to_string(), &Scope::permissive()).unwrap();
            assert_eq!(e, back, "{src} -> {e}");
        }
    }
}
