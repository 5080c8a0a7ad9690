use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::state_index;
use super::{apply_binary, apply_unary, parse, BinaryOp, EvalError, Expr, ParseError, Scope, UnaryOp, Var};
use crate::field::PeriodicField;

/// Text description of a field `g(t, x, eps)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub dim: usize,
    pub period: f64,
    pub components: Vec<String>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FieldSpecError {
    #[error("field has dim {dim} but {components} components")]
    DimensionMismatch { dim: usize, components: usize },
    #[error("period must be positive and finite, got {0}")]
    InvalidPeriod(f64),
    #[error("`{0}` is reserved and cannot be a parameter name")]
    ReservedParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("component {index}: {source}")]
    Parse {
        index: usize,
        #[source]
        source: ParseError,
    },
}

// Params resolved to slots for the evaluation hot path.
#[derive(Debug, Clone)]
enum Code {
    Const(f64),
    T,
    Eps,
    X(usize),
    Param(usize),
    Unary(UnaryOp, Box<Code>),
    Binary(BinaryOp, Box<Code>, Box<Code>),
}

impl Code {
    fn compile(e: &Expr, names: &[String]) -> Code {
        match e {
            Expr::Const(c) => Code::Const(*c),
            Expr::Var(Var::T) => Code::T,
            Expr::Var(Var::Eps) => Code::Eps,
            Expr::Var(Var::X(i)) => Code::X(*i),
            Expr::Param(p) => Code::Param(
                names
                    .iter()
                    .position(|n| n == p)
                    .expect("parameters validated before compiling"),
            ),
            Expr::Unary(op, a) => Code::Unary(*op, Box::new(Code::compile(a, names))),
            Expr::Binary(op, a, b) => Code::Binary(
                *op,
                Box::new(Code::compile(a, names)),
                Box::new(Code::compile(b, names)),
            ),
        }
    }

    // None signals an evaluation fault; the caller re-runs the tree evaluator
    // to produce a descriptive error.
    fn eval(&self, t: f64, x: &[f64], eps: f64, p: &[f64]) -> Option<f64> {
        match self {
            Code::Const(c) => Some(*c),
            Code::T => Some(t),
            Code::Eps => Some(eps),
            Code::X(i) => x.get(*i).copied(),
            Code::Param(i) => Some(p[*i]),
            Code::Unary(op, a) => apply_unary(*op, a.eval(t, x, eps, p)?),
            Code::Binary(op, a, b) => {
                let va = a.eval(t, x, eps, p)?;
                let vb = b.eval(t, x, eps, p)?;
                apply_binary(*op, va, vb).ok()
            }
        }
    }
}

/// A [`PeriodicField`] built from a [`FieldSpec`].
#[derive(Debug, Clone)]
pub struct DslField {
    spec: FieldSpec,
    exprs: Vec<Expr>,
    code: Vec<Code>,
    names: Vec<String>,
    values: Vec<f64>,
    switches: Vec<Code>,
    lipschitz: Option<f64>,
}

impl DslField {
    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn exprs(&self) -> &[Expr] {
        &self.exprs
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.spec.params
    }

    /// Rebinds a declared parameter without reparsing.
    pub fn set_param(&mut self, name: &str, value: f64) -> Result<(), FieldSpecError> {
        let slot = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| FieldSpecError::UnknownParam(name.to_string()))?;
        self.values[slot] = value;
        self.spec.params.insert(name.to_string(), value);
        Ok(())
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Result<Self, FieldSpecError> {
        self.set_param(name, value)?;
        Ok(self)
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }
}

impl PeriodicField for DslField {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn period(&self) -> f64 {
        self.spec.period
    }

    fn eval(&self, t: f64, x: &[f64], eps: f64, out: &mut [f64]) -> Result<(), EvalError> {
        for (i, c) in self.code.iter().enumerate() {
            match c.eval(t, x, eps, &self.values) {
                Some(v) => out[i] = v,
                None => {
                    return Err(self.exprs[i]
                        .eval(t, x, eps, &self.spec.params)
                        .err()
                        .unwrap_or_else(|| EvalError::DomainError(self.exprs[i].to_string())))
                }
            }
        }
        Ok(())
    }

    fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz
    }

    fn name(&self) -> &str {
        "dsl"
    }

    fn switch_count(&self) -> usize {
        self.switches.len()
    }

    fn switching(&self, t: f64, x: &[f64], eps: f64, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.switches) {
            *o = c.eval(t, x, eps, &self.values).unwrap_or(f64::NAN);
        }
    }
}

// Distinct arguments of `abs` and `sign`, in first-seen order.
fn kink_arguments<'a>(e: &'a Expr, seen: &mut Vec<String>, out: &mut Vec<&'a Expr>) {
    match e {
        Expr::Unary(op, a) => {
            if matches!(op, UnaryOp::Abs | UnaryOp::Sign) {
                let key = a.to_string();
                if !seen.contains(&key) {
                    seen.push(key);
                    out.push(a);
                }
            }
            kink_arguments(a, seen, out);
        }
        Expr::Binary(_, a, b) => {
            kink_arguments(a, seen, out);
            kink_arguments(b, seen, out);
        }
        _ => {}
    }
}

/// Parses and validates a [`FieldSpec`].
pub fn field_from_spec(spec: &FieldSpec) -> Result<DslField, FieldSpecError> {
    if spec.components.len() != spec.dim || spec.dim == 0 {
        return Err(FieldSpecError::DimensionMismatch {
            dim: spec.dim,
            components: spec.components.len(),
        });
    }
    if !(spec.period > 0.0 && spec.period.is_finite()) {
        return Err(FieldSpecError::InvalidPeriod(spec.period));
    }
    for name in spec.params.keys() {
        let reserved =
            name == "t" || name == "eps" || state_index(name).is_some() || UnaryOp::from_function_name(name).is_some();
        if reserved {
            return Err(FieldSpecError::ReservedParam(name.clone()));
        }
    }
    let scope = Scope::new(Some(spec.dim), spec.params.keys().cloned());
    let exprs = spec
        .components
        .iter()
        .enumerate()
        .map(|(index, src)| parse(src, &scope).map_err(|source| FieldSpecError::Parse { index, source }))
        .collect::<Result<Vec<_>, _>>()?;
    let names: Vec<String> = spec.params.keys().cloned().collect();
    let values: Vec<f64> = spec.params.values().copied().collect();
    let code = exprs.iter().map(|e| Code::compile(e, &names)).collect();
    let (mut seen, mut kinks) = (Vec::new(), Vec::new());
    for e in &exprs {
        kink_arguments(e, &mut seen, &mut kinks);
    }
    let switches = kinks.into_iter().map(|e| Code::compile(e, &names)).collect();
    Ok(DslField {
        spec: spec.clone(),
        exprs,
        code,
        names,
        values,
        switches,
        lipschitz: None,
    })
}
