//! T-periodic vector fields in standard form `x' = eps * g(t, x, eps)`.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::expr::EvalError;

/// A right-hand side `g(t, x, eps)` that is `period`-periodic in `t`.
///
/// The small parameter multiplies the whole field when integrating; `eval`
/// itself returns the unscaled `g`.
pub trait PeriodicField: Send + Sync {
    fn dim(&self) -> usize;

    fn period(&self) -> f64;

    /// Writes `g(t, x, eps)` into `out` (length `dim`).
    fn eval(&self, t: f64, x: &[f64], eps: f64, out: &mut [f64]) -> Result<(), EvalError>;

    /// Optional known Lipschitz constant of `g` in `x`.
    fn lipschitz_hint(&self) -> Option<f64> {
        None
    }

    /// Short human-readable label used in reports.
    fn name(&self) -> &str {
        "field"
    }

    /// Number of switching functions reported by [`PeriodicField::switching`].
    fn switch_count(&self) -> usize {
        0
    }

    /// Values of functions whose zero sets carry the nonsmoothness of `g`
    /// (for instance the argument of an absolute value). Fixed-step
    /// integration splits steps where one of them changes sign.
    fn switching(&self, _t: f64, _x: &[f64], _eps: f64, _out: &mut [f64]) {}
}

impl<F: PeriodicField + ?Sized> PeriodicField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn period(&self) -> f64 {
        (**self).period()
    }
    fn eval(&self, t: f64, x: &[f64], eps: f64, out: &mut [f64]) -> Result<(), EvalError> {
        (**self).eval(t, x, eps, out)
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        (**self).lipschitz_hint()
    }
    fn name(&self) -> &str {
        (**self).name()
    }
    fn switch_count(&self) -> usize {
        (**self).switch_count()
    }
    fn switching(&self, t: f64, x: &[f64], eps: f64, out: &mut [f64]) {
        (**self).switching(t, x, eps, out)
    }
}

impl<F: PeriodicField + ?Sized> PeriodicField for Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn period(&self) -> f64 {
        (**self).period()
    }
    fn eval(&self, t: f64, x: &[f64], eps: f64, out: &mut [f64]) -> Result<(), EvalError> {
        (**self).eval(t, x, eps, out)
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        (**self).lipschitz_hint()
    }
    fn name(&self) -> &str {
        (**self).name()
    }
    fn switch_count(&self) -> usize {
        (**self).switch_count()
    }
    fn switching(&self, t: f64, x: &[f64], eps: f64, out: &mut [f64]) {
        (**self).switching(t, x, eps, out)
    }
}

impl<F: PeriodicField + ?Sized> PeriodicField for Box<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn period(&self) -> f64 {
        (**self).period()
    }
    fn eval(&self, t: f64, x: &[f64], eps: f64, out: &mut [f64]) -> Result<(), EvalError> {
        (**self).eval(t, x, eps, out)
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        (**self).lipschitz_hint()
    }
    fn name(&self) -> &str {
        (**self).name()
    }
    fn switch_count(&self) -> usize {
        (**self).switch_count()
    }
    fn switching(&self, t: f64, x: &[f64], eps: f64, out: &mut [f64]) {
        (**self).switching(t, x, eps, out)
    }
}

/// Wraps an infallible closure as a [`PeriodicField`].
pub struct FnField<F> {
    dim: usize,
    period: f64,
    lipschitz: Option<f64>,
    name: String,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(f64, &[f64], f64, &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, period: f64, f: F) -> Self {
        Self {
            dim,
            period,
            lipschitz: None,
            name: "closure".to_string(),
            f,
        }
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl<F> PeriodicField for FnField<F>
where
    F: Fn(f64, &[f64], f64, &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn period(&self) -> f64 {
        self.period
    }
    fn eval(&self, t: f64, x: &[f64], eps: f64, out: &mut [f64]) -> Result<(), EvalError> {
        (self.f)(t, x, eps, out);
        Ok(())
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        self.lipschitz
    }
    fn name(&self) -> &str {
        &self.name
    }
}

/// Scalar test system `g(t, x, eps) = -x + cos t` with period 2π.
///
/// Its averaged function is `-2πx`, and for every eps > 0 the unique
/// 2π-periodic solution starts at `eps²/(1+eps²)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearTestField;

impl PeriodicField for LinearTestField {
    fn dim(&self) -> usize {
        1
    }
    fn period(&self) -> f64 {
        2.0 * PI
    }
    fn eval(&self, t: f64, x: &[f64], _eps: f64, out: &mut [f64]) -> Result<(), EvalError> {
        out[0] = -x[0] + t.cos();
        Ok(())
    }
    fn lipschitz_hint(&self) -> Option<f64> {
        Some(1.0)
    }
    fn name(&self) -> &str {
        "linear"
    }
}

/// Closed-form data for [`LinearTestField`].
pub mod linear_oracle {
    use std::f64::consts::PI;

    /// Initial value of the periodic solution.
    pub fn periodic_start(eps: f64) -> f64 {
        eps * eps / (1.0 + eps * eps)
    }

    /// Periodic solution `eps (eps cos t + sin t) / (1 + eps²)`.
    pub fn periodic_solution(eps: f64, t: f64) -> f64 {
        eps * (eps * t.cos() + t.sin()) / (1.0 + eps * eps)
    }

    /// Exact solution from `x(0) = v`.
    pub fn solution(eps: f64, v: f64, t: f64) -> f64 {
        periodic_solution(eps, t) + (v - periodic_start(eps)) * (-eps * t).exp()
    }

    pub fn multiplier(eps: f64) -> f64 {
        (-2.0 * PI * eps).exp()
    }
}
