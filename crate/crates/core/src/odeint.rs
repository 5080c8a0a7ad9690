//! Time integration of `x' = eps * g(t, x, eps)` and its period map.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::EvalError;
use crate::field::PeriodicField;

/// States with a larger Euclidean norm are treated as blow-up.
pub const BLOWUP_NORM: f64 = 1e8;

/// Default number of fixed RK4 steps per period.
pub const DEFAULT_STEPS_PER_PERIOD: usize = 2000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error("step limit of {steps} exceeded at t = {t}")]
    StepLimitExceeded { t: f64, steps: usize },
    #[error("state became non-finite or exceeded the blow-up norm at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("invalid time interval [{t0}, {t1}]")]
    InvalidInterval { t0: f64, t1: f64 },
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("eps must be positive, got {0}")]
    NonPositiveEps(f64),
    #[error(transparent)]
    Field(#[from] EvalError),
}

/// A general first-order system `x' = f(t, x)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), EvalError>;

    /// Number of switching functions; see [`PeriodicField::switching`].
    fn switch_count(&self) -> usize {
        0
    }

    fn switching(&self, _t: f64, _x: &[f64], _out: &mut [f64]) {}
}

/// The standard-form system `x' = eps * g(t, x, eps)`.
pub struct Scaled<'a, F: ?Sized> {
    pub field: &'a F,
    pub eps: f64,
}

impl<F: PeriodicField + ?Sized> OdeSystem for Scaled<'_, F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        self.field.eval(t, x, self.eps, out)?;
        for v in out.iter_mut() {
            *v *= self.eps;
        }
        Ok(())
    }

    fn switch_count(&self) -> usize {
        self.field.switch_count()
    }

    fn switching(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.field.switching(t, x, self.eps, out)
    }
}

/// Adapts a closure into an [`OdeSystem`].
pub struct FnSystem<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> FnSystem<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64])> OdeSystem for FnSystem<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        (self.f)(t, x, out);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    /// Classical fourth-order Runge-Kutta with fixed step `h`. Steps are
    /// split where a switching function of the system changes sign.
    Rk4 { h: f64 },
    /// Dormand-Prince 5(4) with step-size control.
    Rk45 { abs_tol: f64, rel_tol: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    pub max_steps: usize,
}

impl IntegratorConfig {
    pub const DEFAULT_MAX_STEPS: usize = 50_000_000;

    pub fn rk4(h: f64) -> Self {
        Self {
            method: Method::Rk4 { h },
            max_steps: Self::DEFAULT_MAX_STEPS,
        }
    }

    /// Fixed step `period / steps`.
    pub fn rk4_per_period(period: f64, steps: usize) -> Self {
        Self::rk4(period / steps as f64)
    }

    pub fn rk45(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            method: Method::Rk45 { abs_tol, rel_tol },
            max_steps: Self::DEFAULT_MAX_STEPS,
        }
    }

    /// RK4 with `T/2000`.
    pub fn for_field<F: PeriodicField + ?Sized>(f: &F) -> Self {
        Self::rk4_per_period(f.period(), DEFAULT_STEPS_PER_PERIOD)
    }

    /// Adaptive default: `abs = rel = 1e-10`.
    pub fn adaptive() -> Self {
        Self::rk45(1e-10, 1e-10)
    }

    /// Same method at twice the resolution (half the step, or tolerances
    /// reduced by 2⁵ so the adaptive step roughly halves).
    pub fn refined(&self) -> Self {
        let method = match self.method {
            Method::Rk4 { h } => Method::Rk4 { h: 0.5 * h },
            Method::Rk45 { abs_tol, rel_tol } => Method::Rk45 {
                abs_tol: abs_tol / 32.0,
                rel_tol: rel_tol / 32.0,
            },
        };
        Self {
            method,
            max_steps: self.max_steps.saturating_mul(2),
        }
    }

    pub fn validate(&self) -> Result<(), IntegrateError> {
        let ok = match self.method {
            Method::Rk4 { h } => h > 0.0 && h.is_finite(),
            Method::Rk45 { abs_tol, rel_tol } => {
                abs_tol > 0.0 && rel_tol > 0.0 && abs_tol.is_finite() && rel_tol.is_finite()
            }
        };
        if !ok {
            return Err(IntegrateError::InvalidConfig(format!("{:?}", self.method)));
        }
        if self.max_steps == 0 {
            return Err(IntegrateError::InvalidConfig("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Stored solution samples, one per accepted step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory always holds the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn check_state(t: f64, x: &[f64]) -> Result<(), IntegrateError> {
    let n2: f64 = x.iter().map(|v| v * v).sum();
    if !n2.is_finite() || n2 > BLOWUP_NORM * BLOWUP_NORM {
        return Err(IntegrateError::NonFiniteState { t });
    }
    Ok(())
}

struct Work {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
}

impl Work {
    fn new(n: usize) -> Self {
        Self {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        }
    }
}

fn rk4_step<S: OdeSystem + ?Sized>(sys: &S, t: f64, h: f64, x: &mut [f64], w: &mut Work) -> Result<(), EvalError> {
    let n = x.len();
    let [k1, k2, k3, k4, ..] = &mut w.k;
    let tmp = &mut w.tmp;
    sys.rhs(t, x, k1)?;
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k1[i];
    }
    sys.rhs(t + 0.5 * h, tmp, k2)?;
    for i in 0..n {
        tmp[i] = x[i] + 0.5 * h * k2[i];
    }
    sys.rhs(t + 0.5 * h, tmp, k3)?;
    for i in 0..n {
        tmp[i] = x[i] + h * k3[i];
    }
    sys.rhs(t + h, tmp, k4)?;
    for i in 0..n {
        x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

const MAX_SPLITS: usize = 8;
// A start value this small relative to the end value means the step begins
// on the switching surface (typically right after a split).
const SWITCH_GUARD: f64 = 1e-9;

struct SwitchWork {
    s0: Vec<f64>,
    s1: Vec<f64>,
    trial: Vec<f64>,
}

impl SwitchWork {
    fn new(n: usize, m: usize) -> Self {
        Self {
            s0: vec![0.0; m],
            s1: vec![0.0; m],
            trial: vec![0.0; n],
        }
    }
}

/// RK4 step that is split where a switching function changes sign, so every
/// sub-step integrates a smooth piece of the field and fourth order is kept.
fn rk4_split_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    h: f64,
    x: &mut [f64],
    w: &mut Work,
    sw: &mut SwitchWork,
) -> Result<(), EvalError> {
    let m = sys.switch_count();
    if m == 0 {
        return rk4_step(sys, t, h, x, w);
    }
    let t_end = t + h;
    let mut t_cur = t;
    for _ in 0..MAX_SPLITS {
        let rem = t_end - t_cur;
        if rem <= 0.0 {
            return Ok(());
        }
        sys.switching(t_cur, x, &mut sw.s0);
        sw.trial.copy_from_slice(x);
        rk4_step(sys, t_cur, rem, &mut sw.trial, w)?;
        sys.switching(t_end, &sw.trial, &mut sw.s1);
        let mut first: Option<f64> = None;
        for j in 0..m {
            let (a, b) = (sw.s0[j], sw.s1[j]);
            if !(a * b < 0.0) || a.abs() <= SWITCH_GUARD * (a.abs() + b.abs()) {
                continue;
            }
            let tau = locate_switch(sys, j, t_cur, rem, x, (a, b), w)?;
            if first.is_none_or(|f| tau < f) {
                first = Some(tau);
            }
        }
        match first {
            Some(tau) if tau > 0.0 && tau < rem => {
                rk4_step(sys, t_cur, tau, x, w)?;
                t_cur += tau;
            }
            _ => {
                x.copy_from_slice(&sw.trial);
                return Ok(());
            }
        }
    }
    let rem = t_end - t_cur;
    if rem > 0.0 {
        rk4_step(sys, t_cur, rem, x, w)?;
    }
    Ok(())
}

/// Illinois false position for the sub-step length at which switching
/// function `j` vanishes along a single RK4 step from `(t, x)`.
fn locate_switch<S: OdeSystem + ?Sized>(
    sys: &S,
    j: usize,
    t: f64,
    rem: f64,
    x: &[f64],
    (fa, fb): (f64, f64),
    w: &mut Work,
) -> Result<f64, EvalError> {
    let m = sys.switch_count();
    let mut y = vec![0.0; x.len()];
    let mut s = vec![0.0; m];
    let (mut lo, mut hi, mut flo, mut fhi) = (0.0, rem, fa, fb);
    let mut side = 0i8;
    for _ in 0..60 {
        let mid = (lo * fhi - hi * flo) / (fhi - flo);
        let mid = if mid > lo && mid < hi { mid } else { 0.5 * (lo + hi) };
        y.copy_from_slice(x);
        rk4_step(sys, t, mid, &mut y, w)?;
        sys.switching(t + mid, &y, &mut s);
        let fm = s[j];
        if fm == 0.0 || !fm.is_finite() {
            return Ok(mid);
        }
        if fm * flo < 0.0 {
            hi = mid;
            fhi = fm;
            if side == -1 {
                flo *= 0.5;
            }
            side = -1;
        } else {
            lo = mid;
            flo = fm;
            if side == 1 {
                fhi *= 0.5;
            }
            side = 1;
        }
        if hi - lo <= 4.0 * f64::EPSILON * (t.abs() + rem) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One Dormand-Prince trial step; returns the scaled error norm and leaves
/// the 5th-order candidate in `xnew`.
fn dopri_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    h: f64,
    x: &[f64],
    xnew: &mut [f64],
    tols: (f64, f64),
    w: &mut Work,
) -> Result<f64, EvalError> {
    let n = x.len();
    sys.rhs(t, x, &mut w.k[0])?;
    for s in 1..7 {
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..s {
                acc += h * A[s][j] * w.k[j][i];
            }
            w.tmp[i] = acc;
        }
        sys.rhs(t + C[s] * h, &w.tmp, &mut w.k[s])?;
    }
    // stage 7 evaluates at the 5th-order solution
    xnew.copy_from_slice(&w.tmp);
    let (abs_tol, rel_tol) = tols;
    let mut err2 = 0.0;
    for i in 0..n {
        let e: f64 = h * (0..7).map(|s| E[s] * w.k[s][i]).sum::<f64>();
        let sc = abs_tol + rel_tol * x[i].abs().max(xnew[i].abs());
        err2 += (e / sc) * (e / sc);
    }
    Ok((err2 / n.max(1) as f64).sqrt())
}

/// Drives a stepping method, calling `sink` after every accepted step.
fn drive<S, K>(
    sys: &S,
    t0: f64,
    t1: f64,
    x0: &[f64],
    cfg: &IntegratorConfig,
    mut sink: K,
) -> Result<Vec<f64>, IntegrateError>
where
    S: OdeSystem + ?Sized,
    K: FnMut(f64, &[f64]),
{
    cfg.validate()?;
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(IntegrateError::InvalidInterval { t0, t1 });
    }
    check_state(t0, x0)?;
    let n = sys.dim();
    if x0.len() != n {
        return Err(IntegrateError::InvalidConfig(format!(
            "initial state has {} components, system has {n}",
            x0.len()
        )));
    }
    let mut w = Work::new(n);
    let mut sw = SwitchWork::new(n, sys.switch_count());
    let mut x = x0.to_vec();
    let span = t1 - t0;
    match cfg.method {
        Method::Rk4 { h } => {
            let steps = ((span / h) - 1e-9).ceil().max(1.0) as usize;
            if steps > cfg.max_steps {
                return Err(IntegrateError::StepLimitExceeded {
                    t: t0,
                    steps: cfg.max_steps,
                });
            }
            let h = span / steps as f64;
            for i in 0..steps {
                let t = t0 + i as f64 * h;
                rk4_split_step(sys, t, h, &mut x, &mut w, &mut sw)?;
                let tn = if i + 1 == steps { t1 } else { t0 + (i + 1) as f64 * h };
                check_state(tn, &x)?;
                sink(tn, &x);
            }
        }
        Method::Rk45 { abs_tol, rel_tol } => {
            let mut t = t0;
            let mut h = initial_step(sys, t0, &x, abs_tol, rel_tol, span, &mut w)?;
            let mut xnew = vec![0.0; n];
            let mut steps = 0usize;
            while t < t1 {
                if steps >= cfg.max_steps {
                    return Err(IntegrateError::StepLimitExceeded { t, steps });
                }
                steps += 1;
                let last = t + h >= t1 - 1e-14 * span.max(1.0);
                let hh = if last { t1 - t } else { h };
                let err = dopri_step(sys, t, hh, &x, &mut xnew, (abs_tol, rel_tol), &mut w)?;
                if !err.is_finite() {
                    h *= 0.2;
                    if h < 1e-14 * span {
                        return Err(IntegrateError::NonFiniteState { t });
                    }
                    continue;
                }
                if err <= 1.0 {
                    t = if last { t1 } else { t + hh };
                    x.copy_from_slice(&xnew);
                    check_state(t, &x)?;
                    sink(t, &x);
                }
                let factor = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                h = hh * factor;
                if h < 1e-14 * span {
                    return Err(IntegrateError::StepLimitExceeded { t, steps });
                }
            }
        }
    }
    Ok(x)
}

fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    x0: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    span: f64,
    w: &mut Work,
) -> Result<f64, EvalError> {
    let n = x0.len();
    sys.rhs(t0, x0, &mut w.k[0])?;
    let sc: Vec<f64> = x0.iter().map(|v| abs_tol + rel_tol * v.abs()).collect();
    let d0 = (x0.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n as f64).sqrt();
    let d1 = (w.k[0].iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / n as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    Ok(h0.min(span).max(1e-12 * span))
}

/// Integrates a general system, storing every accepted step.
pub fn integrate_system<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    t1: f64,
    x0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Trajectory, IntegrateError> {
    let mut times = vec![t0];
    let mut states = vec![x0.to_vec()];
    drive(sys, t0, t1, x0, cfg, |t, x| {
        times.push(t);
        states.push(x.to_vec());
    })?;
    Ok(Trajectory { times, states })
}

/// Final state only.
pub fn flow_system<S: OdeSystem + ?Sized>(
    sys: &S,
    t0: f64,
    t1: f64,
    x0: &[f64],
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>, IntegrateError> {
    drive(sys, t0, t1, x0, cfg, |_, _| {})
}

/// Same as [`flow_system`] but hands every accepted step to `sink`.
pub fn flow_system_with<S, K>(
    sys: &S,
    t0: f64,
    t1: f64,
    x0: &[f64],
    cfg: &IntegratorConfig,
    sink: K,
) -> Result<Vec<f64>, IntegrateError>
where
    S: OdeSystem + ?Sized,
    K: FnMut(f64, &[f64]),
{
    drive(sys, t0, t1, x0, cfg, sink)
}

/// Integrates `x' = eps g(t, x, eps)` on `[t0, t1]`.
pub fn integrate<F: PeriodicField + ?Sized>(
    f: &F,
    t0: f64,
    t1: f64,
    x0: &[f64],
    eps: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, IntegrateError> {
    integrate_system(&Scaled { field: f, eps }, t0, t1, x0, cfg)
}

/// `v ↦ x(T, v, eps)`.
pub fn poincare_map<F: PeriodicField + ?Sized>(
    f: &F,
    v: &[f64],
    eps: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>, IntegrateError> {
    flow_system(&Scaled { field: f, eps }, 0.0, f.period(), v, cfg)
}

/// `(x(T, v, eps) - v) / eps`, the period-integral of `g` along the
/// numerical trajectory.
pub fn g_eps<F: PeriodicField + ?Sized>(
    f: &F,
    v: &[f64],
    eps: f64,
    cfg: &IntegratorConfig,
) -> Result<Vec<f64>, IntegrateError> {
    if !(eps > 0.0) {
        return Err(IntegrateError::NonPositiveEps(eps));
    }
    let p = poincare_map(f, v, eps, cfg)?;
    Ok(p.iter().zip(v).map(|(a, b)| (a - b) / eps).collect())
}
