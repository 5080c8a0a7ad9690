//! Forced van der Pol oscillators in rotating coordinates, their resonance
//! curves and the sign conditions for stability of the averaged system.
//!
//! The oscillator `u'' + eps h(u) u' + (1 + a eps) u = eps lambda sin t` is
//! brought to standard form with `u = M sin t + N cos t`,
//! `u' = M cos t - N sin t`, which gives `M' = eps F cos t`,
//! `N' = -eps F sin t` with `F = -h(u) u' - a u + lambda sin t`. Here
//! `h(u) = |u| - 1` (nonsmooth) or `u² - 1` (classical). `F` carries no
//! further dependence on `eps`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::averaging::{averaged_function, averaged_jacobian, default_fd_step, find_root_with, RootOptions};
use crate::certify::degeneracy_band;
use crate::expr::{EvalError, FieldSpec};
use crate::field::PeriodicField;
use crate::linalg::{eigenvalues, norm2};
use crate::odeint::{flow_system_with, IntegrateError, IntegratorConfig, OdeSystem};

/// Inequality values within this band of zero are flagged degenerate.
pub const INEQUALITY_BAND: f64 = 1e-9;
/// A recovered `(M, N)` root must reproduce the amplitude to this accuracy.
pub const AMPLITUDE_MATCH: f64 = 1e-6;
const SCAN_CELLS: usize = 4000;
const PHASE_SCAN: usize = 72;

fn phase(j: usize) -> f64 {
    2.0 * PI * j as f64 / PHASE_SCAN as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VdpModel {
    /// Damping `(|u| - 1) u'`.
    Nonsmooth,
    /// Damping `(u² - 1) u'`.
    Classical,
}

impl VdpModel {
    fn damping(self, u: f64) -> f64 {
        match self {
            VdpModel::Nonsmooth => u.abs() - 1.0,
            VdpModel::Classical => u * u - 1.0,
        }
    }

    /// Linear coefficient `c(A)` of the averaged system, so that the
    /// averaged field is `π (c M - a N, a M + c N - lambda)`.
    pub fn amplitude_coefficient(self, amplitude: f64) -> f64 {
        match self {
            VdpModel::Nonsmooth => 1.0 - 4.0 * amplitude / (3.0 * PI),
            VdpModel::Classical => 1.0 - amplitude * amplitude / 4.0,
        }
    }

    /// Amplitude of the unforced limit cycle.
    pub fn free_amplitude(self) -> f64 {
        match self {
            VdpModel::Nonsmooth => 3.0 * PI / 4.0,
            VdpModel::Classical => 2.0,
        }
    }

    fn scan_limit(self, a: f64, lambda: f64) -> f64 {
        self.free_amplitude() + lambda + a.abs() + 1.0
    }

    /// The two stability expressions at amplitude `r = √(M²+N²)`; the root
    /// is stable when the first is positive and the second negative.
    pub fn inequalities(self, a: f64, m: f64, n: f64) -> (f64, f64) {
        let r2 = m * m + n * n;
        let r = r2.sqrt();
        match self {
            VdpModel::Nonsmooth => (
                PI * PI * (1.0 + a * a) + 32.0 / 9.0 * r2 - 4.0 * PI * r,
                2.0 * (PI - 2.0 * r),
            ),
            VdpModel::Classical => (1.0 + a * a - r2 + 3.0 / 16.0 * r2 * r2, 2.0 - r2),
        }
    }
}

impl fmt::Display for VdpModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VdpModel::Nonsmooth => "nonsmooth",
            VdpModel::Classical => "classical",
        })
    }
}

impl FromStr for VdpModel {
    type Err = VdpError;
    fn from_str(s: &str) -> Result<Self, VdpError> {
        match s {
            "nonsmooth" => Ok(VdpModel::Nonsmooth),
            "classical" => Ok(VdpModel::Classical),
            other => Err(VdpError::InvalidArgument(format!(
                "unknown model {other:?} (expected nonsmooth or classical)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcingParams {
    /// Detuning.
    pub a: f64,
    /// Forcing amplitude.
    pub lambda: f64,
}

impl ForcingParams {
    pub fn new(a: f64, lambda: f64) -> Self {
        Self { a, lambda }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VdpError {
    #[error("no (M, N) root of the averaged system matches amplitude {amplitude} at a = {a}")]
    RootRecoveryFailed { a: f64, amplitude: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

/// The rotating-frame field `g(t, (M, N)) = (F cos t, -F sin t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VdpField {
    pub model: VdpModel,
    pub params: ForcingParams,
}

pub fn nonsmooth_vdp_field(p: ForcingParams) -> VdpField {
    VdpField {
        model: VdpModel::Nonsmooth,
        params: p,
    }
}

pub fn classical_vdp_field(p: ForcingParams) -> VdpField {
    VdpField {
        model: VdpModel::Classical,
        params: p,
    }
}

/// `(u, u')` from rotating coordinates.
pub fn from_rotating(t: f64, m: f64, n: f64) -> (f64, f64) {
    let (s, c) = (t.sin(), t.cos());
    (m * s + n * c, m * c - n * s)
}

/// Rotating coordinates `(M, N)` from `(u, u')`.
pub fn to_rotating(t: f64, u: f64, du: f64) -> (f64, f64) {
    let (s, c) = (t.sin(), t.cos());
    (u * s + du * c, u * c - du * s)
}

impl PeriodicField for VdpField {
    fn dim(&self) -> usize {
        2
    }

    fn period(&self) -> f64 {
        2.0 * PI
    }

    // Operation order mirrors `dsl_spec` so both evaluate bit-for-bit alike
    // up to the DSL's own evaluation order.
    fn eval(&self, t: f64, x: &[f64], _eps: f64, out: &mut [f64]) -> Result<(), EvalError> {
        let (s, c) = (t.sin(), t.cos());
        let u = x[0] * s + x[1] * c;
        let du = x[0] * c - x[1] * s;
        let f = -(self.model.damping(u)) * du - self.params.a * u + self.params.lambda * s;
        out[0] = f * c;
        out[1] = -f * s;
        Ok(())
    }

    fn name(&self) -> &str {
        match self.model {
            VdpModel::Nonsmooth => "nonsmooth_vdp",
            VdpModel::Classical => "classical_vdp",
        }
    }

    fn switch_count(&self) -> usize {
        usize::from(self.model == VdpModel::Nonsmooth)
    }

    fn switching(&self, t: f64, x: &[f64], _eps: f64, out: &mut [f64]) {
        if let Some(o) = out.first_mut() {
            *o = x[0] * t.sin() + x[1] * t.cos();
        }
    }
}

/// The same field written in the expression language.
pub fn dsl_spec(model: VdpModel, p: ForcingParams) -> FieldSpec {
    let u = "(x1 * sin(t) + x2 * cos(t))";
    let du = "(x1 * cos(t) - x2 * sin(t))";
    let damping = match model {
        VdpModel::Nonsmooth => format!("(abs({u}) - 1)"),
        VdpModel::Classical => format!("({u} * {u} - 1)"),
    };
    let force = format!("(-{damping} * {du} - a * {u} + lambda * sin(t))");
    FieldSpec {
        dim: 2,
        period: 2.0 * PI,
        components: vec![format!("{force} * cos(t)"), format!("-{force} * sin(t)")],
        params: BTreeMap::from([("a".to_string(), p.a), ("lambda".to_string(), p.lambda)]),
    }
}

/// The second-order oscillator as a first-order system in `(u, u')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePlane {
    pub model: VdpModel,
    pub params: ForcingParams,
    pub eps: f64,
}

impl OdeSystem for PhasePlane {
    fn dim(&self) -> usize {
        2
    }

    fn rhs(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let (u, du) = (x[0], x[1]);
        let f = -self.model.damping(u) * du - self.params.a * u + self.params.lambda * t.sin();
        out[0] = du;
        out[1] = -u + self.eps * f;
        Ok(())
    }

    fn switch_count(&self) -> usize {
        usize::from(self.model == VdpModel::Nonsmooth)
    }

    fn switching(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        if let Some(o) = out.first_mut() {
            *o = x[0];
        }
    }
}

/// Simulates the oscillator from `(u0, du0)` for `periods` forcing periods and
/// returns `max |u|` over the last period.
pub fn settled_amplitude(
    model: VdpModel,
    p: ForcingParams,
    eps: f64,
    start: [f64; 2],
    periods: usize,
    cfg: &IntegratorConfig,
) -> Result<f64, VdpError> {
    if periods == 0 {
        return Err(VdpError::InvalidArgument("periods must be positive".into()));
    }
    let sys = PhasePlane { model, params: p, eps };
    let t1 = 2.0 * PI * periods as f64;
    let t_last = t1 - 2.0 * PI;
    let mut peak = if periods == 1 { start[0].abs() } else { 0.0 };
    flow_system_with(&sys, 0.0, t1, &start, cfg, |t, x| {
        if t >= t_last {
            peak = peak.max(x[0].abs());
        }
    })?;
    Ok(peak)
}

/// `A √(a² + c(A)²)`, whose level set at `lambda` is the resonance curve.
pub fn response(model: VdpModel, a: f64, amplitude: f64) -> f64 {
    let c = model.amplitude_coefficient(amplitude);
    amplitude * (a * a + c * c).sqrt()
}

/// All amplitudes `A > 0` with `response(A) = lambda`, ascending.
///
/// Transversal roots come from a sign scan plus bisection; tangential ones
/// (such as the free cycle when `a = lambda = 0`) from a golden-section
/// search at local minima of `|response - lambda|`. The trivial root `A = 0`
/// for `lambda = 0` is not reported.
pub fn amplitude_roots(model: VdpModel, a: f64, lambda: f64) -> Vec<f64> {
    let k = |x: f64| response(model, a, x) - lambda;
    let hi = model.scan_limit(a, lambda);
    let grid: Vec<f64> = (0..=SCAN_CELLS).map(|i| hi * i as f64 / SCAN_CELLS as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&x| k(x)).collect();
    let mut roots = Vec::new();
    for i in 1..=SCAN_CELLS {
        if vals[i] == 0.0 {
            roots.push(grid[i]);
        } else if vals[i - 1] != 0.0 && vals[i - 1] * vals[i] < 0.0 {
            roots.push(bisect(&k, grid[i - 1], grid[i], vals[i - 1]));
        }
    }
    for i in 1..SCAN_CELLS {
        let (l, c, r) = (vals[i - 1], vals[i], vals[i + 1]);
        let same_sign = (l > 0.0 && c > 0.0 && r > 0.0) || (l < 0.0 && c < 0.0 && r < 0.0);
        if same_sign && c.abs() < l.abs() && c.abs() <= r.abs() {
            let x = golden_min(&|x| k(x).abs(), grid[i - 1], grid[i + 1]);
            if k(x).abs() <= 1e-12 * (1.0 + lambda) {
                roots.push(x);
            }
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|x, y| (*x - *y).abs() <= 1e-9);
    roots
}

fn bisect(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, mut flo: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if fm * flo < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            flo = fm;
        }
    }
    0.5 * (lo + hi)
}

fn golden_min(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo <= 2.0 * f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

/// One periodic response on the resonance curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResonancePoint {
    pub a: f64,
    pub lambda: f64,
    #[serde(rename = "A")]
    pub amplitude: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "N")]
    pub n: f64,
    /// Phase with `M = A sin phi`, `N = A cos phi`.
    pub phi: f64,
    pub ineq6: f64,
    pub ineq7: f64,
    /// Hurwitz verdict on the finite-difference Jacobian of the averaged field.
    pub hurwitz_numeric: bool,
    /// Largest real part of that Jacobian's spectrum.
    pub max_real_part: f64,
    /// `ineq6 > 0` and `ineq7 < 0`, outside the degenerate band.
    pub stable: bool,
    pub degenerate: bool,
}

impl ResonancePoint {
    /// Leading-order response `u(t) = M sin t + N cos t`.
    pub fn leading_term(&self, t: f64) -> f64 {
        from_rotating(t, self.m, self.n).0
    }

    pub fn params(&self) -> ForcingParams {
        ForcingParams::new(self.a, self.lambda)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResonanceCurve {
    pub points: Vec<ResonancePoint>,
    /// Amplitudes for which no matching `(M, N)` root was recovered.
    pub failures: Vec<VdpError>,
}

/// Recovers the `(M, N)` root of the averaged field with amplitude `A`.
///
/// Newton is started from eight phases at radius `A`; the first root whose
/// radius matches within [`AMPLITUDE_MATCH`] is rescaled onto radius `A`
/// exactly, keeping its phase. If none matches, Newton is retried from the
/// local minima of `‖g0‖` over a phase scan of the circle.
pub fn recover_point(
    model: VdpModel,
    p: ForcingParams,
    amplitude: f64,
    opts: &RootOptions,
) -> Result<ResonancePoint, VdpError> {
    let field = VdpField { model, params: p };
    let fail = VdpError::RootRecoveryFailed { a: p.a, amplitude };
    let on_circle = |phi: f64| [amplitude * phi.sin(), amplitude * phi.cos()];
    let attempt = |seed: [f64; 2]| {
        find_root_with(&field, &seed, opts)
            .ok()
            .filter(|r| (norm2(&r.v0) - amplitude).abs() <= AMPLITUDE_MATCH)
    };
    let root = (0..8)
        .map(|j| on_circle(j as f64 * PI / 4.0))
        .find_map(attempt)
        .or_else(|| {
            // Near a fold the eight seeds can all drift to a neighbouring
            // branch; seed instead at phase minima of ‖g0‖ on the circle.
            let residual = |phi: f64| {
                averaged_function(&field, &on_circle(phi), opts.n_nodes).map_or(f64::INFINITY, |g| norm2(&g))
            };
            let vals: Vec<f64> = (0..PHASE_SCAN).map(|j| residual(phase(j))).collect();
            let mut minima: Vec<usize> = (0..PHASE_SCAN)
                .filter(|&j| {
                    let (l, r) = (vals[(j + PHASE_SCAN - 1) % PHASE_SCAN], vals[(j + 1) % PHASE_SCAN]);
                    vals[j] <= l && vals[j] <= r
                })
                .collect();
            minima.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
            minima.into_iter().find_map(|j| attempt(on_circle(phase(j))))
        })
        .ok_or(fail.clone())?;
    let radius = norm2(&root.v0);
    let (m, n) = if radius > 0.0 {
        (root.v0[0] * amplitude / radius, root.v0[1] * amplitude / radius)
    } else {
        (root.v0[0], root.v0[1])
    };
    let jac = averaged_jacobian(&field, &[m, n], opts.n_nodes, default_fd_step(&[m, n])).map_err(|_| fail.clone())?;
    let max_real_part = eigenvalues(&jac).map_err(|_| fail)?.max_real();
    let (ineq6, ineq7) = model.inequalities(p.a, m, n);
    let degenerate = ineq6.abs() <= INEQUALITY_BAND || ineq7.abs() <= INEQUALITY_BAND;
    Ok(ResonancePoint {
        a: p.a,
        lambda: p.lambda,
        amplitude,
        m,
        n,
        phi: m.atan2(n),
        ineq6,
        ineq7,
        hurwitz_numeric: max_real_part < -degeneracy_band(&jac),
        max_real_part,
        stable: !degenerate && ineq6 > 0.0 && ineq7 < 0.0,
        degenerate,
    })
}

/// Resonance curve over `n` equally spaced detunings in `[a_lo, a_hi]`
/// (`n = 1` evaluates `a_lo` only). Points are ordered by detuning, then by
/// amplitude.
pub fn resonance_curve(
    model: VdpModel,
    lambda: f64,
    a_range: [f64; 2],
    n: usize,
    opts: &RootOptions,
) -> Result<ResonanceCurve, VdpError> {
    let [lo, hi] = a_range;
    if n == 0 || !(lambda >= 0.0) || !lambda.is_finite() || !(lo <= hi) || !hi.is_finite() || !lo.is_finite() {
        return Err(VdpError::InvalidArgument(format!(
            "need n >= 1, finite lambda >= 0 and a_lo <= a_hi (n = {n}, lambda = {lambda}, a = [{lo}, {hi}])"
        )));
    }
    let grid: Vec<f64> = (0..n)
        .map(|i| {
            if n == 1 {
                lo
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect();
    let per_a: Vec<Vec<Result<ResonancePoint, VdpError>>> = grid
        .par_iter()
        .map(|&a| {
            let p = ForcingParams::new(a, lambda);
            amplitude_roots(model, a, lambda)
                .into_iter()
                .map(|amp| recover_point(model, p, amp, opts))
                .collect()
        })
        .collect();
    let mut curve = ResonanceCurve::default();
    for r in per_a.into_iter().flatten() {
        match r {
            Ok(p) => curve.points.push(p),
            Err(e) => curve.failures.push(e),
        }
    }
    Ok(curve)
}

pub fn resonance_curve_nonsmooth(lambda: f64, a_range: [f64; 2], n: usize) -> Result<ResonanceCurve, VdpError> {
    resonance_curve(VdpModel::Nonsmooth, lambda, a_range, n, &RootOptions::default())
}

pub fn resonance_curve_classical(lambda: f64, a_range: [f64; 2], n: usize) -> Result<ResonanceCurve, VdpError> {
    resonance_curve(VdpModel::Classical, lambda, a_range, n, &RootOptions::default())
}
