//! Periodic solutions as fixed points of the period map `P_eps`, their
//! Floquet multipliers, and empirical checks of uniqueness, convergence as
//! `eps → 0`, contraction and attraction.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::averaging::random_in_ball;
use crate::certify::StabilityCertificate;
use crate::field::PeriodicField;
use crate::linalg::{eigenvalues, norm2, solve, LinalgError, Mat};
use crate::odeint::{poincare_map, IntegrateError, IntegratorConfig};

pub const DEFAULT_RESIDUAL_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITERATIONS: usize = 50;
/// Relative finite-difference step for Jacobians of the period map.
pub const FD_REL_STEP: f64 = 1e-7;
/// Margin inside the unit circle required for a stable multiplier.
pub const MULTIPLIER_MARGIN: f64 = 1e-9;
/// Half-width of the window around 1 for a phase-neutral multiplier.
pub const NEUTRAL_BAND: f64 = 1e-4;
/// Fixed points closer than this are the same solution.
pub const SAME_POINT: f64 = 1e-7;
const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OrbitError {
    #[error("eps must be positive, got {0}")]
    NonPositiveEps(f64),
    #[error("Jacobian of the period map is singular")]
    SingularJacobian(Box<PeriodicOrbitResult>),
    #[error("no fixed point after {} iterations (residual {:e})", .0.iterations, .0.residual)]
    MaxIterations(Box<PeriodicOrbitResult>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrbitConfig {
    /// `None` uses [`IntegratorConfig::for_field`].
    pub integrator: Option<IntegratorConfig>,
    pub residual_tol: f64,
    pub max_iterations: usize,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        Self {
            integrator: None,
            residual_tol: DEFAULT_RESIDUAL_TOL,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }
}

impl OrbitConfig {
    pub fn integrator_for<F: PeriodicField + ?Sized>(&self, f: &F) -> IntegratorConfig {
        self.integrator.unwrap_or_else(|| IntegratorConfig::for_field(f))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrbitClass {
    /// All multipliers strictly inside the unit circle.
    Stable,
    /// One multiplier at 1 (within [`NEUTRAL_BAND`]), the rest inside: a
    /// phase-neutral cycle of an autonomous oscillator.
    OrbitallyStable,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// The residual stopped decreasing above the tolerance; only reported for
    /// phase-neutral cycles, whose period differs slightly from `T`.
    Stagnated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbitResult {
    pub eps: f64,
    pub fixed_point: Vec<f64>,
    /// `‖P(v*) - v*‖`.
    pub residual: f64,
    /// The same residual with the integrator step halved.
    pub residual_refined: f64,
    pub multipliers: Vec<Complex64>,
    pub stable: bool,
    pub class: OrbitClass,
    pub status: SolveStatus,
    pub iterations: usize,
    /// Distance to the reference point (the averaged root when known).
    pub dist_to_v0: f64,
    pub note: Option<String>,
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Central-difference Jacobian of the period map.
pub fn period_map_jacobian<F: PeriodicField + ?Sized>(
    f: &F,
    v: &[f64],
    eps: f64,
    cfg: &IntegratorConfig,
) -> Result<Mat, IntegrateError> {
    let h = FD_REL_STEP * (1.0 + norm2(v));
    let cols = (0..v.len())
        .map(|j| {
            let mut vp = v.to_vec();
            let mut vm = v.to_vec();
            vp[j] += h;
            vm[j] -= h;
            let pp = poincare_map(f, &vp, eps, cfg)?;
            let pm = poincare_map(f, &vm, eps, cfg)?;
            Ok(pp.iter().zip(&pm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        })
        .collect::<Result<Vec<Vec<f64>>, IntegrateError>>()?;
    Ok(Mat::from_columns(&cols))
}

/// Classifies a multiplier set. A single multiplier within [`NEUTRAL_BAND`]
/// of 1 takes precedence, even when it lies just inside the unit circle.
pub fn classify_multipliers(mults: &[Complex64]) -> OrbitClass {
    let inside = |z: &Complex64| z.norm() < 1.0 - MULTIPLIER_MARGIN;
    let neutral: Vec<usize> = (0..mults.len())
        .filter(|&i| (mults[i] - 1.0).norm() <= NEUTRAL_BAND)
        .collect();
    if neutral.len() == 1
        && (0..mults.len())
            .filter(|i| !neutral.contains(i))
            .all(|i| inside(&mults[i]))
    {
        OrbitClass::OrbitallyStable
    } else if mults.iter().all(inside) {
        OrbitClass::Stable
    } else {
        OrbitClass::Unstable
    }
}

fn residual_of<F: PeriodicField + ?Sized>(
    f: &F,
    v: &[f64],
    eps: f64,
    cfg: &IntegratorConfig,
) -> Result<(Vec<f64>, f64), IntegrateError> {
    let p = poincare_map(f, v, eps, cfg)?;
    let r: Vec<f64> = p.iter().zip(v).map(|(a, b)| a - b).collect();
    let n = norm2(&r);
    Ok((r, n))
}

/// Fixed point of `P_eps` near `guess`; `dist_to_v0` is measured to `guess`.
pub fn find_periodic<F: PeriodicField + ?Sized>(
    f: &F,
    guess: &[f64],
    eps: f64,
    cfg: &OrbitConfig,
) -> Result<PeriodicOrbitResult, OrbitError> {
    find_periodic_near(f, guess, guess, eps, cfg)
}

/// Like [`find_periodic`], measuring `dist_to_v0` to `reference`.
///
/// Damped Newton on `P(v) - v` runs first. If it cannot make progress, a
/// Levenberg-Marquardt minimization of `‖P(v) - v‖` takes over; when that
/// stagnates on a phase-neutral cycle the result is returned with status
/// [`SolveStatus::Stagnated`], otherwise as an error.
pub fn find_periodic_near<F: PeriodicField + ?Sized>(
    f: &F,
    guess: &[f64],
    reference: &[f64],
    eps: f64,
    cfg: &OrbitConfig,
) -> Result<PeriodicOrbitResult, OrbitError> {
    if !(eps > 0.0) {
        return Err(OrbitError::NonPositiveEps(eps));
    }
    if guess.len() != f.dim() || reference.len() != f.dim() {
        return Err(OrbitError::InvalidArgument(format!(
            "points must have dimension {}",
            f.dim()
        )));
    }
    let icfg = cfg.integrator_for(f);
    let k = f.dim();
    let mut v = guess.to_vec();
    let (mut r, mut res) = residual_of(f, &v, eps, &icfg)?;
    let mut it = 0;
    let mut newton_ok = true;
    while res > cfg.residual_tol && it < cfg.max_iterations && newton_ok {
        it += 1;
        let j = period_map_jacobian(f, &v, eps, &icfg)?.sub(&Mat::identity(k));
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let step = match solve(&j, &rhs) {
            Ok(s) => s,
            Err(LinalgError::Singular) => {
                newton_ok = false;
                continue;
            }
            Err(e) => return Err(OrbitError::InvalidArgument(e.to_string())),
        };
        newton_ok = false;
        let mut lambda = 1.0;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = v.iter().zip(&step).map(|(a, d)| a + lambda * d).collect();
            if let Ok((rc, nc)) = residual_of(f, &cand, eps, &icfg) {
                if nc < res {
                    v = cand;
                    r = rc;
                    res = nc;
                    newton_ok = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
    }
    let mut status = SolveStatus::Converged;
    if res > cfg.residual_tol {
        let (lv, lres, lit) = levenberg_marquardt(f, &v, eps, &icfg, cfg, it)?;
        v = lv;
        res = lres;
        it = lit;
        if res > cfg.residual_tol {
            status = SolveStatus::Stagnated;
        }
    }
    let jac = period_map_jacobian(f, &v, eps, &icfg)?;
    let multipliers = eigenvalues(&jac)
        .map_err(|e| OrbitError::InvalidArgument(e.to_string()))?
        .values()
        .to_vec();
    let class = classify_multipliers(&multipliers);
    let residual_refined = residual_of(f, &v, eps, &icfg.refined())?.1;
    let note = (class == OrbitClass::OrbitallyStable).then(|| "orbitally stable cycle (phase-neutral)".to_string());
    let result = PeriodicOrbitResult {
        eps,
        dist_to_v0: diff_norm(&v, reference),
        fixed_point: v,
        residual: res,
        residual_refined,
        multipliers,
        stable: class == OrbitClass::Stable,
        class,
        status,
        iterations: it,
        note,
    };
    match status {
        SolveStatus::Converged => Ok(result),
        SolveStatus::Stagnated if class == OrbitClass::OrbitallyStable => Ok(result),
        SolveStatus::Stagnated if it >= cfg.max_iterations => Err(OrbitError::MaxIterations(Box::new(result))),
        SolveStatus::Stagnated => Err(OrbitError::SingularJacobian(Box::new(result))),
    }
}

/// Levenberg-Marquardt on `‖P(v) - v‖²`; stops at the tolerance, at the
/// iteration cap, or when a full damping cycle fails to reduce the residual.
fn levenberg_marquardt<F: PeriodicField + ?Sized>(
    f: &F,
    start: &[f64],
    eps: f64,
    icfg: &IntegratorConfig,
    cfg: &OrbitConfig,
    mut it: usize,
) -> Result<(Vec<f64>, f64, usize), OrbitError> {
    let k = start.len();
    let mut v = start.to_vec();
    let (mut r, mut res) = residual_of(f, &v, eps, icfg)?;
    let mut mu = 1e-3;
    let budget = it + cfg.max_iterations;
    while res > cfg.residual_tol && it < budget {
        it += 1;
        let j = period_map_jacobian(f, &v, eps, icfg)?.sub(&Mat::identity(k));
        let jt = j.transpose();
        let jtj = jt.matmul(&j);
        let g: Vec<f64> = jt.matvec(&r).iter().map(|x| -x).collect();
        let scale = jtj.max_abs().max(1e-300);
        let mut improved = false;
        for _ in 0..12 {
            let damped = Mat::from_fn(k, |a, b| jtj[(a, b)] + if a == b { mu * scale } else { 0.0 });
            if let Ok(step) = solve(&damped, &g) {
                let cand: Vec<f64> = v.iter().zip(&step).map(|(a, d)| a + d).collect();
                if let Ok((rc, nc)) = residual_of(f, &cand, eps, icfg) {
                    if nc < res {
                        let gain = (res - nc) / res;
                        v = cand;
                        r = rc;
                        res = nc;
                        mu = (mu / 3.0).max(1e-12);
                        improved = gain > 1e-3;
                        break;
                    }
                }
            }
            mu *= 4.0;
        }
        if !improved {
            break;
        }
    }
    Ok((v, res, it))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub eps: f64,
    pub result: Option<PeriodicOrbitResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub v0: Vec<f64>,
    pub entries: Vec<SweepEntry>,
    /// Least-squares slope `p` of `log dist` against `log eps`.
    pub order: Option<f64>,
    /// `C` in `dist ≈ C eps^p`.
    pub prefactor: Option<f64>,
}

/// Follows the fixed point along a decreasing list of `eps`, warm-starting
/// each solve from the previous one, and fits `dist_to_v0 ≈ C eps^p`.
/// Failed entries are kept with their error message.
pub fn eps_sweep<F: PeriodicField + ?Sized>(
    f: &F,
    v0: &[f64],
    eps_list: &[f64],
    cfg: &OrbitConfig,
) -> Result<SweepResult, OrbitError> {
    if eps_list.len() < 3 {
        return Err(OrbitError::InvalidArgument(format!(
            "an eps sweep needs at least 3 values, got {}",
            eps_list.len()
        )));
    }
    if eps_list.iter().any(|e| !(*e > 0.0)) || eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(OrbitError::InvalidArgument(
            "eps values must be positive and strictly decreasing".into(),
        ));
    }
    let mut guess = v0.to_vec();
    let mut entries = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        match find_periodic_near(f, &guess, v0, eps, cfg) {
            Ok(r) => {
                guess = r.fixed_point.clone();
                entries.push(SweepEntry {
                    eps,
                    result: Some(r),
                    error: None,
                });
            }
            Err(e) => entries.push(SweepEntry {
                eps,
                result: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let pts: Vec<(f64, f64)> = entries
        .iter()
        .filter_map(|e| e.result.as_ref())
        .filter(|r| r.dist_to_v0 > 0.0)
        .map(|r| (r.eps.ln(), r.dist_to_v0.ln()))
        .collect();
    let (order, prefactor) = fit_line(&pts).map_or((None, None), |(p, c)| (Some(p), Some(c.exp())));
    Ok(SweepResult {
        v0: v0.to_vec(),
        entries,
        order,
        prefactor,
    })
}

/// Least-squares line `y = p x + c`; `None` for fewer than two points.
pub fn fit_line(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let p = sxy / sxx;
    Some((p, my - p * mx))
}

/// Largest sampled `‖P(v1) - P(v2)‖ / ‖v1 - v2‖` over random pairs in
/// `B_radius(v_star)`, in the certificate norm when one is given. `eps = 0`
/// is allowed (the map is then the identity).
#[allow(clippy::too_many_arguments)]
pub fn measure_contraction<F: PeriodicField + ?Sized>(
    f: &F,
    v_star: &[f64],
    eps: f64,
    radius: f64,
    n_pairs: usize,
    norm: Option<&StabilityCertificate>,
    seed: u64,
    cfg: &OrbitConfig,
) -> Result<f64, OrbitError> {
    if !(eps >= 0.0) || !(radius > 0.0) {
        return Err(OrbitError::InvalidArgument("need eps >= 0 and radius > 0".into()));
    }
    let icfg = cfg.integrator_for(f);
    let measure = |x: &[f64]| norm.map_or_else(|| norm2(x), |c| c.norm(x));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n_pairs)
        .map(|_| {
            (
                random_in_ball(&mut rng, v_star, radius),
                random_in_ball(&mut rng, v_star, radius),
            )
        })
        .collect();
    let ratios = pairs
        .par_iter()
        .map(|(a, b)| {
            let (pa, pb) = if eps == 0.0 {
                (a.clone(), b.clone())
            } else {
                (poincare_map(f, a, eps, &icfg)?, poincare_map(f, b, eps, &icfg)?)
            };
            let num: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x - y).collect();
            let den: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
            let d = measure(&den);
            Ok(if d > 0.0 { measure(&num) / d } else { 0.0 })
        })
        .collect::<Result<Vec<f64>, IntegrateError>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasinTarget {
    /// Enter `B_tol(v_star)`.
    Point { tol: f64 },
    /// Come within `tol` of the invariant curve through `v_star`, traced as
    /// the period-map orbit of `v_star` over twice the probe horizon. Starts
    /// whose asymptotic phase lies beyond that arc count as not attracted.
    InvariantCurve { tol: f64 },
}

impl BasinTarget {
    /// Point target for stable results, curve target for phase-neutral ones.
    pub fn for_result(r: &PeriodicOrbitResult) -> Self {
        match r.class {
            OrbitClass::OrbitallyStable => BasinTarget::InvariantCurve { tol: 1e-6 },
            _ => BasinTarget::Point { tol: 1e-6 },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasinResult {
    pub fraction: f64,
    pub attracted: usize,
    pub starts: usize,
}

fn segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let ap: Vec<f64> = a.iter().zip(p).map(|(x, y)| y - x).collect();
    let len2: f64 = ab.iter().map(|x| x * x).sum();
    let s = if len2 > 0.0 {
        (ap.iter().zip(&ab).map(|(x, y)| x * y).sum::<f64>() / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ap.iter().zip(&ab).map(|(x, y)| (x - s * y).powi(2)).sum::<f64>().sqrt()
}

/// Fraction of random starts in `B_radius(v_star)` whose period-map orbit
/// reaches the target within `n_periods` iterations. Starts whose
/// integration fails count as not attracted.
#[allow(clippy::too_many_arguments)]
pub fn basin_probe<F: PeriodicField + ?Sized>(
    f: &F,
    v_star: &[f64],
    eps: f64,
    radius: f64,
    n_starts: usize,
    n_periods: usize,
    target: BasinTarget,
    seed: u64,
    cfg: &OrbitConfig,
) -> Result<BasinResult, OrbitError> {
    if !(eps > 0.0) {
        return Err(OrbitError::NonPositiveEps(eps));
    }
    if !(radius > 0.0) || n_starts == 0 {
        return Err(OrbitError::InvalidArgument(
            "need radius > 0 and at least one start".into(),
        ));
    }
    let icfg = cfg.integrator_for(f);
    let curve: Vec<Vec<f64>> = match target {
        BasinTarget::Point { .. } => Vec::new(),
        BasinTarget::InvariantCurve { .. } => {
            let mut pts = vec![v_star.to_vec()];
            for _ in 0..2 * n_periods {
                let next = poincare_map(f, pts.last().unwrap(), eps, &icfg)?;
                pts.push(next);
            }
            pts
        }
    };
    let hit = |x: &[f64]| match target {
        BasinTarget::Point { tol } => diff_norm(x, v_star) <= tol,
        BasinTarget::InvariantCurve { tol } => curve.windows(2).any(|w| segment_distance(x, &w[0], &w[1]) <= tol),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<Vec<f64>> = (0..n_starts)
        .map(|_| random_in_ball(&mut rng, v_star, radius))
        .collect();
    let attracted = starts
        .par_iter()
        .filter(|s| {
            let mut x = s.to_vec();
            for _ in 0..n_periods {
                match poincare_map(f, &x, eps, &icfg) {
                    Ok(nx) => x = nx,
                    Err(_) => return false,
                }
                if let BasinTarget::Point { .. } = target {
                    if hit(&x) {
                        return true;
                    }
                }
            }
            hit(&x)
        })
        .count();
    Ok(BasinResult {
        fraction: attracted as f64 / n_starts as f64,
        attracted,
        starts: n_starts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessResult {
    /// Distinct converged fixed points (pairwise farther apart than
    /// [`SAME_POINT`]).
    pub fixed_points: Vec<Vec<f64>>,
    pub converged: usize,
    pub failed: usize,
    /// Largest distance between any converged fixed point and the first one.
    pub spread: f64,
}

/// Newton from `n_guesses` random points in `B_radius(v0)`.
pub fn uniqueness_probe<F: PeriodicField + ?Sized>(
    f: &F,
    v0: &[f64],
    eps: f64,
    radius: f64,
    n_guesses: usize,
    seed: u64,
    cfg: &OrbitConfig,
) -> Result<UniquenessResult, OrbitError> {
    if !(radius > 0.0) || n_guesses == 0 {
        return Err(OrbitError::InvalidArgument(
            "need radius > 0 and at least one guess".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let guesses: Vec<Vec<f64>> = (0..n_guesses).map(|_| random_in_ball(&mut rng, v0, radius)).collect();
    let found: Vec<Option<Vec<f64>>> = guesses
        .par_iter()
        .map(|g| {
            find_periodic_near(f, g, v0, eps, cfg)
                .ok()
                .filter(|r| r.status == SolveStatus::Converged)
                .map(|r| r.fixed_point)
        })
        .collect();
    let converged: Vec<Vec<f64>> = found.iter().flatten().cloned().collect();
    let mut distinct: Vec<Vec<f64>> = Vec::new();
    for p in &converged {
        if distinct.iter().all(|q| diff_norm(p, q) >= SAME_POINT) {
            distinct.push(p.clone());
        }
    }
    let spread = converged.first().map_or(0.0, |first| {
        converged.iter().map(|p| diff_norm(p, first)).fold(0.0, f64::max)
    });
    Ok(UniquenessResult {
        fixed_points: distinct,
        converged: converged.len(),
        failed: n_guesses - converged.len(),
        spread,
    })
}
