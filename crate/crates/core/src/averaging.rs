//! The averaged function `g0(v) = ∫₀ᵀ g(τ, v, 0) dτ`, its Jacobian, and its zeros.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::EvalError;
use crate::field::PeriodicField;
use crate::linalg::{norm2, singular_values, solve, LinalgError, Mat};

pub const DEFAULT_NODES: usize = 4096;
pub const DEFAULT_ROOT_TOL: f64 = 1e-10;
pub const MAX_NEWTON_ITERATIONS: usize = 50;
const MAX_HALVINGS: usize = 20;
/// Roots closer than this are merged by [`scan_roots`].
pub const DEDUP_DISTANCE: f64 = 1e-6;
/// `σ_min < NEAR_SINGULAR_RATIO · σ_max` flags a non-isolated root.
pub const NEAR_SINGULAR_RATIO: f64 = 1e-6;

// Panels whose half-panel check disagrees by more than this (relative to the
// integrand scale times the period) are subdivided.
const QUAD_REL_TOL: f64 = 1e-12;
const QUAD_MAX_DEPTH: usize = 48;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AveragingError {
    #[error("integrand is not finite at t = {t}")]
    NonFiniteValue { t: f64 },
    #[error("n_nodes must be even and at least 16, got {0}")]
    InvalidNodes(usize),
    #[error("point has dimension {got}, field has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("Jacobian of g0 is singular at iteration {}", .0.iterations)]
    SingularJacobian(Box<RootResult>),
    #[error("Newton did not converge in {} iterations (residual {:e})", .0.iterations, .0.residual)]
    MaxIterations(Box<RootResult>),
    #[error(transparent)]
    Field(#[from] EvalError),
}

/// Result of a vector quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub value: Vec<f64>,
    pub evaluations: usize,
}

fn simpson(w: f64, fa: &[f64], fm: &[f64], fb: &[f64]) -> Vec<f64> {
    (0..fa.len()).map(|i| w / 6.0 * (fa[i] + 4.0 * fm[i] + fb[i])).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

struct Integrand<'a, I> {
    f: &'a I,
    k: usize,
    evals: usize,
}

impl<I> Integrand<'_, I>
where
    I: Fn(f64, &mut [f64]) -> Result<(), EvalError>,
{
    fn at(&mut self, t: f64) -> Result<Vec<f64>, AveragingError> {
        let mut out = vec![0.0; self.k];
        self.at_into(t, &mut out)?;
        Ok(out)
    }

    fn at_into(&mut self, t: f64, out: &mut [f64]) -> Result<(), AveragingError> {
        (self.f)(t, out)?;
        self.evals += 1;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(AveragingError::NonFiniteValue { t });
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn refine(
        &mut self,
        a: f64,
        b: f64,
        fa: &[f64],
        fm: &[f64],
        fb: &[f64],
        whole: &[f64],
        tol: f64,
        depth: usize,
    ) -> Result<Vec<f64>, AveragingError> {
        let m = 0.5 * (a + b);
        let fl = self.at(0.5 * (a + m))?;
        let fr = self.at(0.5 * (m + b))?;
        let left = simpson(m - a, fa, &fl, fm);
        let right = simpson(b - m, fm, &fr, fb);
        let halves: Vec<f64> = left.iter().zip(&right).map(|(x, y)| x + y).collect();
        if depth >= QUAD_MAX_DEPTH || max_diff(&halves, whole) <= 15.0 * tol {
            return Ok(halves);
        }
        let l = self.refine(a, m, fa, &fl, fm, &left, 0.5 * tol, depth + 1)?;
        let r = self.refine(m, b, fm, &fr, fb, &right, 0.5 * tol, depth + 1)?;
        Ok(l.iter().zip(&r).map(|(x, y)| x + y).collect())
    }
}

/// Composite Simpson over `[0, period]` with `n_nodes` subintervals.
///
/// Each Simpson panel is compared against its two half-panels; panels where
/// they disagree (typically those containing a kink of the integrand) are
/// refined adaptively. Smooth panels cost two extra evaluations each.
pub fn simpson_periodic<I>(period: f64, k: usize, n_nodes: usize, integrand: &I) -> Result<Quadrature, AveragingError>
where
    I: Fn(f64, &mut [f64]) -> Result<(), EvalError>,
{
    if n_nodes < 16 || !n_nodes.is_multiple_of(2) {
        return Err(AveragingError::InvalidNodes(n_nodes));
    }
    let mut q = Integrand {
        f: integrand,
        k,
        evals: 0,
    };
    let h = period / n_nodes as f64;
    let nodes: Vec<Vec<f64>> = (0..=n_nodes)
        .map(|i| q.at(if i == n_nodes { period } else { i as f64 * h }))
        .collect::<Result<_, _>>()?;
    let scale = nodes
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    let panel_tol = QUAD_REL_TOL * scale * 2.0 * h;
    // Neumaier-compensated sum: plain accumulation over thousands of panels
    // leaves rounding noise that finite-difference Jacobians amplify.
    let mut total = vec![0.0; k];
    let mut comp = vec![0.0; k];
    let (mut fl, mut fr) = (vec![0.0; k], vec![0.0; k]);
    let mut part = vec![0.0; k];
    for p in 0..n_nodes / 2 {
        let a = 2 * p;
        let (ta, tb) = (a as f64 * h, if a + 2 == n_nodes { period } else { (a + 2) as f64 * h });
        let (fa, fm, fb) = (&nodes[a], &nodes[a + 1], &nodes[a + 2]);
        // First refinement level inline with reused buffers: most panels
        // stop here, and the allocating recursion is only entered at kinks.
        let tm = 0.5 * (ta + tb);
        q.at_into(0.5 * (ta + tm), &mut fl)?;
        q.at_into(0.5 * (tm + tb), &mut fr)?;
        let w = tb - ta;
        let mut err = 0.0f64;
        for i in 0..k {
            let whole = w / 6.0 * (fa[i] + 4.0 * fm[i] + fb[i]);
            part[i] = w / 12.0 * (fa[i] + 4.0 * fl[i] + 2.0 * fm[i] + 4.0 * fr[i] + fb[i]);
            err = err.max((part[i] - whole).abs());
        }
        if !(err <= 15.0 * panel_tol) {
            let left = simpson(tm - ta, fa, &fl, fm);
            let right = simpson(tb - tm, fm, &fr, fb);
            let l = q.refine(ta, tm, fa, &fl, fm, &left, 0.5 * panel_tol, 1)?;
            let r = q.refine(tm, tb, fm, &fr, fb, &right, 0.5 * panel_tol, 1)?;
            for i in 0..k {
                part[i] = l[i] + r[i];
            }
        }
        for i in 0..k {
            let t = total[i] + part[i];
            comp[i] += if total[i].abs() >= part[i].abs() {
                (total[i] - t) + part[i]
            } else {
                (part[i] - t) + total[i]
            };
            total[i] = t;
        }
    }
    Ok(Quadrature {
        value: total.iter().zip(&comp).map(|(t, c)| t + c).collect(),
        evaluations: q.evals,
    })
}

fn check_dim<F: PeriodicField + ?Sized>(f: &F, v: &[f64]) -> Result<(), AveragingError> {
    if v.len() != f.dim() {
        return Err(AveragingError::Dimension {
            expected: f.dim(),
            got: v.len(),
        });
    }
    Ok(())
}

/// `g0(v) = ∫₀ᵀ g(τ, v, 0) dτ`.
pub fn averaged_function<F: PeriodicField + ?Sized>(
    f: &F,
    v: &[f64],
    n_nodes: usize,
) -> Result<Vec<f64>, AveragingError> {
    check_dim(f, v)?;
    let q = simpson_periodic(f.period(), f.dim(), n_nodes, &|t, out: &mut [f64]| {
        f.eval(t, v, 0.0, out)
    })?;
    Ok(q.value)
}

pub fn default_fd_step(v: &[f64]) -> f64 {
    1e-6 * (1.0 + norm2(v))
}

/// Central-difference Jacobian of `g0`.
pub fn averaged_jacobian<F: PeriodicField + ?Sized>(
    f: &F,
    v: &[f64],
    n_nodes: usize,
    fd_step: f64,
) -> Result<Mat, AveragingError> {
    check_dim(f, v)?;
    if !(fd_step > 0.0) {
        return Err(AveragingError::InvalidArgument(format!(
            "fd_step must be positive, got {fd_step}"
        )));
    }
    let k = v.len();
    let cols = (0..k)
        .map(|j| {
            let mut vp = v.to_vec();
            let mut vm = v.to_vec();
            vp[j] += fd_step;
            vm[j] -= fd_step;
            let gp = averaged_function(f, &vp, n_nodes)?;
            let gm = averaged_function(f, &vm, n_nodes)?;
            Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * fd_step)).collect())
        })
        .collect::<Result<Vec<Vec<f64>>, AveragingError>>()?;
    Ok(Mat::from_columns(&cols))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedReport {
    pub point: Vec<f64>,
    pub g0_value: Vec<f64>,
    pub jacobian: Option<Mat>,
    pub quadrature_nodes: usize,
    /// Max-norm difference against a rerun with half (or, if too coarse,
    /// double) the node count.
    pub quadrature_error: f64,
    pub fd_step: f64,
}

pub fn averaged_report<F: PeriodicField + ?Sized>(
    f: &F,
    v: &[f64],
    n_nodes: usize,
    with_jacobian: bool,
) -> Result<AveragedReport, AveragingError> {
    let g0_value = averaged_function(f, v, n_nodes)?;
    let coarse = n_nodes / 2;
    let other = if coarse >= 16 && coarse.is_multiple_of(2) {
        coarse
    } else {
        2 * n_nodes
    };
    let quadrature_error = max_diff(&g0_value, &averaged_function(f, v, other)?);
    let fd_step = default_fd_step(v);
    let jacobian = if with_jacobian {
        Some(averaged_jacobian(f, v, n_nodes, fd_step)?)
    } else {
        None
    };
    Ok(AveragedReport {
        point: v.to_vec(),
        g0_value,
        jacobian,
        quadrature_nodes: n_nodes,
        quadrature_error,
        fd_step,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootOptions {
    pub root_tol: f64,
    pub n_nodes: usize,
    pub max_iterations: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self {
            root_tol: DEFAULT_ROOT_TOL,
            n_nodes: DEFAULT_NODES,
            max_iterations: MAX_NEWTON_ITERATIONS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootResult {
    pub v0: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `σ_max / σ_min` of the FD Jacobian at `v0` (infinite when singular).
    pub condition: f64,
    /// Set when the Jacobian is numerically rank deficient, e.g. on a
    /// continuum of roots.
    pub near_singular: bool,
}

fn conditioning(j: &Mat) -> (f64, bool) {
    let s = singular_values(j);
    let (max, min) = (s[0], *s.last().unwrap());
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    (cond, !(min >= NEAR_SINGULAR_RATIO * max) || max == 0.0)
}

/// Damped Newton on `g0` with a finite-difference Jacobian.
pub fn find_root<F: PeriodicField + ?Sized>(f: &F, guess: &[f64], root_tol: f64) -> Result<RootResult, AveragingError> {
    find_root_with(
        f,
        guess,
        &RootOptions {
            root_tol,
            ..RootOptions::default()
        },
    )
}

pub fn find_root_with<F: PeriodicField + ?Sized>(
    f: &F,
    guess: &[f64],
    opts: &RootOptions,
) -> Result<RootResult, AveragingError> {
    check_dim(f, guess)?;
    if guess.iter().any(|v| !v.is_finite()) {
        return Err(AveragingError::InvalidArgument("guess must be finite".into()));
    }
    let n = opts.n_nodes;
    let mut v = guess.to_vec();
    let mut r = averaged_function(f, &v, n)?;
    let mut res = norm2(&r);
    let partial = |v: &[f64], res: f64, it: usize| RootResult {
        v0: v.to_vec(),
        residual: res,
        iterations: it,
        converged: false,
        condition: f64::NAN,
        near_singular: false,
    };
    let mut it = 0;
    loop {
        if res <= opts.root_tol {
            let j = averaged_jacobian(f, &v, n, default_fd_step(&v))?;
            let (condition, near_singular) = conditioning(&j);
            return Ok(RootResult {
                v0: v,
                residual: res,
                iterations: it,
                converged: true,
                condition,
                near_singular,
            });
        }
        if it >= opts.max_iterations {
            return Err(AveragingError::MaxIterations(Box::new(partial(&v, res, it))));
        }
        it += 1;
        let j = averaged_jacobian(f, &v, n, default_fd_step(&v))?;
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let step = match solve(&j, &rhs) {
            Ok(s) => s,
            Err(LinalgError::Singular) => return Err(AveragingError::SingularJacobian(Box::new(partial(&v, res, it)))),
            Err(e) => return Err(AveragingError::InvalidArgument(e.to_string())),
        };
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = v.iter().zip(&step).map(|(a, d)| a + lambda * d).collect();
            if let Ok(rc) = averaged_function(f, &cand, n) {
                let rn = norm2(&rc);
                if rn < res {
                    accepted = Some((cand, rc, rn));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((nv, nr, nres)) => {
                v = nv;
                r = nr;
                res = nres;
            }
            None => return Err(AveragingError::MaxIterations(Box::new(partial(&v, res, it)))),
        }
    }
}

fn grid_index(idx: usize, shape: usize, k: usize) -> Vec<usize> {
    let mut out = vec![0; k];
    let mut r = idx;
    for d in (0..k).rev() {
        out[d] = r % shape;
        r /= shape;
    }
    out
}

fn flat_index(multi: &[usize], shape: usize) -> usize {
    multi.iter().fold(0, |acc, &i| acc * shape + i)
}

/// Grid search for zeros of `g0` inside the box `[lo, hi]`.
///
/// Newton is seeded at the centre of every cell where each component of `g0`
/// changes sign across the cell corners, and at every grid node where `‖g0‖`
/// is a local minimum. Roots outside the box are dropped and roots closer
/// than [`DEDUP_DISTANCE`] are merged. Seeds whose Newton run fails are
/// skipped.
pub fn scan_roots<F: PeriodicField + ?Sized>(
    f: &F,
    lo: &[f64],
    hi: &[f64],
    grid_n: usize,
    opts: &RootOptions,
) -> Result<Vec<RootResult>, AveragingError> {
    let k = f.dim();
    if lo.len() != k || hi.len() != k {
        return Err(AveragingError::Dimension {
            expected: k,
            got: lo.len().min(hi.len()),
        });
    }
    if k > 3 || grid_n == 0 || grid_n > 64 || lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
        return Err(AveragingError::InvalidArgument(format!(
            "scan needs k <= 3, 1 <= grid_n <= 64 and lo < hi (k = {k}, grid_n = {grid_n})"
        )));
    }
    let shape = grid_n + 1;
    let total = shape.pow(k as u32);
    let point = |multi: &[usize]| -> Vec<f64> {
        (0..k)
            .map(|d| lo[d] + (hi[d] - lo[d]) * multi[d] as f64 / grid_n as f64)
            .collect()
    };
    let values: Vec<Vec<f64>> = (0..total)
        .into_par_iter()
        .map(|i| averaged_function(f, &point(&grid_index(i, shape, k)), opts.n_nodes))
        .collect::<Result<_, _>>()?;
    let norms: Vec<f64> = values.iter().map(|v| norm2(v)).collect();

    let mut seeds: Vec<Vec<f64>> = Vec::new();
    // sign-change cells
    let cells = grid_n.pow(k as u32);
    for c in 0..cells {
        let base = grid_index(c, grid_n, k);
        let corners: Vec<usize> = (0..1usize << k)
            .map(|mask| {
                let m: Vec<usize> = (0..k).map(|d| base[d] + ((mask >> d) & 1)).collect();
                flat_index(&m, shape)
            })
            .collect();
        let brackets = (0..k).all(|comp| {
            let (mn, mx) = corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &i| {
                (a.min(values[i][comp]), b.max(values[i][comp]))
            });
            mn <= 0.0 && mx >= 0.0
        });
        if brackets {
            let centre: Vec<f64> = (0..k)
                .map(|d| lo[d] + (hi[d] - lo[d]) * (base[d] as f64 + 0.5) / grid_n as f64)
                .collect();
            seeds.push(centre);
        }
    }
    // local minima of ‖g0‖ over the node grid
    for i in 0..total {
        let m = grid_index(i, shape, k);
        let mut is_min = true;
        for off in 0..3usize.pow(k as u32) {
            let delta = grid_index(off, 3, k);
            if delta.iter().all(|&d| d == 1) {
                continue;
            }
            let nb: Option<Vec<usize>> = (0..k)
                .map(|d| {
                    let x = m[d] as isize + delta[d] as isize - 1;
                    (x >= 0 && (x as usize) < shape).then_some(x as usize)
                })
                .collect();
            if let Some(nb) = nb {
                if norms[flat_index(&nb, shape)] <= norms[i] {
                    is_min = false;
                    break;
                }
            }
        }
        if is_min {
            seeds.push(point(&m));
        }
    }

    let results: Vec<Option<RootResult>> = seeds.par_iter().map(|s| find_root_with(f, s, opts).ok()).collect();
    let slack = 1e-9;
    let mut roots: Vec<RootResult> = Vec::new();
    for r in results.into_iter().flatten() {
        let inside =
            r.v0.iter()
                .enumerate()
                .all(|(d, &x)| x >= lo[d] - slack && x <= hi[d] + slack);
        let fresh = roots
            .iter()
            .all(|q| norm2(&q.v0.iter().zip(&r.v0).map(|(a, b)| a - b).collect::<Vec<_>>()) >= DEDUP_DISTANCE);
        if inside && fresh {
            roots.push(r);
        }
    }
    Ok(roots)
}

/// Sampled diagnostic for the uniform-continuity hypothesis on `g`.
///
/// Returns the largest observed ratio
/// `‖∫g(τ,v1+u,ε) - ∫g(τ,v2+u,ε) - g0(v1) + g0(v2)‖ / ‖v1 - v2‖` over random
/// `v1, v2 ∈ B_δ(v0)`, random piecewise-linear `u` with `‖u‖ ≤ δ` and
/// `ε ∈ [0, δ]`. This explores the condition; it cannot verify it.
pub fn perturbation_modulus<F: PeriodicField + ?Sized>(
    f: &F,
    v0: &[f64],
    delta: f64,
    n_samples: usize,
    n_nodes: usize,
    seed: u64,
) -> Result<f64, AveragingError> {
    check_dim(f, v0)?;
    let k = f.dim();
    let period = f.period();
    let knots = 9;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let v1 = random_in_ball(&mut rng, v0, delta);
        let v2 = random_in_ball(&mut rng, v0, delta);
        let zero = vec![0.0; k];
        let u: Vec<Vec<f64>> = (0..knots).map(|_| random_in_ball(&mut rng, &zero, delta)).collect();
        let eps = rng.gen_range(0.0..=delta);
        samples.push((v1, v2, u, eps));
    }
    let ratios = samples
        .par_iter()
        .map(|(v1, v2, u, eps)| {
            let pert = |t: f64| -> Vec<f64> {
                let s = (t / period).clamp(0.0, 1.0) * (knots - 1) as f64;
                let i = (s.floor() as usize).min(knots - 2);
                let w = s - i as f64;
                (0..k).map(|d| (1.0 - w) * u[i][d] + w * u[i + 1][d]).collect()
            };
            let shifted = |base: &[f64], eps: f64| {
                simpson_periodic(period, k, n_nodes, &|t, out: &mut [f64]| {
                    let p = pert(t);
                    let x: Vec<f64> = base.iter().zip(&p).map(|(a, b)| a + b).collect();
                    f.eval(t, &x, eps, out)
                })
                .map(|q| q.value)
            };
            let a = shifted(v1, *eps)?;
            let b = shifted(v2, *eps)?;
            let c = averaged_function(f, v1, n_nodes)?;
            let d = averaged_function(f, v2, n_nodes)?;
            let num: Vec<f64> = (0..k).map(|i| a[i] - b[i] - c[i] + d[i]).collect();
            let den = norm2(&v1.iter().zip(v2.iter()).map(|(x, y)| x - y).collect::<Vec<_>>());
            Ok(if den > 0.0 { norm2(&num) / den } else { 0.0 })
        })
        .collect::<Result<Vec<f64>, AveragingError>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// Uniform sample from the Euclidean ball `B_r(centre)`.
pub fn random_in_ball<R: Rng>(rng: &mut R, centre: &[f64], r: f64) -> Vec<f64> {
    let k = centre.len();
    loop {
        let p: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let n = norm2(&p);
        if n <= 1.0 && (n > 0.0 || k == 0) {
            return centre.iter().zip(&p).map(|(c, x)| c + r * x).collect();
        }
    }
}
