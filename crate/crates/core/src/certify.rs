//! Checks the verifiable hypotheses at a candidate root of `g0` and builds a
//! contraction certificate `(alpha, q, q_tilde)` in a Lyapunov norm.
//!
//! The contraction `‖v + α g0(v) - w - α g0(w)‖_P ≤ q ‖v - w‖_P` is certified
//! on the linearization `A = g0'(v0)`: with `AᵀP + PA = -I` the map `I + αA`
//! is a contraction in `‖x‖_P = √(xᵀPx)` for small `α > 0`.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::averaging::{
    averaged_function, averaged_jacobian, default_fd_step, random_in_ball, AveragingError, DEFAULT_NODES,
    DEFAULT_ROOT_TOL,
};
use crate::field::PeriodicField;
use crate::linalg::{
    eigenvalues, induced_norm, lyapunov_residual, lyapunov_solve, norm2, LinalgError, Mat, Spectrum, Stability,
    HURWITZ_TOL,
};

pub const DEFAULT_ALPHA_POINTS: usize = 40;
const ALPHA_FLOOR_FACTOR: f64 = 1.0 / 1024.0;

/// Real parts within this distance of zero count as zero.
///
/// Jacobians here are finite-difference estimates, so the strict
/// [`HURWITZ_TOL`] is widened relative to the matrix scale.
pub fn degeneracy_band(a: &Mat) -> f64 {
    HURWITZ_TOL.max(1e-6 * a.max_abs().max(1.0))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertifyError {
    #[error("Jacobian is not Hurwitz (max real part {0:e})")]
    NotHurwitz(f64),
    #[error("no alpha gives a contraction (best norm {0})")]
    NoContraction(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Averaging(#[from] AveragingError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub v0: Vec<f64>,
    pub jacobian: Mat,
    pub spectrum: Spectrum,
    pub hurwitz: bool,
    pub degenerate: bool,
    /// Half-width of the band around zero used for the two flags.
    pub band: f64,
    /// Finite-difference step used for the Jacobian; the certificate is a
    /// statement about the linearization at this scale only.
    pub fd_step: f64,
    pub lyapunov_p: Option<Mat>,
    pub lyapunov_residual: Option<f64>,
    pub alpha: Option<f64>,
    pub q: Option<f64>,
    pub q_tilde: Option<f64>,
}

impl StabilityCertificate {
    pub fn is_complete(&self) -> bool {
        self.lyapunov_p.is_some() && self.q.is_some() && self.alpha.is_some()
    }

    /// `‖x‖_P` when a Lyapunov matrix is present, Euclidean otherwise.
    pub fn norm(&self, x: &[f64]) -> f64 {
        match &self.lyapunov_p {
            Some(p) => {
                let px = p.matvec(x);
                x.iter().zip(&px).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
            }
            None => norm2(x),
        }
    }
}

/// Classifies a given Jacobian.
pub fn certify_matrix(v0: &[f64], jacobian: Mat, fd_step: f64) -> Result<StabilityCertificate, CertifyError> {
    if jacobian.dim() != v0.len() {
        return Err(CertifyError::InvalidArgument(format!(
            "{0}x{0} Jacobian for a point of dimension {1}",
            jacobian.dim(),
            v0.len()
        )));
    }
    let spectrum = eigenvalues(&jacobian)?;
    let band = degeneracy_band(&jacobian);
    let class = spectrum.classify(band);
    Ok(StabilityCertificate {
        v0: v0.to_vec(),
        jacobian,
        spectrum,
        hurwitz: class == Stability::Hurwitz,
        degenerate: class == Stability::Degenerate,
        band,
        fd_step,
        lyapunov_p: None,
        lyapunov_residual: None,
        alpha: None,
        q: None,
        q_tilde: None,
    })
}

/// Jacobian of `g0` at `v0`, its spectrum, and the Hurwitz/degenerate flags.
pub fn certify_hurwitz<F: PeriodicField + ?Sized>(
    f: &F,
    v0: &[f64],
    n_nodes: usize,
) -> Result<StabilityCertificate, CertifyError> {
    let h = default_fd_step(v0);
    let jac = averaged_jacobian(f, v0, n_nodes, h)?;
    certify_matrix(v0, jac, h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaPolicy {
    /// Geometric grid of this many points followed by local refinement.
    Grid(usize),
    Fixed(f64),
}

impl Default for AlphaPolicy {
    fn default() -> Self {
        AlphaPolicy::Grid(DEFAULT_ALPHA_POINTS)
    }
}

/// Completes a Hurwitz certificate with `P`, `alpha`, `q` and `q_tilde`.
///
/// `μ(α) = ‖I + αA‖_P` is convex in `α` with `μ(0) = 1`, so the grid minimum
/// can be refined by golden-section search, and `μ(ε) ≤ 1 - ε q_tilde`
/// holds for every `ε ≤ α`.
pub fn build_contraction_certificate(
    cert: &StabilityCertificate,
    policy: AlphaPolicy,
) -> Result<StabilityCertificate, CertifyError> {
    let a = &cert.jacobian;
    if !cert.hurwitz {
        return Err(CertifyError::NotHurwitz(cert.spectrum.max_real()));
    }
    let p = lyapunov_solve(a)?;
    let k = a.dim();
    let id = Mat::identity(k);
    let mu = |alpha: f64| induced_norm(&id.add(&a.scale(alpha)), &p);
    let (alpha, q) = match policy {
        AlphaPolicy::Fixed(alpha) => {
            if !(alpha > 0.0) || !alpha.is_finite() {
                return Err(CertifyError::InvalidArgument(format!(
                    "alpha must be positive, got {alpha}"
                )));
            }
            (alpha, mu(alpha)?)
        }
        AlphaPolicy::Grid(points) => {
            if points < 2 {
                return Err(CertifyError::InvalidArgument(
                    "alpha grid needs at least 2 points".into(),
                ));
            }
            let tr = a.trace().abs();
            let lo = (if tr > 0.0 { (0.5 / tr).min(1.0) } else { 1.0 }) * ALPHA_FLOOR_FACTOR;
            let hi = 1.0f64;
            let grid: Vec<f64> = (0..points)
                .map(|j| hi * (lo / hi).powf(j as f64 / (points - 1) as f64))
                .collect();
            let vals = grid.iter().map(|&x| mu(x)).collect::<Result<Vec<_>, _>>()?;
            let best = (0..points).min_by(|&i, &j| vals[i].total_cmp(&vals[j])).unwrap();
            // grid descends in alpha
            let right = grid[best.saturating_sub(1)];
            let left = grid[(best + 1).min(points - 1)];
            refine_alpha(&mu, left, right, (grid[best], vals[best]))?
        }
    };
    if !(q < 1.0) {
        return Err(CertifyError::NoContraction(q));
    }
    let mut out = cert.clone();
    out.lyapunov_residual = Some(lyapunov_residual(a, &p));
    out.lyapunov_p = Some(p);
    out.alpha = Some(alpha);
    out.q = Some(q);
    out.q_tilde = Some((1.0 - q) / alpha);
    Ok(out)
}

fn refine_alpha(
    mu: &impl Fn(f64) -> Result<f64, LinalgError>,
    lo: f64,
    hi: f64,
    best: (f64, f64),
) -> Result<(f64, f64), LinalgError> {
    let (mut lo, mut hi) = (lo.ln(), hi.ln());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let f = |s: f64| mu(s.exp());
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    for _ in 0..80 {
        if hi - lo < 1e-12 {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2)?;
        }
    }
    let cand = if f1 <= f2 { (x1.exp(), f1) } else { (x2.exp(), f2) };
    Ok(if cand.1 < best.1 { cand } else { best })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub delta: f64,
    /// Largest sampled difference quotient; a lower bound on the true constant.
    pub l_hat: f64,
    pub samples: usize,
}

/// Samples `‖g(t,v1,ε) - g(t,v2,ε)‖ / ‖v1 - v2‖` over random `t ∈ [0, T)`,
/// `v1, v2 ∈ B_δ(v0)` and `ε ∈ [0, δ]`. Failed evaluations are skipped.
pub fn estimate_lipschitz<F: PeriodicField + ?Sized>(
    f: &F,
    v0: &[f64],
    delta: f64,
    n_samples: usize,
    seed: u64,
) -> LipschitzEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = f.period();
    let draws: Vec<(f64, Vec<f64>, Vec<f64>, f64)> = (0..n_samples)
        .map(|_| {
            let t = rng.gen_range(0.0..period);
            let v1 = random_in_ball(&mut rng, v0, delta);
            let v2 = random_in_ball(&mut rng, v0, delta);
            let e = rng.gen_range(0.0..=delta);
            (t, v1, v2, e)
        })
        .collect();
    let k = f.dim();
    let l_hat = draws
        .par_iter()
        .filter_map(|(t, v1, v2, e)| {
            let (mut a, mut b) = (vec![0.0; k], vec![0.0; k]);
            f.eval(*t, v1, *e, &mut a).ok()?;
            f.eval(*t, v2, *e, &mut b).ok()?;
            let den = norm2(&v1.iter().zip(v2).map(|(x, y)| x - y).collect::<Vec<_>>());
            let num = norm2(&a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>());
            (den > 0.0 && num.is_finite()).then(|| num / den)
        })
        .reduce(|| 0.0, f64::max);
    LipschitzEstimate {
        delta,
        l_hat,
        samples: n_samples,
    }
}

/// Largest sampled `‖v1 + αg0(v1) - v2 - αg0(v2)‖_P / ‖v1 - v2‖_P` over
/// random pairs in `B_δ(v0)`; below one supports the linearized certificate
/// on that ball.
pub fn sampled_contraction<F: PeriodicField + ?Sized>(
    f: &F,
    cert: &StabilityCertificate,
    delta: f64,
    n_pairs: usize,
    n_nodes: usize,
    seed: u64,
) -> Result<f64, CertifyError> {
    let alpha = cert
        .alpha
        .ok_or_else(|| CertifyError::InvalidArgument("certificate has no alpha".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..n_pairs)
        .map(|_| {
            (
                random_in_ball(&mut rng, &cert.v0, delta),
                random_in_ball(&mut rng, &cert.v0, delta),
            )
        })
        .collect();
    let ratios = pairs
        .par_iter()
        .map(|(v1, v2)| {
            let g1 = averaged_function(f, v1, n_nodes)?;
            let g2 = averaged_function(f, v2, n_nodes)?;
            let diff: Vec<f64> = (0..v1.len())
                .map(|i| v1[i] + alpha * g1[i] - v2[i] - alpha * g2[i])
                .collect();
            let base: Vec<f64> = v1.iter().zip(v2).map(|(a, b)| a - b).collect();
            let den = cert.norm(&base);
            Ok(if den > 0.0 { cert.norm(&diff) / den } else { 0.0 })
        })
        .collect::<Result<Vec<f64>, AveragingError>>()?;
    Ok(ratios.into_iter().fold(0.0, f64::max))
}

/// Machine-readable outcome: `certified`, `degenerate` or `failed(reason)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Certified,
    Degenerate,
    Failed(String),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Certified => f.write_str("certified"),
            Verdict::Degenerate => f.write_str("degenerate"),
            Verdict::Failed(r) => write!(f, "failed({r})"),
        }
    }
}

impl Serialize for Verdict {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Verdict {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "certified" => Ok(Verdict::Certified),
            "degenerate" => Ok(Verdict::Degenerate),
            _ => s
                .strip_prefix("failed(")
                .and_then(|r| r.strip_suffix(')'))
                .map(|r| Verdict::Failed(r.to_string()))
                .ok_or_else(|| serde::de::Error::custom(format!("unknown verdict {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportOptions {
    pub root_tol: f64,
    pub n_nodes: usize,
    /// Radius of the sampling ball for the diagnostics.
    pub delta: f64,
    pub lipschitz_samples: usize,
    pub pairwise_samples: usize,
    pub seed: u64,
    pub alpha_policy: AlphaPolicy,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            root_tol: DEFAULT_ROOT_TOL,
            n_nodes: DEFAULT_NODES,
            delta: 0.1,
            lipschitz_samples: 10_000,
            pairwise_samples: 10_000,
            seed: 0,
            alpha_policy: AlphaPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub system: String,
    pub point: Vec<f64>,
    pub root_residual: f64,
    pub root_tol: f64,
    pub is_root: bool,
    pub certificate: Option<StabilityCertificate>,
    pub lipschitz: LipschitzEstimate,
    /// Sampled pairwise contraction ratio on `B_delta(point)`.
    pub pairwise_contraction: Option<f64>,
    /// Checks that are assumed rather than verified.
    pub notes: Vec<String>,
    pub verdict: Verdict,
}

/// Bundles every check at `v0` into one report. Never fails: problems are
/// folded into the verdict.
pub fn theorem_report<F: PeriodicField + ?Sized>(f: &F, v0: &[f64], opts: &ReportOptions) -> TheoremReport {
    let mut notes = vec![
        "uniform continuity of g under small continuous perturbations of the state is assumed, not verified".to_string(),
        "measurability of g in t is assumed, not verified".to_string(),
        format!(
            "contraction is certified for the linearization only; the finite-difference scale and the sampling radius {} are heuristic",
            opts.delta
        ),
    ];
    let lipschitz = estimate_lipschitz(f, v0, opts.delta, opts.lipschitz_samples, opts.seed);
    let mut report = TheoremReport {
        system: f.name().to_string(),
        point: v0.to_vec(),
        root_residual: f64::NAN,
        root_tol: opts.root_tol,
        is_root: false,
        certificate: None,
        lipschitz,
        pairwise_contraction: None,
        notes: Vec::new(),
        verdict: Verdict::Failed("not evaluated".into()),
    };
    let residual = match averaged_function(f, v0, opts.n_nodes) {
        Ok(g) => norm2(&g),
        Err(e) => {
            report.verdict = Verdict::Failed(format!("evaluation error: {e}"));
            report.notes = notes;
            return report;
        }
    };
    report.root_residual = residual;
    report.is_root = residual <= opts.root_tol;
    let cert = match certify_hurwitz(f, v0, opts.n_nodes) {
        Ok(c) => c,
        Err(e) => {
            report.verdict = Verdict::Failed(format!("jacobian: {e}"));
            report.notes = notes;
            return report;
        }
    };
    let verdict = if !report.is_root {
        Verdict::Failed("root residual".into())
    } else if cert.hurwitz {
        match build_contraction_certificate(&cert, opts.alpha_policy) {
            Ok(full) => {
                match sampled_contraction(f, &full, opts.delta, opts.pairwise_samples, opts.n_nodes, opts.seed) {
                    Ok(r) => {
                        if r >= 1.0 {
                            notes.push(format!(
                                "sampled pairwise ratio {r:.6} is not below one on the sampling ball"
                            ));
                        }
                        report.pairwise_contraction = Some(r);
                    }
                    Err(e) => notes.push(format!("pairwise diagnostic failed: {e}")),
                }
                report.certificate = Some(full);
                Verdict::Certified
            }
            Err(e) => Verdict::Failed(format!("no contraction: {e}")),
        }
    } else if cert.degenerate {
        Verdict::Degenerate
    } else {
        Verdict::Failed("not hurwitz".into())
    };
    if report.certificate.is_none() {
        report.certificate = Some(cert);
    }
    report.verdict = verdict;
    report.notes = notes;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FnField, LinearTestField};

    fn matrix_cert(a: Mat) -> StabilityCertificate {
        let k = a.dim();
        certify_matrix(&vec![0.0; k], a, 0.0).unwrap()
    }

    #[test]
    fn minus_identity_fixed_alpha() {
        let c =
            build_contraction_certificate(&matrix_cert(Mat::identity(2).scale(-1.0)), AlphaPolicy::Fixed(0.5)).unwrap();
        assert!(
            c.lyapunov_p
                .as_ref()
                .unwrap()
                .sub(&Mat::identity(2).scale(0.5))
                .max_abs()
                < 1e-14
        );
        assert!((c.q.unwrap() - 0.5).abs() < 1e-14);
        assert!((c.q_tilde.unwrap() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn diagonal_fixed_alpha() {
        let a = Mat::from_rows(&[[-1.0, 0.0], [0.0, -2.0]]);
        let c = build_contraction_certificate(&matrix_cert(a), AlphaPolicy::Fixed(0.5)).unwrap();
        assert!((c.q.unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn oscillatory_grid() {
        let a = Mat::from_rows(&[[0.0, 1.0], [-1.0, -1.0]]);
        let c = build_contraction_certificate(&matrix_cert(a), AlphaPolicy::default()).unwrap();
        assert!(c.q.unwrap() < 1.0 && c.q_tilde.unwrap() > 0.0);
        assert!(c.lyapunov_residual.unwrap() <= 1e-10);
    }

    #[test]
    fn grid_never_worse_than_its_points() {
        let a = Mat::from_rows(&[[-3.0, 4.0], [-4.0, -0.5]]);
        let c = build_contraction_certificate(&matrix_cert(a.clone()), AlphaPolicy::default()).unwrap();
        let p = c.lyapunov_p.clone().unwrap();
        for j in 0..40 {
            let alpha = 0.5f64.powi(j) * 0.3;
            let m = induced_norm(&Mat::identity(2).add(&a.scale(alpha)), &p).unwrap();
            assert!(c.q.unwrap() <= m + 1e-12);
        }
    }

    #[test]
    fn non_hurwitz_is_rejected() {
        let cert = matrix_cert(Mat::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]));
        assert!(cert.degenerate && !cert.hurwitz);
        assert!(matches!(
            build_contraction_certificate(&cert, AlphaPolicy::default()),
            Err(CertifyError::NotHurwitz(_))
        ));
    }

    #[test]
    fn lipschitz_samples() {
        let est = estimate_lipschitz(&LinearTestField, &[0.0], 0.5, 500, 3);
        assert!(est.l_hat <= 1.0 + 1e-12 && est.l_hat > 0.999);
        let constant = FnField::new(2, 1.0, |_t, _x: &[f64], _e, out: &mut [f64]| out.fill(2.0));
        assert_eq!(estimate_lipschitz(&constant, &[0.0, 0.0], 1.0, 100, 3).l_hat, 0.0);
    }

    #[test]
    fn linear_field_report() {
        let opts = ReportOptions {
            lipschitz_samples: 200,
            pairwise_samples: 50,
            n_nodes: 256,
            ..ReportOptions::default()
        };
        let r = theorem_report(&LinearTestField, &[0.0], &opts);
        assert_eq!(r.verdict, Verdict::Certified);
        let cert = r.certificate.as_ref().unwrap();
        assert!((cert.spectrum.values()[0].re + 2.0 * std::f64::consts::PI).abs() < 1e-6);
        assert!(r.pairwise_contraction.unwrap() < 1.0);
        let off = theorem_report(&LinearTestField, &[0.5], &opts);
        assert_eq!(off.verdict, Verdict::Failed("root residual".into()));
        assert_eq!(off.verdict.to_string(), "failed(root residual)");
    }

    #[test]
    fn verdict_round_trip() {
        for v in [
            Verdict::Certified,
            Verdict::Degenerate,
            Verdict::Failed("not hurwitz".into()),
        ] {
            let js = serde_json::to_string(&v).unwrap();
            assert_eq!(serde_json::from_str::<Verdict>(&js).unwrap(), v);
        }
        assert!(serde_json::from_str::<Verdict>("\"maybe\"").is_err());
    }
}
