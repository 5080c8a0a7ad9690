use std::cmp::Ordering;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{LinalgError, Mat};

const MAX_QR_ITERATIONS: usize = 100_000;

/// Eigenvalues sorted by real part, then imaginary part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum(pub Vec<Complex64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    Hurwitz,
    Degenerate,
    Unstable,
}

impl Spectrum {
    pub fn new(mut values: Vec<Complex64>) -> Self {
        values.sort_by(|a, b| match a.re.total_cmp(&b.re) {
            Ordering::Equal => a.im.total_cmp(&b.im),
            o => o,
        });
        Self(values)
    }

    pub fn values(&self) -> &[Complex64] {
        &self.0
    }

    pub fn max_real(&self) -> f64 {
        self.0.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_modulus(&self) -> f64 {
        self.0.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn sum(&self) -> Complex64 {
        self.0.iter().sum()
    }

    pub fn product(&self) -> Complex64 {
        self.0.iter().product()
    }

    /// Hurwitz if every real part is below `-tol`, degenerate if the largest
    /// lies in `[-tol, tol]`.
    pub fn classify(&self, tol: f64) -> Stability {
        let m = self.max_real();
        if m < -tol {
            Stability::Hurwitz
        } else if m <= tol {
            Stability::Degenerate
        } else {
            Stability::Unstable
        }
    }

    /// Smallest `|Re λ|` over the spectrum.
    pub fn min_abs_real(&self) -> f64 {
        self.0.iter().map(|z| z.re.abs()).fold(f64::INFINITY, f64::min)
    }
}

/// Eigenvalues of a 2×2 matrix from the characteristic quadratic.
pub fn eigenvalues_2x2(a: &Mat) -> Spectrum {
    assert_eq!(a.dim(), 2);
    let half_tr = 0.5 * (a[(0, 0)] + a[(1, 1)]);
    let half_diff = 0.5 * (a[(0, 0)] - a[(1, 1)]);
    // disc = (tr/2)² - det, written to avoid cancellation
    let disc = half_diff * half_diff + a[(0, 1)] * a[(1, 0)];
    let vals = if disc >= 0.0 {
        let r = disc.sqrt();
        let big = if half_tr >= 0.0 { half_tr + r } else { half_tr - r };
        let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
        let small = if big != 0.0 {
            det / big
        } else {
            half_tr - r.copysign(half_tr)
        };
        vec![Complex64::new(big, 0.0), Complex64::new(small, 0.0)]
    } else {
        let r = (-disc).sqrt();
        vec![Complex64::new(half_tr, r), Complex64::new(half_tr, -r)]
    };
    Spectrum::new(vals)
}

/// Eigenvalues of a general real square matrix; closed form for k ≤ 2,
/// Hessenberg reduction plus shifted QR otherwise.
pub fn eigenvalues(a: &Mat) -> Result<Spectrum, LinalgError> {
    match a.dim() {
        0 => Ok(Spectrum(vec![])),
        1 => Ok(Spectrum(vec![Complex64::new(a[(0, 0)], 0.0)])),
        2 => Ok(eigenvalues_2x2(a)),
        _ => eigenvalues_qr(a),
    }
}

/// Householder reduction to upper Hessenberg form.
fn hessenberg(a: &Mat) -> Mat {
    let n = a.dim();
    let mut h = a.clone();
    for k in 0..n.saturating_sub(2) {
        let alpha: f64 = (k + 1..n).map(|i| h[(i, k)] * h[(i, k)]).sum::<f64>().sqrt();
        if alpha == 0.0 {
            continue;
        }
        let s = if h[(k + 1, k)] >= 0.0 { -alpha } else { alpha };
        let mut v = vec![0.0; n];
        v[k + 1] = h[(k + 1, k)] - s;
        for i in k + 2..n {
            v[i] = h[(i, k)];
        }
        let vv: f64 = v.iter().map(|x| x * x).sum();
        if vv == 0.0 {
            continue;
        }
        // H <- (I - 2vvᵀ/vᵀv) H (I - 2vvᵀ/vᵀv)
        for j in 0..n {
            let d: f64 = (k + 1..n).map(|i| v[i] * h[(i, j)]).sum::<f64>() * 2.0 / vv;
            for i in k + 1..n {
                h[(i, j)] -= d * v[i];
            }
        }
        for i in 0..n {
            let d: f64 = (k + 1..n).map(|j| h[(i, j)] * v[j]).sum::<f64>() * 2.0 / vv;
            for j in k + 1..n {
                h[(i, j)] -= d * v[j];
            }
        }
        for i in k + 2..n {
            h[(i, k)] = 0.0;
        }
    }
    h
}

/// Francis double-shift QR on the Hessenberg form (any k ≥ 1).
pub fn eigenvalues_qr(a: &Mat) -> Result<Spectrum, LinalgError> {
    let n = a.dim();
    if !a.is_finite() {
        return Err(LinalgError::NoConvergence);
    }
    let h0 = hessenberg(a);
    // one-based working copy keeps the classical index arithmetic readable
    let mut h = vec![vec![0.0f64; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            h[i + 1][j + 1] = h0[(i, j)];
        }
    }
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += h[i][j].abs();
        }
    }
    let mut nn = n;
    let mut t = 0.0;
    let mut total_its = 0usize;
    while nn >= 1 {
        let mut its = 0;
        loop {
            let mut l = nn;
            while l >= 2 {
                let mut s = h[l - 1][l - 1].abs() + h[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if h[l][l - 1].abs() + s == s {
                    h[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = h[nn][nn];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = 0.0;
                nn -= 1;
                break;
            }
            let mut y = h[nn - 1][nn - 1];
            let mut w = h[nn][nn - 1] * h[nn - 1][nn];
            if l == nn - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + z.copysign(p);
                    wr[nn - 1] = x + z;
                    wr[nn] = x + z;
                    if z != 0.0 {
                        wr[nn] = x - w / z;
                    }
                    wi[nn - 1] = 0.0;
                    wi[nn] = 0.0;
                } else {
                    wr[nn - 1] = x + p;
                    wr[nn] = x + p;
                    wi[nn - 1] = -z;
                    wi[nn] = z;
                }
                nn -= 2;
                break;
            }
            if total_its >= MAX_QR_ITERATIONS {
                return Err(LinalgError::NoConvergence);
            }
            if its > 0 && its % 10 == 0 {
                // exceptional shift
                t += x;
                for i in 1..=nn {
                    h[i][i] -= x;
                }
                let s = h[nn][nn - 1].abs() + h[nn - 1][nn - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            total_its += 1;
            let mut m = nn - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = h[m][m];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / h[m + 1][m] + h[m][m + 1];
                q = h[m + 1][m + 1] - z - rr - ss;
                r = h[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = h[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (h[m - 1][m - 1].abs() + z.abs() + h[m + 1][m + 1].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nn {
                h[i][i - 2] = 0.0;
                if i != m + 2 {
                    h[i][i - 3] = 0.0;
                }
            }
            let mut k = m;
            while k < nn {
                if k != m {
                    p = h[k][k - 1];
                    q = h[k + 1][k - 1];
                    r = if k != nn - 1 { h[k + 2][k - 1] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            h[k][k - 1] = -h[k][k - 1];
                        }
                    } else {
                        h[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nn {
                        let mut pp = h[k][j] + q * h[k + 1][j];
                        if k != nn - 1 {
                            pp += r * h[k + 2][j];
                            h[k + 2][j] -= pp * z;
                        }
                        h[k + 1][j] -= pp * y;
                        h[k][j] -= pp * x;
                    }
                    let mmin = if nn < k + 3 { nn } else { k + 3 };
                    for i in l..=mmin {
                        let mut pp = x * h[i][k] + y * h[i][k + 1];
                        if k != nn - 1 {
                            pp += z * h[i][k + 2];
                            h[i][k + 2] -= pp * r;
                        }
                        h[i][k + 1] -= pp * q;
                        h[i][k] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    let vals = (1..=n).map(|i| Complex64::new(wr[i], wi[i])).collect();
    Ok(Spectrum::new(vals))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &Mat) -> Vec<f64> {
    let n = a.dim();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum();
        let diag: f64 = (0..n).map(|i| m[(i, i)] * m[(i, i)]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut vals: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// Singular values, descending.
pub fn singular_values(a: &Mat) -> Vec<f64> {
    let ata = a.transpose().matmul(a);
    let mut s: Vec<f64> = symmetric_eigenvalues(&ata)
        .into_iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    s.reverse();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn rotation_generator() {
        let a = Mat::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]);
        let s = eigenvalues(&a).unwrap();
        assert!(close(s.0[0], Complex64::new(0.0, -1.0), 1e-15));
        assert!(close(s.0[1], Complex64::new(0.0, 1.0), 1e-15));
        let q = eigenvalues_qr(&a).unwrap();
        assert!(close(q.0[0], s.0[0], 1e-12) && close(q.0[1], s.0[1], 1e-12));
    }

    #[test]
    fn diagonal() {
        let a = Mat::from_rows(&[[-1.0, 0.0], [0.0, -2.0]]);
        let s = eigenvalues(&a).unwrap();
        assert_eq!(s.0, vec![Complex64::new(-2.0, 0.0), Complex64::new(-1.0, 0.0)]);
        assert_eq!(s.classify(1e-9), Stability::Hurwitz);
    }

    #[test]
    fn closed_form_matches_qr_on_random_2x2() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = Mat::from_fn(2, |_, _| rng.gen_range(-3.0..3.0));
            let s = eigenvalues_2x2(&a);
            let q = eigenvalues_qr(&a).unwrap();
            for (x, y) in s.0.iter().zip(&q.0) {
                assert!(close(*x, *y, 1e-10), "{a:?}: {s:?} vs {q:?}");
            }
        }
    }

    #[test]
    fn trace_and_determinant_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [3, 4, 5, 8, 12, 16] {
            for _ in 0..10 {
                let a = Mat::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
                let s = eigenvalues(&a).unwrap();
                assert_eq!(s.0.len(), n);
                assert!((s.sum() - Complex64::new(a.trace(), 0.0)).norm() < 1e-8);
                let det = a.det();
                assert!((s.product() - Complex64::new(det, 0.0)).norm() <= 1e-6 * det.abs().max(1e-12) + 1e-12);
            }
        }
    }

    #[test]
    fn conjugate_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Mat::from_fn(7, |_, _| rng.gen_range(-1.0..1.0));
        let s = eigenvalues(&a).unwrap();
        for z in &s.0 {
            if z.im.abs() > 1e-12 {
                assert!(s.0.iter().any(|w| close(*w, z.conj(), 1e-9)));
            }
        }
    }

    #[test]
    fn defective_and_triangular() {
        let a = Mat::from_rows(&[[2.0, 1.0, 0.0], [0.0, 2.0, 1.0], [0.0, 0.0, 2.0]]);
        let s = eigenvalues(&a).unwrap();
        for z in &s.0 {
            assert!((z - Complex64::new(2.0, 0.0)).norm() < 1e-4);
        }
        let z = eigenvalues(&Mat::zeros(4)).unwrap();
        assert!(z.0.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn symmetric_jacobi() {
        let a = Mat::from_rows(&[[2.0, 1.0], [1.0, 2.0]]);
        let v = symmetric_eigenvalues(&a);
        assert!((v[0] - 1.0).abs() < 1e-14 && (v[1] - 3.0).abs() < 1e-14);
        let sv = singular_values(&Mat::from_rows(&[[3.0, 0.0], [0.0, -0.5]]));
        assert!((sv[0] - 3.0).abs() < 1e-14 && (sv[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn classification_bands() {
        let s = Spectrum::new(vec![Complex64::new(-1.0, 0.0), Complex64::new(5e-10, 0.0)]);
        assert_eq!(s.classify(1e-9), Stability::Degenerate);
        let s = Spectrum::new(vec![Complex64::new(-1.0, 0.0), Complex64::new(2e-9, 0.0)]);
        assert_eq!(s.classify(1e-9), Stability::Unstable);
    }
}
