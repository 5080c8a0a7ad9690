use super::eigen::{eigenvalues, symmetric_eigenvalues};
use super::{cholesky, inverse, solve, LinalgError, Mat, HURWITZ_TOL};

/// Solves `AᵀP + PA = -I` for symmetric positive definite `P`.
///
/// The k² unknowns are solved directly as one dense system, which is cheap
/// for k ≤ 16.
pub fn lyapunov_solve(a: &Mat) -> Result<Mat, LinalgError> {
    let spec = eigenvalues(a)?;
    let max_re = spec.max_real();
    if !(max_re < -HURWITZ_TOL) {
        return Err(LinalgError::NotHurwitz(max_re));
    }
    let k = a.dim();
    let n = k * k;
    let mut big = Mat::zeros(n);
    let mut rhs = vec![0.0; n];
    for i in 0..k {
        for j in 0..k {
            let row = i * k + j;
            for m in 0..k {
                big[(row, m * k + j)] += a[(m, i)];
                big[(row, i * k + m)] += a[(m, j)];
            }
            if i == j {
                rhs[row] = -1.0;
            }
        }
    }
    let sol = solve(&big, &rhs)?;
    let p = Mat::from_fn(k, |i, j| 0.5 * (sol[i * k + j] + sol[j * k + i]));
    Ok(p)
}

/// Max-entry norm of `AᵀP + PA + I`.
pub fn lyapunov_residual(a: &Mat, p: &Mat) -> f64 {
    let at = a.transpose();
    at.matmul(p).add(&p.matmul(a)).add(&Mat::identity(a.dim())).max_abs()
}

/// Operator norm of `m` induced by `‖x‖_P = sqrt(xᵀPx)`.
///
/// With `P = LLᵀ` this is the spectral norm of `Lᵀ M L⁻ᵀ`, computed from the
/// largest eigenvalue of the symmetric reduction `L⁻¹ MᵀPM L⁻ᵀ`.
pub fn induced_norm(m: &Mat, p: &Mat) -> Result<f64, LinalgError> {
    let l = cholesky(p)?;
    let linv = inverse(&l)?;
    let mtpm = m.transpose().matmul(p).matmul(m);
    let red = linv.matmul(&mtpm).matmul(&linv.transpose());
    let sym = Mat::from_fn(red.dim(), |i, j| 0.5 * (red[(i, j)] + red[(j, i)]));
    let top = symmetric_eigenvalues(&sym).last().copied().unwrap_or(0.0);
    Ok(top.max(0.0).sqrt())
}
