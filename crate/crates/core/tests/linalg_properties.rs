use num_complex::Complex64;
use pavg_core::linalg::{cholesky, eigenvalues, lyapunov_residual, lyapunov_solve, norm2, solve, Mat};
use proptest::prelude::*;

fn matrix(k: usize) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-2.0f64..2.0, k * k).prop_map(move |v| Mat::from_fn(k, |i, j| v[i * k + j]))
}

fn sized_matrix() -> impl Strategy<Value = Mat> {
    (2usize..=6).prop_flat_map(matrix)
}

/// Modified Gram-Schmidt on the columns of `m`.
fn orthogonalize(m: &Mat) -> Option<Mat> {
    let k = m.dim();
    let mut cols: Vec<Vec<f64>> = (0..k).map(|j| (0..k).map(|i| m[(i, j)]).collect()).collect();
    for j in 0..k {
        for p in 0..j {
            let d: f64 = (0..k).map(|i| cols[j][i] * cols[p][i]).sum();
            for i in 0..k {
                cols[j][i] -= d * cols[p][i];
            }
        }
        let n = norm2(&cols[j]);
        if n < 1e-3 {
            return None;
        }
        cols[j].iter_mut().for_each(|v| *v /= n);
    }
    Some(Mat::from_columns(&cols))
}

/// Largest distance from a point of `a` to its nearest point in `b`.
fn spectral_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter()
        .map(|x| b.iter().map(|y| (x - y).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

fn shift_to_hurwitz(b: &Mat, margin: f64) -> Mat {
    let top = eigenvalues(b).unwrap().max_real();
    b.sub(&Mat::identity(b.dim()).scale(top + margin))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1024))]

    #[test]
    fn spectrum_is_similarity_invariant((a, q) in (2usize..=6).prop_flat_map(|k| (matrix(k), matrix(k)))) {
        let q = match orthogonalize(&q) {
            Some(q) => q,
            None => return Ok(()),
        };
        let b = q.transpose().matmul(&a).matmul(&q);
        let sa = eigenvalues(&a).unwrap();
        let sb = eigenvalues(&b).unwrap();
        let d = spectral_distance(sa.values(), sb.values()).max(spectral_distance(sb.values(), sa.values()));
        prop_assert!(d <= 1e-7, "distance {d:e}");
    }

    #[test]
    fn complex_eigenvalues_come_in_conjugate_pairs(a in sized_matrix()) {
        let s = eigenvalues(&a).unwrap();
        let conj: Vec<Complex64> = s.values().iter().map(|z| z.conj()).collect();
        prop_assert!(spectral_distance(s.values(), &conj) <= 1e-9);
    }

    #[test]
    fn trace_and_determinant(a in sized_matrix()) {
        let s = eigenvalues(&a).unwrap();
        prop_assert!((s.sum().re - a.trace()).abs() <= 1e-8);
        prop_assert!(s.sum().im.abs() <= 1e-8);
        let det = a.det();
        prop_assert!((s.product().re - det).abs() <= 1e-6 * det.abs().max(1e-3));
    }

    #[test]
    fn lyapunov_solution_is_positive_definite(b in sized_matrix(), margin in 0.05f64..2.0) {
        let a = shift_to_hurwitz(&b, margin);
        let p = lyapunov_solve(&a).unwrap();
        prop_assert!(cholesky(&p).is_ok());
        prop_assert!(lyapunov_residual(&a, &p) <= 1e-8);
    }

    #[test]
    fn solve_inverts_matvec(
        b in sized_matrix(),
        x in prop::collection::vec(-3.0f64..3.0, 6),
    ) {
        // diagonally dominated, hence well conditioned
        let k = b.dim();
        let a = b.add(&Mat::identity(k).scale(2.0 * k as f64 + 1.0));
        let x = &x[..k];
        let y = solve(&a, &a.matvec(x)).unwrap();
        for i in 0..k {
            prop_assert!((y[i] - x[i]).abs() <= 1e-9);
        }
    }
}
