//! Small dense linear-algebra kernels shared by the autodiff engine, PCA,
//! and the LIME ridge surrogate. Everything is plain row-major `&[S]`.

use crate::scalar::Scalar;

/// c[m,n] += a[m,k] * b[k,n]
pub fn matmul_nn<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == S::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v += a_ip * b_v;
            }
        }
    }
}

/// c[m,n] += a[m,k] * b[n,k]^T
pub fn matmul_nt<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            c[i * n + j] += acc;
        }
    }
}

/// c[k,n] += a[m,k]^T * b[m,n]
pub fn matmul_tn<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == S::zero() {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (c_v, &b_v) in c_row.iter_mut().zip(b_row) {
                *c_v += a_ip * b_v;
            }
        }
    }
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// columns of a row-major `n x n` matrix. Eigenvector signs are fixed so the
/// largest-magnitude component of each column is positive, which keeps the
/// output deterministic.
pub fn jacobi_eigen<S: Scalar>(sym: &[S], n: usize) -> (Vec<S>, Vec<S>) {
    debug_assert_eq!(sym.len(), n * n);
    let mut a = sym.to_vec();
    let mut v = vec![S::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = S::one();
    }
    let eps = S::from_f64_c(1e-14);
    for _sweep in 0..100 {
        let mut off = S::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off.sqrt() <= eps {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= S::from_f64_c(1e-300) {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (S::from_f64_c(2.0) * apq);
                let t = {
                    let sign = if theta >= S::zero() { S::one() } else { -S::one() };
                    sign / (theta.abs() + (theta * theta + S::one()).sqrt())
                };
                let c = S::one() / (t * t + S::one()).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = a[i * n + p];
                    let aiq = a[i * n + q];
                    a[i * n + p] = c * aip - s * aiq;
                    a[i * n + q] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = a[p * n + j];
                    let aqj = a[q * n + j];
                    a[p * n + j] = c * apj - s * aqj;
                    a[q * n + j] = s * apj + c * aqj;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[j * n + j]
            .partial_cmp(&a[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut eigvals = Vec::with_capacity(n);
    let mut eigvecs = vec![S::zero(); n * n];
    for (dst, &src) in order.iter().enumerate() {
        eigvals.push(a[src * n + src]);
        // sign convention: largest-|.| component positive
        let mut best = S::zero();
        for i in 0..n {
            if v[i * n + src].abs() > best.abs() {
                best = v[i * n + src];
            }
        }
        let flip = if best < S::zero() { -S::one() } else { S::one() };
        for i in 0..n {
            eigvecs[i * n + dst] = v[i * n + src] * flip;
        }
    }
    (eigvals, eigvecs)
}

/// Solve `A x = b` for symmetric positive-definite `A` via Cholesky.
/// Panics on a non-SPD matrix; callers add a ridge term to guarantee it.
pub fn solve_spd<S: Scalar>(a: &[S], b: &[S], n: usize) -> Vec<S> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut l = vec![S::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                assert!(sum > S::zero(), "matrix is not positive definite");
                l[i * n + j] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    // forward then back substitution
    let mut y = vec![S::zero(); n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![S::zero(); n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in (i + 1)..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_nn_2x2() {
        // x = [1,1], W = [[1,2],[3,4]] -> [4,6]
        let x = [1.0, 1.0];
        let w = [1.0, 2.0, 3.0, 4.0];
        let mut y = [0.0; 2];
        matmul_nn(&x, &w, &mut y, 1, 2, 2);
        assert_eq!(y, [4.0, 6.0]);
    }

    #[test]
    fn transposed_variants_agree_with_explicit_transpose() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 2x3
        // a * b^T : [2,3]x[3,2] via nt
        let mut c_nt = [0.0; 4];
        matmul_nt(&a, &b, &mut c_nt, 2, 3, 2);
        let bt = [7.0, 10.0, 8.0, 11.0, 9.0, 12.0]; // 3x2
        let mut c_nn = [0.0; 4];
        matmul_nn(&a, &bt, &mut c_nn, 2, 3, 2);
        assert_eq!(c_nt, c_nn);
        // a^T * b : [3,2]x[2,3] via tn
        let mut c_tn = [0.0; 9];
        matmul_tn(&a, &b, &mut c_tn, 2, 3, 3);
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]; // 3x2
        let mut c_ref = [0.0; 9];
        matmul_nn(&at, &b, &mut c_ref, 3, 2, 3);
        assert_eq!(c_tn, c_ref);
    }

    #[test]
    fn jacobi_recovers_diagonal_spectrum() {
        let m: [f64; 9] = [4.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.01];
        let (vals, vecs) = jacobi_eigen(&m, 3);
        assert!((vals[0] - 4.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        assert!((vals[2] - 0.01).abs() < 1e-12);
        // columns orthonormal
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for r in 0..3 {
                    dot += vecs[r * 3 + i] * vecs[r * 3 + j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn jacobi_rotated_spectrum() {
        // A = R diag(5,2) R^T for a 30-degree rotation
        let (c, s) = (0.866025403784438_7f64, 0.5f64);
        let r = [c, -s, s, c];
        let mut tmp = [0.0f64; 4];
        let d = [5.0f64, 0.0, 0.0, 2.0];
        matmul_nn(&r, &d, &mut tmp, 2, 2, 2);
        let mut a = [0.0; 4];
        matmul_nt(&tmp, &r, &mut a, 2, 2, 2);
        let (vals, _) = jacobi_eigen(&a, 2);
        assert!((vals[0] - 5.0).abs() < 1e-10);
        assert!((vals[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn spd_solve_matches_hand_solution() {
        // [[4,1],[1,3]] x = [1,2] -> x = [1/11, 7/11]
        let a: [f64; 4] = [4.0, 1.0, 1.0, 3.0];
        let b: [f64; 2] = [1.0, 2.0];
        let x = solve_spd(&a, &b, 2);
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-12);
    }
}
