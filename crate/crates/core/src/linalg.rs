//! Small linear-algebra kernels: preconditioned conjugate gradients and a
//! dense symmetric eigensolver (LAPACK `dsyevd`).

use std::os::raw::c_char;

// LAPACK routines come from the system OpenBLAS build.
#[link(name = "openblas")]
extern "C" {}

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct CgOptions {
    /// Relative residual target `‖b − Ax‖ ≤ rel_tol ‖b‖`.
    pub rel_tol: f64,
    /// Absolute floor; stops when `‖b − Ax‖ ≤ abs_tol`.
    pub abs_tol: f64,
    pub max_iters: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            rel_tol: 1e-13,
            abs_tol: 1e-300,
            max_iters: 10_000,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CgStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Jacobi-preconditioned CG for a symmetric positive-definite operator.
///
/// `apply(x, out)` writes `A x` into `out`; `diag` is the diagonal of `A`.
/// `x` holds the initial guess on entry and the solution on exit.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    opts: CgOptions,
) -> Result<CgStats> {
    let n = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let target = (opts.rel_tol * b_norm).max(opts.abs_tol);

    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = norm(&r);

    for it in 0..opts.max_iters {
        if res <= target {
            return Ok(CgStats {
                iterations: it,
                residual: res / b_norm,
            });
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = norm(&r);
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if res <= target {
        return Ok(CgStats {
            iterations: opts.max_iters,
            residual: res / b_norm,
        });
    }
    Err(Error::CgNonConvergence {
        residual: res / b_norm,
        iterations: opts.max_iters,
    })
}

/// Eigen-decomposition of a dense symmetric matrix given in column-major
/// order. Returns ascending eigenvalues and the column-major matrix of
/// orthonormal eigenvectors.
pub fn symmetric_eigen(n: usize, mut a: Vec<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    assert_eq!(a.len(), n * n);
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let nn = i32::try_from(n).map_err(|_| Error::Spectral(format!("matrix order {n} too large")))?;
    let jobz = b'V' as c_char;
    let uplo = b'U' as c_char;
    let mut w = vec![0.0; n];
    let mut info = 0;
    let mut work_q = [0.0f64];
    let mut iwork_q = [0i32];
    // workspace query
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &nn,
            a.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work_q.as_mut_ptr(),
            &-1,
            iwork_q.as_mut_ptr(),
            &-1,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Spectral(format!("dsyevd workspace query failed (info {info})")));
    }
    let lwork = work_q[0] as i32;
    let liwork = iwork_q[0];
    let mut work = vec![0.0; lwork.max(1) as usize];
    let mut iwork = vec![0i32; liwork.max(1) as usize];
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &nn,
            a.as_mut_ptr(),
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Spectral(format!("dsyevd failed (info {info})")));
    }
    Ok((w, a))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cg_solves_tridiagonal() {
        let n = 50;
        let apply = |x: &[f64], out: &mut [f64]| {
            for i in 0..n {
                let l = if i > 0 { x[i - 1] } else { 0.0 };
                let r = if i + 1 < n { x[i + 1] } else { 0.0 };
                out[i] = 3.0 * x[i] - l - r;
            }
        };
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut x = vec![0.0; n];
        let stats = pcg(apply, &vec![3.0; n], &b, &mut x, CgOptions::default()).unwrap();
        assert!(stats.iterations <= n);
        let mut ax = vec![0.0; n];
        apply(&x, &mut ax);
        for i in 0..n {
            assert!((ax[i] - b[i]).abs() < 1e-11);
        }
    }

    #[test]
    fn cg_reports_nonconvergence() {
        let n = 40;
        let apply = |x: &[f64], out: &mut [f64]| {
            for i in 0..n {
                out[i] = (1.0 + i as f64 * i as f64) * x[i] + if i > 0 { x[i - 1] } else { 0.0 }
                    + if i + 1 < n { x[i + 1] } else { 0.0 };
            }
        };
        let b = vec![1.0; n];
        let mut x = vec![0.0; n];
        let opts = CgOptions {
            max_iters: 1,
            ..CgOptions::default()
        };
        assert!(matches!(
            pcg(apply, &vec![1.0; n], &b, &mut x, opts),
            Err(Error::CgNonConvergence { .. })
        ));
    }

    #[test]
    fn eigen_of_circulant() {
        // periodic path Laplacian, N = 4: eigenvalues {0, 2, 2, 4}
        let n = 4;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i + n * i] = 2.0;
            a[(i + 1) % n + n * i] = -1.0;
            a[i + n * ((i + 1) % n)] = -1.0;
        }
        let (w, v) = symmetric_eigen(n, a.clone()).unwrap();
        let want = [0.0, 2.0, 2.0, 4.0];
        for (x, y) in w.iter().zip(want) {
            assert!((x - y).abs() < 1e-12);
        }
        // A v = λ v
        for k in 0..n {
            for i in 0..n {
                let av: f64 = (0..n).map(|j| a[i + n * j] * v[j + n * k]).sum();
                assert!((av - w[k] * v[i + n * k]).abs() < 1e-12);
            }
        }
    }
}
