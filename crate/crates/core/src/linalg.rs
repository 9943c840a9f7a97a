//! Small dense kernels sized by the covariate dimension.

use crate::scalar::Scalar;

pub(crate) fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn axpy<F: Scalar>(y: &mut [F], alpha: F, x: &[F]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn norm_inf<F: Scalar>(v: &[F]) -> F {
    v.iter().fold(F::zero(), |m, &x| m.max(x.abs()))
}

/// Solve a square system by Gaussian elimination with partial pivoting.
/// Rows of `a` are consumed as given; returns `None` on a vanishing pivot.
pub(crate) fn solve<F: Scalar>(mut a: Vec<Vec<F>>, mut rhs: Vec<F>) -> Option<Vec<F>> {
    let m = a.len();
    debug_assert!(a.iter().all(|r| r.len() == m));
    debug_assert_eq!(rhs.len(), m);
    let scale = a
        .iter()
        .map(|r| norm_inf(r))
        .fold(F::zero(), F::max)
        .max(F::one());
    let tol = F::real(1e-13) * scale;
    for k in 0..m {
        let piv = (k..m)
            .max_by(|&i, &j| a[i][k].abs().partial_cmp(&a[j][k].abs()).unwrap())
            .unwrap();
        if a[piv][k].abs() <= tol {
            return None;
        }
        a.swap(k, piv);
        rhs.swap(k, piv);
        for i in k + 1..m {
            let f = a[i][k] / a[k][k];
            if f != F::zero() {
                for j in k..m {
                    let akj = a[k][j];
                    a[i][j] = a[i][j] - f * akj;
                }
                let rk = rhs[k];
                rhs[i] = rhs[i] - f * rk;
            }
        }
    }
    let mut x = vec![F::zero(); m];
    for k in (0..m).rev() {
        let mut s = rhs[k];
        for j in k + 1..m {
            s = s - a[k][j] * x[j];
        }
        x[k] = s / a[k][k];
    }
    Some(x)
}

/// Modified Gram-Schmidt orthonormalisation of the given rows, dropping
/// near-dependent ones.
pub(crate) fn orthonormalize<F: Scalar>(rows: &[&[F]]) -> Vec<Vec<F>> {
    let mut q: Vec<Vec<F>> = Vec::with_capacity(rows.len());
    for row in rows {
        let mut v = row.to_vec();
        let scale = norm_inf(&v).max(F::one());
        for u in &q {
            let c = dot(u, &v);
            axpy(&mut v, -c, u);
        }
        // second pass for stability
        for u in &q {
            let c = dot(u, &v);
            axpy(&mut v, -c, u);
        }
        let n = dot(&v, &v).sqrt();
        if n > F::real(1e-12) * scale {
            let inv = F::one() / n;
            for x in v.iter_mut() {
                *x = *x * inv;
            }
            q.push(v);
        }
    }
    q
}

/// Component of `v` orthogonal to the span of the orthonormal rows `q`.
pub(crate) fn project_out<F: Scalar>(q: &[Vec<F>], v: &[F]) -> Vec<F> {
    let mut r = v.to_vec();
    for u in q {
        let c = dot(u, &r);
        axpy(&mut r, -c, u);
    }
    r
}

/// Orthonormal basis of the orthogonal complement of `span(q)` in `R^p`.
pub(crate) fn null_basis<F: Scalar>(q: &[Vec<F>], p: usize) -> Vec<Vec<F>> {
    let mut basis: Vec<Vec<F>> = Vec::with_capacity(p - q.len());
    for k in 0..p {
        if basis.len() + q.len() == p {
            break;
        }
        let mut e = vec![F::zero(); p];
        e[k] = F::one();
        let mut v = project_out(q, &e);
        for u in &basis {
            let c = dot(u, &v);
            axpy(&mut v, -c, u);
        }
        let n = dot(&v, &v).sqrt();
        if n > F::real(1e-10) {
            let inv = F::one() / n;
            for x in v.iter_mut() {
                *x = *x * inv;
            }
            basis.push(v);
        }
    }
    basis
}

/// Minimum-norm correction `c` with `rows * (b + c) = target`, given the
/// current deficit `target - rows * b`.
pub(crate) fn min_norm_correction<F: Scalar>(rows: &[&[F]], deficit: &[F]) -> Option<Vec<F>> {
    let m = rows.len();
    if m == 0 {
        return Some(vec![]);
    }
    let p = rows[0].len();
    let mut gram = vec![vec![F::zero(); m]; m];
    for i in 0..m {
        for j in 0..m {
            gram[i][j] = dot(rows[i], rows[j]);
        }
    }
    let y = solve(gram, deficit.to_vec())?;
    let mut corr = vec![F::zero(); p];
    for (i, row) in rows.iter().enumerate() {
        axpy(&mut corr, y[i], row);
    }
    Some(corr)
}
