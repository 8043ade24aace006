//! Small dense helpers: Cholesky factorization and power iteration.

use crate::scalar::{dot, Scalar};

/// Row-major symmetric `d × d` matrix–vector product.
pub(crate) fn sym_matvec<T: Scalar>(a: &[T], d: usize, v: &[T]) -> Vec<T> {
    (0..d).map(|i| dot(&a[i * d..(i + 1) * d], v)).collect()
}

/// Lower-triangular Cholesky factor of a row-major s.p.d. matrix, or `None`
/// when a pivot is not strictly positive.
pub(crate) fn cholesky<T: Scalar>(a: &[T], d: usize) -> Option<Vec<T>> {
    let mut l = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..=i {
            let s = a[i * d + j] - dot(&l[i * d..i * d + j], &l[j * d..j * d + j]);
            if i == j {
                if !(s > T::zero()) || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b`.
pub(crate) fn cholesky_solve<T: Scalar>(l: &[T], d: usize, b: &[T]) -> Vec<T> {
    let mut y = vec![T::zero(); d];
    for i in 0..d {
        let s = b[i] - dot(&l[i * d..i * d + i], &y[..i]);
        y[i] = s / l[i * d + i];
    }
    let mut x = vec![T::zero(); d];
    for i in (0..d).rev() {
        let mut s = y[i];
        for k in i + 1..d {
            s -= l[k * d + i] * x[k];
        }
        x[i] = s / l[i * d + i];
    }
    x
}

/// Dominant eigenvalue of a symmetric positive semi-definite operator.
///
/// Stops once the relative Rayleigh-quotient change drops below `tol` and the
/// relative residual `‖Av − λv‖/λ` below `√tol`, or after `max_iter` steps.
pub(crate) fn power_iteration<T: Scalar>(
    d: usize,
    mut apply: impl FnMut(&[T]) -> Vec<T>,
    tol: T,
    max_iter: usize,
) -> T {
    // Deterministic start with no special alignment to coordinate axes.
    let mut v: Vec<T> = (0..d)
        .map(|i| T::one() + T::lit(0.5) * T::from_count(i % 7) / T::lit(7.0))
        .collect();
    normalize(&mut v);
    let mut lambda = T::zero();
    let res_tol = tol.sqrt();
    for _ in 0..max_iter {
        let w = apply(&v);
        let next = dot(&v, &w);
        let mut res = T::zero();
        for (wi, vi) in w.iter().zip(&v) {
            let e = *wi - next * *vi;
            res += e * e;
        }
        let res = res.sqrt();
        let change = (next - lambda).abs();
        lambda = next;
        if lambda <= T::zero() {
            return T::zero();
        }
        if change <= tol * lambda && res <= res_tol * lambda {
            break;
        }
        v = w;
        normalize(&mut v);
    }
    lambda
}

fn normalize<T: Scalar>(v: &mut [T]) {
    let n = dot(v, v).sqrt();
    if n > T::zero() {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
