//! Dense complex matrix helpers shared by the channel, receiver and sensing
//! modules.
//!
//! Large complex products are evaluated as four real products so that the
//! cache-blocked `f64` kernel behind nalgebra does the heavy lifting.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;

/// Products with fewer multiply-adds than this use the direct complex loop.
const SPLIT_THRESHOLD: usize = 32 * 32 * 32;

#[inline]
pub fn cis(theta: f64) -> Complex64 {
    Complex64::from_polar(1.0, theta)
}

/// Unitary `n`-point DFT matrix, `F[k, m] = exp(-j 2 pi k m / n) / sqrt(n)`.
pub fn dft_matrix(n: usize) -> CMat {
    let scale = 1.0 / (n as f64).sqrt();
    CMat::from_fn(n, n, |k, m| cis(-2.0 * PI * ((k * m) % n) as f64 / n as f64) * scale)
}

fn split(a: &CMat) -> (DMatrix<f64>, DMatrix<f64>) {
    (a.map(|z| z.re), a.map(|z| z.im))
}

fn join(re: DMatrix<f64>, im: DMatrix<f64>) -> CMat {
    re.zip_map(&im, Complex64::new)
}

/// `a * b`.
pub fn matmul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.ncols(), b.nrows(), "matmul shape mismatch");
    if a.nrows() * a.ncols() * b.ncols() < SPLIT_THRESHOLD {
        return a * b;
    }
    let (ar, ai) = split(a);
    let (br, bi) = split(b);
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    join(re, im)
}

/// `a * a^H`, Hermitian by construction.
pub fn outer_gram(a: &CMat) -> CMat {
    if a.nrows() * a.nrows() * a.ncols() < SPLIT_THRESHOLD {
        return a * a.adjoint();
    }
    let (ar, ai) = split(a);
    let re = &ar * ar.transpose() + &ai * ai.transpose();
    let im = &ai * ar.transpose() - &ar * ai.transpose();
    join(re, im)
}

/// `a^H * a`, Hermitian by construction.
pub fn inner_gram(a: &CMat) -> CMat {
    if a.ncols() * a.ncols() * a.nrows() < SPLIT_THRESHOLD {
        return a.adjoint() * a;
    }
    let (ar, ai) = split(a);
    let re = ar.transpose() * &ar + ai.transpose() * &ai;
    let im = ar.transpose() * &ai - ai.transpose() * &ar;
    join(re, im)
}

/// `a^H * x` for a vector `x`.
pub fn adjoint_mul_vec(a: &CMat, x: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(a.nrows(), x.len());
    a.column_iter()
        .map(|col| col.iter().zip(x).map(|(c, v)| c.conj() * v).sum())
        .collect()
}

/// `a * x` for a vector `x`.
pub fn mul_vec(a: &CMat, x: &[Complex64]) -> Vec<Complex64> {
    assert_eq!(a.ncols(), x.len());
    let mut out = vec![Complex64::new(0.0, 0.0); a.nrows()];
    for (col, xv) in a.column_iter().zip(x) {
        if *xv == Complex64::new(0.0, 0.0) {
            continue;
        }
        for (o, c) in out.iter_mut().zip(col.iter()) {
            *o += c * xv;
        }
    }
    out
}

pub fn norm_sqr(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}

/// `<a, b> = a^H b`.
pub fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Largest entrywise modulus of `a - b`.
pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_matrix(rows: usize, cols: usize, salt: usize) -> CMat {
        CMat::from_fn(rows, cols, |i, j| {
            Complex64::new(
                ((i * 7 + j * 3 + salt) % 11) as f64 - 5.0,
                ((i * 5 + j + 2 * salt) % 7) as f64 - 3.0,
            )
        })
    }

    #[test]
    fn split_products_match_direct() {
        let a = test_matrix(70, 40, 1);
        let b = test_matrix(40, 50, 2);
        assert!(max_abs_diff(&matmul(&a, &b), &(&a * &b)) < 1e-9);
        assert!(max_abs_diff(&outer_gram(&a), &(&a * a.adjoint())) < 1e-9);
        assert!(max_abs_diff(&inner_gram(&a), &(a.adjoint() * &a)) < 1e-9);
    }

    #[test]
    fn dft_is_unitary() {
        for n in [1, 2, 5, 16] {
            let f = dft_matrix(n);
            let id = CMat::identity(n, n);
            assert!(max_abs_diff(&(f.adjoint() * &f), &id) < 1e-12);
            // symmetric
            assert!(max_abs_diff(&f.transpose(), &f) < 1e-15);
        }
    }

    #[test]
    fn vector_helpers() {
        let a = test_matrix(6, 4, 3);
        let x: Vec<Complex64> = (0..4).map(|k| Complex64::new(k as f64, 1.0)).collect();
        let y = mul_vec(&a, &x);
        let direct = &a * nalgebra::DVector::from_vec(x.clone());
        for (u, v) in y.iter().zip(direct.iter()) {
            assert!((u - v).norm() < 1e-12);
        }
        let z = adjoint_mul_vec(&a, &y);
        let direct = a.adjoint() * nalgebra::DVector::from_vec(y.clone());
        for (u, v) in z.iter().zip(direct.iter()) {
            assert!((u - v).norm() < 1e-9);
        }
    }
}
