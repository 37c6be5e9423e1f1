//! Small dense linear-algebra helpers shared by the samplers and fitters.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SaeError};

/// Cholesky factor of a symmetric positive-definite matrix, retrying with a
/// growing diagonal ridge when the plain factorization fails.
pub fn cholesky_with_ridge(a: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = a.clone().cholesky() {
        return Ok(c);
    }
    let scale = a.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut ridge = scale * 1e-12;
    for _ in 0..12 {
        let mut b = a.clone();
        for i in 0..b.nrows() {
            b[(i, i)] += ridge;
        }
        if let Some(c) = b.cholesky() {
            return Ok(c);
        }
        ridge *= 10.0;
    }
    Err(SaeError::Numerical(format!(
        "matrix of size {} is not positive definite",
        a.nrows()
    )))
}

/// Draw from N(Q⁻¹ b, Q⁻¹) given the precision Q and the canonical vector b.
pub fn sample_canonical_normal<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    canonical: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = cholesky_with_ridge(precision)?;
    let mean = chol.solve(canonical);
    let l = chol.l();
    let z = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| rng.sample(StandardNormal)));
    // L^T x = z  gives x ~ N(0, Q^{-1})
    let x = l
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| SaeError::Numerical("triangular solve failed".into()))?;
    Ok(mean + x)
}

/// Solve a small symmetric positive-definite system in place with a
/// hand-rolled Cholesky; returns false when the matrix is not positive definite.
///
/// `a` is row-major `n x n` and is overwritten by its lower factor.
pub fn small_cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

/// Solve `L L^T x = b` given the lower factor from [`small_cholesky_in_place`].
pub fn small_cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the n-1 denominator.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(x)) without overflow.
pub fn log1p_exp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}
