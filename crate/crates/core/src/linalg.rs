//! Small dense linear-algebra helpers shared by the samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Replace `m` by `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    symmetrize(&mut out);
    out
}

pub fn cholesky(m: &DMatrix<f64>, block: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrized(m))
        .ok_or_else(|| Error::numerical(block, "matrix is not positive definite"))
}

pub fn logdet_spd(m: &DMatrix<f64>, block: &str) -> Result<f64> {
    let ch = cholesky(m, block)?;
    Ok(2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

pub fn inverse_spd(m: &DMatrix<f64>, block: &str) -> Result<DMatrix<f64>> {
    let mut inv = cholesky(m, block)?.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Eigendecomposition of the symmetric part of `m`.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, Dyn> {
    SymmetricEigen::new(symmetrized(m))
}

/// Apply a scalar function to a symmetric matrix through its spectrum.
pub fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = sym_eigen(m);
    let v = &eig.eigenvectors;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    let mut out = v * d * v.transpose();
    symmetrize(&mut out);
    out
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Draw from `N(Q⁻¹b, Q⁻¹)` given the precision `Q` and linear term `b`.
pub fn sample_gaussian_canonical<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
    block: &str,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let ch = cholesky(precision, block)?;
    let mean = ch.solve(linear);
    let z = standard_normal_vector(linear.len(), rng);
    let l = ch.l();
    let noise = l
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::numerical(block, "singular Cholesky factor"))?;
    Ok(mean + noise)
}

/// Draw from `N(mean, cov)`; `cov` must be positive definite.
pub fn sample_gaussian<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    block: &str,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let ch = cholesky(cov, block)?;
    let z = standard_normal_vector(mean.len(), rng);
    Ok(mean + ch.l() * z)
}

/// Log density of `N(0, cov)` at `x`.
pub fn log_mvn_zero(x: &DVector<f64>, cov: &DMatrix<f64>, block: &str) -> Result<f64> {
    let ch = cholesky(cov, block)?;
    let logdet = 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let sol = ch.solve(x);
    let n = x.len() as f64;
    Ok(-0.5 * (n * (2.0 * std::f64::consts::PI).ln() + logdet + x.dot(&sol)))
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(0.0_f64, f64::max)
}

pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Natural log of the multivariate gamma function Γ_p(a).
pub fn ln_multigamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    let mut s = 0.25 * pf * (pf - 1.0) * std::f64::consts::PI.ln();
    for j in 0..p {
        s += statrs::function::gamma::ln_gamma(a - 0.5 * j as f64);
    }
    s
}

/// Remove the listed rows and columns (sorted, unique) from a square matrix.
pub fn remove_rows_cols(m: &DMatrix<f64>, drop: &[usize]) -> DMatrix<f64> {
    let keep: Vec<usize> = (0..m.nrows()).filter(|i| !drop.contains(i)).collect();
    DMatrix::from_fn(keep.len(), keep.len(), |i, j| m[(keep[i], keep[j])])
}

pub fn select_columns(m: &DMatrix<f64>, keep: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), keep.len(), |i, j| m[(i, keep[j])])
}
