//! Matrix-variate distributions for the loadings prior and closed-form moments
//! of the shared variation matrix `Δ = ΛΛᵀ`.
//!
//! Conventions: `Φ` is the among-row scale (p×p), `Ψ` the among-column scale
//! (k×k). Under the matrix normal law `vec(Λ) ~ N(vec(M), Ψ ⊗ Φ)`. The matrix-t
//! law with `ς` degrees of freedom is generated as `Λ = S^{-1/2} X + M` with
//! `S ~ W_p(ς + p − 1, Φ̆⁻¹)` and `X ~ MN(0, I_p, Ψ)`; its standardized row
//! scale is `Φ = Φ̆ / (ς − 2)`.
//!
//! Indices passed to the moment functions are zero-based.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, standard_normal_matrix};

/// Relative eigenvalue floor used when validating positive definiteness.
pub const EIGEN_FLOOR: f64 = 1e-10;
/// Relative asymmetry tolerance used when validating symmetry.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// A validated symmetric positive-definite matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    /// Validate `m`: square, symmetric to [`SYMMETRY_TOL`] relative, smallest
    /// eigenvalue above [`EIGEN_FLOOR`] times the largest.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::Argument(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("matrix has non-finite entries".into()));
        }
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::Domain(format!(
                        "matrix is not symmetric at ({i}, {j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        let m = linalg::symmetrized(&m);
        let eig = linalg::sym_eigen(&m);
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        if max <= 0.0 || min <= EIGEN_FLOOR * max {
            return Err(Error::Domain(format!(
                "matrix is not positive definite: eigenvalue {min:e} (largest {max:e})"
            )));
        }
        Ok(SpdMatrix(m))
    }

    /// Wrap a matrix known to be SPD by construction (it is symmetrized).
    pub(crate) fn new_unchecked(mut m: DMatrix<f64>) -> Self {
        linalg::symmetrize(&mut m);
        SpdMatrix(m)
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if let Some(d) = diag.iter().find(|d| !(**d > 0.0)) {
            return Err(Error::Domain(format!("diagonal entry {d} is not positive")));
        }
        Ok(SpdMatrix(DMatrix::from_diagonal(
            &nalgebra::DVector::from_column_slice(diag),
        )))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn scaled(&self, factor: f64) -> SpdMatrix {
        SpdMatrix(&self.0 * factor)
    }

    /// Symmetric square root.
    pub fn sqrt(&self) -> SpdMatrix {
        SpdMatrix(linalg::sym_apply(&self.0, f64::sqrt))
    }

    /// Symmetric inverse square root.
    pub fn inv_sqrt(&self) -> SpdMatrix {
        SpdMatrix(linalg::sym_apply(&self.0, |v| 1.0 / v.sqrt()))
    }

    pub fn inverse(&self) -> SpdMatrix {
        SpdMatrix(linalg::sym_apply(&self.0, |v| 1.0 / v))
    }

    pub fn cholesky_lower(&self) -> DMatrix<f64> {
        // Validated matrices always factor; fall back to the eigen route on
        // borderline conditioning.
        match nalgebra::Cholesky::new(self.0.clone()) {
            Some(ch) => ch.l(),
            None => linalg::sym_apply(&self.0, |v| v.max(0.0).sqrt()),
        }
    }

    pub fn log_det(&self) -> f64 {
        match nalgebra::Cholesky::new(self.0.clone()) {
            Some(ch) => 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
            None => linalg::sym_eigen(&self.0).eigenvalues.iter().map(|v| v.ln()).sum(),
        }
    }
}

/// Symmetric square root `X` with `X·X = S`.
pub fn sym_sqrt(s: &DMatrix<f64>) -> Result<SpdMatrix> {
    Ok(SpdMatrix::new(s.clone())?.sqrt())
}

#[derive(Clone, Debug)]
pub struct MatrixNormalParams {
    pub location: DMatrix<f64>,
    pub phi: SpdMatrix,
    pub psi: SpdMatrix,
}

impl MatrixNormalParams {
    pub fn new(location: DMatrix<f64>, phi: SpdMatrix, psi: SpdMatrix) -> Result<Self> {
        if location.nrows() != phi.dim() || location.ncols() != psi.dim() {
            return Err(Error::Argument(format!(
                "location is {}x{} but Φ has dimension {} and Ψ has dimension {}",
                location.nrows(),
                location.ncols(),
                phi.dim(),
                psi.dim()
            )));
        }
        Ok(MatrixNormalParams { location, phi, psi })
    }

    pub fn zero_mean(phi: SpdMatrix, psi: SpdMatrix) -> Self {
        let location = DMatrix::zeros(phi.dim(), psi.dim());
        MatrixNormalParams { location, phi, psi }
    }
}

#[derive(Clone, Debug)]
pub struct MatrixTParams {
    pub dof: f64,
    pub location: DMatrix<f64>,
    pub phi_breve: SpdMatrix,
    pub psi: SpdMatrix,
}

impl MatrixTParams {
    pub fn new(dof: f64, location: DMatrix<f64>, phi_breve: SpdMatrix, psi: SpdMatrix) -> Result<Self> {
        if !(dof > 0.0) {
            return Err(Error::Domain(format!("degrees of freedom {dof} must be positive")));
        }
        if location.nrows() != phi_breve.dim() || location.ncols() != psi.dim() {
            return Err(Error::Argument(format!(
                "location is {}x{} but Φ̆ is {}x{} and Ψ is {}x{}",
                location.nrows(),
                location.ncols(),
                phi_breve.dim(),
                phi_breve.dim(),
                psi.dim(),
                psi.dim()
            )));
        }
        Ok(MatrixTParams {
            dof,
            location,
            phi_breve,
            psi,
        })
    }

    /// Standardized row scale `Φ = Φ̆ / (ς − 2)`, defined for `ς > 2`.
    pub fn phi(&self) -> Result<SpdMatrix> {
        if !(self.dof > 2.0) {
            return Err(Error::Domain(format!(
                "standardized scale requires ς > 2, got {}",
                self.dof
            )));
        }
        Ok(self.phi_breve.scaled(1.0 / (self.dof - 2.0)))
    }
}

/// Draw `Λ = M + L_Φ Z L_Ψᵀ`.
pub fn sample_matrix_normal<R: Rng + ?Sized>(params: &MatrixNormalParams, rng: &mut R) -> DMatrix<f64> {
    let p = params.phi.dim();
    let k = params.psi.dim();
    let z = standard_normal_matrix(p, k, rng);
    let l_phi = params.phi.cholesky_lower();
    let l_psi = params.psi.cholesky_lower();
    &params.location + l_phi * z * l_psi.transpose()
}

/// Wishart draw `W_p(q, U)` by the Bartlett decomposition; `E = qU`.
pub fn sample_wishart<R: Rng + ?Sized>(q: f64, scale: &SpdMatrix, rng: &mut R) -> Result<SpdMatrix> {
    let p = scale.dim();
    if !(q > p as f64 - 1.0) {
        return Err(Error::Domain(format!(
            "Wishart degrees of freedom {q} must exceed dim - 1 = {}",
            p - 1
        )));
    }
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let dof = q - i as f64;
        let chi2 = Gamma::new(0.5 * dof, 2.0)
            .map_err(|e| Error::Domain(format!("chi-squared({dof}): {e}")))?
            .sample(rng);
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = scale.cholesky_lower() * a;
    Ok(SpdMatrix::new_unchecked(&la * la.transpose()))
}

/// Draw `Λ = S^{-1/2} X + M` with `S ~ W(ς + p − 1, Φ̆⁻¹)`, `X ~ MN(0, I, Ψ)`.
pub fn sample_matrix_t<R: Rng + ?Sized>(params: &MatrixTParams, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = params.phi_breve.dim();
    let s = sample_wishart(params.dof + p as f64 - 1.0, &params.phi_breve.inverse(), rng)?;
    let x = sample_matrix_normal(
        &MatrixNormalParams::zero_mean(SpdMatrix::identity(p), params.psi.clone()),
        rng,
    );
    Ok(s.inv_sqrt().matrix() * x + &params.location)
}

fn check_scale_dims(phi: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<()> {
    if !phi.is_square() || !psi.is_square() {
        return Err(Error::Argument("scale matrices must be square".into()));
    }
    Ok(())
}

fn check_index(p: usize, idx: &[usize]) -> Result<()> {
    if let Some(i) = idx.iter().find(|i| **i >= p) {
        return Err(Error::Argument(format!("index {i} out of range for dimension {p}")));
    }
    Ok(())
}

fn trace_sq(psi: &DMatrix<f64>) -> f64 {
    (psi * psi).trace()
}

/// `E(Δ) = tr(Ψ) Φ` under the zero-mean matrix normal law.
pub fn delta_mean_mn(phi: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_scale_dims(phi, psi)?;
    Ok(phi * psi.trace())
}

/// `Cov(δᵢⱼ, δₖₗ) = tr(Ψ²)(φᵢₖφⱼₗ + φᵢₗφⱼₖ)` under the zero-mean matrix normal law.
pub fn delta_cov_mn(
    phi: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    i: usize,
    j: usize,
    k: usize,
    l: usize,
) -> Result<f64> {
    check_scale_dims(phi, psi)?;
    check_index(phi.nrows(), &[i, j, k, l])?;
    Ok(trace_sq(psi) * (phi[(i, k)] * phi[(j, l)] + phi[(i, l)] * phi[(j, k)]))
}

/// `E(Δ) = tr(Ψ) Φ̆ / (ς − 2)` under the zero-mean matrix-t law.
pub fn delta_mean_t(dof: f64, phi_breve: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_scale_dims(phi_breve, psi)?;
    if !(dof > 2.0) {
        return Err(Error::Domain(format!("mean undefined for ς = {dof} ≤ 2")));
    }
    Ok(phi_breve * (psi.trace() / (dof - 2.0)))
}

/// `Var(δᵢⱼ)` under the zero-mean matrix-t law, with `phi` the standardized
/// scale `Φ̆/(ς − 2)`. Requires `ς > 4`.
pub fn delta_var_t(dof: f64, phi: &DMatrix<f64>, psi: &DMatrix<f64>, i: usize, j: usize) -> Result<f64> {
    check_scale_dims(phi, psi)?;
    check_index(phi.nrows(), &[i, j])?;
    if !(dof > 4.0) {
        return Err(Error::Domain(format!("variance undefined for ς = {dof} ≤ 4")));
    }
    let tr = psi.trace();
    let col = tr * tr + (dof - 2.0) * trace_sq(psi);
    let row = dof * phi[(i, j)].powi(2) + (dof - 2.0) * phi[(i, i)] * phi[(j, j)];
    Ok(col * row / ((dof - 1.0) * (dof - 4.0)))
}

/// Full `Cov(δᵢⱼ, δₖₗ)` under the zero-mean matrix-t law (standardized `phi`).
///
/// Conditions on `V = S⁻¹`, which is inverse-Wishart, and uses its second
/// moments; reduces to [`delta_var_t`] when `(i,j) = (k,l)`.
pub fn delta_cov_t(
    dof: f64,
    phi: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    i: usize,
    j: usize,
    k: usize,
    l: usize,
) -> Result<f64> {
    check_scale_dims(phi, psi)?;
    check_index(phi.nrows(), &[i, j, k, l])?;
    if !(dof > 4.0) {
        return Err(Error::Domain(format!("covariance undefined for ς = {dof} ≤ 4")));
    }
    let d = (dof - 1.0) * (dof - 4.0);
    let cov_v = |a: usize, b: usize, c: usize, e: usize| {
        (2.0 * phi[(a, b)] * phi[(c, e)]
            + (dof - 2.0) * (phi[(a, c)] * phi[(b, e)] + phi[(a, e)] * phi[(b, c)]))
            / d
    };
    let second = |a: usize, b: usize, c: usize, e: usize| cov_v(a, b, c, e) + phi[(a, b)] * phi[(c, e)];
    let tr = psi.trace();
    Ok(tr * tr * cov_v(i, j, k, l) + trace_sq(psi) * (second(i, k, j, l) + second(i, l, j, k)))
}

/// Moments of `Δ` under a zero-mean matrix normal or matrix-t prior.
#[derive(Clone, Debug)]
pub struct DeltaMoments {
    pub mean: DMatrix<f64>,
    phi: DMatrix<f64>,
    psi: DMatrix<f64>,
    dof: Option<f64>,
}

impl DeltaMoments {
    pub fn matrix_normal(phi: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<Self> {
        Ok(DeltaMoments {
            mean: delta_mean_mn(phi, psi)?,
            phi: phi.clone(),
            psi: psi.clone(),
            dof: None,
        })
    }

    /// Requires `ς > 4` so that every covariance is finite.
    pub fn matrix_t(dof: f64, phi_breve: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<Self> {
        if !(dof > 4.0) {
            return Err(Error::Domain(format!("variance undefined for ς = {dof} ≤ 4")));
        }
        Ok(DeltaMoments {
            mean: delta_mean_t(dof, phi_breve, psi)?,
            phi: phi_breve / (dof - 2.0),
            psi: psi.clone(),
            dof: Some(dof),
        })
    }

    pub fn cov(&self, i: usize, j: usize, k: usize, l: usize) -> Result<f64> {
        match self.dof {
            None => delta_cov_mn(&self.phi, &self.psi, i, j, k, l),
            Some(dof) => delta_cov_t(dof, &self.phi, &self.psi, i, j, k, l),
        }
    }
}

/// `s_k(ς̌) = (1 + 2ς̌){1 + (2 + k)ς̌}/(1 + 3ς̌)`, the variance inflation of the
/// matrix-t prior relative to the matrix normal one.
pub fn scale_factor_sk(k: usize, varsigma_check: f64) -> Result<f64> {
    if !(varsigma_check >= 0.0) || !varsigma_check.is_finite() {
        return Err(Error::Domain(format!(
            "transformed degrees of freedom {varsigma_check} must be non-negative"
        )));
    }
    let v = varsigma_check;
    Ok((1.0 + 2.0 * v) * (1.0 + (2.0 + k as f64) * v) / (1.0 + 3.0 * v))
}

/// Ledermann bound `φ(p) = (2p + 1 − √(8p + 1))/2`.
pub fn ledermann(p: usize) -> Result<f64> {
    if p < 1 {
        return Err(Error::Argument("dimension must be at least 1".into()));
    }
    let p = p as f64;
    Ok((2.0 * p + 1.0 - (8.0 * p + 1.0).sqrt()) / 2.0)
}

/// Largest admissible truncation `⌈φ(p)⌉ − 1`, floored at zero.
pub fn max_truncation(p: usize) -> Result<usize> {
    let bound = ledermann(p)?.ceil() - 1.0;
    Ok(bound.max(0.0) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = standard_normal_matrix(dim, dim, rng);
        &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5
    }

    #[test]
    fn sym_sqrt_simple_cases() {
        let id = sym_sqrt(&DMatrix::identity(3, 3)).unwrap();
        assert!((id.matrix() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-14);
        let d = sym_sqrt(&DMatrix::from_diagonal(&nalgebra::dvector![4.0, 9.0])).unwrap();
        assert!((d.matrix() - DMatrix::from_diagonal(&nalgebra::dvector![2.0, 3.0])).amax() < 1e-14);
    }

    #[test]
    fn sym_sqrt_multiplies_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..100 {
            let dim = 1 + trial % 20;
            let s = random_spd(dim, &mut rng);
            let x = sym_sqrt(&s).unwrap();
            let err = linalg::frobenius(&(x.matrix() * x.matrix() - &s)) / linalg::frobenius(&s);
            assert!(err < 1e-12, "dim {dim}: {err}");
            assert!((x.matrix() - x.matrix().transpose()).amax() < 1e-14);
        }
    }

    #[test]
    fn non_spd_is_rejected_with_eigenvalue() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match sym_sqrt(&m) {
            Err(Error::Domain(msg)) => assert!(msg.contains("eigenvalue"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(SpdMatrix::new(asym).is_err());
    }

    #[test]
    fn wishart_boundary_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_wishart(2.0, &SpdMatrix::identity(3), &mut rng).is_err());
        assert!(sample_wishart(2.0001, &SpdMatrix::identity(3), &mut rng).is_ok());
    }

    #[test]
    fn samplers_are_deterministic() {
        let params = MatrixNormalParams::zero_mean(SpdMatrix::identity(3), SpdMatrix::identity(2));
        let a = sample_matrix_normal(&params, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_matrix_normal(&params, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let t = MatrixTParams::new(6.0, DMatrix::zeros(3, 2), SpdMatrix::identity(3), SpdMatrix::identity(2))
            .unwrap();
        let a = sample_matrix_t(&t, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_matrix_t(&t, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wishart_scalar_is_chi_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_wishart(5.0, &SpdMatrix::identity(1), &mut rng).unwrap().matrix()[(0, 0)])
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - 5.0).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn wishart_mean_is_q_times_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let mut sum = DMatrix::<f64>::zeros(3, 3);
        let mut sumsq = DMatrix::<f64>::zeros(3, 3);
        for _ in 0..n {
            let w = sample_wishart(10.0, &SpdMatrix::identity(3), &mut rng).unwrap().into_inner();
            sumsq += w.component_mul(&w);
            sum += w;
        }
        for i in 0..3 {
            for j in 0..3 {
                let mean = sum[(i, j)] / n as f64;
                let var = sumsq[(i, j)] / n as f64 - mean * mean;
                let se = (var / n as f64).sqrt();
                let target = if i == j { 10.0 } else { 0.0 };
                assert!((mean - target).abs() < 3.0 * se, "({i},{j}) {mean}");
            }
        }
    }

    #[test]
    fn delta_mean_mn_examples() {
        let phi = DMatrix::<f64>::identity(2, 2);
        let psi = DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0]);
        assert_eq!(delta_mean_mn(&phi, &psi).unwrap(), phi * 3.0);
        let psi = DMatrix::<f64>::identity(4, 4) * 0.5;
        assert_eq!(delta_mean_mn(&DMatrix::identity(3, 3), &psi).unwrap(), DMatrix::<f64>::identity(3, 3) * 2.0);
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let psi = DMatrix::from_element(1, 1, 2.0);
        assert_eq!(
            delta_mean_mn(&phi, &psi).unwrap(),
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])
        );
    }

    #[test]
    fn delta_mean_mn_example_matches_monte_carlo() {
        let phi = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let params = MatrixNormalParams::zero_mean(
            SpdMatrix::new(phi).unwrap(),
            SpdMatrix::from_diagonal(&[2.0]).unwrap(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        let mut sum = DMatrix::<f64>::zeros(2, 2);
        let mut sumsq = DMatrix::<f64>::zeros(2, 2);
        for _ in 0..n {
            let l = sample_matrix_normal(&params, &mut rng);
            let d = &l * l.transpose();
            sumsq += d.component_mul(&d);
            sum += d;
        }
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        for i in 0..2 {
            for j in 0..2 {
                let m = sum[(i, j)] / n as f64;
                let se = ((sumsq[(i, j)] / n as f64 - m * m) / n as f64).sqrt();
                assert!((m - expected[(i, j)]).abs() < 3.0 * se);
            }
        }
    }

    #[test]
    fn delta_cov_mn_examples() {
        let phi = DMatrix::<f64>::identity(3, 3);
        for k in 1..4 {
            let psi = DMatrix::<f64>::identity(k, k);
            assert_eq!(delta_cov_mn(&phi, &psi, 0, 0, 0, 0).unwrap(), 2.0 * k as f64);
            assert_eq!(delta_cov_mn(&phi, &psi, 0, 0, 1, 1).unwrap(), 0.0);
        }
        assert!(delta_cov_mn(&phi, &DMatrix::identity(1, 1), 0, 3, 0, 0).is_err());
    }

    #[test]
    fn delta_cov_mn_pair_symmetry_and_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let phi = random_spd(4, &mut rng);
        let psi = DMatrix::from_diagonal(&nalgebra::dvector![1.5, 0.3]);
        let perm = [2usize, 0, 3, 1];
        let permuted = DMatrix::from_fn(4, 4, |a, b| phi[(perm[a], perm[b])]);
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    for l in 0..4 {
                        let v = delta_cov_mn(&phi, &psi, i, j, k, l).unwrap();
                        assert_eq!(v, delta_cov_mn(&phi, &psi, k, l, i, j).unwrap());
                        assert!((v - delta_cov_mn(&phi, &psi, j, i, k, l).unwrap()).abs() < 1e-12);
                        let w = delta_cov_mn(&permuted, &psi, i, j, k, l).unwrap();
                        let v2 = delta_cov_mn(&phi, &psi, perm[i], perm[j], perm[k], perm[l]).unwrap();
                        assert!((w - v2).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn delta_mean_t_examples() {
        let phi_b = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert_eq!(delta_mean_t(3.0, &phi_b, &DMatrix::identity(4, 4)).unwrap(), &phi_b * 4.0);
        let m = delta_mean_t(6.0, &(DMatrix::identity(3, 3) * 4.0), &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(m, DMatrix::<f64>::identity(3, 3) * 2.0);
        assert!(matches!(delta_mean_t(2.0, &phi_b, &DMatrix::identity(1, 1)), Err(Error::Domain(_))));
    }

    #[test]
    fn delta_var_t_examples() {
        let phi = DMatrix::<f64>::identity(2, 2);
        let psi = DMatrix::<f64>::identity(1, 1);
        // Diagonal element: φ₁₁² = 1 enters the row factor.
        assert!((delta_var_t(6.0, &phi, &psi, 0, 0).unwrap() - 5.0).abs() < 1e-12);
        // Off-diagonal element with φ₁₂ = 0.
        assert!((delta_var_t(6.0, &phi, &psi, 0, 1).unwrap() - 2.0).abs() < 1e-12);
        assert!(delta_var_t(4.0, &phi, &psi, 0, 0).is_err());
        for k in 1..4 {
            let psi = DMatrix::<f64>::identity(k, k);
            let v = delta_var_t(1e9, &phi, &psi, 0, 0).unwrap();
            assert!((v - 2.0 * k as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn delta_cov_t_reduces_to_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let phi = random_spd(3, &mut rng);
        let psi = DMatrix::from_diagonal(&nalgebra::dvector![2.0, 0.5]);
        for dof in [4.5, 6.0, 30.0] {
            for i in 0..3 {
                for j in 0..3 {
                    let a = delta_var_t(dof, &phi, &psi, i, j).unwrap();
                    let b = delta_cov_t(dof, &phi, &psi, i, j, i, j).unwrap();
                    assert!((a - b).abs() < 1e-10 * a.abs().max(1.0), "{a} {b}");
                }
            }
        }
    }

    #[test]
    fn scale_factor_values() {
        for k in [1, 5, 10, 40] {
            assert_eq!(scale_factor_sk(k, 0.0).unwrap(), 1.0);
        }
        assert!((scale_factor_sk(5, 1.0).unwrap() - 6.0).abs() < 1e-14);
        assert!(scale_factor_sk(5, -0.1).is_err());
        for k in [1, 5, 10] {
            let grid: Vec<f64> = (0..=50).map(|i| scale_factor_sk(k, i as f64 * 0.1).unwrap()).collect();
            assert!(grid.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn ledermann_values() {
        assert_eq!(max_truncation(50).unwrap(), 40);
        assert_eq!(max_truncation(24).unwrap(), 17);
        assert_eq!(ledermann(1).unwrap(), 0.0);
        assert_eq!(max_truncation(1).unwrap(), 0);
        assert_eq!(max_truncation(12).unwrap(), 7);
        assert!(ledermann(0).is_err());
    }
}
