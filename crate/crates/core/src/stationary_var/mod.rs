//! Stationary VAR(m) factor dynamics parameterized by unconstrained matrices.
//!
//! Each `Aᵢ` maps to a partial autocorrelation `Pᵢ` with singular values below
//! one; a Levinson-type recursion then yields coefficients `Γᵢ` and innovation
//! variance `Π` whose process has unit stationary variance. Every real `Aᵢ`
//! gives a stable process, so samplers can move freely in `A`-space.

mod dual;

pub use dual::{DualMat, DualScalar};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, sym_apply, symmetrize};
use crate::matrix_variate::SpdMatrix;

/// Stability threshold on the companion spectral radius.
pub const STABILITY_MARGIN: f64 = 1e-12;

const BLOCK: &str = "pac_to_var";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacParams {
    pub a: Vec<DMatrix<f64>>,
}

impl PacParams {
    pub fn new(a: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = a.first() else {
            return Err(Error::Argument("VAR order must be at least 1".into()));
        };
        let k = first.nrows();
        for (i, ai) in a.iter().enumerate() {
            if ai.nrows() != k || ai.ncols() != k {
                return Err(Error::Argument(format!(
                    "A[{}] is {}x{}, expected {k}x{k}",
                    i + 1,
                    ai.nrows(),
                    ai.ncols()
                )));
            }
            if ai.iter().any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("A[{}] has non-finite entries", i + 1)));
            }
        }
        Ok(PacParams { a })
    }

    pub fn zeros(k: usize, m: usize) -> Self {
        PacParams { a: vec![DMatrix::zeros(k, k); m] }
    }

    pub fn m(&self) -> usize {
        self.a.len()
    }

    pub fn k(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn p(&self) -> Vec<DMatrix<f64>> {
        self.a.iter().map(a_to_p).collect()
    }

    pub fn from_p(p: &[DMatrix<f64>]) -> Result<Self> {
        Self::new(p.iter().map(p_to_a).collect::<Result<_>>()?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarParams {
    /// `Γ₁..Γ_m`.
    pub gamma: Vec<DMatrix<f64>>,
    pub pi: SpdMatrix,
    /// `G₀..G_{m−1}` with `G_d = Cov(η_t, η_{t+d})` and `G₀ = I`.
    pub autocov: Vec<DMatrix<f64>>,
}

impl VarParams {
    pub fn m(&self) -> usize {
        self.gamma.len()
    }

    pub fn k(&self) -> usize {
        self.pi.dim()
    }
}

/// Covariance of the `m` presample factors `(η_{1−m}, …, η₀)` stacked in time
/// order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialDist {
    pub k: usize,
    pub m: usize,
    pub g: SpdMatrix,
}

/// `P = (I + AAᵀ)^{−1/2} A`.
pub fn a_to_p(a: &DMatrix<f64>) -> DMatrix<f64> {
    let k = a.nrows();
    let m = DMatrix::identity(k, k) + a * a.transpose();
    sym_apply(&m, |l| 1.0 / l.sqrt()) * a
}

/// `A = (I − PPᵀ)^{−1/2} P`; requires every singular value of `P` below one.
pub fn p_to_a(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = spectral_norm(p);
    if !(s < 1.0) {
        return Err(Error::Domain(format!("largest singular value {s} of P is not below 1")));
    }
    let k = p.nrows();
    let m = DMatrix::identity(k, k) - p * p.transpose();
    Ok(sym_apply(&m, |l| 1.0 / l.sqrt()) * p)
}

/// Differentiable `A ↦ P`.
pub fn a_to_p_dual(a: &DualMat) -> Result<DualMat> {
    let k = a.v.nrows();
    let mut m = &DualMat::identity(k, a.n_dir()) + &(a * &a.transpose());
    m.symmetrize();
    Ok(&m.sym_inv_sqrt(BLOCK)? * a)
}

/// Output of the differentiable recursion: coefficients, innovation variance
/// and the lagged covariances `E[η_{t+h} η_tᵀ]` for `h = 0..m`.
#[derive(Clone, Debug)]
pub struct DualVar {
    pub gamma: Vec<DualMat>,
    pub pi: DualMat,
    pub lagged: Vec<DualMat>,
}

impl DualVar {
    /// `G_d = Cov(η_t, η_{t+d})` for `d = 0..m−1`.
    pub fn autocov(&self, d: usize) -> DualMat {
        self.lagged[d].transpose()
    }

    /// The stationary presample covariance, block `(i, j)` = `G_{j−i}`.
    pub fn initial_cov(&self) -> DualMat {
        let m = self.gamma.len();
        let k = self.pi.v.nrows();
        let n_dir = self.pi.n_dir();
        let mut g = DualMat::constant(DMatrix::zeros(k * m, k * m), n_dir);
        for i in 0..m {
            for j in 0..m {
                let block = if j >= i { self.autocov(j - i) } else { self.autocov(i - j).transpose() };
                g.v.view_mut((i * k, j * k), (k, k)).copy_from(&block.v);
                for (gd, bd) in g.d.iter_mut().zip(&block.d) {
                    gd.view_mut((i * k, j * k), (k, k)).copy_from(bd);
                }
            }
        }
        g.symmetrize();
        g
    }
}

/// Map partial autocorrelations to VAR parameters with unit stationary
/// variance, carrying tangents. Forward and backward prediction-error
/// variances `Σ_s`, `Σ*_s` start at `I` and shrink through
/// `Σ_{s+1} = Σ_s − φ Σ*_s φᵀ`.
pub fn p_to_var_dual(p: &[DualMat]) -> Result<DualVar> {
    let k = p[0].v.nrows();
    let n_dir = p[0].n_dir();
    let mut sigma = DualMat::identity(k, n_dir);
    let mut sigma_star = DualMat::identity(k, n_dir);
    let mut phi: Vec<DualMat> = Vec::with_capacity(p.len());
    let mut phi_star: Vec<DualMat> = Vec::with_capacity(p.len());
    let mut lagged = vec![DualMat::identity(k, n_dir)];

    for (s, ps) in p.iter().enumerate() {
        let root = sigma.sym_sqrt(BLOCK)?;
        let root_inv = sigma.sym_inv_sqrt(BLOCK)?;
        let root_star = sigma_star.sym_sqrt(BLOCK)?;
        let root_star_inv = sigma_star.sym_inv_sqrt(BLOCK)?;
        let lead = &(&root * ps) * &root_star_inv;
        let lead_star = &(&root_star * &ps.transpose()) * &root_inv;

        let mut next_lag = &lead * &sigma_star;
        for i in 1..=s {
            next_lag = &next_lag + &(&phi[i - 1] * &lagged[s + 1 - i]);
        }
        lagged.push(next_lag);

        let new_phi: Vec<DualMat> = (1..=s).map(|i| &phi[i - 1] - &(&lead * &phi_star[s - i])).collect();
        let new_phi_star: Vec<DualMat> = (1..=s).map(|i| &phi_star[i - 1] - &(&lead_star * &phi[s - i])).collect();

        let mut next_sigma = &sigma - &(&(&lead * &sigma_star) * &lead.transpose());
        let mut next_sigma_star = &sigma_star - &(&(&lead_star * &sigma) * &lead_star.transpose());
        next_sigma.symmetrize();
        next_sigma_star.symmetrize();

        phi = new_phi;
        phi.push(lead);
        phi_star = new_phi_star;
        phi_star.push(lead_star);
        sigma = next_sigma;
        sigma_star = next_sigma_star;
    }
    Ok(DualVar { gamma: phi, pi: sigma, lagged })
}

pub fn pac_to_var(pac: &PacParams) -> Result<VarParams> {
    let p: Vec<DualMat> = pac.p().into_iter().map(|p| DualMat::constant(p, 0)).collect();
    let out = p_to_var_dual(&p)?;
    let m = pac.m();
    Ok(VarParams {
        gamma: out.gamma.iter().map(|g| g.v.clone()).collect(),
        pi: SpdMatrix::new(out.pi.v.clone()).map_err(|e| Error::numerical(BLOCK, format!("innovation variance: {e}")))?,
        autocov: (0..m).map(|d| out.autocov(d).v).collect(),
    })
}

/// The `km×km` companion matrix of `η_t = Σ Γᵢ η_{t−i} + ε_t`.
pub fn companion_matrix(gamma: &[DMatrix<f64>]) -> DMatrix<f64> {
    let m = gamma.len();
    let k = gamma.first().map_or(0, |g| g.nrows());
    let mut c = DMatrix::zeros(k * m, k * m);
    for (i, g) in gamma.iter().enumerate() {
        c.view_mut((0, i * k), (k, k)).copy_from(g);
    }
    for i in 1..m {
        c.view_mut((i * k, (i - 1) * k), (k, k)).fill_with_identity();
    }
    c
}

pub fn companion_spectral_radius(gamma: &[DMatrix<f64>]) -> f64 {
    let c = companion_matrix(gamma);
    if c.is_empty() {
        return 0.0;
    }
    c.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn is_stationary(gamma: &[DMatrix<f64>]) -> bool {
    companion_spectral_radius(gamma) < 1.0 - STABILITY_MARGIN
}

/// Stationary covariance of the companion state, solving `V = CVCᵀ + Q` by
/// the doubling iteration `V ← V + A V Aᵀ`, `A ← A²`.
pub fn companion_stationary_cov(gamma: &[DMatrix<f64>], pi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !is_stationary(gamma) {
        return Err(Error::Domain("VAR coefficients are not stationary".into()));
    }
    let k = pi.nrows();
    let c = companion_matrix(gamma);
    let mut v = DMatrix::zeros(c.nrows(), c.nrows());
    v.view_mut((0, 0), (k, k)).copy_from(pi);
    let mut a = c;
    for _ in 0..200 {
        let inc = &a * &v * a.transpose();
        v += &inc;
        symmetrize(&mut v);
        if inc.amax() <= 1e-16 * v.amax() {
            return Ok(v);
        }
        a = &a * &a;
    }
    Err(Error::numerical("lyapunov", "doubling iteration did not converge"))
}

pub fn build_initial_dist(var: &VarParams) -> Result<InitialDist> {
    if !is_stationary(&var.gamma) {
        return Err(Error::Domain("VAR coefficients are not stationary".into()));
    }
    let m = var.m();
    let k = var.k();
    let mut g = DMatrix::zeros(k * m, k * m);
    for i in 0..m {
        for j in 0..m {
            let block = if j >= i { var.autocov[j - i].clone() } else { var.autocov[i - j].transpose() };
            g.view_mut((i * k, j * k), (k, k)).copy_from(&block);
        }
    }
    let g = SpdMatrix::new(g).map_err(|e| Error::Domain(format!("initial covariance: {e}")))?;
    Ok(InitialDist { k, m, g })
}

/// Covariance of the companion state `(η₀, η₋₁, …, η_{1−m})`: the initial
/// covariance `G` with its block order reversed.
pub fn companion_initial_cov(var: &VarParams) -> Result<DMatrix<f64>> {
    let g = build_initial_dist(var)?.g.into_inner();
    let k = var.k();
    let m = var.m();
    Ok(DMatrix::from_fn(k * m, k * m, |i, j| {
        let (bi, bj) = (m - 1 - i / k, m - 1 - j / k);
        g[(bi * k + i % k, bj * k + j % k)]
    }))
}

/// Pieces of the parameter-expanded state that transform under a change of
/// factor basis. Factors are stored one time point per row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExpansionPieces {
    pub lambda: Option<DMatrix<f64>>,
    pub eta: Option<DMatrix<f64>>,
    pub gamma: Vec<DMatrix<f64>>,
    pub pi: Option<DMatrix<f64>>,
    pub a: Vec<DMatrix<f64>>,
}

/// Apply `Λ = Λ̃Q`, `η_t = Qᵀη̃_t`, `Γᵢ = QᵀΓ̃ᵢQ`, `Π = QᵀΠ̃Q`, `Aᵢ = QᵀÃᵢQ`.
pub fn rotate_expansion(q: &DMatrix<f64>, pieces: &ExpansionPieces) -> Result<ExpansionPieces> {
    let k = q.nrows();
    if q.ncols() != k {
        return Err(Error::Argument(format!("rotation is {}x{}", k, q.ncols())));
    }
    let err = (q.transpose() * q - DMatrix::identity(k, k)).amax();
    if err > 1e-10 {
        return Err(Error::Argument(format!("rotation is not orthogonal (max |QᵀQ − I| = {err:e})")));
    }
    let conj = |m: &DMatrix<f64>| q.transpose() * m * q;
    let mut pi = pieces.pi.as_ref().map(conj);
    if let Some(p) = pi.as_mut() {
        symmetrize(p);
    }
    Ok(ExpansionPieces {
        lambda: pieces.lambda.as_ref().map(|l| l * q),
        eta: pieces.eta.as_ref().map(|e| e * q),
        gamma: pieces.gamma.iter().map(conj).collect(),
        pi,
        a: pieces.a.iter().map(conj).collect(),
    })
}

/// Gaussian log-likelihood of `y_t = Λη_t + ε_t`, `ε_t ~ N(0, diag σ²)`,
/// for observations `y` already centred by the mean model.
pub fn observation_loglik(y: &DMatrix<f64>, lambda: &DMatrix<f64>, eta: &DMatrix<f64>, sigma2: &DVector<f64>) -> f64 {
    let fitted = eta * lambda.transpose();
    let mut ll = 0.0;
    for t in 0..y.nrows() {
        for i in 0..y.ncols() {
            let r = y[(t, i)] - fitted[(t, i)];
            ll -= 0.5 * ((2.0 * std::f64::consts::PI * sigma2[i]).ln() + r * r / sigma2[i]);
        }
    }
    ll
}
