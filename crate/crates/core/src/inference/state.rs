use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{Dataset, FactorModelSpec, LoadingsPrior, MeanModel, ModelKind, SigmaPrior};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, sample_gaussian, standard_normal_matrix};
use crate::matrix_variate::{sample_wishart, SpdMatrix};
use crate::stationary_var::{build_initial_dist, pac_to_var, PacParams, VarParams};
use crate::structured_prior::{mgp_sample_prior, MgpState, ParamBound, ThetaPrior};

/// Every unknown of the parameter-expanded model at one iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    /// p×H loadings.
    pub lambda: DMatrix<f64>,
    /// Factors, one time point per row: n×H, or (n+m)×H for a VAR(m) with
    /// the m presample factors first.
    pub eta: DMatrix<f64>,
    pub sigma2: DVector<f64>,
    /// p×c regression coefficients, one row per variable.
    pub beta: DMatrix<f64>,
    /// q×c second-level coefficients of the hierarchical mean model.
    pub kappa: Option<DMatrix<f64>>,
    pub theta: Vec<f64>,
    pub mgp: MgpState,
    /// Row precision of the loadings under the matrix-t prior.
    pub s: Option<SpdMatrix>,
    pub varsigma_check: Option<f64>,
    pub pac: Option<PacParams>,
    /// Latent utilities of the probit model, n×p.
    pub z: Option<DMatrix<f64>>,
}

pub(crate) fn gamma_rate<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters").sample(rng)
}

/// `ς = 4 + 1/ς̌`.
pub fn varsigma(varsigma_check: f64) -> f64 {
    4.0 + 1.0 / varsigma_check
}

impl ChainState {
    pub fn h(&self) -> usize {
        self.lambda.ncols()
    }

    pub fn psi(&self) -> Vec<f64> {
        self.mgp.precisions().iter().map(|t| 1.0 / t).collect()
    }

    /// Rows of `eta` aligned with the observations.
    pub fn observed_eta(&self, m: usize) -> DMatrix<f64> {
        self.eta.rows(m, self.eta.nrows() - m).into_owned()
    }

    /// Responses the Gaussian part of the model sees: `Y`, or `Z` for probit.
    pub fn response<'a>(&'a self, data: &'a Dataset) -> &'a DMatrix<f64> {
        self.z.as_ref().unwrap_or(&data.y)
    }

    pub fn var_params(&self) -> Result<Option<VarParams>> {
        self.pac.as_ref().map(pac_to_var).transpose()
    }

    /// A starting point for a fit: ϑ at its default, ρ and Λ drawn from the
    /// prior, unit idiosyncratic variances, zero regression coefficients,
    /// white-noise factor dynamics.
    pub fn initial<R: Rng + ?Sized>(spec: &FactorModelSpec, data: &Dataset, h: usize, rng: &mut R) -> Result<Self> {
        let p = spec.p;
        let n = data.n();
        let m = spec.var_order();
        let theta = spec.phi.default_theta();
        let mgp = mgp_sample_prior(spec.mgp.a1, spec.mgp.a2, h, h, rng)?;
        let phis = spec.phi.build(&theta)?;
        let (s, varsigma_check) = match spec.loadings {
            LoadingsPrior::MatrixNormal => (None, None),
            LoadingsPrior::MatrixT { varsigma_rate } => {
                let vc = 1.0 / varsigma_rate;
                let nu = varsigma(vc) + p as f64 - 1.0;
                let s = phis.xi.scaled(nu / (varsigma(vc) - 2.0));
                (Some(s), Some(vc))
            }
        };
        let psi: Vec<f64> = mgp.precisions().iter().map(|t| 1.0 / t).collect();
        let row_cov = match &s {
            Some(s) => s.inverse(),
            None => phis.phi.clone(),
        };
        let lambda = sample_loadings(&row_cov, &psi, rng)?;
        let sigma2 = DVector::from_element(
            p,
            match spec.sigma {
                SigmaPrior::Fixed { value } => value,
                SigmaPrior::Gamma { .. } => 1.0,
            },
        );
        let c = data.c();
        let beta = DMatrix::zeros(p, c);
        let kappa = matches!(spec.mean, MeanModel::Hierarchical { .. }).then(|| DMatrix::zeros(data.q(), c));
        let pac = (m > 0).then(|| PacParams::zeros(h, m));
        let eta = standard_normal_matrix(n + m, h, rng);
        let z = (spec.kind == ModelKind::Probit)
            .then(|| data.y.map(|v| if v == 1.0 { 0.5 } else { -0.5 }));
        Ok(ChainState { lambda, eta, sigma2, beta, kappa, theta, mgp, s, varsigma_check, pac, z })
    }

    /// One joint draw of every parameter and the factors from the prior.
    /// Observations are not touched; see [`simulate_response`].
    pub fn from_prior<R: Rng + ?Sized>(spec: &FactorModelSpec, data: &Dataset, h: usize, rng: &mut R) -> Result<Self> {
        let p = spec.p;
        let n = data.n();
        let theta = sample_theta_prior(spec, rng);
        let mgp = mgp_sample_prior(spec.mgp.a1, spec.mgp.a2, h, h, rng)?;
        let psi: Vec<f64> = mgp.precisions().iter().map(|t| 1.0 / t).collect();
        let phis = spec.phi.build(&theta)?;
        let (lambda, s, varsigma_check) = match spec.loadings {
            LoadingsPrior::MatrixNormal => (sample_loadings(&phis.phi, &psi, rng)?, None, None),
            LoadingsPrior::MatrixT { varsigma_rate } => {
                let vc = Exp::new(varsigma_rate).expect("positive rate").sample(rng);
                let vs = varsigma(vc);
                let s = sample_wishart(vs + p as f64 - 1.0, &phis.xi.scaled(1.0 / (vs - 2.0)), rng)?;
                let lambda = sample_loadings(&s.inverse(), &psi, rng)?;
                (lambda, Some(s), Some(vc))
            }
        };
        let sigma2 = match spec.sigma {
            SigmaPrior::Fixed { value } => DVector::from_element(p, value),
            SigmaPrior::Gamma { shape, rate } => DVector::from_fn(p, |_, _| 1.0 / gamma_rate(shape, rate, rng)),
        };
        let c = data.c();
        let (beta, kappa) = match spec.mean {
            MeanModel::Constant { prior_var } | MeanModel::Regression { prior_var } => {
                (standard_normal_matrix(p, c, rng) * prior_var.sqrt(), None)
            }
            MeanModel::Hierarchical { s_beta2, s_kappa2 } => {
                let x = data.x.as_ref().ok_or_else(|| Error::Data("hierarchical mean needs X".into()))?;
                let kappa = standard_normal_matrix(data.q(), c, rng) * s_kappa2.sqrt();
                let beta = x * &kappa + standard_normal_matrix(p, c, rng) * s_beta2.sqrt();
                (beta, Some(kappa))
            }
        };
        let (eta, pac) = match spec.kind {
            ModelKind::Dynamic { m } => {
                let pac = PacParams::new((0..m).map(|_| standard_normal_matrix(h, h, rng)).collect())?;
                let eta = simulate_var_path(&pac_to_var(&pac)?, n, rng)?;
                (eta, Some(pac))
            }
            _ => (standard_normal_matrix(n, h, rng), None),
        };
        let mut state = ChainState { lambda, eta, sigma2, beta, kappa, theta, mgp, s, varsigma_check, pac, z: None };
        if spec.kind == ModelKind::Probit {
            state.z = Some(DMatrix::zeros(n, p));
        }
        Ok(state)
    }

    /// Structural checks on the state's invariants.
    pub fn validate(&self, spec: &FactorModelSpec, data: &Dataset) -> Result<()> {
        let h = self.h();
        let m = spec.var_order();
        let bad = |what: &str| Err(Error::State(what.to_string()));
        if self.lambda.nrows() != spec.p || h == 0 || self.mgp.h() != h {
            return bad("loadings and MGP truncation disagree");
        }
        if self.eta.nrows() != data.n() + m || self.eta.ncols() != h {
            return bad("factor matrix has the wrong shape");
        }
        self.mgp.validate()?;
        if self.sigma2.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("non-positive idiosyncratic variance");
        }
        if let Some(vc) = self.varsigma_check {
            if !(vc > 0.0 && vc.is_finite()) {
                return bad("ς̌ must be positive");
            }
        }
        if let Some(pac) = &self.pac {
            if pac.k() != h || pac.m() != m {
                return bad("VAR parameters have the wrong dimension");
            }
        }
        if let Some(z) = &self.z {
            for t in 0..data.n() {
                for j in 0..data.p() {
                    if (z[(t, j)] > 0.0) != (data.y[(t, j)] == 1.0) {
                        return Err(Error::State(format!("latent utility ({t}, {j}) has the wrong sign")));
                    }
                }
            }
        }
        Ok(())
    }
}

fn sample_theta_prior<R: Rng + ?Sized>(spec: &FactorModelSpec, rng: &mut R) -> Vec<f64> {
    spec.phi
        .bounds()
        .iter()
        .zip(&spec.theta_priors)
        .map(|(b, prior)| match (prior, b) {
            (ThetaPrior::LogNormal { mean, var }, _) => {
                Normal::new(*mean, var.sqrt()).expect("valid normal").sample(rng).exp()
            }
            (ThetaPrior::Uniform, ParamBound::Interval(lo, hi)) => loop {
                let v = lo + (hi - lo) * rng.random::<f64>();
                if v > *lo {
                    break v;
                }
            },
            (ThetaPrior::Uniform, ParamBound::Positive) => unreachable!("validated spec"),
        })
        .collect()
}

/// `Λ ~ N(0, rowcov, diag ψ)`.
pub(crate) fn sample_loadings<R: Rng + ?Sized>(row_cov: &SpdMatrix, psi: &[f64], rng: &mut R) -> Result<DMatrix<f64>> {
    let l = row_cov.cholesky_lower();
    let mut x = standard_normal_matrix(row_cov.dim(), psi.len(), rng);
    for (j, ps) in psi.iter().enumerate() {
        x.column_mut(j).scale_mut(ps.sqrt());
    }
    Ok(l * x)
}

/// Simulate `η_{1−m}, …, η_n` from the stationary VAR, presample first.
pub fn simulate_var_path<R: Rng + ?Sized>(var: &VarParams, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let k = var.k();
    let m = var.m();
    let init = build_initial_dist(var)?;
    let x0 = sample_gaussian(&DVector::zeros(k * m), init.g.matrix(), "var_simulation", rng)?;
    let mut eta = DMatrix::zeros(n + m, k);
    for i in 0..m {
        eta.row_mut(i).copy_from(&x0.rows(i * k, k).transpose());
    }
    let chol = cholesky(var.pi.matrix(), "var_simulation")?;
    let l = chol.l();
    for t in m..(n + m) {
        let mut next = &l * DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
        for (i, g) in var.gamma.iter().enumerate() {
            next += g * eta.row(t - 1 - i).transpose();
        }
        eta.row_mut(t).copy_from(&next.transpose());
    }
    Ok(eta)
}

/// Draw responses given every parameter and factor: `Y` for Gaussian
/// models; for probit the latent `Z` is refreshed in the state and its signs
/// are returned.
pub fn simulate_response<R: Rng + ?Sized>(
    spec: &FactorModelSpec,
    state: &mut ChainState,
    w: &DMatrix<f64>,
    rng: &mut R,
) -> DMatrix<f64> {
    let m = spec.var_order();
    let eta = state.observed_eta(m);
    let n = eta.nrows();
    let mut y = w * state.beta.transpose() + eta * state.lambda.transpose();
    for t in 0..n {
        for j in 0..spec.p {
            y[(t, j)] += state.sigma2[j].sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
    }
    if spec.kind == ModelKind::Probit {
        let signs = y.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
        state.z = Some(y);
        signs
    } else {
        y
    }
}
