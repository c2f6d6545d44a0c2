//! Full conditional updates of the Gibbs sampler.
//!
//! Write `R` for the row precision of the loadings prior (`Φ⁻¹` under the
//! matrix normal, `S` under the matrix-t given its Wishart variable) and
//! `Ψ = diag(ψ)`. The prior density of `Λ` is then proportional to
//! `|R|^{H/2} |Ψ|^{−p/2} exp{−½ tr(Ψ⁻¹ΛᵀRΛ)}`, which gives every conditional
//! below by completing the square or reading off a gamma/Wishart kernel.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use super::model::{Dataset, FactorModelSpec, LoadingsPrior, MeanModel, SigmaPrior};
use super::state::{gamma_rate, varsigma, ChainState};
use crate::error::{Error, Result};
use crate::linalg::{cholesky, ln_multigamma, logdet_spd, sample_gaussian_canonical, symmetrize};
use crate::matrix_variate::{sample_wishart, SpdMatrix};
use crate::structured_prior::PhiMatrices;

/// Row precision `R` of the loadings prior.
pub fn row_precision(state: &ChainState, phis: &PhiMatrices) -> DMatrix<f64> {
    match &state.s {
        Some(s) => s.matrix().clone(),
        None => phis.xi.matrix().clone(),
    }
}

/// Residual responses after removing the mean: `Y − WBᵀ` (or `Z − WBᵀ`).
fn centred(state: &ChainState, data: &Dataset) -> DMatrix<f64> {
    state.response(data) - &data.w * state.beta.transpose()
}

/// Λ one row at a time. For row `i` the prior contributes precision
/// `Rᵢᵢ Ψ⁻¹` and linear term `−Ψ⁻¹ Σ_{j≠i} Rᵢⱼ λⱼ`; the likelihood adds
/// `ηᵀη/σᵢ²` and `ηᵀrᵢ/σᵢ²`.
pub fn update_lambda<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &Dataset,
    spec: &FactorModelSpec,
    phis: &PhiMatrices,
    rng: &mut R,
) -> Result<()> {
    let p = spec.p;
    let h = state.h();
    let prec_row = row_precision(state, phis);
    let psi_inv = DVector::from_vec(state.mgp.precisions());
    let eta = state.observed_eta(spec.var_order());
    let ete = eta.transpose() * &eta;
    let etr = eta.transpose() * centred(state, data);
    for i in 0..p {
        let s2 = state.sigma2[i];
        let mut prec = &ete / s2;
        for j in 0..h {
            prec[(j, j)] += prec_row[(i, i)] * psi_inv[j];
        }
        let mut coupling = DVector::zeros(h);
        for k in 0..p {
            let r = prec_row[(i, k)];
            if k != i && r != 0.0 {
                coupling += state.lambda.row(k).transpose() * r;
            }
        }
        let lin = etr.column(i) / s2 - coupling.component_mul(&psi_inv);
        let draw = sample_gaussian_canonical(&prec, &lin, "lambda", rng)?;
        state.lambda.row_mut(i).copy_from(&draw.transpose());
    }
    Ok(())
}

/// Independent factors: `ηₜ ~ N(V ΛᵀΣ⁻¹rₜ, V)` with `V⁻¹ = I + ΛᵀΣ⁻¹Λ`.
pub fn update_eta_static<R: Rng + ?Sized>(state: &mut ChainState, data: &Dataset, rng: &mut R) -> Result<()> {
    let h = state.h();
    let n = data.n();
    let mut lt_sinv = state.lambda.transpose();
    for (j, mut col) in lt_sinv.column_iter_mut().enumerate() {
        col /= state.sigma2[j];
    }
    let mut prec = &lt_sinv * &state.lambda;
    for j in 0..h {
        prec[(j, j)] += 1.0;
    }
    let chol = cholesky(&prec, "eta")?;
    let lin = &lt_sinv * centred(state, data).transpose();
    let mean = chol.solve(&lin);
    let z = DMatrix::from_fn(h, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::numerical("eta", "singular Cholesky factor"))?;
    state.eta = (mean + noise).transpose();
    Ok(())
}

/// `σᵢ⁻² ~ Gam(a + n/2, b + ½ Σₜ (rₜᵢ − λᵢᵀηₜ)²)`.
pub fn update_sigma<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &Dataset,
    spec: &FactorModelSpec,
    rng: &mut R,
) -> Result<()> {
    let SigmaPrior::Gamma { shape, rate } = spec.sigma else {
        return Ok(());
    };
    let eta = state.observed_eta(spec.var_order());
    let resid = centred(state, data) - eta * state.lambda.transpose();
    let n = data.n() as f64;
    for i in 0..spec.p {
        let ss = resid.column(i).norm_squared();
        let prec = gamma_rate(shape + 0.5 * n, rate + 0.5 * ss, rng);
        if !(prec > 0.0 && prec.is_finite()) {
            return Err(Error::numerical("sigma", format!("precision draw {prec} for variable {i}")));
        }
        state.sigma2[i] = 1.0 / prec;
    }
    Ok(())
}

/// Regression coefficients, then (hierarchical model) the second level.
/// Row `βᵢ` has precision `WᵀW/σᵢ² + I/s²` and linear term
/// `Wᵀ(rᵢ − ηλᵢ)/σᵢ² + Kᵀxᵢ/s²`; each column of `K` regresses the matching
/// column of `B` on `X` with prior precision `I/s_κ²`.
pub fn update_mean<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &Dataset,
    spec: &FactorModelSpec,
    rng: &mut R,
) -> Result<()> {
    let c = data.c();
    let eta = state.observed_eta(spec.var_order());
    let resid = state.response(data) - eta * state.lambda.transpose();
    let wtw = data.w.transpose() * &data.w;
    let wtr = data.w.transpose() * &resid;
    let (prior_var, prior_mean) = match spec.mean {
        MeanModel::Constant { prior_var } | MeanModel::Regression { prior_var } => (prior_var, None),
        MeanModel::Hierarchical { s_beta2, .. } => {
            let x = data.x.as_ref().ok_or_else(|| Error::Data("hierarchical mean needs X".into()))?;
            let kappa = state.kappa.as_ref().ok_or_else(|| Error::State("missing K".into()))?;
            (s_beta2, Some(x * kappa))
        }
    };
    for i in 0..spec.p {
        let s2 = state.sigma2[i];
        let mut prec = &wtw / s2;
        for j in 0..c {
            prec[(j, j)] += 1.0 / prior_var;
        }
        let mut lin: DVector<f64> = wtr.column(i) / s2;
        if let Some(pm) = &prior_mean {
            lin += pm.row(i).transpose() / prior_var;
        }
        let draw = sample_gaussian_canonical(&prec, &lin, "beta", rng)?;
        state.beta.row_mut(i).copy_from(&draw.transpose());
    }
    if let MeanModel::Hierarchical { s_beta2, s_kappa2 } = spec.mean {
        let x = data.x.as_ref().expect("checked above");
        let q = x.ncols();
        let mut prec = x.transpose() * x / s_beta2;
        for j in 0..q {
            prec[(j, j)] += 1.0 / s_kappa2;
        }
        let xtb = x.transpose() * &state.beta / s_beta2;
        let kappa = state.kappa.as_mut().expect("checked above");
        for col in 0..c {
            let draw = sample_gaussian_canonical(&prec, &xtb.column(col).into_owned(), "kappa", rng)?;
            kappa.column_mut(col).copy_from(&draw);
        }
    }
    Ok(())
}

/// `ρⱼ ~ Gam(aⱼ + p(H−j+1)/2, 1 + ½ Σ_{h≥j} q_h ∏_{l≤h, l≠j} ρ_l)` with
/// `q_h = λ_hᵀ R λ_h`, updated in order.
pub fn update_rho<R: Rng + ?Sized>(state: &mut ChainState, spec: &FactorModelSpec, phis: &PhiMatrices, rng: &mut R) {
    let h = state.h();
    let r = row_precision(state, phis);
    let q: Vec<f64> = (0..h)
        .map(|j| {
            let col = state.lambda.column(j);
            col.dot(&(&r * col))
        })
        .collect();
    let p = spec.p as f64;
    for j in 0..h {
        let mut prod = 1.0;
        let mut rate = 1.0;
        for l in 0..h {
            if l != j {
                prod *= state.mgp.rho[l];
            }
            if l >= j {
                rate += 0.5 * q[l] * prod;
            }
        }
        let shape = state.mgp.shape(j) + 0.5 * p * (h - j) as f64;
        state.mgp.rho[j] = gamma_rate(shape, rate, rng).max(f64::MIN_POSITIVE);
    }
}

/// Log of the ϑ full conditional up to a constant, or `None` when `Φ(ϑ)` is
/// numerically unusable (the move is then rejected).
pub fn theta_log_target(state: &ChainState, spec: &FactorModelSpec, theta: &[f64]) -> Option<f64> {
    let phis = spec.phi.build(theta).ok()?;
    let h = state.h() as f64;
    let prior: f64 = spec
        .theta_priors
        .iter()
        .zip(theta)
        .map(|(pr, t)| pr.log_density(*t))
        .sum();
    let like = match (&state.s, state.varsigma_check) {
        (Some(s), Some(vc)) => {
            let vs = varsigma(vc);
            let nu = vs + spec.p as f64 - 1.0;
            0.5 * nu * phis.log_det_phi - 0.5 * (vs - 2.0) * phis.phi.matrix().component_mul(s.matrix()).sum()
        }
        _ => {
            let mut scaled = state.lambda.clone();
            for (j, t) in state.mgp.precisions().iter().enumerate() {
                scaled.column_mut(j).scale_mut(*t);
            }
            let quad = (phis.xi.matrix() * &scaled).component_mul(&state.lambda).sum();
            -0.5 * h * phis.log_det_phi - 0.5 * quad
        }
    };
    let v = prior + like;
    v.is_finite().then_some(v)
}

/// Joint Gaussian random walk on the unconstrained ϑ scale with the
/// transformation Jacobian in the acceptance ratio. Returns whether the
/// move was accepted.
pub fn update_theta_mh<R: Rng + ?Sized>(
    state: &mut ChainState,
    spec: &FactorModelSpec,
    scales: &[f64],
    rng: &mut R,
) -> Result<bool> {
    let bounds = spec.phi.bounds();
    if bounds.is_empty() {
        return Ok(true);
    }
    let u: Vec<f64> = bounds.iter().zip(&state.theta).map(|(b, t)| b.to_unconstrained(*t)).collect();
    let u_new: Vec<f64> = u
        .iter()
        .zip(scales)
        .map(|(x, s)| x + s * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let theta_new: Vec<f64> = bounds.iter().zip(&u_new).map(|(b, x)| b.from_unconstrained(*x)).collect();
    let log_u: f64 = rng.random::<f64>().ln();
    if scales.iter().all(|s| *s == 0.0) {
        return Ok(true);
    }
    if spec.phi.check_theta(&theta_new).is_err() {
        return Ok(false);
    }
    let jac = |xs: &[f64]| bounds.iter().zip(xs).map(|(b, x)| b.log_jacobian(*x)).sum::<f64>();
    let current = theta_log_target(state, spec, &state.theta)
        .ok_or_else(|| Error::State("current ϑ has zero density".into()))?;
    let Some(proposed) = theta_log_target(state, spec, &theta_new) else {
        return Ok(false);
    };
    let log_ratio = proposed + jac(&u_new) - current - jac(&u);
    if log_u < log_ratio {
        state.theta = theta_new;
        return Ok(true);
    }
    Ok(false)
}

fn loadings_gram(state: &ChainState) -> DMatrix<f64> {
    let mut scaled = state.lambda.clone();
    for (j, t) in state.mgp.precisions().iter().enumerate() {
        scaled.column_mut(j).scale_mut(*t);
    }
    let mut m = &scaled * state.lambda.transpose();
    symmetrize(&mut m);
    m
}

/// `S ~ W(ν + H, (Φ̆ + ΛΨ⁻¹Λᵀ)⁻¹)` with `ν = ς + p − 1`, `Φ̆ = (ς − 2)Φ`.
fn draw_s<R: Rng + ?Sized>(
    state: &ChainState,
    spec: &FactorModelSpec,
    phis: &PhiMatrices,
    vc: f64,
    rng: &mut R,
) -> Result<SpdMatrix> {
    let vs = varsigma(vc);
    let nu = vs + spec.p as f64 - 1.0;
    let scale_inv = phis.phi.matrix() * (vs - 2.0) + loadings_gram(state);
    let scale = SpdMatrix::new(crate::linalg::inverse_spd(&scale_inv, "wishart")?)
        .map_err(|e| Error::numerical("wishart", e.to_string()))?;
    sample_wishart(nu + state.h() as f64, &scale, rng)
}

pub fn update_s<R: Rng + ?Sized>(
    state: &mut ChainState,
    spec: &FactorModelSpec,
    phis: &PhiMatrices,
    rng: &mut R,
) -> Result<()> {
    let Some(vc) = state.varsigma_check else {
        return Ok(());
    };
    state.s = Some(draw_s(state, spec, phis, vc, rng)?);
    Ok(())
}

/// `log p(Λ | ς, ϑ, Ψ)` with the Wishart variable integrated out, plus the
/// `Exp(rate)` prior on `ς̌` and the log-scale Jacobian `log ς̌`.
pub fn varsigma_log_target(state: &ChainState, spec: &FactorModelSpec, phis: &PhiMatrices, vc: f64) -> Result<f64> {
    let LoadingsPrior::MatrixT { varsigma_rate } = spec.loadings else {
        return Err(Error::Argument("ς̌ is only defined under the matrix-t prior".into()));
    };
    let p = spec.p as f64;
    let h = state.h() as f64;
    let vs = varsigma(vc);
    let nu = vs + p - 1.0;
    let log_det_breve = p * (vs - 2.0).ln() + phis.log_det_phi;
    let post = phis.phi.matrix() * (vs - 2.0) + loadings_gram(state);
    let log_det_post = logdet_spd(&post, "varsigma")?;
    let log_det_psi: f64 = state.psi().iter().map(|x| x.ln()).sum();
    let marginal = 0.5 * nu * log_det_breve - 0.5 * (nu + h) * log_det_post + ln_multigamma(spec.p, 0.5 * (nu + h))
        - ln_multigamma(spec.p, 0.5 * nu)
        - 0.5 * p * h * std::f64::consts::PI.ln()
        - 0.5 * p * log_det_psi;
    Ok(marginal + varsigma_rate.ln() - varsigma_rate * vc + vc.ln())
}

/// Log acceptance ratio of the joint move to `ς̌*`; it does not involve `S`.
pub fn s_varsigma_log_ratio(state: &ChainState, spec: &FactorModelSpec, phis: &PhiMatrices, proposed: f64) -> Result<f64> {
    let current = state.varsigma_check.ok_or_else(|| Error::State("missing ς̌".into()))?;
    Ok(varsigma_log_target(state, spec, phis, proposed)? - varsigma_log_target(state, spec, phis, current)?)
}

/// Joint update of `(S, ς̌)`: log-scale random walk for `ς̌`, then `S` from
/// its full conditional given the proposal, drawn only when accepted.
pub fn update_s_varsigma_joint<R: Rng + ?Sized>(
    state: &mut ChainState,
    spec: &FactorModelSpec,
    phis: &PhiMatrices,
    scale: f64,
    rng: &mut R,
) -> Result<bool> {
    let Some(vc) = state.varsigma_check else {
        return Ok(true);
    };
    let proposed = vc * (scale * rng.sample::<f64, _>(StandardNormal)).exp();
    let log_u = rng.random::<f64>().ln();
    if !(proposed > 0.0 && proposed.is_finite()) {
        return Ok(false);
    }
    let log_ratio = s_varsigma_log_ratio(state, spec, phis, proposed)?;
    if log_u < log_ratio {
        let s = draw_s(state, spec, phis, proposed, rng)?;
        debug_assert_eq!(
            s_varsigma_log_ratio(state, spec, phis, proposed)?.to_bits(),
            log_ratio.to_bits(),
            "acceptance ratio must not depend on S"
        );
        state.s = Some(s);
        state.varsigma_check = Some(proposed);
        return Ok(true);
    }
    Ok(false)
}

/// `x ~ N(0, 1)` conditioned on `x > a`: plain rejection below the mean,
/// exponential rejection with the optimal rate in the tail.
pub fn sample_std_normal_above<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a <= 0.0 {
        loop {
            let x: f64 = rng.sample(StandardNormal);
            if x > a {
                return x;
            }
        }
    }
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let e: f64 = rng.sample(Exp1);
        let x = a + e / alpha;
        let u: f64 = rng.random();
        if u.ln() <= -0.5 * (x - alpha) * (x - alpha) {
            return x;
        }
    }
}

/// `zₜⱼ ~ N(mₜⱼ, 1)` truncated to `(0, ∞)` when `yₜⱼ = 1` and `(−∞, 0]`
/// otherwise.
pub fn update_probit_latents<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &Dataset,
    spec: &FactorModelSpec,
    rng: &mut R,
) -> Result<()> {
    let eta = state.observed_eta(spec.var_order());
    let mean = &data.w * state.beta.transpose() + eta * state.lambda.transpose();
    let z = state.z.as_mut().ok_or_else(|| Error::State("probit state has no latent utilities".into()))?;
    for j in 0..data.p() {
        for t in 0..data.n() {
            let m = mean[(t, j)];
            z[(t, j)] = if data.y[(t, j)] == 1.0 {
                (m + sample_std_normal_above(-m, rng)).max(f64::MIN_POSITIVE)
            } else {
                (m - sample_std_normal_above(m, rng)).min(0.0)
            };
        }
    }
    Ok(())
}

/// Proposal standard deviation of the Givens angle, in radians.
pub const ROTATION_SCALE: f64 = 0.5;

/// Random-walk moves along the rotation gauge, one per pair of columns.
///
/// The likelihood, the factor density (with `Aᵢ ↦ GᵀAᵢG` in the dynamic
/// model) and the rotatable prior on `Aᵢ` are all unchanged by
/// `Λ ↦ ΛG`, `ηₜ ↦ Gᵀηₜ`, so the acceptance ratio is the ratio of loadings
/// prior densities. Returns `(proposed, accepted)`.
pub fn update_rotation<R: Rng + ?Sized>(
    state: &mut ChainState,
    phis: &PhiMatrices,
    scale: f64,
    rng: &mut R,
) -> Result<(u64, u64)> {
    let h = state.h();
    if h < 2 || scale <= 0.0 {
        return Ok((0, 0));
    }
    let r = row_precision(state, phis);
    let psi_inv = state.mgp.precisions();
    let rl = &r * &state.lambda;
    let mut q = state.lambda.transpose() * rl;
    let mut accepted = 0;
    for i in 0..h {
        for j in i + 1..h {
            let theta: f64 = scale * rng.sample::<f64, _>(StandardNormal);
            let (s, c) = theta.sin_cos();
            let (qii, qjj, qij) = (q[(i, i)], q[(j, j)], q[(i, j)]);
            let new_i = c * c * qii - 2.0 * c * s * qij + s * s * qjj;
            let new_j = s * s * qii + 2.0 * c * s * qij + c * c * qjj;
            let log_ratio = -0.5 * (psi_inv[i] * (new_i - qii) + psi_inv[j] * (new_j - qjj));
            let u: f64 = rng.sample(Exp1);
            if !(log_ratio > -u) {
                continue;
            }
            accepted += 1;
            let mut g = DMatrix::identity(h, h);
            g[(i, i)] = c;
            g[(j, j)] = c;
            g[(j, i)] = -s;
            g[(i, j)] = s;
            state.lambda = &state.lambda * &g;
            state.eta = &state.eta * &g;
            if let Some(pac) = state.pac.as_mut() {
                let a = pac.a.iter().map(|a| g.transpose() * a * &g).collect();
                *pac = crate::stationary_var::PacParams::new(a)?;
            }
            q = g.transpose() * &q * &g;
            symmetrize(&mut q);
        }
    }
    let pairs = (h * (h - 1) / 2) as u64;
    Ok((pairs, accepted))
}
