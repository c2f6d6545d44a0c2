//! Adaptive truncation of the number of factors.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conditionals::row_precision;
use super::model::{FactorModelSpec, ModelKind, SamplerConfig, TruncationCriterion, TruncationMode};
use super::state::{gamma_rate, sample_loadings, simulate_var_path, ChainState};
use crate::error::{Error, Result};
use crate::linalg::{min_singular_value, select_columns, standard_normal_matrix};
use crate::matrix_variate::SpdMatrix;
use crate::stationary_var::{p_to_a, pac_to_var, PacParams};

/// Indices of the active columns of `Λ`, in increasing order.
///
/// Under the proportion criterion the columns are ranked by `‖λⱼ‖²` and the
/// fewest leading ones are kept whose share of `tr(ΛΛᵀ + Σ)`, counting `Σ`
/// in full, reaches `T`.
pub fn active_columns(lambda: &DMatrix<f64>, sigma2: &[f64], criterion: &TruncationCriterion) -> Vec<usize> {
    let h = lambda.ncols();
    match *criterion {
        TruncationCriterion::Epsilon { epsilon } => {
            (0..h).filter(|&j| lambda.column(j).iter().any(|x| x.abs() >= epsilon)).collect()
        }
        TruncationCriterion::Proportion { t } => {
            let norms: Vec<f64> = (0..h).map(|j| lambda.column(j).norm_squared()).collect();
            let idio: f64 = sigma2.iter().sum();
            let total = idio + norms.iter().sum::<f64>();
            let mut order: Vec<usize> = (0..h).collect();
            order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
            let mut acc = idio;
            let mut keep = Vec::new();
            for &j in &order {
                if acc >= t * total {
                    break;
                }
                acc += norms[j];
                keep.push(j);
            }
            keep.sort_unstable();
            keep
        }
    }
}

/// Effective number of factors `k*`.
pub fn effective_k(lambda: &DMatrix<f64>, sigma2: &[f64], criterion: &TruncationCriterion) -> usize {
    active_columns(lambda, sigma2, criterion).len()
}

/// Probability `exp(α₀ + α₁ i)` of attempting an adaptation at iteration `i`.
pub fn adaptation_probability(alpha0: f64, alpha1: f64, iteration: usize) -> f64 {
    (alpha0 + alpha1 * iteration as f64).exp().min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationEvent {
    pub iteration: usize,
    pub from: usize,
    pub to: usize,
}

/// Drop the given columns of every H-indexed piece of the state.
pub fn delete_columns(state: &mut ChainState, keep: &[usize]) -> Result<()> {
    state.lambda = select_columns(&state.lambda, keep);
    state.eta = select_columns(&state.eta, keep);
    state.mgp.rho = keep.iter().map(|&j| state.mgp.rho[j]).collect();
    if let Some(pac) = &state.pac {
        let a = pac
            .p()
            .iter()
            .map(|p| p_to_a(&p.select_rows(keep).select_columns(keep)))
            .collect::<Result<Vec<_>>>()?;
        state.pac = Some(PacParams::new(a)?);
    }
    Ok(())
}

/// Append one column drawn from the prior given the current state.
pub fn grow_column<R: Rng + ?Sized>(
    state: &mut ChainState,
    spec: &FactorModelSpec,
    row_prec: &DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    let h = state.h();
    let p = spec.p;
    let rho = gamma_rate(spec.mgp.a2, 1.0, rng).max(f64::MIN_POSITIVE);
    state.mgp.rho.push(rho);
    let psi_new = 1.0 / state.mgp.precisions()[h];
    let row_cov = SpdMatrix::new(crate::linalg::inverse_spd(row_prec, "adapt")?)
        .map_err(|e| Error::numerical("adapt", e.to_string()))?;
    let col = sample_loadings(&row_cov, &[psi_new], rng)?;
    state.lambda = state.lambda.clone().insert_column(h, 0.0);
    state.lambda.column_mut(h).copy_from(&col.column(0));

    let rows = state.eta.nrows();
    let new_eta = match state.pac.clone() {
        None => standard_normal_matrix(rows, 1, rng),
        Some(pac) => {
            let mut a = Vec::with_capacity(pac.m());
            let mut scalar = Vec::with_capacity(pac.m());
            for p_old in pac.p() {
                let r_min = min_singular_value(&p_old);
                let d = r_min * rng.random::<f64>();
                let mut p_new = DMatrix::zeros(h + 1, h + 1);
                p_new.view_mut((0, 0), (h, h)).copy_from(&p_old);
                p_new[(h, h)] = d;
                a.push(p_to_a(&p_new).map_err(|e| Error::Internal(format!("augmented P is not contractive: {e}")))?);
                scalar.push(DMatrix::from_element(1, 1, d));
            }
            state.pac = Some(PacParams::new(a)?);
            // Block-diagonal P gives a block-diagonal VAR, so the new factor
            // is a scalar AR(m) independent of the others.
            let var = pac_to_var(&PacParams::from_p(&scalar)?)?;
            let m = pac.m();
            simulate_var_path(&var, rows - m, rng)?
        }
    };
    state.eta = state.eta.clone().insert_column(h, 0.0);
    state.eta.column_mut(h).copy_from(&new_eta.column(0));
    debug_assert_eq!(state.lambda.nrows(), p);
    Ok(())
}

/// With probability `exp(α₀ + α₁ i)`: drop inactive columns when `k* < H`,
/// or add one column from the prior when every column is active and `H` is
/// below the cap. `H` never drops below one.
pub fn adapt_truncation<R: Rng + ?Sized>(
    state: &mut ChainState,
    spec: &FactorModelSpec,
    phis: &crate::structured_prior::PhiMatrices,
    iteration: usize,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<Option<TruncationEvent>> {
    let TruncationMode::Adaptive { alpha0, alpha1, start, .. } = config.truncation else {
        return Ok(None);
    };
    if iteration < start {
        return Ok(None);
    }
    let u: f64 = rng.random();
    if u >= adaptation_probability(alpha0, alpha1, iteration) {
        return Ok(None);
    }
    let h = state.h();
    let sigma2: Vec<f64> = state.sigma2.iter().copied().collect();
    let mut keep = active_columns(&state.lambda, &sigma2, &config.criterion);
    if keep.len() < h {
        if keep.is_empty() {
            let norms: Vec<f64> = (0..h).map(|j| state.lambda.column(j).norm_squared()).collect();
            let best = (0..h).max_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(b.cmp(&a))).unwrap_or(0);
            keep.push(best);
        }
        if keep.len() == h {
            return Ok(None);
        }
        delete_columns(state, &keep)?;
    } else if h < spec.truncation_cap() {
        let r = row_precision(state, phis);
        grow_column(state, spec, &r, rng)?;
    } else {
        return Ok(None);
    }
    debug_assert!(state.h() <= spec.truncation_cap().max(1));
    if matches!(spec.kind, ModelKind::Dynamic { .. }) {
        debug_assert!(state.pac.as_ref().is_some_and(|p| p.k() == state.h()));
    }
    Ok(Some(TruncationEvent { iteration, from: h, to: state.h() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_loadings_have_no_active_columns() {
        let l = DMatrix::zeros(5, 3);
        let s = vec![1.0; 5];
        assert_eq!(effective_k(&l, &s, &TruncationCriterion::Epsilon { epsilon: 1e-4 }), 0);
        assert_eq!(effective_k(&l, &s, &TruncationCriterion::Proportion { t: 0.999 }), 0);
    }

    #[test]
    fn single_column_is_found() {
        let mut l = DMatrix::zeros(4, 3);
        l.column_mut(1).fill(2.0);
        let s = vec![0.5; 4];
        for t in [0.5, 0.9, 0.99, 0.999] {
            assert_eq!(active_columns(&l, &s, &TruncationCriterion::Proportion { t }), vec![1]);
        }
        assert_eq!(active_columns(&l, &s, &TruncationCriterion::Epsilon { epsilon: 1e-4 }), vec![1]);
    }

    #[test]
    fn planted_dominant_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut l = standard_normal_matrix(6, 6, &mut rng);
        for j in [1, 3, 5] {
            l.column_mut(j).scale_mut(1e-6);
        }
        let s = vec![0.3; 6];
        let crit = TruncationCriterion::Proportion { t: 0.999 };
        assert_eq!(effective_k(&l, &s, &crit), 3);
        assert_eq!(active_columns(&l, &s, &crit), vec![0, 2, 4]);
    }

    #[test]
    fn adaptation_probability_decreases() {
        assert!(adaptation_probability(-1.0, -5e-4, 100) < adaptation_probability(-1.0, -5e-4, 50));
    }

    #[test]
    fn dynamic_augmentation_stays_contractive() {
        let p = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 0.3]));
        let pac = PacParams::from_p(std::slice::from_ref(&p)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let mut state = ChainState {
                lambda: DMatrix::from_element(4, 2, 1.0),
                eta: DMatrix::zeros(11, 2),
                sigma2: nalgebra::DVector::from_element(4, 1.0),
                beta: DMatrix::zeros(4, 1),
                kappa: None,
                theta: vec![],
                mgp: crate::structured_prior::MgpState::new(2.0, 3.0, vec![1.0, 2.0]).unwrap(),
                s: None,
                varsigma_check: None,
                pac: Some(pac.clone()),
                z: None,
            };
            let spec = FactorModelSpec::new(
                ModelKind::Dynamic { m: 1 },
                super::super::model::LoadingsPrior::MatrixNormal,
                crate::structured_prior::PhiModel::new(4, crate::structured_prior::PhiFamily::Identity).unwrap(),
                super::super::model::MgpHyper { a1: 2.0, a2: 3.0 },
                Default::default(),
                super::super::model::MeanModel::Constant { prior_var: 100.0 },
            )
            .unwrap();
            grow_column(&mut state, &spec, &DMatrix::identity(4, 4), &mut rng).unwrap();
            let p_new = &state.pac.as_ref().unwrap().p()[0];
            assert!((p_new.view((0, 0), (2, 2)) - &p).amax() < 1e-10);
            let d = p_new[(2, 2)];
            assert!(d > 0.0 && d < 0.3, "new diagonal {d}");
            assert!(p_new.row(2).columns(0, 2).amax() < 1e-12 && p_new.column(2).rows(0, 2).amax() < 1e-12);
            let sv = p_new.clone().singular_values();
            assert!(sv.max() < 1.0);
            assert_eq!(state.h(), 3);
            assert_eq!(state.eta.ncols(), 3);
        }
    }
}
