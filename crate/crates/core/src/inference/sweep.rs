//! One systematic-scan sweep over all unknowns.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conditionals::{
    update_eta_static, update_lambda, update_mean, update_probit_latents, update_rho, update_rotation,
    update_s, update_s_varsigma_joint, update_sigma, update_theta_mh, ROTATION_SCALE,
};
use super::dynamic::{ffbs_factors, update_a_mala_blocks, MalaStats};
use super::model::{Dataset, FactorModelSpec, ModelKind};
use super::state::ChainState;
use crate::error::{Error, Result};

/// Proposal scales used by the Metropolis steps of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalScales {
    pub theta: Vec<f64>,
    pub varsigma: f64,
    pub mala_step: f64,
    pub mala_block: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub theta_accepted: Option<bool>,
    pub varsigma_accepted: Option<bool>,
    pub mala: MalaStats,
    /// Proposed and accepted gauge rotations.
    pub rotation: (u64, u64),
}

/// Static and probit order: `Z`, Λ, η, Σ, mean, ρ, ϑ, then `S` and
/// `(S, ς̌)` under the matrix-t prior. Dynamic models draw the factor path by
/// FFBS in place of the independent η update and finish with the MALA pass
/// over `A₁..A_m`. Every model ends with the gauge rotations.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &Dataset,
    spec: &FactorModelSpec,
    scales: &ProposalScales,
    rng: &mut R,
) -> Result<SweepStats> {
    let mut stats = SweepStats::default();
    let phis = spec.phi.build(&state.theta).map_err(|e| Error::numerical("phi", e.to_string()))?;
    if spec.kind == ModelKind::Probit {
        update_probit_latents(state, data, spec, rng)?;
    }
    update_lambda(state, data, spec, &phis, rng)?;
    match spec.kind {
        ModelKind::Dynamic { .. } => {
            let var = state.var_params()?.ok_or_else(|| Error::State("dynamic state has no VAR parameters".into()))?;
            ffbs_factors(state, data, spec, &var, rng)?;
        }
        _ => update_eta_static(state, data, rng)?,
    }
    update_sigma(state, data, spec, rng)?;
    update_mean(state, data, spec, rng)?;
    update_rho(state, spec, &phis, rng);
    if spec.phi.n_params() > 0 {
        stats.theta_accepted = Some(update_theta_mh(state, spec, &scales.theta, rng)?);
    }
    if spec.is_matrix_t() {
        let phis = spec.phi.build(&state.theta).map_err(|e| Error::numerical("phi", e.to_string()))?;
        update_s(state, spec, &phis, rng)?;
        stats.varsigma_accepted = Some(update_s_varsigma_joint(state, spec, &phis, scales.varsigma, rng)?);
    }
    if matches!(spec.kind, ModelKind::Dynamic { .. }) {
        stats.mala = update_a_mala_blocks(state, spec, scales.mala_step, scales.mala_block, rng)?;
    }
    let phis = spec.phi.build(&state.theta).map_err(|e| Error::numerical("phi", e.to_string()))?;
    stats.rotation = update_rotation(state, &phis, ROTATION_SCALE, rng)?;
    Ok(stats)
}
