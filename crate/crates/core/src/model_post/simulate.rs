//! Synthetic data from the model.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::inference::{simulate_response, simulate_var_path, ChainState, Dataset, FactorModelSpec, ModelKind};
use crate::linalg::standard_normal_matrix;

#[derive(Clone, Debug)]
pub struct Simulated {
    pub data: Dataset,
    /// Parameters, factors and (probit) latent utilities that generated the data.
    pub truth: ChainState,
}

/// Generate `n` observations. Parameters come from `truth` when given (its
/// factors are ignored and redrawn) or else from the prior with `h`
/// factors. Dynamic factors start from the stationary distribution.
pub fn simulate_data<R: Rng + ?Sized>(
    spec: &FactorModelSpec,
    n: usize,
    w: Option<DMatrix<f64>>,
    x: Option<DMatrix<f64>>,
    truth: Option<&ChainState>,
    h: usize,
    rng: &mut R,
) -> Result<Simulated> {
    let shell = Dataset::new(DMatrix::zeros(n, spec.p), w, x)?;
    let mut state = match truth {
        None => ChainState::from_prior(spec, &shell, h, rng)?,
        Some(t) => {
            let mut s = t.clone();
            if s.lambda.nrows() != spec.p || s.beta.shape() != (spec.p, shell.c()) {
                return Err(Error::Argument("true parameters do not match the model dimensions".into()));
            }
            s.eta = match spec.kind {
                ModelKind::Dynamic { .. } => {
                    let var = s.var_params()?.ok_or_else(|| Error::Argument("dynamic truth needs A₁..A_m".into()))?;
                    simulate_var_path(&var, n, rng)?
                }
                _ => standard_normal_matrix(n, s.h(), rng),
            };
            s
        }
    };
    let y = simulate_response(spec, &mut state, &shell.w, rng);
    let data = Dataset::new(y, Some(shell.w.clone()), shell.x.clone())?;
    Ok(Simulated { data, truth: state })
}
