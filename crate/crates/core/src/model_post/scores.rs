//! Predictive scores, conditional predictive ordinates and cross-validation
//! folds.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pairs(probs: &[f64], outcomes: &[f64]) -> Result<()> {
    if probs.len() != outcomes.len() {
        return Err(Error::Argument(format!(
            "{} probabilities for {} outcomes",
            probs.len(),
            outcomes.len()
        )));
    }
    if probs.is_empty() {
        return Err(Error::Argument("no forecasts to score".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Argument(format!("probability {p} outside [0, 1]")));
    }
    if let Some(y) = outcomes.iter().find(|y| **y != 0.0 && **y != 1.0) {
        return Err(Error::Argument(format!("outcome {y} is not binary")));
    }
    Ok(())
}

/// `−mean((p̂ − y)²)`; zero for perfect forecasts.
pub fn brier_score(probs: &[f64], outcomes: &[f64]) -> Result<f64> {
    check_pairs(probs, outcomes)?;
    Ok(-probs.iter().zip(outcomes).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / probs.len() as f64)
}

/// `mean(y log p̂ + (1 − y) log(1 − p̂))`, which is `−∞` as soon as an
/// outcome receives probability zero.
pub fn log_score(probs: &[f64], outcomes: &[f64]) -> Result<f64> {
    check_pairs(probs, outcomes)?;
    let mut total = 0.0;
    for (p, y) in probs.iter().zip(outcomes) {
        let q = if *y == 1.0 { *p } else { 1.0 - p };
        if q == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        total += q.ln();
    }
    Ok(total / probs.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub brier: f64,
    pub log_score: f64,
    pub folds: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpoResult {
    pub cpo: Vec<f64>,
    pub log_cpo: Vec<f64>,
    pub log_pml: f64,
}

/// `CPOᵢ = {M⁻¹ Σₘ 1/p(yᵢ | θ⁽ᵐ⁾)}⁻¹` from a draws×observations matrix of
/// log-likelihoods, evaluated as `log M − logsumexp(−ℓ)`.
pub fn cpo_pml(loglik: &DMatrix<f64>) -> Result<CpoResult> {
    let (m, n) = loglik.shape();
    if m == 0 {
        return Err(Error::Argument("no draws".into()));
    }
    if loglik.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Argument("log-likelihoods must be finite or −∞".into()));
    }
    let log_m = (m as f64).ln();
    let log_cpo: Vec<f64> = (0..n)
        .map(|i| {
            let col = loglik.column(i);
            if col.iter().any(|v| *v == f64::NEG_INFINITY) {
                return f64::NEG_INFINITY;
            }
            let top = col.iter().map(|v| -v).fold(f64::NEG_INFINITY, f64::max);
            let lse = top + col.iter().map(|v| (-v - top).exp()).sum::<f64>().ln();
            log_m - lse
        })
        .collect();
    Ok(CpoResult {
        cpo: log_cpo.iter().map(|v| v.exp()).collect(),
        log_pml: log_cpo.iter().sum(),
        log_cpo,
    })
}

/// Balanced random assignment of `n` items to `k` folds.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 || n < k {
        return Err(Error::Argument(format!("cannot split {n} items into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        folds[i] = pos % k;
    }
    Ok(folds)
}
