//! Posterior summaries and per-draw predictive quantities.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{effective_k, Dataset, Draw, DrawStore, TruncationCriterion};
use crate::linalg::cholesky;

/// Order statistic `x_(⌈qN⌉)` of sorted values (the inverse empirical CDF).
pub fn empirical_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSummary {
    pub mode: usize,
    pub median: usize,
    pub lower: usize,
    pub upper: usize,
    /// `counts[k]` draws had `k* = k`.
    pub counts: Vec<usize>,
}

pub fn k_summary_from_values(ks: &[usize]) -> Result<KSummary> {
    if ks.is_empty() {
        return Err(Error::Argument("no draws to summarise".into()));
    }
    let max = *ks.iter().max().expect("non-empty");
    let mut counts = vec![0; max + 1];
    for &k in ks {
        counts[k] += 1;
    }
    let mode = (0..=max).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).expect("non-empty");
    let mut sorted: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    sorted.sort_by(f64::total_cmp);
    Ok(KSummary {
        mode,
        median: empirical_quantile(&sorted, 0.5) as usize,
        lower: empirical_quantile(&sorted, 0.025) as usize,
        upper: empirical_quantile(&sorted, 0.975) as usize,
        counts,
    })
}

/// Mode, median and equal-tailed 95% interval of `k*` over stored draws.
pub fn k_posterior_summary(store: &DrawStore, criterion: &TruncationCriterion) -> Result<KSummary> {
    let ks: Vec<usize> = store
        .draws
        .iter()
        .map(|d| effective_k(&d.lambda, d.sigma2.as_slice(), criterion))
        .collect();
    k_summary_from_values(&ks)
}

/// `Ω = ΛΛᵀ + Σ` for one draw.
pub fn omega(draw: &Draw) -> DMatrix<f64> {
    let mut o = &draw.lambda * draw.lambda.transpose();
    for i in 0..o.nrows() {
        o[(i, i)] += draw.sigma2[i];
    }
    o
}

pub fn posterior_mean_omega(draws: &[Draw]) -> Result<DMatrix<f64>> {
    let first = draws.first().ok_or_else(|| Error::Argument("no draws".into()))?;
    let p = first.lambda.nrows();
    let mut acc = DMatrix::zeros(p, p);
    for d in draws {
        acc += omega(d);
    }
    Ok(acc / draws.len() as f64)
}

/// `Φ(x)` without cancellation in the lower tail.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Probability that each latent utility is positive given the draw, with
/// the factors integrated out: `Φ(mₜⱼ / √(1 + ‖λⱼ‖²))`.
pub fn probit_probabilities(draw: &Draw, w: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = w * draw.beta.transpose();
    let scale: Vec<f64> = (0..draw.lambda.nrows())
        .map(|j| (draw.sigma2[j] + draw.lambda.row(j).norm_squared()).sqrt())
        .collect();
    DMatrix::from_fn(mean.nrows(), mean.ncols(), |t, j| std_normal_cdf(mean[(t, j)] / scale[j]))
}

/// Posterior predictive probabilities averaged over draws.
pub fn mean_probit_probabilities(draws: &[Draw], w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let first = draws.first().ok_or_else(|| Error::Argument("no draws".into()))?;
    let mut acc = DMatrix::zeros(w.nrows(), first.lambda.nrows());
    for d in draws {
        acc += probit_probabilities(d, w);
    }
    Ok(acc / draws.len() as f64)
}

/// Draws×sites matrix of `log p(yₜ | θ)` for binary data, taking the
/// product of the per-variable marginal probabilities.
pub fn probit_loglik_matrix(draws: &[Draw], data: &Dataset) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(draws.len(), data.n());
    for (m, d) in draws.iter().enumerate() {
        let probs = probit_probabilities(d, &data.w);
        for t in 0..data.n() {
            out[(m, t)] = (0..data.p())
                .map(|j| {
                    let p = probs[(t, j)];
                    if data.y[(t, j)] == 1.0 { p.ln() } else { (1.0 - p).ln() }
                })
                .sum();
        }
    }
    out
}

/// Draws×observations matrix of `log N(yₜ; Bwₜ, ΛΛᵀ + Σ)` for the static
/// Gaussian model.
pub fn gaussian_loglik_matrix(draws: &[Draw], data: &Dataset) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(draws.len(), data.n());
    let p = data.p() as f64;
    for (m, d) in draws.iter().enumerate() {
        let chol = cholesky(&omega(d), "predictive")?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let resid = (&data.y - &data.w * d.beta.transpose()).transpose();
        let white = chol
            .l()
            .solve_lower_triangular(&resid)
            .ok_or_else(|| Error::numerical("predictive", "singular Cholesky factor"))?;
        for t in 0..data.n() {
            out[(m, t)] = -0.5 * (p * (2.0 * std::f64::consts::PI).ln() + log_det + white.column(t).norm_squared());
        }
    }
    Ok(out)
}
