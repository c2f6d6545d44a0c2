//! Filtering with a daily state and hourly observations, and h-hour-ahead
//! predictive simulation.
//!
//! Observation `yₜ` is a p-vector whose component `j` is hour `j + 1` of day
//! `t`. The factors move once per day, so within a day each hour is an
//! observation step with no prediction step.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::summary::empirical_quantile;
use crate::error::{Error, Result};
use crate::linalg::{sym_apply, symmetrize};
use crate::stationary_var::{companion_initial_cov, companion_matrix, VarParams};

/// Moments of the companion state `(ηₜ, η_{t−1}, …, η_{t−m+1})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl StateMoments {
    /// The stationary distribution of the state before the first day.
    pub fn stationary(var: &VarParams) -> Result<Self> {
        let cov = companion_initial_cov(var)?;
        Ok(StateMoments { mean: DVector::zeros(cov.nrows()), cov })
    }

    /// A known state: `rows` holds `η_{t−m+1}, …, ηₜ` in time order.
    pub fn known(rows: &DMatrix<f64>) -> Self {
        let (m, k) = rows.shape();
        let mean = DVector::from_fn(k * m, |i, _| rows[(m - 1 - i / k, i % k)]);
        StateMoments { mean, cov: DMatrix::zeros(k * m, k * m) }
    }

    fn factor_dim(&self, var: &VarParams) -> usize {
        debug_assert_eq!(self.mean.len(), var.k() * var.m());
        var.k()
    }

    /// VAR transition to the next day.
    pub fn predict(&self, var: &VarParams) -> StateMoments {
        let k = self.factor_dim(var);
        let c = companion_matrix(&var.gamma);
        let mut cov = &c * &self.cov * c.transpose();
        let mut top = cov.view_mut((0, 0), (k, k));
        top += var.pi.matrix();
        symmetrize(&mut cov);
        StateMoments { mean: &c * &self.mean, cov }
    }

    /// Scalar update with `y = μ + λᵀηₜ + ε`, `ε ~ N(0, σ²)`.
    pub fn observe_scalar(&mut self, lambda_row: &[f64], sigma2: f64, y: f64, mu: f64) -> Result<()> {
        let k = lambda_row.len();
        let l = DVector::from_column_slice(lambda_row);
        let ph = self.cov.columns(0, k) * &l;
        let s = l.dot(&ph.rows(0, k)) + sigma2;
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::numerical("hourly_filter", format!("innovation variance {s}")));
        }
        let gain = &ph / s;
        let innov = y - mu - l.dot(&self.mean.rows(0, k));
        self.mean += &gain * innov;
        self.cov -= &gain * ph.transpose();
        symmetrize(&mut self.cov);
        self.check()
    }

    /// Joint update with a whole observation vector.
    pub fn observe_vector(&mut self, lambda: &DMatrix<f64>, sigma2: &[f64], y: &[f64], mu: &[f64]) -> Result<()> {
        let (p, k) = lambda.shape();
        let ph = self.cov.columns(0, k) * lambda.transpose();
        let mut s = lambda * ph.rows(0, k);
        for i in 0..p {
            s[(i, i)] += sigma2[i];
        }
        symmetrize(&mut s);
        let chol = crate::linalg::cholesky(&s, "batch_filter")?;
        let gain = chol.solve(&ph.transpose()).transpose();
        let innov = DVector::from_fn(p, |i, _| y[i] - mu[i]) - lambda * self.mean.rows(0, k);
        self.mean += &gain * innov;
        self.cov -= &gain * ph.transpose();
        symmetrize(&mut self.cov);
        self.check()
    }

    fn check(&self) -> Result<()> {
        let scale = self.cov.diagonal().amax().max(1.0);
        if self.cov.iter().any(|v| !v.is_finite())
            || self.cov.diagonal().iter().any(|d| *d < -1e-10 * scale)
            || self.mean.iter().any(|v| !v.is_finite())
        {
            return Err(Error::numerical("hourly_filter", "filtered covariance lost positive semi-definiteness"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HourlyMoments {
    /// Zero-based day index.
    pub day: usize,
    /// One-based hour within the day.
    pub hour: usize,
    pub state: StateMoments,
}

/// Filter days of hourly observations. `y` and `mean` are days×p; when
/// `last_day_hours` is given only that many leading hours of the final day
/// are used. Moments are returned after every hour.
pub fn forward_filter_substep(
    var: &VarParams,
    lambda: &DMatrix<f64>,
    sigma2: &[f64],
    mean: &DMatrix<f64>,
    y: &DMatrix<f64>,
    last_day_hours: Option<usize>,
    initial: Option<StateMoments>,
) -> Result<Vec<HourlyMoments>> {
    let (days, p) = y.shape();
    if mean.shape() != y.shape() || lambda.nrows() != p || sigma2.len() != p || lambda.ncols() != var.k() {
        return Err(Error::Argument("filter inputs have inconsistent dimensions".into()));
    }
    let mut state = match initial {
        Some(s) => s,
        None => StateMoments::stationary(var)?,
    };
    let mut out = Vec::new();
    for t in 0..days {
        state = state.predict(var);
        let hours = if t + 1 == days { last_day_hours.unwrap_or(p).min(p) } else { p };
        for j in 0..hours {
            let row: Vec<f64> = lambda.row(j).iter().copied().collect();
            state.observe_scalar(&row, sigma2[j], y[(t, j)], mean[(t, j)])?;
            out.push(HourlyMoments { day: t, hour: j + 1, state: state.clone() });
        }
    }
    Ok(out)
}

/// One posterior draw's ingredients for forecasting from an origin.
#[derive(Clone, Debug)]
pub struct ForecastInput {
    pub var: VarParams,
    pub lambda: DMatrix<f64>,
    pub sigma2: Vec<f64>,
    /// Mean of each hour, one row per day starting with the origin's day.
    pub mean: DMatrix<f64>,
    /// Filtered state for the origin's day.
    pub state: StateMoments,
    /// Hours of the origin's day already observed (p when the day is complete).
    pub hours_observed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub horizon: usize,
    /// One row per posterior draw, one column per hour ahead.
    pub draws: DMatrix<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// One predictive path per posterior draw, `h` hours past the origin.
pub fn forecast_h<R: Rng + ?Sized>(inputs: &[ForecastInput], h: usize, rng: &mut R) -> Result<ForecastResult> {
    if h == 0 {
        return Err(Error::Argument("forecast horizon must be at least one hour".into()));
    }
    if inputs.is_empty() {
        return Err(Error::Argument("no posterior draws to forecast from".into()));
    }
    let mut draws = DMatrix::zeros(inputs.len(), h);
    for (d, input) in inputs.iter().enumerate() {
        let p = input.lambda.nrows();
        let k = input.var.k();
        let last_day = (input.hours_observed + h - 1) / p;
        if input.mean.nrows() <= last_day || input.mean.ncols() != p {
            return Err(Error::Argument(format!(
                "forecast needs means for {} days of {p} hours",
                last_day + 1
            )));
        }
        let root = sym_apply(&input.state.cov, |v| v.max(0.0).sqrt());
        let z = DVector::from_fn(root.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut s = &input.state.mean + root * z;
        let c = companion_matrix(&input.var.gamma);
        let pi_chol = input.var.pi.cholesky_lower();
        let mut day = 0;
        for step in 0..h {
            let u = input.hours_observed + step;
            let dd = u / p;
            while day < dd {
                let noise = &pi_chol * DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
                let mut next = &c * &s;
                let mut top = next.rows_mut(0, k);
                top += noise;
                s = next;
                day += 1;
            }
            let j = u % p;
            let signal = input.lambda.row(j).transpose().dot(&s.rows(0, k));
            let eps: f64 = rng.sample(StandardNormal);
            draws[(d, step)] = input.mean[(dd, j)] + signal + input.sigma2[j].sqrt() * eps;
        }
    }
    let mut mean = Vec::with_capacity(h);
    let mut lower = Vec::with_capacity(h);
    let mut upper = Vec::with_capacity(h);
    for col in draws.column_iter() {
        let mut v: Vec<f64> = col.iter().copied().collect();
        mean.push(v.iter().sum::<f64>() / v.len() as f64);
        v.sort_by(f64::total_cmp);
        lower.push(empirical_quantile(&v, 0.025));
        upper.push(empirical_quantile(&v, 0.975));
    }
    Ok(ForecastResult { horizon: h, draws, mean, lower, upper })
}
