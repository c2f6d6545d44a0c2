//! Updates specific to VAR(m) factor dynamics: a joint draw of the factor
//! path by forward filtering and backward sampling, and MALA moves on the
//! unconstrained matrices `A₁..A_m`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::model::{Dataset, FactorModelSpec};
use super::state::ChainState;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, sample_gaussian, symmetrize};
use crate::stationary_var::{
    a_to_p_dual, companion_initial_cov, companion_matrix, p_to_var_dual, DualMat, DualScalar, VarParams,
};

/// Joint draw of `η_{1−m}, …, η_n` given everything else. The filter runs on
/// the companion state `sₜ = (ηₜ, …, η_{t−m+1})`; the backward pass conditions
/// `sₜ` on `η_{t+1}` through the transition and on the blocks it shares with
/// `s_{t+1}`, so only the oldest block is new at each step.
pub fn ffbs_factors<R: Rng + ?Sized>(
    state: &mut ChainState,
    data: &Dataset,
    spec: &FactorModelSpec,
    var: &VarParams,
    rng: &mut R,
) -> Result<()> {
    let k = state.h();
    let m = var.m();
    if m != spec.var_order() || var.k() != k {
        return Err(Error::State("VAR parameters do not match the model".into()));
    }
    let km = k * m;
    let n = data.n();
    let c = companion_matrix(&var.gamma);
    let gamma_full = c.rows(0, k).into_owned();
    let pi = var.pi.matrix();

    let mut lt_sinv = state.lambda.transpose();
    for (j, mut col) in lt_sinv.column_iter_mut().enumerate() {
        col /= state.sigma2[j];
    }
    let mut info = DMatrix::zeros(km, km);
    info.view_mut((0, 0), (k, k)).copy_from(&(&lt_sinv * &state.lambda));
    let resid = state.response(data) - &data.w * state.beta.transpose();
    let obs_lin = &lt_sinv * resid.transpose();

    let mut means = Vec::with_capacity(n + 1);
    let mut covs = Vec::with_capacity(n + 1);
    means.push(DVector::zeros(km));
    covs.push(companion_initial_cov(var)?);
    for t in 0..n {
        let a = &c * &means[t];
        let mut pred = &c * &covs[t] * c.transpose();
        let mut top = pred.view_mut((0, 0), (k, k));
        top += pi;
        symmetrize(&mut pred);
        let l = cholesky(&pred, "ffbs_filter")?.l();
        let mut inner = l.transpose() * &info * &l;
        for i in 0..km {
            inner[(i, i)] += 1.0;
        }
        let inner_inv = crate::linalg::inverse_spd(&inner, "ffbs_filter")?;
        let mut v = &l * inner_inv * l.transpose();
        symmetrize(&mut v);
        let mut h = DVector::zeros(km);
        h.rows_mut(0, k).copy_from(&obs_lin.column(t));
        let mean = &a + &v * (h - &info * &a);
        means.push(mean);
        covs.push(v);
    }

    let mut eta = DMatrix::zeros(n + m, k);
    let mut s_next = sample_gaussian(&means[n], &covs[n], "ffbs_backward", rng)?;
    let store = |eta: &mut DMatrix<f64>, t: usize, s: &DVector<f64>| {
        for b in 0..m {
            // Block b of sₜ is η_{t−b}, stored at row t − b + m − 1.
            if t + m > b {
                eta.row_mut(t + m - 1 - b).copy_from(&s.rows(b * k, k).transpose());
            }
        }
    };
    store(&mut eta, n, &s_next);
    for t in (0..n).rev() {
        let v = &covs[t];
        let mt = &means[t];
        let gv = &gamma_full * v;
        let mut s_cov = &gv * gamma_full.transpose() + pi;
        symmetrize(&mut s_cov);
        let s_chol = cholesky(&s_cov, "ffbs_backward")?;
        let gain = s_chol.solve(&gv).transpose();
        let innov = s_next.rows(0, k) - &gamma_full * mt;
        let mu = mt + &gain * innov;
        let mut cov = v - &gain * gv;
        symmetrize(&mut cov);
        let f = (m - 1) * k;
        let mut s_t = DVector::zeros(km);
        if f > 0 {
            let known = s_next.rows(k, f).into_owned();
            let cff = cov.view((0, 0), (f, f)).into_owned();
            let clf = cov.view((f, 0), (k, f)).into_owned();
            let cll = cov.view((f, f), (k, k)).into_owned();
            let ff_chol = cholesky(&cff, "ffbs_backward")?;
            let w = ff_chol.solve(&clf.transpose()).transpose();
            let cond_mean = mu.rows(f, k) + &w * (&known - mu.rows(0, f));
            let mut cond_cov = cll - &w * clf.transpose();
            symmetrize(&mut cond_cov);
            let last = sample_gaussian(&cond_mean, &cond_cov, "ffbs_backward", rng)?;
            s_t.rows_mut(0, f).copy_from(&known);
            s_t.rows_mut(f, k).copy_from(&last);
        } else {
            s_t = sample_gaussian(&mu, &cov, "ffbs_backward", rng)?;
        }
        store(&mut eta, t, &s_t);
        s_next = s_t;
    }
    state.eta = eta;
    Ok(())
}

/// Sufficient statistics of a factor path for the log conditional of `A`.
#[derive(Clone, Debug)]
pub struct VarTarget {
    m: usize,
    n: usize,
    /// `C[i][j] = Σₜ η_{t−i} η_{t−j}ᵀ` over `t = 1..n`, `i, j = 0..m`.
    lag: Vec<Vec<DMatrix<f64>>>,
    /// `(η_{1−m}, …, η₀)` stacked in time order.
    presample: DVector<f64>,
}

impl VarTarget {
    pub fn new(eta: &DMatrix<f64>, m: usize) -> Self {
        let k = eta.ncols();
        let n = eta.nrows() - m;
        let lag = (0..=m)
            .map(|i| {
                (0..=m)
                    .map(|j| {
                        let a = eta.rows(m - i, n);
                        let b = eta.rows(m - j, n);
                        a.transpose() * b
                    })
                    .collect()
            })
            .collect();
        let presample = DVector::from_iterator(k * m, (0..m).flat_map(|t| eta.row(t).iter().copied().collect::<Vec<_>>()));
        VarTarget { m, n, lag, presample }
    }

    /// `log p(A | η)` up to a constant: the `N(0, 1)` prior on every entry,
    /// the stationary presample density and the transition densities.
    pub fn eval(&self, a: &[DualMat]) -> Result<DualScalar> {
        let n_dir = a[0].n_dir();
        let mut total = DualScalar::constant(0.0, n_dir);
        for ai in a {
            total = total.sub(&(&ai.transpose() * ai).trace().scale(0.5));
        }
        let p: Vec<DualMat> = a.iter().map(a_to_p_dual).collect::<Result<_>>()?;
        let var = p_to_var_dual(&p)?;
        let g = var.initial_cov();
        total = total.sub(&g.logdet_spd("mala")?.scale(0.5));
        total = total.sub(&g.quad_inv(&self.presample, "mala")?.scale(0.5));

        let mut e = DualMat::constant(self.lag[0][0].clone(), n_dir);
        for i in 0..self.m {
            let cross = &var.gamma[i] * &self.lag[i + 1][0];
            e = &(&e - &cross) - &cross.transpose();
            for j in 0..self.m {
                e = &e + &(&(&var.gamma[i] * &self.lag[i + 1][j + 1]) * &var.gamma[j].transpose());
            }
        }
        total = total.sub(&var.pi.logdet_spd("mala")?.scale(0.5 * self.n as f64));
        let pi_inv = var.pi.inverse("mala")?;
        total = total.sub(&(&pi_inv * &e).trace().scale(0.5));
        Ok(total)
    }

    /// Value and gradient with respect to the listed entries `(i, row, col)`
    /// of `A_{i+1}`.
    pub fn value_and_grad(&self, a: &[DMatrix<f64>], entries: &[(usize, usize, usize)]) -> Result<DualScalar> {
        let n_dir = entries.len();
        let duals: Vec<DualMat> = a
            .iter()
            .enumerate()
            .map(|(i, ai)| {
                let seeds: Vec<(usize, usize, usize)> = entries
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.0 == i)
                    .map(|(d, e)| (d, e.1, e.2))
                    .collect();
                DualMat::seeded(ai.clone(), n_dir, &seeds)
            })
            .collect();
        self.eval(&duals)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MalaStats {
    pub proposed: u64,
    pub accepted: u64,
    pub nonfinite: u64,
}

/// Entries of each `Aᵢ` in column-major order, cut into contiguous blocks of
/// length `b` (the last block of each matrix may be shorter).
pub fn mala_blocks(k: usize, m: usize, b: usize) -> Vec<Vec<(usize, usize, usize)>> {
    let mut out = Vec::new();
    for i in 0..m {
        let entries: Vec<(usize, usize, usize)> = (0..k * k).map(|e| (i, e % k, e / k)).collect();
        out.extend(entries.chunks(b).map(|c| c.to_vec()));
    }
    out
}

/// One MALA pass over all blocks of `A₁..A_m`.
pub fn update_a_mala_blocks<R: Rng + ?Sized>(
    state: &mut ChainState,
    spec: &FactorModelSpec,
    step: f64,
    block: usize,
    rng: &mut R,
) -> Result<MalaStats> {
    let m = spec.var_order();
    let k = state.h();
    let target = VarTarget::new(&state.eta, m);
    let pac = state.pac.as_mut().ok_or_else(|| Error::State("dynamic state has no VAR parameters".into()))?;
    let mut stats = MalaStats::default();
    let finite = |d: &DualScalar| d.v.is_finite() && d.d.iter().all(|g| g.is_finite());
    for entries in mala_blocks(k, m, block) {
        stats.proposed += 1;
        let z: Vec<f64> = (0..entries.len()).map(|_| rng.sample(StandardNormal)).collect();
        let log_u: f64 = rng.random::<f64>().ln();
        if step == 0.0 {
            stats.accepted += 1;
            continue;
        }
        let current = target.value_and_grad(&pac.a, &entries)?;
        if !finite(&current) {
            stats.nonfinite += 1;
            continue;
        }
        let half = 0.5 * step * step;
        let mut proposal = pac.a.clone();
        let x: Vec<f64> = entries.iter().map(|&(i, r, c)| pac.a[i][(r, c)]).collect();
        let x_new: Vec<f64> = x
            .iter()
            .zip(&current.d)
            .zip(&z)
            .map(|((xv, g), zv)| xv + half * g + step * zv)
            .collect();
        for (&(i, r, c), v) in entries.iter().zip(&x_new) {
            proposal[i][(r, c)] = *v;
        }
        let next = match target.value_and_grad(&proposal, &entries) {
            Ok(v) if finite(&v) => v,
            _ => {
                stats.nonfinite += 1;
                continue;
            }
        };
        let log_q = |to: &[f64], from: &[f64], grad: &[f64]| {
            -to.iter()
                .zip(from)
                .zip(grad)
                .map(|((t, f), g)| (t - f - half * g).powi(2))
                .sum::<f64>()
                / (4.0 * half)
        };
        let log_ratio = next.v - current.v + log_q(&x, &x_new, &next.d) - log_q(&x_new, &x, &current.d);
        if log_u < log_ratio {
            pac.a = proposal;
            stats.accepted += 1;
        }
    }
    Ok(stats)
}
