//! Parametric families for the among-row scale `Φ(ϑ)` (or its inverse
//! `Ξ = Φ⁻¹`) and the multiplicative gamma process prior on the column scales.
//!
//! Correlation-form families fix `tr(Φ) = p` through a unit diagonal. The
//! alternative normalization `tr(Φ⁻¹) = p` is not implemented.

mod distance;
mod mgp;
mod transform;

pub use distance::{combined_distance, projection_distance, validate_metric, DistanceSpec};
pub use mgp::{mgp_psi, mgp_sample_prior, MgpState};
pub use transform::{ParamBound, ThetaPrior};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_variate::SpdMatrix;

/// Upper bound on the circular autoregressive parameter.
pub const CIRCULAR_AR_MAX: f64 = 1.0 - 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PhiFamily {
    /// `Φ = I_p`.
    Identity,
    /// `Φ = (1 − ϑ)I + ϑJ`, `−1/(p−1) < ϑ < 1`.
    Exchangeable,
    /// Block-diagonal with an exchangeable block (own ϑ) per group.
    BlockExchangeable { blocks: Vec<usize> },
    /// Tridiagonal precision of a stationary AR(1) process.
    ArPrecision,
    /// Tridiagonal Toeplitz precision with corners (circular AR(1)), `ϑ ∈ [0, 1)`.
    CircularArPrecision,
    /// `φᵢⱼ = exp(−dᵢⱼ)` with a generalized distance.
    DistanceExponential(DistanceSpec),
}

/// Which matrix the family parameterizes directly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Scale,
    Precision,
}

/// A family together with the dimension it is built at.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiModel {
    pub p: usize,
    #[serde(flatten)]
    pub family: PhiFamily,
}

/// `Φ`, its inverse and log determinant for one value of ϑ.
#[derive(Clone, Debug)]
pub struct PhiMatrices {
    pub phi: SpdMatrix,
    pub xi: SpdMatrix,
    pub log_det_phi: f64,
}

impl PhiModel {
    pub fn new(p: usize, family: PhiFamily) -> Result<Self> {
        if p == 0 {
            return Err(Error::Argument("Φ dimension must be positive".into()));
        }
        match &family {
            PhiFamily::BlockExchangeable { blocks } => {
                if blocks.iter().sum::<usize>() != p || blocks.contains(&0) {
                    return Err(Error::Argument(format!(
                        "block sizes {blocks:?} must be positive and sum to p = {p}"
                    )));
                }
            }
            PhiFamily::DistanceExponential(spec) => spec.check_dim(p)?,
            PhiFamily::CircularArPrecision if p < 3 => {
                return Err(Error::Argument("circular AR precision needs p ≥ 3".into()));
            }
            _ => {}
        }
        Ok(PhiModel { p, family })
    }

    pub fn side(&self) -> Side {
        match self.family {
            PhiFamily::ArPrecision | PhiFamily::CircularArPrecision => Side::Precision,
            _ => Side::Scale,
        }
    }

    /// Whether the produced `Φ` has a unit diagonal.
    pub fn is_correlation_form(&self) -> bool {
        self.side() == Side::Scale
    }

    pub fn bounds(&self) -> Vec<ParamBound> {
        let exch = |size: usize| {
            let lo = if size > 1 { -1.0 / (size as f64 - 1.0) } else { -1.0 };
            ParamBound::Interval(lo, 1.0)
        };
        match &self.family {
            PhiFamily::Identity => vec![],
            PhiFamily::Exchangeable => vec![exch(self.p)],
            PhiFamily::BlockExchangeable { blocks } => blocks.iter().map(|b| exch(*b)).collect(),
            PhiFamily::ArPrecision => vec![ParamBound::Interval(-1.0, 1.0)],
            PhiFamily::CircularArPrecision => vec![ParamBound::Interval(0.0, CIRCULAR_AR_MAX)],
            PhiFamily::DistanceExponential(spec) => vec![ParamBound::Positive; spec.n_length_scales()],
        }
    }

    pub fn n_params(&self) -> usize {
        self.bounds().len()
    }

    pub fn default_priors(&self) -> Vec<ThetaPrior> {
        self.bounds().iter().map(ThetaPrior::default_for).collect()
    }

    /// A central starting value inside the bounds.
    pub fn default_theta(&self) -> Vec<f64> {
        self.bounds()
            .iter()
            .map(|b| match b {
                ParamBound::Positive => 1.0,
                ParamBound::Interval(lo, hi) => {
                    if *lo <= 0.0 && *hi > 0.0 {
                        0.0
                    } else {
                        0.5 * (lo + hi)
                    }
                }
            })
            .collect()
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        let bounds = self.bounds();
        if theta.len() != bounds.len() {
            return Err(Error::Argument(format!(
                "expected {} hyperparameters, got {}",
                bounds.len(),
                theta.len()
            )));
        }
        for (i, (t, b)) in theta.iter().zip(&bounds).enumerate() {
            if !b.contains(*t, self.closed_lower()) {
                return Err(Error::Domain(format!("ϑ[{i}] = {t} outside {b:?}")));
            }
        }
        Ok(())
    }

    fn closed_lower(&self) -> bool {
        matches!(self.family, PhiFamily::CircularArPrecision)
    }

    /// The matrix the family parameterizes directly: `Φ` for scale-side
    /// families, `Ξ` for precision-side ones.
    fn raw(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        let p = self.p;
        let m = match &self.family {
            PhiFamily::Identity => DMatrix::identity(p, p),
            PhiFamily::Exchangeable => exchangeable(p, theta[0]),
            PhiFamily::BlockExchangeable { blocks } => {
                let mut m = DMatrix::zeros(p, p);
                let mut start = 0;
                for (b, t) in blocks.iter().zip(theta) {
                    m.view_mut((start, start), (*b, *b)).copy_from(&exchangeable(*b, *t));
                    start += b;
                }
                m
            }
            PhiFamily::ArPrecision => {
                let t = theta[0];
                let mut m = DMatrix::zeros(p, p);
                for i in 0..p {
                    m[(i, i)] = if i == 0 || i == p - 1 { 1.0 } else { 1.0 + t * t };
                    if i + 1 < p {
                        m[(i, i + 1)] = -t;
                        m[(i + 1, i)] = -t;
                    }
                }
                m
            }
            PhiFamily::CircularArPrecision => {
                let t = theta[0];
                let mut m = DMatrix::identity(p, p);
                for i in 0..p {
                    let j = (i + 1) % p;
                    m[(i, j)] = -t / 2.0;
                    m[(j, i)] = -t / 2.0;
                }
                m
            }
            PhiFamily::DistanceExponential(spec) => {
                DMatrix::from_fn(p, p, |i, j| (-spec.distance(theta, i, j)).exp())
            }
        };
        Ok(m)
    }

    /// Validated `Φ(ϑ)`.
    pub fn build_phi(&self, theta: &[f64]) -> Result<SpdMatrix> {
        Ok(self.build(theta)?.phi)
    }

    /// Validated `Ξ(ϑ) = Φ(ϑ)⁻¹`.
    pub fn build_xi(&self, theta: &[f64]) -> Result<SpdMatrix> {
        Ok(self.build(theta)?.xi)
    }

    pub fn build(&self, theta: &[f64]) -> Result<PhiMatrices> {
        let raw = self.raw(theta)?;
        let spd = SpdMatrix::new(raw).map_err(|e| match e {
            Error::Domain(msg) => Error::Internal(format!("Φ family produced a non-SPD matrix: {msg}")),
            other => other,
        })?;
        let log_det = spd.log_det();
        Ok(match self.side() {
            Side::Scale => PhiMatrices {
                xi: spd.inverse(),
                phi: spd,
                log_det_phi: log_det,
            },
            Side::Precision => PhiMatrices {
                phi: spd.inverse(),
                xi: spd,
                log_det_phi: -log_det,
            },
        })
    }
}

fn exchangeable(p: usize, t: f64) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::sym_eigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_distance_spec(p: usize, rng: &mut ChaCha8Rng) -> DistanceSpec {
        let coords = DMatrix::from_fn(p, 3, |_, _| rng.random::<f64>() * 2.0);
        // Ultrametric-style tree distance: random clustering heights.
        let pts: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
        let metric = DMatrix::from_fn(p, p, |i, j| (pts[i] - pts[j]).abs());
        DistanceSpec::new(Some(coords), vec![metric]).unwrap()
    }

    fn random_theta(model: &PhiModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
        model
            .bounds()
            .iter()
            .map(|b| match b {
                ParamBound::Positive => (rng.random::<f64>() * 4.0 - 2.0).exp(),
                ParamBound::Interval(lo, hi) => lo + (hi - lo) * (0.001 + 0.998 * rng.random::<f64>()),
            })
            .collect()
    }

    #[test]
    fn exchangeable_example_and_spectrum() {
        let m = PhiModel::new(2, PhiFamily::Exchangeable).unwrap();
        let phi = m.build_phi(&[0.5]).unwrap();
        assert_eq!(phi.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        for p in [3usize, 10] {
            let m = PhiModel::new(p, PhiFamily::Exchangeable).unwrap();
            let t = 0.3;
            let mut ev: Vec<f64> = sym_eigen(m.build_phi(&[t]).unwrap().matrix()).eigenvalues.iter().cloned().collect();
            ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!((ev[p - 1] - (1.0 + (p as f64 - 1.0) * t)).abs() < 1e-10);
            for e in &ev[..p - 1] {
                assert!((e - (1.0 - t)).abs() < 1e-10);
            }
        }
        assert!(m.build_phi(&[1.0]).is_err());
        assert!(m.build_phi(&[-1.0]).is_err());
    }

    #[test]
    fn ar_precision_two_by_two() {
        let m = PhiModel::new(2, PhiFamily::ArPrecision).unwrap();
        let mats = m.build(&[0.3]).unwrap();
        assert_eq!(mats.xi.matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 1.0]));
        let scaled = mats.phi.matrix() * (1.0 - 0.09);
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        assert!((scaled - expected).amax() < 1e-12);
    }

    #[test]
    fn ar_precision_is_ar1_correlation() {
        let p = 6;
        let t = 0.7;
        let m = PhiModel::new(p, PhiFamily::ArPrecision).unwrap();
        let phi = m.build_phi(&[t]).unwrap();
        for i in 0..p {
            for j in 0..p {
                let expected = t.powi((i as i32 - j as i32).abs()) / (1.0 - t * t);
                assert!((phi.matrix()[(i, j)] - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn circular_precision_spectrum() {
        let m = PhiModel::new(6, PhiFamily::CircularArPrecision).unwrap();
        let xi = m.build_xi(&[0.9]).unwrap();
        let mut ev: Vec<f64> = sym_eigen(xi.matrix()).eigenvalues.iter().cloned().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expected: Vec<f64> = (0..6)
            .map(|j| 1.0 - 0.9 * (2.0 * std::f64::consts::PI * j as f64 / 6.0).cos())
            .collect();
        expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in ev.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
            assert!(*a >= 0.1 - 1e-12);
        }
        assert_eq!(xi.matrix()[(0, 5)], -0.45);
        assert!(m.build_xi(&[1.0]).is_err());
        assert!(m.build_xi(&[0.0]).is_ok());
    }

    #[test]
    fn every_family_is_spd_on_random_hyperparameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for p in [3usize, 10, 24, 50] {
            let half = p / 2;
            let families = vec![
                PhiFamily::Identity,
                PhiFamily::Exchangeable,
                PhiFamily::BlockExchangeable { blocks: vec![half, p - half] },
                PhiFamily::ArPrecision,
                PhiFamily::CircularArPrecision,
                PhiFamily::DistanceExponential(random_distance_spec(p, &mut rng)),
            ];
            for family in families {
                let model = PhiModel::new(p, family).unwrap();
                for _ in 0..200 {
                    let theta = random_theta(&model, &mut rng);
                    let mats = model.build(&theta).unwrap_or_else(|e| panic!("{model:?} {theta:?}: {e}"));
                    if model.is_correlation_form() {
                        assert!(mats.phi.matrix().diagonal().iter().all(|d| *d == 1.0));
                        assert_eq!(mats.phi.trace(), p as f64);
                    }
                }
            }
        }
    }

    #[test]
    fn distance_exponential_range_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = random_distance_spec(8, &mut rng);
        let model = PhiModel::new(8, PhiFamily::DistanceExponential(spec)).unwrap();
        let theta = vec![0.5, 1.0, 2.0, 0.7];
        let phi = model.build_phi(&theta).unwrap();
        for i in 0..8 {
            assert_eq!(phi.matrix()[(i, i)], 1.0);
            for j in 0..8 {
                assert!(phi.matrix()[(i, j)] > 0.0 && phi.matrix()[(i, j)] <= 1.0);
            }
        }
        // Larger length-scale shrinks that distance component, raising correlation.
        let mut longer = theta.clone();
        longer[3] = 1.4;
        let phi2 = model.build_phi(&longer).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert!(phi2.matrix()[(i, j)] >= phi.matrix()[(i, j)]);
            }
        }
    }

    #[test]
    fn out_of_bounds_theta_is_domain_error() {
        let m = PhiModel::new(4, PhiFamily::ArPrecision).unwrap();
        assert!(matches!(m.build(&[1.2]), Err(Error::Domain(_))));
        assert!(matches!(m.build(&[0.1, 0.2]), Err(Error::Argument(_))));
    }
}
