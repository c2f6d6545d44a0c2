use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matrix_variate::max_truncation;
use crate::structured_prior::{PhiModel, ThetaPrior};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ModelKind {
    Static,
    /// Factors follow a stationary VAR(m) with unit stationary variance.
    Dynamic { m: usize },
    /// Binary responses thresholding latent Gaussian utilities; `Σ = I`.
    Probit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LoadingsPrior {
    /// `Λ ~ N(0, Φ(ϑ), Ψ)`.
    MatrixNormal,
    /// `Λ ~ t(ς, 0, (ς−2)Φ(ϑ), Ψ)` with `1/(ς−4) ~ Exp(varsigma_rate)`.
    MatrixT { varsigma_rate: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SigmaPrior {
    /// `σᵢ⁻² ~ Gam(shape, rate)`.
    Gamma { shape: f64, rate: f64 },
    /// All idiosyncratic variances held at one value.
    Fixed { value: f64 },
}

impl Default for SigmaPrior {
    fn default() -> Self {
        SigmaPrior::Gamma { shape: 3.1, rate: 2.1 }
    }
}

/// Mean of observation `t` is `B wₜ` for a p×c coefficient matrix `B`; a
/// constant mean is the case `wₜ = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum MeanModel {
    Constant { prior_var: f64 },
    /// Independent `N(0, prior_var)` coefficients.
    Regression { prior_var: f64 },
    /// `βⱼ ~ N(Kᵀxⱼ, s_β² I)` given meta-covariates `xⱼ`, `κ ~ N(0, s_κ²)`.
    Hierarchical { s_beta2: f64, s_kappa2: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MgpHyper {
    pub a1: f64,
    pub a2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorModelSpec {
    pub kind: ModelKind,
    pub p: usize,
    pub loadings: LoadingsPrior,
    pub phi: PhiModel,
    pub theta_priors: Vec<ThetaPrior>,
    pub mgp: MgpHyper,
    pub sigma: SigmaPrior,
    pub mean: MeanModel,
}

impl FactorModelSpec {
    pub fn new(
        kind: ModelKind,
        loadings: LoadingsPrior,
        phi: PhiModel,
        mgp: MgpHyper,
        sigma: SigmaPrior,
        mean: MeanModel,
    ) -> Result<Self> {
        let theta_priors = phi.default_priors();
        let spec = FactorModelSpec { kind, p: phi.p, loadings, phi, theta_priors, mgp, sigma, mean };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p != self.phi.p {
            return Err(Error::Argument(format!("p = {} but Φ is built at p = {}", self.p, self.phi.p)));
        }
        if let ModelKind::Dynamic { m } = self.kind {
            if m == 0 {
                return Err(Error::Argument("VAR order must be at least 1".into()));
            }
        }
        if let LoadingsPrior::MatrixT { varsigma_rate } = self.loadings {
            if !(varsigma_rate > 0.0) {
                return Err(Error::Argument("ς̌ prior rate must be positive".into()));
            }
        }
        if !(self.mgp.a1 > 0.0 && self.mgp.a2 > 0.0) {
            return Err(Error::Argument("MGP shapes must be positive".into()));
        }
        match self.sigma {
            SigmaPrior::Gamma { shape, rate } if !(shape > 0.0 && rate > 0.0) => {
                return Err(Error::Argument("σ prior shape and rate must be positive".into()));
            }
            SigmaPrior::Fixed { value } if !(value > 0.0) => {
                return Err(Error::Argument("fixed σ² must be positive".into()));
            }
            _ => {}
        }
        if self.kind == ModelKind::Probit && self.sigma != (SigmaPrior::Fixed { value: 1.0 }) {
            return Err(Error::Argument("the probit model requires Σ fixed at the identity".into()));
        }
        let positive = match self.mean {
            MeanModel::Constant { prior_var } | MeanModel::Regression { prior_var } => prior_var > 0.0,
            MeanModel::Hierarchical { s_beta2, s_kappa2 } => s_beta2 > 0.0 && s_kappa2 > 0.0,
        };
        if !positive {
            return Err(Error::Argument("mean-model prior variances must be positive".into()));
        }
        let bounds = self.phi.bounds();
        if self.theta_priors.len() != bounds.len() {
            return Err(Error::Argument(format!(
                "{} ϑ priors for {} hyperparameters",
                self.theta_priors.len(),
                bounds.len()
            )));
        }
        for (prior, bound) in self.theta_priors.iter().zip(&bounds) {
            prior.check(bound)?;
        }
        Ok(())
    }

    pub fn var_order(&self) -> usize {
        match self.kind {
            ModelKind::Dynamic { m } => m,
            _ => 0,
        }
    }

    pub fn is_matrix_t(&self) -> bool {
        matches!(self.loadings, LoadingsPrior::MatrixT { .. })
    }

    /// Largest truncation the adaptive sampler may grow to.
    pub fn truncation_cap(&self) -> usize {
        max_truncation(self.p).unwrap_or(0).max(1)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Observations plus covariates. `w` carries one row per observation (a
/// single column of ones for a constant mean); `x` holds meta-covariates with
/// one row per variable for the hierarchical mean model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub y: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub x: Option<DMatrix<f64>>,
    pub labels: Vec<String>,
}

impl Dataset {
    pub fn new(y: DMatrix<f64>, w: Option<DMatrix<f64>>, x: Option<DMatrix<f64>>) -> Result<Self> {
        let n = y.nrows();
        let w = w.unwrap_or_else(|| DMatrix::from_element(n, 1, 1.0));
        let labels = (1..=y.ncols()).map(|j| format!("y{j}")).collect();
        let data = Dataset { y, w, x, labels };
        data.check_shapes()?;
        Ok(data)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.p() {
            return Err(Error::Data(format!("{} labels for {} variables", labels.len(), self.p())));
        }
        self.labels = labels;
        Ok(self)
    }

    fn check_shapes(&self) -> Result<()> {
        if self.w.nrows() != self.n() {
            return Err(Error::Data(format!("W has {} rows, Y has {}", self.w.nrows(), self.n())));
        }
        if let Some(x) = &self.x {
            if x.nrows() != self.p() {
                return Err(Error::Data(format!("X has {} rows, Y has {} columns", x.nrows(), self.p())));
            }
        }
        for (name, m) in [("Y", Some(&self.y)), ("W", Some(&self.w)), ("X", self.x.as_ref())] {
            if let Some(m) = m {
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("{name} contains missing or non-finite values")));
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn c(&self) -> usize {
        self.w.ncols()
    }

    pub fn q(&self) -> usize {
        self.x.as_ref().map_or(0, |x| x.ncols())
    }

    /// Check the data against a model specification.
    pub fn check_against(&self, spec: &FactorModelSpec) -> Result<()> {
        self.check_shapes()?;
        if self.p() != spec.p {
            return Err(Error::Data(format!("data has {} variables, model expects {}", self.p(), spec.p)));
        }
        if let MeanModel::Constant { .. } = spec.mean {
            if self.c() != 1 || self.w.iter().any(|v| *v != 1.0) {
                return Err(Error::Data("a constant mean needs W to be a single column of ones".into()));
            }
        }
        if let MeanModel::Hierarchical { .. } = spec.mean {
            if self.x.is_none() {
                return Err(Error::Data("the hierarchical mean model needs meta-covariates X".into()));
            }
        }
        if spec.kind == ModelKind::Probit {
            if let Some(((t, j), v)) = self
                .y
                .iter()
                .enumerate()
                .map(|(idx, v)| ((idx % self.n(), idx / self.n()), v))
                .find(|(_, v)| **v != 0.0 && **v != 1.0)
            {
                return Err(Error::Data(format!(
                    "probit response ({}, {}) = {v} is not binary",
                    t + 1,
                    self.labels[j]
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the little-endian bytes of `Y`, `W` and `X`.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for m in [Some(&self.y), Some(&self.w), self.x.as_ref()] {
            match m {
                Some(m) => {
                    h.update((m.nrows() as u64).to_le_bytes());
                    h.update((m.ncols() as u64).to_le_bytes());
                    for v in m.iter() {
                        h.update(v.to_le_bytes());
                    }
                }
                None => h.update(b"none"),
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum TruncationCriterion {
    /// Columns with any `|λᵢⱼ| ≥ ε` are active.
    Epsilon { epsilon: f64 },
    /// Fewest top-ranked columns explaining a fraction `t` of `tr(Ω)`.
    Proportion { t: f64 },
}

impl Default for TruncationCriterion {
    fn default() -> Self {
        TruncationCriterion::Proportion { t: 0.999 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum TruncationMode {
    Fixed { h: usize },
    /// Adapt with probability `exp(α₀ + α₁ i)` from iteration `start`.
    Adaptive { initial_h: Option<usize>, alpha0: f64, alpha1: f64, start: usize },
}

impl Default for TruncationMode {
    fn default() -> Self {
        TruncationMode::Adaptive { initial_h: None, alpha0: -1.0, alpha1: -5e-4, start: 50 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub burn_in: usize,
    /// Sampling iterations after burn-in.
    pub iterations: usize,
    pub thin: usize,
    pub seed: u64,
    pub chain_id: u64,
    pub truncation: TruncationMode,
    pub criterion: TruncationCriterion,
    pub mala_step: f64,
    pub mala_block: usize,
    /// Random-walk scales for ϑ on the unconstrained scale (one per component).
    pub theta_scales: Option<Vec<f64>>,
    pub varsigma_scale: f64,
    /// Robbins–Monro tuning of the random-walk and MALA scales during burn-in.
    pub tune_during_burn_in: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            burn_in: 1000,
            iterations: 1000,
            thin: 1,
            seed: 1,
            chain_id: 0,
            truncation: TruncationMode::default(),
            criterion: TruncationCriterion::default(),
            mala_step: 0.05,
            mala_block: 4,
            theta_scales: None,
            varsigma_scale: 0.5,
            tune_during_burn_in: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, spec: &FactorModelSpec) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Argument("thinning must be at least 1".into()));
        }
        if self.mala_block == 0 {
            return Err(Error::Argument("MALA block length must be at least 1".into()));
        }
        if !(self.mala_step >= 0.0 && self.varsigma_scale >= 0.0) {
            return Err(Error::Argument("step sizes must be non-negative".into()));
        }
        match self.criterion {
            TruncationCriterion::Epsilon { epsilon } if !(epsilon > 0.0) => {
                return Err(Error::Argument("ε must be positive".into()));
            }
            TruncationCriterion::Proportion { t } if !(t > 0.0 && t < 1.0) => {
                return Err(Error::Argument(format!("T = {t} must lie in (0, 1)")));
            }
            _ => {}
        }
        match self.truncation {
            TruncationMode::Fixed { h } => {
                if h == 0 || h > spec.p.max(1) {
                    return Err(Error::Argument(format!("fixed H = {h} outside 1..={}", spec.p)));
                }
            }
            TruncationMode::Adaptive { initial_h, alpha0, alpha1, .. } => {
                if !(alpha0 <= 0.0 && alpha1 < 0.0) {
                    return Err(Error::Argument("adaptation needs α₀ ≤ 0 and α₁ < 0".into()));
                }
                if let Some(h) = initial_h {
                    if h == 0 || h > spec.truncation_cap() {
                        return Err(Error::Argument(format!(
                            "initial H = {h} outside 1..={}",
                            spec.truncation_cap()
                        )));
                    }
                }
            }
        }
        if let Some(scales) = &self.theta_scales {
            if scales.len() != spec.phi.n_params() || scales.iter().any(|s| !(*s >= 0.0)) {
                return Err(Error::Argument("ϑ scales must be non-negative, one per hyperparameter".into()));
            }
        }
        Ok(())
    }

    pub fn initial_h(&self, spec: &FactorModelSpec) -> usize {
        match self.truncation {
            TruncationMode::Fixed { h } => h,
            TruncationMode::Adaptive { initial_h, .. } => initial_h.unwrap_or_else(|| spec.truncation_cap()),
        }
    }

    pub fn is_adaptive(&self) -> bool {
        matches!(self.truncation, TruncationMode::Adaptive { .. })
    }
}
