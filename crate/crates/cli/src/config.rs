//! The TOML run configuration and its translation into model and sampler
//! settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use structfactor::inference::{
    Dataset, FactorModelSpec, LoadingsPrior, MeanModel, MgpHyper, ModelKind, SamplerConfig, SigmaPrior,
    TruncationCriterion, TruncationMode,
};
use structfactor::structured_prior::{DistanceSpec, PhiFamily, PhiModel};

use crate::error::{at_path, CliError, CliResult};
use crate::io::{read_table, Table};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub data: DataSection,
    pub sampler: SamplerSection,
    pub simulate: SimulateSection,
    pub forecast: ForecastSection,
    pub score: ScoreSection,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    #[default]
    Static,
    Dynamic,
    Probit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loadings {
    #[default]
    MatrixNormal,
    MatrixT,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phi {
    #[default]
    Identity,
    Exchangeable,
    BlockExchangeable,
    ArPrecision,
    CircularArPrecision,
    Distance,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mean {
    #[default]
    Constant,
    Regression,
    Hierarchical,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    Epsilon,
    #[default]
    Proportion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: Kind,
    /// VAR order of the dynamic model.
    pub var_order: usize,
    /// Number of variables; taken from the data when omitted.
    pub p: Option<usize>,
    pub loadings: Loadings,
    pub varsigma_rate: f64,
    pub phi: Phi,
    pub blocks: Vec<usize>,
    /// p×c covariates for the projection distance, one row per variable.
    pub distance_coordinates: Option<PathBuf>,
    /// p×p precomputed distance matrices.
    pub distance_metrics: Vec<PathBuf>,
    pub mgp_a1: f64,
    pub mgp_a2: f64,
    pub sigma_shape: f64,
    pub sigma_rate: f64,
    pub sigma_fixed: Option<f64>,
    pub mean: Mean,
    pub mean_prior_var: f64,
    pub s_beta2: f64,
    pub s_kappa2: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: Kind::Static,
            var_order: 1,
            p: None,
            loadings: Loadings::MatrixNormal,
            varsigma_rate: 1.0,
            phi: Phi::Identity,
            blocks: Vec::new(),
            distance_coordinates: None,
            distance_metrics: Vec::new(),
            mgp_a1: 2.1,
            mgp_a2: 3.1,
            sigma_shape: 3.1,
            sigma_rate: 2.1,
            sigma_fixed: None,
            mean: Mean::Constant,
            mean_prior_var: 10.0,
            s_beta2: 1.0,
            s_kappa2: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// n×p observations.
    pub y: Option<PathBuf>,
    /// n×c mean covariates.
    pub w: Option<PathBuf>,
    /// p×q meta-covariates.
    pub x: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub burn_in: usize,
    pub iterations: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    pub threads: Option<usize>,
    /// Fixed truncation level; disables adaptation.
    pub fixed_h: Option<usize>,
    pub initial_h: Option<usize>,
    pub alpha0: f64,
    pub alpha1: f64,
    pub adapt_start: usize,
    pub criterion: Criterion,
    pub epsilon: f64,
    pub t: f64,
    pub mala_step: f64,
    pub mala_block: usize,
    pub varsigma_scale: f64,
    pub theta_scales: Option<Vec<f64>>,
    pub tune: bool,
    /// Write a checkpoint every this many iterations.
    pub checkpoint_every: Option<usize>,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let d = SamplerConfig::default();
        let TruncationMode::Adaptive { alpha0, alpha1, start, .. } = TruncationMode::default() else {
            unreachable!("adaptive by default")
        };
        SamplerSection {
            burn_in: d.burn_in,
            iterations: d.iterations,
            thin: d.thin,
            seed: d.seed,
            chains: 1,
            threads: None,
            fixed_h: None,
            initial_h: None,
            alpha0,
            alpha1,
            adapt_start: start,
            criterion: Criterion::Proportion,
            epsilon: 1e-3,
            t: 0.999,
            mala_step: d.mala_step,
            mala_block: d.mala_block,
            varsigma_scale: d.varsigma_scale,
            theta_scales: None,
            tune: true,
            checkpoint_every: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub n: usize,
    /// Number of true factors.
    pub factors: usize,
    /// p×k true loadings; drawn from the prior when omitted.
    pub lambda: Option<PathBuf>,
    /// Common idiosyncratic variance overriding the prior draw.
    pub sigma2: Option<f64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection { n: 100, factors: 2, lambda: None, sigma2: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Origin {
    /// Zero-based day (row of Y) holding the last observation.
    pub day: usize,
    /// Hours of that day observed, 1..=p.
    pub hours: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    pub horizon: usize,
    /// Forecast origins; the end of the data when empty.
    pub origins: Vec<Origin>,
    /// Mean covariates for days after the data, when W is not constant.
    pub w_future: Option<PathBuf>,
}

impl Default for ForecastSection {
    fn default() -> Self {
        ForecastSection { horizon: 24, origins: Vec::new(), w_future: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    /// Probabilities to score directly against `outcomes`.
    pub predictions: Option<PathBuf>,
    pub outcomes: Option<PathBuf>,
    /// Held-out binary responses (and their covariates) scored with a fit.
    pub test_y: Option<PathBuf>,
    pub test_w: Option<PathBuf>,
    pub folds: usize,
    /// Refit on each training fold and score the held-out rows.
    pub cross_validate: bool,
}

impl Default for ScoreSection {
    fn default() -> Self {
        ScoreSection { predictions: None, outcomes: None, test_y: None, test_w: None, folds: 4, cross_validate: false }
    }
}

/// Command-line settings that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub chains: Option<usize>,
    pub threads: Option<usize>,
    pub fixed_h: Option<usize>,
    pub criterion: Option<Criterion>,
    pub epsilon: Option<f64>,
    pub t: Option<f64>,
    pub horizon: Option<usize>,
}

/// A parsed configuration together with the directory its paths are relative to.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn from_file(path: &Path, overrides: &Overrides) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(at_path(path))?;
        let mut config: RunConfig = toml::from_str(&text).map_err(at_path(path))?;
        config.apply(overrides);
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Loaded { config, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() { p.to_path_buf() } else { self.base.join(p) }
    }

    /// The configuration in canonical TOML form.
    pub fn canonical(&self) -> String {
        toml::to_string(&self.config).expect("configuration serializes")
    }

    fn table(&self, p: &Path) -> CliResult<(PathBuf, Table)> {
        let path = self.resolve(p);
        let t = read_table(&path)?;
        Ok((path, t))
    }

    /// Observations and covariates named in `[data]`, with cross-file
    /// dimension checks.
    pub fn dataset(&self) -> CliResult<Dataset> {
        let y_path = self.config.data.y.as_ref().ok_or_else(|| CliError::Validation("[data] y is required".into()))?;
        let (yp, y) = self.table(y_path)?;
        let w = match &self.config.data.w {
            Some(p) => {
                let (wp, w) = self.table(p)?;
                if w.values.nrows() != y.values.nrows() {
                    return Err(CliError::Validation(format!(
                        "{} has {} rows but {} has {}",
                        yp.display(),
                        y.values.nrows(),
                        wp.display(),
                        w.values.nrows()
                    )));
                }
                Some(w.values)
            }
            None => None,
        };
        let x = match &self.config.data.x {
            Some(p) => {
                let (xp, x) = self.table(p)?;
                if x.values.nrows() != y.values.ncols() {
                    return Err(CliError::Validation(format!(
                        "{} has {} columns but {} has {} rows",
                        yp.display(),
                        y.values.ncols(),
                        xp.display(),
                        x.values.nrows()
                    )));
                }
                Some(x.values)
            }
            None => None,
        };
        if let Some(p) = self.config.model.p {
            if p != y.values.ncols() {
                return Err(CliError::Validation(format!(
                    "[model] p = {p} but {} has {} columns",
                    yp.display(),
                    y.values.ncols()
                )));
            }
        }
        Ok(Dataset::new(y.values, w, x)?.with_labels(y.header)?)
    }

    fn distance(&self, p: usize) -> CliResult<DistanceSpec> {
        let m = &self.config.model;
        let coordinates = match &m.distance_coordinates {
            Some(path) => {
                let (cp, c) = self.table(path)?;
                if c.values.nrows() != p {
                    return Err(CliError::Validation(format!("{} has {} rows, expected p = {p}", cp.display(), c.values.nrows())));
                }
                Some(c.values)
            }
            None => None,
        };
        let mut metrics = Vec::new();
        for path in &m.distance_metrics {
            let (mp, d) = self.table(path)?;
            if d.values.shape() != (p, p) {
                return Err(CliError::Validation(format!(
                    "{} is {}x{}, expected {p}x{p}",
                    mp.display(),
                    d.values.nrows(),
                    d.values.ncols()
                )));
            }
            metrics.push(d.values);
        }
        Ok(DistanceSpec::new(coordinates, metrics)?)
    }

    /// Model specification for `p` variables.
    pub fn spec(&self, p: usize) -> CliResult<FactorModelSpec> {
        let m = &self.config.model;
        let kind = match m.kind {
            Kind::Static => ModelKind::Static,
            Kind::Dynamic => ModelKind::Dynamic { m: m.var_order },
            Kind::Probit => ModelKind::Probit,
        };
        let loadings = match m.loadings {
            Loadings::MatrixNormal => LoadingsPrior::MatrixNormal,
            Loadings::MatrixT => LoadingsPrior::MatrixT { varsigma_rate: m.varsigma_rate },
        };
        let family = match m.phi {
            Phi::Identity => PhiFamily::Identity,
            Phi::Exchangeable => PhiFamily::Exchangeable,
            Phi::BlockExchangeable => PhiFamily::BlockExchangeable { blocks: m.blocks.clone() },
            Phi::ArPrecision => PhiFamily::ArPrecision,
            Phi::CircularArPrecision => PhiFamily::CircularArPrecision,
            Phi::Distance => PhiFamily::DistanceExponential(self.distance(p)?),
        };
        let sigma = match (m.kind, m.sigma_fixed) {
            (Kind::Probit, _) => SigmaPrior::Fixed { value: 1.0 },
            (_, Some(value)) => SigmaPrior::Fixed { value },
            _ => SigmaPrior::Gamma { shape: m.sigma_shape, rate: m.sigma_rate },
        };
        let mean = match m.mean {
            Mean::Constant => MeanModel::Constant { prior_var: m.mean_prior_var },
            Mean::Regression => MeanModel::Regression { prior_var: m.mean_prior_var },
            Mean::Hierarchical => MeanModel::Hierarchical { s_beta2: m.s_beta2, s_kappa2: m.s_kappa2 },
        };
        Ok(FactorModelSpec::new(
            kind,
            loadings,
            PhiModel::new(p, family)?,
            MgpHyper { a1: m.mgp_a1, a2: m.mgp_a2 },
            sigma,
            mean,
        )?)
    }

    /// Sampler settings for one chain.
    pub fn sampler(&self, chain_id: u64) -> SamplerConfig {
        let s = &self.config.sampler;
        SamplerConfig {
            burn_in: s.burn_in,
            iterations: s.iterations,
            thin: s.thin,
            seed: s.seed,
            chain_id,
            truncation: match s.fixed_h {
                Some(h) => TruncationMode::Fixed { h },
                None => TruncationMode::Adaptive {
                    initial_h: s.initial_h,
                    alpha0: s.alpha0,
                    alpha1: s.alpha1,
                    start: s.adapt_start,
                },
            },
            criterion: self.criterion(),
            mala_step: s.mala_step,
            mala_block: s.mala_block,
            theta_scales: s.theta_scales.clone(),
            varsigma_scale: s.varsigma_scale,
            tune_during_burn_in: s.tune,
        }
    }

    pub fn criterion(&self) -> TruncationCriterion {
        let s = &self.config.sampler;
        match s.criterion {
            Criterion::Epsilon => TruncationCriterion::Epsilon { epsilon: s.epsilon },
            Criterion::Proportion => TruncationCriterion::Proportion { t: s.t },
        }
    }
}

impl RunConfig {
    fn apply(&mut self, o: &Overrides) {
        let s = &mut self.sampler;
        if let Some(v) = o.seed {
            s.seed = v;
        }
        if let Some(v) = o.chains {
            s.chains = v;
        }
        if let Some(v) = o.threads {
            s.threads = Some(v);
        }
        if let Some(v) = o.fixed_h {
            s.fixed_h = Some(v);
        }
        if let Some(v) = o.criterion {
            s.criterion = v;
        }
        if let Some(v) = o.epsilon {
            s.epsilon = v;
        }
        if let Some(v) = o.t {
            s.t = v;
        }
        if let Some(v) = o.horizon {
            self.forecast.horizon = v;
        }
    }
}
