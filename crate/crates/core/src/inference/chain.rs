//! Running a single chain: burn-in, thinning, adaptation, checkpoints.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adapt::{adapt_truncation, TruncationEvent};
use super::model::{Dataset, FactorModelSpec, SamplerConfig};
use super::state::ChainState;
use super::store::{Acceptance, Draw, DrawStore};
use super::sweep::{gibbs_sweep, ProposalScales};
use crate::error::{Error, Result};

const THETA_TARGET: f64 = 0.3;
const VARSIGMA_TARGET: f64 = 0.3;
const MALA_TARGET: f64 = 0.574;
const DEFAULT_THETA_SCALE: f64 = 0.3;

/// Main and adaptation random streams of a chain.
pub fn chain_rngs(seed: u64, chain_id: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut main = ChaCha8Rng::seed_from_u64(seed);
    main.set_stream(2 * chain_id);
    let mut adapt = ChaCha8Rng::seed_from_u64(seed);
    adapt.set_stream(2 * chain_id + 1);
    (main, adapt)
}

/// Everything needed to continue a chain exactly where it stopped.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec_digest: String,
    pub data_digest: String,
    pub config: SamplerConfig,
    pub iteration: usize,
    pub state: ChainState,
    pub rng: ChaCha8Rng,
    pub adapt_rng: ChaCha8Rng,
    pub scales: ProposalScales,
    /// Robbins–Monro log multipliers of the ϑ, ς̌ and MALA scales.
    pub log_adjust: [f64; 3],
    pub acceptance: Acceptance,
    pub events: Vec<TruncationEvent>,
    pub draws: Vec<StoredDraw>,
}

/// Serializable form of a [`Draw`] for checkpoints.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoredDraw {
    iteration: usize,
    lambda: nalgebra::DMatrix<f64>,
    sigma2: nalgebra::DVector<f64>,
    beta: nalgebra::DMatrix<f64>,
    kappa: Option<nalgebra::DMatrix<f64>>,
    theta: Vec<f64>,
    rho: Vec<f64>,
    varsigma_check: Option<f64>,
    pac: Option<Vec<nalgebra::DMatrix<f64>>>,
    eta_tail: Option<nalgebra::DMatrix<f64>>,
}

impl From<&Draw> for StoredDraw {
    fn from(d: &Draw) -> Self {
        StoredDraw {
            iteration: d.iteration,
            lambda: d.lambda.clone(),
            sigma2: d.sigma2.clone(),
            beta: d.beta.clone(),
            kappa: d.kappa.clone(),
            theta: d.theta.clone(),
            rho: d.rho.clone(),
            varsigma_check: d.varsigma_check,
            pac: d.pac.clone(),
            eta_tail: d.eta_tail.clone(),
        }
    }
}

impl From<StoredDraw> for Draw {
    fn from(d: StoredDraw) -> Self {
        Draw {
            iteration: d.iteration,
            lambda: d.lambda,
            sigma2: d.sigma2,
            beta: d.beta,
            kappa: d.kappa,
            theta: d.theta,
            rho: d.rho,
            varsigma_check: d.varsigma_check,
            pac: d.pac,
            eta_tail: d.eta_tail,
        }
    }
}

/// A chain in progress.
pub struct Chain<'a> {
    spec: &'a FactorModelSpec,
    data: &'a Dataset,
    config: SamplerConfig,
    iteration: usize,
    state: ChainState,
    rng: ChaCha8Rng,
    adapt_rng: ChaCha8Rng,
    scales: ProposalScales,
    log_adjust: [f64; 3],
    acceptance: Acceptance,
    events: Vec<TruncationEvent>,
    draws: Vec<Draw>,
}

impl<'a> Chain<'a> {
    pub fn new(spec: &'a FactorModelSpec, data: &'a Dataset, config: &SamplerConfig) -> Result<Self> {
        spec.validate()?;
        data.check_against(spec)?;
        config.validate(spec)?;
        let (mut rng, adapt_rng) = chain_rngs(config.seed, config.chain_id);
        let state = ChainState::initial(spec, data, config.initial_h(spec), &mut rng)?;
        let scales = ProposalScales {
            theta: config
                .theta_scales
                .clone()
                .unwrap_or_else(|| vec![DEFAULT_THETA_SCALE; spec.phi.n_params()]),
            varsigma: config.varsigma_scale,
            mala_step: config.mala_step,
            mala_block: config.mala_block,
        };
        Ok(Chain {
            spec,
            data,
            config: config.clone(),
            iteration: 0,
            state,
            rng,
            adapt_rng,
            scales,
            log_adjust: [0.0; 3],
            acceptance: Acceptance::default(),
            events: Vec::new(),
            draws: Vec::new(),
        })
    }

    /// Continue from a checkpoint written by [`Chain::checkpoint`].
    pub fn resume(spec: &'a FactorModelSpec, data: &'a Dataset, checkpoint: Checkpoint) -> Result<Self> {
        if checkpoint.spec_digest != spec.digest() {
            return Err(Error::Argument(format!(
                "checkpoint spec digest {} does not match {}",
                checkpoint.spec_digest,
                spec.digest()
            )));
        }
        if checkpoint.data_digest != data.digest() {
            return Err(Error::Argument(format!(
                "checkpoint data digest {} does not match {}",
                checkpoint.data_digest,
                data.digest()
            )));
        }
        checkpoint.state.validate(spec, data)?;
        let mut chain = Chain::new(spec, data, &checkpoint.config)?;
        chain.iteration = checkpoint.iteration;
        chain.state = checkpoint.state;
        chain.rng = checkpoint.rng;
        chain.adapt_rng = checkpoint.adapt_rng;
        chain.log_adjust = checkpoint.log_adjust;
        chain.scales = checkpoint.scales;
        chain.acceptance = checkpoint.acceptance;
        chain.events = checkpoint.events;
        chain.draws = checkpoint.draws.into_iter().map(Draw::from).collect();
        Ok(chain)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            spec_digest: self.spec.digest(),
            data_digest: self.data.digest(),
            config: self.config.clone(),
            iteration: self.iteration,
            state: self.state.clone(),
            rng: self.rng.clone(),
            adapt_rng: self.adapt_rng.clone(),
            scales: self.scales.clone(),
            log_adjust: self.log_adjust,
            acceptance: self.acceptance,
            events: self.events.clone(),
            draws: self.draws.iter().map(StoredDraw::from).collect(),
        }
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn total_iterations(&self) -> usize {
        self.config.burn_in + self.config.iterations
    }

    fn scales_with_adjustment(&self) -> ProposalScales {
        let mut s = self.scales.clone();
        let [t, v, m] = self.log_adjust.map(f64::exp);
        s.theta.iter_mut().for_each(|x| *x *= t);
        s.varsigma *= v;
        s.mala_step *= m;
        s
    }

    /// One sweep, the adaptation step and, after burn-in, bookkeeping.
    pub fn step(&mut self) -> Result<()> {
        let i = self.iteration + 1;
        let in_burn_in = i <= self.config.burn_in;
        let scales = self.scales_with_adjustment();
        let stats = gibbs_sweep(&mut self.state, self.data, self.spec, &scales, &mut self.rng)
            .map_err(|e| e.at_iteration(i))?;
        let phis = self.spec.phi.build(&self.state.theta).map_err(|e| Error::numerical("phi", e.to_string()).at_iteration(i))?;
        if let Some(ev) = adapt_truncation(&mut self.state, self.spec, &phis, i, &self.config, &mut self.adapt_rng)
            .map_err(|e| e.at_iteration(i))?
        {
            self.events.push(ev);
        }
        if in_burn_in && self.config.tune_during_burn_in {
            let gain = (i as f64).powf(-0.6);
            let rates = [
                stats.theta_accepted.map(|a| f64::from(u8::from(a)) - THETA_TARGET),
                stats.varsigma_accepted.map(|a| f64::from(u8::from(a)) - VARSIGMA_TARGET),
                (stats.mala.proposed > 0)
                    .then(|| stats.mala.accepted as f64 / stats.mala.proposed as f64 - MALA_TARGET),
            ];
            for (adj, r) in self.log_adjust.iter_mut().zip(rates) {
                if let Some(r) = r {
                    *adj = (*adj + gain * r).clamp(-20.0, 20.0);
                }
            }
            if i == self.config.burn_in {
                self.scales = self.scales_with_adjustment();
                self.log_adjust = [0.0; 3];
            }
        }
        if !in_burn_in {
            let a = &mut self.acceptance;
            if let Some(acc) = stats.theta_accepted {
                a.theta_proposed += 1;
                a.theta_accepted += u64::from(acc);
            }
            if let Some(acc) = stats.varsigma_accepted {
                a.varsigma_proposed += 1;
                a.varsigma_accepted += u64::from(acc);
            }
            a.mala_proposed += stats.mala.proposed;
            a.mala_accepted += stats.mala.accepted;
            a.mala_nonfinite += stats.mala.nonfinite;
            a.rotation_proposed += stats.rotation.0;
            a.rotation_accepted += stats.rotation.1;
            if (i - self.config.burn_in).is_multiple_of(self.config.thin) {
                self.draws.push(Draw::from_state(&self.state, self.spec, i));
            }
        }
        self.iteration = i;
        Ok(())
    }

    /// Run until `target` iterations have completed (or the chain ends).
    pub fn run_to(&mut self, target: usize) -> Result<()> {
        while self.iteration < target.min(self.total_iterations()) {
            self.step()?;
        }
        Ok(())
    }

    pub fn into_store(self, failure: Option<String>) -> DrawStore {
        let scales = self.scales_with_adjustment();
        DrawStore::assemble(
            self.spec,
            self.data,
            &self.config,
            self.draws,
            self.events,
            self.acceptance,
            Some(scales),
            failure,
        )
    }
}

/// Run a chain to completion. On failure the draws made so far are kept in
/// a store flagged as partial, returned alongside the error.
pub fn run_chain_partial(
    spec: &FactorModelSpec,
    data: &Dataset,
    config: &SamplerConfig,
) -> std::result::Result<DrawStore, (Error, Option<DrawStore>)> {
    let mut chain = Chain::new(spec, data, config).map_err(|e| (e, None))?;
    let total = chain.total_iterations();
    match chain.run_to(total) {
        Ok(()) => Ok(chain.into_store(None)),
        Err(e) => {
            let msg = e.to_string();
            Err((e, Some(chain.into_store(Some(msg)))))
        }
    }
}

pub fn run_chain(spec: &FactorModelSpec, data: &Dataset, config: &SamplerConfig) -> Result<DrawStore> {
    run_chain_partial(spec, data, config).map_err(|(e, _)| e)
}
