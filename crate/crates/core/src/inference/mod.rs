//! Parameter-expanded MCMC for static, dynamic and probit factor models.

pub mod adapt;
pub mod chain;
pub mod conditionals;
pub mod dynamic;
pub mod model;
pub mod state;
pub mod store;
pub mod sweep;

pub use adapt::{active_columns, adapt_truncation, adaptation_probability, effective_k, TruncationEvent};
pub use chain::{chain_rngs, run_chain, run_chain_partial, Chain, Checkpoint};
pub use dynamic::{ffbs_factors, update_a_mala_blocks, MalaStats, VarTarget};
pub use model::{
    Dataset, FactorModelSpec, LoadingsPrior, MeanModel, MgpHyper, ModelKind, SamplerConfig, SigmaPrior,
    TruncationCriterion, TruncationMode,
};
pub use state::{simulate_response, simulate_var_path, ChainState};
pub use store::{Draw, DrawStore, Manifest};
pub use sweep::{gibbs_sweep, ProposalScales, SweepStats};
