//! Identification, summaries, forecasting and predictive evaluation of
//! posterior draws.

pub mod forecast;
pub mod identify;
pub mod scores;
pub mod simulate;
pub mod summary;

pub use forecast::{forecast_h, forward_filter_substep, ForecastInput, ForecastResult, HourlyMoments, StateMoments};
pub use identify::{identify_draw, IdentifiedDraw};
pub use scores::{brier_score, cpo_pml, kfold_split, log_score, CpoResult, ScoreReport};
pub use simulate::{simulate_data, Simulated};
pub use summary::{
    empirical_quantile, gaussian_loglik_matrix, k_posterior_summary, k_summary_from_values, mean_probit_probabilities,
    omega, posterior_mean_omega, probit_loglik_matrix, probit_probabilities, KSummary,
};
