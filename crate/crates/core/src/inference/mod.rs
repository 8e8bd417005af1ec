//! Variational inference of embedding posteriors and three-member ensembles.

mod ensemble;
mod fit;
mod objective;

pub use ensemble::{
    choose_dimensionality, fit_ensemble, select_dimensionality, warm_start_plan, DimensionSearch, Ensemble,
    DIMENSION_TIE_TOLERANCE, ENSEMBLE_SIZE, MIN_ENSEMBLE_OBSERVATIONS,
};
pub use fit::{
    fit_posterior, fit_posterior_split, predictive_loss, sample_holdout, EpochRecord, FitConfig, FitOutcome,
};
pub use objective::{elbo_loss, kl_term, ElboObjective, VariationalParams};

pub(crate) use objective::compile_all;
pub(crate) use fit::predictive_cross_entropy;
