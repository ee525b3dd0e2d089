//! Latent class choice model: specification, likelihood, estimation and inference.

mod estimate;
mod inference;
mod layout;
mod model;
mod spec;

pub use estimate::{
    estimate, estimate_sequential_membership, fit_from, random_start, run_em, start_seed, EmTrace,
    EstimationOptions, Fit,
};
pub use inference::{
    avg_predicted_probs, class_sequence_loglik, compensating_differential, differential,
    fit_statistics, marginal_loglik, membership_probs, standard_errors, AlternativeGroup, Block,
    Coefficient, ConvergenceInfo, EntryStatus, ErrorTables, EstimationResult, FitStats,
    NamedEstimate, StartSummary, Status, CWD_SIGNIFICANCE, NULL_MODEL,
};
pub use layout::{Blocks, Layout, Slot};
pub use model::{CompiledModel, RespondentTerms};
pub use spec::{ClassOrder, ModelSpec, ParamTable, Params};
