//! Explainers retargeted at behavior measures: training-record influence,
//! Shapley feature attribution through marginalized policies, and
//! KL-regularized counterfactual policy search.

mod counterfactual;
mod influence;
mod shapley;
mod toy_mdp;

pub use counterfactual::{counterfactual, mean_kl, CounterfactualConfig, CounterfactualResult, TraceEntry};
pub use influence::{influence, prepared_records, InfluenceReport, InfluenceScore, INFLUENCE_SIGN_CONVENTION};
pub use shapley::{
    empirical_shapley, exact_shapley, tabular_shapley, CoalitionGame, EmpiricalGame, FeatureGrouping, ShapleyReport,
    TabularGame, TabularTarget, DEFAULT_MATCH_TOLERANCE, MAX_EXACT_FEATURES,
};
pub use toy_mdp::{TabularMeasure, TabularPolicy, ToyMdp, TOY_ACTIONS, TOY_FEATURES, TOY_STATES};
