//! Prediction with Bayesian factor models.
//!
//! Features and a scalar outcome are modelled jointly by a Gaussian factor
//! model; predictions come from the regression rule that the joint model
//! induces. Estimators: conjugate mean-field variational Bayes (linear and
//! Pólya-Gamma logistic outcomes, with optional empirical-Bayes shrinkage per
//! feature group), Gibbs samplers, the proper-correlation variant, and
//! frequentist baselines (maximum likelihood and penalized factor analysis,
//! semi-supervised EM, two-step regression, ridge).

pub mod correlation;
pub mod data;
pub mod freq;
pub mod gibbs;
pub mod hyper;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod sim;
pub mod validation;
pub mod vb_linear;
pub mod vb_logistic;

pub use data::{Dataset, Outcome, OutcomeKind, Standardizer};
pub use hyper::{EbMode, HyperParams};
pub use model::{FactorParams, PredictionRule};
