//! Bayesian inference engine for multivariate areal disease mapping.
//!
//! Builds DAGAR/MDAGAR precision matrices on adjacency graphs, fits the
//! hierarchical model by Gibbs/Metropolis sampling, and selects or averages
//! over disease orderings via bridge-sampling marginal likelihoods.

pub mod dagar;
pub mod diagnostics;
pub mod error;
pub mod evidence;
pub mod gibbs;
pub mod graph;
pub mod joint;
pub mod likelihood;
pub mod model;
pub mod sim;

pub use error::{Error, Result};
