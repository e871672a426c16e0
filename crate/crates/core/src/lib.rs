//! Multiobjective Bayesian hyperparameter search for Fourier-neural-operator
//! ocean surrogates.

pub mod error;
pub mod eval;
pub mod exec;
pub mod fno;
pub mod forest;
pub mod ocean;
pub mod optimizer;
pub mod pareto;
pub mod seed;
pub mod space;
pub mod synthetic;
pub mod trial;

pub use error::{Error, Result};
pub use forest::{Forest, ForestConfig};
pub use optimizer::{Optimizer, OptimizerSettings, Proposal, Scalarization};
pub use pareto::{hypervolume2d, pareto_front};
pub use space::{default_space, Configuration, DimensionSpec, Scale, SearchSpace, Value};
pub use trial::{ObjectiveVector, Outcome, Stopper, TrialRecord};
