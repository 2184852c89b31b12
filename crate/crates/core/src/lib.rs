//! Spot precious-metals market making with futures hedging.
//!
//! Prices follow an arithmetic Brownian spot and a nested Ornstein-Uhlenbeck
//! EFP spread. The value function is approximated by a quadratic form whose
//! coefficients solve a backward matrix Riccati system; quotes and hedging
//! rates follow from it in closed form.
//!
//! Units throughout: time in days, prices in bp offsets, sizes in oz.

pub mod error;
pub mod execution;
pub mod filter;
pub mod flow;
pub mod params;
pub mod policy;
pub mod riccati;
pub mod sim;

pub use error::{Error, Result};

/// Library version.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use execution::{CostSpec, Venue};
pub use filter::{FilterState, GainMode, MeanLevelFilter};
pub use flow::{fill_probability, fit_quadratic, optimal_offset, quote_hamiltonian, QuadHamiltonian};
pub use params::{covariance_matrix, Covariance, Inventory, MarketState, ModelParams};
pub use policy::{state_vec, ControlDecision, Policy, StateVec};
pub use riccati::{build_system, solve, solve_model, Information, RiccatiSystem, SolveOptions, ValueApprox};
