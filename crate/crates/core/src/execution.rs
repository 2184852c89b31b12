//! External hedging costs L(v) = ψ|v| + ηv² and their Legendre transforms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

/// Hedging venue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Venue {
    Spot,
    Futures,
}

impl Venue {
    /// Index of the venue's inventory in the state vector (q_S, q_F, E, D).
    pub fn index(self) -> usize {
        match self {
            Venue::Spot => 0,
            Venue::Futures => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    /// Linear coefficient, bp.
    pub psi: f64,
    /// Quadratic coefficient, bp·day/oz.
    pub eta: f64,
}

impl CostSpec {
    pub fn new(psi: f64, eta: f64) -> Result<Self> {
        if !(psi >= 0.0 && psi.is_finite()) {
            return Err(Error::param("psi", "psi must be non-negative"));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::param("eta", "eta must be positive"));
        }
        Ok(CostSpec { psi, eta })
    }

    pub fn for_venue(params: &ModelParams, venue: Venue) -> Self {
        match venue {
            Venue::Spot => CostSpec {
                psi: params.psi_s,
                eta: params.eta_s,
            },
            Venue::Futures => CostSpec {
                psi: params.psi_f,
                eta: params.eta_f,
            },
        }
    }

    /// Execution cost rate for a trading rate `v` (oz/day), bp·oz/day.
    #[inline]
    pub fn cost(&self, v: f64) -> f64 {
        self.psi * v.abs() + self.eta * v * v
    }

    /// sup_v (v·p − L(v)) = max(|p| − ψ, 0)² / 4η.
    #[inline]
    pub fn hamiltonian(&self, p: f64) -> f64 {
        let excess = (p.abs() - self.psi).max(0.0);
        excess * excess / (4.0 * self.eta)
    }

    /// Optimal execution rate for marginal value `p`; zero on |p| ≤ ψ.
    #[inline]
    pub fn hamiltonian_prime(&self, p: f64) -> f64 {
        let excess = (p.abs() - self.psi).max(0.0);
        p.signum() * excess / (2.0 * self.eta)
    }

    /// Hamiltonian of the purely quadratic cost ηv².
    #[inline]
    pub fn quad_hamiltonian(&self, p: f64) -> f64 {
        p * p / (4.0 * self.eta)
    }

    #[inline]
    pub fn quad_prime(&self, p: f64) -> f64 {
        p / (2.0 * self.eta)
    }

    /// Whether zero execution is optimal at marginal value `p`.
    pub fn in_no_execution_band(&self, p: f64) -> bool {
        p.abs() <= self.psi
    }
}
