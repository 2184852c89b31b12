//! Model constants and state containers.
//!
//! Units throughout the crate: time in days, prices as basis-point offsets
//! from an arbitrary reference, sizes in ounces, intensities per day.

use nalgebra::{Matrix2, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every constant of the dynamics, client flow, execution costs and risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Spot volatility, bp·day^-1/2.
    #[serde(rename = "sigma_S")]
    pub sigma_s: f64,
    /// EFP relaxation rate, day^-1.
    #[serde(rename = "k_E")]
    pub k_e: f64,
    /// EFP volatility, bp·day^-1/2.
    #[serde(rename = "sigma_E")]
    pub sigma_e: f64,
    /// Relaxation rate of the EFP mean level, day^-1.
    #[serde(rename = "k_D")]
    pub k_d: f64,
    /// Volatility of the EFP mean level, bp·day^-1/2.
    #[serde(rename = "sigma_D")]
    pub sigma_d: f64,
    /// Long-run EFP mean, bp.
    #[serde(rename = "D_bar")]
    pub d_bar: f64,
    /// Spot/EFP Brownian correlation.
    pub rho: f64,
    /// Trade sizes of the pricing ladder, oz, strictly increasing.
    pub ladder: Vec<f64>,
    /// Base client intensity per ladder size, day^-1.
    pub lambda: Vec<f64>,
    pub alpha: f64,
    /// Price sensitivity of the fill curve, bp^-1.
    pub beta: f64,
    #[serde(rename = "psi_S")]
    pub psi_s: f64,
    #[serde(rename = "psi_F")]
    pub psi_f: f64,
    #[serde(rename = "eta_S")]
    pub eta_s: f64,
    #[serde(rename = "eta_F")]
    pub eta_f: f64,
    /// Risk aversion, inverse of bp·oz.
    pub gamma: f64,
    #[serde(rename = "K_S")]
    pub k_s: f64,
    #[serde(rename = "K_F")]
    pub k_f: f64,
    /// Horizon, day.
    #[serde(rename = "T")]
    pub horizon: f64,
}

impl ModelParams {
    /// Spot gold with futures hedging: the benchmark plain-OU EFP set,
    /// γ = 3e-4, no terminal penalty, one-hour horizon.
    pub fn gold() -> Self {
        ModelParams {
            sigma_s: 140.0,
            k_e: 8.0,
            sigma_e: 5.0,
            k_d: 0.0,
            sigma_d: 0.0,
            d_bar: 0.0,
            rho: 0.0,
            ladder: vec![100.0, 200.0, 500.0, 1000.0, 2000.0, 5000.0],
            lambda: vec![1600.0, 600.0, 1000.0, 600.0, 120.0, 80.0],
            alpha: -0.8,
            beta: 5.0,
            psi_s: 0.4,
            psi_f: 0.2,
            eta_s: 7e-8,
            eta_f: 3e-8,
            gamma: 3e-4,
            k_s: 0.0,
            k_f: 0.0,
            horizon: 1.0 / 24.0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: ModelParams = serde_json::from_str(text)?;
        params.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialise")
    }

    /// Returns the parameters unchanged when every invariant holds.
    pub fn validate(self) -> Result<Self> {
        fn finite(field: &'static str, v: f64) -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(field, format!("{field} must be finite")))
            }
        }
        fn positive(field: &'static str, v: f64) -> Result<()> {
            finite(field, v)?;
            if v > 0.0 {
                Ok(())
            } else {
                Err(Error::param(field, format!("{field} must be positive")))
            }
        }
        fn non_negative(field: &'static str, v: f64) -> Result<()> {
            finite(field, v)?;
            if v >= 0.0 {
                Ok(())
            } else {
                Err(Error::param(field, format!("{field} must be non-negative")))
            }
        }

        positive("sigma_S", self.sigma_s)?;
        positive("sigma_E", self.sigma_e)?;
        positive("k_E", self.k_e)?;
        non_negative("k_D", self.k_d)?;
        non_negative("sigma_D", self.sigma_d)?;
        finite("D_bar", self.d_bar)?;
        finite("rho", self.rho)?;
        if self.rho.abs() >= 1.0 {
            return Err(Error::param("rho", "rho must lie in (-1,1)"));
        }
        finite("alpha", self.alpha)?;
        positive("beta", self.beta)?;
        positive("gamma", self.gamma)?;
        positive("eta_S", self.eta_s)?;
        positive("eta_F", self.eta_f)?;
        non_negative("psi_S", self.psi_s)?;
        non_negative("psi_F", self.psi_f)?;
        non_negative("K_S", self.k_s)?;
        non_negative("K_F", self.k_f)?;
        positive("T", self.horizon)?;

        if self.ladder.is_empty() {
            return Err(Error::param("ladder", "ladder must not be empty"));
        }
        if self.ladder.len() != self.lambda.len() {
            return Err(Error::param(
                "lambda",
                format!(
                    "lambda has {} entries but the ladder has {}",
                    self.lambda.len(),
                    self.ladder.len()
                ),
            ));
        }
        for &z in &self.ladder {
            positive("ladder", z)?;
        }
        if self.ladder.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("ladder", "ladder must be strictly increasing"));
        }
        for &l in &self.lambda {
            positive("lambda", l)?;
        }
        Ok(self)
    }

    /// Σᵢ zᵢ λ(zᵢ), the size-weighted client intensity, oz/day.
    pub fn size_weighted_intensity(&self) -> f64 {
        self.ladder
            .iter()
            .zip(&self.lambda)
            .map(|(z, l)| z * l)
            .sum()
    }

    /// Stationary variance of the mean level, or `None` when it does not exist.
    pub fn mean_level_variance(&self) -> Option<f64> {
        (self.k_d > 0.0).then(|| self.sigma_d * self.sigma_d / (2.0 * self.k_d))
    }
}

/// Correlation of (W^S, W^E, W^D): only spot and EFP are correlated.
pub fn correlation_matrix(rho: f64) -> Matrix3<f64> {
    Matrix3::new(1.0, rho, 0.0, rho, 1.0, 0.0, 0.0, 0.0, 1.0)
}

/// Covariance of the (S, E, D) increments per unit time, bp²/day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariance {
    pub sigma: Matrix3<f64>,
}

impl Covariance {
    pub fn from_parts(vols: [f64; 3], corr: &Matrix3<f64>) -> Self {
        let sigma = Matrix3::from_fn(|i, j| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            vols[a] * corr[(a, b)] * vols[b]
        });
        Covariance { sigma }
    }

    /// The (E, D) block.
    pub fn tilde(&self) -> Matrix2<f64> {
        self.sigma.fixed_view::<2, 2>(1, 1).into_owned()
    }

    /// Lower-triangular L with L·Lᵀ = Σ, tolerating rank deficiency.
    pub fn factor(&self) -> Option<Matrix3<f64>> {
        psd_cholesky(&self.sigma)
    }
}

/// Σ = diag(σ_S, σ_E, σ_D)·R·diag(σ_S, σ_E, σ_D) with the spot/EFP-only R.
pub fn covariance_matrix(params: &ModelParams) -> Covariance {
    Covariance::from_parts(
        [params.sigma_s, params.sigma_e, params.sigma_d],
        &correlation_matrix(params.rho),
    )
}

/// Cholesky factorisation of a symmetric positive semi-definite matrix.
/// Zero pivots produce zero columns; a negative pivot returns `None`.
pub fn psd_cholesky(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let scale = m.diagonal().max().max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let mut l = Matrix3::zeros();
    for j in 0..3 {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol {
            return None;
        }
        if d <= tol {
            for i in j + 1..3 {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > 1e-8 * scale {
                    return None;
                }
            }
            continue;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in j + 1..3 {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    Some(l)
}

/// Continuous price state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MarketState {
    /// Time, day.
    pub t: f64,
    /// Spot offset, bp.
    pub s: f64,
    /// EFP spread, bp.
    pub e: f64,
    /// Mean level (true or filtered), bp.
    pub d: f64,
}

impl MarketState {
    pub fn futures(&self) -> f64 {
        self.s + self.e
    }
}

/// Dealer positions and cash.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Inventory {
    /// Spot inventory, oz.
    pub q_s: f64,
    /// Futures inventory, oz.
    pub q_f: f64,
    /// Cash, bp·oz.
    pub x: f64,
}

impl Inventory {
    pub fn flat() -> Self {
        Inventory::default()
    }

    /// Mark-to-market value X + q_S·S + q_F·(S+E), bp·oz.
    pub fn mark_to_market(&self, state: &MarketState) -> f64 {
        self.x + self.q_s * state.s + self.q_f * state.futures()
    }
}
