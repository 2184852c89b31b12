//! Bayesian filtering of the unobserved EFP mean level D from observed
//! spot and EFP increments, with the effective parameters that let the
//! control problem run on the filtered estimate.

pub mod calibrate;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Covariance, ModelParams};

/// Conditional mean and variance of D given the observed prices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    /// D̂, bp.
    pub d_hat: f64,
    /// ν², bp².
    pub nu2: f64,
}

impl FilterState {
    /// D̂₀ = D̄ and ν²₀ = ν∞².
    pub fn initial(params: &ModelParams) -> Self {
        FilterState {
            d_hat: params.d_bar,
            nu2: asymptotic_variance(params),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainMode {
    /// Gain held at the asymptotic variance ν∞².
    #[default]
    Stationary,
    /// ν² integrated along the variance ODE.
    Transient,
}

/// k_E / (σ_E √(1 − ρ²)).
fn gain_scale(params: &ModelParams) -> f64 {
    params.k_e / (params.sigma_e * (1.0 - params.rho * params.rho).sqrt())
}

/// dν²/dt = −k_E²ν⁴/((1 − ρ²)σ_E²) − 2k_Dν² + σ_D².
pub fn variance_ode_rhs(nu2: f64, params: &ModelParams) -> f64 {
    let g = gain_scale(params);
    -g * g * nu2 * nu2 - 2.0 * params.k_d * nu2 + params.sigma_d * params.sigma_d
}

/// Explicit Euler step of the variance ODE, floored at zero.
pub fn variance_ode_step(nu2: f64, params: &ModelParams, dt: f64) -> f64 {
    (nu2 + dt * variance_ode_rhs(nu2, params)).max(0.0)
}

/// ν∞² = σ_D² / (k_D + √(k_D² + k_E²σ_D²/((1 − ρ²)σ_E²))).
pub fn asymptotic_variance(params: &ModelParams) -> f64 {
    let sd2 = params.sigma_d * params.sigma_d;
    if sd2 == 0.0 {
        return 0.0;
    }
    let g = gain_scale(params);
    sd2 / (params.k_d + (params.k_d * params.k_d + g * g * sd2).sqrt())
}

/// Volatility and correlation of the filtered mean level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveNoise {
    /// σ̂_D, bp·day^-1/2.
    pub sigma_d: f64,
    /// R̂, rank 2.
    pub correlation: Matrix3<f64>,
}

/// σ̂_D = σ_D ξ/(k_D + √(k_D² + ξ²)), ξ = k_E σ_D/(σ_E √(1 − ρ²)), and R̂.
pub fn effective_sigma_d(params: &ModelParams) -> EffectiveNoise {
    let xi = gain_scale(params) * params.sigma_d;
    let sigma_d = if xi == 0.0 {
        0.0
    } else {
        params.sigma_d * xi / (params.k_d + (params.k_d * params.k_d + xi * xi).sqrt())
    };
    EffectiveNoise {
        sigma_d,
        correlation: filtered_correlation(params.rho),
    }
}

/// Correlation of the innovations (Ŵ^S, Ŵ^E, Ŵ^D).
pub fn filtered_correlation(rho: f64) -> Matrix3<f64> {
    let c = (1.0 - rho * rho).sqrt();
    Matrix3::new(1.0, rho, 0.0, rho, 1.0, c, 0.0, c, 1.0)
}

/// Covariance used by the control problem when it runs on D̂.
pub fn filtered_covariance(params: &ModelParams) -> Covariance {
    let eff = effective_sigma_d(params);
    Covariance::from_parts(
        [params.sigma_s, params.sigma_e, eff.sigma_d],
        &eff.correlation,
    )
}

/// One Euler step of the filter given the realised increments over `dt`.
///
/// `e` is the EFP at the start of the step.
pub fn filter_step(
    fs: FilterState,
    ds: f64,
    de: f64,
    e: f64,
    dt: f64,
    params: &ModelParams,
    mode: GainMode,
) -> FilterState {
    MeanLevelFilter::new(params, mode).step(fs, ds, de, e, dt)
}

/// Precomputed filter coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanLevelFilter {
    sigma_s: f64,
    sigma_e: f64,
    k_e: f64,
    k_d: f64,
    d_bar: f64,
    rho: f64,
    root: f64,
    gain: f64,
    nu_inf: f64,
    sigma_d2: f64,
    mode: GainMode,
}

impl MeanLevelFilter {
    pub fn new(params: &ModelParams, mode: GainMode) -> Self {
        MeanLevelFilter {
            sigma_s: params.sigma_s,
            sigma_e: params.sigma_e,
            k_e: params.k_e,
            k_d: params.k_d,
            d_bar: params.d_bar,
            rho: params.rho,
            root: (1.0 - params.rho * params.rho).sqrt(),
            gain: gain_scale(params),
            nu_inf: asymptotic_variance(params),
            sigma_d2: params.sigma_d * params.sigma_d,
            mode,
        }
    }

    #[inline]
    pub fn step(&self, fs: FilterState, ds: f64, de: f64, e: f64, dt: f64) -> FilterState {
        let dw_s = ds / self.sigma_s;
        let dw_e = (de + self.k_e * (e - fs.d_hat) * dt) / self.sigma_e;
        let dw_d = (dw_e - self.rho * dw_s) / self.root;
        let nu2 = match self.mode {
            GainMode::Stationary => self.nu_inf,
            GainMode::Transient => fs.nu2,
        };
        let d_hat = fs.d_hat - self.k_d * (fs.d_hat - self.d_bar) * dt + self.gain * nu2 * dw_d;
        let nu2_next = match self.mode {
            GainMode::Stationary => self.nu_inf,
            GainMode::Transient => {
                let rhs = -self.gain * self.gain * nu2 * nu2 - 2.0 * self.k_d * nu2 + self.sigma_d2;
                (nu2 + dt * rhs).max(0.0)
            }
        };
        FilterState {
            d_hat,
            nu2: nu2_next,
        }
    }
}

/// Stationary Cov(E_t, E_{t+h}) of the nested OU pair:
/// c_E e^{−k_E|h|} + c_D e^{−k_D|h|} with
/// c_D = k_E²σ_D² / (2k_D(k_E² − k_D²)) and
/// c_E = σ_E²/(2k_E) − k_Eσ_D² / (2(k_E² − k_D²)).
pub fn stationary_autocovariance(h: f64, params: &ModelParams) -> Result<f64> {
    let (c_e, c_d) = autocovariance_weights(params.k_e, params.sigma_e, params.k_d, params.sigma_d)?;
    let h = h.abs();
    Ok(c_e * (-params.k_e * h).exp() + c_d * (-params.k_d * h).exp())
}

pub(crate) fn autocovariance_weights(k_e: f64, sigma_e: f64, k_d: f64, sigma_d: f64) -> Result<(f64, f64)> {
    if !(k_e > 0.0) {
        return Err(Error::param("k_E", "k_E must be positive"));
    }
    let plain = sigma_e * sigma_e / (2.0 * k_e);
    if sigma_d == 0.0 {
        return Ok((plain, 0.0));
    }
    if !(k_d > 0.0) {
        return Err(Error::param("k_D", "stationary EFP requires k_D > 0"));
    }
    let gap = k_e * k_e - k_d * k_d;
    if gap == 0.0 {
        return Err(Error::param("k_D", "resonant case k_E = k_D is not supported"));
    }
    let sd2 = sigma_d * sigma_d;
    let c_d = k_e * k_e * sd2 / (2.0 * k_d * gap);
    let c_e = plain - k_e * sd2 / (2.0 * gap);
    Ok((c_e, c_d))
}
