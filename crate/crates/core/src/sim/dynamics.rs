//! Price dynamics: arithmetic Brownian spot, nested OU EFP and mean level.

use nalgebra::{Matrix3, Matrix4, SMatrix, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{psd_cholesky, Covariance, MarketState, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    /// Euler–Maruyama.
    #[default]
    Euler,
    /// Exact Gaussian transition of the linear system.
    Exact,
}

/// Fixed-step transition of (S, E, D).
#[derive(Debug, Clone, PartialEq)]
pub struct PriceDynamics {
    dt: f64,
    k_e: f64,
    k_d: f64,
    d_bar: f64,
    /// Factor of the per-step noise covariance.
    noise: Matrix3<f64>,
    /// Affine transition on (S, E, D, 1) for the exact scheme.
    transition: Option<Matrix4<f64>>,
}

impl PriceDynamics {
    pub fn new(params: &ModelParams, cov: &Covariance, scheme: Scheme, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        let (noise_cov, transition) = match scheme {
            Scheme::Euler => (cov.sigma * dt, None),
            Scheme::Exact => {
                let (phi, q) = exact_transition(params, &cov.sigma, dt);
                (q, Some(phi))
            }
        };
        let noise = psd_cholesky(&noise_cov)
            .ok_or_else(|| Error::Config("price covariance is not positive semi-definite".into()))?;
        Ok(PriceDynamics {
            dt,
            k_e: params.k_e,
            k_d: params.k_d,
            d_bar: params.d_bar,
            noise,
            transition,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advance the prices by one step; returns (ΔS, ΔE). `state.t` is untouched.
    #[inline]
    pub fn advance<R: Rng + ?Sized>(&self, state: &mut MarketState, rng: &mut R) -> (f64, f64) {
        let z = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let w = self.noise * z;
        let (s0, e0) = (state.s, state.e);
        match &self.transition {
            None => {
                let de = -self.k_e * (state.e - state.d) * self.dt;
                let dd = -self.k_d * (state.d - self.d_bar) * self.dt;
                state.s += w[0];
                state.e += de + w[1];
                state.d += dd + w[2];
            }
            Some(phi) => {
                let y = phi * nalgebra::Vector4::new(state.s, state.e, state.d, 1.0);
                state.s = y[0] + w[0];
                state.e = y[1] + w[1];
                state.d = y[2] + w[2];
            }
        }
        (state.s - s0, state.e - e0)
    }
}

/// Van Loan's construction: the affine drift matrix F on (S, E, D, 1) and
/// the noise covariance Q give Φ = e^{F·dt} and ∫₀^dt e^{Fs} Q e^{Fᵀs} ds.
fn exact_transition(params: &ModelParams, sigma: &Matrix3<f64>, dt: f64) -> (Matrix4<f64>, Matrix3<f64>) {
    let mut f = Matrix4::zeros();
    f[(1, 1)] = -params.k_e;
    f[(1, 2)] = params.k_e;
    f[(2, 2)] = -params.k_d;
    f[(2, 3)] = params.k_d * params.d_bar;
    let mut q = Matrix4::zeros();
    q.fixed_view_mut::<3, 3>(0, 0).copy_from(sigma);
    let mut c = SMatrix::<f64, 8, 8>::zeros();
    c.fixed_view_mut::<4, 4>(0, 0).copy_from(&(-f * dt));
    c.fixed_view_mut::<4, 4>(0, 4).copy_from(&(q * dt));
    c.fixed_view_mut::<4, 4>(4, 4).copy_from(&(f.transpose() * dt));
    let ec = c.exp();
    let phi: Matrix4<f64> = ec.fixed_view::<4, 4>(4, 4).transpose();
    let qd: Matrix4<f64> = phi * ec.fixed_view::<4, 4>(0, 4);
    let q3: Matrix3<f64> = qd.fixed_view::<3, 3>(0, 0).into_owned();
    (phi, (q3 + q3.transpose()) * 0.5)
}

/// Simulate `n` samples of (S, E, D) at spacing `dt` starting from `start`.
/// Returns the sampled states including the start.
pub fn simulate_prices<R: Rng + ?Sized>(
    params: &ModelParams,
    scheme: Scheme,
    dt: f64,
    n: usize,
    start: MarketState,
    rng: &mut R,
) -> Result<Vec<MarketState>> {
    let cov = crate::params::covariance_matrix(params);
    let dyn_ = PriceDynamics::new(params, &cov, scheme, dt)?;
    let mut out = Vec::with_capacity(n + 1);
    let mut st = start;
    out.push(st);
    for k in 0..n {
        dyn_.advance(&mut st, rng);
        st.t = (k + 1) as f64 * dt;
        out.push(st);
    }
    Ok(out)
}

/// A stationary starting point: (E, D) drawn from their joint stationary
/// law, from the Lyapunov equation of the nested OU pair. Without mean
/// reversion in D the mean level starts at D̄.
pub fn stationary_start<R: Rng + ?Sized>(params: &ModelParams, rng: &mut R) -> MarketState {
    let sigma = crate::params::covariance_matrix(params).sigma;
    let (see, sed, sdd) = (sigma[(1, 1)], sigma[(1, 2)], sigma[(2, 2)]);
    let (ke, kd) = (params.k_e, params.k_d);
    let c = if kd > 0.0 { sdd / (2.0 * kd) } else { 0.0 };
    let sed = if kd > 0.0 { sed } else { 0.0 };
    let b = (ke * c + sed) / (ke + kd);
    let a = b + see / (2.0 * ke);
    let cov = nalgebra::Matrix2::new(a, b, b, c);
    let z = nalgebra::Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
    let w = psd_cholesky2(&cov) * z;
    MarketState {
        t: 0.0,
        s: 0.0,
        e: params.d_bar + w[0],
        d: params.d_bar + w[1],
    }
}

fn psd_cholesky2(m: &nalgebra::Matrix2<f64>) -> nalgebra::Matrix2<f64> {
    let l00 = m[(0, 0)].max(0.0).sqrt();
    let l10 = if l00 > 0.0 { m[(1, 0)] / l00 } else { 0.0 };
    let l11 = (m[(1, 1)] - l10 * l10).max(0.0).sqrt();
    nalgebra::Matrix2::new(l00, 0.0, l10, l11)
}
