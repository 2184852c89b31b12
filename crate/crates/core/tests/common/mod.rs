//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use efpmm::flow::QuadHamiltonian;
use efpmm::filter::asymptotic_variance;
use efpmm::sim::synthetic_market;
use efpmm::{FilterState, GainMode, MeanLevelFilter, ModelParams, RiccatiSystem, ValueApprox};
use nalgebra::{Matrix4, Vector4};

/// Nested mean level switched on, correlated spot and EFP.
pub fn nested_params() -> ModelParams {
    ModelParams {
        k_d: 0.2,
        sigma_d: 2.0,
        d_bar: 0.5,
        rho: 0.3,
        ..ModelParams::gold()
    }
}

/// The relaxation-experiment terminal penalty on top of the nested set.
pub fn penalized_params() -> ModelParams {
    ModelParams {
        k_s: 1e-3,
        k_f: 1e-3,
        ..nested_params()
    }
}

/// Single-quote objective f(δ)(1 − e^{−γz(δ−p)})/(γz), written from scratch.
pub fn quote_objective(params: &ModelParams, z: f64, p: f64, delta: f64) -> f64 {
    let f = 1.0 / (1.0 + (params.alpha + params.beta * delta).exp());
    let gz = params.gamma * z;
    f * (1.0 - (-gz * (delta - p)).exp()) / gz
}

/// Brute-force sup over δ: a coarse grid on [p, p + 40] refined twice.
/// Returns (sup, argmax).
pub fn grid_sup(params: &ModelParams, z: f64, p: f64) -> (f64, f64) {
    let mut best = (f64::NEG_INFINITY, p);
    let scan = |lo: f64, step: f64, n: usize, best: &mut (f64, f64)| {
        for k in 0..=n {
            let d = lo + step * k as f64;
            let v = quote_objective(params, z, p, d);
            if v > best.0 {
                *best = (v, d);
            }
        }
    };
    scan(p, 1e-3, 40_000, &mut best);
    let c = best.1;
    scan(c - 2e-3, 1e-6, 4_000, &mut best);
    let c = best.1;
    scan(c - 2e-6, 1e-9, 4_000, &mut best);
    best
}

/// A' = A M A + A U + Uᵀ A + R, B' = A M B + A V + Uᵀ B, written out again.
fn riccati_rhs(sys: &RiccatiSystem, a: &Matrix4<f64>, b: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
    let m = &sys.m_a;
    let u = &sys.u_a;
    let da = a * m * a + a * u + u.transpose() * a + sys.r_a;
    let db = a * m * b + a * sys.v_b + u.transpose() * b;
    (da, db)
}

/// Explicit Euler backward from T to 0; returns (A(0), B(0)).
pub fn euler_solve(sys: &RiccatiSystem, horizon: f64, dt: f64) -> (Matrix4<f64>, Vector4<f64>) {
    let n = (horizon / dt).round() as usize;
    let h = horizon / n as f64;
    let mut a = sys.terminal_a;
    let mut b = sys.terminal_b;
    for _ in 0..n {
        let (da, db) = riccati_rhs(sys, &a, &b);
        a -= da * h;
        b -= db * h;
    }
    (a, b)
}

pub fn max_abs(m: &Matrix4<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Terms of the quadratic-Hamiltonian PDE evaluated on θ̌ at grid node `i`,
/// with every derivative taken by finite differences of `va.theta`.
/// Order: ∂tθ, EFP drift, mean-level drift, diffusion trace, risk term,
/// client-flow term, spot execution, futures execution.
pub fn pde_terms(va: &ValueApprox, params: &ModelParams, quad: &QuadHamiltonian, i: usize, x: &Vector4<f64>) -> [f64; 8] {
    let grid = va.grid();
    let t = grid[i];
    let h = va.step();
    let th = |t: f64, x: &Vector4<f64>| va.theta(t, x);
    // fourth-order central difference in time across stored nodes
    let dt_theta = (-th(grid[i + 2], x) + 8.0 * th(grid[i + 1], x) - 8.0 * th(grid[i - 1], x) + th(grid[i - 2], x)) / (12.0 * h);

    let unit = |k: usize| {
        let mut e = Vector4::zeros();
        e[k] = 1.0;
        e
    };
    let d1 = |k: usize| (th(t, &(x + unit(k))) - th(t, &(x - unit(k)))) / 2.0;
    let d2 = |j: usize, k: usize| {
        let (ej, ek) = (unit(j), unit(k));
        (th(t, &(x + ej + ek)) - th(t, &(x + ej - ek)) - th(t, &(x - ej + ek)) + th(t, &(x - ej - ek))) / 4.0
    };
    let (q_s, q_f, e, d) = (x[0], x[1], x[2], x[3]);
    let (th_s, th_f, th_e, th_d) = (d1(0), d1(1), d1(2), d1(3));

    let sig = efpmm::covariance_matrix(params).sigma;
    let efp_drift = -params.k_e * (e - d) * (q_f + th_e);
    let mean_drift = -params.k_d * (d - params.d_bar) * th_d;
    let trace = 0.5 * (sig[(1, 1)] * d2(2, 2) + 2.0 * sig[(1, 2)] * d2(2, 3) + sig[(2, 2)] * d2(3, 3));
    let v = nalgebra::Vector3::new(q_s + q_f, q_f + th_e, th_d);
    let risk = -0.5 * params.gamma * (v.transpose() * sig * v)[0];

    let theta0 = th(t, x);
    let mut flow = 0.0;
    for (&z, &lam) in params.ladder.iter().zip(&params.lambda) {
        let plus = (theta0 - th(t, &(x + unit(0) * z))) / z;
        let minus = (theta0 - th(t, &(x - unit(0) * z))) / z;
        flow += z * lam * (quad.eval(plus) + quad.eval(minus));
    }
    let exec_s = th_s * th_s / (4.0 * params.eta_s);
    let exec_f = th_f * th_f / (4.0 * params.eta_f);
    [dt_theta, efp_drift, mean_drift, trace, risk, flow, exec_s, exec_f]
}

/// |Σ terms(x) − Σ terms(0)| relative to the largest x-dependent term.
pub fn pde_relative_residual(va: &ValueApprox, params: &ModelParams, quad: &QuadHamiltonian, i: usize, x: &Vector4<f64>) -> f64 {
    let at_x = pde_terms(va, params, quad, i, x);
    let at_0 = pde_terms(va, params, quad, i, &Vector4::zeros());
    let diffs: Vec<f64> = at_x.iter().zip(&at_0).map(|(a, b)| a - b).collect();
    let scale = diffs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    diffs.iter().sum::<f64>().abs() / scale
}

/// Median of a slice.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean of (D̂ − D)² over a synthetic run after a burn-in, relative to ν∞².
pub fn filter_mse_ratio(params: &ModelParams, days: f64, burn_in_days: f64, seed: u64) -> f64 {
    let m = synthetic_market(params, days, 1.0, seed).unwrap();
    let d = m.mean_level.as_ref().unwrap();
    let filter = MeanLevelFilter::new(params, GainMode::Stationary);
    let mut fs = FilterState::initial(params);
    let (mut sum, mut n) = (0.0, 0usize);
    for k in 0..m.len() - 1 {
        let dt = m.t[k + 1] - m.t[k];
        fs = filter.step(fs, m.spot[k + 1] - m.spot[k], m.efp[k + 1] - m.efp[k], m.efp[k], dt);
        if m.t[k + 1] >= burn_in_days {
            sum += (fs.d_hat - d[k + 1]).powi(2);
            n += 1;
        }
    }
    sum / n as f64 / asymptotic_variance(params)
}
