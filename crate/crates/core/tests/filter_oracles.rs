mod common;

use common::{filter_mse_ratio, median};
use efpmm::filter::calibrate::{bootstrap, calibrate_efp, read_efp_csv};
use efpmm::filter::{asymptotic_variance, effective_sigma_d, stationary_autocovariance, variance_ode_step};
use efpmm::sim::{simulate_prices, stationary_start, synthetic_market, Scheme};
use efpmm::ModelParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SECOND: f64 = 1.0 / 86_400.0;

fn recovery_params() -> ModelParams {
    ModelParams {
        k_e: 8.0,
        sigma_e: 5.0,
        k_d: 0.2,
        sigma_d: 2.0,
        rho: 0.0,
        ..ModelParams::gold()
    }
}

#[test]
fn autocovariance_matches_monte_carlo() {
    let p = ModelParams {
        k_d: 2.0,
        sigma_d: 3.0,
        d_bar: 1.0,
        rho: 0.4,
        ..ModelParams::gold()
    };
    let n = 20_000;
    let dt = 1e-3;
    let lags = [0usize, 50, 250, 1000];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut acc = vec![0.0; lags.len()];
    let mut mean0 = 0.0;
    let mut mean_h = vec![0.0; lags.len()];
    for _ in 0..n {
        let start = stationary_start(&p, &mut rng);
        let path = simulate_prices(&p, Scheme::Euler, dt, *lags.last().unwrap(), start, &mut rng).unwrap();
        let e0 = path[0].e;
        mean0 += e0;
        for (j, &h) in lags.iter().enumerate() {
            acc[j] += e0 * path[h].e;
            mean_h[j] += path[h].e;
        }
    }
    let mean0 = mean0 / n as f64;
    for (j, &h) in lags.iter().enumerate() {
        let cov = acc[j] / n as f64 - mean0 * mean_h[j] / n as f64;
        let exact = stationary_autocovariance(h as f64 * dt, &p).unwrap();
        assert!((cov / exact - 1.0).abs() < 0.05, "lag {h}: MC {cov} vs {exact}");
    }
}

#[test]
fn variance_ode_fixed_point() {
    let p = recovery_params();
    let closed = asymptotic_variance(&p);
    for start in [0.0, 0.5 * closed, 3.0 * closed] {
        let mut nu2 = start;
        for _ in 0..2_000_000 {
            nu2 = variance_ode_step(nu2, &p, 1e-5);
        }
        assert!((nu2 - closed).abs() <= 1e-8 * closed, "{nu2} vs {closed}");
    }
}

#[test]
fn effective_sigma_is_gain_times_innovation_scale() {
    for rho in [0.0, 0.3, -0.6] {
        let p = ModelParams { rho, ..recovery_params() };
        let via_gain = p.k_e * asymptotic_variance(&p) / (p.sigma_e * (1.0 - rho * rho).sqrt());
        let closed = effective_sigma_d(&p).sigma_d;
        assert!((via_gain - closed).abs() <= 1e-12 * closed, "{via_gain} vs {closed}");
    }
}

#[test]
fn filter_error_matches_asymptotic_variance() {
    let p = recovery_params();
    let ratios: Vec<f64> = (0..8).map(|i| filter_mse_ratio(&p, 30.0, 1.0, 500 + i)).collect();
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((mean - 1.0).abs() <= 0.15, "MSE/ν∞² = {mean} from {ratios:?}");
}

#[test]
fn calibration_recovers_relaxation_and_volatility() {
    let p = recovery_params();
    let (mut k, mut s) = (vec![], vec![]);
    for seed in 1..=5u64 {
        let m = synthetic_market(&p, 30.0, 1.0, 1000 + seed).unwrap();
        let fit = calibrate_efp(&m.efp, SECOND, &p).unwrap().fit;
        k.push(fit.k_e);
        s.push(fit.sigma_e);
    }
    assert!((median(&k) / p.k_e - 1.0).abs() <= 0.2, "k_E fits {k:?}");
    assert!((median(&s) / p.sigma_e - 1.0).abs() <= 0.1, "σ_E fits {s:?}");
}

#[test]
fn calibration_without_mean_level_noise_finds_none() {
    let p = ModelParams { sigma_d: 0.0, ..recovery_params() };
    let mut ratios = vec![];
    for seed in 1..=5u64 {
        let m = synthetic_market(&p, 30.0, 1.0, 2000 + seed).unwrap();
        let report = calibrate_efp(&m.efp, SECOND, &p).unwrap();
        let boot = bootstrap(&report.fit, &p, m.efp.len(), SECOND, 20, 7).unwrap();
        ratios.push(report.fit.sigma_d / (2.0 * boot.std_error.sigma_d));
    }
    assert!(median(&ratios) < 1.0, "σ_D/(2·SE) {ratios:?}");
}

#[test]
fn calibration_reads_csv_and_rejects_constant_series() {
    let p = recovery_params();
    let m = synthetic_market(&p, 2.0, 1.0, 9).unwrap();
    let mut text = String::from("timestamp_seconds,efp_bp\n");
    for (t, e) in m.t.iter().zip(&m.efp) {
        text.push_str(&format!("{},{}\n", (t * 86_400.0).round(), e));
    }
    let (series, spacing) = read_efp_csv(text.as_bytes()).unwrap();
    assert_eq!(series, m.efp);
    assert!((spacing - SECOND).abs() < 1e-15);
    assert!(calibrate_efp(&vec![1.0; 50_000], SECOND, &p).is_err());
}

#[test]
fn plain_ou_data_starts_stationary() {
    let p = ModelParams::gold();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 20_000;
    let var = (0..n).map(|_| stationary_start(&p, &mut rng).e.powi(2)).sum::<f64>() / n as f64;
    let exact = p.sigma_e * p.sigma_e / (2.0 * p.k_e);
    assert!((var / exact - 1.0).abs() < 0.05);
}
