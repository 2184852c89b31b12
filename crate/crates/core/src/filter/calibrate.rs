//! Moment-matching calibration of the nested OU EFP model.
//!
//! The empirical semivariogram ½E[(E_{t+h} − E_t)²] = c(0) − c(h) is fitted
//! at a fixed set of lags to the stationary autocovariance model by
//! Nelder–Mead in log-parameters. Differences of the autocovariance are
//! insensitive to the bias the sample mean puts on the slow component.

use std::io::Read;

use serde::{Deserialize, Serialize};

use super::autocovariance_weights;
use crate::error::{Error, Result};
use crate::params::ModelParams;

pub const MIN_SAMPLES: usize = 10_000;

/// Lags, seconds.
const LAGS_S: [f64; 20] = [
    1.0, 2.0, 5.0, 10.0, 20.0, 30.0, 60.0, 120.0, 300.0, 600.0, 1200.0, 1800.0, 3600.0, 7200.0,
    14400.0, 28800.0, 57600.0, 86400.0, 172800.0, 345600.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfpFit {
    pub k_e: f64,
    pub sigma_e: f64,
    pub k_d: f64,
    pub sigma_d: f64,
    pub d_bar: f64,
}

impl EfpFit {
    /// Copy the fitted values into a parameter set.
    pub fn apply(&self, params: &ModelParams) -> ModelParams {
        ModelParams {
            k_e: self.k_e,
            sigma_e: self.sigma_e,
            k_d: self.k_d,
            sigma_d: self.sigma_d,
            d_bar: self.d_bar,
            ..params.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub fit: EfpFit,
    pub iterations: usize,
    pub objective: f64,
    /// Lags used, day.
    pub lags: Vec<f64>,
    pub empirical: Vec<f64>,
    pub fitted: Vec<f64>,
}

/// ½·mean((x[i+h] − x[i])²) for each lag in samples.
pub fn empirical_variogram(series: &[f64], lags: &[usize]) -> Vec<f64> {
    lags.iter()
        .map(|&h| {
            let n = series.len() - h;
            let sum: f64 = series[h..]
                .iter()
                .zip(series)
                .map(|(b, a)| (b - a) * (b - a))
                .sum();
            0.5 * sum / n as f64
        })
        .collect()
}

fn model_variogram(k_e: f64, sigma_e: f64, k_d: f64, sigma_d: f64, h: f64) -> Result<f64> {
    let (c_e, c_d) = autocovariance_weights(k_e, sigma_e, k_d, sigma_d)?;
    Ok(-c_e * (-k_e * h).exp_m1() - c_d * (-k_d * h).exp_m1())
}

/// Integrated autocorrelation time of E under the model.
fn c_e_weight(k_e: f64, sigma_e: f64, k_d: f64, sigma_d: f64) -> f64 {
    match autocovariance_weights(k_e, sigma_e, k_d, sigma_d) {
        Ok((c_e, c_d)) if c_e + c_d > 0.0 => (c_e / k_e + c_d / k_d) / (c_e + c_d),
        _ => 1.0 / k_e,
    }
}

/// Fit (k_E, σ_E, k_D, σ_D) to the semivariogram; D̄ is the sample mean.
pub fn calibrate_efp(series: &[f64], spacing: f64, init: &ModelParams) -> Result<CalibrationReport> {
    if series.len() < MIN_SAMPLES {
        return Err(Error::Config(format!(
            "calibration needs at least {MIN_SAMPLES} samples, got {}",
            series.len()
        )));
    }
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::Config("sample spacing must be positive".into()));
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("series contains non-finite values".into()));
    }

    let mut lags: Vec<usize> = LAGS_S
        .iter()
        .map(|s| (s / 86400.0 / spacing).round() as usize)
        .filter(|&h| h >= 1 && h < series.len() / 4)
        .collect();
    lags.dedup();
    if lags.len() < 5 {
        return Err(Error::Config("series too short for the lag set".into()));
    }
    let empirical = empirical_variogram(series, &lags);
    if empirical.iter().any(|&v| v <= 0.0) {
        return Err(Error::Calibration {
            iterations: 0,
            detail: "degenerate series: zero variation at some lag".into(),
        });
    }
    let lag_days: Vec<f64> = lags.iter().map(|&h| h as f64 * spacing).collect();

    let objective = |theta: &[f64]| -> f64 {
        let (k_e, sigma_e, k_d, sigma_d) = (theta[0].exp(), theta[1].exp(), theta[2].exp(), theta[3].exp());
        if k_d >= 0.999 * k_e {
            return 1e6 * (1.0 + k_d / k_e);
        }
        let mut sum = 0.0;
        for (h, emp) in lag_days.iter().zip(&empirical) {
            match model_variogram(k_e, sigma_e, k_d, sigma_d, *h) {
                Ok(m) => {
                    // relative sampling error of the variogram grows like √min(h, τ)
                    let tau = (c_e_weight(k_e, sigma_e, k_d, sigma_d)).max(spacing);
                    let r = (m - emp) / emp / h.min(tau).max(spacing).sqrt();
                    sum += r * r;
                }
                Err(_) => return 1e6,
            }
        }
        sum
    };

    let k_e0 = init.k_e.max(1e-3);
    let sigma_e0 = init.sigma_e.max(1e-6);
    let k_d0 = if init.k_d > 0.0 && init.k_d < k_e0 { init.k_d } else { k_e0 / 40.0 };
    let sigma_d0 = if init.sigma_d > 0.0 { init.sigma_d } else { 0.1 * sigma_e0 };
    let starts = [
        [k_e0, sigma_e0, k_d0, sigma_d0],
        [k_e0, sigma_e0, k_e0 / 40.0, 0.3 * sigma_e0],
        [k_e0, sigma_e0, k_e0 / 4.0, 1e-2 * sigma_e0],
    ];
    let mut best: Option<Minimum> = None;
    let mut last_err = None;
    for start in starts {
        let start: Vec<f64> = start.iter().map(|v| v.ln()).collect();
        let run = nelder_mead(&objective, &start, 0.5, 1e-10, 4000)
            .and_then(|first| {
                let second = nelder_mead(&objective, &first.x, 0.1, 1e-10, 4000)?;
                Ok(if second.f <= first.f { second } else { first })
            });
        match run {
            Ok(m) if best.as_ref().is_none_or(|b| m.f < b.f) => best = Some(m),
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    let best = match (best, last_err) {
        (Some(b), _) => b,
        (None, Some(e)) => return Err(e),
        (None, None) => unreachable!(),
    };

    let t = &best.x;
    let fit = EfpFit {
        k_e: t[0].exp(),
        sigma_e: t[1].exp(),
        k_d: t[2].exp(),
        sigma_d: t[3].exp(),
        d_bar: series.iter().sum::<f64>() / series.len() as f64,
    };
    let fitted = lag_days
        .iter()
        .map(|&h| model_variogram(fit.k_e, fit.sigma_e, fit.k_d, fit.sigma_d, h))
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibrationReport {
        fit,
        iterations: best.iterations,
        objective: best.f,
        lags: lag_days,
        empirical,
        fitted,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
}

/// Nelder–Mead simplex minimisation with standard coefficients.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    step: f64,
    ftol: f64,
    max_iter: usize,
) -> Result<Minimum> {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for iter in 0..max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = (values[n] - values[0]).abs();
        let width = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if spread <= ftol * (values[0].abs() + 1e-300) || width <= 1e-10 {
            return Ok(Minimum {
                x: simplex[0].clone(),
                f: values[0],
                iterations: iter,
            });
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let towards = |coef: f64| -> Vec<f64> {
            (0..n)
                .map(|j| centroid[j] + coef * (simplex[n][j] - centroid[j]))
                .collect()
        };

        let reflected = towards(-1.0);
        let fr = f(&reflected);
        if fr < values[0] {
            let expanded = towards(-2.0);
            let fe = f(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let (contracted, fc) = if fr < values[n] {
                let c = towards(-0.5);
                let fc = f(&c);
                (c, fc)
            } else {
                let c = towards(0.5);
                let fc = f(&c);
                (c, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = contracted;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    for j in 0..n {
                        simplex[i][j] = best[j] + 0.5 * (simplex[i][j] - best[j]);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Err(Error::Calibration {
        iterations: max_iter,
        detail: format!("simplex values span [{lo:.6e}, {hi:.6e}], best vertex {:?}", simplex[0]),
    })
}

/// Parametric bootstrap of a calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub fits: Vec<EfpFit>,
    /// Replicates whose refit failed.
    pub failures: usize,
    /// Sample standard deviation of each fitted parameter.
    pub std_error: EfpFit,
}

/// Simulate `replicates` series of `n` samples from the fitted model at the
/// given spacing (days) and refit each one.
pub fn bootstrap(
    fit: &EfpFit,
    base: &ModelParams,
    n: usize,
    spacing: f64,
    replicates: usize,
    seed: u64,
) -> Result<Bootstrap> {
    use rand::SeedableRng;
    use rayon::prelude::*;

    if replicates < 2 {
        return Err(Error::Config("bootstrap needs at least two replicates".into()));
    }
    let truth = fit.apply(base);
    let results: Vec<Result<EfpFit>> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let start = crate::sim::stationary_start(&truth, &mut rng);
            let path = crate::sim::simulate_prices(&truth, crate::sim::Scheme::Exact, spacing, n - 1, start, &mut rng)?;
            let series: Vec<f64> = path.iter().map(|s| s.e).collect();
            calibrate_efp(&series, spacing, &truth).map(|r| r.fit)
        })
        .collect();
    let fits: Vec<EfpFit> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let failures = replicates - fits.len();
    if fits.len() < 2 {
        return Err(Error::Calibration {
            iterations: 0,
            detail: format!("bootstrap: {failures} of {replicates} refits failed"),
        });
    }
    let sd = |get: fn(&EfpFit) -> f64| {
        let m = fits.iter().map(get).sum::<f64>() / fits.len() as f64;
        (fits.iter().map(|f| (get(f) - m).powi(2)).sum::<f64>() / (fits.len() - 1) as f64).sqrt()
    };
    let std_error = EfpFit {
        k_e: sd(|f| f.k_e),
        sigma_e: sd(|f| f.sigma_e),
        k_d: sd(|f| f.k_d),
        sigma_d: sd(|f| f.sigma_d),
        d_bar: sd(|f| f.d_bar),
    };
    Ok(Bootstrap { fits, failures, std_error })
}

/// Read a two-column `timestamp_seconds,efp_bp` CSV with uniform spacing.
/// Returns the series and its spacing in days.
pub fn read_efp_csv<R: Read>(reader: R) -> Result<(Vec<f64>, f64)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 {
        return Err(Error::Ingest(format!(
            "expected two columns (timestamp_seconds, efp_bp), found {}",
            headers.len()
        )));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| Error::Ingest(format!("row {}: {e}", line + 2)))
        };
        times.push(parse(0)?);
        values.push(parse(1)?);
    }
    if times.len() < 2 {
        return Err(Error::Ingest("need at least two samples".into()));
    }
    let spacing = times[1] - times[0];
    if !(spacing > 0.0) {
        return Err(Error::Ingest("timestamps must be strictly increasing".into()));
    }
    for (i, w) in times.windows(2).enumerate() {
        let d = w[1] - w[0];
        if (d - spacing).abs() > 1e-6 * spacing {
            return Err(Error::Ingest(format!(
                "non-uniform spacing at row {}: {d} s vs {spacing} s",
                i + 3
            )));
        }
    }
    Ok((values, spacing / 86400.0))
}
