//! Filtering and calibration on synthetic or recorded EFP data.

use std::path::PathBuf;

use efpmm::filter::calibrate::{bootstrap, calibrate_efp, read_efp_csv, Bootstrap, CalibrationReport};
use efpmm::filter::{asymptotic_variance, effective_sigma_d};
use efpmm::sim::synthetic_market;
use efpmm::{FilterState, GainMode, MeanLevelFilter};
use serde::{Deserialize, Serialize};

use crate::config::Experiment;
use crate::error::CliError;
use crate::output::{row, Output};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterDemoCmd {
    pub days: f64,
    pub spacing_s: f64,
    pub gain_mode: GainMode,
    /// Rows of the output series are every n-th observation.
    pub sample_every: usize,
    /// Errors before this time are left out of the MSE.
    pub burn_in_days: f64,
}

impl Default for FilterDemoCmd {
    fn default() -> Self {
        FilterDemoCmd {
            days: 5.0,
            spacing_s: 1.0,
            gain_mode: GainMode::Stationary,
            sample_every: 60,
            burn_in_days: 1.0,
        }
    }
}

pub fn filter_demo(exp: &Experiment<FilterDemoCmd>, out: &mut Output) -> Result<(), CliError> {
    let k = &exp.knobs;
    if k.sample_every == 0 {
        return Err(CliError::Config("sample_every must be at least 1".into()));
    }
    let p = &exp.params;
    let m = synthetic_market(p, k.days, k.spacing_s, exp.seed)?;
    let d = m.mean_level.as_ref().expect("synthetic data carries the mean level");
    let filter = MeanLevelFilter::new(p, k.gain_mode);
    let mut fs = FilterState::initial(p);

    let mut w = out.csv("filter.csv")?;
    w.write_record(["t", "efp", "d", "d_hat", "nu2"])?;
    row(&mut w, &[m.t[0], m.efp[0], d[0], fs.d_hat, fs.nu2])?;
    let (mut sq, mut n) = (0.0, 0usize);
    for i in 1..m.len() {
        let dt = m.t[i] - m.t[i - 1];
        fs = filter.step(fs, m.spot[i] - m.spot[i - 1], m.efp[i] - m.efp[i - 1], m.efp[i - 1], dt);
        if m.t[i] >= k.burn_in_days {
            sq += (fs.d_hat - d[i]).powi(2);
            n += 1;
        }
        if i % k.sample_every == 0 {
            row(&mut w, &[m.t[i], m.efp[i], d[i], fs.d_hat, fs.nu2])?;
        }
    }
    w.flush()?;
    let nu_inf = asymptotic_variance(p);
    let mse = if n > 0 { sq / n as f64 } else { f64::NAN };
    out.note("mse", mse);
    out.note("nu_inf_sq", nu_inf);
    out.note("mse_over_nu_inf_sq", mse / nu_inf);
    out.note("effective_sigma_d", effective_sigma_d(p).sigma_d);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateCmd {
    /// `timestamp_seconds,efp_bp` on a uniform grid; synthetic data when absent.
    pub efp_csv: Option<PathBuf>,
    pub synthetic_days: f64,
    pub synthetic_spacing_s: f64,
    /// Parametric bootstrap replicates for standard errors; 0 skips it.
    pub bootstrap_replicates: usize,
}

impl Default for CalibrateCmd {
    fn default() -> Self {
        CalibrateCmd {
            efp_csv: None,
            synthetic_days: 30.0,
            synthetic_spacing_s: 1.0,
            bootstrap_replicates: 0,
        }
    }
}

#[derive(Serialize)]
struct CalibrationOutput<'a> {
    report: &'a CalibrationReport,
    bootstrap: Option<&'a Bootstrap>,
}

pub fn calibrate(exp: &Experiment<CalibrateCmd>, out: &mut Output) -> Result<(), CliError> {
    let k = &exp.knobs;
    let (series, spacing) = match &k.efp_csv {
        Some(path) => {
            let path = exp.resolve(path);
            let f = std::fs::File::open(&path)
                .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
            read_efp_csv(f)?
        }
        None => {
            let m = synthetic_market(&exp.params, k.synthetic_days, k.synthetic_spacing_s, exp.seed)?;
            (m.efp, k.synthetic_spacing_s / 86_400.0)
        }
    };
    let report = calibrate_efp(&series, spacing, &exp.params)?;
    let boot = match k.bootstrap_replicates {
        0 => None,
        r => Some(bootstrap(&report.fit, &exp.params, series.len(), spacing, r, exp.seed)?),
    };

    let mut w = out.csv("variogram.csv")?;
    w.write_record(["lag_days", "empirical", "fitted"])?;
    for ((h, e), f) in report.lags.iter().zip(&report.empirical).zip(&report.fitted) {
        row(&mut w, &[*h, *e, *f])?;
    }
    w.flush()?;
    out.json(
        "calibration.json",
        &CalibrationOutput {
            report: &report,
            bootstrap: boot.as_ref(),
        },
    )?;
    out.json("calibrated_params.json", &report.fit.apply(&exp.params))?;
    out.note("fit", report.fit);
    out.note("std_error", boot.as_ref().map(|b| b.std_error));
    Ok(())
}
