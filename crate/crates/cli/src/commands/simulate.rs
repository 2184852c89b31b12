//! Monte Carlo and replay commands.

use std::path::PathBuf;
use std::sync::Arc;

use efpmm::sim::{
    backtest as run_backtest, read_market_csv, run_paths, synthetic_market, BacktestConfig, SimConfig, Simulator,
    StationaryObserver, StationarySpec,
};
use efpmm::{solve_model, Inventory, ModelParams, SolveOptions};
use serde::{Deserialize, Serialize};

use crate::config::{nonempty, Experiment};
use crate::error::CliError;
use crate::output::{row, Output};

const SECOND: f64 = 1.0 / 86_400.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaxCmd {
    /// Its seed is replaced by the run seed.
    pub sim: SimConfig,
}

impl Default for RelaxCmd {
    fn default() -> Self {
        RelaxCmd {
            sim: SimConfig {
                n_paths: 20_000,
                initial_inventory: Inventory { q_s: 1000.0, q_f: 0.0, x: 0.0 },
                ..SimConfig::default()
            },
        }
    }
}

pub fn relax(exp: &Experiment<RelaxCmd>, out: &mut Output) -> Result<(), CliError> {
    let cfg = SimConfig { seed: exp.seed, ..exp.knobs.sim.clone() };
    let opts = SolveOptions { information: cfg.mode, ..exp.solve.options() };
    let va = Arc::new(solve_model(&exp.params, &opts)?);
    let ens = run_paths(&cfg, &exp.params, va)?;
    ens.write_csv(out.file("relax.csv")?)?;

    let (imin, qf_min) = ens
        .q_f
        .iter()
        .map(|m| m.mean())
        .enumerate()
        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
    let net0 = ens.net[0].mean();
    let half_life = ens
        .net
        .iter()
        .position(|m| (m.mean() - 0.5 * net0) * net0.signum() <= 0.0)
        .map(|i| ens.times[i] / SECOND);
    let mut rise = f64::NEG_INFINITY;
    for w in ens.net.windows(2) {
        let se = (w[0].std_error().powi(2) + w[1].std_error().powi(2)).sqrt();
        rise = rise.max((w[1].mean() - w[0].mean()) * net0.signum() / se.max(f64::MIN_POSITIVE));
    }
    out.note("min_mean_q_f", qf_min);
    out.note("min_mean_q_f_time_s", ens.times[imin] / SECOND);
    out.note("net_half_life_s", half_life);
    out.note("largest_net_rise_in_se", rise);
    out.note("terminal_penalized_mean", ens.terminal_penalized().mean());
    out.note("max_accounting_error", ens.max_accounting_error());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontierCmd {
    pub gammas: Vec<f64>,
    /// One long path per γ; n_paths and seed are ignored.
    pub sim: SimConfig,
    pub stationary: StationarySpec,
    /// Also write the (q_S, q_F) histogram for every γ.
    pub histograms: bool,
}

impl Default for FrontierCmd {
    fn default() -> Self {
        FrontierCmd {
            gammas: (0..7).map(|i| 10f64.powf(-5.0 + 0.5 * i as f64)).collect(),
            sim: SimConfig {
                horizon: 2e6 * SECOND,
                stationary_controls: true,
                ..SimConfig::default()
            },
            stationary: StationarySpec::default(),
            histograms: true,
        }
    }
}

pub fn frontier(exp: &Experiment<FrontierCmd>, out: &mut Output) -> Result<(), CliError> {
    let k = &exp.knobs;
    nonempty("gammas", &k.gammas)?;
    let mut w = out.csv("frontier.csv")?;
    w.write_record([
        "gamma",
        "share_client_bid",
        "share_client_ask",
        "share_spot_hedge",
        "share_futures_hedge",
        "pnl_mean",
        "pnl_std",
        "pnl_mean_se",
        "windows",
        "corr_q_s_q_f",
    ])?;
    let mut rows = vec![];
    for &gamma in &k.gammas {
        let p = ModelParams { gamma, ..exp.params.clone() }.validate()?;
        let cfg = SimConfig { n_paths: 1, seed: exp.seed, ..k.sim.clone() };
        let opts = SolveOptions { information: cfg.mode, ..exp.solve.options() };
        let sim = Simulator::new(&p, &cfg, Arc::new(solve_model(&p, &opts)?))?;
        let mut obs = StationaryObserver::new(k.stationary);
        sim.run_path(0, &mut obs)?;
        let stats = obs.finish();
        let shares = stats.shares().unwrap_or([f64::NAN; 4]);
        let pnl = &stats.window_pnl;
        row(
            &mut w,
            &[
                gamma,
                shares[0],
                shares[1],
                shares[2],
                shares[3],
                pnl.mean(),
                pnl.std(),
                pnl.std_error(),
                pnl.n as f64,
                stats.correlation(),
            ],
        )?;
        if k.histograms {
            stats.histogram.write_csv(out.file(&format!("histogram_gamma_{gamma:e}.csv"))?)?;
        }
        rows.push((gamma, pnl.std(), pnl.n));
    }
    w.flush()?;
    // flag increases of the P&L std with γ beyond two standard errors
    let mut sorted = rows.clone();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let violations: Vec<f64> = sorted
        .windows(2)
        .filter(|w| {
            let se = |s: f64, n: u64| s / (2.0 * (n.max(2) - 1) as f64).sqrt();
            w[1].1 - w[0].1 > 2.0 * (se(w[0].1, w[0].2).powi(2) + se(w[1].1, w[1].2).powi(2)).sqrt()
        })
        .map(|w| w[1].0)
        .collect();
    out.note("pnl_std_increases_at_gamma", violations);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestCmd {
    /// `timestamp_s,spot_bp,efp_bp` (or `futures_bp`); synthetic data when absent.
    pub market_csv: Option<PathBuf>,
    pub max_gap_s: f64,
    pub synthetic_days: f64,
    pub synthetic_spacing_s: f64,
    /// Its seed is replaced by the run seed.
    pub backtest: BacktestConfig,
}

impl Default for BacktestCmd {
    fn default() -> Self {
        BacktestCmd {
            market_csv: None,
            max_gap_s: 5.0,
            synthetic_days: 1.0,
            synthetic_spacing_s: 1.0,
            backtest: BacktestConfig::default(),
        }
    }
}

pub fn backtest(exp: &Experiment<BacktestCmd>, out: &mut Output) -> Result<(), CliError> {
    let k = &exp.knobs;
    let market = match &k.market_csv {
        Some(path) => {
            let path = exp.resolve(path);
            let f = std::fs::File::open(&path)
                .map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
            read_market_csv(f, k.max_gap_s)?
        }
        None => {
            let m = synthetic_market(&exp.params, k.synthetic_days, k.synthetic_spacing_s, exp.seed)?;
            m.write_csv(out.file("market.csv")?)?;
            m
        }
    };
    let cfg = BacktestConfig { seed: exp.seed, ..k.backtest };
    let opts = SolveOptions { information: cfg.information, ..exp.solve.options() };
    let va = Arc::new(solve_model(&exp.params, &opts)?);
    let rec = run_backtest(&market, &cfg, &exp.params, va)?;
    rec.write_csv(out.file("path.csv")?)?;
    out.note("final_mtm", rec.mtm.last().copied());
    out.note("client_fills", rec.events.len());
    out.note("volume_shares", rec.volumes.shares());
    Ok(())
}
