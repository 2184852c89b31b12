//! Replay of recorded spot/EFP mids with simulated client flow.

use std::io::Read;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dynamics::{simulate_prices, stationary_start, Scheme};
use super::observe::{Observer, PathRecord, Recorder, Snapshot};
use super::{max_step_probability, trade, StepContext, StepOutcome, MAX_STEP_PROBABILITY};
use crate::error::{Error, Result};
use crate::filter::{FilterState, GainMode, MeanLevelFilter};
use crate::params::{Inventory, MarketState, ModelParams};
use crate::policy::{state_vec, ControlDecision, Policy};
use crate::riccati::{Information, ValueApprox};

const SECONDS_PER_DAY: f64 = 86_400.0;

/// Recorded mids on a strictly increasing time grid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MarketSeries {
    /// Time, day, relative to the first row.
    pub t: Vec<f64>,
    pub spot: Vec<f64>,
    pub efp: Vec<f64>,
    /// True mean level, when known (synthetic data).
    pub mean_level: Option<Vec<f64>>,
}

impl MarketSeries {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["timestamp_s", "spot_bp", "efp_bp"])?;
        for i in 0..self.len() {
            w.write_record([
                (self.t[i] * SECONDS_PER_DAY).to_string(),
                self.spot[i].to_string(),
                self.efp[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parse `timestamp_s,spot_bp,efp_bp` or `timestamp_s,spot_bp,futures_bp`.
/// Timestamps must increase strictly with gaps of at most `max_gap_s`.
pub fn read_market_csv<R: Read>(reader: R, max_gap_s: f64) -> Result<MarketSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let ts = col("timestamp_s").ok_or_else(|| Error::Ingest("missing column timestamp_s".into()))?;
    let sp = col("spot_bp").ok_or_else(|| Error::Ingest("missing column spot_bp".into()))?;
    let (second, is_futures) = match (col("efp_bp"), col("futures_bp")) {
        (Some(c), None) => (c, false),
        (None, Some(c)) => (c, true),
        (Some(_), Some(_)) => return Err(Error::Ingest("both efp_bp and futures_bp present".into())),
        (None, None) => return Err(Error::Ingest("missing column efp_bp or futures_bp".into())),
    };
    let mut out = MarketSeries::default();
    let mut t0 = None;
    let mut last = f64::NEG_INFINITY;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Ingest(format!("row {}: bad number {raw:?}", line + 2)))
        };
        let (t, s, x) = (field(ts)?, field(sp)?, field(second)?);
        if t <= last {
            return Err(Error::Ingest(format!("row {}: timestamps must increase strictly", line + 2)));
        }
        if last.is_finite() && t - last > max_gap_s {
            return Err(Error::Ingest(format!(
                "row {}: gap of {} s exceeds {max_gap_s} s",
                line + 2,
                t - last
            )));
        }
        last = t;
        let start = *t0.get_or_insert(t);
        out.t.push((t - start) / SECONDS_PER_DAY);
        out.spot.push(s);
        out.efp.push(if is_futures { x - s } else { x });
    }
    if out.len() < 2 {
        return Err(Error::Ingest("need at least two rows".into()));
    }
    Ok(out)
}

/// Simulated market with known mean level, starting from the stationary law.
pub fn synthetic_market(params: &ModelParams, days: f64, spacing_s: f64, seed: u64) -> Result<MarketSeries> {
    let dt = spacing_s / SECONDS_PER_DAY;
    let n = (days / dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = stationary_start(params, &mut rng);
    let path = simulate_prices(params, Scheme::Exact, dt, n, start, &mut rng)?;
    Ok(MarketSeries {
        t: path.iter().map(|p| p.t).collect(),
        spot: path.iter().map(|p| p.s).collect(),
        efp: path.iter().map(|p| p.e).collect(),
        mean_level: Some(path.iter().map(|p| p.d).collect()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BacktestConfig {
    pub seed: u64,
    pub intensity_scale: f64,
    /// Oracle mode requires a known mean level in the series.
    pub information: Information,
    pub gain_mode: GainMode,
    pub initial_inventory: Inventory,
    /// Record every n-th row.
    pub sample_every: usize,
    pub tabulated_offsets: bool,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        BacktestConfig {
            seed: 0,
            intensity_scale: 1.0,
            information: Information::Filtered,
            gain_mode: GainMode::Stationary,
            initial_inventory: Inventory::flat(),
            sample_every: 60,
            tabulated_offsets: true,
        }
    }
}

/// Replay `series` as the exogenous price path, simulate client fills and
/// hedges with the time-homogeneous controls (t = 0 of `va`).
pub fn backtest(
    series: &MarketSeries,
    cfg: &BacktestConfig,
    params: &ModelParams,
    va: Arc<ValueApprox>,
) -> Result<PathRecord> {
    if series.len() < 2 {
        return Err(Error::Ingest("need at least two rows".into()));
    }
    let truth = match (cfg.information, &series.mean_level) {
        (Information::Oracle, None) => {
            return Err(Error::Config("oracle mode needs a known mean level".into()));
        }
        (_, Some(d)) if d.len() != series.len() => {
            return Err(Error::Ingest("mean level length differs from the price series".into()));
        }
        (_, d) => d.as_deref(),
    };
    let max_dt = series.t.windows(2).fold(0.0f64, |m, w| m.max(w[1] - w[0]));
    let worst = max_step_probability(params, cfg.intensity_scale, max_dt);
    if worst > MAX_STEP_PROBABILITY {
        return Err(Error::Config(format!(
            "sampling too coarse: per-step fill probability {worst:.4} exceeds {MAX_STEP_PROBABILITY}"
        )));
    }
    super::check_hedge_step(&va, params, max_dt)?;
    let policy = if cfg.tabulated_offsets {
        Policy::tabulated(params, va)?
    } else {
        Policy::new(params, va)
    };
    let ctx = StepContext::new(params, cfg.intensity_scale);
    let filter = MeanLevelFilter::new(params, cfg.gain_mode);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fs = FilterState::initial(params);
    let mut inv = cfg.initial_inventory;
    let mut decision = ControlDecision::with_sizes(params.ladder.len());
    let mut recorder = Recorder::new(cfg.sample_every, &params.ladder);
    let at = |k: usize| MarketState {
        t: series.t[k],
        s: series.spot[k],
        e: series.efp[k],
        d: truth.map_or(f64::NAN, |d| d[k]),
    };
    let mut state = at(0);
    let mut mtm = inv.mark_to_market(&state);
    recorder.start(&Snapshot {
        step: 0,
        state: &state,
        d_hat: fs.d_hat,
        inventory: &inv,
        decision: &decision,
        outcome: &StepOutcome::default(),
        mtm,
    });
    for k in 0..series.len() - 1 {
        let dt = series.t[k + 1] - series.t[k];
        let d_seen = match cfg.information {
            Information::Oracle => state.d,
            Information::Filtered => fs.d_hat,
        };
        policy.decide_into(0.0, &state_vec(inv.q_s, inv.q_f, state.e, d_seen), &mut decision)?;
        let mut out = trade(&state, &mut inv, &decision, &mut rng, &ctx, dt)?;
        let next = at(k + 1);
        out.ds = next.s - state.s;
        out.de = next.e - state.e;
        out.inventory_pnl = inv.q_s * out.ds + inv.q_f * (out.ds + out.de);
        fs = filter.step(fs, out.ds, out.de, state.e, dt);
        state = next;
        mtm = inv.mark_to_market(&state);
        recorder.observe(&Snapshot {
            step: k + 1,
            state: &state,
            d_hat: fs.d_hat,
            inventory: &inv,
            decision: &decision,
            outcome: &out,
            mtm,
        });
    }
    Ok(recorder.record)
}
