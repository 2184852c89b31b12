//! Monte Carlo engine: correlated (S, E, D) paths, client fills under the
//! quoted ladder, hedging flows and cash/inventory accounting.
//!
//! Within a step the dealer acts on the pre-step prices: client fills and
//! hedges book at the current mids, then prices diffuse. Paths draw from
//! independent ChaCha substreams keyed by the path index, and ensemble
//! statistics are reduced in a fixed order, so results do not depend on
//! the number of worker threads.

pub mod backtest;
pub mod dynamics;
pub mod observe;

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::execution::{CostSpec, Venue};
use crate::filter::{FilterState, GainMode, MeanLevelFilter};
use crate::flow::{FillCurve, QUOTE_FLOOR};
use crate::params::{covariance_matrix, Inventory, MarketState, ModelParams};
use crate::policy::{state_vec, ControlDecision, Policy};
use crate::riccati::{Information, ValueApprox};

pub use dynamics::{simulate_prices, stationary_start, PriceDynamics, Scheme};
pub use backtest::{backtest, read_market_csv, synthetic_market, BacktestConfig, MarketSeries};
pub use observe::{
    stationary_stats, CoMoments, EnsembleSampler, Histogram2d, Moments, Observer, PathRecord, Recorder, Sample,
    Snapshot, StationaryObserver, StationarySpec, StationaryStats, TradeEvent, Volumes,
};

/// Maximum per-step fill probability accepted by [`SimConfig::validate`].
pub const MAX_STEP_PROBABILITY: f64 = 0.1;

/// Paths per reduction chunk; fixed so the summation order never changes.
const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Step, day.
    pub dt: f64,
    /// Simulated time, day.
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Whether the controls see the true D or the filtered D̂.
    pub mode: Information,
    pub gain_mode: GainMode,
    pub scheme: Scheme,
    pub initial_inventory: Inventory,
    pub initial_state: MarketState,
    /// Evaluate controls at t = 0 throughout (time-homogeneous policy).
    pub stationary_controls: bool,
    /// Multiplier on every base intensity λ(z).
    pub intensity_scale: f64,
    /// Steps between recorded samples.
    pub sample_every: usize,
    /// Use tabulated optimal offsets instead of the exact solver.
    pub tabulated_offsets: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1.0 / 86_400.0,
            horizon: 1.0 / 24.0,
            n_paths: 1,
            seed: 0,
            mode: Information::Oracle,
            gain_mode: GainMode::Stationary,
            scheme: Scheme::Euler,
            initial_inventory: Inventory::flat(),
            initial_state: MarketState::default(),
            stationary_controls: false,
            intensity_scale: 1.0,
            sample_every: 60,
            tabulated_offsets: true,
        }
    }
}

impl SimConfig {
    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be at least 1".into()));
        }
        if self.sample_every == 0 {
            return Err(Error::Config("sample_every must be at least 1".into()));
        }
        if !(self.intensity_scale >= 0.0 && self.intensity_scale.is_finite()) {
            return Err(Error::Config("intensity_scale must be non-negative".into()));
        }
        if params.ladder.len() > 32 {
            return Err(Error::Config("at most 32 ladder sizes are supported".into()));
        }
        let inv = &self.initial_inventory;
        let st = &self.initial_state;
        if ![inv.q_s, inv.q_f, inv.x, st.s, st.e, st.d].iter().all(|v| v.is_finite()) {
            return Err(Error::Config("initial state must be finite".into()));
        }
        let worst = max_step_probability(params, self.intensity_scale, self.dt);
        if worst > MAX_STEP_PROBABILITY {
            return Err(Error::Config(format!(
                "dt too coarse: per-step fill probability at the quote floor is {worst:.4} (> {MAX_STEP_PROBABILITY})"
            )));
        }
        Ok(())
    }
}

/// Largest per-step hedge relaxation factor dt·A_ii(t)/η_i over the solve
/// grid. The explicit inventory update diverges once it reaches 2.
pub fn hedge_step_factor(va: &ValueApprox, params: &ModelParams, dt: f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..va.grid().len() {
        let (a, _) = va.node(i);
        worst = worst.max(dt * a[(0, 0)] / params.eta_s);
        if va.futures_enabled() {
            worst = worst.max(dt * a[(1, 1)] / params.eta_f);
        }
    }
    worst
}

/// Reject steps on which the explicit hedge update overshoots without bound.
pub(crate) fn check_hedge_step(va: &ValueApprox, params: &ModelParams, dt: f64) -> Result<()> {
    let factor = hedge_step_factor(va, params, dt);
    if factor >= 2.0 {
        return Err(Error::Config(format!(
            "dt too coarse for the hedging speed: dt·A_ii/η = {factor:.3} (must stay below 2)"
        )));
    }
    Ok(())
}

/// max over sizes of λ(z)·f(quote floor)·dt.
pub fn max_step_probability(params: &ModelParams, scale: f64, dt: f64) -> f64 {
    let f = FillCurve::from_params(params).prob(QUOTE_FLOOR);
    params.lambda.iter().fold(0.0f64, |m, &l| m.max(scale * l * f * dt))
}

/// Client side of a fill, from the dealer's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Client sells to the dealer's bid.
    Bid,
    /// Client buys at the dealer's ask.
    Ask,
}

/// Everything that happened during one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepOutcome {
    /// Bit 2i set when size i filled on the bid, bit 2i+1 on the ask.
    pub fills: u64,
    /// Σ z·δ over the fills, bp·oz.
    pub spread_revenue: f64,
    /// (L^S(v_S) + L^F(v_F))·dt, bp·oz.
    pub hedge_cost: f64,
    /// q_S'·ΔS + q_F'·(ΔS + ΔE), bp·oz.
    pub inventory_pnl: f64,
    pub bid_volume: f64,
    pub ask_volume: f64,
    pub spot_hedge: f64,
    pub futures_hedge: f64,
    pub ds: f64,
    pub de: f64,
}

impl StepOutcome {
    pub fn filled(&self, size_index: usize, side: Side) -> bool {
        let bit = 2 * size_index + matches!(side, Side::Ask) as usize;
        self.fills >> bit & 1 == 1
    }

    /// ΔMtM implied by the attribution.
    pub fn attributed_pnl(&self) -> f64 {
        self.spread_revenue - self.hedge_cost + self.inventory_pnl
    }
}

/// Parameter-derived constants used by [`step`].
#[derive(Debug, Clone)]
pub struct StepContext {
    pub ladder: Vec<f64>,
    /// Per-size base intensities, already multiplied by any scale.
    pub lambda: Vec<f64>,
    pub fill: FillCurve,
    pub spot: CostSpec,
    pub futures: CostSpec,
}

impl StepContext {
    pub fn new(params: &ModelParams, intensity_scale: f64) -> Self {
        StepContext {
            ladder: params.ladder.clone(),
            lambda: params.lambda.iter().map(|l| l * intensity_scale).collect(),
            fill: FillCurve::from_params(params),
            spot: CostSpec::for_venue(params, Venue::Spot),
            futures: CostSpec::for_venue(params, Venue::Futures),
        }
    }
}

/// Book client fills and hedges at the current prices. Draws exactly one
/// uniform per (size, side).
pub fn trade<R: Rng + ?Sized>(
    state: &MarketState,
    inv: &mut Inventory,
    decision: &ControlDecision,
    rng: &mut R,
    ctx: &StepContext,
    dt: f64,
) -> Result<StepOutcome> {
    let mut out = StepOutcome::default();
    for (i, (&z, &lam)) in ctx.ladder.iter().zip(&ctx.lambda).enumerate() {
        let db = decision.bid_offsets[i];
        let da = decision.ask_offsets[i];
        let pb = lam * ctx.fill.prob(db) * dt;
        let pa = lam * ctx.fill.prob(da) * dt;
        if pb > 1.0 || pa > 1.0 {
            return Err(Error::Config(format!("fill probability above one for size {z} (dt too coarse)")));
        }
        let (ub, ua): (f64, f64) = (rng.random(), rng.random());
        if ub < pb {
            inv.q_s += z;
            inv.x -= z * (state.s - db);
            out.spread_revenue += z * db;
            out.bid_volume += z;
            out.fills |= 1 << (2 * i);
        }
        if ua < pa {
            inv.q_s -= z;
            inv.x += z * (state.s + da);
            out.spread_revenue += z * da;
            out.ask_volume += z;
            out.fills |= 1 << (2 * i + 1);
        }
    }
    let (vs, vf) = (decision.v_s, decision.v_f);
    let cost = (ctx.spot.cost(vs) + ctx.futures.cost(vf)) * dt;
    inv.q_s += vs * dt;
    inv.q_f += vf * dt;
    inv.x -= vs * state.s * dt + vf * state.futures() * dt + cost;
    out.hedge_cost = cost;
    out.spot_hedge = vs.abs() * dt;
    out.futures_hedge = vf.abs() * dt;
    Ok(out)
}

/// One full step: trades and hedges at pre-step prices, then diffusion.
#[allow(clippy::too_many_arguments)]
pub fn step<R: Rng + ?Sized>(
    state: &mut MarketState,
    inv: &mut Inventory,
    decision: &ControlDecision,
    rng: &mut R,
    ctx: &StepContext,
    dynamics: &PriceDynamics,
) -> Result<StepOutcome> {
    let mut out = trade(state, inv, decision, rng, ctx, dynamics.dt())?;
    let (ds, de) = dynamics.advance(state, rng);
    out.ds = ds;
    out.de = de;
    out.inventory_pnl = inv.q_s * ds + inv.q_f * (ds + de);
    Ok(out)
}

/// Terminal statistics of one path.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PathSummary {
    pub q_s: f64,
    pub q_f: f64,
    pub mtm: f64,
    /// MtM − K^S q_S² − K^F q_F².
    pub penalized: f64,
    pub volumes: Volumes,
    pub fills: u64,
    pub floor_hits: u64,
    /// Largest |ΔMtM − attributed P&L| relative to max(1, |MtM|) over the path.
    pub max_accounting_error: f64,
}

/// Shared, read-only simulation setup.
#[derive(Debug, Clone)]
pub struct Simulator {
    params: ModelParams,
    config: SimConfig,
    policy: Policy,
    ctx: StepContext,
    dynamics: PriceDynamics,
    filter: MeanLevelFilter,
}

impl Simulator {
    pub fn new(params: &ModelParams, config: &SimConfig, va: Arc<ValueApprox>) -> Result<Self> {
        config.validate(params)?;
        check_hedge_step(&va, params, config.dt)?;
        let policy = if config.tabulated_offsets {
            Policy::tabulated(params, va)?
        } else {
            Policy::new(params, va)
        };
        Ok(Simulator {
            params: params.clone(),
            config: config.clone(),
            policy,
            ctx: StepContext::new(params, config.intensity_scale),
            dynamics: PriceDynamics::new(params, &covariance_matrix(params), config.scheme, config.dt)?,
            filter: MeanLevelFilter::new(params, config.gain_mode),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn rng(&self, path: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(path as u64);
        rng
    }

    /// Simulate path `index`, feeding every step to `observer`.
    pub fn run_path<O: Observer>(&self, index: usize, observer: &mut O) -> Result<PathSummary> {
        let cfg = &self.config;
        let mut rng = self.rng(index);
        let mut state = cfg.initial_state;
        let mut inv = cfg.initial_inventory;
        let mut fs = FilterState {
            d_hat: match cfg.mode {
                Information::Oracle => state.d,
                Information::Filtered => self.params.d_bar,
            },
            ..FilterState::initial(&self.params)
        };
        let mut decision = ControlDecision::with_sizes(self.params.ladder.len());
        let mut summary = PathSummary::default();
        let mut mtm = inv.mark_to_market(&state);
        let n = cfg.n_steps();
        observer.start(&Snapshot {
            step: 0,
            state: &state,
            d_hat: fs.d_hat,
            inventory: &inv,
            decision: &decision,
            outcome: &StepOutcome::default(),
            mtm,
        });
        for k in 0..n {
            let t = if cfg.stationary_controls { 0.0 } else { state.t };
            let d_seen = match cfg.mode {
                Information::Oracle => state.d,
                Information::Filtered => fs.d_hat,
            };
            self.policy
                .decide_into(t, &state_vec(inv.q_s, inv.q_f, state.e, d_seen), &mut decision)?;
            if decision.floor_hit {
                summary.floor_hits += 1;
            }
            let e_pre = state.e;
            let out = step(&mut state, &mut inv, &decision, &mut rng, &self.ctx, &self.dynamics)?;
            state.t = (k + 1) as f64 * cfg.dt;
            if cfg.mode == Information::Filtered {
                fs = self.filter.step(fs, out.ds, out.de, e_pre, cfg.dt);
            }
            let next = inv.mark_to_market(&state);
            let err = ((next - mtm) - out.attributed_pnl()).abs() / next.abs().max(1.0);
            summary.max_accounting_error = summary.max_accounting_error.max(err);
            mtm = next;
            summary.fills += out.fills.count_ones() as u64;
            summary.volumes.add(&out);
            observer.observe(&Snapshot {
                step: k + 1,
                state: &state,
                d_hat: fs.d_hat,
                inventory: &inv,
                decision: &decision,
                outcome: &out,
                mtm,
            });
        }
        summary.q_s = inv.q_s;
        summary.q_f = inv.q_f;
        summary.mtm = mtm;
        summary.penalized = mtm - self.params.k_s * inv.q_s * inv.q_s - self.params.k_f * inv.q_f * inv.q_f;
        Ok(summary)
    }

    /// Run every path with an [`EnsembleSampler`] and reduce in path order.
    pub fn run_ensemble(&self) -> Result<Ensemble> {
        let cfg = &self.config;
        let n_samples = cfg.n_steps() / cfg.sample_every + 1;
        let chunks: Vec<usize> = (0..cfg.n_paths.div_ceil(CHUNK)).collect();
        let partial: Vec<Result<EnsembleAccumulator>> = chunks
            .par_iter()
            .map(|&c| {
                let mut acc = EnsembleAccumulator::new(n_samples);
                for path in c * CHUNK..((c + 1) * CHUNK).min(cfg.n_paths) {
                    let mut sampler = EnsembleSampler::new(cfg.sample_every);
                    let summary = self.run_path(path, &mut sampler)?;
                    acc.push(&sampler, summary);
                }
                Ok(acc)
            })
            .collect();
        let mut total = EnsembleAccumulator::new(n_samples);
        for acc in partial {
            total.merge(acc?);
        }
        Ok(total.finish(cfg))
    }
}

/// Sequential-order accumulator over paths.
#[derive(Debug, Clone)]
struct EnsembleAccumulator {
    q_s: Vec<Moments>,
    q_f: Vec<Moments>,
    net: Vec<Moments>,
    mtm: Vec<Moments>,
    paths: Vec<PathSummary>,
}

impl EnsembleAccumulator {
    fn new(n: usize) -> Self {
        EnsembleAccumulator {
            q_s: vec![Moments::default(); n],
            q_f: vec![Moments::default(); n],
            net: vec![Moments::default(); n],
            mtm: vec![Moments::default(); n],
            paths: Vec::new(),
        }
    }

    fn push(&mut self, sampler: &EnsembleSampler, summary: PathSummary) {
        for (i, s) in sampler.samples().iter().enumerate().take(self.q_s.len()) {
            self.q_s[i].push(s.q_s);
            self.q_f[i].push(s.q_f);
            self.net[i].push(s.q_s + s.q_f);
            self.mtm[i].push(s.mtm);
        }
        self.paths.push(summary);
    }

    fn merge(&mut self, other: EnsembleAccumulator) {
        for i in 0..self.q_s.len() {
            self.q_s[i].merge(&other.q_s[i]);
            self.q_f[i].merge(&other.q_f[i]);
            self.net[i].merge(&other.net[i]);
            self.mtm[i].merge(&other.mtm[i]);
        }
        self.paths.extend(other.paths);
    }

    fn finish(self, cfg: &SimConfig) -> Ensemble {
        let times = (0..self.q_s.len())
            .map(|i| (i * cfg.sample_every) as f64 * cfg.dt)
            .collect();
        Ensemble {
            times,
            q_s: self.q_s,
            q_f: self.q_f,
            net: self.net,
            mtm: self.mtm,
            paths: self.paths,
        }
    }
}

/// Cross-path statistics at each sample time plus per-path summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    /// Sample times, day.
    pub times: Vec<f64>,
    pub q_s: Vec<Moments>,
    pub q_f: Vec<Moments>,
    /// q_S + q_F.
    pub net: Vec<Moments>,
    pub mtm: Vec<Moments>,
    pub paths: Vec<PathSummary>,
}

impl Ensemble {
    pub fn volumes(&self) -> Volumes {
        let mut v = Volumes::default();
        for p in &self.paths {
            v.merge(&p.volumes);
        }
        v
    }

    pub fn terminal_penalized(&self) -> Moments {
        let mut m = Moments::default();
        for p in &self.paths {
            m.push(p.penalized);
        }
        m
    }

    pub fn max_accounting_error(&self) -> f64 {
        self.paths.iter().fold(0.0, |m, p| m.max(p.max_accounting_error))
    }

    /// CSV with columns t, then mean and standard error of q_S, q_F, q_S+q_F and MtM.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(ENSEMBLE_HEADER)?;
        for i in 0..self.times.len() {
            let row = [
                self.times[i],
                self.q_s[i].mean(),
                self.q_s[i].std_error(),
                self.q_f[i].mean(),
                self.q_f[i].std_error(),
                self.net[i].mean(),
                self.net[i].std_error(),
                self.mtm[i].mean(),
                self.mtm[i].std_error(),
            ];
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const ENSEMBLE_HEADER: [&str; 9] = [
    "t", "q_s_mean", "q_s_se", "q_f_mean", "q_f_se", "net_mean", "net_se", "mtm_mean", "mtm_se",
];

/// Build the simulator and run the ensemble.
pub fn run_paths(config: &SimConfig, params: &ModelParams, va: Arc<ValueApprox>) -> Result<Ensemble> {
    Simulator::new(params, config, va)?.run_ensemble()
}

/// Worker count from `EFPMM_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var("EFPMM_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Run `f` on a dedicated pool of `threads` workers (hardware parallelism when `None`).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}
