//! Commands that solve the Riccati system and tabulate controls.

use std::sync::Arc;

use efpmm::policy::{opposite_execution_within, Axis, Zone, ZoneSlice};
use efpmm::{solve_model, state_vec, Information, ModelParams, Policy, SolveOptions, ValueApprox, Venue};
use serde::{Deserialize, Serialize};

use crate::config::{linspace, nonempty, Experiment};
use crate::error::CliError;
use crate::output::{row, Output};

fn solve_with(params: &ModelParams, opts: SolveOptions) -> Result<Arc<ValueApprox>, CliError> {
    Ok(Arc::new(solve_model(params, &opts)?))
}

fn policy_for(params: &ModelParams, opts: SolveOptions) -> Result<Policy, CliError> {
    Ok(Policy::new(params, solve_with(params, opts)?))
}

/// (lower, upper) edge of a zone at slice coordinate w.
fn band(zone: &Zone, w: f64) -> (f64, f64) {
    match zone {
        Zone::Slab { buy, sell, .. } => {
            let (a, b) = (buy.at(w), sell.at(w));
            (a.min(b), a.max(b))
        }
        Zone::Unbounded => (f64::NEG_INFINITY, f64::INFINITY),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveCmd {
    pub information: Information,
    pub futures_enabled: bool,
}

impl Default for SolveCmd {
    fn default() -> Self {
        SolveCmd {
            information: Information::Oracle,
            futures_enabled: true,
        }
    }
}

pub fn solve(exp: &Experiment<SolveCmd>, out: &mut Output) -> Result<(), CliError> {
    let opts = SolveOptions {
        information: exp.knobs.information,
        futures_enabled: exp.knobs.futures_enabled,
        ..exp.solve.options()
    };
    let va = solve_with(&exp.params, opts)?;
    va.write_csv(out.file("value_approx.csv")?)?;
    let (a, b) = va.at(0.0);
    out.note("nodes", va.grid().len());
    out.note("step", va.step());
    out.note("A0", (0..4).map(|i| (0..4).map(|j| a[(i, j)]).collect::<Vec<_>>()).collect::<Vec<_>>());
    out.note("B0", b.iter().copied().collect::<Vec<_>>());
    out.note("max_step_asymmetry", va.max_step_asymmetry());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderCmd {
    pub q_s_min: f64,
    pub q_s_max: f64,
    pub points: usize,
    /// One sheet per futures inventory.
    pub q_f: Vec<f64>,
    pub e: f64,
    pub d: f64,
    pub t: f64,
}

impl Default for LadderCmd {
    fn default() -> Self {
        LadderCmd {
            q_s_min: -5000.0,
            q_s_max: 5000.0,
            points: 201,
            q_f: vec![0.0, 1000.0],
            e: 0.0,
            d: 0.0,
            t: 0.0,
        }
    }
}

pub fn ladder(exp: &Experiment<LadderCmd>, out: &mut Output) -> Result<(), CliError> {
    let k = &exp.knobs;
    nonempty("q_f", &k.q_f)?;
    let grid = linspace(k.q_s_min, k.q_s_max, k.points)?;
    let p = &exp.params;
    let pol = policy_for(p, exp.solve.options())?;

    let mut w = out.csv("ladder.csv")?;
    let mut header = vec!["q_f".to_string(), "q_s".to_string()];
    for z in &p.ladder {
        header.push(format!("bid_{z}"));
        header.push(format!("ask_{z}"));
    }
    header.extend(["v_s".into(), "v_f".into()]);
    w.write_record(&header)?;

    let mut bands = vec![];
    for &q_f in &k.q_f {
        for &q_s in &grid {
            let d = pol.decide(k.t, &state_vec(q_s, q_f, k.e, k.d))?;
            let mut values = vec![q_f, q_s];
            for (b, a) in d.bid_offsets.iter().zip(&d.ask_offsets) {
                values.extend([*b, *a]);
            }
            values.extend([d.v_s, d.v_f]);
            row(&mut w, &values)?;
        }
        let slice = ZoneSlice::inventory_vs_deviation(q_f, k.d, p.sigma_e);
        let w_at = k.e / p.sigma_e;
        let spot = band(&pol.no_execution_zone(k.t, Venue::Spot, &slice), w_at);
        let fut = band(&pol.no_execution_zone(k.t, Venue::Futures, &slice), w_at);
        bands.push(serde_json::json!({
            "q_f": q_f,
            "spot_no_execution": [spot.0, spot.1],
            "futures_no_execution": [fut.0, fut.1],
        }));
    }
    w.flush()?;
    out.note("bands", bands);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZonesCmd {
    pub gammas: Vec<f64>,
    pub eps_min: f64,
    pub eps_max: f64,
    pub points: usize,
    pub q_f: f64,
    pub d: f64,
}

impl Default for ZonesCmd {
    fn default() -> Self {
        ZonesCmd {
            gammas: vec![1e-3, 1e-4],
            eps_min: -3.0,
            eps_max: 3.0,
            points: 61,
            q_f: 0.0,
            d: 0.0,
        }
    }
}

pub fn zones(exp: &Experiment<ZonesCmd>, out: &mut Output) -> Result<(), CliError> {
    let k = &exp.knobs;
    nonempty("gammas", &k.gammas)?;
    let eps = linspace(k.eps_min, k.eps_max, k.points)?;
    let mut w = out.csv("zones.csv")?;
    w.write_record(["gamma", "eps", "spot_buy", "spot_sell", "futures_buy", "futures_sell"])?;
    let mut notes = vec![];
    for &gamma in &k.gammas {
        let p = ModelParams { gamma, ..exp.params.clone() }.validate()?;
        let pol = policy_for(&p, exp.solve.options())?;
        let slice = ZoneSlice::inventory_vs_deviation(k.q_f, k.d, p.sigma_e);
        let spot = pol.no_execution_zone(0.0, Venue::Spot, &slice);
        let fut = pol.no_execution_zone(0.0, Venue::Futures, &slice);
        let edge = |z: &Zone, w: f64| match z {
            Zone::Slab { buy, sell, .. } => (buy.at(w), sell.at(w)),
            Zone::Unbounded => (f64::NAN, f64::NAN),
        };
        for &e in &eps {
            let (sb, ss) = edge(&spot, e);
            let (fb, fs) = edge(&fut, e);
            row(&mut w, &[gamma, e, sb, ss, fb, fs])?;
        }
        notes.push(serde_json::json!({
            "gamma": gamma,
            "spot": spot,
            "futures": fut,
            "opposite_execution_in_window": opposite_execution_within(&spot, &fut, k.eps_min, k.eps_max),
        }));
    }
    w.flush()?;
    out.note("zones", notes);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkewMapCmd {
    pub gammas: Vec<f64>,
    pub q_s_min: f64,
    pub q_s_max: f64,
    pub q_s_points: usize,
    pub eps_min: f64,
    pub eps_max: f64,
    pub eps_points: usize,
    /// Quoted size, oz; the top of the ladder when absent.
    pub size: Option<f64>,
    pub q_f: f64,
    pub d: f64,
}

impl Default for SkewMapCmd {
    fn default() -> Self {
        SkewMapCmd {
            gammas: vec![1e-3, 1e-4],
            q_s_min: -5000.0,
            q_s_max: 5000.0,
            q_s_points: 41,
            eps_min: -3.0,
            eps_max: 3.0,
            eps_points: 25,
            size: None,
            q_f: 0.0,
            d: 0.0,
        }
    }
}

pub fn skewmap(exp: &Experiment<SkewMapCmd>, out: &mut Output) -> Result<(), CliError> {
    let k = &exp.knobs;
    nonempty("gammas", &k.gammas)?;
    let qs = linspace(k.q_s_min, k.q_s_max, k.q_s_points)?;
    let eps = linspace(k.eps_min, k.eps_max, k.eps_points)?;
    let z = k.size.unwrap_or(exp.params.ladder[0]);
    let mut w = out.csv("skewmap.csv")?;
    w.write_record(["gamma", "q_s", "eps", "skew"])?;
    for &gamma in &k.gammas {
        let p = ModelParams { gamma, ..exp.params.clone() }.validate()?;
        let pol = policy_for(&p, exp.solve.options())?;
        for &q in &qs {
            for &e in &eps {
                let s = pol.skew(0.0, &state_vec(q, k.q_f, e * p.sigma_e, k.d), z)?;
                row(&mut w, &[gamma, q, e, s])?;
            }
        }
    }
    w.flush()?;
    out.note("size", z);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NestedSweepCmd {
    pub k_d: f64,
    /// σ_D/σ_E values.
    pub ratios: Vec<f64>,
    /// ε at which the skew is evaluated.
    pub eps: f64,
    pub size: Option<f64>,
}

impl Default for NestedSweepCmd {
    fn default() -> Self {
        NestedSweepCmd {
            k_d: 0.2,
            ratios: vec![0.0, 0.1, 0.25, 0.5, 1.0, 1.5, 2.0],
            eps: 1.0,
            size: None,
        }
    }
}

pub fn nested_sweep(exp: &Experiment<NestedSweepCmd>, out: &mut Output) -> Result<(), CliError> {
    let k = &exp.knobs;
    nonempty("ratios", &k.ratios)?;
    let z = k.size.unwrap_or(exp.params.ladder[0]);
    let mut w = out.csv("nested_sweep.csv")?;
    w.write_record(["ratio", "sigma_d", "skew", "onset_eps"])?;
    let (mut skews, mut onsets) = (vec![], vec![]);
    for &r in &k.ratios {
        let p = ModelParams {
            k_d: k.k_d,
            sigma_d: r * exp.params.sigma_e,
            ..exp.params.clone()
        }
        .validate()?;
        let pol = policy_for(&p, exp.solve.options())?;
        let skew = pol.skew(0.0, &state_vec(0.0, 0.0, k.eps * p.sigma_e, 0.0), z)?;
        let slice = ZoneSlice {
            along: Axis::Efp,
            across: Axis::SpotInventory,
            scale: 1.0,
            base: state_vec(0.0, 0.0, 0.0, 0.0),
        };
        let (lo, hi) = band(&pol.no_execution_zone(0.0, Venue::Spot, &slice), 0.0);
        let onset = lo.abs().min(hi.abs()) / p.sigma_e;
        row(&mut w, &[r, p.sigma_d, skew, onset])?;
        skews.push(skew.abs());
        onsets.push(onset);
    }
    w.flush()?;
    out.note("skew_nonincreasing", skews.windows(2).all(|w| w[1] <= w[0]));
    out.note("onset_nondecreasing", onsets.windows(2).all(|w| w[1] >= w[0]));
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpreadCompareCmd {
    /// Inventories for the spread-vs-size table.
    pub q_s: Vec<f64>,
    pub q_s_min: f64,
    pub q_s_max: f64,
    pub points: usize,
}

impl Default for SpreadCompareCmd {
    fn default() -> Self {
        SpreadCompareCmd {
            q_s: vec![0.0, 2500.0],
            q_s_min: -5000.0,
            q_s_max: 5000.0,
            points: 101,
        }
    }
}

pub fn spread_compare(exp: &Experiment<SpreadCompareCmd>, out: &mut Output) -> Result<(), CliError> {
    let k = &exp.knobs;
    nonempty("q_s", &k.q_s)?;
    let grid = linspace(k.q_s_min, k.q_s_max, k.points)?;
    let p = &exp.params;
    let with = policy_for(p, exp.solve.options())?;
    let without = policy_for(
        p,
        SolveOptions {
            futures_enabled: false,
            ..exp.solve.options()
        },
    )?;

    let mut w = out.csv("spread_by_size.csv")?;
    w.write_record(["q_s", "size", "with_futures", "spot_only"])?;
    let mut better = vec![];
    for &q in &k.q_s {
        let x = state_vec(q, 0.0, 0.0, 0.0);
        let mut all = true;
        for &z in &p.ladder {
            let (a, b) = (with.spread(0.0, &x, z)?, without.spread(0.0, &x, z)?);
            all &= a <= b;
            row(&mut w, &[q, z, a, b])?;
        }
        better.push(serde_json::json!({ "q_s": q, "with_futures_never_wider": all }));
    }
    w.flush()?;

    let mut w = out.csv("top_of_book.csv")?;
    w.write_record(["q_s", "with_futures", "spot_only"])?;
    for &q in &grid {
        let x = state_vec(q, 0.0, 0.0, 0.0);
        row(&mut w, &[q, with.spread(0.0, &x, p.ladder[0])?, without.spread(0.0, &x, p.ladder[0])?])?;
    }
    w.flush()?;
    out.note("comparison", better);
    Ok(())
}
