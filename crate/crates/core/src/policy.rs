//! Near-optimal controls from the quadratic value approximation: per-size
//! bid/ask offsets and spot/futures execution rates, plus the geometry of
//! the no-execution zones and quote skew.
//!
//! With m = 2·(row 1 of A)·x + B₁, the reservation shifts entering δ̄ are
//! z·A₁₁ + m on the bid and z·A₁₁ − m on the ask. The execution rates are
//! (H^i)'(−2·(row i of A)·x − B_i) with the exact cost Hamiltonians.

use std::sync::Arc;

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::execution::{CostSpec, Venue};
use crate::flow::{OffsetTable, QuoteSolver, QUOTE_FLOOR};
use crate::params::ModelParams;
use crate::riccati::ValueApprox;

/// State vector (q_S, q_F, E, D).
pub type StateVec = Vector4<f64>;

pub fn state_vec(q_s: f64, q_f: f64, e: f64, d: f64) -> StateVec {
    Vector4::new(q_s, q_f, e, d)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlDecision {
    /// Bid offset per ladder size, bp.
    pub bid_offsets: Vec<f64>,
    /// Ask offset per ladder size, bp.
    pub ask_offsets: Vec<f64>,
    /// Spot execution rate, oz/day.
    pub v_s: f64,
    /// Futures execution rate, oz/day.
    pub v_f: f64,
    /// Set when some quote was clamped at the floor.
    pub floor_hit: bool,
}

impl ControlDecision {
    pub fn with_sizes(n: usize) -> Self {
        ControlDecision {
            bid_offsets: vec![0.0; n],
            ask_offsets: vec![0.0; n],
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
enum OffsetEngine {
    Exact(QuoteSolver),
    Table(Arc<OffsetTable>),
}

/// Greedy controls against a solved value approximation.
#[derive(Debug, Clone)]
pub struct Policy {
    params: ModelParams,
    va: Arc<ValueApprox>,
    engine: OffsetEngine,
    spot: CostSpec,
    futures: CostSpec,
}

impl Policy {
    /// Offsets from the exact solver at every call.
    pub fn new(params: &ModelParams, va: Arc<ValueApprox>) -> Self {
        Policy {
            params: params.clone(),
            va,
            engine: OffsetEngine::Exact(QuoteSolver::new(params)),
            spot: CostSpec::for_venue(params, Venue::Spot),
            futures: CostSpec::for_venue(params, Venue::Futures),
        }
    }

    /// Offsets from pre-tabulated δ̄ (Hermite interpolation, exact outside the table).
    pub fn tabulated(params: &ModelParams, va: Arc<ValueApprox>) -> Result<Self> {
        let table = OffsetTable::for_params(params)?;
        Ok(Self::with_table(params, va, Arc::new(table)))
    }

    pub fn with_table(params: &ModelParams, va: Arc<ValueApprox>, table: Arc<OffsetTable>) -> Self {
        Policy {
            engine: OffsetEngine::Table(table),
            ..Self::new(params, va)
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn value_approx(&self) -> &ValueApprox {
        &self.va
    }

    pub fn cost(&self, venue: Venue) -> CostSpec {
        match venue {
            Venue::Spot => self.spot,
            Venue::Futures => self.futures,
        }
    }

    #[inline]
    fn offset(&self, size_index: usize, p: f64) -> Result<f64> {
        match &self.engine {
            OffsetEngine::Exact(s) => s.optimum(self.params.ladder[size_index], p).map(|o| o.delta),
            OffsetEngine::Table(t) => t.offset(size_index, p),
        }
    }

    /// Marginal value of inventory −2·(row i of A)·x − B_i for the venue.
    pub fn marginal(&self, t: f64, x: &StateVec, venue: Venue) -> f64 {
        let (a, b) = self.va.at(t);
        let i = venue.index();
        -2.0 * a.row(i).dot(&x.transpose()) - b[i]
    }

    pub fn decide(&self, t: f64, x: &StateVec) -> Result<ControlDecision> {
        let mut out = ControlDecision::with_sizes(self.params.ladder.len());
        self.decide_into(t, x, &mut out)?;
        Ok(out)
    }

    /// Allocation-free variant of [`Policy::decide`].
    pub fn decide_into(&self, t: f64, x: &StateVec, out: &mut ControlDecision) -> Result<()> {
        let (a, b) = self.va.at(t);
        let row_s = a.row(0).dot(&x.transpose());
        let row_f = a.row(1).dot(&x.transpose());
        let shift = 2.0 * row_s + b[0];
        let a11 = a[(0, 0)];
        let n = self.params.ladder.len();
        out.bid_offsets.resize(n, 0.0);
        out.ask_offsets.resize(n, 0.0);
        out.floor_hit = false;
        for (i, &z) in self.params.ladder.iter().enumerate() {
            let bid = self.offset(i, z * a11 + shift)?;
            let ask = self.offset(i, z * a11 - shift)?;
            if bid < QUOTE_FLOOR || ask < QUOTE_FLOOR {
                out.floor_hit = true;
            }
            out.bid_offsets[i] = bid.max(QUOTE_FLOOR);
            out.ask_offsets[i] = ask.max(QUOTE_FLOOR);
        }
        out.v_s = self.spot.hamiltonian_prime(-2.0 * row_s - b[0]);
        out.v_f = if self.va.futures_enabled() {
            self.futures.hamiltonian_prime(-2.0 * row_f - b[1])
        } else {
            0.0
        };
        Ok(())
    }

    fn size_index(&self, z: f64) -> Result<usize> {
        self.params
            .ladder
            .iter()
            .position(|&l| l == z)
            .ok_or_else(|| Error::Config(format!("size {z} is not on the ladder")))
    }

    /// (ask offset − bid offset)/2 for size `z`; positive means quotes shifted up.
    pub fn skew(&self, t: f64, x: &StateVec, z: f64) -> Result<f64> {
        let i = self.size_index(z)?;
        let (a, b) = self.va.at(t);
        let shift = 2.0 * a.row(0).dot(&x.transpose()) + b[0];
        let a11 = a[(0, 0)];
        let bid = self.offset(i, z * a11 + shift)?.max(QUOTE_FLOOR);
        let ask = self.offset(i, z * a11 - shift)?.max(QUOTE_FLOOR);
        Ok(0.5 * (ask - bid))
    }

    /// Quoted spread δ^a + δ^b for size `z`.
    pub fn spread(&self, t: f64, x: &StateVec, z: f64) -> Result<f64> {
        let i = self.size_index(z)?;
        let (a, b) = self.va.at(t);
        let shift = 2.0 * a.row(0).dot(&x.transpose()) + b[0];
        let a11 = a[(0, 0)];
        Ok(self.offset(i, z * a11 + shift)?.max(QUOTE_FLOOR) + self.offset(i, z * a11 - shift)?.max(QUOTE_FLOOR))
    }

    /// No-execution zone of `venue` restricted to a 2D slice.
    pub fn no_execution_zone(&self, t: f64, venue: Venue, slice: &ZoneSlice) -> Zone {
        no_execution_zone(&self.va, t, venue, self.cost(venue).psi, slice)
    }
}

/// Coordinate of the state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    SpotInventory,
    FuturesInventory,
    Efp,
    MeanLevel,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::SpotInventory => 0,
            Axis::FuturesInventory => 1,
            Axis::Efp => 2,
            Axis::MeanLevel => 3,
        }
    }
}

/// A 2D slice through the state space: the boundary is solved along
/// `along` as an affine function of the coordinate w, where the state is
/// `base + u·e_along + w·scale·e_across`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneSlice {
    pub along: Axis,
    pub across: Axis,
    /// Units of w in state units, e.g. σ_E to express E as ε = E/σ_E.
    pub scale: f64,
    /// Values of the two remaining coordinates; the sliced ones are ignored.
    pub base: StateVec,
}

impl ZoneSlice {
    /// q_S against ε = E/σ_E at fixed q_F and D.
    pub fn inventory_vs_deviation(q_f: f64, d: f64, sigma_e: f64) -> Self {
        ZoneSlice {
            along: Axis::SpotInventory,
            across: Axis::Efp,
            scale: sigma_e,
            base: state_vec(0.0, q_f, 0.0, d),
        }
    }

    pub fn point(&self, u: f64, w: f64) -> StateVec {
        let mut x = self.base;
        x[self.along.index()] = u;
        x[self.across.index()] = w * self.scale;
        x
    }
}

/// u = intercept + slope·w.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineBoundary {
    pub intercept: f64,
    pub slope: f64,
}

impl AffineBoundary {
    pub fn at(&self, w: f64) -> f64 {
        self.intercept + self.slope * w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Zone {
    /// The zone is bounded by two parallel lines. `buy` is where the
    /// marginal value equals +ψ (buying beyond it), `sell` where it equals −ψ.
    Slab {
        buy: AffineBoundary,
        sell: AffineBoundary,
        /// Whether the marginal value increases along the slice axis; if so
        /// the buy region lies above `buy` and the sell region below `sell`.
        increasing: bool,
    },
    /// The marginal value does not depend on the slice axis.
    Unbounded,
}

impl Zone {
    /// Region where the venue buys, as (boundary, region lies above it).
    pub fn buy_region(&self, w: f64) -> Option<(f64, bool)> {
        match self {
            Zone::Slab { buy, increasing, .. } => Some((buy.at(w), *increasing)),
            Zone::Unbounded => None,
        }
    }

    pub fn sell_region(&self, w: f64) -> Option<(f64, bool)> {
        match self {
            Zone::Slab { sell, increasing, .. } => Some((sell.at(w), !*increasing)),
            Zone::Unbounded => None,
        }
    }
}

/// Zone {|−2·(row i of A)·x − B_i| ≤ ψ} restricted to `slice`.
pub fn no_execution_zone(va: &ValueApprox, t: f64, venue: Venue, psi: f64, slice: &ZoneSlice) -> Zone {
    let (a, b) = va.at(t);
    let i = venue.index();
    let row = a.row(i).transpose();
    let (ju, jw) = (slice.along.index(), slice.across.index());
    let mut base = slice.base;
    base[ju] = 0.0;
    base[jw] = 0.0;
    let c0 = -2.0 * row.dot(&base) - b[i];
    let cu = -2.0 * row[ju];
    let cw = -2.0 * row[jw] * slice.scale;
    if cu == 0.0 || !cu.is_finite() {
        return Zone::Unbounded;
    }
    let solve = |level: f64| AffineBoundary {
        intercept: (level - c0) / cu,
        slope: -cw / cu,
    };
    Zone::Slab {
        buy: solve(psi),
        sell: solve(-psi),
        increasing: cu > 0.0,
    }
}

fn half_lines_meet(a: (f64, bool), b: (f64, bool)) -> bool {
    match (a.1, b.1) {
        (true, true) | (false, false) => true,
        (true, false) => a.0 < b.0,
        (false, true) => b.0 < a.0,
    }
}

/// Whether, at slice coordinate w, some state executes the two venues in
/// opposite directions (futures sold while spot bought, or the reverse).
pub fn opposite_execution_at(spot: &Zone, futures: &Zone, w: f64) -> bool {
    let pair = |x: Option<(f64, bool)>, y: Option<(f64, bool)>| match (x, y) {
        (Some(x), Some(y)) => half_lines_meet(x, y),
        _ => false,
    };
    pair(futures.sell_region(w), spot.buy_region(w)) || pair(futures.buy_region(w), spot.sell_region(w))
}

/// Whether opposite execution occurs anywhere for w in [lo, hi]. Both
/// conditions are linear in w, so checking the endpoints suffices.
pub fn opposite_execution_within(spot: &Zone, futures: &Zone, lo: f64, hi: f64) -> bool {
    opposite_execution_at(spot, futures, lo) || opposite_execution_at(spot, futures, hi)
}

/// Free-function form of [`Policy::decide`] with the exact offset solver.
pub fn decide(va: Arc<ValueApprox>, t: f64, x: &StateVec, params: &ModelParams) -> Result<ControlDecision> {
    Policy::new(params, va).decide(t, x)
}

pub fn skew(va: Arc<ValueApprox>, t: f64, x: &StateVec, z: f64, params: &ModelParams) -> Result<f64> {
    Policy::new(params, va).skew(t, x, z)
}
