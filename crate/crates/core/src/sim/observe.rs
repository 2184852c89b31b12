//! Per-step observers: ensemble sampling, full path records and online
//! stationary statistics.

use serde::{Deserialize, Serialize};

use super::{Side, StepOutcome};
use crate::error::Result;
use crate::params::{Inventory, MarketState};
use crate::policy::ControlDecision;

/// View of the simulation after a step.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    /// Steps completed.
    pub step: usize,
    pub state: &'a MarketState,
    /// Filtered mean level (equals the true D in oracle mode at start).
    pub d_hat: f64,
    pub inventory: &'a Inventory,
    /// Controls that were applied during the step.
    pub decision: &'a ControlDecision,
    pub outcome: &'a StepOutcome,
    pub mtm: f64,
}

pub trait Observer {
    /// Called once with the initial state before any step.
    fn start(&mut self, _snap: &Snapshot<'_>) {}
    fn observe(&mut self, snap: &Snapshot<'_>);
}

impl Observer for () {
    fn observe(&mut self, _snap: &Snapshot<'_>) {}
}

/// Count, mean and centred second moment; merges are order-sensitive only
/// through floating-point rounding.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64 * o.n as f64) / n as f64;
        self.n = n;
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Traded quantity by channel, oz.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Volumes {
    pub client_bid: f64,
    pub client_ask: f64,
    pub spot_hedge: f64,
    pub futures_hedge: f64,
}

impl Volumes {
    pub fn add(&mut self, o: &StepOutcome) {
        self.client_bid += o.bid_volume;
        self.client_ask += o.ask_volume;
        self.spot_hedge += o.spot_hedge;
        self.futures_hedge += o.futures_hedge;
    }

    pub fn merge(&mut self, o: &Volumes) {
        self.client_bid += o.client_bid;
        self.client_ask += o.client_ask;
        self.spot_hedge += o.spot_hedge;
        self.futures_hedge += o.futures_hedge;
    }

    pub fn total(&self) -> f64 {
        self.client_bid + self.client_ask + self.spot_hedge + self.futures_hedge
    }

    /// Shares (client bid, client ask, spot hedge, futures hedge); `None` without volume.
    pub fn shares(&self) -> Option<[f64; 4]> {
        let t = self.total();
        (t > 0.0).then(|| {
            [
                self.client_bid / t,
                self.client_ask / t,
                self.spot_hedge / t,
                self.futures_hedge / t,
            ]
        })
    }
}

/// Inventory and MtM sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sample {
    pub q_s: f64,
    pub q_f: f64,
    pub mtm: f64,
}

/// Samples (q_S, q_F, MtM) every `stride` steps, including the start.
#[derive(Debug, Clone, Default)]
pub struct EnsembleSampler {
    stride: usize,
    samples: Vec<Sample>,
}

impl EnsembleSampler {
    pub fn new(stride: usize) -> Self {
        EnsembleSampler {
            stride: stride.max(1),
            samples: Vec::new(),
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    fn take(&mut self, snap: &Snapshot<'_>) {
        self.samples.push(Sample {
            q_s: snap.inventory.q_s,
            q_f: snap.inventory.q_f,
            mtm: snap.mtm,
        });
    }
}

impl Observer for EnsembleSampler {
    fn start(&mut self, snap: &Snapshot<'_>) {
        self.take(snap);
    }

    fn observe(&mut self, snap: &Snapshot<'_>) {
        if snap.step % self.stride == 0 {
            self.take(snap);
        }
    }
}

/// A client fill.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeEvent {
    /// Time of the step start, day.
    pub t: f64,
    pub side: Side,
    pub size: f64,
    pub offset: f64,
    /// Booked price S ∓ δ, bp.
    pub price: f64,
}

/// Time series of one path, sampled every `stride` steps, plus all fills.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PathRecord {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub e: Vec<f64>,
    pub d: Vec<f64>,
    pub d_hat: Vec<f64>,
    pub q_s: Vec<f64>,
    pub q_f: Vec<f64>,
    pub cash: Vec<f64>,
    pub mtm: Vec<f64>,
    pub top_bid: Vec<f64>,
    pub top_ask: Vec<f64>,
    pub v_s: Vec<f64>,
    pub v_f: Vec<f64>,
    pub events: Vec<TradeEvent>,
    pub volumes: Volumes,
}

pub const PATH_HEADER: [&str; 13] = [
    "t", "s", "e", "d", "d_hat", "q_s", "q_f", "cash", "mtm", "top_bid", "top_ask", "v_s", "v_f",
];

impl PathRecord {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// (q_F − q_S)/2: long futures against short spot counts as long EFP.
    pub fn efp_position(&self, i: usize) -> f64 {
        0.5 * (self.q_f[i] - self.q_s[i])
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(PATH_HEADER)?;
        for i in 0..self.len() {
            let row = [
                self.t[i],
                self.s[i],
                self.e[i],
                self.d[i],
                self.d_hat[i],
                self.q_s[i],
                self.q_f[i],
                self.cash[i],
                self.mtm[i],
                self.top_bid[i],
                self.top_ask[i],
                self.v_s[i],
                self.v_f[i],
            ];
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_events_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "side", "size", "offset", "price"])?;
        for ev in &self.events {
            let side = match ev.side {
                Side::Bid => "bid",
                Side::Ask => "ask",
            };
            w.write_record([
                ev.t.to_string(),
                side.to_string(),
                ev.size.to_string(),
                ev.offset.to_string(),
                ev.price.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds a [`PathRecord`].
#[derive(Debug, Clone)]
pub struct Recorder {
    stride: usize,
    ladder: Vec<f64>,
    prev: Option<MarketState>,
    pub record: PathRecord,
}

impl Recorder {
    pub fn new(stride: usize, ladder: &[f64]) -> Self {
        Recorder {
            stride: stride.max(1),
            ladder: ladder.to_vec(),
            prev: None,
            record: PathRecord::default(),
        }
    }

    fn push(&mut self, snap: &Snapshot<'_>) {
        let r = &mut self.record;
        r.t.push(snap.state.t);
        r.s.push(snap.state.s);
        r.e.push(snap.state.e);
        r.d.push(snap.state.d);
        r.d_hat.push(snap.d_hat);
        r.q_s.push(snap.inventory.q_s);
        r.q_f.push(snap.inventory.q_f);
        r.cash.push(snap.inventory.x);
        r.mtm.push(snap.mtm);
        r.top_bid.push(snap.decision.bid_offsets.first().copied().unwrap_or(f64::NAN));
        r.top_ask.push(snap.decision.ask_offsets.first().copied().unwrap_or(f64::NAN));
        r.v_s.push(snap.decision.v_s);
        r.v_f.push(snap.decision.v_f);
    }
}

impl Observer for Recorder {
    fn start(&mut self, snap: &Snapshot<'_>) {
        self.prev = Some(*snap.state);
        self.push(snap);
    }

    fn observe(&mut self, snap: &Snapshot<'_>) {
        let o = snap.outcome;
        if o.fills != 0 {
            let (s_pre, t_pre) = self.prev.map_or((snap.state.s - o.ds, f64::NAN), |p| (p.s, p.t));
            for (i, &z) in self.ladder.iter().enumerate() {
                for side in [Side::Bid, Side::Ask] {
                    if o.filled(i, side) {
                        let (offset, price) = match side {
                            Side::Bid => (snap.decision.bid_offsets[i], s_pre - snap.decision.bid_offsets[i]),
                            Side::Ask => (snap.decision.ask_offsets[i], s_pre + snap.decision.ask_offsets[i]),
                        };
                        self.record.events.push(TradeEvent {
                            t: t_pre,
                            side,
                            size: z,
                            offset,
                            price,
                        });
                    }
                }
            }
        }
        self.record.volumes.add(o);
        self.prev = Some(*snap.state);
        if snap.step % self.stride == 0 {
            self.push(snap);
        }
    }
}

/// Square-binned 2D histogram of (q_S, q_F); bin k covers [(k − ½)w, (k + ½)w).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2d {
    pub width: f64,
    /// Bins per axis run from −half to +half.
    pub half: i64,
    /// Row-major counts, q_S index first.
    pub counts: Vec<u64>,
    pub outside: u64,
}

impl Histogram2d {
    pub fn new(width: f64, half: i64) -> Self {
        let n = (2 * half + 1) as usize;
        Histogram2d {
            width,
            half,
            counts: vec![0; n * n],
            outside: 0,
        }
    }

    fn side(&self) -> usize {
        (2 * self.half + 1) as usize
    }

    pub fn bin_of(&self, x: f64) -> i64 {
        (x / self.width).round() as i64
    }

    pub fn add(&mut self, q_s: f64, q_f: f64) {
        let (i, j) = (self.bin_of(q_s), self.bin_of(q_f));
        if i.abs() > self.half || j.abs() > self.half {
            self.outside += 1;
            return;
        }
        let n = self.side();
        self.counts[(i + self.half) as usize * n + (j + self.half) as usize] += 1;
    }

    pub fn count(&self, i: i64, j: i64) -> u64 {
        let n = self.side();
        self.counts[(i + self.half) as usize * n + (j + self.half) as usize]
    }

    /// Most populated bin as (q_S bin, q_F bin); the first in row-major order on ties.
    pub fn modal_bin(&self) -> (i64, i64) {
        let n = self.side();
        let (mut best, mut at) = (0u64, 0usize);
        for (k, &c) in self.counts.iter().enumerate() {
            if c > best {
                best = c;
                at = k;
            }
        }
        ((at / n) as i64 - self.half, (at % n) as i64 - self.half)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.outside
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["q_s", "q_f", "count"])?;
        for i in -self.half..=self.half {
            for j in -self.half..=self.half {
                let c = self.count(i, j);
                if c > 0 {
                    w.write_record([
                        (i as f64 * self.width).to_string(),
                        (j as f64 * self.width).to_string(),
                        c.to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Online bivariate moments.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CoMoments {
    pub n: u64,
    pub mean_x: f64,
    pub mean_y: f64,
    pub m2x: f64,
    pub m2y: f64,
    pub cxy: f64,
}

impl CoMoments {
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let n = self.n as f64;
        let dx = x - self.mean_x;
        self.mean_x += dx / n;
        let dy = y - self.mean_y;
        self.mean_y += dy / n;
        self.m2x += dx * (x - self.mean_x);
        self.m2y += dy * (y - self.mean_y);
        self.cxy += dx * (y - self.mean_y);
    }

    pub fn correlation(&self) -> f64 {
        self.cxy / (self.m2x * self.m2y).sqrt()
    }
}

/// Knobs for [`StationaryObserver`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StationarySpec {
    /// Steps discarded before accumulating.
    pub burn_in: usize,
    /// Histogram bin width, oz.
    pub bin_width: f64,
    /// Bins on each side of zero.
    pub half_bins: i64,
    /// Steps per P&L window (3600 for hourly at 1-second steps).
    pub window: usize,
}

impl Default for StationarySpec {
    fn default() -> Self {
        StationarySpec {
            burn_in: 3600,
            bin_width: 500.0,
            half_bins: 30,
            window: 3600,
        }
    }
}

/// Summary of a long run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryStats {
    pub histogram: Histogram2d,
    pub volumes: Volumes,
    pub inventory: CoMoments,
    /// MtM change over non-overlapping windows.
    pub window_pnl: Moments,
    pub samples: u64,
}

impl StationaryStats {
    pub fn correlation(&self) -> f64 {
        self.inventory.correlation()
    }

    pub fn shares(&self) -> Option<[f64; 4]> {
        self.volumes.shares()
    }
}

/// Accumulates [`StationaryStats`] after a burn-in.
#[derive(Debug, Clone)]
pub struct StationaryObserver {
    spec: StationarySpec,
    window_start: Option<f64>,
    stats: StationaryStats,
}

impl StationaryObserver {
    pub fn new(spec: StationarySpec) -> Self {
        StationaryObserver {
            spec,
            window_start: None,
            stats: StationaryStats {
                histogram: Histogram2d::new(spec.bin_width, spec.half_bins),
                volumes: Volumes::default(),
                inventory: CoMoments::default(),
                window_pnl: Moments::default(),
                samples: 0,
            },
        }
    }

    pub fn finish(self) -> StationaryStats {
        self.stats
    }
}

impl Observer for StationaryObserver {
    fn observe(&mut self, snap: &Snapshot<'_>) {
        if snap.step < self.spec.burn_in {
            return;
        }
        if snap.step == self.spec.burn_in {
            self.window_start = Some(snap.mtm);
            return;
        }
        let (qs, qf) = (snap.inventory.q_s, snap.inventory.q_f);
        let st = &mut self.stats;
        st.histogram.add(qs, qf);
        st.inventory.push(qs, qf);
        st.volumes.add(snap.outcome);
        st.samples += 1;
        if (snap.step - self.spec.burn_in) % self.spec.window == 0 {
            if let Some(start) = self.window_start {
                st.window_pnl.push(snap.mtm - start);
            }
            self.window_start = Some(snap.mtm);
        }
    }
}

/// Reduce a long record (or any step stream) to stationary statistics.
pub fn stationary_stats<'a>(
    snapshots: impl IntoIterator<Item = Snapshot<'a>>,
    spec: StationarySpec,
) -> StationaryStats {
    let mut obs = StationaryObserver::new(spec);
    for s in snapshots {
        obs.observe(&s);
    }
    obs.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shares_sum_to_one() {
        let v = Volumes {
            client_bid: 3.0,
            client_ask: 5.0,
            spot_hedge: 0.25,
            futures_hedge: 7.0,
        };
        let s = v.shares().unwrap();
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(Volumes::default().shares().is_none());
    }

    #[test]
    fn histogram_bins_are_centred() {
        let mut h = Histogram2d::new(100.0, 2);
        h.add(49.0, -49.0);
        h.add(51.0, -151.0);
        h.add(1000.0, 0.0);
        assert_eq!(h.count(0, 0), 1);
        assert_eq!(h.count(1, -2), 1);
        assert_eq!(h.outside, 1);
        assert_eq!(h.total(), 3);
        h.add(120.0, -90.0);
        h.add(110.0, -95.0);
        assert_eq!(h.modal_bin(), (1, -1));
    }

    #[test]
    fn comoments_correlation() {
        let mut c = CoMoments::default();
        for k in 0..100 {
            let x = k as f64;
            c.push(x, -2.0 * x + 1.0);
        }
        assert!((c.correlation() + 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn moments_merge_matches_sequential(xs in proptest::collection::vec(-1e3f64..1e3, 2..60), cut in 0usize..60) {
            let cut = cut.min(xs.len());
            let mut all = Moments::default();
            xs.iter().for_each(|&x| all.push(x));
            let (mut a, mut b) = (Moments::default(), Moments::default());
            xs[..cut].iter().for_each(|&x| a.push(x));
            xs[cut..].iter().for_each(|&x| b.push(x));
            a.merge(&b);
            prop_assert_eq!(a.n, all.n);
            prop_assert!((a.mean - all.mean).abs() < 1e-9);
            prop_assert!((a.m2 - all.m2).abs() < 1e-6 * all.m2.max(1.0));
        }
    }
}
