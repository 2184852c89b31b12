//! Client flow: logistic fill curve, the quote Hamiltonian
//! H(z, p) = sup_δ f(δ)(1 − e^{−γz(δ−p)})/(γz), the optimal offset and the
//! quadratic approximation of H used by the Riccati system.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ModelParams;

/// Quotes below this offset are clamped; reaching it signals mis-scaled inputs.
pub const QUOTE_FLOOR: f64 = -100.0;

const MAX_ITER: usize = 200;

/// f(δ) = 1 / (1 + e^{α + βδ}).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FillCurve {
    pub alpha: f64,
    pub beta: f64,
}

impl FillCurve {
    pub fn from_params(params: &ModelParams) -> Self {
        FillCurve {
            alpha: params.alpha,
            beta: params.beta,
        }
    }

    #[inline]
    pub fn prob(&self, delta: f64) -> f64 {
        1.0 / (1.0 + (self.alpha + self.beta * delta).exp())
    }

    /// f^{-1}(y) for y in (0, 1).
    pub fn inverse(&self, y: f64) -> f64 {
        (((1.0 - y) / y).ln() - self.alpha) / self.beta
    }

    /// The offset at which the fill probability is one half.
    pub fn midpoint(&self) -> f64 {
        -self.alpha / self.beta
    }
}

pub fn fill_probability(delta: f64, params: &ModelParams) -> f64 {
    FillCurve::from_params(params).prob(delta)
}

/// ln(1 + e^x) without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Maximiser of the single-quote problem and the envelope quantities at it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuoteOptimum {
    /// Optimal offset δ*, bp.
    pub delta: f64,
    /// H(z, p).
    pub value: f64,
    /// ∂_p H(z, p) = −f(δ*) e^{−γz(δ*−p)}.
    pub slope: f64,
    /// dδ*/dp, in (0, 1).
    pub delta_slope: f64,
}

/// Solves the first-order condition of the quote problem.
///
/// Writing u = γz(δ − p), the condition reduces to
/// g(δ) = ln(1 − f(δ)) + ln(e^u − 1) − ln(γz/β) = 0, where g is increasing
/// and concave on (p, ∞) with g → −∞ at δ = p, so the root is unique.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuoteSolver {
    pub fill: FillCurve,
    pub gamma: f64,
}

impl QuoteSolver {
    pub fn new(params: &ModelParams) -> Self {
        QuoteSolver {
            fill: FillCurve::from_params(params),
            gamma: params.gamma,
        }
    }

    #[inline]
    fn foc(&self, gz: f64, p: f64, delta: f64) -> (f64, f64) {
        let a = self.fill.alpha + self.fill.beta * delta;
        let u = gz * (delta - p);
        let one_minus_eu = -(-u).exp_m1();
        let g = -softplus(-a) + u + one_minus_eu.ln() - (gz / self.fill.beta).ln();
        let f = 1.0 / (1.0 + a.exp());
        let dg = self.fill.beta * f + gz / one_minus_eu;
        (g, dg)
    }

    fn objective(&self, gz: f64, p: f64, delta: f64) -> f64 {
        self.fill.prob(delta) * (-(-gz * (delta - p)).exp_m1()) / gz
    }

    pub fn optimum(&self, z: f64, p: f64) -> Result<QuoteOptimum> {
        let gz = self.gamma * z;
        if !(gz > 0.0 && gz.is_finite() && p.is_finite()) {
            return Err(Error::NonConvergence { z, p });
        }
        let delta = self
            .root(gz, p)
            .or_else(|| self.golden(gz, p))
            .ok_or(Error::NonConvergence { z, p })?;
        Ok(self.envelope(gz, p, delta))
    }

    fn envelope(&self, gz: f64, p: f64, delta: f64) -> QuoteOptimum {
        let f = self.fill.prob(delta);
        let u = gz * (delta - p);
        let decay = (-u).exp();
        let value = f * (-(-u).exp_m1()) / gz;
        let slope = -f * decay;
        let gu = gz / -(-u).exp_m1();
        let delta_slope = gu / (self.fill.beta * f + gu);
        QuoteOptimum {
            delta,
            value,
            slope,
            delta_slope,
        }
    }

    /// Safeguarded Newton iteration on a bracket (p, hi] grown until g(hi) > 0.
    fn root(&self, gz: f64, p: f64) -> Option<f64> {
        let width = 1.0 / self.fill.beta;
        let mut lo = p;
        let mut hi = p + width;
        let mut grow = 0;
        loop {
            let (g, _) = self.foc(gz, p, hi);
            if !g.is_finite() {
                return None;
            }
            if g > 0.0 {
                break;
            }
            lo = hi;
            hi = p + 2.0 * (hi - p);
            grow += 1;
            if grow > 60 {
                return None;
            }
        }
        let mut x = hi;
        for _ in 0..MAX_ITER {
            let (g, dg) = self.foc(gz, p, x);
            if !(g.is_finite() && dg.is_finite()) {
                return None;
            }
            if g == 0.0 {
                return Some(x);
            }
            if g < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let newton = x - g / dg;
            let next = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let step = (next - x).abs();
            x = next;
            if step <= 1e-14 * x.abs().max(1.0) || hi - lo <= 1e-14 * x.abs().max(1.0) {
                return Some(x);
            }
        }
        None
    }

    fn golden(&self, gz: f64, p: f64) -> Option<f64> {
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut a = p;
        let mut b = p.max(self.fill.midpoint()) + 50.0 / self.fill.beta + 50.0 / gz.min(1e6);
        let mut c = b - inv_phi * (b - a);
        let mut d = a + inv_phi * (b - a);
        for _ in 0..MAX_ITER {
            if self.objective(gz, p, c) > self.objective(gz, p, d) {
                b = d;
            } else {
                a = c;
            }
            c = b - inv_phi * (b - a);
            d = a + inv_phi * (b - a);
            if (b - a).abs() <= 1e-12 * a.abs().max(1.0) {
                break;
            }
        }
        let x = 0.5 * (a + b);
        x.is_finite().then_some(x)
    }
}

/// H(z, p), bp.
pub fn quote_hamiltonian(z: f64, p: f64, params: &ModelParams) -> Result<f64> {
    QuoteSolver::new(params).optimum(z, p).map(|o| o.value)
}

/// δ̄(z, p) = f^{-1}(γz H(z,p) − ∂_p H(z,p)), the maximiser of the quote problem.
pub fn optimal_offset(z: f64, p: f64, params: &ModelParams) -> Result<f64> {
    let solver = QuoteSolver::new(params);
    let opt = solver.optimum(z, p)?;
    debug_assert!({
        let target = params.gamma * z * opt.value - opt.slope;
        (solver.fill.prob(opt.delta) - target).abs() <= 1e-8
    });
    Ok(opt.delta)
}

/// Ȟ(p) = a0 + a1·p + ½·a2·p².
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadHamiltonian {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    /// Representative size the fit was taken at, oz.
    pub fit_size: f64,
}

impl QuadHamiltonian {
    pub fn eval(&self, p: f64) -> f64 {
        self.a0 + self.a1 * p + 0.5 * self.a2 * p * p
    }

    pub fn prime(&self, p: f64) -> f64 {
        self.a1 + self.a2 * p
    }
}

/// Finite-difference step for the envelope slope.
const FIT_STEP: f64 = 1e-5;

/// Second-order Taylor fit of H(z0, ·) at p = 0.
pub fn fit_quadratic(params: &ModelParams, z0: f64) -> Result<QuadHamiltonian> {
    if !(z0 > 0.0 && z0.is_finite()) {
        return Err(Error::param("z0", "fit size must be positive"));
    }
    let solver = QuoteSolver::new(params);
    let at0 = solver.optimum(z0, 0.0)?;
    let up = solver.optimum(z0, FIT_STEP)?;
    let down = solver.optimum(z0, -FIT_STEP)?;
    let a2 = (up.slope - down.slope) / (2.0 * FIT_STEP);
    if !(a2 > 0.0 && a2.is_finite()) {
        return Err(Error::NonConvexFit { a2 });
    }
    Ok(QuadHamiltonian {
        a0: at0.value,
        a1: at0.slope,
        a2,
        fit_size: z0,
    })
}

/// Fit at the smallest ladder size.
pub fn fit_default(params: &ModelParams) -> Result<QuadHamiltonian> {
    fit_quadratic(params, params.ladder[0])
}

/// Cubic Hermite tables of δ̄(z, ·) for every ladder size, built from exact
/// solves and their implicit derivatives; queries outside the tabulated
/// range fall back to the exact solver.
#[derive(Debug, Clone)]
pub struct OffsetTable {
    solver: QuoteSolver,
    sizes: Vec<f64>,
    p_min: f64,
    step: f64,
    nodes: Vec<Vec<(f64, f64)>>,
}

impl OffsetTable {
    pub fn new(params: &ModelParams, p_min: f64, p_max: f64, step: f64) -> Result<Self> {
        if !(p_max > p_min && step > 0.0) {
            return Err(Error::Config("offset table range is empty".into()));
        }
        let solver = QuoteSolver::new(params);
        let n = ((p_max - p_min) / step).ceil() as usize + 1;
        let mut nodes = Vec::with_capacity(params.ladder.len());
        for &z in &params.ladder {
            let row = (0..n)
                .map(|i| {
                    solver
                        .optimum(z, p_min + step * i as f64)
                        .map(|o| (o.delta, o.delta_slope))
                })
                .collect::<Result<Vec<_>>>()?;
            nodes.push(row);
        }
        Ok(OffsetTable {
            solver,
            sizes: params.ladder.clone(),
            p_min,
            step,
            nodes,
        })
    }

    /// Default table: p in [−50, 50] bp at 0.005 bp.
    pub fn for_params(params: &ModelParams) -> Result<Self> {
        Self::new(params, -50.0, 50.0, 0.005)
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    #[inline]
    pub fn offset(&self, size_index: usize, p: f64) -> Result<f64> {
        let row = &self.nodes[size_index];
        let s = (p - self.p_min) / self.step;
        if s >= 0.0 && s < (row.len() - 1) as f64 {
            let i = s as usize;
            let t = s - i as f64;
            let (y0, m0) = row[i];
            let (y1, m1) = row[i + 1];
            let t2 = t * t;
            let t3 = t2 * t;
            let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
            let h10 = t3 - 2.0 * t2 + t;
            let h01 = -2.0 * t3 + 3.0 * t2;
            let h11 = t3 - t2;
            Ok(h00 * y0 + h10 * self.step * m0 + h01 * y1 + h11 * self.step * m1)
        } else {
            self.solver
                .optimum(self.sizes[size_index], p)
                .map(|o| o.delta)
        }
    }
}
