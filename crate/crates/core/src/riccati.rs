//! Quadratic value approximation θ̌(t, x) = −xᵀA(t)x − xᵀB(t), x = (q_S, q_F, E, D).
//!
//! A and B solve the terminal-value system
//!
//! ```text
//! A' = A·M·A + A·U + Uᵀ·A + R,   A(T) = diag(K_S, K_F, 0, 0)
//! B' = A·M·B + A·V + Uᵀ·B,       B(T) = 0
//! ```
//!
//! integrated backward with fixed-step RK4. The constant x-independent part
//! of θ̌ does not enter the controls and is not computed.
//!
//! Entry-wise expansion of the block matrices (Σ indexed S, E, D):
//!
//! ```text
//! M = [ 4a2·Σzλ(z) + 1/η_S, 0, 0, 0 ; 0, 1/η_F, 0, 0 ; 0, 0, −2γΣ_EE, −2γΣ_ED ; 0, 0, −2γΣ_DE, −2γΣ_DD ]
//! U rows 1-2 = 0
//! U row 3    = [ γΣ_ES, γ(Σ_ES + Σ_EE), k_E, −k_E ]
//! U row 4    = [ γΣ_DS, γ(Σ_DS + Σ_DE), 0,   k_D  ]
//! R = −γ/2 · [ Σ_SS, Σ_SS + Σ_SE ; Σ_SS + Σ_ES, Σ_SS + Σ_SE + Σ_ES + Σ_EE ] (top-left 2×2)
//!     − k_E/2 · (e2 e3ᵀ + e3 e2ᵀ − e2 e4ᵀ − e4 e2ᵀ)
//! V = (0, 0, 0, −2 k_D D̄)
//! ```

use std::io::Write;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter;
use crate::flow::{self, QuadHamiltonian};
use crate::params::{covariance_matrix, Covariance, ModelParams};

/// Default integration step, day (about 0.86 s).
pub const DEFAULT_DT: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSystem {
    pub m_a: Matrix4<f64>,
    pub u_a: Matrix4<f64>,
    pub r_a: Matrix4<f64>,
    pub v_b: Vector4<f64>,
    pub terminal_a: Matrix4<f64>,
    pub terminal_b: Vector4<f64>,
    pub futures_enabled: bool,
}

/// Assemble the system with the full-information covariance and both hedging venues.
pub fn build_system(params: &ModelParams, quad: &QuadHamiltonian) -> RiccatiSystem {
    build_system_with(params, quad, &covariance_matrix(params), true)
}

/// Assemble the system for an arbitrary (S, E, D) covariance. With
/// `futures_enabled = false` the futures execution term is dropped, so
/// q_F stays at zero and the (q_S, E, D) block decouples.
pub fn build_system_with(
    params: &ModelParams,
    quad: &QuadHamiltonian,
    cov: &Covariance,
    futures_enabled: bool,
) -> RiccatiSystem {
    let s = &cov.sigma;
    let g = params.gamma;
    let (ss, se) = (s[(0, 0)], s[(0, 1)]);
    let (es, ee, ed) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
    let (ds, de, dd) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);

    let mut m_a = Matrix4::zeros();
    m_a[(0, 0)] = 4.0 * quad.a2 * params.size_weighted_intensity() + 1.0 / params.eta_s;
    if futures_enabled {
        m_a[(1, 1)] = 1.0 / params.eta_f;
    }
    m_a[(2, 2)] = -2.0 * g * ee;
    m_a[(2, 3)] = -2.0 * g * ed;
    m_a[(3, 2)] = -2.0 * g * de;
    m_a[(3, 3)] = -2.0 * g * dd;

    let mut u_a = Matrix4::zeros();
    u_a[(2, 0)] = g * es;
    u_a[(2, 1)] = g * (es + ee);
    u_a[(2, 2)] = params.k_e;
    u_a[(2, 3)] = -params.k_e;
    u_a[(3, 0)] = g * ds;
    u_a[(3, 1)] = g * (ds + de);
    u_a[(3, 3)] = params.k_d;

    let mut r_a = Matrix4::zeros();
    r_a[(0, 0)] = -0.5 * g * ss;
    r_a[(0, 1)] = -0.5 * g * (ss + se);
    r_a[(1, 0)] = -0.5 * g * (ss + es);
    r_a[(1, 1)] = -0.5 * g * (ss + se + es + ee);
    let half_ke = 0.5 * params.k_e;
    r_a[(1, 2)] -= half_ke;
    r_a[(2, 1)] -= half_ke;
    r_a[(1, 3)] += half_ke;
    r_a[(3, 1)] += half_ke;

    let v_b = Vector4::new(0.0, 0.0, 0.0, -2.0 * params.k_d * params.d_bar);

    let terminal_a = Matrix4::from_diagonal(&Vector4::new(params.k_s, params.k_f, 0.0, 0.0));

    RiccatiSystem {
        m_a,
        u_a,
        r_a,
        v_b,
        terminal_a,
        terminal_b: Vector4::zeros(),
        futures_enabled,
    }
}

impl RiccatiSystem {
    /// Time derivatives (A', B') at the given point.
    #[inline]
    pub fn rhs(&self, a: &Matrix4<f64>, b: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
        let am = a * self.m_a;
        let da = am * a + a * self.u_a + self.u_a.transpose() * a + self.r_a;
        let db = am * b + a * self.v_b + self.u_a.transpose() * b;
        (da, db)
    }
}

fn asymmetry(a: &Matrix4<f64>) -> f64 {
    (a - a.transpose()).abs().max()
}

fn symmetrize(a: &Matrix4<f64>) -> Matrix4<f64> {
    (a + a.transpose()) * 0.5
}

/// Solution of the Riccati system on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueApprox {
    step: f64,
    grid: Vec<f64>,
    a: Vec<Matrix4<f64>>,
    b: Vec<Vector4<f64>>,
    futures_enabled: bool,
    max_step_asymmetry: f64,
}

/// Integrate backward from `horizon` to 0 with RK4 at a fixed step ≤ `dt_max`.
pub fn solve(system: &RiccatiSystem, horizon: f64, dt_max: f64) -> Result<ValueApprox> {
    if !(dt_max > 0.0 && dt_max.is_finite()) {
        return Err(Error::Config(format!("dt_max must be positive, got {dt_max}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
    }
    let n = (horizon / dt_max).ceil().max(1.0) as usize;
    let h = horizon / n as f64;

    let mut a_rev = Vec::with_capacity(n + 1);
    let mut b_rev = Vec::with_capacity(n + 1);
    let mut a = system.terminal_a;
    let mut b = system.terminal_b;
    a_rev.push(a);
    b_rev.push(b);
    let mut max_asym: f64 = 0.0;

    for k in 0..n {
        // dA/dτ = −A' with τ = T − t
        let (k1a, k1b) = system.rhs(&a, &b);
        let (k2a, k2b) = system.rhs(&(a - k1a * (0.5 * h)), &(b - k1b * (0.5 * h)));
        let (k3a, k3b) = system.rhs(&(a - k2a * (0.5 * h)), &(b - k2b * (0.5 * h)));
        let (k4a, k4b) = system.rhs(&(a - k3a * h), &(b - k3b * h));
        let next_a = a - (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (h / 6.0);
        let next_b = b - (k1b + k2b * 2.0 + k3b * 2.0 + k4b) * (h / 6.0);
        if !(next_a.iter().all(|v| v.is_finite()) && next_b.iter().all(|v| v.is_finite())) {
            let t = horizon - (k + 1) as f64 * h;
            return Err(Error::BlowUp { t });
        }
        max_asym = max_asym.max(asymmetry(&next_a));
        a = symmetrize(&next_a);
        b = next_b;
        a_rev.push(a);
        b_rev.push(b);
    }
    a_rev.reverse();
    b_rev.reverse();
    let mut grid: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
    grid[n] = horizon;
    Ok(ValueApprox {
        step: h,
        grid,
        a: a_rev,
        b: b_rev,
        futures_enabled: system.futures_enabled,
        max_step_asymmetry: max_asym,
    })
}

impl ValueApprox {
    pub fn horizon(&self) -> f64 {
        *self.grid.last().expect("non-empty grid")
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn node(&self, i: usize) -> (&Matrix4<f64>, &Vector4<f64>) {
        (&self.a[i], &self.b[i])
    }

    pub fn futures_enabled(&self) -> bool {
        self.futures_enabled
    }

    /// Largest asymmetry of A produced by a single step before symmetrisation.
    pub fn max_step_asymmetry(&self) -> f64 {
        self.max_step_asymmetry
    }

    /// (A(t), B(t)) by linear interpolation; t is clamped to [0, T].
    pub fn at(&self, t: f64) -> (Matrix4<f64>, Vector4<f64>) {
        let last = self.grid.len() - 1;
        let s = (t / self.step).clamp(0.0, last as f64);
        let i = (s as usize).min(last.saturating_sub(1));
        let w = s - i as f64;
        if last == 0 || w == 0.0 {
            return (self.a[i], self.b[i]);
        }
        (
            self.a[i] * (1.0 - w) + self.a[i + 1] * w,
            self.b[i] * (1.0 - w) + self.b[i + 1] * w,
        )
    }

    /// θ̌(t, x) without the x-independent term.
    pub fn theta(&self, t: f64, x: &Vector4<f64>) -> f64 {
        let (a, b) = self.at(t);
        -(x.transpose() * a * x)[0] - x.dot(&b)
    }

    /// Dump (t, 10 upper-triangular A entries, 4 B entries) as CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for ((t, a), b) in self.grid.iter().zip(&self.a).zip(&self.b) {
            let mut row = Vec::with_capacity(15);
            row.push(format!("{t:.10e}"));
            for i in 0..4 {
                for j in i..4 {
                    row.push(format!("{:.17e}", a[(i, j)]));
                }
            }
            for i in 0..4 {
                row.push(format!("{:.17e}", b[i]));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub const CSV_HEADER: [&str; 15] = [
    "t", "A11", "A12", "A13", "A14", "A22", "A23", "A24", "A33", "A34", "A44", "B1", "B2", "B3",
    "B4",
];

/// θ̌(t, x) = −xᵀA(t)x − xᵀB(t).
pub fn theta_check(va: &ValueApprox, t: f64, x: &Vector4<f64>) -> f64 {
    va.theta(t, x)
}

/// Which mean level the controls are computed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Information {
    /// D is observed.
    #[default]
    Oracle,
    /// D is replaced by its filtered estimate; σ_D and R are replaced by
    /// their effective counterparts.
    Filtered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    pub dt_max: f64,
    /// Size used for the quadratic fit of H; smallest ladder size when absent.
    pub fit_size: Option<f64>,
    pub futures_enabled: bool,
    pub information: Information,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            dt_max: DEFAULT_DT,
            fit_size: None,
            futures_enabled: true,
            information: Information::Oracle,
        }
    }
}

/// Fit Ȟ, assemble the system and integrate it over the parameters' horizon.
pub fn solve_model(params: &ModelParams, opts: &SolveOptions) -> Result<ValueApprox> {
    let quad = flow::fit_quadratic(params, opts.fit_size.unwrap_or(params.ladder[0]))?;
    let cov = match opts.information {
        Information::Oracle => covariance_matrix(params),
        Information::Filtered => filter::filtered_covariance(params),
    };
    let system = build_system_with(params, &quad, &cov, opts.futures_enabled);
    solve(&system, params.horizon, opts.dt_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::fit_default;

    fn gold_system() -> (ModelParams, RiccatiSystem) {
        let p = ModelParams::gold();
        let q = fit_default(&p).unwrap();
        let sys = build_system(&p, &q);
        (p, sys)
    }

    #[test]
    fn assembled_matrices_symmetric() {
        let (_, sys) = gold_system();
        assert_eq!(sys.m_a, sys.m_a.transpose());
        assert_eq!(sys.r_a, sys.r_a.transpose());
        let p = ModelParams {
            rho: 0.4,
            sigma_d: 2.0,
            k_d: 0.2,
            ..ModelParams::gold()
        };
        let sys = build_system(&p, &fit_default(&p).unwrap());
        assert_eq!(sys.m_a, sys.m_a.transpose());
        assert_eq!(sys.r_a, sys.r_a.transpose());
    }

    #[test]
    fn terminal_slice_exact() {
        let p = ModelParams {
            k_s: 1e-3,
            k_f: 2e-3,
            ..ModelParams::gold()
        };
        let sys = build_system(&p, &fit_default(&p).unwrap());
        let va = solve(&sys, p.horizon, DEFAULT_DT).unwrap();
        let (a, b) = va.node(va.grid().len() - 1);
        assert_eq!(*a, Matrix4::from_diagonal(&Vector4::new(1e-3, 2e-3, 0.0, 0.0)));
        assert_eq!(*b, Vector4::zeros());
        assert_eq!(va.horizon(), p.horizon);
        // θ̌(T, q, 0, 0, 0) = −K_S q²
        let x = Vector4::new(300.0, 0.0, 0.0, 0.0);
        assert!((theta_check(&va, p.horizon, &x) + 1e-3 * 9e4).abs() < 1e-12);
    }

    #[test]
    fn zero_source_stays_zero() {
        let p = ModelParams {
            gamma: 1e-300,
            k_e: 1e-300,
            ..ModelParams::gold()
        };
        let quad = QuadHamiltonian {
            a0: 0.0,
            a1: 0.0,
            a2: 1.0,
            fit_size: 100.0,
        };
        let sys = build_system(&p, &quad);
        assert!(sys.r_a.abs().max() < 1e-290);
        assert_eq!(sys.v_b, Vector4::zeros());
        let va = solve(&sys, p.horizon, 1e-4).unwrap();
        for i in 0..va.grid().len() {
            let (a, b) = va.node(i);
            assert!(a.abs().max() < 1e-250);
            assert_eq!(*b, Vector4::zeros());
        }
    }

    #[test]
    fn theta_structure() {
        let (p, sys) = gold_system();
        let va = solve(&sys, p.horizon, DEFAULT_DT).unwrap();
        assert_eq!(va.theta(0.01, &Vector4::zeros()), 0.0);
        let x = Vector4::new(400.0, -250.0, 1.5, 0.0);
        let (a, b) = va.at(0.01);
        let quad = -(x.transpose() * a * x)[0];
        let lin = -x.dot(&b);
        let t1 = va.theta(0.01, &x);
        let t2 = va.theta(0.01, &(x * 2.0));
        assert!((t2 - 4.0 * t1 - (2.0 - 4.0) * lin).abs() <= 1e-9 * quad.abs());
    }

    #[test]
    fn interpolation_hits_nodes() {
        let (p, sys) = gold_system();
        let va = solve(&sys, p.horizon, 1e-4).unwrap();
        let i = 17;
        let (a, b) = va.at(va.grid()[i]);
        assert!((a - va.node(i).0).abs().max() <= 1e-15 * a.abs().max());
        assert!((b - va.node(i).1).abs().max() <= 1e-15);
        let mid = 0.5 * (va.grid()[i] + va.grid()[i + 1]);
        let (am, _) = va.at(mid);
        let want = (va.node(i).0 + va.node(i + 1).0) * 0.5;
        assert!((am - want).abs().max() < 1e-12 * want.abs().max());
    }

    #[test]
    fn rejects_bad_step() {
        let (p, sys) = gold_system();
        assert!(solve(&sys, p.horizon, 0.0).is_err());
    }

    #[test]
    fn blow_up_reported() {
        let (p, mut sys) = gold_system();
        sys.m_a = -sys.m_a * 1e6;
        sys.terminal_a = Matrix4::identity();
        let err = solve(&sys, p.horizon, 1e-3).unwrap_err();
        assert!(matches!(err, Error::BlowUp { .. }), "{err}");
        assert!(err.is_numerical());
    }

    #[test]
    fn csv_dump_shape() {
        let (p, sys) = gold_system();
        let va = solve(&sys, p.horizon, DEFAULT_DT).unwrap();
        let mut buf = Vec::new();
        va.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(lines.count(), va.grid().len());
    }

    #[test]
    fn futures_disabled_block_decouples() {
        let p = ModelParams::gold();
        let q = fit_default(&p).unwrap();
        let on = build_system(&p, &q);
        let off = build_system_with(&p, &q, &covariance_matrix(&p), false);
        assert_eq!(off.m_a[(1, 1)], 0.0);
        assert!(on.m_a[(1, 1)] > 0.0);
        assert!(!off.futures_enabled);
    }
}
