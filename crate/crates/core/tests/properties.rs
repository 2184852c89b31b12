//! Randomised structural properties of the policy, the Riccati field and the filter.

use std::sync::{Arc, OnceLock};

use efpmm::filter::{asymptotic_variance, filtered_correlation};
use efpmm::policy::{Zone, ZoneSlice};
use efpmm::{
    build_system, fit_quadratic, solve_model, state_vec, FilterState, GainMode, MeanLevelFilter, ModelParams, Policy,
    SolveOptions, Venue,
};
use nalgebra::{Matrix4, SymmetricEigen, Vector4};
use proptest::prelude::*;

const GAMMAS: [f64; 3] = [1e-4, 3e-4, 1e-3];

fn policy(gamma_index: usize) -> &'static Policy {
    static CACHE: [OnceLock<Policy>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    CACHE[gamma_index].get_or_init(|| {
        let p = ModelParams {
            gamma: GAMMAS[gamma_index],
            ..ModelParams::gold()
        };
        let va = solve_model(&p, &SolveOptions::default()).unwrap();
        Policy::new(&p, Arc::new(va))
    })
}

fn horizon() -> f64 {
    ModelParams::gold().horizon
}

fn nested() -> ModelParams {
    ModelParams {
        k_d: 0.2,
        sigma_d: 2.0,
        d_bar: 0.5,
        ..ModelParams::gold()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quotes_and_rates_antisymmetric(
        g in 0usize..3,
        frac in 0.0f64..0.99,
        q_s in -5e3f64..5e3,
        q_f in -5e3f64..5e3,
        e in -4.0f64..4.0,
    ) {
        let pol = policy(g);
        let t = frac * horizon();
        let x = state_vec(q_s, q_f, e, 0.0);
        let d1 = pol.decide(t, &x).unwrap();
        let d2 = pol.decide(t, &(-x)).unwrap();
        for i in 0..d1.bid_offsets.len() {
            prop_assert!((d1.bid_offsets[i] - d2.ask_offsets[i]).abs() < 1e-9);
            prop_assert!((d1.ask_offsets[i] - d2.bid_offsets[i]).abs() < 1e-9);
        }
        prop_assert!((d1.v_s + d2.v_s).abs() <= 1e-9 * (1.0 + d1.v_s.abs()));
        prop_assert!((d1.v_f + d2.v_f).abs() <= 1e-9 * (1.0 + d1.v_f.abs()));
    }

    #[test]
    fn quotes_monotone_in_spot_inventory(
        g in 0usize..3,
        frac in 0.0f64..0.99,
        q_s in -5e3f64..5e3,
        step in 1.0f64..2e3,
        q_f in -3e3f64..3e3,
        e in -3.0f64..3.0,
    ) {
        let pol = policy(g);
        let t = frac * horizon();
        let lo = pol.decide(t, &state_vec(q_s, q_f, e, 0.0)).unwrap();
        let hi = pol.decide(t, &state_vec(q_s + step, q_f, e, 0.0)).unwrap();
        for i in 0..lo.bid_offsets.len() {
            prop_assert!(hi.bid_offsets[i] >= lo.bid_offsets[i] - 1e-12);
            prop_assert!(hi.ask_offsets[i] <= lo.ask_offsets[i] + 1e-12);
        }
        prop_assert!(hi.v_s <= lo.v_s);
    }

    #[test]
    fn rates_follow_execution_marginal(
        g in 0usize..3,
        frac in 0.0f64..0.99,
        q_s in -5e3f64..5e3,
        q_f in -5e3f64..5e3,
        e in -4.0f64..4.0,
    ) {
        let pol = policy(g);
        let t = frac * horizon();
        let x = state_vec(q_s, q_f, e, 0.0);
        let d = pol.decide(t, &x).unwrap();
        let (a, b) = pol.value_approx().at(t);
        let grad = -(a * x * 2.0 + b);
        prop_assert_eq!(d.v_s, pol.cost(Venue::Spot).hamiltonian_prime(grad[0]));
        prop_assert_eq!(d.v_f, pol.cost(Venue::Futures).hamiltonian_prime(grad[1]));
    }

    #[test]
    fn no_execution_band_is_exactly_the_idle_set(
        g in 0usize..3,
        q_f in -2e3f64..2e3,
        eps in -3.0f64..3.0,
        u in 0.0f64..1.0,
        outside in 1.0f64..500.0,
    ) {
        let pol = policy(g);
        let sigma_e = pol.params().sigma_e;
        let slice = ZoneSlice::inventory_vs_deviation(q_f, 0.0, sigma_e);
        for venue in [Venue::Spot, Venue::Futures] {
            let Zone::Slab { buy, sell, .. } = pol.no_execution_zone(0.0, venue, &slice) else {
                return Err(TestCaseError::fail("degenerate zone at gold parameters"));
            };
            let (lo, hi) = (buy.at(eps).min(sell.at(eps)), buy.at(eps).max(sell.at(eps)));
            prop_assert!(lo < hi);
            let rate = |q: f64| {
                let d = pol.decide(0.0, &slice.point(q, eps)).unwrap();
                match venue {
                    Venue::Spot => d.v_s,
                    Venue::Futures => d.v_f,
                }
            };
            let inside = lo + u * (hi - lo);
            prop_assert_eq!(rate(inside), 0.0);
            // one side buys, the other sells
            let (below, above) = (rate(lo - outside), rate(hi + outside));
            prop_assert!(below != 0.0 && above != 0.0);
            prop_assert!(below.signum() == -above.signum());
        }
    }

    #[test]
    fn riccati_field_preserves_symmetry(
        entries in proptest::collection::vec(-1e-3f64..1e-3, 10),
        b in proptest::collection::vec(-1.0f64..1.0, 4),
        gamma in 1e-4f64..1e-3,
    ) {
        let p = ModelParams { gamma, ..nested() };
        let quad = fit_quadratic(&p, p.ladder[0]).unwrap();
        let sys = build_system(&p, &quad);
        let mut a = Matrix4::zeros();
        let mut k = 0;
        for i in 0..4 {
            for j in i..4 {
                a[(i, j)] = entries[k];
                a[(j, i)] = entries[k];
                k += 1;
            }
        }
        let (da, _) = sys.rhs(&a, &Vector4::from_column_slice(&b));
        let scale = da.abs().max().max(1e-300);
        prop_assert!((da - da.transpose()).abs().max() <= 1e-12 * scale);
    }

    #[test]
    fn filter_update_is_affine_in_increments(
        rho in -0.9f64..0.9,
        ds1 in -2.0f64..2.0, de1 in -2.0f64..2.0,
        ds2 in -2.0f64..2.0, de2 in -2.0f64..2.0,
        d_hat in -2.0f64..2.0,
        e in -3.0f64..3.0,
    ) {
        let p = ModelParams { rho, ..nested() };
        let f = MeanLevelFilter::new(&p, GainMode::Stationary);
        let fs = FilterState { d_hat, nu2: asymptotic_variance(&p) };
        let dt = 1e-4;
        let base = f.step(fs, 0.0, 0.0, e, dt).d_hat;
        let a = f.step(fs, ds1, de1, e, dt).d_hat - base;
        let b = f.step(fs, ds2, de2, e, dt).d_hat - base;
        let ab = f.step(fs, ds1 + ds2, de1 + de2, e, dt).d_hat - base;
        prop_assert!((ab - a - b).abs() < 1e-12 * (1.0 + a.abs() + b.abs()));
    }

    #[test]
    fn innovation_correlation_has_rank_two(rho in -0.99f64..0.99) {
        let c = filtered_correlation(rho);
        prop_assert!((c[(1, 2)] - (1.0 - rho * rho).sqrt()).abs() < 1e-15);
        prop_assert_eq!(c, c.transpose());
        let mut ev = SymmetricEigen::new(c).eigenvalues.as_slice().to_vec();
        ev.sort_by(f64::total_cmp);
        prop_assert!(ev[0].abs() < 1e-12, "{ev:?}");
        prop_assert!(ev[1] > 1e-6);
    }
}
