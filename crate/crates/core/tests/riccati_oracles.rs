mod common;

use common::{euler_solve, max_abs, nested_params, pde_relative_residual};
use efpmm::riccati::DEFAULT_DT;
use efpmm::{build_system, fit_quadratic, solve, solve_model, ModelParams, SolveOptions};
use nalgebra::Vector4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn zero_source_gives_zero_solution() {
    let quad = fit_quadratic(&ModelParams::gold(), 100.0).unwrap();
    let p = ModelParams {
        gamma: 0.0,
        k_e: 0.0,
        k_s: 0.0,
        k_f: 0.0,
        ..ModelParams::gold()
    };
    let va = solve(&build_system(&p, &quad), p.horizon, DEFAULT_DT).unwrap();
    for i in 0..va.grid().len() {
        let (a, b) = va.node(i);
        assert!(a.iter().all(|&v| v == 0.0));
        assert!(b.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn rk4_matches_fine_euler() {
    for p in [ModelParams::gold(), nested_params()] {
        let quad = fit_quadratic(&p, p.ladder[0]).unwrap();
        let sys = build_system(&p, &quad);
        let va = solve(&sys, p.horizon, DEFAULT_DT).unwrap();
        let (a_rk, b_rk) = va.at(0.0);
        let (a_eu, b_eu) = euler_solve(&sys, p.horizon, 1e-7);
        let rel = max_abs(&(a_rk - a_eu)) / max_abs(&a_rk);
        assert!(rel <= 1e-6, "A(0) RK4 vs Euler relative {rel:e}");
        // B carries a first-order Euler error of ~1e-6; Richardson removes it
        let (_, b_half) = euler_solve(&sys, p.horizon, 5e-8);
        let b_rich = b_half * 2.0 - b_eu;
        let scale = b_rk.amax().max(1.0);
        assert!((b_rk - b_rich).amax() <= 1e-9 * scale, "B(0) diff {}", b_rk - b_rich);
    }
}

#[test]
fn solution_satisfies_quadratic_pde() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for p in [ModelParams::gold(), nested_params()] {
        let quad = fit_quadratic(&p, p.ladder[0]).unwrap();
        // resolves the terminal boundary layer, a few seconds wide
        let va = solve_model(&p, &SolveOptions { dt_max: 2.5e-6, ..SolveOptions::default() }).unwrap();
        let n = va.grid().len();
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let i = rng.random_range(2..n - 2);
            let x = Vector4::new(
                rng.random_range(-5000.0..5000.0),
                rng.random_range(-5000.0..5000.0),
                rng.random_range(-10.0..10.0),
                rng.random_range(-5.0..5.0),
            );
            worst = worst.max(pde_relative_residual(&va, &p, &quad, i, &x));
        }
        assert!(worst <= 1e-6, "PDE residual {worst:e}");
    }
}

#[test]
fn stored_matrices_symmetric() {
    for p in [ModelParams::gold(), nested_params()] {
        let va = solve_model(&p, &SolveOptions::default()).unwrap();
        for i in 0..va.grid().len() {
            let (a, _) = va.node(i);
            assert!((a - a.transpose()).amax() <= 1e-10);
        }
        assert!(va.max_step_asymmetry() < 1e-12);
    }
}

#[test]
fn step_halving_is_fourth_order() {
    let p = nested_params();
    let quad = fit_quadratic(&p, p.ladder[0]).unwrap();
    let sys = build_system(&p, &quad);
    let a0 = |dt: f64| solve(&sys, p.horizon, dt).unwrap().at(0.0).0;
    // differences between dt and dt/2 at the coarse and fine end of a decade
    let coarse = max_abs(&(a0(1e-4) - a0(5e-5)));
    let fine = max_abs(&(a0(1e-5) - a0(5e-6)));
    assert!(coarse / fine >= 8.0, "ratio {}", coarse / fine);
}

#[test]
fn terminal_penalty_converges_at_default_step() {
    let p = common::penalized_params();
    let quad = fit_quadratic(&p, p.ladder[0]).unwrap();
    let sys = build_system(&p, &quad);
    let a = solve(&sys, p.horizon, DEFAULT_DT).unwrap().at(0.0).0;
    let half = solve(&sys, p.horizon, DEFAULT_DT / 2.0).unwrap().at(0.0).0;
    assert!(max_abs(&(a - half)) <= 1e-6 * max_abs(&a));
    let (a_t, _) = solve(&sys, p.horizon, DEFAULT_DT).unwrap().at(p.horizon);
    assert_eq!(a_t[(0, 0)], p.k_s);
    assert_eq!(a_t[(1, 1)], p.k_f);
}

#[test]
fn larger_risk_aversion_raises_inventory_penalty() {
    let lo = solve_model(&ModelParams { gamma: 1e-4, ..ModelParams::gold() }, &SolveOptions::default()).unwrap();
    let hi = solve_model(&ModelParams { gamma: 1e-3, ..ModelParams::gold() }, &SolveOptions::default()).unwrap();
    assert!(hi.at(0.0).0[(0, 0)] > lo.at(0.0).0[(0, 0)]);
}

/// A(0) at T = 1 h and T = 2 h should agree to 1e-6 relative. The EFP block
/// relaxes on the 1/(2k_E) scale, so this does not hold for the benchmark set.
#[test]
#[ignore = "A33 relaxes on a 1/(2k_E) ≈ 1.5 h scale; see the acceptance report"]
fn stationary_in_horizon() {
    let p = ModelParams::gold();
    let one = solve_model(&p, &SolveOptions::default()).unwrap().at(0.0).0;
    let two = solve_model(&ModelParams { horizon: 2.0 * p.horizon, ..p.clone() }, &SolveOptions::default())
        .unwrap()
        .at(0.0)
        .0;
    for k in 0..16 {
        let (a, b) = (one[k], two[k]);
        if a != 0.0 || b != 0.0 {
            let rel = (a - b).abs() / a.abs().max(b.abs());
            assert!(rel < 1e-6, "entry {k}: {a} vs {b} ({rel:e})");
        }
    }
}
