//! Steady states near the bifurcation at `a = 0.8`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vortbif_core::critical::solve_kappa_a;
use vortbif_core::linear::build_eigenfunction;
use vortbif_core::steady::{
    bifurcation_branches, jacobian, newton_solve, probe_with_radius, random_perturbation,
    steady_residual, uniqueness_probe, ContinuationConfig, ProbeOutcome, SteadyConfig,
};
use vortbif_core::{AspectRatio, SpectralField};

fn a08() -> AspectRatio {
    AspectRatio::for_bifurcation(0.8).unwrap()
}

fn kappa_a() -> f64 {
    solve_kappa_a(a08(), 1e-12).unwrap().kappa_a
}

/// The eigenfunction spans the kernel at `κ_a`, so the residual along it is quadratic.
#[test]
fn residual_along_eigenfunction_is_quadratic() {
    let k = kappa_a();
    let ef = build_eigenfunction(a08(), k, 1.0, 64).unwrap();
    let phi = ef.field.resized(2, 64).unwrap();
    let phi = phi.scaled(1.0 / phi.norm());
    let basic = SpectralField::basic(a08(), 2, 64).unwrap();
    let norms: Vec<f64> = [4e-3, 2e-3, 1e-3]
        .iter()
        .map(|&eps| {
            let mut f = basic.clone();
            f.axpy(eps, &phi);
            steady_residual(&f, k).unwrap().norm()
        })
        .collect();
    for w in norms.windows(2) {
        let ratio = w[0] / w[1];
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}, norms {norms:?}");
    }
}

#[test]
fn taylor_remainder_is_second_order() {
    let cfg = SteadyConfig::new(a08(), 3, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let base = {
        let mut f = cfg.basic();
        f.axpy(0.05, &random_perturbation(&cfg, &mut rng, 0.5));
        f
    };
    let h = random_perturbation(&cfg, &mut rng, 0.5);
    let kappa = 0.3;
    let r0 = steady_residual(&base, kappa).unwrap();
    let jac = jacobian(&base, kappa);
    let remainder = |t: f64| {
        let mut f = base.clone();
        f.axpy(t, &h);
        let r = steady_residual(&f, kappa).unwrap();
        let jh = &jac * nalgebra::DVector::from_column_slice(h.unknowns()) * t;
        let mut d = r.sub(&r0);
        let lin: Vec<f64> = d.unknowns().iter().zip(jh.iter()).map(|(x, y)| x - y).collect();
        d.set_unknowns(&lin);
        d.norm()
    };
    let (e1, e2) = (remainder(1e-2), remainder(5e-3));
    assert!((e1 / e2 - 4.0).abs() < 0.1, "{e1:e} {e2:e}");
}

#[test]
fn branch_is_a_supercritical_pitchfork() {
    let cfg = SteadyConfig::default_for(a08());
    let out = bifurcation_branches(&cfg, &ContinuationConfig::default()).unwrap();
    assert!((out.event.kappa - out.kappa_a).abs() < 1e-8, "event at {}", out.event.kappa);
    assert!(out.twin_is_symmetry_image, "twin deviation {}", out.twin_deviation);
    for branch in [&out.plus, &out.minus] {
        assert!(branch.terminated.is_none(), "{:?}", branch.terminated);
        assert!(branch.points.len() >= 11);
        for w in branch.points.windows(2) {
            assert!(w[1].kappa < w[0].kappa, "kappa must decrease along the branch");
            assert!(w[1].amplitude > w[0].amplitude);
        }
        for p in &branch.points {
            assert!(p.residual_norm < 1e-10, "residual {}", p.residual_norm);
        }
        // amplitude² ∝ κ_c − κ
        let slopes: Vec<f64> = branch.points[1..]
            .iter()
            .map(|p| p.amplitude * p.amplitude / (out.event.kappa - p.kappa))
            .collect();
        let (lo, hi) = slopes
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(l, h), &s| (l.min(s), h.max(s)));
        assert!(hi / lo < 1.05, "slopes {slopes:?}");
        assert!((slopes[0] - 0.655).abs() < 0.01, "slope {}", slopes[0]);
    }
}

#[test]
fn starts_in_the_ball_return_to_basic_state() {
    let cfg = SteadyConfig::default_for(a08());
    let report = uniqueness_probe(1.25, 50, 42, &cfg).unwrap();
    assert!(report.in_uniqueness_regime);
    assert_eq!(report.summary(), "50/50 converged to psi*");
    assert!(report.counterexamples.is_empty());
    for t in &report.trials {
        assert!(t.start_hessian_norm < 0.25 * 1.25 * 1.25);
    }
}

#[test]
fn large_starts_below_kappa_a_reach_the_nontrivial_state() {
    let cfg = SteadyConfig::default_for(a08());
    let kappa = 0.9 * kappa_a();
    let inside = uniqueness_probe(kappa, 10, 42, &cfg).unwrap();
    assert_eq!(inside.converged_to_basic, 10);
    let report = probe_with_radius(kappa, 20, 42, 60.0, &cfg).unwrap();
    assert!(!report.in_uniqueness_regime);
    let found: Vec<f64> = report
        .trials
        .iter()
        .filter(|t| t.outcome == ProbeOutcome::Nontrivial)
        .filter_map(|t| t.final_amplitude)
        .collect();
    assert!(!found.is_empty(), "{}", report.summary());
    for amp in &found {
        assert!((amp - 0.207_316_79).abs() < 1e-6, "amplitude {amp}");
    }
    let (_, start) = &report.counterexamples[0];
    let state = newton_solve(start, kappa, &cfg).unwrap();
    assert!(state.residual_norm < 1e-10);
    let twin = newton_solve(&state.field.shifted_half_period(), kappa, &cfg).unwrap();
    assert!((twin.amplitude - state.amplitude).abs() < 1e-9);
}

#[test]
fn probe_is_reproducible() {
    let cfg = SteadyConfig::new(a08(), 4, 12).unwrap();
    let r1 = probe_with_radius(0.5, 6, 9, 1.0, &cfg).unwrap();
    let r2 = probe_with_radius(0.5, 6, 9, 1.0, &cfg).unwrap();
    assert_eq!(
        serde_json::to_string(&r1).unwrap(),
        serde_json::to_string(&r2).unwrap()
    );
}
