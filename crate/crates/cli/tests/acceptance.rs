//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vortbif_core::critical::{bound_rhs, matrix_oracle, solve_kappa_a, Closure};
use vortbif_core::lagrangian::{
    check_growth_bounds, flow_gradient, flow_map, lagrangian_residual, sample_points, Flow,
    TpsiQuadrature,
};
use vortbif_core::linear::{build_eigenfunction, gamma_sequence, gamma_tail_limit, kernel_check_m};
use vortbif_core::steady::{
    bifurcation_branches, uniqueness_probe, BifurcationBranches, ContinuationConfig, SteadyConfig,
    TRIVIAL_SINGULAR_TOL,
};
use vortbif_core::{AspectRatio, SpectralField};

const ASPECTS: [f64; 6] = [0.71, 0.75, 0.80, 0.85, 0.90, 0.95];

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn aspect(a: f64) -> AspectRatio {
    AspectRatio::for_bifurcation(a).unwrap()
}

fn a08() -> AspectRatio {
    aspect(0.8)
}

fn kappa_a08() -> f64 {
    solve_kappa_a(a08(), 1e-12).unwrap().kappa_a
}

fn perturbed(eps: f64) -> SpectralField {
    let mut f = SpectralField::basic(a08(), 2, 4).unwrap();
    f.set(1, 1, eps);
    f.set(1, -1, -0.5 * eps);
    f.set(2, 0, 0.25 * eps);
    f
}

fn branches() -> BifurcationBranches {
    bifurcation_branches(&SteadyConfig::default_for(a08()), &ContinuationConfig::default()).unwrap()
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = f64::INFINITY;
    for a in ASPECTS {
        let r = solve_kappa_a(aspect(a), 1e-10).map_err(|e| e.to_string())?;
        let bound = bound_rhs(aspect(a)).unwrap();
        check(r.kappa_a > 0.0 && r.kappa_a < bound, || {
            format!("a={a}: kappa_a={} bound={bound}", r.kappa_a)
        })?;
        worst = worst.min(bound - r.kappa_a);
    }
    Ok(format!("0 < kappa_a < bound at 6 aspect ratios, smallest margin {worst:.3e}"))
}

fn criterion_2() -> Outcome {
    let (mut agree, mut stable): (f64, f64) = (0.0, 0.0);
    for a in ASPECTS {
        let r = solve_kappa_a(aspect(a), 1e-12).map_err(|e| e.to_string())?;
        let o32 = matrix_oracle(aspect(a), 32, Closure::Asymptotic).map_err(|e| e.to_string())?;
        let o40 = matrix_oracle(aspect(a), 40, Closure::Asymptotic).map_err(|e| e.to_string())?;
        agree = agree.max((r.kappa_a - o40.kappa).abs());
        stable = stable.max((o32.kappa - o40.kappa).abs());
    }
    check(agree < 1e-8, || format!("CF vs oracle {agree:.2e}"))?;
    check(stable < 1e-10, || format!("oracle N=32 vs 40 {stable:.2e}"))?;
    Ok(format!("max |CF - oracle| {agree:.2e}, max |oracle(32) - oracle(40)| {stable:.2e}"))
}

fn criterion_3() -> Outcome {
    let k = kappa_a08();
    let ef = build_eigenfunction(a08(), k, 1.0, 32).map_err(|e| e.to_string())?;
    check(ef.recurrence_residual < 1e-10, || format!("recurrence residual {:.2e}", ef.recurrence_residual))?;
    for n in 1..=32i64 {
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        check(ef.field.get(1, -n) == sign * ef.field.get(1, n), || format!("parity broken at n={n}"))?;
    }
    let gammas = gamma_sequence(a08(), k, 2000).map_err(|e| e.to_string())?;
    let limit = gamma_tail_limit(a08(), k);
    let tail = (gammas.get(1000) - limit).abs();
    check(tail < 1e-6, || format!("|gamma_1000 - limit| = {tail:.2e}"))?;
    Ok(format!(
        "recurrence residual {:.2e}, parity exact, |gamma_1000 - limit| {tail:.2e}",
        ef.recurrence_residual
    ))
}

fn criterion_4() -> Outcome {
    let k = kappa_a08();
    let r1 = kernel_check_m(a08(), k, 1, 64).map_err(|e| e.to_string())?;
    check(r1.dimension() == Some(1) && r1.semisimple(), || {
        format!("m=1 at kappa_a: {:?} / square {:?}", r1.outcome, r1.square_outcome)
    })?;
    let mut least: f64 = f64::INFINITY;
    for m in [0, 2, 3] {
        for kappa in [0.05, k, 0.5, 1.0] {
            let r = kernel_check_m(a08(), kappa, m, 64).map_err(|e| e.to_string())?;
            check(r.dimension() == Some(0), || format!("m={m} kappa={kappa}: {:?}", r.outcome))?;
            least = least.min(r.relative_singular_values[0]);
        }
    }
    Ok(format!(
        "m=1: dim 1 (sigma_min/norm {:.1e}), rank J^2 = rank J; m in {{0,2,3}}: dim 0 (least sigma {least:.1e})",
        r1.relative_singular_values[0]
    ))
}

fn criterion_5(out: &BifurcationBranches) -> Outcome {
    let gap = (out.event.kappa - out.kappa_a).abs();
    check(gap < 1e-6, || format!("detected {} vs kappa_a {}", out.event.kappa, out.kappa_a))?;
    check(out.event.smallest_singular_value < TRIVIAL_SINGULAR_TOL, || {
        format!("smallest singular value {:.2e} at detection", out.event.smallest_singular_value)
    })?;
    for (name, br) in [("plus", &out.plus), ("minus", &out.minus)] {
        check(br.points.len() >= 10, || format!("{name}: only {} points", br.points.len()))?;
        let worst = br.points.iter().map(|p| p.residual_norm).fold(0.0, f64::max);
        check(worst < 1e-10, || format!("{name}: residual {worst:.2e}"))?;
        // approaching κ_a: the branch read backwards
        let mut pts: Vec<_> = br.points.iter().collect();
        pts.sort_by(|p, q| (out.kappa_a - p.kappa).abs().total_cmp(&(out.kappa_a - q.kappa).abs()).reverse());
        let last5 = &pts[pts.len() - 5..];
        check(last5.windows(2).all(|w| w[1].amplitude < w[0].amplitude), || {
            format!("{name}: amplitude not monotone approaching kappa_a")
        })?;
        check(pts.last().unwrap().amplitude < 1e-12, || format!("{name}: amplitude does not reach 0"))?;
    }
    Ok(format!(
        "detected kappa {:.12} (|gap| {gap:.1e}, sigma {:.1e}); {} + {} points, residual < 1e-10, twin deviation {:.1e}",
        out.event.kappa,
        out.event.smallest_singular_value,
        out.plus.points.len(),
        out.minus.points.len(),
        out.twin_deviation
    ))
}

fn criterion_6() -> Outcome {
    let report = uniqueness_probe(1.25, 50, 42, &SteadyConfig::default_for(a08())).map_err(|e| e.to_string())?;
    let worst = report.trials.iter().filter_map(|t| t.final_amplitude).fold(0.0, f64::max);
    check(report.converged_to_basic == 50, || report.summary())?;
    Ok(format!("{}, largest final amplitude {worst:.1e}", report.summary()))
}

fn gate(f: &SpectralField, kappa: f64, gate: f64) -> Result<f64, String> {
    let quad = TpsiQuadrature::for_tolerance(kappa, 1.0, 0.1 * gate / kappa).map_err(|e| e.to_string())?;
    let r = lagrangian_residual(f, kappa, &quad, &sample_points(f, 8)).map_err(|e| e.to_string())?;
    Ok(r.max_error)
}

fn criterion_7(out: &BifurcationBranches) -> Outcome {
    let basic = SpectralField::basic(a08(), 2, 4).unwrap();
    let mut basic_worst: f64 = 0.0;
    for kappa in [0.1, 0.5, 1.0] {
        let e = gate(&basic, kappa, 1e-6)?;
        check(e < 1e-6, || format!("psi* at kappa={kappa}: {e:.2e}"))?;
        basic_worst = basic_worst.max(e);
    }
    let mut branch_worst: f64 = 0.0;
    let mut count = 0;
    for p in out.plus.points.iter().chain(&out.minus.points) {
        let e = gate(&p.field, p.kappa, 1e-5)?;
        check(e < 1e-5, || format!("branch point kappa={} amplitude={:.3e}: {e:.2e}", p.kappa, p.amplitude))?;
        branch_worst = branch_worst.max(e);
        count += 1;
    }
    let control = gate(&perturbed(0.1), 0.5, 1e-5)?;
    check(control >= 100.0 * 1e-5, || format!("non-steady control only {control:.2e}"))?;
    Ok(format!(
        "psi* {basic_worst:.1e}; {count} branch points max {branch_worst:.1e} at 64 points; non-steady control {control:.1e}"
    ))
}

fn criterion_8(out: &BifurcationBranches) -> Outcome {
    let fields: Vec<SpectralField> = vec![
        SpectralField::basic(a08(), 2, 4).unwrap(),
        perturbed(0.05),
        perturbed(0.2),
        out.plus.points.last().unwrap().field.clone(),
    ];
    let mut det_worst: f64 = 0.0;
    for f in &fields {
        let flow = Flow::new(f);
        for x in sample_points(f, 3) {
            for s in flow_gradient(&flow, x, 10.0, 0.01).map_err(|e| e.to_string())? {
                det_worst = det_worst.max(s.det_err);
            }
        }
    }
    check(det_worst < 1e-8, || format!("det error {det_worst:.2e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let l1 = a08().period_x1();
    let mut violations = 0;
    let mut ratio: f64 = 0.0;
    for f in &fields {
        let samples: Vec<([f64; 2], f64)> = (0..25)
            .map(|_| {
                (
                    [rng.random_range(0.0..l1), rng.random_range(0.0..2.0 * PI)],
                    rng.random_range(0.0..10.0),
                )
            })
            .collect();
        let r = check_growth_bounds(f, &samples, 0.01).map_err(|e| e.to_string())?;
        violations += r.violations;
        ratio = ratio.max(r.max_ratio_general).max(r.max_ratio_near_shear.unwrap_or(0.0));
    }
    check(violations == 0, || format!("{violations} growth-bound violations"))?;

    let flow = Flow::new(&perturbed(0.1));
    let x = [0.7, 2.1];
    let reference = flow_map(&flow, x, 5.0, 0.05 / 8.0).map_err(|e| e.to_string())?;
    let err = |dt: f64| {
        let s = flow_map(&flow, x, 5.0, dt).unwrap();
        (s.y[0] - reference.y[0]).hypot(s.y[1] - reference.y[1])
    };
    let order = err(0.1) / err(0.05);
    check((order - 16.0).abs() < 3.0, || format!("error ratio {order:.2}"))?;
    Ok(format!(
        "det error {det_worst:.1e} to t=10; 100 growth samples, 0 violations (max ratio {ratio:.2}); RK4 ratio {order:.2}"
    ))
}

fn run_bin(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vortbif"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn data_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if !path.to_string_lossy().ends_with(".manifest.json") {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn criterion_9() -> Outcome {
    let runs: Vec<Vec<(String, Vec<u8>)>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let d = dir.path();
            run_bin(d, &["critical-value", "--sweep", "0.71:0.95:4", "--out", "curve.csv"])?;
            run_bin(d, &["branch", "--a", "0.8", "--out", "branch.csv", "--dump-fields", "fields", "--svg", "branch.svg"])?;
            run_bin(d, &["probe", "--a", "0.8", "--kappa", "0.5", "--trials", "12", "--seed", "7", "--out", "probe.json"])?;
            run_bin(d, &["eigenfunction", "--a", "0.8", "--out", "phi.json"])?;
            Ok(data_files(d))
        })
        .collect::<Result<_, String>>()?;
    check(runs[0].len() == runs[1].len(), || "different file sets".into())?;
    let bytes: usize = runs[0].iter().map(|(_, b)| b.len()).sum();
    for ((n1, b1), (n2, b2)) in runs[0].iter().zip(&runs[1]) {
        check(n1 == n2 && b1 == b2, || format!("{n1} differs between runs"))?;
    }
    Ok(format!("{} output files ({bytes} bytes) byte-identical across two runs", runs[0].len()))
}

fn main() {
    let started = Instant::now();
    let t = Instant::now();
    let shared = branches();
    let branch_time = t.elapsed().as_secs_f64();

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("bound compliance", Box::new(criterion_1)),
        ("dual-formulation agreement", Box::new(criterion_2)),
        ("eigenfunction fidelity", Box::new(criterion_3)),
        ("kernel dichotomy", Box::new(criterion_4)),
        ("bifurcation detection", Box::new(|| criterion_5(&shared))),
        ("uniqueness regime", Box::new(criterion_6)),
        ("lagrangian verification gate", Box::new(|| criterion_7(&shared))),
        ("flow-map properties", Box::new(|| criterion_8(&shared))),
        ("determinism", Box::new(criterion_9)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".into()));
        let mut secs = t.elapsed().as_secs_f64();
        if i == 4 {
            secs += branch_time;
        }
        match outcome {
            Ok(detail) => println!("criterion {} [{name}]: PASS ({secs:.2} s) {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} [{name}]: FAIL ({secs:.2} s) {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1} s",
        criteria.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
