use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use vortbif_core::critical::{solve_kappa_a, CriticalValueResult};
use vortbif_core::lagrangian::{
    condition_check, flow_gradient, lagrangian_residual, sample_points, Flow, TpsiQuadrature,
};
use vortbif_core::linear::build_eigenfunction;
use vortbif_core::steady::{
    continue_branch, eigen_tangent, locate_bifurcation, probe_with_radius, steady_residual,
    BranchPoint, ContinuationConfig, ProbeOutcome, SteadyConfig, StepRecord, Tangent,
};
use vortbif_core::{AspectRatio, Error, SpectralField};

use crate::manifest::{manifest_path, Run, RunConfig};
use crate::output::{json_with_hash, line_plot_svg, num, Csv};
use crate::{Direction, Global, EXIT_GATE, EXIT_NUMERICAL, EXIT_PARAMETER};

const DEFAULT_CRITICAL_TOL: f64 = 1e-10;
const DEFAULT_VERIFY_TOL: f64 = 1e-6;
const DEFAULT_SEED: u64 = 42;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn parameter(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_PARAMETER,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Parameter(_) | Error::Precondition(_) | Error::Resolution { .. } | Error::Json(_) => {
                EXIT_PARAMETER
            }
            _ => EXIT_NUMERICAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn write_file(run: &mut Run, path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::parameter(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::parameter(format!("cannot write {}: {e}", path.display())))?;
    run.record_output(path);
    Ok(())
}

/// Primary output to `--out` or stdout.
fn emit(run: &mut Run, g: &Global, text: &str) -> CliResult<()> {
    match &g.out {
        Some(path) => write_file(run, path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Manifest next to `--out`, or on stderr.
fn finish(run: &mut Run, g: &Global) -> CliResult<()> {
    match &g.out {
        Some(path) => {
            let mpath = manifest_path(path);
            let text = run.manifest_json();
            fs::write(&mpath, text)
                .map_err(|e| Failure::parameter(format!("cannot write {}: {e}", mpath.display())))
        }
        None => {
            eprint!("{}", run.manifest_json());
            Ok(())
        }
    }
}

fn positive(name: &str, v: f64) -> CliResult<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Failure::parameter(format!("{name} must be positive, got {v}")))
    }
}

/// `a0:a1:count`, inclusive.
fn parse_range(spec: &str) -> CliResult<Vec<f64>> {
    let bad = || Failure::parameter(format!("range must look like a0:a1:count, got {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let a0: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let a1: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let count: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if count == 0 {
        return Err(bad());
    }
    if count == 1 {
        return Ok(vec![a0]);
    }
    Ok((0..count)
        .map(|i| a0 + (a1 - a0) * i as f64 / (count - 1) as f64)
        .collect())
}

/// Field JSON with extra top-level keys.
fn field_document(f: &SpectralField, extra: &[(&str, Value)]) -> CliResult<String> {
    let mut doc: Value = serde_json::from_str(&f.to_json()?).map_err(Error::from)?;
    if let Value::Object(map) = &mut doc {
        for (k, v) in extra {
            map.insert((*k).to_string(), v.clone());
        }
    }
    let mut text = serde_json::to_string_pretty(&doc).map_err(Error::from)?;
    text.push('\n');
    Ok(text)
}

pub fn critical_value(g: &Global, a: Option<f64>, sweep_spec: Option<&str>) -> CliResult<()> {
    let tol = positive("tol", g.tol.unwrap_or(DEFAULT_CRITICAL_TOL))?;
    if let Some(spec) = sweep_spec {
        return sweep_table(g, "critical-value", spec, tol, false, 8, 32);
    }
    let a = a.ok_or_else(|| Failure::parameter("--a is required unless --sweep is given"))?;
    let aspect = AspectRatio::for_bifurcation(a)?;
    let mut run = Run::new(RunConfig::new("critical-value").with("a", a).with("tol", tol), None);
    let res = solve_kappa_a(aspect, tol)?;
    let text = json_with_hash(&res, &run.hash).map_err(Error::from)?;
    emit(&mut run, g, &text)?;
    finish(&mut run, g)
}

pub fn sweep(g: &Global, range: &str, detect: bool, m: usize, n: usize) -> CliResult<()> {
    let tol = positive("tol", g.tol.unwrap_or(DEFAULT_CRITICAL_TOL))?;
    sweep_table(g, "sweep", range, tol, detect, m, n)
}

#[derive(Debug, Clone, Serialize)]
struct SweepRow {
    #[serde(flatten)]
    critical: CriticalValueResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    detected_kappa: Option<f64>,
}

fn sweep_row(a: f64, tol: f64, detect: bool, m: usize, n: usize) -> CliResult<SweepRow> {
    let aspect = AspectRatio::for_bifurcation(a)?;
    let critical = solve_kappa_a(aspect, tol)?;
    let detected_kappa = if detect {
        let cfg = SteadyConfig::new(aspect, m, n)?;
        let k = critical.kappa_a;
        Some(locate_bifurcation(2.0 * k, 0.5 * k, 12, &cfg)?.kappa)
    } else {
        None
    };
    Ok(SweepRow {
        critical,
        detected_kappa,
    })
}

/// Rows are computed by a pool of scoped workers and stored by index, so the
/// table does not depend on scheduling.
fn sweep_table(
    g: &Global,
    command: &str,
    spec: &str,
    tol: f64,
    detect: bool,
    m: usize,
    n: usize,
) -> CliResult<()> {
    let values = parse_range(spec)?;
    for &a in &values {
        AspectRatio::for_bifurcation(a)?;
    }
    let mut config = RunConfig::new(command).with("range", spec).with("tol", tol);
    if detect {
        config = config.with("detect", true).with("M", m).with("N", n);
    }
    let mut run = Run::new(config, None);

    let slots: Vec<Mutex<Option<CliResult<SweepRow>>>> = values.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(1)
        .min(values.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= values.len() {
                    break;
                }
                let row = sweep_row(values[i], tol, detect, m, n);
                *slots[i].lock().expect("slot lock") = Some(row);
            });
        }
    });
    let mut rows = Vec::with_capacity(values.len());
    for slot in slots {
        rows.push(slot.into_inner().expect("slot lock").expect("row computed")?);
    }

    let text = if g.json {
        json_with_hash(&serde_json::json!({ "rows": rows }), &run.hash).map_err(Error::from)?
    } else {
        let mut header = vec!["a", "kappa_a", "bound", "oracle_kappa", "in_theorem_range"];
        if detect {
            header.push("detected_kappa");
        }
        let mut csv = Csv::new(&run.hash, &header);
        for r in &rows {
            let c = &r.critical;
            let mut cells = vec![
                num(c.a),
                num(c.kappa_a),
                num(c.bound),
                num(c.oracle_kappa),
                c.in_theorem_range.to_string(),
            ];
            if let Some(k) = r.detected_kappa {
                cells.push(num(k));
            }
            csv.row(&cells);
        }
        csv.finish()
    };
    emit(&mut run, g, &text)?;
    finish(&mut run, g)
}

pub fn eigenfunction(g: &Global, a: f64, n: usize, c: f64) -> CliResult<()> {
    let aspect = AspectRatio::for_bifurcation(a)?;
    let tol = positive("tol", g.tol.unwrap_or(DEFAULT_CRITICAL_TOL))?;
    if !c.is_finite() || c == 0.0 {
        return Err(Failure::parameter(format!("c must be finite and nonzero, got {c}")));
    }
    let mut run = Run::new(
        RunConfig::new("eigenfunction")
            .with("a", a)
            .with("N", n)
            .with("c", c)
            .with("tol", tol),
        None,
    );
    let kappa_a = solve_kappa_a(aspect, tol)?.kappa_a;
    let ef = build_eigenfunction(aspect, kappa_a, c, n)?;

    let mut csv = Csv::new(&run.hash, &["n", "b_n", "gamma_n"]);
    for k in 0..=n {
        let gamma = if k == 0 { String::new() } else { num(ef.gammas.get(k)) };
        csv.row(&[k.to_string(), num(ef.b[k]), gamma]);
    }
    let table = csv.finish();
    let field = field_document(
        &ef.field,
        &[
            ("kappa", kappa_a.into()),
            ("recurrence_residual", ef.recurrence_residual.into()),
            ("manifest_hash", run.hash.clone().into()),
        ],
    )?;

    match &g.out {
        Some(path) => {
            write_file(&mut run, path, &field)?;
            let mut table_path = path.with_extension("csv");
            if table_path == *path {
                table_path = PathBuf::from(format!("{}.table.csv", path.display()));
            }
            write_file(&mut run, &table_path, &table)?;
        }
        None => print!("{}", if g.json { &field } else { &table }),
    }
    finish(&mut run, g)
}

pub struct BranchArgs {
    pub a: f64,
    pub m: usize,
    pub n: usize,
    pub kappa_min: f64,
    pub steps: usize,
    pub ds: f64,
    pub direction: Direction,
    pub dump_fields: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

#[derive(Serialize)]
struct BranchDoc<'a> {
    a: f64,
    m: usize,
    n: usize,
    kappa_a: f64,
    bifurcation_kappa: f64,
    direction: &'a str,
    points: &'a [BranchPoint],
    log: &'a [StepRecord],
    terminated: &'a Option<String>,
}

pub fn branch(g: &Global, args: &BranchArgs) -> CliResult<()> {
    let aspect = AspectRatio::for_bifurcation(args.a)?;
    positive("kappa-min", args.kappa_min)?;
    positive("ds", args.ds)?;
    let cfg = SteadyConfig::new(aspect, args.m, args.n)?;
    let cont = ContinuationConfig {
        ds0: args.ds,
        ds_max: args.ds,
        ds_min: (args.ds * 1e-4).min(ContinuationConfig::default().ds_min),
        max_steps: args.steps,
        kappa_min: args.kappa_min,
        ..ContinuationConfig::default()
    };
    let direction = match args.direction {
        Direction::Plus => "plus",
        Direction::Minus => "minus",
    };
    let mut run = Run::new(
        RunConfig::new("branch")
            .with("a", args.a)
            .with("M", args.m)
            .with("N", args.n)
            .with("kappa_min", args.kappa_min)
            .with("steps", args.steps)
            .with("ds", args.ds)
            .with("direction", direction),
        None,
    );

    let kappa_a = solve_kappa_a(aspect, 1e-12)?.kappa_a;
    let event = locate_bifurcation(2.0 * kappa_a, 0.5 * kappa_a, 12, &cfg)?;
    let start = BranchPoint::trivial(&cfg, event.kappa);
    let mut phi = eigen_tangent(event.kappa, &cfg)?;
    if args.direction == Direction::Minus {
        phi = phi.scaled(-1.0);
    }
    let br = continue_branch(&start, &Tangent { field: phi, kappa: 0.0 }, &cfg, &cont)?;
    if let Some(reason) = &br.terminated {
        eprintln!("warning: continuation stopped early: {reason}");
    }

    let text = if g.json {
        let doc = BranchDoc {
            a: args.a,
            m: args.m,
            n: args.n,
            kappa_a,
            bifurcation_kappa: event.kappa,
            direction,
            points: &br.points,
            log: &br.log,
            terminated: &br.terminated,
        };
        json_with_hash(&doc, &run.hash).map_err(Error::from)?
    } else {
        let mut csv = Csv::new(&run.hash, &["s", "kappa", "amplitude", "residual_norm"]);
        for p in &br.points {
            csv.row(&[num(p.s), num(p.kappa), num(p.amplitude), num(p.residual_norm)]);
        }
        csv.finish()
    };
    emit(&mut run, g, &text)?;

    if let Some(dir) = &args.dump_fields {
        for (i, p) in br.points.iter().enumerate() {
            let doc = field_document(
                &p.field,
                &[
                    ("kappa", p.kappa.into()),
                    ("s", p.s.into()),
                    ("amplitude", p.amplitude.into()),
                    ("manifest_hash", run.hash.clone().into()),
                ],
            )?;
            write_file(&mut run, &dir.join(format!("point_{i:03}.json")), &doc)?;
        }
    }
    if let Some(path) = &args.svg {
        let pts: Vec<(f64, f64)> = br.points.iter().map(|p| (p.kappa, p.amplitude)).collect();
        let title = format!("a = {}, M = {}, N = {}, {direction} branch", args.a, args.m, args.n);
        write_file(&mut run, path, &line_plot_svg(&pts, "kappa", "amplitude", &title))?;
    }
    finish(&mut run, g)
}

#[derive(Serialize)]
struct VerifyReport {
    kappa: f64,
    tol: f64,
    cond13: bool,
    cond14: bool,
    cond22: bool,
    eps: f64,
    hessian_norm: f64,
    outside_hypotheses: bool,
    euler_residual: f64,
    lagrangian_residual: f64,
    det_err_max: f64,
    points: usize,
    s_max: f64,
    passed: bool,
}

pub fn verify(g: &Global, path: &Path, kappa: f64, points: usize, t_end: f64) -> CliResult<()> {
    let kappa = positive("kappa", kappa)?;
    let tol = positive("tol", g.tol.unwrap_or(DEFAULT_VERIFY_TOL))?;
    if points == 0 {
        return Err(Failure::parameter("points must be at least 1"));
    }
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(Failure::parameter(format!("t-end must be non-negative, got {t_end}")));
    }
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::parameter(format!("cannot read field file {}: {e}", path.display())))?;
    let f = SpectralField::from_json(&text)?;
    let mut run = Run::new(
        RunConfig::new("verify")
            .with("field_sha256", hex::encode(Sha256::digest(text.as_bytes())))
            .with("kappa", kappa)
            .with("tol", tol)
            .with("points", points)
            .with("t_end", t_end),
        None,
    );

    let euler_residual = steady_residual(&f, kappa)?.norm();
    let conditions = condition_check(&f, kappa)?;
    // T is scaled by κ in the residual; a tenth of the gate goes to quadrature.
    let quad = TpsiQuadrature::for_tolerance(kappa, 1.0, 0.1 * tol / kappa)?;
    let xs = sample_points(&f, points);
    let lag = lagrangian_residual(&f, kappa, &quad, &xs)?;
    let flow = Flow::new(&f);
    let mut det_err_max: f64 = 0.0;
    for &x in &xs {
        for s in flow_gradient(&flow, x, t_end, 0.01)? {
            det_err_max = det_err_max.max(s.det_err);
        }
    }
    let passed = lag.max_error <= tol;
    let report = VerifyReport {
        kappa,
        tol,
        cond13: conditions.cond13,
        cond14: conditions.cond14,
        cond22: conditions.cond22,
        eps: conditions.eps,
        hessian_norm: conditions.hessian_norm,
        outside_hypotheses: lag.outside_hypotheses,
        euler_residual,
        lagrangian_residual: lag.max_error,
        det_err_max,
        points: xs.len(),
        s_max: quad.s_max,
        passed,
    };
    let json = json_with_hash(&report, &run.hash).map_err(Error::from)?;
    emit(&mut run, g, &json)?;
    finish(&mut run, g)?;
    if passed {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_GATE,
            message: format!(
                "lagrangian residual {:e} exceeds tolerance {tol:e}",
                lag.max_error
            ),
        })
    }
}

pub struct ProbeArgs {
    pub a: f64,
    pub kappa: f64,
    pub trials: usize,
    pub radius_scale: f64,
    pub m: usize,
    pub n: usize,
    pub dump_counterexamples: Option<PathBuf>,
}

pub fn probe(g: &Global, args: &ProbeArgs) -> CliResult<()> {
    let aspect = AspectRatio::new(args.a)?;
    let kappa = positive("kappa", args.kappa)?;
    positive("radius-scale", args.radius_scale)?;
    if args.trials == 0 {
        return Err(Failure::parameter("trials must be at least 1"));
    }
    let seed = g.seed.unwrap_or(DEFAULT_SEED);
    let cfg = SteadyConfig::new(aspect, args.m, args.n)?;
    let mut run = Run::new(
        RunConfig::new("probe")
            .with("a", args.a)
            .with("kappa", kappa)
            .with("trials", args.trials)
            .with("radius_scale", args.radius_scale)
            .with("M", args.m)
            .with("N", args.n)
            .with("seed", seed),
        Some(seed),
    );
    let report = probe_with_radius(kappa, args.trials, seed, args.radius_scale, &cfg)?;
    let json = json_with_hash(&report, &run.hash).map_err(Error::from)?;
    if g.json {
        emit(&mut run, g, &json)?;
    } else {
        if g.out.is_some() {
            emit(&mut run, g, &json)?;
        }
        println!("{}", report.summary());
        println!(
            "nontrivial {}, failed {}, kappa*a >= 1: {}",
            report.converged_nontrivial, report.failed, report.in_uniqueness_regime
        );
        for t in report.trials.iter().filter(|t| t.outcome == ProbeOutcome::Nontrivial) {
            println!(
                "trial {} reached amplitude {}",
                t.trial,
                num(t.final_amplitude.unwrap_or(f64::NAN))
            );
        }
    }
    if let Some(dir) = &args.dump_counterexamples {
        for (i, start) in &report.counterexamples {
            let doc = field_document(start, &[("trial", (*i).into()), ("manifest_hash", run.hash.clone().into())])?;
            write_file(&mut run, &dir.join(format!("start_{i:03}.json")), &doc)?;
        }
    }
    finish(&mut run, g)
}
