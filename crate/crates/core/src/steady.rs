//! Steady states of `(∇×ψ)·∇(Δψ) + κΔ(ψ − ψ*) = 0`.
//!
//! The residual is evaluated pseudo-spectrally; the Jacobian is assembled
//! exactly in coefficient space from the advection triads, so the two form
//! independent routes to the same linearization. Unknowns are all stored
//! coefficients except the mean, which is pinned to zero.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::critical::solve_kappa_a;
use crate::error::{Error, Result};
use crate::linear::build_eigenfunction;
use crate::spectral::{advect_bilinear_on, advect_triad, laplacian, sup_hessian_norm, AspectRatio, SpectralField};

/// Relative singular value of the scaled trivial-branch Jacobian counted as singular.
pub const TRIVIAL_SINGULAR_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Serialize)]
pub struct SteadyConfig {
    pub a: AspectRatio,
    pub m_max: usize,
    pub n_max: usize,
    /// Dealiasing grid; at least `3M + 1` by `3N + 1`.
    pub grid: (usize, usize),
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    /// Step for finite-difference checks of the Jacobian.
    pub fd_step: f64,
}

impl SteadyConfig {
    pub fn new(a: AspectRatio, m_max: usize, n_max: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::Parameter("N must be at least 1".into()));
        }
        Ok(Self {
            a,
            m_max,
            n_max,
            grid: (3 * m_max + 1, 3 * n_max + 1),
            newton_tol: 1e-11,
            max_newton_iters: 30,
            fd_step: 1e-7,
        })
    }

    /// `M = 8`, `N = 32`.
    pub fn default_for(a: AspectRatio) -> Self {
        Self::new(a, 8, 32).expect("valid default truncation")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0) {
            return Err(Error::Parameter("Newton tolerance must be positive".into()));
        }
        if self.max_newton_iters == 0 {
            return Err(Error::Parameter("at least one Newton iteration is required".into()));
        }
        let (need1, need2) = (3 * self.m_max + 1, 3 * self.n_max + 1);
        if self.grid.0 < need1 || self.grid.1 < need2 {
            return Err(Error::Resolution {
                g1: self.grid.0,
                g2: self.grid.1,
                m: self.m_max,
                n: self.n_max,
                need1,
                need2,
            });
        }
        Ok(())
    }

    pub fn basic(&self) -> SpectralField {
        SpectralField::basic(self.a, self.m_max, self.n_max).expect("valid truncation")
    }

    pub fn zeros(&self) -> SpectralField {
        SpectralField::zeros(self.a, self.m_max, self.n_max).expect("valid truncation")
    }

    pub fn unknown_count(&self) -> usize {
        self.zeros().unknown_count()
    }

    fn field_from(&self, x: &[f64]) -> SpectralField {
        let mut f = self.zeros();
        f.set_unknowns(x);
        f
    }
}

/// `(∇×ψ)·∇(Δψ) + κΔ(ψ − ψ*)` on the default dealiasing grid of `f`.
pub fn steady_residual(f: &SpectralField, kappa: f64) -> Result<SpectralField> {
    let (g1, g2) = f.dealias_dims();
    steady_residual_on(f, kappa, g1, g2)
}

pub fn steady_residual_on(f: &SpectralField, kappa: f64, g1: usize, g2: usize) -> Result<SpectralField> {
    let mut r = advect_bilinear_on(f, f, g1, g2)?;
    r.axpy(kappa, &kappa_derivative(f));
    Ok(r)
}

/// `∂R/∂κ = Δ(ψ − ψ*) = Δψ + ψ*`.
pub fn kappa_derivative(f: &SpectralField) -> SpectralField {
    let mut d = laplacian(f);
    d.add(0, 1, 1.0);
    d
}

fn residual_vec(cfg: &SteadyConfig, f: &SpectralField, kappa: f64) -> Result<DVector<f64>> {
    let r = steady_residual_on(f, kappa, cfg.grid.0, cfg.grid.1)?;
    Ok(DVector::from_column_slice(r.unknowns()))
}

/// Jacobian of the residual with respect to the unknowns (all slots but the mean).
pub fn jacobian(f: &SpectralField, kappa: f64) -> DMatrix<f64> {
    let a = f.aspect();
    let n = f.unknown_count();
    let active: Vec<(usize, i64, f64)> = f.modes().filter(|&(_, _, b)| b != 0.0).collect();
    let mut jac = DMatrix::zeros(n, n);
    for col in 0..n {
        let (ml, nl) = f.mode_of_slot(col + 1);
        jac[(col, col)] -= kappa * a.wavenumber_sq(ml, nl);
        let mut put = |(m, n): (usize, i64), w: f64| {
            if let Some(s) = f.slot(m, n) {
                if s > 0 {
                    jac[(s - 1, col)] += w;
                }
            }
        };
        for &(mk, nk, bk) in &active {
            // perturbation advected by the state's vorticity gradient, and vice versa
            for (k, l) in [((ml, nl), (mk, nk)), ((mk, nk), (ml, nl))] {
                if let Some((w, diff, sum)) = advect_triad(a, k, l) {
                    put(diff, w * bk);
                    put(sum, -w * bk);
                }
            }
        }
    }
    jac
}

/// Sign of the determinant from an LU factorization (magnitude would overflow).
fn det_sign(m: DMatrix<f64>) -> f64 {
    let lu = m.lu();
    let mut sign: f64 = lu.p().determinant();
    for d in lu.u().diagonal().iter() {
        if *d == 0.0 {
            return 0.0;
        }
        sign *= d.signum();
    }
    sign
}

/// One point of a solution branch.
#[derive(Debug, Clone, Serialize)]
pub struct BranchPoint {
    #[serde(skip)]
    pub field: SpectralField,
    pub kappa: f64,
    /// Arclength from the start of the branch.
    pub s: f64,
    /// `‖ψ − ψ*‖` in coefficients.
    pub amplitude: f64,
    pub residual_norm: f64,
    pub newton_iterations: usize,
}

impl BranchPoint {
    fn new(field: SpectralField, kappa: f64, s: f64, residual_norm: f64, iterations: usize) -> Self {
        let amplitude = field.sub(&SpectralField::basic(field.aspect(), field.m_max(), field.n_max()).expect("valid")).norm();
        Self {
            field,
            kappa,
            s,
            amplitude,
            residual_norm,
            newton_iterations: iterations,
        }
    }

    /// The trivial state `ψ*` at `κ`.
    pub fn trivial(cfg: &SteadyConfig, kappa: f64) -> Self {
        Self::new(cfg.basic(), kappa, 0.0, 0.0, 0)
    }
}

/// Newton's method for the residual at fixed `κ`.
pub fn newton_solve(f0: &SpectralField, kappa: f64, cfg: &SteadyConfig) -> Result<BranchPoint> {
    cfg.validate()?;
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::Parameter(format!("kappa must be positive, got {kappa}")));
    }
    let mut f = f0.resized(cfg.m_max, cfg.n_max)?;
    f.enforce_zero_mean();
    let mut r = residual_vec(cfg, &f, kappa)?;
    let mut rnorm = r.norm();
    for it in 0..=cfg.max_newton_iters {
        if !rnorm.is_finite() {
            return Err(Error::NonConvergence { iterations: it, residual: rnorm });
        }
        if rnorm < cfg.newton_tol {
            return Ok(BranchPoint::new(f, kappa, 0.0, rnorm, it));
        }
        if it == cfg.max_newton_iters {
            break;
        }
        let step = jacobian(&f, kappa)
            .lu()
            .solve(&r)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or(Error::SingularJacobian { kappa })?;
        let x: Vec<f64> = f.unknowns().iter().zip(step.iter()).map(|(x, d)| x - d).collect();
        f.set_unknowns(&x);
        r = residual_vec(cfg, &f, kappa)?;
        rnorm = r.norm();
    }
    Err(Error::NonConvergence {
        iterations: cfg.max_newton_iters,
        residual: rnorm,
    })
}

/// Spectrum of the linearization about `ψ*`.
#[derive(Debug, Clone, Serialize)]
pub struct TrivialSpectrum {
    pub kappa: f64,
    /// Smallest singular value of the row-scaled (`Δ⁻¹`) Jacobian relative to its norm.
    pub smallest_singular_value: f64,
    /// Zonal column attaining it.
    pub critical_m: usize,
    /// Per-column relative smallest singular values, indexed by `m`.
    pub per_column: Vec<f64>,
    /// Sign of the determinant of the Jacobian.
    pub det_sign: f64,
}

/// Slots of zonal column `m` among the unknowns.
fn column_unknowns(f: &SpectralField, m: usize) -> Vec<usize> {
    (0..f.unknown_count()).filter(|&i| f.mode_of_slot(i + 1).0 == m).collect()
}

/// Smallest singular value of the steady-residual Jacobian at `ψ*`.
///
/// At `ψ*` the Jacobian does not couple zonal columns, so it is decomposed
/// into blocks; rows are divided by `β` so that blocks are comparable.
pub fn trivial_branch_spectrum(kappa: f64, cfg: &SteadyConfig) -> Result<TrivialSpectrum> {
    cfg.validate()?;
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::Parameter(format!("kappa must be positive, got {kappa}")));
    }
    let basic = cfg.basic();
    let mut jac = jacobian(&basic, kappa);
    for i in 0..jac.nrows() {
        let (m, n) = basic.mode_of_slot(i + 1);
        jac.row_mut(i).scale_mut(1.0 / cfg.a.wavenumber_sq(m, n));
    }
    let mut sv_min = Vec::with_capacity(cfg.m_max + 1);
    let mut norm: f64 = 0.0;
    let mut sign = 1.0;
    for m in 0..=cfg.m_max {
        let idx = column_unknowns(&basic, m);
        let block = DMatrix::from_fn(idx.len(), idx.len(), |i, j| jac[(idx[i], idx[j])]);
        let sv = block.singular_values();
        norm = norm.max(sv.max());
        sv_min.push(sv.min());
        sign *= det_sign(block);
    }
    let per_column: Vec<f64> = sv_min.iter().map(|s| s / norm).collect();
    let (critical_m, smallest) = per_column
        .iter()
        .copied()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("at least one column");
    Ok(TrivialSpectrum {
        kappa,
        smallest_singular_value: smallest,
        critical_m,
        per_column,
        det_sign: sign,
    })
}

/// Bifurcation from the trivial branch located by a determinant sign change.
#[derive(Debug, Clone, Serialize)]
pub struct BifurcationEvent {
    pub kappa: f64,
    pub smallest_singular_value: f64,
    pub critical_m: usize,
    /// `(κ, relative smallest singular value, det sign)` along the scan.
    pub scan: Vec<(f64, f64, f64)>,
}

/// Scans the trivial branch from `kappa_hi` down to `kappa_lo` in `steps` steps,
/// and bisects the first determinant sign change to round-off.
pub fn locate_bifurcation(kappa_hi: f64, kappa_lo: f64, steps: usize, cfg: &SteadyConfig) -> Result<BifurcationEvent> {
    if !(kappa_lo > 0.0 && kappa_hi > kappa_lo && steps >= 1) {
        return Err(Error::Parameter(format!(
            "need 0 < kappa_lo < kappa_hi and steps >= 1, got [{kappa_lo}, {kappa_hi}], {steps}"
        )));
    }
    let mut scan = Vec::with_capacity(steps + 1);
    let mut prev: Option<TrivialSpectrum> = None;
    for i in 0..=steps {
        let kappa = kappa_hi - (kappa_hi - kappa_lo) * i as f64 / steps as f64;
        let spec = trivial_branch_spectrum(kappa, cfg)?;
        scan.push((kappa, spec.smallest_singular_value, spec.det_sign));
        if let Some(p) = prev.as_ref() {
            if p.det_sign != spec.det_sign {
                let (mut hi, mut lo) = (p.kappa, spec.kappa);
                let sign_hi = p.det_sign;
                for _ in 0..200 {
                    let mid = 0.5 * (hi + lo);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    if trivial_branch_spectrum(mid, cfg)?.det_sign == sign_hi {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                let kappa = 0.5 * (hi + lo);
                let at = trivial_branch_spectrum(kappa, cfg)?;
                return Ok(BifurcationEvent {
                    kappa,
                    smallest_singular_value: at.smallest_singular_value,
                    critical_m: at.critical_m,
                    scan,
                });
            }
        }
        prev = Some(spec);
    }
    Err(Error::BranchTerminated(format!(
        "no determinant sign change on the trivial branch in [{kappa_lo}, {kappa_hi}]"
    )))
}

#[derive(Debug, Clone, Serialize)]
pub struct ContinuationConfig {
    pub ds0: f64,
    pub ds_min: f64,
    pub ds_max: f64,
    pub max_steps: usize,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub max_corrector_iters: usize,
}

/// The default stays close to the bifurcation: ten steps of arclength `10⁻³`.
/// Steady states further out are only finitely smooth and their truncations
/// resolve the pointwise equation less well.
impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            ds0: 1e-3,
            ds_min: 1e-7,
            ds_max: 1e-3,
            max_steps: 10,
            kappa_min: 1e-3,
            kappa_max: 10.0,
            max_corrector_iters: 10,
        }
    }
}

/// Direction in `(ψ, κ)` space.
#[derive(Debug, Clone)]
pub struct Tangent {
    pub field: SpectralField,
    pub kappa: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub ds: f64,
    pub predictor_kappa: f64,
    pub corrector_iterations: usize,
    pub accepted: bool,
    pub residual_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Branch {
    pub points: Vec<BranchPoint>,
    pub log: Vec<StepRecord>,
    /// Reason the continuation stopped early, if it did.
    pub terminated: Option<String>,
}

impl Branch {
    pub fn kappas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.kappa).collect()
    }
}

struct Corrected {
    x: DVector<f64>,
    kappa: f64,
    iterations: usize,
}

/// Newton on the residual bordered by the arclength condition `tᵀ(z − z₀) = ds`.
fn correct(
    cfg: &SteadyConfig,
    z0: (&DVector<f64>, f64),
    t: (&DVector<f64>, f64),
    ds: f64,
    max_iters: usize,
) -> Result<Corrected> {
    let n = z0.0.len();
    let mut x = z0.0 + t.0 * ds;
    let mut kappa = z0.1 + t.1 * ds;
    for it in 0..=max_iters {
        if !(kappa > 0.0) {
            return Err(Error::Parameter(format!("corrector left kappa > 0 (kappa = {kappa})")));
        }
        let f = cfg.field_from(x.as_slice());
        let r = residual_vec(cfg, &f, kappa)?;
        let constraint = t.0.dot(&(&x - z0.0)) + t.1 * (kappa - z0.1) - ds;
        let rnorm = r.norm();
        if !rnorm.is_finite() {
            break;
        }
        if rnorm < cfg.newton_tol && constraint.abs() < cfg.newton_tol {
            return Ok(Corrected {
                x,
                kappa,
                iterations: it,
            });
        }
        if it == max_iters {
            return Err(Error::NonConvergence { iterations: it, residual: rnorm });
        }
        let jac = jacobian(&f, kappa);
        let rk = kappa_derivative(&f);
        let mut big = DMatrix::zeros(n + 1, n + 1);
        big.view_mut((0, 0), (n, n)).copy_from(&jac);
        for i in 0..n {
            big[(i, n)] = rk.unknowns()[i];
            big[(n, i)] = t.0[i];
        }
        big[(n, n)] = t.1;
        let mut rhs = DVector::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from(&r);
        rhs[n] = constraint;
        let step = big
            .lu()
            .solve(&rhs)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or(Error::SingularJacobian { kappa })?;
        x -= step.rows(0, n);
        kappa -= step[n];
    }
    Err(Error::NonConvergence {
        iterations: max_iters,
        residual: f64::NAN,
    })
}

/// Pseudo-arclength continuation from `start` along `tangent`.
///
/// The first predictor uses `tangent`; later ones use the secant through the
/// last two points. Every accepted point is re-checked against the residual.
pub fn continue_branch(
    start: &BranchPoint,
    tangent: &Tangent,
    cfg: &SteadyConfig,
    cont: &ContinuationConfig,
) -> Result<Branch> {
    cfg.validate()?;
    if !(cont.ds0 > 0.0 && cont.ds_min > 0.0 && cont.ds_max >= cont.ds0) {
        return Err(Error::Parameter("step sizes must satisfy 0 < ds_min, 0 < ds0 <= ds_max".into()));
    }
    let start_field = start.field.resized(cfg.m_max, cfg.n_max)?;
    let mut z = (DVector::from_column_slice(start_field.unknowns()), start.kappa);
    let tf = tangent.field.resized(cfg.m_max, cfg.n_max)?;
    let mut t = (DVector::from_column_slice(tf.unknowns()), tangent.kappa);
    let tn = (t.0.norm_squared() + t.1 * t.1).sqrt();
    if tn == 0.0 {
        return Err(Error::Parameter("tangent must be nonzero".into()));
    }
    t.0 /= tn;
    t.1 /= tn;

    let mut points = vec![BranchPoint {
        s: 0.0,
        ..BranchPoint::new(start_field, start.kappa, 0.0, start.residual_norm, 0)
    }];
    let mut log = Vec::new();
    let mut ds = cont.ds0;
    let mut s = 0.0;
    let mut terminated = None;
    let mut step = 0;
    while points.len() <= cont.max_steps {
        step += 1;
        let predictor_kappa = z.1 + t.1 * ds;
        match correct(cfg, (&z.0, z.1), (&t.0, t.1), ds, cont.max_corrector_iters) {
            Ok(c) => {
                let field = cfg.field_from(c.x.as_slice());
                // independent re-check of the accepted point
                let check = steady_residual(&field, c.kappa)?.norm();
                log.push(StepRecord {
                    step,
                    ds,
                    predictor_kappa,
                    corrector_iterations: c.iterations,
                    accepted: check < cfg.newton_tol,
                    residual_norm: check,
                });
                if check >= cfg.newton_tol {
                    ds *= 0.5;
                } else {
                    let dx = &c.x - &z.0;
                    let dk = c.kappa - z.1;
                    let len = (dx.norm_squared() + dk * dk).sqrt();
                    s += len;
                    t = (dx / len, dk / len);
                    z = (c.x, c.kappa);
                    points.push(BranchPoint::new(field, c.kappa, s, check, c.iterations));
                    if c.iterations <= 3 {
                        ds = (ds * 1.5).min(cont.ds_max);
                    } else if c.iterations >= 6 {
                        ds *= 0.7;
                    }
                    if z.1 < cont.kappa_min || z.1 > cont.kappa_max {
                        terminated = Some(format!("kappa = {} left [{}, {}]", z.1, cont.kappa_min, cont.kappa_max));
                        break;
                    }
                    continue;
                }
            }
            Err(e) => {
                log.push(StepRecord {
                    step,
                    ds,
                    predictor_kappa,
                    corrector_iterations: cont.max_corrector_iters,
                    accepted: false,
                    residual_norm: f64::NAN,
                });
                if matches!(e, Error::Resolution { .. }) {
                    return Err(e);
                }
                ds *= 0.5;
            }
        }
        if ds < cont.ds_min {
            terminated = Some(format!("step size fell below {} after corrector failures", cont.ds_min));
            break;
        }
    }
    if points.len() == 1 {
        return Err(Error::BranchTerminated(
            terminated.unwrap_or_else(|| "no step accepted".into()),
        ));
    }
    Ok(Branch {
        points,
        log,
        terminated,
    })
}

/// Unit tangent along the critical eigenfunction in the solver's truncation.
pub fn eigen_tangent(kappa_a: f64, cfg: &SteadyConfig) -> Result<SpectralField> {
    let e = build_eigenfunction(cfg.a, kappa_a, 1.0, cfg.n_max)?;
    let f = e.field.resized(cfg.m_max, cfg.n_max)?;
    let norm = f.norm();
    Ok(f.scaled(1.0 / norm))
}

/// Both nontrivial branches emanating from the trivial branch at `event`.
#[derive(Debug, Clone, Serialize)]
pub struct BifurcationBranches {
    pub kappa_a: f64,
    pub event: BifurcationEvent,
    pub plus: Branch,
    pub minus: Branch,
    /// Largest coefficient distance between a `minus` point and the half-period
    /// shift of the matching `plus` point (relative to the amplitude).
    pub twin_deviation: f64,
    pub twin_is_symmetry_image: bool,
}

/// Locates the bifurcation on the trivial branch near `κ_a` and continues both
/// branches leaving along `±` the critical eigenfunction.
pub fn bifurcation_branches(cfg: &SteadyConfig, cont: &ContinuationConfig) -> Result<BifurcationBranches> {
    let kappa_a = solve_kappa_a(cfg.a, 1e-12)?.kappa_a;
    let event = locate_bifurcation(2.0 * kappa_a, 0.5 * kappa_a, 12, cfg)?;
    let start = BranchPoint::trivial(cfg, event.kappa);
    let phi = eigen_tangent(event.kappa, cfg)?;
    let plus = continue_branch(&start, &Tangent { field: phi.clone(), kappa: 0.0 }, cfg, cont)?;
    let minus = continue_branch(&start, &Tangent { field: phi.scaled(-1.0), kappa: 0.0 }, cfg, cont)?;
    let mut twin_deviation: f64 = 0.0;
    for (p, q) in plus.points.iter().zip(&minus.points).skip(1) {
        let d = p.field.shifted_half_period().sub(&q.field).norm() / p.amplitude.max(1e-300);
        twin_deviation = twin_deviation.max(d);
    }
    Ok(BifurcationBranches {
        kappa_a,
        event,
        twin_is_symmetry_image: twin_deviation < 1e-6,
        plus,
        minus,
        twin_deviation,
    })
}

/// Random smooth even perturbation with coefficients decaying like `ρ^{m+|n|}`.
pub fn random_perturbation(cfg: &SteadyConfig, rng: &mut impl Rng, decay: f64) -> SpectralField {
    let mut f = cfg.zeros();
    let len = f.len();
    for s in 1..len {
        let (m, n) = f.mode_of_slot(s);
        let z: f64 = rng.sample(StandardNormal);
        f.coeffs_mut()[s] = z * decay.powi((m as i64 + n.abs()) as i32);
    }
    f
}

/// Fails unless `‖∇²h‖_{C⁰} < κ²/4` on the oversampled grid.
pub fn check_ball(h: &SpectralField, kappa: f64) -> Result<f64> {
    let size = sup_hessian_norm(h)?;
    let radius = 0.25 * kappa * kappa;
    if size < radius {
        Ok(size)
    } else {
        Err(Error::Precondition(format!(
            "perturbation Hessian sup-norm {size:e} is not below kappa^2/4 = {radius:e}"
        )))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeTrial {
    pub trial: usize,
    /// Fraction of the ball radius used by the start.
    pub radius_fraction: f64,
    pub start_hessian_norm: f64,
    pub outcome: ProbeOutcome,
    pub final_amplitude: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeOutcome {
    Basic,
    Nontrivial,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub a: f64,
    pub kappa: f64,
    pub seed: u64,
    /// Start radius in units of `κ²/4`.
    pub radius_scale: f64,
    /// Whether `κ a ≥ 1`, the regime where uniqueness is expected.
    pub in_uniqueness_regime: bool,
    pub trials: Vec<ProbeTrial>,
    pub converged_to_basic: usize,
    pub converged_nontrivial: usize,
    pub failed: usize,
    /// Start fields of trials that did not return to `ψ*`.
    #[serde(skip)]
    pub counterexamples: Vec<(usize, SpectralField)>,
}

impl ProbeReport {
    pub fn summary(&self) -> String {
        format!(
            "{}/{} converged to psi*",
            self.converged_to_basic,
            self.trials.len()
        )
    }
}

/// Amplitude below which a converged state is identified with `ψ*`.
pub const BASIC_AMPLITUDE_TOL: f64 = 1e-10;

/// Newton from `ψ* + h` for random `h` inside the ball `‖∇²h‖ < κ²/4`.
///
/// Trial `i` draws from its own stream of a seeded generator, so reports do
/// not depend on scheduling.
pub fn uniqueness_probe(kappa: f64, trials: usize, seed: u64, cfg: &SteadyConfig) -> Result<ProbeReport> {
    probe_with_radius(kappa, trials, seed, 1.0, cfg)
}

/// As [`uniqueness_probe`], with the start radius multiplied by `radius_scale`.
/// Scales above one leave the uniqueness ball and skip its gate; they are used
/// to reach nontrivial states, which lie far outside the ball.
pub fn probe_with_radius(
    kappa: f64,
    trials: usize,
    seed: u64,
    radius_scale: f64,
    cfg: &SteadyConfig,
) -> Result<ProbeReport> {
    cfg.validate()?;
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::Parameter(format!("kappa must be positive, got {kappa}")));
    }
    if !(radius_scale > 0.0) {
        return Err(Error::Parameter(format!("radius scale must be positive, got {radius_scale}")));
    }
    let results: Vec<Result<(ProbeTrial, SpectralField)>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let raw = random_perturbation(cfg, &mut rng, 0.5);
            let fraction: f64 = rng.random_range(0.05..0.95);
            let size = sup_hessian_norm(&raw)?;
            let h = raw.scaled(radius_scale * fraction * 0.25 * kappa * kappa / size);
            let start_norm = if radius_scale <= 1.0 {
                check_ball(&h, kappa)?
            } else {
                sup_hessian_norm(&h)?
            };
            let mut start = cfg.basic();
            start.axpy(1.0, &h);
            let (outcome, amp) = match newton_solve(&start, kappa, cfg) {
                Ok(p) if p.amplitude < BASIC_AMPLITUDE_TOL => (ProbeOutcome::Basic, Some(p.amplitude)),
                Ok(p) => (ProbeOutcome::Nontrivial, Some(p.amplitude)),
                Err(_) => (ProbeOutcome::Failed, None),
            };
            Ok((
                ProbeTrial {
                    trial: i,
                    radius_fraction: fraction,
                    start_hessian_norm: start_norm,
                    outcome,
                    final_amplitude: amp,
                },
                start,
            ))
        })
        .collect();
    let mut report = ProbeReport {
        a: cfg.a.value(),
        kappa,
        seed,
        radius_scale,
        in_uniqueness_regime: kappa * cfg.a.value() >= 1.0,
        trials: Vec::with_capacity(trials),
        converged_to_basic: 0,
        converged_nontrivial: 0,
        failed: 0,
        counterexamples: Vec::new(),
    };
    for r in results {
        let (trial, start) = r?;
        match trial.outcome {
            ProbeOutcome::Basic => report.converged_to_basic += 1,
            ProbeOutcome::Nontrivial => report.converged_nontrivial += 1,
            ProbeOutcome::Failed => report.failed += 1,
        }
        if trial.outcome != ProbeOutcome::Basic {
            report.counterexamples.push((trial.trial, start));
        }
        report.trials.push(trial);
    }
    Ok(report)
}
