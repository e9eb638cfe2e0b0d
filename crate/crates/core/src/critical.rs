//! Critical Ekman number `κ_a`.
//!
//! The fast path solves the continued-fraction characteristic equation
//! `P(κ) = a/(1 - a²)` by bisection. The independent check assembles the
//! three-term recurrence of the `m = 1` Fourier column as a truncated
//! generalized eigenproblem `A b = κ B b` and reads off its positive real
//! eigenvalue.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::AspectRatio;

/// Largest continued-fraction depth tried before giving up on convergence.
pub const MAX_CF_DEPTH: usize = 1 << 22;

/// Default truncation of the matrix oracle.
pub const DEFAULT_ORACLE_N: usize = 32;

/// Oracle results at `N` and `N + 8` must agree to this before the oracle is accepted.
pub const ORACLE_STABILITY_TOL: f64 = 1e-10;

/// `β_n = a² + n²` and `d_n = 2β_n / (a(β_n - 1))`.
#[derive(Debug, Clone, Copy)]
pub struct RecurrenceCoeffs {
    a: AspectRatio,
}

impl RecurrenceCoeffs {
    pub fn new(a: AspectRatio) -> Result<Self> {
        a.require_bifurcation_range()?;
        Ok(Self { a })
    }

    pub fn aspect(&self) -> AspectRatio {
        self.a
    }

    pub fn beta(&self, n: i64) -> f64 {
        self.a.wavenumber_sq(1, n)
    }

    pub fn d(&self, n: usize) -> f64 {
        let b = self.beta(n as i64);
        2.0 * b / (self.a.value() * (b - 1.0))
    }

    /// Right-hand side `a/(1 - a²)` of the characteristic equation.
    pub fn target(&self) -> f64 {
        let a = self.a.value();
        a / (1.0 - a * a)
    }
}

/// Finite truncation of `P(κ) = 1/(κ²d₁ + 1/(d₂ + 1/(κ²d₃ + 1/(d₄ + …))))`
/// with `depth` partial denominators.
pub fn stieltjes_p(kappa: f64, coeffs: &RecurrenceCoeffs, depth: usize) -> Result<f64> {
    if depth < 2 {
        return Err(Error::Parameter(format!(
            "continued-fraction depth must be at least 2, got {depth}"
        )));
    }
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::Parameter(format!("kappa must be positive, got {kappa}")));
    }
    let k2 = kappa * kappa;
    let term = |i: usize| {
        if i % 2 == 1 {
            k2 * coeffs.d(i)
        } else {
            coeffs.d(i)
        }
    };
    let mut tail = term(depth);
    for i in (1..depth).rev() {
        tail = term(i) + 1.0 / tail;
    }
    Ok(1.0 / tail)
}

/// `P(κ)` with the depth doubled until successive truncations differ by less than `tol`.
/// Returns the value and the depth used.
pub fn stieltjes_p_converged(kappa: f64, coeffs: &RecurrenceCoeffs, tol: f64) -> Result<(f64, usize)> {
    let mut depth = 16;
    let mut prev = stieltjes_p(kappa, coeffs, depth)?;
    while depth < MAX_CF_DEPTH {
        depth *= 2;
        let next = stieltjes_p(kappa, coeffs, depth)?;
        if (next - prev).abs() < tol {
            return Ok((next, depth));
        }
        prev = next;
    }
    Err(Error::SolverFailure(format!(
        "continued fraction at kappa={kappa} not converged to {tol:e} within depth {MAX_CF_DEPTH}"
    )))
}

/// Upper bound `a √((1 - a²) / (2(1 + a²)))` on `κ_a`.
pub fn bound_rhs(a: AspectRatio) -> Result<f64> {
    a.require_bifurcation_range()?;
    let a = a.value();
    Ok(a * ((1.0 - a * a) / (2.0 * (1.0 + a * a))).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalValueResult {
    pub a: f64,
    pub kappa_a: f64,
    /// Depth of the continued fraction at the root.
    pub cf_depth: usize,
    pub oracle_kappa: f64,
    /// Truncation at which the oracle was accepted.
    pub oracle_n: usize,
    pub bound: f64,
    /// `|P(κ_a) - a/(1 - a²)|`.
    pub residual: f64,
    pub in_theorem_range: bool,
}

/// Root of `P(κ) = a/(1 - a²)` by bisection, with the oracle cross-check attached.
pub fn solve_kappa_a(a: AspectRatio, tol: f64) -> Result<CriticalValueResult> {
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    let coeffs = RecurrenceCoeffs::new(a)?;
    let kappa_a = solve_continued_fraction(&coeffs, tol)?;
    let (p, cf_depth) = stieltjes_p_converged(kappa_a, &coeffs, tol / 10.0)?;
    let oracle = matrix_oracle_converged(a, DEFAULT_ORACLE_N, Closure::Asymptotic)?;
    Ok(CriticalValueResult {
        a: a.value(),
        kappa_a,
        cf_depth,
        oracle_kappa: oracle.kappa,
        oracle_n: oracle.n_trunc,
        bound: bound_rhs(a)?,
        residual: (p - coeffs.target()).abs(),
        in_theorem_range: a.in_theorem_range(),
    })
}

/// Bisection on the monotone `P(κ) - a/(1 - a²)`.
pub fn solve_continued_fraction(coeffs: &RecurrenceCoeffs, tol: f64) -> Result<f64> {
    let target = coeffs.target();
    let excess = |k: f64| -> Result<f64> {
        Ok(stieltjes_p_converged(k, coeffs, tol / 10.0)?.0 - target)
    };
    let bound = bound_rhs(coeffs.aspect())?;
    let mut hi = bound;
    let mut f_hi = excess(hi)?;
    for _ in 0..8 {
        if f_hi < 0.0 {
            break;
        }
        hi *= 2.0;
        f_hi = excess(hi)?;
    }
    let mut lo = bound / 2.0;
    let mut f_lo = excess(lo)?;
    while f_lo <= 0.0 && lo > tol {
        hi = lo;
        f_hi = f_lo;
        lo /= 2.0;
        f_lo = excess(lo)?;
    }
    if !(f_lo > 0.0 && f_hi < 0.0) {
        return Err(Error::SolverFailure(format!(
            "no sign change of P(kappa) - a/(1-a^2) on [{lo:e}, {hi:e}]: values {f_lo:e}, {f_hi:e}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Boundary treatment of the truncated recurrence at `|n| = N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Closure {
    /// `b_{±(N+1)} = 0`.
    Dirichlet,
    /// `b_{±(N+1)}` tied to `b_{±N}` through the asymptotic ratio of the recurrence
    /// (a Robin-type row that depends on `κ`, resolved by fixed-point iteration).
    Asymptotic,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub kappa: f64,
    pub n_trunc: usize,
    /// Null vector of `A - κB` on `n = -N..=N`, scaled so that `b_0 = 1`.
    pub eigenvector: Vec<f64>,
    /// Positive real eigenvalues of the final pencil.
    pub positive_real: Vec<f64>,
}

impl OracleResult {
    pub fn coefficient(&self, n: i64) -> f64 {
        self.eigenvector[(n + self.n_trunc as i64) as usize]
    }
}

/// Ratio `(β_{N+1} - 1) b_{N+1} / ((β_N - 1) b_N)` estimated from the local
/// fixed point of the recurrence, corrected for the drift of `d_n`.
fn asymptotic_ratio(kappa: f64, coeffs: &RecurrenceCoeffs, n: usize) -> f64 {
    let local = |d: f64| {
        let h = 0.5 * kappa * d;
        h - (h * h + 1.0).sqrt()
    };
    let drift = local(coeffs.d(n + 2)) - local(coeffs.d(n + 1));
    let x = kappa * coeffs.d(n + 1) - drift;
    0.5 * (x - (x * x + 4.0).sqrt())
}

/// `B⁻¹A` on indices `-N..=N` (row `n + N`), with `boundary` added to both corner diagonals.
fn pencil(coeffs: &RecurrenceCoeffs, n_trunc: usize, boundary: f64) -> DMatrix<f64> {
    let a = coeffs.aspect().value();
    let size = 2 * n_trunc + 1;
    let nn = n_trunc as i64;
    DMatrix::from_fn(size, size, |i, j| {
        let n = i as i64 - nn;
        let b2 = 2.0 * coeffs.beta(n);
        if j == i + 1 {
            a * (coeffs.beta(n + 1) - 1.0) / b2
        } else if j + 1 == i {
            -a * (coeffs.beta(n - 1) - 1.0) / b2
        } else if i == j && (i == 0 || i == size - 1) {
            a * boundary * (coeffs.beta(n) - 1.0) / b2
        } else {
            0.0
        }
    })
}

fn positive_real_eigenvalues(c: &DMatrix<f64>) -> Vec<f64> {
    let eig = c.complex_eigenvalues();
    let scale = eig.iter().fold(1e-300f64, |s, z| s.max(z.norm()));
    let mut out: Vec<f64> = eig
        .iter()
        .filter(|z| z.im.abs() <= 1e-8 * scale && z.re > 1e-8 * scale)
        .map(|z| z.re)
        .collect();
    out.sort_by(|x, y| x.total_cmp(y));
    out
}

/// Right null vector of `c - κI` from the smallest singular triple.
fn null_vector(c: &DMatrix<f64>, kappa: f64) -> Vec<f64> {
    let n = c.nrows();
    let shifted = c - DMatrix::<f64>::identity(n, n) * kappa;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("nonempty");
    v_t.row(k).iter().copied().collect()
}

/// Returns the positive real eigenvalue with an even-parity (`b_{-n} = (-1)^n b_n`) eigenvector.
fn select_critical(c: &DMatrix<f64>, near: Option<f64>) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let positive = positive_real_eigenvalues(c);
    let n_trunc = (c.nrows() - 1) / 2;
    let mut candidates: Vec<(f64, Vec<f64>)> = Vec::new();
    for &k in &positive {
        let v = null_vector(c, k);
        let b0 = v[n_trunc];
        if b0.abs() < 1e-12 {
            continue;
        }
        let v: Vec<f64> = v.iter().map(|x| x / b0).collect();
        let parity_err = (1..=n_trunc)
            .map(|n| {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                (v[n_trunc - n] - sign * v[n_trunc + n]).abs()
            })
            .fold(0.0, f64::max);
        if parity_err < 1e-6 {
            candidates.push((k, v));
        }
    }
    let chosen = match near {
        Some(k0) => candidates
            .into_iter()
            .min_by(|x, y| (x.0 - k0).abs().total_cmp(&(y.0 - k0).abs())),
        None => candidates.into_iter().max_by(|x, y| x.0.total_cmp(&y.0)),
    };
    chosen
        .map(|(k, v)| (k, v, positive.clone()))
        .ok_or_else(|| {
            Error::OracleFailure(format!(
                "no positive real eigenvalue with even-parity eigenvector among {} positive real eigenvalues {:?}",
                positive.len(),
                positive
            ))
        })
}

/// Positive real eigenvalue of the truncated pencil on `-N ≤ n ≤ N`.
pub fn matrix_oracle(a: AspectRatio, n_trunc: usize, closure: Closure) -> Result<OracleResult> {
    if n_trunc < 8 {
        return Err(Error::Parameter(format!(
            "oracle truncation must be at least 8, got {n_trunc}"
        )));
    }
    let coeffs = RecurrenceCoeffs::new(a)?;
    let dirichlet = select_critical(&pencil(&coeffs, n_trunc, 0.0), None);
    let (mut kappa, mut v, mut positive) = match (dirichlet, closure) {
        (Ok(found), _) => found,
        // Near a = 1 the eigenvector decays too slowly for b = 0 to be a usable
        // start; the asymptotic closure at the bound is.
        (Err(_), Closure::Asymptotic) => {
            let k0 = bound_rhs(a)?;
            select_critical(&pencil(&coeffs, n_trunc, asymptotic_ratio(k0, &coeffs, n_trunc)), None)?
        }
        (Err(e), Closure::Dirichlet) => return Err(e),
    };
    if closure == Closure::Asymptotic {
        let mut last_step = f64::INFINITY;
        for _ in 0..60 {
            let c = pencil(&coeffs, n_trunc, asymptotic_ratio(kappa, &coeffs, n_trunc));
            let (k, vv, pos) = select_critical(&c, Some(kappa))?;
            let step = (k - kappa).abs();
            kappa = k;
            v = vv;
            positive = pos;
            // stop once the update reaches round-off or stops shrinking
            if step <= 4.0 * f64::EPSILON * kappa || (step >= last_step && step < 1e-13 * kappa) {
                break;
            }
            last_step = step;
        }
    }
    Ok(OracleResult {
        kappa,
        n_trunc,
        eigenvector: v,
        positive_real: positive,
    })
}

/// Oracle at `N, N+8, N+16, …` until two successive truncations agree to
/// [`ORACLE_STABILITY_TOL`]; returns the larger truncation's result.
pub fn matrix_oracle_converged(a: AspectRatio, n_start: usize, closure: Closure) -> Result<OracleResult> {
    let mut prev = matrix_oracle(a, n_start, closure)?;
    let mut n = n_start;
    while n < 2048 {
        n += 8;
        let next = matrix_oracle(a, n, closure)?;
        if (next.kappa - prev.kappa).abs() < ORACLE_STABILITY_TOL {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::OracleFailure(format!(
        "oracle not stable to {ORACLE_STABILITY_TOL:e} up to N={n}"
    )))
}
