//! Linearization about the basic state `ψ* = cos x₂`.
//!
//! In strong form the linearized operator reads `κΔφ + sin x₂ (Δ + 1) ∂₁φ`.
//! It does not couple zonal wavenumbers, and on the `m = 1` column it reduces
//! to the three-term recurrence
//! `2κβ_n b_n − a(β_{n+1} − 1) b_{n+1} + a(β_{n−1} − 1) b_{n−1} = 0`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::critical::RecurrenceCoeffs;
use crate::error::{Error, Result};
use crate::spectral::{AspectRatio, SpectralField};

/// Relative singular value below which a direction counts as kernel.
pub const KERNEL_TOL: f64 = 1e-12;
/// Relative singular value above which a direction is certainly not kernel.
pub const NONZERO_TOL: f64 = 1e-8;

/// Limit `κ/a − √(κ²/a² + 1)` of the ratios `γ_n`.
pub fn gamma_tail_limit(a: AspectRatio, kappa: f64) -> f64 {
    let r = kappa / a.value();
    r - (r * r + 1.0).sqrt()
}

/// How the backward recursion is started.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaSeed {
    TailLimit,
    Zero,
}

/// Ratios `γ_n = (β_n − 1) b_n / ((β_{n−1} − 1) b_{n−1})` for `1 ≤ n ≤ N_tail`.
#[derive(Debug, Clone, Serialize)]
pub struct GammaSequence {
    pub a: f64,
    pub kappa: f64,
    /// `gamma[n - 1] = γ_n`.
    pub gamma: Vec<f64>,
    pub tail_limit: f64,
}

impl GammaSequence {
    pub fn n_tail(&self) -> usize {
        self.gamma.len()
    }

    /// `γ_n` for `1 ≤ n ≤ N_tail`.
    pub fn get(&self, n: usize) -> f64 {
        self.gamma[n - 1]
    }
}

/// Backward recursion `γ_n = −1/(κ d_n − γ_{n+1})` from `n = N_tail` down to 1,
/// with `γ_{N_tail}` set to the tail limit.
pub fn gamma_sequence(a: AspectRatio, kappa: f64, n_tail: usize) -> Result<GammaSequence> {
    gamma_sequence_seeded(a, kappa, n_tail, GammaSeed::TailLimit)
}

pub fn gamma_sequence_seeded(
    a: AspectRatio,
    kappa: f64,
    n_tail: usize,
    seed: GammaSeed,
) -> Result<GammaSequence> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::Parameter(format!("kappa must be positive, got {kappa}")));
    }
    if n_tail < 2 {
        return Err(Error::Parameter(format!("N_tail must be at least 2, got {n_tail}")));
    }
    let coeffs = RecurrenceCoeffs::new(a)?;
    let tail_limit = gamma_tail_limit(a, kappa);
    let mut gamma = vec![0.0; n_tail];
    gamma[n_tail - 1] = match seed {
        GammaSeed::TailLimit => tail_limit,
        GammaSeed::Zero => 0.0,
    };
    for n in (1..n_tail).rev() {
        let denominator = kappa * coeffs.d(n) - gamma[n];
        if denominator.abs() < 1e-14 {
            return Err(Error::SingularRecursion { n, denominator });
        }
        gamma[n - 1] = -1.0 / denominator;
    }
    Ok(GammaSequence {
        a: a.value(),
        kappa,
        gamma,
        tail_limit,
    })
}

/// Critical eigenfunction on the `m = 1` column.
#[derive(Debug, Clone)]
pub struct Eigenfunction {
    /// Field with `M = 1`; only the `m = 1` column is populated.
    pub field: SpectralField,
    pub c: f64,
    pub kappa: f64,
    pub gammas: GammaSequence,
    /// `b_n` for `0 ≤ n ≤ N + 1` (one beyond the stored truncation).
    pub b: Vec<f64>,
    /// Largest recurrence residual over `|n| ≤ N`.
    pub recurrence_residual: f64,
}

impl Eigenfunction {
    pub fn n_max(&self) -> usize {
        self.field.n_max()
    }
}

/// Residual of the recurrence at row `n`, given coefficients as a function of `n`.
pub fn recurrence_row(a: AspectRatio, kappa: f64, n: i64, b: impl Fn(i64) -> f64) -> f64 {
    let av = a.value();
    let beta = |k: i64| a.wavenumber_sq(1, k);
    2.0 * kappa * beta(n) * b(n) - av * (beta(n + 1) - 1.0) * b(n + 1)
        + av * (beta(n - 1) - 1.0) * b(n - 1)
}

/// `b₀ = c`, `b_n = c (a² − 1)/(a² + n² − 1) γ₁⋯γ_n`, `b_{−n} = (−1)ⁿ b_n`.
pub fn build_eigenfunction(a: AspectRatio, kappa_a: f64, c: f64, n_max: usize) -> Result<Eigenfunction> {
    a.require_bifurcation_range()?;
    if n_max < 1 {
        return Err(Error::Parameter("N must be at least 1".into()));
    }
    let gammas = gamma_sequence(a, kappa_a, n_max + 200)?;
    let av = a.value();
    let mut b = vec![0.0; n_max + 2];
    let mut product = 1.0;
    b[0] = c;
    for n in 1..=n_max + 1 {
        product *= gammas.get(n);
        b[n] = c * (av * av - 1.0) / (a.wavenumber_sq(1, n as i64) - 1.0) * product;
    }
    let coef = |n: i64| {
        let k = n.unsigned_abs() as usize;
        if n < 0 && k % 2 == 1 {
            -b[k]
        } else {
            b[k]
        }
    };
    let mut field = SpectralField::zeros(a, 1, n_max)?;
    let nn = n_max as i64;
    for n in -nn..=nn {
        field.set(1, n, coef(n));
    }
    let recurrence_residual = (-nn..=nn)
        .map(|n| recurrence_row(a, kappa_a, n, coef).abs())
        .fold(0.0, f64::max);
    Ok(Eigenfunction {
        field,
        c,
        kappa: kappa_a,
        gammas,
        b,
        recurrence_residual,
    })
}

/// `κΔf + sin x₂ (Δ + 1) ∂₁f` by exact index shifts; each zonal column maps to itself.
///
/// A mode `cos(m a x₁ + n x₂)` contributes `−κβ b` at `(m, n)` and
/// `±(m a / 2)(β − 1) b` at `(m, n ∓ 1)`; shifts leaving the truncation are dropped.
pub fn apply_l_strong(f: &SpectralField, kappa: f64) -> SpectralField {
    let a = f.aspect();
    let mut out = SpectralField::zeros(a, f.m_max(), f.n_max()).expect("valid truncation");
    for (m, n, b) in f.modes() {
        if b == 0.0 || (m == 0 && n == 0) {
            continue;
        }
        let beta = a.wavenumber_sq(m, n);
        out.add(m, n, -kappa * beta * b);
        if m > 0 {
            let shift = 0.5 * m as f64 * a.value() * (beta - 1.0) * b;
            out.add(m, n - 1, shift);
            out.add(m, n + 1, -shift);
        }
    }
    out
}

/// Indices `n` spanned by the zonal column `m` in a truncation with `N`.
fn column_indices(m: usize, n_max: usize) -> Vec<i64> {
    let nn = n_max as i64;
    if m == 0 {
        (1..=nn).collect()
    } else {
        (-nn..=nn).collect()
    }
}

/// Matrix of [`apply_l_strong`] restricted to column `m` (rows/columns ordered by `n`).
pub fn column_block(a: AspectRatio, kappa: f64, m: usize, n_max: usize) -> DMatrix<f64> {
    let idx = column_indices(m, n_max);
    let size = idx.len();
    let mut mat = DMatrix::zeros(size, size);
    for (j, &n) in idx.iter().enumerate() {
        let mut unit = SpectralField::zeros(a, m, n_max).expect("valid truncation");
        unit.set(m, n, 1.0);
        let image = apply_l_strong(&unit, kappa);
        for (i, &k) in idx.iter().enumerate() {
            mat[(i, j)] = image.get(m, k);
        }
    }
    mat
}

/// Column block with row `n` divided by `β_n`, i.e. `Δ⁻¹` applied on the left.
/// This removes the `n²` growth of the diagonal so that singular values are
/// comparable across the block.
pub fn scaled_column_block(a: AspectRatio, kappa: f64, m: usize, n_max: usize) -> DMatrix<f64> {
    let idx = column_indices(m, n_max);
    let mut mat = column_block(a, kappa, m, n_max);
    for (i, &n) in idx.iter().enumerate() {
        let beta = a.wavenumber_sq(m, n);
        mat.row_mut(i).scale_mut(1.0 / beta);
    }
    mat
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelOutcome {
    /// Number of singular values below [`KERNEL_TOL`] × norm, all others above [`NONZERO_TOL`] × norm.
    Dimension(usize),
    /// Some singular value falls between the two thresholds.
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelReport {
    pub m: usize,
    pub kappa: f64,
    pub n_max: usize,
    pub outcome: KernelOutcome,
    /// Singular values relative to the block norm, ascending (first few).
    pub relative_singular_values: Vec<f64>,
    pub block_norm: f64,
    /// `Σ β(β − 1) v_n²` for the unit singular vector of the smallest singular value;
    /// proportional to `∫ Δψ (Δψ + ψ)`.
    pub quadratic_form: f64,
    /// Kernel outcome of the squared block.
    pub square_outcome: KernelOutcome,
}

impl KernelReport {
    pub fn dimension(&self) -> Option<usize> {
        match self.outcome {
            KernelOutcome::Dimension(d) => Some(d),
            KernelOutcome::Inconclusive => None,
        }
    }

    /// Whether the kernel of the squared block has the same dimension (no Jordan chain).
    pub fn semisimple(&self) -> bool {
        matches!(
            (self.outcome, self.square_outcome),
            (KernelOutcome::Dimension(d1), KernelOutcome::Dimension(d2)) if d1 == d2
        )
    }
}

fn classify(sv: &[f64]) -> KernelOutcome {
    let norm = sv.iter().copied().fold(0.0, f64::max);
    let mut dim = 0;
    for &s in sv {
        if s < KERNEL_TOL * norm {
            dim += 1;
        } else if s <= NONZERO_TOL * norm {
            return KernelOutcome::Inconclusive;
        }
    }
    KernelOutcome::Dimension(dim)
}

/// Numerical kernel dimension of the linearized operator on zonal column `m`.
///
/// Works on the `Δ⁻¹`-scaled block (same kernel). For `m = 1` at `κ_a` the
/// expected answer is one; for every other column it is zero.
pub fn kernel_check_m(a: AspectRatio, kappa: f64, m: usize, n_max: usize) -> Result<KernelReport> {
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::Parameter(format!("kappa must be positive, got {kappa}")));
    }
    if n_max < 1 {
        return Err(Error::Parameter("N must be at least 1".into()));
    }
    let idx = column_indices(m, n_max);
    let j = scaled_column_block(a, kappa, m, n_max);
    let svd = j.clone().svd(false, true);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let block_norm = sv.iter().copied().fold(0.0, f64::max);
    let (kmin, _) = sv
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("nonempty block");
    let v_t = svd.v_t.expect("requested V^T");
    let quadratic_form = idx
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let beta = a.wavenumber_sq(m, n);
            beta * (beta - 1.0) * v_t[(kmin, i)].powi(2)
        })
        .sum();
    let square_sv: Vec<f64> = (&j * &j).singular_values().iter().copied().collect();
    let mut relative: Vec<f64> = sv.iter().map(|s| s / block_norm).collect();
    relative.sort_by(|x, y| x.total_cmp(y));
    relative.truncate(4);
    Ok(KernelReport {
        m,
        kappa,
        n_max,
        outcome: classify(&sv),
        relative_singular_values: relative,
        block_norm,
        quadratic_form,
        square_outcome: classify(&square_sv),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critical::solve_kappa_a;
    use approx::assert_abs_diff_eq;

    fn aspect(a: f64) -> AspectRatio {
        AspectRatio::new(a).unwrap()
    }

    #[test]
    fn tail_limit_value() {
        assert_abs_diff_eq!(gamma_tail_limit(aspect(0.8), 0.2), 0.25 - 1.0625f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(gamma_tail_limit(aspect(0.8), 0.2), -0.780776, epsilon = 1e-6);
    }

    #[test]
    fn gamma_sequence_rejects_bad_kappa() {
        assert!(gamma_sequence(aspect(0.8), 0.0, 40).is_err());
        assert!(gamma_sequence(aspect(0.8), -1.0, 40).is_err());
    }

    #[test]
    fn gamma_cauchy_tail() {
        // the seed differs from the true γ_N by O(1/N²), so the last step only
        // settles below 1e-8 for a deep tail
        let g = gamma_sequence(aspect(0.8), 0.2, 20_000).unwrap();
        assert!((g.get(19_999) - g.get(20_000)).abs() < 1e-8);
        assert!((g.get(20_000) - g.tail_limit).abs() < 1e-6);
        assert!(g.gamma.iter().all(|x| x.abs() < 1.0 && *x < 0.0));
    }

    #[test]
    fn gamma_seed_insensitivity() {
        let a = aspect(0.8);
        let k = 0.2159232061347;
        let gap = |n| {
            let t = gamma_sequence_seeded(a, k, n, GammaSeed::TailLimit).unwrap();
            let z = gamma_sequence_seeded(a, k, n, GammaSeed::Zero).unwrap();
            (t.get(1) - z.get(1)).abs()
        };
        assert!(gap(40) < 1e-9);
        assert!(gap(80) < 1e-12);
    }

    #[test]
    fn c_zero_gives_zero_field() {
        let e = build_eigenfunction(aspect(0.8), 0.2159232061347, 0.0, 16).unwrap();
        assert_eq!(e.field.max_abs(), 0.0);
    }

    #[test]
    fn zonal_field_only_damped() {
        let a = aspect(0.8);
        let psi = SpectralField::basic(a, 2, 8).unwrap();
        let out = apply_l_strong(&psi, 0.3);
        assert_abs_diff_eq!(out.get(0, 1), -0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(out.max_abs(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn columns_do_not_couple() {
        let a = aspect(0.8);
        let mut f = SpectralField::zeros(a, 3, 8).unwrap();
        for n in -8..=8 {
            f.set(2, n, 1.0 / (1.0 + (n * n) as f64));
        }
        let out = apply_l_strong(&f, 0.4);
        for (m, _, b) in out.modes() {
            if m != 2 {
                assert_eq!(b, 0.0);
            }
        }
    }

    #[test]
    fn recurrence_matches_operator_column() {
        let a = aspect(0.8);
        let kappa = 0.37;
        let mut f = SpectralField::zeros(a, 1, 12).unwrap();
        for n in -12i64..=12 {
            f.set(1, n, (0.3 * n as f64).sin() + 0.1 * n as f64);
        }
        let out = apply_l_strong(&f, kappa);
        for n in -11i64..=11 {
            let row = recurrence_row(a, kappa, n, |k| f.get(1, k));
            assert!((row + 2.0 * out.get(1, n)).abs() < 1e-13 * (1.0 + row.abs()));
        }
    }

    #[test]
    fn eigenfunction_annihilated_at_critical_value() {
        let a = aspect(0.8);
        let r = solve_kappa_a(a, 1e-12).unwrap();
        let e = build_eigenfunction(a, r.kappa_a, 1.0, 96).unwrap();
        assert!(e.recurrence_residual < 1e-10);
        let image = apply_l_strong(&e.field, r.kappa_a);
        assert!(image.max_abs() < 1e-9);
        assert_abs_diff_eq!(e.gammas.get(1), r.kappa_a * 0.8 / (0.64 - 1.0), epsilon = 1e-8);
    }

    #[test]
    fn m1_kernel_away_from_critical_value_is_trivial() {
        let r = kernel_check_m(aspect(0.8), 0.5, 1, 64).unwrap();
        assert_eq!(r.outcome, KernelOutcome::Dimension(0));
    }

    #[test]
    fn kernel_dichotomy_at_0_8() {
        let a = aspect(0.8);
        let ka = solve_kappa_a(a, 1e-12).unwrap().kappa_a;
        for n in [64, 72] {
            let r = kernel_check_m(a, ka, 1, n).unwrap();
            assert_eq!(r.outcome, KernelOutcome::Dimension(1), "{r:?}");
            assert!(r.semisimple(), "{r:?}");
        }
        for m in [0, 2, 3] {
            for kappa in [0.05, ka, 0.5, 1.0] {
                let r = kernel_check_m(a, kappa, m, 64).unwrap();
                assert_eq!(r.outcome, KernelOutcome::Dimension(0), "{r:?}");
                if m >= 2 {
                    assert!(r.quadratic_form > 0.0);
                }
            }
        }
    }
}
