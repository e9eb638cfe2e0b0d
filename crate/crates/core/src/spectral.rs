//! Even cosine-series representation of stream functions on the periodic
//! channel `[0, 2π/a] × [0, 2π]`.
//!
//! A [`SpectralField`] stores `ψ = Σ b[m][n] cos(m a x₁ + n x₂)` for
//! `0 ≤ m ≤ M`, `-N ≤ n ≤ N`. For `m = 0` the `n` and `-n` terms coincide, so
//! only `n ≥ 0` is stored there; the `(0, 0)` slot holds the mean, which the
//! constructors keep at zero.
//!
//! Grid transforms are separable partial sums over precomputed trigonometric
//! tables. Grid point `i` of `G₁` sits at `x₁ = i (2π/a) / G₁`, so the phase
//! `m a x₁ = 2π m i / G₁` does not depend on `a`.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower edge of the aspect-ratio range covered by the existence theorem.
pub const THEOREM_A_MIN: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Relative tolerance used by [`analyze`] when checking even symmetry.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Channel aspect ratio `a`; the domain is `[0, 2π/a] × [0, 2π]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AspectRatio(f64);

impl AspectRatio {
    /// Accepts any finite `a > 0`.
    pub fn new(a: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::Parameter(format!("a must be positive, got {a}")));
        }
        Ok(Self(a))
    }

    /// Accepts `0 < a < 1`, the range where the bifurcation analysis is defined.
    pub fn for_bifurcation(a: f64) -> Result<Self> {
        if !(a.is_finite() && a > 0.0 && a < 1.0) {
            return Err(Error::Parameter(format!("a must lie in (0,1), got {a}")));
        }
        Ok(Self(a))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// `1/√2 ≤ a < 1`.
    pub fn in_theorem_range(self) -> bool {
        self.0 >= THEOREM_A_MIN && self.0 < 1.0
    }

    pub fn require_bifurcation_range(self) -> Result<()> {
        if self.0 < 1.0 {
            Ok(())
        } else {
            Err(Error::Parameter(format!(
                "a must lie in (0,1), got {}",
                self.0
            )))
        }
    }

    /// Zonal period `2π/a`.
    pub fn period_x1(self) -> f64 {
        2.0 * PI / self.0
    }

    pub fn area(self) -> f64 {
        self.period_x1() * 2.0 * PI
    }

    /// `m²a² + n²`.
    pub fn wavenumber_sq(self, m: usize, n: i64) -> f64 {
        let ma = m as f64 * self.0;
        ma * ma + (n * n) as f64
    }
}

impl TryFrom<f64> for AspectRatio {
    type Error = Error;
    fn try_from(a: f64) -> Result<Self> {
        Self::new(a)
    }
}

impl From<AspectRatio> for f64 {
    fn from(a: AspectRatio) -> f64 {
        a.0
    }
}

/// Truncated even cosine series on the channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    a: AspectRatio,
    m_max: usize,
    n_max: usize,
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(a: AspectRatio, m_max: usize, n_max: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::Parameter("N must be at least 1".into()));
        }
        Ok(Self {
            a,
            m_max,
            n_max,
            coeffs: vec![0.0; Self::storage_len(m_max, n_max)],
        })
    }

    /// The basic zonal state `ψ* = cos x₂`.
    pub fn basic(a: AspectRatio, m_max: usize, n_max: usize) -> Result<Self> {
        let mut f = Self::zeros(a, m_max, n_max)?;
        f.set(0, 1, 1.0);
        Ok(f)
    }

    fn storage_len(m_max: usize, n_max: usize) -> usize {
        n_max + 1 + m_max * (2 * n_max + 1)
    }

    pub fn aspect(&self) -> AspectRatio {
        self.a
    }

    pub fn m_max(&self) -> usize {
        self.m_max
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Storage slot of `(m, n)`, or `None` when outside the truncation.
    /// `(0, -n)` maps to the same slot as `(0, n)`.
    pub fn slot(&self, m: usize, n: i64) -> Option<usize> {
        let nn = self.n_max as i64;
        if m > self.m_max || n.abs() > nn {
            return None;
        }
        if m == 0 {
            Some(n.unsigned_abs() as usize)
        } else {
            Some(self.n_max + 1 + (m - 1) * (2 * self.n_max + 1) + (n + nn) as usize)
        }
    }

    /// Wave indices of a storage slot.
    pub fn mode_of_slot(&self, slot: usize) -> (usize, i64) {
        if slot <= self.n_max {
            (0, slot as i64)
        } else {
            let k = slot - self.n_max - 1;
            let width = 2 * self.n_max + 1;
            (1 + k / width, (k % width) as i64 - self.n_max as i64)
        }
    }

    pub fn get(&self, m: usize, n: i64) -> f64 {
        self.slot(m, n).map_or(0.0, |s| self.coeffs[s])
    }

    /// Sets `b[m][n]`. Panics when `(m, n)` lies outside the truncation.
    pub fn set(&mut self, m: usize, n: i64, value: f64) {
        let s = self
            .slot(m, n)
            .unwrap_or_else(|| panic!("mode ({m},{n}) outside truncation"));
        self.coeffs[s] = value;
    }

    /// Adds to `b[m][n]`, silently dropping modes outside the truncation.
    pub fn add(&mut self, m: usize, n: i64, value: f64) {
        if let Some(s) = self.slot(m, n) {
            self.coeffs[s] += value;
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Iterates `(m, n, b)` over every stored slot including the mean slot.
    pub fn modes(&self) -> impl Iterator<Item = (usize, i64, f64)> + '_ {
        self.coeffs.iter().enumerate().map(move |(s, &b)| {
            let (m, n) = self.mode_of_slot(s);
            (m, n, b)
        })
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn is_zero_mean(&self) -> bool {
        self.coeffs[0] == 0.0
    }

    pub fn enforce_zero_mean(&mut self) {
        self.coeffs[0] = 0.0;
    }

    /// Number of unknowns once the mean slot is removed.
    pub fn unknown_count(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn unknowns(&self) -> &[f64] {
        &self.coeffs[1..]
    }

    pub fn set_unknowns(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.unknown_count());
        self.coeffs[0] = 0.0;
        self.coeffs[1..].copy_from_slice(values);
    }

    /// Same field in a different truncation; modes outside it are dropped.
    pub fn resized(&self, m_max: usize, n_max: usize) -> Result<Self> {
        let mut out = Self::zeros(self.a, m_max, n_max)?;
        for (m, n, b) in self.modes() {
            if let Some(s) = out.slot(m, n) {
                out.coeffs[s] = b;
            }
        }
        Ok(out)
    }

    fn assert_compatible(&self, other: &Self) {
        assert!(
            self.m_max == other.m_max && self.n_max == other.n_max && self.a == other.a,
            "incompatible spectral fields"
        );
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        self.assert_compatible(other);
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += alpha * y;
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|x| *x *= alpha);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Euclidean norm of the coefficient vector.
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Physical L₂ norm over the channel, from Parseval.
    pub fn l2_norm(&self) -> f64 {
        let half_sum: f64 = self.coeffs[1..].iter().map(|x| 0.5 * x * x).sum();
        (self.a.area() * (half_sum + self.coeffs[0] * self.coeffs[0])).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    /// Image under the half-period shift `x₁ → x₁ + π/a`: `b[m][n] → (-1)^m b[m][n]`.
    pub fn shifted_half_period(&self) -> Self {
        let mut out = self.clone();
        for s in 0..out.coeffs.len() {
            let (m, _) = self.mode_of_slot(s);
            if m % 2 == 1 {
                out.coeffs[s] = -out.coeffs[s];
            }
        }
        out
    }

    /// Smallest `(G₁, G₂)` with the 2/3-rule margin `G ≥ 3K + 1`.
    pub fn dealias_dims(&self) -> (usize, usize) {
        (3 * self.m_max + 1, 3 * self.n_max + 1)
    }

    /// Oversampled grid used for sup-norm estimates (four points per mode and direction).
    pub fn oversampled_dims(&self) -> (usize, usize) {
        ((4 * (2 * self.m_max + 1)).max(8), 4 * (2 * self.n_max + 1))
    }
}

/// Values on the uniform periodic grid `x₁ = i (2π/a)/G₁`, `x₂ = j 2π/G₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    a: AspectRatio,
    g1: usize,
    g2: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(a: AspectRatio, g1: usize, g2: usize) -> Self {
        Self {
            a,
            g1,
            g2,
            values: vec![0.0; g1 * g2],
        }
    }

    pub fn from_fn(a: AspectRatio, g1: usize, g2: usize, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(a, g1, g2);
        for i in 0..g1 {
            for j in 0..g2 {
                let (x1, x2) = out.point(i, j);
                out.values[i * g2 + j] = f(x1, x2);
            }
        }
        out
    }

    pub fn from_values(a: AspectRatio, g1: usize, g2: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != g1 * g2 {
            return Err(Error::Parameter(format!(
                "expected {} grid values, got {}",
                g1 * g2,
                values.len()
            )));
        }
        Ok(Self { a, g1, g2, values })
    }

    pub fn aspect(&self) -> AspectRatio {
        self.a
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.g1, self.g2)
    }

    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        (
            i as f64 * self.a.period_x1() / self.g1 as f64,
            j as f64 * 2.0 * PI / self.g2 as f64,
        )
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.g2 + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    /// L₂ norm over the channel by the rectangle rule (exact for resolved trigonometric fields).
    pub fn l2_norm(&self) -> f64 {
        let ms = self.values.iter().map(|x| x * x).sum::<f64>() / self.values.len() as f64;
        (ms * self.a.area()).sqrt()
    }

    /// Mean of the pointwise product with another grid field.
    pub fn mean_product(&self, other: &Self) -> f64 {
        assert_eq!(self.dims(), other.dims());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(x, y)| x * y)
            .sum::<f64>()
            / self.values.len() as f64
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.dims(), other.dims());
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Self {
            a: self.a,
            g1: self.g1,
            g2: self.g2,
            values,
        }
    }

    /// `max |g(x) - g(-x)|` over the grid.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.g1 {
            let ri = (self.g1 - i) % self.g1;
            for j in 0..self.g2 {
                let rj = (self.g2 - j) % self.g2;
                worst = worst.max((self.at(i, j) - self.at(ri, rj)).abs());
            }
        }
        worst
    }

    /// Spectral derivative along `axis` (0 for x₁, 1 for x₂) by a full 2-D FFT.
    /// The Nyquist mode of an even-length axis is discarded.
    pub fn derivative(&self, axis: usize) -> GridField {
        assert!(axis < 2);
        let (g1, g2) = (self.g1, self.g2);
        let mut planner = FftPlanner::<f64>::new();
        let mut data: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2(&mut planner, &mut data, g1, g2, false);
        for i in 0..g1 {
            let k1 = wrapped_wavenumber(i, g1);
            for j in 0..g2 {
                let k2 = wrapped_wavenumber(j, g2);
                let factor = match (axis, k1, k2) {
                    (0, Some(k), Some(_)) => Complex64::new(0.0, k as f64 * self.a.value()),
                    (1, Some(_), Some(k)) => Complex64::new(0.0, k as f64),
                    _ => Complex64::new(0.0, 0.0),
                };
                data[i * g2 + j] *= factor;
            }
        }
        fft2(&mut planner, &mut data, g1, g2, true);
        let scale = 1.0 / (g1 * g2) as f64;
        GridField {
            a: self.a,
            g1,
            g2,
            values: data.iter().map(|c| c.re * scale).collect(),
        }
    }
}

fn wrapped_wavenumber(i: usize, g: usize) -> Option<i64> {
    if g % 2 == 0 && i == g / 2 {
        return None;
    }
    let k = i as i64;
    Some(if 2 * i > g { k - g as i64 } else { k })
}

fn fft2(planner: &mut FftPlanner<f64>, data: &mut [Complex64], g1: usize, g2: usize, inverse: bool) {
    let row = if inverse {
        planner.plan_fft_inverse(g2)
    } else {
        planner.plan_fft_forward(g2)
    };
    for chunk in data.chunks_mut(g2) {
        row.process(chunk);
    }
    let col = if inverse {
        planner.plan_fft_inverse(g1)
    } else {
        planner.plan_fft_forward(g1)
    };
    let mut buf = vec![Complex64::new(0.0, 0.0); g1];
    for j in 0..g2 {
        for i in 0..g1 {
            buf[i] = data[i * g2 + j];
        }
        col.process(&mut buf);
        for i in 0..g1 {
            data[i * g2 + j] = buf[i];
        }
    }
}

/// Cosine/sine tables `cos(2π r/G)`, `sin(2π r/G)` for `r < G`.
struct TrigTable {
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl TrigTable {
    fn new(g: usize) -> Self {
        let (cos, sin) = (0..g)
            .map(|r| {
                let t = 2.0 * PI * r as f64 / g as f64;
                (t.cos(), t.sin())
            })
            .unzip();
        Self { cos, sin }
    }

    #[inline]
    fn idx(&self, k: i64, i: usize) -> usize {
        (k * i as i64).rem_euclid(self.cos.len() as i64) as usize
    }
}

/// Evaluates `Σ c cos θ + s sin θ` on the grid, where `mode_terms(slot)`
/// returns `(c, s)` for each storage slot of `layout`.
fn synth_terms(
    layout: &SpectralField,
    g1: usize,
    g2: usize,
    mode_terms: impl Fn(usize, i64, f64) -> (f64, f64),
) -> GridField {
    let tx = TrigTable::new(g1);
    let ty = TrigTable::new(g2);
    let mut p = vec![0.0; (layout.m_max + 1) * g2];
    let mut q = vec![0.0; (layout.m_max + 1) * g2];
    for (m, n, b) in layout.modes() {
        if b == 0.0 {
            continue;
        }
        let (c, s) = mode_terms(m, n, b);
        let (pm, qm) = (&mut p[m * g2..(m + 1) * g2], &mut q[m * g2..(m + 1) * g2]);
        for j in 0..g2 {
            let r = ty.idx(n, j);
            let (cn, sn) = (ty.cos[r], ty.sin[r]);
            pm[j] += c * cn + s * sn;
            qm[j] += s * cn - c * sn;
        }
    }
    let mut out = GridField::zeros(layout.a, g1, g2);
    for i in 0..g1 {
        let row = &mut out.values[i * g2..(i + 1) * g2];
        for m in 0..=layout.m_max {
            let r = tx.idx(m as i64, i);
            let (cm, sm) = (tx.cos[r], tx.sin[r]);
            let (pm, qm) = (&p[m * g2..(m + 1) * g2], &q[m * g2..(m + 1) * g2]);
            for j in 0..g2 {
                row[j] += cm * pm[j] + sm * qm[j];
            }
        }
    }
    out
}

fn check_synth_dims(f: &SpectralField, g1: usize, g2: usize) -> Result<()> {
    let (need1, need2) = (2 * f.m_max + 1, 2 * f.n_max + 1);
    if g1 < need1 || g2 < need2 {
        return Err(Error::Resolution {
            g1,
            g2,
            m: f.m_max,
            n: f.n_max,
            need1,
            need2,
        });
    }
    Ok(())
}

/// Pointwise values of `f` on a `g1 × g2` grid.
pub fn synthesize(f: &SpectralField, g1: usize, g2: usize) -> Result<GridField> {
    synthesize_derivative(f, 0, 0, g1, g2)
}

/// Values of `∂₁^p ∂₂^q f` on a `g1 × g2` grid.
pub fn synthesize_derivative(
    f: &SpectralField,
    p: u32,
    q: u32,
    g1: usize,
    g2: usize,
) -> Result<GridField> {
    check_synth_dims(f, g1, g2)?;
    let a = f.a.value();
    // d^r/dθ^r cos θ = cos(θ + rπ/2)
    let (cc, ss) = match (p + q) % 4 {
        0 => (1.0, 0.0),
        1 => (0.0, -1.0),
        2 => (-1.0, 0.0),
        _ => (0.0, 1.0),
    };
    Ok(synth_terms(f, g1, g2, |m, n, b| {
        let w = (m as f64 * a).powi(p as i32) * (n as f64).powi(q as i32) * b;
        (cc * w, ss * w)
    }))
}

/// Projects an even grid field onto the `(M, N)` cosine basis, then removes the mean.
///
/// Fails with [`Error::SymmetryViolation`] when `g(-x)` differs from `g(x)` by more
/// than `SYMMETRY_TOL` relative to `max |g|` (absolute floor 1e-13).
pub fn analyze(g: &GridField, m_max: usize, n_max: usize) -> Result<SpectralField> {
    analyze_with_tolerance(g, m_max, n_max, SYMMETRY_TOL)
}

pub fn analyze_with_tolerance(
    g: &GridField,
    m_max: usize,
    n_max: usize,
    rel_tol: f64,
) -> Result<SpectralField> {
    analyze_abs(g, m_max, n_max, rel_tol * g.max_abs().max(1e-4))
}

fn analyze_abs(g: &GridField, m_max: usize, n_max: usize, tolerance: f64) -> Result<SpectralField> {
    let mut out = SpectralField::zeros(g.a, m_max, n_max)?;
    let (g1, g2) = g.dims();
    check_synth_dims(&out, g1, g2)?;
    let max_asymmetry = g.max_asymmetry();
    if max_asymmetry > tolerance {
        return Err(Error::SymmetryViolation {
            max_asymmetry,
            tolerance,
        });
    }
    let tx = TrigTable::new(g1);
    let ty = TrigTable::new(g2);
    // r[n][i] = Σ_j g cos(n y_j), s[n][i] = Σ_j g sin(n y_j), n = 0..=N
    let mut r = vec![0.0; (n_max + 1) * g1];
    let mut s = vec![0.0; (n_max + 1) * g1];
    for i in 0..g1 {
        let row = &g.values[i * g2..(i + 1) * g2];
        for n in 0..=n_max {
            let (mut rc, mut rs) = (0.0, 0.0);
            for (j, &v) in row.iter().enumerate() {
                let k = ty.idx(n as i64, j);
                rc += v * ty.cos[k];
                rs += v * ty.sin[k];
            }
            r[n * g1 + i] = rc;
            s[n * g1 + i] = rs;
        }
    }
    let norm = 2.0 / (g1 * g2) as f64;
    for slot in 1..out.coeffs.len() {
        let (m, n) = out.mode_of_slot(slot);
        let na = n.unsigned_abs() as usize;
        let sign = if n < 0 { -1.0 } else { 1.0 };
        let mut acc = 0.0;
        for i in 0..g1 {
            let k = tx.idx(m as i64, i);
            acc += tx.cos[k] * r[na * g1 + i] - sign * tx.sin[k] * s[na * g1 + i];
        }
        out.coeffs[slot] = norm * acc;
    }
    Ok(out)
}

/// `b → -(m²a² + n²) b`.
pub fn laplacian(f: &SpectralField) -> SpectralField {
    let mut out = f.clone();
    for s in 0..out.coeffs.len() {
        let (m, n) = f.mode_of_slot(s);
        out.coeffs[s] *= -f.a.wavenumber_sq(m, n);
    }
    out
}

/// `b → -b / (m²a² + n²)` on zero-mean fields.
pub fn inv_laplacian(f: &SpectralField) -> Result<SpectralField> {
    if !f.is_zero_mean() {
        return Err(Error::Precondition(format!(
            "inverse Laplacian needs a zero-mean field, mean coefficient is {}",
            f.mean()
        )));
    }
    let mut out = f.clone();
    for s in 1..out.coeffs.len() {
        let (m, n) = f.mode_of_slot(s);
        out.coeffs[s] /= -f.a.wavenumber_sq(m, n);
    }
    Ok(out)
}

/// Velocity `(u₁, u₂) = (-∂₂ψ, ∂₁ψ)` on the grid.
pub fn curl_velocity(f: &SpectralField, g1: usize, g2: usize) -> Result<(GridField, GridField)> {
    let mut u1 = synthesize_derivative(f, 0, 1, g1, g2)?;
    u1.values.iter_mut().for_each(|v| *v = -*v);
    let u2 = synthesize_derivative(f, 1, 0, g1, g2)?;
    Ok((u1, u2))
}

/// Pseudo-spectral `(∇×f)·∇(Δh)` on an explicit grid; the result keeps the
/// truncation of `h`.
pub fn advect_bilinear_on(
    f: &SpectralField,
    h: &SpectralField,
    g1: usize,
    g2: usize,
) -> Result<SpectralField> {
    let m_max = f.m_max.max(h.m_max);
    let n_max = f.n_max.max(h.n_max);
    let (need1, need2) = (3 * m_max + 1, 3 * n_max + 1);
    if g1 < need1 || g2 < need2 {
        return Err(Error::Resolution {
            g1,
            g2,
            m: m_max,
            n: n_max,
            need1,
            need2,
        });
    }
    let (u1, u2) = curl_velocity(f, g1, g2)?;
    let w = laplacian(h);
    let w1 = synthesize_derivative(&w, 1, 0, g1, g2)?;
    let w2 = synthesize_derivative(&w, 0, 1, g1, g2)?;
    let mut prod = GridField::zeros(f.a, g1, g2);
    for k in 0..prod.values.len() {
        prod.values[k] = u1.values[k] * w1.values[k] + u2.values[k] * w2.values[k];
    }
    // asymmetry is judged against the size of the factors, not of the (possibly cancelling) product
    let scale = u1.max_abs() * w1.max_abs() + u2.max_abs() * w2.max_abs();
    analyze_abs(&prod, h.m_max, h.n_max, SYMMETRY_TOL * scale.max(1e-4))
}

/// `(∇×f)·∇(Δh)` on the 2/3-rule grid of the pair.
pub fn advect_bilinear(f: &SpectralField, h: &SpectralField) -> Result<SpectralField> {
    let (g1, g2) = (
        3 * f.m_max.max(h.m_max) + 1,
        3 * f.n_max.max(h.n_max) + 1,
    );
    advect_bilinear_on(f, h, g1, g2)
}

/// Nonlinear term `(∇×ψ)·∇(Δψ)`, computed pseudo-spectrally with 2/3-rule dealiasing.
pub fn advect(f: &SpectralField) -> Result<SpectralField> {
    advect_bilinear(f, f)
}

/// `(∇×cos θ_k)·∇(Δ cos θ_l)` for unit modes `θ = m a x₁ + n x₂`:
/// `a β_l (n_k m_l − m_k n_l) · ½[cos(θ_k − θ_l) − cos(θ_k + θ_l)]`.
///
/// Returns the weight `w` of `cos(θ_k − θ_l)` together with the difference mode
/// (normalized to `m ≥ 0`) and the sum mode, whose weight is `−w`; `None` when
/// the product vanishes.
pub fn advect_triad(
    a: AspectRatio,
    (mk, nk): (usize, i64),
    (ml, nl): (usize, i64),
) -> Option<(f64, (usize, i64), (usize, i64))> {
    let cross = nk * ml as i64 - mk as i64 * nl;
    if cross == 0 {
        return None;
    }
    let w = 0.5 * a.value() * a.wavenumber_sq(ml, nl) * cross as f64;
    let (dm, dn) = (mk as i64 - ml as i64, nk - nl);
    let (dm, dn) = if dm < 0 { (-dm, -dn) } else { (dm, dn) };
    Some((w, (dm as usize, dn), (mk + ml, nk + nl)))
}

/// Exact Galerkin projection of `(∇×f)·∇(Δh)` from the product-to-sum
/// identity, accumulated into `out` (which fixes the output truncation).
pub fn accumulate_advect_triads(f: &SpectralField, h: &SpectralField, out: &mut SpectralField) {
    let a = out.a;
    for (mk, nk, bk) in f.modes() {
        if bk == 0.0 {
            continue;
        }
        for (ml, nl, bl) in h.modes() {
            if bl == 0.0 {
                continue;
            }
            if let Some((w, (dm, dn), (sm, sn))) = advect_triad(a, (mk, nk), (ml, nl)) {
                let w = w * bk * bl;
                if dm != 0 || dn != 0 {
                    out.add(dm, dn, w);
                }
                out.add(sm, sn, -w);
            }
        }
    }
}

/// Exact-triad counterpart of [`advect_bilinear`], in the truncation of `h`.
pub fn advect_bilinear_triads(f: &SpectralField, h: &SpectralField) -> SpectralField {
    let mut out = SpectralField::zeros(h.a, h.m_max, h.n_max).expect("valid truncation");
    accumulate_advect_triads(f, h, &mut out);
    out
}

/// Value and derivatives up to second order of a field at one point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LocalJet {
    pub psi: f64,
    pub d1: f64,
    pub d2: f64,
    pub d11: f64,
    pub d12: f64,
    pub d22: f64,
}

impl LocalJet {
    /// Velocity `(-∂₂ψ, ∂₁ψ)`.
    pub fn velocity(&self) -> [f64; 2] {
        [-self.d2, self.d1]
    }

    /// Velocity gradient `∂u_i/∂x_k`.
    pub fn velocity_gradient(&self) -> [[f64; 2]; 2] {
        [[-self.d12, -self.d22], [self.d11, self.d12]]
    }

    pub fn laplacian(&self) -> f64 {
        self.d11 + self.d22
    }

    /// Frobenius norm of the Hessian.
    pub fn hessian_norm(&self) -> f64 {
        (self.d11 * self.d11 + 2.0 * self.d12 * self.d12 + self.d22 * self.d22).sqrt()
    }
}

/// Direct cosine-series evaluation at arbitrary points (no interpolation).
///
/// With `θ = m a x₁ + n x₂`, `cos θ = cos(m a x₁) cos(n x₂) − sin(m a x₁) sin(n x₂)`,
/// so each zonal column reduces to a few sums over `n` of meridional harmonics.
#[derive(Debug, Clone)]
pub struct PointEvaluator {
    a: f64,
    n_max: usize,
    /// `columns[m][n + N] = b[m][n]`; column 0 holds the merged zonal modes at `n ≥ 0`.
    columns: Vec<Vec<f64>>,
}

/// Column sums `Σ_n b n^p cos(n x₂)` and `Σ_n b n^p sin(n x₂)` for `p = 0, 1, 2`.
#[derive(Default, Clone, Copy)]
struct ColumnSums {
    c: [f64; 3],
    s: [f64; 3],
}

impl PointEvaluator {
    pub fn new(f: &SpectralField) -> Self {
        let width = 2 * f.n_max + 1;
        let mut columns = vec![vec![0.0; width]; f.m_max + 1];
        for (m, n, b) in f.modes() {
            if m == 0 && n == 0 {
                continue;
            }
            columns[m][(n + f.n_max as i64) as usize] = b;
        }
        Self {
            a: f.a.value(),
            n_max: f.n_max,
            columns,
        }
    }

    fn harmonics(theta: f64, count: usize, out: &mut [(f64, f64)]) {
        let (s1, c1) = theta.sin_cos();
        let (mut c, mut s) = (1.0, 0.0);
        for slot in out.iter_mut().take(count + 1) {
            *slot = (c, s);
            let next_c = c * c1 - s * s1;
            s = s * c1 + c * s1;
            c = next_c;
        }
    }

    /// Sums over `n` for every column, up to derivative order `order`.
    fn column_sums(&self, x: [f64; 2], order: usize, visit: &mut impl FnMut(usize, f64, f64, ColumnSums)) {
        let x1 = x[0].rem_euclid(2.0 * PI / self.a);
        let x2 = x[1].rem_euclid(2.0 * PI);
        let m_max = self.columns.len() - 1;
        let mut hx = vec![(0.0, 0.0); m_max + 1];
        let mut hy = vec![(0.0, 0.0); self.n_max + 1];
        Self::harmonics(self.a * x1, m_max, &mut hx);
        Self::harmonics(x2, self.n_max, &mut hy);
        let nn = self.n_max as i64;
        for (m, col) in self.columns.iter().enumerate() {
            let mut sums = ColumnSums::default();
            for (k, &b) in col.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                let n = k as i64 - nn;
                let (cn, sn_abs) = hy[n.unsigned_abs() as usize];
                let sn = if n < 0 { -sn_abs } else { sn_abs };
                let nf = n as f64;
                let mut w = b;
                for p in 0..=order {
                    sums.c[p] += w * cn;
                    sums.s[p] += w * sn;
                    w *= nf;
                }
            }
            let (cm, sm) = hx[m];
            visit(m, cm, sm, sums);
        }
    }

    pub fn jet(&self, x: [f64; 2]) -> LocalJet {
        let mut jet = LocalJet::default();
        self.column_sums(x, 2, &mut |m, cm, sm, t| {
            let k1 = m as f64 * self.a;
            // Σ b n^p cos θ and Σ b n^p sin θ
            let cos_t = |p: usize| cm * t.c[p] - sm * t.s[p];
            let sin_t = |p: usize| sm * t.c[p] + cm * t.s[p];
            jet.psi += cos_t(0);
            jet.d1 -= k1 * sin_t(0);
            jet.d2 -= sin_t(1);
            jet.d11 -= k1 * k1 * cos_t(0);
            jet.d12 -= k1 * cos_t(1);
            jet.d22 -= cos_t(2);
        });
        jet
    }

    /// Velocity `(−∂₂ψ, ∂₁ψ)` only.
    pub fn velocity(&self, x: [f64; 2]) -> [f64; 2] {
        let (mut d1, mut d2) = (0.0, 0.0);
        self.column_sums(x, 1, &mut |m, cm, sm, t| {
            let k1 = m as f64 * self.a;
            d1 -= k1 * (sm * t.c[0] + cm * t.s[0]);
            d2 -= sm * t.c[1] + cm * t.s[1];
        });
        [-d2, d1]
    }

    pub fn value(&self, x: [f64; 2]) -> f64 {
        self.jet(x).psi
    }
}

/// Sup over the oversampled grid of the pointwise Hessian Frobenius norm.
/// A lower bound on the true sup norm.
pub fn sup_hessian_norm(f: &SpectralField) -> Result<f64> {
    let (g1, g2) = f.oversampled_dims();
    let d11 = synthesize_derivative(f, 2, 0, g1, g2)?;
    let d12 = synthesize_derivative(f, 1, 1, g1, g2)?;
    let d22 = synthesize_derivative(f, 0, 2, g1, g2)?;
    Ok(d11
        .values
        .iter()
        .zip(&d12.values)
        .zip(&d22.values)
        .map(|((a, b), c)| (a * a + 2.0 * b * b + c * c).sqrt())
        .fold(0.0, f64::max))
}

#[derive(Serialize, Deserialize)]
struct FieldJson {
    a: f64,
    #[serde(rename = "M")]
    m_max: usize,
    #[serde(rename = "N")]
    n_max: usize,
    coeffs: Vec<(usize, i64, f64)>,
}

impl SpectralField {
    /// JSON form `{a, M, N, coeffs: [[m, n, value], ...]}` listing nonzero entries only.
    pub fn to_json(&self) -> Result<String> {
        let doc = FieldJson {
            a: self.a.value(),
            m_max: self.m_max,
            n_max: self.n_max,
            coeffs: self.modes().filter(|&(_, _, b)| b != 0.0).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FieldJson = serde_json::from_str(text)?;
        let mut f = Self::zeros(AspectRatio::new(doc.a)?, doc.m_max, doc.n_max)?;
        for (m, n, b) in doc.coeffs {
            if f.slot(m, n).is_none() {
                return Err(Error::Parameter(format!(
                    "mode ({m},{n}) outside M={}, N={}",
                    doc.m_max, doc.n_max
                )));
            }
            // (0,n) and (0,-n) entries describe the same cosine
            f.add(m, n, b);
        }
        Ok(f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn a08() -> AspectRatio {
        AspectRatio::new(0.8).unwrap()
    }

    #[test]
    fn aspect_ratio_ranges() {
        assert!(AspectRatio::new(0.0).is_err());
        assert!(AspectRatio::new(1.5).is_ok());
        assert!(AspectRatio::for_bifurcation(1.0).is_err());
        assert!(AspectRatio::for_bifurcation(0.5).is_ok());
        assert!(!AspectRatio::new(0.5).unwrap().in_theorem_range());
        assert!(AspectRatio::new(THEOREM_A_MIN).unwrap().in_theorem_range());
    }

    #[test]
    fn slot_layout_roundtrip() {
        let f = SpectralField::zeros(a08(), 3, 5).unwrap();
        for s in 0..f.len() {
            let (m, n) = f.mode_of_slot(s);
            assert_eq!(f.slot(m, n), Some(s));
        }
        assert_eq!(f.slot(0, -2), f.slot(0, 2));
        assert_eq!(f.slot(4, 0), None);
        assert_eq!(f.unknown_count(), 5 + 3 * 11);
    }

    #[test]
    fn basic_state_point_values() {
        let f = SpectralField::basic(a08(), 2, 4).unwrap();
        let g = synthesize(&f, 8, 16).unwrap();
        assert_abs_diff_eq!(g.at(0, 0), 1.0, epsilon = 1e-15);
        // x₂ = π
        for i in 0..8 {
            assert_abs_diff_eq!(g.at(i, 8), -1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn single_mode_phase() {
        let mut f = SpectralField::zeros(a08(), 2, 4).unwrap();
        f.set(1, 2, 1.0);
        let g = synthesize(&f, 8, 16).unwrap();
        // x₁ = π/a is grid index 4 of 8
        assert_abs_diff_eq!(g.at(4, 0), -1.0, epsilon = 1e-14);
    }

    #[test]
    fn synthesize_rejects_small_grid() {
        let f = SpectralField::basic(a08(), 2, 4).unwrap();
        assert!(matches!(synthesize(&f, 4, 16), Err(Error::Resolution { .. })));
    }

    #[test]
    fn analyze_basic_roundtrip() {
        let f = SpectralField::basic(a08(), 3, 6).unwrap();
        let back = analyze(&synthesize(&f, 10, 20).unwrap(), 3, 6).unwrap();
        assert_abs_diff_eq!(back.get(0, 1), 1.0, epsilon = 1e-14);
        let others = back.sub(&f).max_abs();
        assert!(others < 1e-12);
    }

    #[test]
    fn analyze_removes_constant() {
        let g = GridField::from_fn(a08(), 9, 17, |_, _| 1.0);
        let f = analyze(&g, 2, 4).unwrap();
        assert_eq!(f.mean(), 0.0);
        assert!(f.max_abs() < 1e-14);
    }

    #[test]
    fn analyze_rejects_odd_field() {
        let a = a08();
        let g = GridField::from_fn(a, 9, 17, |x1, x2| (a.value() * x1 + x2).sin());
        assert!(matches!(
            analyze(&g, 2, 4),
            Err(Error::SymmetryViolation { .. })
        ));
    }

    #[test]
    fn laplacian_multipliers() {
        let a = a08();
        let f = SpectralField::basic(a, 2, 4).unwrap();
        assert_abs_diff_eq!(laplacian(&f).get(0, 1), -1.0);
        let mut g = SpectralField::zeros(a, 2, 4).unwrap();
        g.set(1, 2, 1.0);
        assert_abs_diff_eq!(laplacian(&g).get(1, 2), -4.64, epsilon = 1e-14);
        let z = SpectralField::zeros(a, 2, 4).unwrap();
        assert_eq!(laplacian(&z), z);
    }

    #[test]
    fn inv_laplacian_of_minus_basic() {
        let a = a08();
        let f = SpectralField::basic(a, 2, 4).unwrap().scaled(-1.0);
        let g = inv_laplacian(&f).unwrap();
        assert_abs_diff_eq!(g.get(0, 1), 1.0);
        let mut bad = f.clone();
        bad.set(0, 0, 0.3);
        assert!(matches!(inv_laplacian(&bad), Err(Error::Precondition(_))));
    }

    #[test]
    fn basic_state_velocity() {
        let a = a08();
        let f = SpectralField::basic(a, 1, 2).unwrap();
        let (u1, u2) = curl_velocity(&f, 8, 12).unwrap();
        for i in 0..8 {
            for j in 0..12 {
                let (_, x2) = u1.point(i, j);
                assert_abs_diff_eq!(u1.at(i, j), x2.sin(), epsilon = 1e-14);
                assert_abs_diff_eq!(u2.at(i, j), 0.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn zonal_mode_velocity() {
        let a = a08();
        let mut f = SpectralField::zeros(a, 1, 2).unwrap();
        f.set(1, 0, 1.0);
        let (u1, u2) = curl_velocity(&f, 8, 12).unwrap();
        for i in 0..8 {
            for j in 0..12 {
                let (x1, _) = u1.point(i, j);
                assert_abs_diff_eq!(u1.at(i, j), 0.0, epsilon = 1e-14);
                assert_abs_diff_eq!(u2.at(i, j), -0.8 * (0.8 * x1).sin(), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn basic_state_is_not_advected() {
        let f = SpectralField::basic(a08(), 4, 8).unwrap();
        assert!(advect(&f).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn single_plane_wave_self_advection_vanishes() {
        let a = a08();
        for &(m, n) in &[(1usize, 0i64), (1, 3), (2, -1), (3, 5), (0, 4)] {
            let mut f = SpectralField::zeros(a, 4, 8).unwrap();
            f.set(m, n, 0.7);
            assert!(advect(&f).unwrap().max_abs() < 1e-12, "mode ({m},{n})");
        }
    }

    #[test]
    fn advect_needs_dealias_grid() {
        let f = SpectralField::basic(a08(), 4, 8).unwrap();
        assert!(matches!(
            advect_bilinear_on(&f, &f, 12, 25),
            Err(Error::Resolution { .. })
        ));
    }

    #[test]
    fn point_evaluator_matches_grid() {
        let a = a08();
        let mut f = SpectralField::zeros(a, 2, 3).unwrap();
        f.set(0, 1, 1.0);
        f.set(1, -2, 0.3);
        f.set(2, 1, -0.2);
        let ev = PointEvaluator::new(&f);
        let g = synthesize(&f, 7, 9).unwrap();
        let gxx = synthesize_derivative(&f, 2, 0, 7, 9).unwrap();
        let gxy = synthesize_derivative(&f, 1, 1, 7, 9).unwrap();
        let gyy = synthesize_derivative(&f, 0, 2, 7, 9).unwrap();
        for i in 0..7 {
            for j in 0..9 {
                let (x1, x2) = g.point(i, j);
                let jet = ev.jet([x1, x2]);
                assert_abs_diff_eq!(jet.psi, g.at(i, j), epsilon = 1e-13);
                assert_abs_diff_eq!(jet.d11, gxx.at(i, j), epsilon = 1e-13);
                assert_abs_diff_eq!(jet.d12, gxy.at(i, j), epsilon = 1e-13);
                assert_abs_diff_eq!(jet.d22, gyy.at(i, j), epsilon = 1e-13);
                let u = ev.velocity([x1, x2]);
                assert_abs_diff_eq!(u[0], jet.velocity()[0], epsilon = 1e-13);
                assert_abs_diff_eq!(u[1], jet.velocity()[1], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn grid_derivative_of_mode() {
        let a = a08();
        let g = GridField::from_fn(a, 8, 10, |x1, x2| (a.value() * x1 + 2.0 * x2).cos());
        let d1 = g.derivative(0);
        let d2 = g.derivative(1);
        for i in 0..8 {
            for j in 0..10 {
                let (x1, x2) = g.point(i, j);
                let s = (a.value() * x1 + 2.0 * x2).sin();
                assert_abs_diff_eq!(d1.at(i, j), -a.value() * s, epsilon = 1e-13);
                assert_abs_diff_eq!(d2.at(i, j), -2.0 * s, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn json_roundtrip_and_merge() {
        let a = a08();
        let mut f = SpectralField::zeros(a, 2, 3).unwrap();
        f.set(0, 1, 1.0);
        f.set(1, -2, 0.123456789012345678);
        let back = SpectralField::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(back, f);
        let merged = SpectralField::from_json(
            r#"{"a":0.8,"M":1,"N":2,"coeffs":[[0,1,0.5],[0,-1,0.25]]}"#,
        )
        .unwrap();
        assert_abs_diff_eq!(merged.get(0, 1), 0.75);
        assert!(SpectralField::from_json(r#"{"a":0.8,"M":1,"N":2,"coeffs":[[3,1,0.5]]}"#).is_err());
    }

    #[test]
    fn half_period_shift() {
        let a = a08();
        let mut f = SpectralField::zeros(a, 2, 3).unwrap();
        f.set(1, 1, 0.5);
        f.set(2, 1, 0.25);
        let g = f.shifted_half_period();
        assert_eq!(g.get(1, 1), -0.5);
        assert_eq!(g.get(2, 1), 0.25);
        let ev_f = PointEvaluator::new(&f);
        let ev_g = PointEvaluator::new(&g);
        let x = [0.3, 1.1];
        assert_abs_diff_eq!(
            ev_g.value(x),
            ev_f.value([x[0] + PI / 0.8, x[1]]),
            epsilon = 1e-14
        );
    }
}
