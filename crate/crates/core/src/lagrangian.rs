//! Lagrangian description of steady states.
//!
//! Particles follow `−∂ₜy = u(y)` with `u = ∇×ψ`, and their flow gradient
//! `G = ∇y` solves `∂ₜG = −(∇u)(y) G`, `G(0) = I`. The resolvent
//! `T_ψ g(x) = ∫₀^∞ e^{−κs} g(y(x, s)) ds` inverts `κ + u·∇`, and a steady
//! state satisfies `−Δψ = κ T_ψ ψ*` pointwise.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{sup_hessian_norm, PointEvaluator, SpectralField};

/// Direction of particle motion relative to the velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftSign {
    /// `∂ₜy = −u(y)`.
    AgainstVelocity,
    /// `∂ₜy = u(y)`.
    WithVelocity,
}

impl DriftSign {
    fn factor(self) -> f64 {
        match self {
            DriftSign::AgainstVelocity => -1.0,
            DriftSign::WithVelocity => 1.0,
        }
    }
}

/// Velocity field of a stream function, evaluated by direct summation.
#[derive(Debug, Clone)]
pub struct Flow {
    eval: PointEvaluator,
    sign: f64,
}

impl Flow {
    pub fn new(f: &SpectralField) -> Self {
        Self::with_sign(f, DriftSign::AgainstVelocity)
    }

    pub fn with_sign(f: &SpectralField, sign: DriftSign) -> Self {
        Self {
            eval: PointEvaluator::new(f),
            sign: sign.factor(),
        }
    }

    fn drift(&self, y: [f64; 2]) -> [f64; 2] {
        let u = self.eval.velocity(y);
        [self.sign * u[0], self.sign * u[1]]
    }

    /// One classical RK4 step of the trajectory alone.
    fn step(&self, y: [f64; 2], h: f64) -> [f64; 2] {
        let k1 = self.drift(y);
        let k2 = self.drift(y_plus(y, k1, 0.5 * h));
        let k3 = self.drift(y_plus(y, k2, 0.5 * h));
        let k4 = self.drift(y_plus(y, k3, h));
        [
            y[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ]
    }

    /// Right-hand side of the joint trajectory / flow-gradient system.
    fn joint_rhs(&self, z: &Joint) -> Joint {
        let jet = self.eval.jet(z.y);
        let u = jet.velocity();
        let du = jet.velocity_gradient();
        let s = self.sign;
        let mut g = [[0.0; 2]; 2];
        for (i, row) in g.iter_mut().enumerate() {
            for (k, entry) in row.iter_mut().enumerate() {
                *entry = s * (du[i][0] * z.g[0][k] + du[i][1] * z.g[1][k]);
            }
        }
        Joint {
            y: [s * u[0], s * u[1]],
            g,
        }
    }

    fn joint_step(&self, z: &Joint, h: f64) -> Joint {
        let k1 = self.joint_rhs(z);
        let k2 = self.joint_rhs(&z.axpy(0.5 * h, &k1));
        let k3 = self.joint_rhs(&z.axpy(0.5 * h, &k2));
        let k4 = self.joint_rhs(&z.axpy(h, &k3));
        let mut out = z.clone();
        for k in [(&k1, 1.0), (&k2, 2.0), (&k3, 2.0), (&k4, 1.0)] {
            out = out.axpy(h / 6.0 * k.1, k.0);
        }
        out
    }

    /// Advances `y` by time `t` in equal steps no longer than `dt`.
    pub fn advance(&self, mut y: [f64; 2], t: f64, dt: f64) -> [f64; 2] {
        if t <= 0.0 {
            return y;
        }
        let n = (t / dt).ceil().max(1.0) as usize;
        let h = t / n as f64;
        for _ in 0..n {
            y = self.step(y, h);
        }
        y
    }
}

fn y_plus(y: [f64; 2], k: [f64; 2], c: f64) -> [f64; 2] {
    [y[0] + c * k[0], y[1] + c * k[1]]
}

#[derive(Debug, Clone)]
struct Joint {
    y: [f64; 2],
    g: [[f64; 2]; 2],
}

impl Joint {
    fn axpy(&self, c: f64, k: &Joint) -> Joint {
        let mut g = self.g;
        for i in 0..2 {
            for j in 0..2 {
                g[i][j] += c * k.g[i][j];
            }
        }
        Joint {
            y: y_plus(self.y, k.y, c),
            g,
        }
    }
}

/// Position and flow gradient of one particle at one time.
#[derive(Debug, Clone, Serialize)]
pub struct FlowMapSample {
    pub x: [f64; 2],
    pub t: f64,
    /// Unwrapped position.
    pub y: [f64; 2],
    /// `∂y_i/∂x_k`.
    pub grad_y: [[f64; 2]; 2],
    /// `|det ∇y − 1|`.
    pub det_err: f64,
}

impl FlowMapSample {
    fn new(x: [f64; 2], t: f64, z: &Joint) -> Self {
        let g = z.g;
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        Self {
            x,
            t,
            y: z.y,
            grad_y: g,
            det_err: (det - 1.0).abs(),
        }
    }

    /// Frobenius norm of `∇y`.
    pub fn grad_norm(&self) -> f64 {
        self.grad_y.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn step_plan(t_end: f64, dt: f64) -> Result<(usize, f64)> {
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
    }
    if !(t_end >= 0.0) {
        return Err(Error::Parameter(format!("end time must be non-negative, got {t_end}")));
    }
    let n = (t_end / dt).ceil() as usize;
    Ok((n, if n == 0 { 0.0 } else { t_end / n as f64 }))
}

/// Trajectory `y(x, t)` at `t = 0, h, 2h, …, t_end` with `h ≤ dt`; the flow
/// gradient is left at the identity.
pub fn integrate_trajectory(flow: &Flow, x: [f64; 2], t_end: f64, dt: f64) -> Result<Vec<FlowMapSample>> {
    let (n, h) = step_plan(t_end, dt)?;
    let id = [[1.0, 0.0], [0.0, 1.0]];
    let mut y = x;
    let mut out = Vec::with_capacity(n + 1);
    out.push(FlowMapSample::new(x, 0.0, &Joint { y, g: id }));
    for i in 1..=n {
        y = flow.step(y, h);
        out.push(FlowMapSample::new(x, i as f64 * h, &Joint { y, g: id }));
    }
    Ok(out)
}

/// Trajectory together with its flow gradient, sampled at every step.
pub fn flow_gradient(flow: &Flow, x: [f64; 2], t_end: f64, dt: f64) -> Result<Vec<FlowMapSample>> {
    let (n, h) = step_plan(t_end, dt)?;
    let mut z = Joint {
        y: x,
        g: [[1.0, 0.0], [0.0, 1.0]],
    };
    let mut out = Vec::with_capacity(n + 1);
    out.push(FlowMapSample::new(x, 0.0, &z));
    for i in 1..=n {
        z = flow.joint_step(&z, h);
        out.push(FlowMapSample::new(x, i as f64 * h, &z));
    }
    Ok(out)
}

/// Flow map at `t_end` only.
pub fn flow_map(flow: &Flow, x: [f64; 2], t_end: f64, dt: f64) -> Result<FlowMapSample> {
    let (n, h) = step_plan(t_end, dt)?;
    let mut z = Joint {
        y: x,
        g: [[1.0, 0.0], [0.0, 1.0]],
    };
    for _ in 0..n {
        z = flow.joint_step(&z, h);
    }
    Ok(FlowMapSample::new(x, t_end, &z))
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    /// `‖∇u‖_{C⁰}` (grid sup of the Frobenius norm).
    pub grad_u_norm: f64,
    /// `‖∇u − ∇u*‖_{C⁰}`.
    pub eps: f64,
    pub samples: usize,
    /// Largest `|∇y| / bound` for the exponential bound in `‖∇u‖`.
    pub max_ratio_general: f64,
    /// Largest ratio for the near-shear bound, when its hypothesis `ε ≤ 1/2` holds.
    pub max_ratio_near_shear: Option<f64>,
    pub violations: usize,
    pub notice: Option<String>,
}

/// `√2 e^{(5/4) t ‖∇u‖}`.
pub fn general_growth_bound(t: f64, grad_u_norm: f64) -> f64 {
    2f64.sqrt() * (1.25 * t * grad_u_norm).exp()
}

/// `(√2 + √5 t) e^{2t√ε}`.
pub fn near_shear_growth_bound(t: f64, eps: f64) -> f64 {
    (2f64.sqrt() + 5f64.sqrt() * t) * (2.0 * t * eps.sqrt()).exp()
}

/// Checks both growth bounds for `|∇y(x, t)|` at the given `(x, t)` samples.
pub fn check_growth_bounds(f: &SpectralField, samples: &[([f64; 2], f64)], dt: f64) -> Result<GrowthReport> {
    let grad_u_norm = sup_hessian_norm(f)?;
    let basic = SpectralField::basic(f.aspect(), f.m_max(), f.n_max())?;
    let eps = sup_hessian_norm(&f.sub(&basic))?;
    let near_shear = eps <= 0.5;
    let flow = Flow::new(f);
    let maps: Vec<Result<FlowMapSample>> = samples
        .par_iter()
        .map(|&(x, t)| flow_map(&flow, x, t, dt))
        .collect();
    let mut max_general: f64 = 0.0;
    let mut max_near: f64 = 0.0;
    let mut violations = 0;
    for m in maps {
        let m = m?;
        let g = m.grad_norm();
        let r1 = g / general_growth_bound(m.t, grad_u_norm);
        max_general = max_general.max(r1);
        let mut violated = r1 > 1.0;
        if near_shear {
            let r2 = g / near_shear_growth_bound(m.t, eps);
            max_near = max_near.max(r2);
            violated |= r2 > 1.0;
        }
        violations += violated as usize;
    }
    Ok(GrowthReport {
        grad_u_norm,
        eps,
        samples: samples.len(),
        max_ratio_general: max_general,
        max_ratio_near_shear: near_shear.then_some(max_near),
        violations,
        notice: (!near_shear).then(|| {
            format!("‖∇u − ∇u*‖ = {eps:.6e} exceeds 1/2; near-shear bound not applicable")
        }),
    })
}

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// Composite five-point Gauss–Legendre rule for `∫₀^{s_max} e^{−κs} g(y(x,s)) ds`.
#[derive(Debug, Clone, Serialize)]
pub struct TpsiQuadrature {
    pub kappa: f64,
    pub s_max: f64,
    pub panel_width: f64,
    /// RK4 step bound for the trajectory between nodes.
    pub dt: f64,
    /// Target accuracy of `T_ψ g`.
    pub tol: f64,
}

impl TpsiQuadrature {
    /// Horizon from `e^{−κ s_max} g_sup / κ < tol / 10`.
    pub fn for_tolerance(kappa: f64, g_sup: f64, tol: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::Parameter(format!("kappa must be positive, got {kappa}")));
        }
        if !(tol > 0.0) {
            return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
        }
        let s_max = horizon(kappa, g_sup, tol / 10.0).max(1.0);
        Ok(Self {
            kappa,
            s_max,
            panel_width: 0.5,
            dt: 0.02,
            tol,
        })
    }

    pub fn nodes(&self) -> usize {
        self.panels() * GL5_NODES.len()
    }

    fn panels(&self) -> usize {
        (self.s_max / self.panel_width).ceil() as usize
    }

    /// `e^{−κ s_max} g_sup / κ`.
    pub fn tail_bound(&self, g_sup: f64) -> f64 {
        (-self.kappa * self.s_max).exp() * g_sup / self.kappa
    }

    /// `(s, weight)` with `e^{−κs}` folded into the weight.
    fn rule(&self) -> Vec<(f64, f64)> {
        let panels = self.panels();
        let width = self.s_max / panels as f64;
        let mut out = Vec::with_capacity(panels * 5);
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * width;
            for (z, w) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
                let s = mid + 0.5 * width * z;
                out.push((s, 0.5 * width * w * (-self.kappa * s).exp()));
            }
        }
        out
    }
}

fn horizon(kappa: f64, g_sup: f64, tail: f64) -> f64 {
    ((g_sup / (kappa * tail)).ln() / kappa).max(0.0)
}

/// `T_ψ g(x)`; `g_sup` bounds `|g|` and sets the admissible horizon.
pub fn apply_t(
    flow: &Flow,
    g: impl Fn([f64; 2]) -> f64,
    g_sup: f64,
    quad: &TpsiQuadrature,
    x: [f64; 2],
) -> Result<f64> {
    let tail = quad.tail_bound(g_sup);
    if tail > quad.tol {
        return Err(Error::Horizon {
            tail,
            tolerance: quad.tol,
            suggested_s_max: horizon(quad.kappa, g_sup, quad.tol / 10.0),
        });
    }
    let mut y = x;
    let mut s_prev = 0.0;
    let mut total = 0.0;
    for (s, w) in quad.rule() {
        y = flow.advance(y, s - s_prev, quad.dt);
        s_prev = s;
        total += w * g(y);
    }
    Ok(total)
}

/// Tensor grid of `k × k` cell-centred points.
pub fn sample_points(f: &SpectralField, k: usize) -> Vec<[f64; 2]> {
    let l1 = f.aspect().period_x1();
    let mut out = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            out.push([(i as f64 + 0.5) * l1 / k as f64, (j as f64 + 0.5) * 2.0 * PI / k as f64]);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    /// `‖∇u − ∇u*‖_{C⁰} = ‖∇²(ψ − ψ*)‖_{C⁰}`.
    pub eps: f64,
    /// `‖∇²ψ‖_{C⁰}`.
    pub hessian_norm: f64,
    pub cond13: bool,
    pub cond14: bool,
    pub cond22: bool,
    /// `1/2 − ε`.
    pub margin13: f64,
    /// `κ²/4 − ε`.
    pub margin14: f64,
    /// `4κ/5 − ‖∇²ψ‖`.
    pub margin22: f64,
}

/// Smallness conditions on the oversampled grid (a lower bound on the sup norms).
pub fn condition_check(f: &SpectralField, kappa: f64) -> Result<ConditionReport> {
    let basic = SpectralField::basic(f.aspect(), f.m_max(), f.n_max())?;
    let eps = sup_hessian_norm(&f.sub(&basic))?;
    let hessian_norm = sup_hessian_norm(f)?;
    let margin13 = 0.5 - eps;
    let margin14 = 0.25 * kappa * kappa - eps;
    let margin22 = 0.8 * kappa - hessian_norm;
    Ok(ConditionReport {
        eps,
        hessian_norm,
        cond13: margin13 >= 0.0,
        cond14: margin14 > 0.0,
        cond22: margin22 > 0.0,
        margin13,
        margin14,
        margin22,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LagrangianReport {
    pub kappa: f64,
    pub max_error: f64,
    pub points: usize,
    pub conditions: ConditionReport,
    /// Neither smallness condition holds.
    pub outside_hypotheses: bool,
    pub s_max: f64,
}

/// `max_x |−Δψ(x) − κ T_ψ ψ*(x)|` over `points`.
pub fn lagrangian_residual(
    f: &SpectralField,
    kappa: f64,
    quad: &TpsiQuadrature,
    points: &[[f64; 2]],
) -> Result<LagrangianReport> {
    if (quad.kappa - kappa).abs() > 1e-15 * kappa {
        return Err(Error::Parameter(format!(
            "quadrature built for kappa={} used at kappa={kappa}",
            quad.kappa
        )));
    }
    let conditions = condition_check(f, kappa)?;
    let flow = Flow::new(f);
    let eval = PointEvaluator::new(f);
    let errors: Vec<Result<f64>> = points
        .par_iter()
        .map(|&x| {
            let t = apply_t(&flow, |y| y[1].cos(), 1.0, quad, x)?;
            Ok((-eval.jet(x).laplacian() - kappa * t).abs())
        })
        .collect();
    let mut max_error: f64 = 0.0;
    for e in errors {
        max_error = max_error.max(e?);
    }
    Ok(LagrangianReport {
        kappa,
        max_error,
        points: points.len(),
        outside_hypotheses: !(conditions.cond14 || conditions.cond22),
        conditions,
        s_max: quad.s_max,
    })
}
