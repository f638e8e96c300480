//! Nonlinear resonances `u = τω²K_D^ω[u + |u|²u]`: residual, gauge-fixed
//! Newton solver and amplitude continuation.
//!
//! Unknowns are `(Re u, Im u, Re ω, Im ω)`. Equations are the realified
//! residual, the gauge `Im⟨φ_j, u⟩ = 0` and one amplitude constraint.

use std::io::{self, Write};

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Field, Mesh};
use crate::potential::{assemble_helmholtz, assemble_helmholtz_derivative, OperatorMatrix};
use crate::resonance::{check_lower_half_plane, ResonanceKind, ResonancePoint};

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Pointwise `N(u) = u + |u|²u`.
pub fn kerr_map(u: &Field) -> Field {
    Field { values: u.values.iter().map(|v| v * (1.0 + v.norm_sqr())).collect() }
}

/// `u − τω²K^ω[N(u)]` with `K^ω` already assembled.
pub fn nl_residual_with(k: &OperatorMatrix, tau: f64, u: &Field) -> Result<Field> {
    let omega = k.omega();
    let knu = k.apply(&kerr_map(u))?;
    Ok(u.axpy(-tau * omega * omega, &knu))
}

pub fn nl_residual(mesh: &Mesh, tau: f64, omega: Complex64, u: &Field) -> Result<Field> {
    mesh.check_len(u)?;
    nl_residual_with(&assemble_helmholtz(mesh, omega)?, tau, u)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearConfig {
    /// Kerr coefficient; the model fixes it to 1.
    pub eta: f64,
    pub newton_tol: f64,
    /// continuation step Δa
    pub max_step: f64,
    pub max_iter: usize,
    /// halvings of Δa allowed before a branch is cut (6 → Δa/64)
    pub max_halvings: u32,
    pub max_points: usize,
}

impl Default for NonlinearConfig {
    fn default() -> Self {
        Self { eta: 1.0, newton_tol: 1e-10, max_step: 0.05, max_iter: 30, max_halvings: 6, max_points: 400 }
    }
}

impl NonlinearConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta != 1.0 {
            return Err(Error::InvalidDomain("the Kerr coefficient η is fixed to 1".into()));
        }
        if !(self.newton_tol > 0.0 && self.newton_tol <= 1e-6) {
            return Err(Error::InvalidDomain(format!("newton_tol {} outside (0, 1e-6]", self.newton_tol)));
        }
        if !(self.max_step > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidDomain("continuation step and iteration cap must be positive".into()));
        }
        Ok(())
    }
}

/// The amplitude equation closing the gauge-fixed system.
#[derive(Clone, Debug)]
pub enum Constraint {
    /// `‖u‖² = 𝒩`
    Norm(f64),
    /// `Re⟨mode, u⟩ = value` for a real mode (the continuation chart)
    Projection { mode: Field, value: f64 },
}

impl Constraint {
    fn value(&self, mesh: &Mesh, u: &Field) -> f64 {
        match self {
            Constraint::Norm(n) => mesh.norm_sqr(u) - n,
            Constraint::Projection { mode, value } => mesh.inner(mode, u).re - value,
        }
    }

    fn scale(&self, mesh: &Mesh, u: &Field) -> f64 {
        match self {
            Constraint::Norm(n) => n.abs().max(1e-300),
            Constraint::Projection { mode, .. } => mesh.norm(mode) * mesh.norm(u),
        }
    }
}

/// Linearization of the Kerr residual at `(ω, u)`.
pub(crate) struct Linearization {
    /// `τω²K diag(α)` and `τω²K diag(β)`: `DR·δ = δ − (Pα x + Pβ y)` for `δ = x + iy`
    pub p_alpha: Mat<Complex64>,
    pub p_beta: Mat<Complex64>,
    /// `∂R/∂ω`
    pub d_omega: Vec<Complex64>,
    pub residual: Field,
}

pub(crate) fn linearize(mesh: &Mesh, tau: f64, omega: Complex64, u: &Field, with_omega: bool) -> Result<Linearization> {
    let k = assemble_helmholtz(mesh, omega)?;
    let n = mesh.len();
    let nu = kerr_map(u);
    let knu = k.apply(&nu)?;
    let s = tau * omega * omega;
    let residual = u.axpy(-s, &knu);
    let alpha: Vec<Complex64> = u.values.iter().map(|v| 1.0 + 2.0 * v.norm_sqr() + v * v).collect();
    let beta: Vec<Complex64> =
        u.values.iter().map(|v| Complex64::new(0.0, 1.0) * (1.0 + 2.0 * v.norm_sqr() - v * v)).collect();
    let e = k.entries();
    let p_alpha = Mat::from_fn(n, n, |i, j| s * e[(i, j)] * alpha[j]);
    let p_beta = Mat::from_fn(n, n, |i, j| s * e[(i, j)] * beta[j]);
    let d_omega = if with_omega {
        let dk = assemble_helmholtz_derivative(mesh, omega)?;
        let dknu = dk.apply(&nu)?;
        (0..n).map(|i| -tau * (2.0 * omega * knu.values[i] + omega * omega * dknu.values[i])).collect()
    } else {
        Vec::new()
    };
    Ok(Linearization { p_alpha, p_beta, d_omega, residual })
}

/// Real `2n×2n` matrix of `δ ↦ DR·δ` in the coordinates `(Re δ, Im δ)`.
pub(crate) fn realified_field_jacobian(lin: &Linearization) -> Mat<f64> {
    let n = lin.p_alpha.nrows();
    Mat::from_fn(2 * n, 2 * n, |i, j| {
        let (bi, ri) = (i / n, i % n);
        let (bj, cj) = (j / n, j % n);
        let p = if bj == 0 { lin.p_alpha[(ri, cj)] } else { lin.p_beta[(ri, cj)] };
        let v = if bi == 0 { p.re } else { p.im };
        let d = if i == j { 1.0 } else { 0.0 };
        d - v
    })
}

/// Rotates `u` so that `⟨gauge, u⟩` is real, keeping the sign of its real part.
fn align_phase(mesh: &Mesh, gauge: &Field, u: &Field) -> Result<Field> {
    let c = mesh.inner(gauge, u);
    if c.norm() <= 1e-8 * mesh.norm(gauge) * mesh.norm(u) {
        return Err(Error::GaugeDegenerate);
    }
    let mut phase = c.conj() / c.norm();
    if c.re < 0.0 {
        phase = -phase;
    }
    Ok(u.scaled(phase))
}

/// Newton solve of the gauge-fixed nonlinear system from `(omega0, u0)`.
pub fn solve_nonlinear(
    mesh: &Mesh,
    tau: f64,
    omega0: Complex64,
    u0: &Field,
    gauge: &Field,
    constraint: &Constraint,
    config: &NonlinearConfig,
) -> Result<ResonancePoint> {
    config.validate()?;
    mesh.check_len(u0)?;
    mesh.check_len(gauge)?;
    let n = mesh.len();
    let w = mesh.weights();
    let w_mean = mesh.total_measure() / n as f64;
    let mut u = align_phase(mesh, gauge, u0)?;
    let mut omega = omega0;
    let mut last = f64::INFINITY;
    for iter in 0..=config.max_iter {
        let lin = linearize(mesh, tau, omega, &u, iter < config.max_iter)?;
        let unorm = mesh.norm(&u);
        let rel = mesh.norm(&lin.residual) / unorm;
        let g = mesh.inner(gauge, &u).im;
        let cval = constraint.value(mesh, &u);
        let gauge_ok = g.abs() <= config.newton_tol * mesh.norm(gauge) * unorm;
        let constraint_ok = cval.abs() <= 1e-13 * constraint.scale(mesh, &u);
        last = rel;
        if rel <= config.newton_tol && gauge_ok && constraint_ok {
            if mesh.inner(gauge, &u).norm() <= 1e-8 * mesh.norm(gauge) * unorm {
                return Err(Error::GaugeDegenerate);
            }
            check_lower_half_plane(omega)?;
            return ResonancePoint::new(mesh, tau, omega, u, rel, ResonanceKind::Nonlinear, iter);
        }
        if iter == config.max_iter {
            break;
        }
        let m = 2 * n + 2;
        let fj = realified_field_jacobian(&lin);
        let d = &lin.d_omega;
        let jac = Mat::from_fn(m, m, |i, j| {
            if i < 2 * n {
                if j < 2 * n {
                    fj[(i, j)]
                } else {
                    let di = d[i % n];
                    match (i < n, j == 2 * n) {
                        (true, true) => di.re,
                        (true, false) => -di.im,
                        (false, true) => di.im,
                        (false, false) => di.re,
                    }
                }
            } else if i == 2 * n {
                // gauge: Σ w φ Im δ
                if j >= n && j < 2 * n {
                    w[j - n] * gauge.values[j - n].re / w_mean
                } else {
                    0.0
                }
            } else if j < 2 * n {
                let cell = j % n;
                let coef = match constraint {
                    Constraint::Norm(_) => {
                        let v = u.values[cell];
                        2.0 * if j < n { v.re } else { v.im }
                    }
                    Constraint::Projection { mode, .. } => {
                        if j < n {
                            mode.values[cell].re
                        } else {
                            0.0
                        }
                    }
                };
                w[cell] * coef / w_mean
            } else {
                0.0
            }
        });
        let rhs = Mat::from_fn(m, 1, |i, _| {
            if i < n {
                -lin.residual.values[i].re
            } else if i < 2 * n {
                -lin.residual.values[i - n].im
            } else if i == 2 * n {
                -g / w_mean
            } else {
                -cval / w_mean
            }
        });
        let step = jac.partial_piv_lu().solve(&rhs);
        if (0..m).any(|i| !step[(i, 0)].is_finite()) {
            return Err(Error::SingularSystem);
        }
        for i in 0..n {
            u.values[i] += Complex64::new(step[(i, 0)], step[(i + n, 0)]);
        }
        omega += Complex64::new(step[(2 * n, 0)], step[(2 * n + 1, 0)]);
        if !(omega.re.is_finite() && omega.im.is_finite()) {
            return Err(Error::SingularSystem);
        }
    }
    Err(Error::NonConvergence { iterations: config.max_iter, residual: last })
}

/// Solve with `‖u‖² = 𝒩` from a seed point, gauge on `gauge_mode`.
pub fn solve_nonlinear_at_amplitude(
    mesh: &Mesh,
    tau: f64,
    n_target: f64,
    seed: &ResonancePoint,
    gauge_mode: &Field,
    config: &NonlinearConfig,
) -> Result<ResonancePoint> {
    if !(n_target > 0.0) {
        return Err(Error::OutOfDomain(n_target, "𝒩 must be positive"));
    }
    let scale = (n_target / mesh.norm_sqr(&seed.u)).sqrt();
    let u0 = seed.u.scaled(Complex64::new(scale, 0.0));
    solve_nonlinear(mesh, tau, seed.omega, &u0, gauge_mode, &Constraint::Norm(n_target), config)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchParameter {
    A,
    N,
    PMinus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SymmetryBreaking,
}

#[derive(Clone, Debug, Serialize)]
pub struct BranchEvent {
    pub kind: EventKind,
    /// 𝒩 at the event
    pub amplitude: f64,
    pub omega: Complex64,
    /// `|⟨φ₊, u⟩|²` at the event
    pub p_plus_sq: f64,
}

#[derive(Clone, Debug)]
pub struct Branch {
    pub parameter: BranchParameter,
    /// chart value of each point (a, 𝒩 or p₋)
    pub params: Vec<f64>,
    pub points: Vec<ResonancePoint>,
    pub events: Vec<BranchEvent>,
    /// why continuation stopped early, if it did
    pub termination: Option<String>,
    /// symmetric finite-difference `∂ₐω` at `a = 0` over the first step
    pub d_omega_da0: Option<Complex64>,
    /// second difference `∂ₐ²ω` at `a = 0`
    pub d2_omega_da0: Option<Complex64>,
}

impl Branch {
    pub fn new(parameter: BranchParameter) -> Self {
        Self {
            parameter,
            params: Vec::new(),
            points: Vec::new(),
            events: Vec::new(),
            termination: None,
            d_omega_da0: None,
            d2_omega_da0: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// CSV rows `index, a, N, re_omega, im_omega, residual, symmetry, loc_metric`.
    pub fn write_csv<W: Write>(&self, mesh: &Mesh, mut out: W) -> io::Result<()> {
        writeln!(out, "index,a,N,re_omega,im_omega,residual,symmetry,loc_metric")?;
        for (i, (a, p)) in self.params.iter().zip(&self.points).enumerate() {
            writeln!(
                out,
                "{i},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}",
                a,
                p.amplitude,
                p.omega.re,
                p.omega.im,
                p.residual,
                p.symmetry.as_str(),
                mesh.localization(&p.u)
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> BranchSummary {
        BranchSummary {
            parameter: self.parameter,
            points: self.points.len(),
            first_parameter: self.params.first().copied(),
            last_parameter: self.params.last().copied(),
            max_amplitude: self.points.iter().map(|p| p.amplitude).fold(0.0, f64::max),
            events: self.events.clone(),
            termination: self.termination.clone(),
            d_omega_da0: self.d_omega_da0,
            d2_omega_da0: self.d2_omega_da0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BranchSummary {
    pub parameter: BranchParameter,
    pub points: usize,
    pub first_parameter: Option<f64>,
    pub last_parameter: Option<f64>,
    pub max_amplitude: f64,
    pub events: Vec<BranchEvent>,
    pub termination: Option<String>,
    pub d_omega_da0: Option<Complex64>,
    pub d2_omega_da0: Option<Complex64>,
}

/// Continuation in a chart `Re⟨mode, u⟩ = s` from the last of `seeds` (one
/// seed: scaling predictor; more: secant through the last two), with step
/// halving. Stops when `stop(point)` is true, after
/// `steps` points, or when the step falls below `Δs/2^max_halvings`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn continue_in_chart(
    mesh: &Mesh,
    tau: f64,
    mode: &Field,
    gauge: &Field,
    seeds: &[(f64, &ResonancePoint)],
    first_step: f64,
    steps: usize,
    config: &NonlinearConfig,
    parameter: BranchParameter,
    mut stop: impl FnMut(&ResonancePoint) -> bool,
) -> Branch {
    let mut branch = Branch::new(parameter);
    let mut history: Vec<(f64, Complex64, Field)> = seeds.iter().map(|(s, p)| (*s, p.omega, p.u.clone())).collect();
    if history.is_empty() {
        branch.termination = Some("no seed point".into());
        return branch;
    }
    let base = first_step;
    let mut ds = base;
    let floor = base / f64::from(1u32 << config.max_halvings.min(30));
    while branch.points.len() < steps.min(config.max_points) {
        let (s_prev, w_prev, u_prev) = history.last().cloned().expect("history starts non-empty");
        let s_next = s_prev + ds;
        let (w_pred, u_pred) = if history.len() >= 2 {
            let (s_pp, w_pp, u_pp) = &history[history.len() - 2];
            let t = (s_next - s_prev) / (s_prev - s_pp);
            let u = Field {
                values: u_prev.values.iter().zip(&u_pp.values).map(|(a, b)| a + (a - b) * t).collect(),
            };
            (w_prev + (w_prev - w_pp) * t, u)
        } else {
            let scale = if s_prev.abs() > 0.0 { s_next / s_prev } else { 1.0 };
            (w_prev, u_prev.scaled(Complex64::new(scale, 0.0)))
        };
        let constraint = Constraint::Projection { mode: mode.clone(), value: s_next };
        match solve_nonlinear(mesh, tau, w_pred, &u_pred, gauge, &constraint, config) {
            Ok(p) => {
                history.push((s_next, p.omega, p.u.clone()));
                branch.params.push(s_next);
                let done = stop(&p);
                branch.points.push(p);
                if done {
                    break;
                }
                ds = if base > 0.0 { (ds * 1.5).min(base) } else { (ds * 1.5).max(base) };
            }
            Err(e) => {
                ds *= 0.5;
                if ds.abs() < floor.abs() * (1.0 - 1e-12) {
                    branch.termination = Some(format!("step below Δ/{}: {e}", 1u32 << config.max_halvings));
                    break;
                }
            }
        }
    }
    branch
}

/// Principal branch in the chart `a = Re⟨φ_j, u⟩`, started from the linear
/// resonance `linear` (the `a → 0` limit), up to `‖u‖² ≥ n_max`.
pub fn continue_branch(
    mesh: &Mesh,
    tau: f64,
    linear: &ResonancePoint,
    mode: &Field,
    n_max: f64,
    config: &NonlinearConfig,
) -> Result<Branch> {
    config.validate()?;
    if !(n_max > 0.0) {
        return Err(Error::OutOfDomain(n_max, "𝒩_max must be positive"));
    }
    // linear state scaled to ⟨φ_j, φ_*⟩ = 1
    let c = mesh.inner(mode, &linear.u);
    if c.norm() <= 1e-8 * mesh.norm(mode) * mesh.norm(&linear.u) {
        return Err(Error::GaugeDegenerate);
    }
    let phi_star = linear.u.scaled(1.0 / c);
    let da = config.max_step;
    // first point from the linear state directly (secant needs two points)
    let first = solve_nonlinear(
        mesh,
        tau,
        linear.omega,
        &phi_star.scaled(Complex64::new(da, 0.0)),
        mode,
        &Constraint::Projection { mode: mode.clone(), value: da },
        config,
    )?;
    let mirrored = solve_nonlinear(
        mesh,
        tau,
        first.omega,
        &first.u.scaled(-ONE),
        mode,
        &Constraint::Projection { mode: mode.clone(), value: -da },
        config,
    )?;
    let d1 = (first.omega - mirrored.omega) / (2.0 * da);
    let d2 = (first.omega - 2.0 * linear.omega + mirrored.omega) / (da * da);
    let mut branch = continue_in_chart(
        mesh,
        tau,
        mode,
        mode,
        &[(da, &first)],
        da,
        usize::MAX,
        config,
        BranchParameter::A,
        |p| p.amplitude >= n_max,
    );
    branch.params.insert(0, da);
    branch.points.insert(0, first.clone());
    branch.d_omega_da0 = Some(d1);
    branch.d2_omega_da0 = Some(d2);
    if first.amplitude >= n_max {
        branch.params.truncate(1);
        branch.points.truncate(1);
        branch.termination = None;
    }
    Ok(branch)
}

/// Checks that `reflect(u)` is again a solution at the same ω (ℤ₂ equivariance).
pub fn reflected_residual(mesh: &Mesh, point: &ResonancePoint) -> Result<f64> {
    let ru = mesh.reflect(&point.u)?;
    let r = nl_residual(mesh, point.tau, point.omega, &ru)?;
    Ok(mesh.norm(&r) / mesh.norm(&ru))
}
