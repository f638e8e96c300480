//! Linear subwavelength resonances `u = τω²K_D^ω[u]` and their closed-form
//! asymptotics.

use std::f64::consts::PI;
use std::io::{self, Write};

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::principal_2d_leading;
use crate::mesh::{Field, Mesh, Symmetry};
use crate::potential::{assemble_helmholtz, assemble_helmholtz_derivative};
use crate::spectra::SpectralPair;

/// Resonances with `Im ω` above this are rejected as spurious.
pub const LOWER_HALF_PLANE_MARGIN: f64 = -1e-12;
/// Tolerance for classifying resonant states as even/odd.
pub const STATE_SYMMETRY_TOL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResonanceKind {
    Linear,
    Nonlinear,
}

#[derive(Clone, Debug)]
pub struct ResonancePoint {
    pub omega: Complex64,
    pub omega_hat: Complex64,
    pub tau: f64,
    pub u: Field,
    /// `‖u − τω²K^ω[N(u)]‖ / ‖u‖`
    pub residual: f64,
    /// `𝒩 = ‖u‖²`
    pub amplitude: f64,
    pub symmetry: Symmetry,
    pub kind: ResonanceKind,
    pub iterations: usize,
}

impl ResonancePoint {
    pub(crate) fn new(mesh: &Mesh, tau: f64, omega: Complex64, u: Field, residual: f64, kind: ResonanceKind, iterations: usize) -> Result<Self> {
        let symmetry = classify_state(mesh, &u)?;
        Ok(Self {
            omega,
            omega_hat: omega * tau.sqrt(),
            tau,
            amplitude: mesh.norm_sqr(&u),
            u,
            residual,
            symmetry,
            kind,
            iterations,
        })
    }
}

pub(crate) fn classify_state(mesh: &Mesh, u: &Field) -> Result<Symmetry> {
    if mesh.reflection_map().is_none() {
        return Ok(Symmetry::None);
    }
    match mesh.symmetry_class(u, STATE_SYMMETRY_TOL) {
        Err(Error::ZeroField) => Ok(Symmetry::None),
        other => other,
    }
}

pub(crate) fn check_lower_half_plane(omega: Complex64) -> Result<()> {
    if omega.im >= LOWER_HALF_PLANE_MARGIN {
        return Err(Error::SpuriousResonance { omega });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LinearSolveOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LinearSolveOptions {
    fn default() -> Self {
        Self { max_iter: 50, tol: 1e-10 }
    }
}

/// Unit weighted norm, phase chosen so that `∫u` is real positive (or, for
/// zero-mean states, the largest entry is real positive).
pub(crate) fn normalize_phase(mesh: &Mesh, u: &Field) -> Field {
    let norm = mesh.norm(u);
    let total = mesh.integral(u);
    let anchor = if total.norm() > 1e-8 * norm * mesh.total_measure().sqrt() {
        total
    } else {
        u.values.iter().copied().fold(Complex64::new(0.0, 0.0), |m, v| if v.norm() > m.norm() * (1.0 + 1e-9) { v } else { m })
    };
    let phase = if anchor.norm() > 0.0 { anchor.conj() / anchor.norm() } else { Complex64::new(1.0, 0.0) };
    u.scaled(phase / norm)
}

fn linear_residual(mesh: &Mesh, tau: f64, omega: Complex64, k: &crate::potential::OperatorMatrix, u: &Field) -> Result<(Field, f64)> {
    let ku = k.apply(u)?;
    let r = u.axpy(-tau * omega * omega, &ku);
    let rel = mesh.norm(&r) / mesh.norm(u);
    Ok((r, rel))
}

pub fn solve_linear(mesh: &Mesh, tau: f64, omega_guess: Complex64, u_guess: &Field) -> Result<ResonancePoint> {
    solve_linear_with(mesh, tau, omega_guess, u_guess, LinearSolveOptions::default())
}

/// Newton iteration on the bordered system `(u − τω²K^ω[u], ⟨c, u⟩ − 1)`,
/// `c` the previous normalized iterate. The map is holomorphic in `(u, ω)`,
/// so the complex bordered Jacobian is exactly the realified one.
pub fn solve_linear_with(
    mesh: &Mesh,
    tau: f64,
    omega_guess: Complex64,
    u_guess: &Field,
    opts: LinearSolveOptions,
) -> Result<ResonancePoint> {
    if !(tau > 0.0) {
        return Err(Error::OutOfDomain(tau, "contrast τ must be positive"));
    }
    mesh.check_len(u_guess)?;
    if mesh.norm(u_guess) == 0.0 {
        return Err(Error::ZeroField);
    }
    let n = mesh.len();
    let w = mesh.weights();
    let mut omega = omega_guess;
    let mut u = normalize_phase(mesh, u_guess);
    let mut last = f64::INFINITY;
    for iter in 0..=opts.max_iter {
        let k = assemble_helmholtz(mesh, omega)?;
        let (r, rel) = linear_residual(mesh, tau, omega, &k, &u)?;
        last = rel;
        if rel <= opts.tol {
            let u = normalize_phase(mesh, &u);
            check_lower_half_plane(omega)?;
            return ResonancePoint::new(mesh, tau, omega, u, rel, ResonanceKind::Linear, iter);
        }
        if iter == opts.max_iter {
            break;
        }
        let dk = assemble_helmholtz_derivative(mesh, omega)?;
        let ku = k.apply(&u)?;
        let dku = dk.apply(&u)?;
        let s = tau * omega * omega;
        let jac = Mat::from_fn(n + 1, n + 1, |i, j| {
            if i < n && j < n {
                let d = if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
                d - s * k.entry(i, j)
            } else if i < n {
                -tau * (2.0 * omega * ku.values[i] + omega * omega * dku.values[i])
            } else if j < n {
                u.values[j].conj() * w[j]
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let rhs = Mat::from_fn(n + 1, 1, |i, _| if i < n { -r.values[i] } else { Complex64::new(0.0, 0.0) });
        let step = jac.partial_piv_lu().solve(&rhs);
        if (0..=n).any(|i| !step[(i, 0)].re.is_finite() || !step[(i, 0)].im.is_finite()) {
            return Err(Error::SingularSystem);
        }
        for i in 0..n {
            u.values[i] += step[(i, 0)];
        }
        omega += step[(n, 0)];
        u = normalize_phase(mesh, &u);
    }
    Err(Error::NonConvergence { iterations: opts.max_iter, residual: last })
}

/// `ω ≈ 1/√(λτ) − i(∫φ)²/(8πλ²τ)` for a simple eigenpair of the 3D `K_D`.
pub fn asymptotic_linear_3d(pair: &SpectralPair, mesh: &Mesh, tau: f64) -> Result<Complex64> {
    if mesh.dimension() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: mesh.dimension() });
    }
    let integral = mesh.integral(&pair.phi).re;
    let lam = pair.lambda;
    Ok(Complex64::new(1.0 / (lam * tau).sqrt(), -integral * integral / (8.0 * PI * lam * lam * tau)))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime2d {
    /// resonance with near-constant state; needs `|D|`
    Principal { area: f64 },
    /// resonance attached to an eigenvalue `μ_j` of `K̃_D`
    Bulk { mu: f64 },
}

/// Leading 2D asymptotics: `sqrt(4π/(|D|τ ln τ))` or `1/√(τμ_j)`.
pub fn asymptotic_linear_2d(regime: Regime2d, tau: f64) -> Result<Complex64> {
    if !(tau > 1.0) {
        return Err(Error::OutOfDomain(tau, "2D asymptotics need τ > 1"));
    }
    Ok(Complex64::new(
        match regime {
            Regime2d::Principal { area } => (4.0 * PI / (area * tau * tau.ln())).sqrt(),
            Regime2d::Bulk { mu } => 1.0 / (tau * mu).sqrt(),
        },
        0.0,
    ))
}

/// Lambert-W refined principal value `ω̂₀/√τ` solving `ω̂₀² ln(εω̂₀) = −2π/|D|`.
pub fn principal_2d_refined(area: f64, tau: f64) -> Result<f64> {
    let eps = 1.0 / tau.sqrt();
    Ok(principal_2d_leading(eps, area)? * eps)
}

/// CSV rows `tau, re_omega, im_omega, residual, symmetry, mode_index`.
pub fn write_resonance_csv<W: Write>(rows: &[(usize, ResonancePoint)], mut out: W) -> io::Result<()> {
    writeln!(out, "tau,re_omega,im_omega,residual,symmetry,mode_index")?;
    for (mode, p) in rows {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{},{mode}",
            p.tau,
            p.omega.re,
            p.omega.im,
            p.residual,
            p.symmetry.as_str()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, DomainSpec};
    use crate::potential::assemble_newtonian;
    use crate::spectra::top_eigenpairs;

    fn ball_setup(h: f64) -> (Mesh, SpectralPair) {
        let mesh = build_mesh(&DomainSpec::ball(1.0, h)).unwrap();
        let pair = top_eigenpairs(&assemble_newtonian(&mesh).unwrap(), &mesh, 1).unwrap().remove(0);
        (mesh, pair)
    }

    #[test]
    fn unit_ball_asymptotic_closed_form() {
        // analytic data λ₀ = 4/π², (∫φ₀)² = 128/π³
        let mesh = build_mesh(&DomainSpec::ball(1.0, 0.5)).unwrap();
        let pair = SpectralPair {
            lambda: 4.0 / (PI * PI),
            phi: mesh.constant_field((128.0 / PI.powi(3)).sqrt() / mesh.total_measure()),
            multiplicity_gap: 1.0,
            symmetry: Symmetry::Even,
            residual: 0.0,
            cluster: 0,
        };
        let w = asymptotic_linear_3d(&pair, &mesh, 1e4).unwrap();
        assert!((w.re - PI / 200.0).abs() < 1e-12);
        assert!((w.im + 1e-4).abs() < 1e-15);
        let w4 = asymptotic_linear_3d(&pair, &mesh, 4e4).unwrap();
        assert!((w4.re - 0.5 * w.re).abs() < 1e-15);
        assert!((w4.im - 0.25 * w.im).abs() < 1e-18);
    }

    #[test]
    fn two_d_leading_formulas() {
        let w = asymptotic_linear_2d(Regime2d::Principal { area: PI }, 1e6).unwrap();
        assert!((w.re - 5.381e-4).abs() < 1e-7, "{w}");
        let b = asymptotic_linear_2d(Regime2d::Bulk { mu: 0.04 }, 1e6).unwrap();
        assert!((b.re - 1e-3 / 0.2).abs() < 1e-15);
        let r = principal_2d_refined(PI, 1e6).unwrap();
        let wh = r * 1e3;
        assert!((wh * wh * (1e-3 * wh).ln() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn ball_resonance_and_conjugate_seed() {
        let (mesh, pair) = ball_setup(0.25);
        let seed = asymptotic_linear_3d(&pair, &mesh, 1e4).unwrap();
        let p = solve_linear(&mesh, 1e4, seed, &pair.phi).unwrap();
        assert!(p.residual <= 1e-10 && p.omega.im < 0.0);
        assert!((p.omega.re - seed.re).abs() / seed.re < 1e-3, "{} vs {}", p.omega, seed);
        assert!((p.omega.im / seed.im - 1.0).abs() < 0.1);
        let q = solve_linear(&mesh, 1e4, -seed.conj(), &pair.phi.conj()).unwrap();
        assert!((q.omega + p.omega.conj()).norm() < 1e-10 * p.omega.norm());
        let diff = q.u.axpy(Complex64::new(-1.0, 0.0), &p.u.conj());
        assert!(mesh.norm(&diff) < 1e-8);
    }

    #[test]
    fn disk_principal_resonance() {
        let mesh = build_mesh(&DomainSpec::disk(1.0, 0.2)).unwrap();
        let seed = principal_2d_refined(mesh.total_measure(), 1e6).unwrap();
        let p = solve_linear(&mesh, 1e6, Complex64::new(seed, 0.0), &mesh.constant_field(1.0)).unwrap();
        assert!(p.omega.im < 0.0 && p.residual <= 1e-10);
        let lead = asymptotic_linear_2d(Regime2d::Principal { area: mesh.total_measure() }, 1e6).unwrap();
        assert!((p.omega.re / lead.re - 1.0).abs() < 0.2, "{} vs {}", p.omega, lead);
        let mean = mesh.integral(&p.u) / mesh.total_measure();
        let spread = mesh.norm(&p.u.axpy(-mean, &mesh.constant_field(1.0)));
        assert!(spread < 0.5 / (1e6f64).ln(), "{spread}");
    }

    #[test]
    fn rejects_bad_input_and_nonconvergence() {
        let (mesh, pair) = ball_setup(0.5);
        assert!(matches!(solve_linear(&mesh, 1e4, Complex64::new(0.01, 0.0), &Field::zeros(mesh.len())), Err(Error::ZeroField)));
        assert!(solve_linear(&mesh, -1.0, Complex64::new(0.01, 0.0), &pair.phi).is_err());
        let opts = LinearSolveOptions { max_iter: 0, tol: 1e-10 };
        assert!(matches!(
            solve_linear_with(&mesh, 1e4, Complex64::new(0.02, 0.0), &pair.phi, opts),
            Err(Error::NonConvergence { .. })
        ));
        assert!(matches!(check_lower_half_plane(Complex64::new(0.1, 0.0)), Err(Error::SpuriousResonance { .. })));
    }

    #[test]
    fn csv_rows() {
        let (mesh, pair) = ball_setup(0.5);
        let seed = asymptotic_linear_3d(&pair, &mesh, 1e3).unwrap();
        let p = solve_linear(&mesh, 1e3, seed, &pair.phi).unwrap();
        let mut buf = Vec::new();
        write_resonance_csv(&[(0, p)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row.len(), 6);
        assert_eq!(row[5], "0");
        assert!(row[2].parse::<f64>().unwrap() < 0.0);
    }
}
