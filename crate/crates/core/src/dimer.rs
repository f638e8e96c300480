//! Symmetric dimers: the two-mode reduced model, its symmetry-breaking
//! threshold, detection of the pitchfork on the full symmetric branch, the
//! two asymmetric (particle-localized) branches, and the 2D obstruction.
//!
//! Modes: `φ₊` (even) and `φ₋` (odd). In 3D both are eigenfunctions of the
//! Newtonian potential; in 2D `φ₊` is the constant and `φ₋` the leading odd
//! eigenfunction of `K̃_D`.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::io::{self, Write};

use faer::linalg::solvers::Solve;
use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::eta_omega;
use crate::mesh::{Field, Mesh, Symmetry};
use crate::nonlinear::{
    continue_branch, continue_in_chart, linearize, solve_nonlinear, solve_nonlinear_at_amplitude, Branch, BranchEvent,
    BranchParameter, Constraint, EventKind, Linearization, NonlinearConfig,
};
use crate::potential::{assemble_newtonian, assemble_tilde};
use crate::resonance::{
    asymptotic_linear_2d, asymptotic_linear_3d, principal_2d_refined, solve_linear, Regime2d, ResonancePoint,
};
use crate::spectra::{top_eigenpairs, SpectralPair, SYMMETRY_TOL};

/// Overlaps with an odd number of `φ₋` factors must vanish to this level.
pub const PARITY_TOL: f64 = 1e-12;
/// Relative width of the 𝒩-bracket at which the bisection stops.
pub const BISECTION_WIDTH: f64 = 1e-3;
/// Branch-switch perturbations, as fractions of `‖u‖`.
pub const SWITCH_FRACTIONS: [f64; 5] = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1];
/// The 2D principal branch must keep `σ_odd` above this fraction of its `𝒩 → 0` value.
pub const OBSTRUCTION_FLOOR: f64 = 0.1;

const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// The even/odd mode pair of a symmetric dimer.
#[derive(Clone, Debug)]
pub struct DimerModes {
    /// unit-norm even mode (in 2D the normalized constant)
    pub plus: Field,
    /// unit-norm odd mode
    pub minus: Field,
    /// 3D: eigenvalue of `φ₊`; 2D: `⟨1_D, K_D[1]⟩`
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    /// relative distance of `λ₋` to the rest of the spectrum
    pub minus_gap: f64,
    /// leading eigenpairs used to pick the modes (descending)
    pub spectrum: Vec<SpectralPair>,
}

/// Extracts `φ±` from the static operator of a symmetric dimer mesh.
pub fn dimer_modes(mesh: &Mesh) -> Result<DimerModes> {
    if mesh.reflection_map().is_none() {
        return Err(Error::NotSymmetric);
    }
    match mesh.dimension() {
        3 => {
            let k = assemble_newtonian(mesh)?;
            let spectrum = top_eigenpairs(&k, mesh, 4.min(mesh.len()))?;
            if spectrum.len() < 2 {
                return Err(Error::TooManyEigenpairs { requested: 2, available: spectrum.len() });
            }
            let (p, m) = (&spectrum[0], &spectrum[1]);
            if p.symmetry != Symmetry::Even || m.symmetry != Symmetry::Odd {
                return Err(Error::SymmetryCheck(format!(
                    "leading pair classifies as ({}, {}), expected (even, odd)",
                    p.symmetry.as_str(),
                    m.symmetry.as_str()
                )));
            }
            if spectrum[1].cluster == spectrum[0].cluster || spectrum.get(2).is_some_and(|q| q.cluster == m.cluster) {
                return Err(Error::SymmetryCheck("λ₊ or λ₋ is not simple".into()));
            }
            Ok(DimerModes {
                plus: p.phi.clone(),
                minus: m.phi.clone(),
                lambda_plus: p.lambda,
                lambda_minus: m.lambda,
                minus_gap: m.multiplicity_gap / m.lambda.abs(),
                spectrum,
            })
        }
        2 => {
            let kt = assemble_tilde(mesh)?;
            let spectrum = top_eigenpairs(&kt, mesh, 6.min(mesh.len()))?;
            let m = spectrum
                .iter()
                .find(|q| q.symmetry == Symmetry::Odd)
                .ok_or_else(|| Error::SymmetryCheck("no odd mode among the leading eigenpairs of K̃_D".into()))?;
            if spectrum.iter().filter(|q| q.cluster == m.cluster).count() > 1 {
                return Err(Error::SymmetryCheck("λ₋ of K̃_D is not simple".into()));
            }
            let area = mesh.total_measure();
            let one = mesh.constant_field(1.0);
            let k = assemble_newtonian(mesh)?;
            let lambda_plus = mesh.integral(&k.apply(&one)?).re / area;
            Ok(DimerModes {
                plus: mesh.constant_field(1.0 / area.sqrt()),
                minus: m.phi.clone(),
                lambda_plus,
                lambda_minus: m.lambda,
                minus_gap: m.multiplicity_gap / m.lambda.abs(),
                spectrum,
            })
        }
        d => Err(Error::DimensionMismatch { expected: 3, got: d }),
    }
}

/// The constants `a_klmn` of the reduced model, grouped by their parity class.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModeCoefficients {
    pub dimension: usize,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub a_pp: f64,
    pub a_pm: f64,
    pub a_mm: f64,
    /// 2D only: `⟨φ₋, K_D[φ₋]⟩`
    pub a_mp: Option<f64>,
    /// `|D|`
    pub measure: f64,
    /// largest `|a_klmn|` with an odd number of `−` indices
    pub odd_overlap: f64,
}

impl ModeCoefficients {
    /// Coefficients given directly (e.g. from another discretization).
    pub fn new_3d(lambda_plus: f64, lambda_minus: f64, a_pp: f64, a_pm: f64, a_mm: f64) -> Self {
        Self { dimension: 3, lambda_plus, lambda_minus, a_pp, a_pm, a_mm, a_mp: None, measure: 0.0, odd_overlap: 0.0 }
    }

    /// 2D: `(A₊₊^{εω̂}, A₊₋^{εω̂}) = (A₊₊ − η_ω|D|, A₊₋ − η_ω)` at `ω = εω̂`.
    pub fn eta_corrected(&self, omega: Complex64) -> Result<Option<(Complex64, Complex64)>> {
        if self.dimension != 2 {
            return Ok(None);
        }
        let eta = eta_omega(omega)?;
        Ok(Some((self.a_pp - eta * self.measure, self.a_pm - eta)))
    }
}

fn check_real_parity(mesh: &Mesh, f: &Field, want: Symmetry, name: &str) -> Result<()> {
    let max = f.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if f.values.iter().any(|v| v.im.abs() > 1e-12 * max) {
        return Err(Error::SymmetryCheck(format!("{name} is not real")));
    }
    let got = mesh.symmetry_class(f, SYMMETRY_TOL)?;
    if got != want {
        return Err(Error::SymmetryCheck(format!("{name} classifies as {}, expected {}", got.as_str(), want.as_str())));
    }
    Ok(())
}

/// Quartic overlaps (3D) or the `K_D`-weighted overlaps (2D) of the modes.
pub fn mode_coefficients(mesh: &Mesh, modes: &DimerModes) -> Result<ModeCoefficients> {
    check_real_parity(mesh, &modes.plus, Symmetry::Even, "φ₊")?;
    check_real_parity(mesh, &modes.minus, Symmetry::Odd, "φ₋")?;
    let p = modes.plus.real_parts();
    let m = modes.minus.real_parts();
    let w = mesh.weights();
    let measure = mesh.total_measure();
    match mesh.dimension() {
        3 => {
            let moment = |a: i32, b: i32| -> f64 {
                (0..p.len()).map(|i| w[i] * p[i].powi(a) * m[i].powi(b)).sum()
            };
            Ok(ModeCoefficients {
                dimension: 3,
                lambda_plus: modes.lambda_plus,
                lambda_minus: modes.lambda_minus,
                a_pp: moment(4, 0),
                a_pm: moment(2, 2),
                a_mm: moment(0, 4),
                a_mp: None,
                measure,
                odd_overlap: moment(3, 1).abs().max(moment(1, 3).abs()),
            })
        }
        2 => {
            let k = assemble_newtonian(mesh)?;
            let one_d = mesh.constant_field(1.0 / measure);
            let power = |b: i32| Field::from_real(&m.iter().map(|v| v.powi(b)).collect::<Vec<_>>());
            let k_of = |f: &Field| -> Result<Field> { k.apply(f) };
            let k1 = k_of(&mesh.constant_field(1.0))?;
            let km = k_of(&power(1))?;
            let km2 = k_of(&power(2))?;
            let km3 = k_of(&power(3))?;
            let phi_m = &modes.minus;
            let odd = [mesh.inner(&one_d, &km).re, mesh.inner(&one_d, &km3).re, mesh.inner(phi_m, &k1).re, mesh.inner(phi_m, &km2).re];
            Ok(ModeCoefficients {
                dimension: 2,
                lambda_plus: modes.lambda_plus,
                lambda_minus: modes.lambda_minus,
                a_pp: mesh.inner(&one_d, &k1).re,
                a_pm: mesh.inner(&one_d, &km2).re,
                a_mm: mesh.inner(phi_m, &km3).re,
                a_mp: Some(mesh.inner(phi_m, &km).re),
                measure,
                odd_overlap: odd.iter().fold(0.0f64, |a, v| a.max(v.abs())),
            })
        }
        d => Err(Error::DimensionMismatch { expected: 3, got: d }),
    }
}

/// The two coefficient inequalities of the reduced model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// `λ₊A₊₊ − 3λ₋A₊₋` (must be negative)
    pub first: f64,
    pub first_holds: bool,
    /// `λ₊A₊₊ − λ₋A₊₋` (must be positive)
    pub second: f64,
    pub second_holds: bool,
    /// `(λ₊ − λ₋)/(3λ₋A₊₋ − λ₊A₊₊)`, small in the dilute regime
    pub smallness_ratio: f64,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.first_holds && self.second_holds
    }
}

pub fn check_assumptions(c: &ModeCoefficients) -> AssumptionReport {
    let first = c.lambda_plus * c.a_pp - 3.0 * c.lambda_minus * c.a_pm;
    let second = c.lambda_plus * c.a_pp - c.lambda_minus * c.a_pm;
    AssumptionReport {
        first,
        first_holds: first < 0.0,
        second,
        second_holds: second > 0.0,
        smallness_ratio: (c.lambda_plus - c.lambda_minus) / -first,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BifurcationPrediction {
    pub p_plus_star: f64,
    pub omega_hat_star: f64,
    /// leading-order threshold `𝒩_crit ≈ p₊,*²`
    pub n_crit_estimate: f64,
    /// `dp₊²/dp₋²` along the asymmetric branches
    pub branch_slope: f64,
    /// the `Δθ = π/2` family has no small positive solution
    pub case_two_excluded: bool,
    pub assumption_report: AssumptionReport,
}

/// Positive root `p²` of `λ₊ − λ₋ + (λ₊A₊₊ − λ₋A₊₋)p² = 0` (the `Δθ = π/2`
/// family), if any.
pub fn case_two_root(c: &ModeCoefficients) -> Option<f64> {
    let slope = c.lambda_plus * c.a_pp - c.lambda_minus * c.a_pm;
    let root = -(c.lambda_plus - c.lambda_minus) / slope;
    (root.is_finite() && root > 0.0).then_some(root)
}

/// Threshold of the in-phase (`Δθ = 0`) hybridization of the reduced model.
pub fn reduced_bifurcation_point(c: &ModeCoefficients) -> Result<BifurcationPrediction> {
    if c.dimension != 3 {
        return Err(Error::NoSymmetryBreaking("the reduced pitchfork is a 3D construction".into()));
    }
    let report = check_assumptions(c);
    let denom = -report.first;
    if !(denom > 0.0) {
        return Err(Error::NoSymmetryBreaking(format!("3λ₋A₊₋ − λ₊A₊₊ = {denom:.6e} ≤ 0")));
    }
    let p2 = (c.lambda_plus - c.lambda_minus) / denom;
    if p2 < 0.0 {
        return Err(Error::NoSymmetryBreaking(format!("λ₊ − λ₋ = {:.6e} < 0", c.lambda_plus - c.lambda_minus)));
    }
    Ok(BifurcationPrediction {
        p_plus_star: p2.sqrt(),
        omega_hat_star: 1.0 / (c.lambda_plus * (1.0 + p2 * c.a_pp)).sqrt(),
        n_crit_estimate: p2,
        branch_slope: (c.lambda_minus * c.a_mm - 3.0 * c.lambda_plus * c.a_pm) / report.first,
        case_two_excluded: case_two_root(c).is_none(),
        assumption_report: report,
    })
}

/// `2 + e^{−i2Δθ}`, the hybridization factor of the reduced `c₊` equation.
pub fn hybridization_factor(delta_theta: f64) -> Complex64 {
    2.0 + Complex64::from_polar(1.0, -2.0 * delta_theta)
}

/// `Δθ` modulo `π`, in `[0, π)`: the reduced equations only see `e^{±i2Δθ}`.
pub fn reduce_phase(delta_theta: f64) -> f64 {
    let r = delta_theta.rem_euclid(PI);
    if PI - r <= 4.0 * f64::EPSILON * PI {
        0.0
    } else {
        r
    }
}

/// Truncated reduced equations divided by `c₊` and `c₋`:
/// `F₊ = ω̂⁻² − λ₊ − λ₊(p₊²A₊₊ + p₋²(2 + e^{−i2Δθ})A₊₋)`,
/// `F₋ = ω̂⁻² − λ₋ − λ₋(p₋²A₋₋ + p₊²(2 + e^{i2Δθ})A₊₋)`.
pub fn reduced_residual(c: &ModeCoefficients, inv_omega_hat_sq: f64, p_plus_sq: f64, p_minus_sq: f64, delta_theta: f64) -> (Complex64, Complex64) {
    let f_plus = inv_omega_hat_sq
        - c.lambda_plus
        - c.lambda_plus * (p_plus_sq * c.a_pp + p_minus_sq * hybridization_factor(delta_theta) * c.a_pm);
    let f_minus = inv_omega_hat_sq
        - c.lambda_minus
        - c.lambda_minus * (p_minus_sq * c.a_mm + p_plus_sq * hybridization_factor(-delta_theta) * c.a_pm);
    (f_plus, f_minus)
}

/// Phase differences (mod π) for which the truncated system admits
/// hybridized solutions with real `ω̂` bifurcating from `p₋ = 0`. Real `ω̂`
/// forces `sin 2Δθ = 0`; `Δθ = 0` needs `p₊,*² > 0` and `Δθ = π/2` needs
/// a positive Case II root.
pub fn admissible_phases(c: &ModeCoefficients) -> Vec<f64> {
    let mut out = Vec::new();
    if reduced_bifurcation_point(c).is_ok_and(|p| p.n_crit_estimate > 0.0) {
        out.push(0.0);
    }
    if case_two_root(c).is_some() {
        out.push(PI / 2.0);
    }
    out
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SecularPoint {
    pub omega_hat_sq: f64,
    pub p_plus_sq: f64,
    /// `Δθ = θ₊ − θ₋` mod π (always 0: the π/2 family is excluded)
    pub delta_theta: f64,
}

/// Asymmetric branch of the truncated reduced system at a given `p₋`.
pub fn reduced_secular_solve(c: &ModeCoefficients, p_minus: f64) -> Result<SecularPoint> {
    if !(p_minus >= 0.0) {
        return Err(Error::OutOfDomain(p_minus, "p₋ must be non-negative"));
    }
    let pred = reduced_bifurcation_point(c)?;
    let pm2 = p_minus * p_minus;
    let p_plus_sq = pred.n_crit_estimate + pred.branch_slope * pm2;
    if !(p_plus_sq > 0.0) {
        return Err(Error::BranchTerminated(format!("p₊² = {p_plus_sq:.6e} at p₋ = {p_minus}")));
    }
    let inv = c.lambda_plus * (1.0 + p_plus_sq * c.a_pp + 3.0 * pm2 * c.a_pm);
    Ok(SecularPoint { omega_hat_sq: 1.0 / inv, p_plus_sq, delta_theta: 0.0 })
}

/// Cells spanning one parity sector: `(i, Some(R i))` pairs with `i < R i`,
/// plus fixed cells `(i, None)` in the even sector.
struct ParityBasis {
    reps: Vec<(usize, Option<usize>)>,
    sign: f64,
}

fn parity_basis(mesh: &Mesh, parity: Symmetry) -> Result<ParityBasis> {
    let map = mesh.reflection_map().ok_or(Error::NotSymmetric)?;
    let sign = match parity {
        Symmetry::Even => 1.0,
        Symmetry::Odd => -1.0,
        Symmetry::None => return Err(Error::SymmetryCheck("a parity sector must be even or odd".into())),
    };
    let reps = map
        .iter()
        .enumerate()
        .filter_map(|(i, &j)| match j.cmp(&i) {
            std::cmp::Ordering::Greater => Some((i, Some(j))),
            std::cmp::Ordering::Equal if sign > 0.0 => Some((i, None)),
            _ => None,
        })
        .collect();
    Ok(ParityBasis { reps, sign })
}

/// Realified field Jacobian restricted to one parity sector.
fn restricted_jacobian(lin: &Linearization, basis: &ParityBasis) -> Mat<f64> {
    let m = basis.reps.len();
    Mat::from_fn(2 * m, 2 * m, |r, c| {
        let (br, k) = (r / m, r % m);
        let (bc, l) = (c / m, c % m);
        let row = basis.reps[k].0;
        let (col, partner) = basis.reps[l];
        let p = if bc == 0 { &lin.p_alpha } else { &lin.p_beta };
        let mut v = p[(row, col)];
        if let Some(q) = partner {
            v += basis.sign * p[(row, q)];
        }
        let part = if br == 0 { v.re } else { v.im };
        if r == c {
            1.0 - part
        } else {
            -part
        }
    })
}

fn signed_smallest_singular_value(j: &Mat<f64>) -> Result<f64> {
    let sv = j.singular_values().map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let det = j.as_ref().determinant();
    Ok(if det < 0.0 { -smin } else { smin })
}

/// `sign(det J_S)·σ_min(J_S)` for the Jacobian restricted to the sector `S`.
pub fn sector_sigma(mesh: &Mesh, tau: f64, omega: Complex64, u: &Field, sector: Symmetry) -> Result<f64> {
    let basis = parity_basis(mesh, sector)?;
    let lin = linearize(mesh, tau, omega, u, false)?;
    signed_smallest_singular_value(&restricted_jacobian(&lin, &basis))
}

/// Right singular vector of the smallest singular value, as a unit field.
fn sector_null_vector(mesh: &Mesh, tau: f64, point: &ResonancePoint, sector: Symmetry) -> Result<Field> {
    let basis = parity_basis(mesh, sector)?;
    let lin = linearize(mesh, tau, point.omega, &point.u, false)?;
    let j = restricted_jacobian(&lin, &basis);
    let size = j.nrows();
    let lu = j.partial_piv_lu();
    let mut x = Mat::from_fn(size, 1, |i, _| 1.0 + ((i * 7919) % 97) as f64 / 97.0);
    for _ in 0..30 {
        let y = lu.solve_transpose(&x);
        let z = lu.solve(&y);
        let norm = (0..size).map(|i| z[(i, 0)] * z[(i, 0)]).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::SingularSystem);
        }
        x = Mat::from_fn(size, 1, |i, _| z[(i, 0)] / norm);
    }
    let m = basis.reps.len();
    let mut v = Field::zeros(mesh.len());
    for (l, &(cell, partner)) in basis.reps.iter().enumerate() {
        let val = Complex64::new(x[(l, 0)], x[(m + l, 0)]);
        v.values[cell] = val;
        if let Some(q) = partner {
            v.values[q] = val * basis.sign;
        }
    }
    let norm = mesh.norm(&v);
    Ok(v.scaled(Complex64::new(1.0 / norm, 0.0)))
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct SigmaSample {
    pub amplitude: f64,
    pub p_plus_sq: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug)]
pub struct SymmetryBreakingEvent {
    pub event: BranchEvent,
    pub point: ResonancePoint,
    /// unit null vector in the tested sector, oriented so `Re⟨φ₋, v⟩ ≥ 0`
    /// (symmetric branch) or `Re⟨φ₊, v⟩ ≥ 0` (antisymmetric branch)
    pub null_vector: Field,
    /// `|⟨φ_∓, v⟩|` for the mode of the tested sector
    pub null_overlap: f64,
    /// final 𝒩 bracket of the bisection
    pub bracket: (f64, f64),
    pub sigma: f64,
}

#[derive(Clone, Debug)]
pub struct Detection {
    /// the sector tested (opposite to the branch parity)
    pub sector: Symmetry,
    pub sigma_at_zero: f64,
    /// one sample per branch point
    pub samples: Vec<SigmaSample>,
    pub events: Vec<SymmetryBreakingEvent>,
}

impl Detection {
    /// `min σ / σ(𝒩 → 0)` over the scanned branch.
    pub fn min_ratio(&self) -> f64 {
        self.samples.iter().map(|s| s.sigma).fold(f64::INFINITY, f64::min) / self.sigma_at_zero
    }
}

fn branch_gauge(modes: &DimerModes, parity: Symmetry) -> Result<(&Field, &Field)> {
    match parity {
        Symmetry::Even => Ok((&modes.plus, &modes.minus)),
        Symmetry::Odd => Ok((&modes.minus, &modes.plus)),
        Symmetry::None => Err(Error::SymmetryCheck("branch has no definite parity".into())),
    }
}

/// Scans `σ` of the opposite-parity sector along a pure-parity branch and
/// bisects every sign change in 𝒩 to relative width [`BISECTION_WIDTH`].
pub fn detect_symmetry_breaking(
    mesh: &Mesh,
    tau: f64,
    linear: &ResonancePoint,
    branch: &Branch,
    modes: &DimerModes,
    config: &NonlinearConfig,
) -> Result<Detection> {
    let parity = branch.points.first().map(|p| p.symmetry).ok_or(Error::BranchTerminated("empty branch".into()))?;
    if branch.points.iter().any(|p| p.symmetry != parity) {
        return Err(Error::SymmetryCheck("branch mixes parities".into()));
    }
    let (gauge, partner) = branch_gauge(modes, parity)?;
    let sector = parity.opposite();
    let sigma_at_zero = sector_sigma(mesh, tau, linear.omega, &Field::zeros(mesh.len()), sector)?;
    let p_plus_sq = |u: &Field| mesh.inner(&modes.plus, u).norm_sqr();
    let mut samples = Vec::with_capacity(branch.len());
    for p in &branch.points {
        samples.push(SigmaSample {
            amplitude: p.amplitude,
            p_plus_sq: p_plus_sq(&p.u),
            sigma: sector_sigma(mesh, tau, p.omega, &p.u, sector)?,
        });
    }
    let mut events = Vec::new();
    let mut prev: (f64, f64, Option<&ResonancePoint>) = (0.0, sigma_at_zero, None);
    for (s, p) in samples.iter().zip(&branch.points) {
        if s.sigma.signum() != prev.1.signum() {
            events.push(bisect(mesh, tau, (prev.0, prev.1, prev.2.unwrap_or(p)), (s.amplitude, s.sigma, p), gauge, partner, sector, modes, config)?);
        }
        prev = (s.amplitude, s.sigma, Some(p));
    }
    Ok(Detection { sector, sigma_at_zero, samples, events })
}

#[allow(clippy::too_many_arguments)]
fn bisect(
    mesh: &Mesh,
    tau: f64,
    lo: (f64, f64, &ResonancePoint),
    hi: (f64, f64, &ResonancePoint),
    gauge: &Field,
    partner: &Field,
    sector: Symmetry,
    modes: &DimerModes,
    config: &NonlinearConfig,
) -> Result<SymmetryBreakingEvent> {
    let (mut n_lo, s_lo, mut seed_lo) = (lo.0, lo.1, lo.2.clone());
    let (mut n_hi, mut seed_hi) = (hi.0, hi.2.clone());
    let sign_lo = s_lo.signum();
    let mut last = (hi.1, hi.2.clone());
    while (n_hi - n_lo) > BISECTION_WIDTH * 0.5 * (n_hi + n_lo) {
        let mid = 0.5 * (n_lo + n_hi);
        let seed = if mid - n_lo < n_hi - mid { &seed_lo } else { &seed_hi };
        let p = solve_nonlinear_at_amplitude(mesh, tau, mid, seed, gauge, config)?;
        let s = sector_sigma(mesh, tau, p.omega, &p.u, sector)?;
        if s.signum() == sign_lo {
            n_lo = mid;
            seed_lo = p.clone();
        } else {
            n_hi = mid;
            seed_hi = p.clone();
        }
        last = (s, p);
    }
    let (sigma, point) = last;
    let mut v = sector_null_vector(mesh, tau, &point, sector)?;
    if mesh.inner(partner, &v).re < 0.0 {
        v = v.scaled(-ONE);
    }
    let null_overlap = mesh.inner(partner, &v).norm();
    Ok(SymmetryBreakingEvent {
        event: BranchEvent {
            kind: EventKind::SymmetryBreaking,
            amplitude: point.amplitude,
            omega: point.omega,
            p_plus_sq: mesh.inner(&modes.plus, &point.u).norm_sqr(),
        },
        point,
        null_vector: v,
        null_overlap,
        bracket: (n_lo, n_hi),
        sigma,
    })
}

/// Branch switch at a symmetry-breaking event and continuation in
/// `p₋ = Re⟨φ₋, u⟩` (gauge on `φ₊`) for `steps` points, in the direction
/// `sign(direction)`.
#[allow(clippy::too_many_arguments)]
pub fn trace_asymmetric_branch(
    mesh: &Mesh,
    tau: f64,
    event: &SymmetryBreakingEvent,
    modes: &DimerModes,
    direction: f64,
    steps: usize,
    step: f64,
    config: &NonlinearConfig,
) -> Result<Branch> {
    if direction == 0.0 || !direction.is_finite() || !(step > 0.0) || steps == 0 {
        return Err(Error::OutOfDomain(direction, "direction must be ±1 with positive step and count"));
    }
    let dir = direction.signum();
    let base = &event.point;
    let unorm = mesh.norm(&base.u);
    let mut first = None;
    for frac in SWITCH_FRACTIONS {
        let u0 = base.u.axpy(Complex64::new(dir * frac * unorm, 0.0), &event.null_vector);
        let s0 = mesh.inner(&modes.minus, &u0).re;
        let constraint = Constraint::Projection { mode: modes.minus.clone(), value: s0 };
        if let Ok(p) = solve_nonlinear(mesh, tau, base.omega, &u0, &modes.plus, &constraint, config) {
            if p.symmetry == Symmetry::None && mesh.localization(&p.u) != 0.0 {
                first = Some((s0, p));
                break;
            }
        }
    }
    let (s0, p0) = first.ok_or(Error::BranchSwitchFailed)?;
    let mut branch = if steps > 1 {
        continue_in_chart(
            mesh,
            tau,
            &modes.minus,
            &modes.plus,
            &[(0.0, base), (s0, &p0)],
            dir * step,
            steps - 1,
            config,
            BranchParameter::PMinus,
            |_| false,
        )
    } else {
        Branch::new(BranchParameter::PMinus)
    };
    branch.params.insert(0, s0);
    branch.points.insert(0, p0);
    branch.events.push(event.event.clone());
    Ok(branch)
}

/// Largest mirror defect `‖R u_a − u_b‖/‖u_a‖ + |ω_a − ω_b|/|ω_a|` over points
/// of two branches at opposite chart values; `None` when no values match.
pub fn mirror_defect(mesh: &Mesh, a: &Branch, b: &Branch) -> Result<Option<f64>> {
    let mut worst: Option<f64> = None;
    for (sa, pa) in a.params.iter().zip(&a.points) {
        let matched = b.params.iter().zip(&b.points).find(|(sb, _)| (*sa + **sb).abs() <= 1e-6 * sa.abs().max(1e-12));
        if let Some((_, pb)) = matched {
            let ru = mesh.reflect(&pa.u)?;
            let d = mesh.norm(&ru.axpy(-ONE, &pb.u)) / mesh.norm(&pa.u) + (pa.omega - pb.omega).norm() / pa.omega.norm();
            worst = Some(worst.map_or(d, |w: f64| w.max(d)));
        }
    }
    Ok(worst)
}

/// Least-squares slope of `p₊²` against `p₋²` over the event and the first
/// `count` points of an asymmetric branch.
pub fn measured_branch_slope(mesh: &Mesh, modes: &DimerModes, event: &SymmetryBreakingEvent, branch: &Branch, count: usize) -> Option<f64> {
    let mut xs = vec![0.0];
    let mut ys = vec![event.event.p_plus_sq];
    for p in branch.points.iter().take(count) {
        xs.push(mesh.inner(&modes.minus, &p.u).norm_sqr());
        ys.push(mesh.inner(&modes.plus, &p.u).norm_sqr());
    }
    if xs.len() < 2 {
        return None;
    }
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagramRow {
    pub amplitude: f64,
    pub omega: Complex64,
    /// `σ` of the opposite-parity sector (pure-parity branches only)
    pub sigma_odd: Option<f64>,
    pub loc_metric: f64,
    pub branch_id: String,
    pub symmetry: Symmetry,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct BifurcationDiagram {
    pub rows: Vec<DiagramRow>,
}

impl BifurcationDiagram {
    pub fn push_branch(&mut self, mesh: &Mesh, id: &str, branch: &Branch, sigmas: Option<&[SigmaSample]>) {
        for (i, p) in branch.points.iter().enumerate() {
            self.rows.push(DiagramRow {
                amplitude: p.amplitude,
                omega: p.omega,
                sigma_odd: sigmas.and_then(|s| s.get(i)).map(|s| s.sigma),
                loc_metric: mesh.localization(&p.u),
                branch_id: id.to_string(),
                symmetry: p.symmetry,
            });
        }
    }

    pub fn push_event(&mut self, mesh: &Mesh, event: &SymmetryBreakingEvent) {
        self.rows.push(DiagramRow {
            amplitude: event.point.amplitude,
            omega: event.point.omega,
            sigma_odd: Some(event.sigma),
            loc_metric: mesh.localization(&event.point.u),
            branch_id: "event".into(),
            symmetry: event.point.symmetry,
        });
    }

    pub fn branch_ids(&self) -> BTreeSet<&str> {
        self.rows.iter().filter(|r| r.branch_id != "event").map(|r| r.branch_id.as_str()).collect()
    }

    pub fn event_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.branch_id == "event").count()
    }

    /// CSV rows `N, re_omega, im_omega, sigma_odd, loc_metric, branch_id, symmetry`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "N,re_omega,im_omega,sigma_odd,loc_metric,branch_id,symmetry")?;
        for r in &self.rows {
            let sigma = r.sigma_odd.map_or_else(|| "nan".to_string(), |s| format!("{s:.16e}"));
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{},{:.16e},{},{}",
                r.amplitude,
                r.omega.re,
                r.omega.im,
                sigma,
                r.loc_metric,
                r.branch_id,
                r.symmetry.as_str()
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ObstructionReport {
    /// parity of the scanned branch
    pub branch_parity: Symmetry,
    pub sigma_at_zero: f64,
    pub min_sigma: f64,
    /// `min σ / σ(𝒩 → 0)`
    pub min_ratio: f64,
    pub floor_ratio: f64,
    pub amplitude_reached: f64,
    pub n_bound: f64,
    pub events: usize,
    /// range of `Re(2 + e^{−i2Δθ})` over `Δθ ∈ [0, π)`
    pub hybridization_range: (f64, f64),
    /// coefficient of `ln ε` matched against the hybridization factor: `−|D|`
    pub matched_coefficient: f64,
    /// `Re(2 + e^{−i2Δθ}) > 0` for every `Δθ` while the matched coefficient is negative
    pub sign_obstruction: bool,
    pub passed: bool,
}

/// 2D obstruction: `σ` of the opposite sector stays above
/// `OBSTRUCTION_FLOOR·σ(0)` along a pure-parity 2D branch, no events, and the
/// sign mismatch of the `ln ε` balance.
pub fn two_d_obstruction(mesh: &Mesh, detection: &Detection, branch: &Branch, n_bound: f64) -> Result<ObstructionReport> {
    if mesh.dimension() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: mesh.dimension() });
    }
    let (lo, hi) = (0..1800).map(|k| hybridization_factor(PI * k as f64 / 1800.0).re).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let matched_coefficient = -mesh.total_measure();
    let sign_obstruction = lo > 0.0 && matched_coefficient < 0.0;
    let min_sigma = detection.samples.iter().map(|s| s.sigma).fold(f64::INFINITY, f64::min);
    let min_ratio = detection.min_ratio();
    Ok(ObstructionReport {
        branch_parity: detection.sector.opposite(),
        sigma_at_zero: detection.sigma_at_zero,
        min_sigma,
        min_ratio,
        floor_ratio: OBSTRUCTION_FLOOR,
        amplitude_reached: branch.points.iter().map(|p| p.amplitude).fold(0.0, f64::max),
        n_bound,
        events: detection.events.len(),
        hybridization_range: (lo, hi),
        matched_coefficient,
        sign_obstruction,
        passed: detection.events.is_empty() && min_ratio >= OBSTRUCTION_FLOOR && sign_obstruction,
    })
}

/// Knobs of the full dimer pipeline.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DimerStudyOptions {
    pub tau: f64,
    /// 𝒩 bound of the symmetric branch; 3D default `1.6·𝒩_crit` estimate
    pub n_max: Option<f64>,
    /// points per asymmetric branch
    pub asym_steps: usize,
    /// `Δp₋` of the asymmetric continuation
    pub asym_step: f64,
    /// 2D: also scan the antisymmetric branch (even sector)
    pub odd_branch: bool,
    pub nonlinear: NonlinearConfig,
}

impl Default for DimerStudyOptions {
    fn default() -> Self {
        Self { tau: 1e4, n_max: None, asym_steps: 12, asym_step: 0.03, odd_branch: true, nonlinear: NonlinearConfig::default() }
    }
}

#[derive(Clone, Debug)]
pub struct DimerStudy {
    pub modes: DimerModes,
    pub coefficients: ModeCoefficients,
    pub assumptions: AssumptionReport,
    pub prediction: Option<BifurcationPrediction>,
    pub linear: ResonancePoint,
    pub symmetric: Branch,
    pub detection: Detection,
    /// `(direction, branch)` for each traced asymmetric branch
    pub asymmetric: Vec<(f64, Branch)>,
    pub mirror_defect: Option<f64>,
    /// 2D: scans of the symmetric and (optionally) antisymmetric branches
    pub obstruction: Vec<ObstructionReport>,
    pub diagram: BifurcationDiagram,
}

fn principal_linear(mesh: &Mesh, modes: &DimerModes, tau: f64) -> Result<ResonancePoint> {
    if mesh.dimension() == 3 {
        let seed = asymptotic_linear_3d(&modes.spectrum[0], mesh, tau)?;
        solve_linear(mesh, tau, seed, &modes.plus)
    } else {
        let seed = principal_2d_refined(mesh.total_measure(), tau)?;
        solve_linear(mesh, tau, Complex64::new(seed, 0.0), &modes.plus)
    }
}

/// spectrum → coefficients → prediction → symmetric branch → detection →
/// asymmetric traces (3D) or obstruction scans (2D) → diagram.
pub fn run_dimer_study(mesh: &Mesh, opts: &DimerStudyOptions) -> Result<DimerStudy> {
    opts.nonlinear.validate()?;
    if !(opts.tau > 1.0) {
        return Err(Error::OutOfDomain(opts.tau, "τ must exceed 1"));
    }
    let tau = opts.tau;
    let cfg = &opts.nonlinear;
    let modes = dimer_modes(mesh)?;
    let coefficients = mode_coefficients(mesh, &modes)?;
    let assumptions = check_assumptions(&coefficients);
    let prediction = if mesh.dimension() == 3 { Some(reduced_bifurcation_point(&coefficients)?) } else { None };
    let n_max = match (opts.n_max, &prediction) {
        (Some(n), _) => n,
        (None, Some(p)) => 1.6 * p.n_crit_estimate,
        (None, None) => return Err(Error::InvalidDomain("2D dimer study needs n_max".into())),
    };
    let linear = principal_linear(mesh, &modes, tau)?;
    let symmetric = continue_branch(mesh, tau, &linear, &modes.plus, n_max, cfg)?;
    let detection = detect_symmetry_breaking(mesh, tau, &linear, &symmetric, &modes, cfg)?;
    let mut diagram = BifurcationDiagram::default();
    diagram.push_branch(mesh, "symmetric", &symmetric, Some(&detection.samples));
    let mut asymmetric = Vec::new();
    let mut obstruction = Vec::new();
    let mut mirror = None;
    if mesh.dimension() == 3 {
        if let Some(event) = detection.events.first() {
            let traces: Vec<Result<Branch>> = std::thread::scope(|s| {
                let handles: Vec<_> = [1.0, -1.0]
                    .into_iter()
                    .map(|dir| {
                        let modes = &modes;
                        s.spawn(move || trace_asymmetric_branch(mesh, tau, event, modes, dir, opts.asym_steps, opts.asym_step, cfg))
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("trace thread panicked")).collect()
            });
            for (dir, t) in [1.0, -1.0].into_iter().zip(traces) {
                asymmetric.push((dir, t?));
            }
            mirror = mirror_defect(mesh, &asymmetric[0].1, &asymmetric[1].1)?;
            for ((dir, b), id) in asymmetric.iter().zip(["asym_plus", "asym_minus"]) {
                debug_assert!(*dir != 0.0);
                diagram.push_branch(mesh, id, b, None);
            }
        }
        for e in &detection.events {
            diagram.push_event(mesh, e);
        }
    } else {
        for e in &detection.events {
            diagram.push_event(mesh, e);
        }
        obstruction.push(two_d_obstruction(mesh, &detection, &symmetric, n_max)?);
        if opts.odd_branch {
            let seed = asymptotic_linear_2d(Regime2d::Bulk { mu: modes.lambda_minus }, tau)?;
            let odd_linear = solve_linear(mesh, tau, seed, &modes.minus)?;
            let odd = continue_branch(mesh, tau, &odd_linear, &modes.minus, n_max, cfg)?;
            let odd_detection = detect_symmetry_breaking(mesh, tau, &odd_linear, &odd, &modes, cfg)?;
            diagram.push_branch(mesh, "antisymmetric", &odd, Some(&odd_detection.samples));
            for e in &odd_detection.events {
                diagram.push_event(mesh, e);
            }
            obstruction.push(two_d_obstruction(mesh, &odd_detection, &odd, n_max)?);
        }
    }
    Ok(DimerStudy {
        modes,
        coefficients,
        assumptions,
        prediction,
        linear,
        symmetric,
        detection,
        asymmetric,
        mirror_defect: mirror,
        obstruction,
        diagram,
    })
}
