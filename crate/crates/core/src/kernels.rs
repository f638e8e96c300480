//! Outgoing Green's functions, their small-frequency expansions and the
//! Lambert W₋₁ branch.
//!
//! The 2D kernel `(i/4) H₀⁽¹⁾(ωr)` is evaluated from the power series of J₀/Y₀
//! for `|ωr| <= 12` and from the Hankel asymptotic series beyond. The complex
//! logarithm is the principal one on `Re ω >= 0`; it is continued across the
//! negative real axis (cut along the negative imaginary axis) so that
//! `G^{-conj(ω)} = conj(G^ω)` holds in 2D as it does in 3D.

use std::f64::consts::{E, FRAC_PI_2, FRAC_PI_4, LN_2, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Euler's constant γ.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Terms kept in the 3D Taylor expansion of `e^{iωr}/(4πr)`.
pub const SERIES_ORDER_3D: usize = 30;

const HANKEL_CROSSOVER: f64 = 12.0;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    pub dimension: usize,
    pub omega: Complex64,
}

impl KernelParams {
    pub fn new(dimension: usize, omega: Complex64) -> Self {
        Self { dimension, omega }
    }

    pub fn green(&self, r: f64) -> Result<Complex64> {
        green(self.dimension, self.omega, r)
    }

    pub fn green_d_omega(&self, r: f64) -> Result<Complex64> {
        green_d_omega(self.dimension, self.omega, r)
    }
}

/// Logarithm with the branch cut on the negative imaginary axis,
/// `arg z ∈ (-π/2, 3π/2]`. Equal to the principal branch for `Re z >= 0`.
pub fn ln_continued(z: Complex64) -> Complex64 {
    let mut arg = z.arg();
    if arg <= -FRAC_PI_2 {
        arg += 2.0 * PI;
    }
    Complex64::new(z.norm().ln(), arg)
}

fn sqrt_continued(z: Complex64) -> Complex64 {
    let l = ln_continued(z);
    (0.5 * l).exp()
}

/// Outgoing Green's function: `e^{iωr}/(4πr)` in 3D, `(i/4)H₀⁽¹⁾(ωr)` in 2D
/// (`-ln r/(2π)` at ω = 0).
pub fn green(dimension: usize, omega: Complex64, r: f64) -> Result<Complex64> {
    if r <= 0.0 {
        return Err(Error::SingularPoint(r));
    }
    match dimension {
        3 => Ok((I * omega * r).exp() / (4.0 * PI * r)),
        2 => {
            if omega == Complex64::new(0.0, 0.0) {
                Ok(Complex64::new(-r.ln() / (2.0 * PI), 0.0))
            } else {
                Ok(0.25 * I * hankel1_0(omega * r))
            }
        }
        d => Err(Error::DimensionMismatch { expected: 3, got: d }),
    }
}

/// `∂G^ω(r)/∂ω`.
pub fn green_d_omega(dimension: usize, omega: Complex64, r: f64) -> Result<Complex64> {
    if r <= 0.0 {
        return Err(Error::SingularPoint(r));
    }
    match dimension {
        3 => Ok(I * (I * omega * r).exp() / (4.0 * PI)),
        2 => {
            if omega == Complex64::new(0.0, 0.0) {
                return Err(Error::OutOfDomain(0.0, "2D kernel derivative is singular at ω = 0"));
            }
            Ok(-0.25 * I * r * hankel1_1(omega * r))
        }
        d => Err(Error::DimensionMismatch { expected: 3, got: d }),
    }
}

/// Term `G_n(r) = iⁿ r^{n-1} / (4π n!)` of `G^ω = Σ ωⁿ G_n` in 3D.
pub fn green_series_term_3d(n: usize, r: f64) -> Result<Complex64> {
    if n == 0 && r <= 0.0 {
        return Err(Error::SingularPoint(r));
    }
    let factorial: f64 = (1..=n).map(|k| k as f64).product();
    let i_pow = I.powu(n as u32);
    Ok(i_pow * r.powi(n as i32 - 1) / (4.0 * PI * factorial))
}

/// Partial sum `Σ_{n<=order} ωⁿ G_n(r)`.
pub fn green_series_3d(omega: Complex64, r: f64, order: usize) -> Result<Complex64> {
    let mut sum = Complex64::new(0.0, 0.0);
    let mut wn = Complex64::new(1.0, 0.0);
    for n in 0..=order {
        sum += wn * green_series_term_3d(n, r)?;
        wn *= omega;
    }
    Ok(sum)
}

/// `η_ω = (ln ω + γ − ln 2 − iπ/2) / (2π)`.
pub fn eta_omega(omega: Complex64) -> Result<Complex64> {
    if omega == Complex64::new(0.0, 0.0) {
        return Err(Error::OutOfDomain(0.0, "η_ω has a logarithmic singularity at ω = 0"));
    }
    Ok((ln_continued(omega) + gamma_hat()) / (2.0 * PI))
}

pub fn eta_omega_derivative(omega: Complex64) -> Complex64 {
    1.0 / (2.0 * PI * omega)
}

/// `γ̂ = γ − ln 2 − iπ/2`.
pub fn gamma_hat() -> Complex64 {
    Complex64::new(EULER_GAMMA - LN_2, -FRAC_PI_2)
}

/// Constants of the 2D small-frequency expansion
/// `G^ω = −ln r/(2π) − η_ω + Σ_j ω^{2j} ln ω (−b_j r^{2j}) + ω^{2j} (−(b_j ln r + c_j) r^{2j})`.
#[derive(Clone, Debug)]
pub struct LogConstants {
    pub eta_omega: Complex64,
    pub gamma_hat: Complex64,
    /// `b_j` for j = 1..=order (index 0 holds j = 1).
    pub b: Vec<f64>,
    pub c: Vec<Complex64>,
}

impl LogConstants {
    pub fn new(omega: Complex64, order: usize) -> Result<Self> {
        let mut b = Vec::with_capacity(order);
        let mut c = Vec::with_capacity(order);
        let mut harmonic = 0.0;
        let mut factorial = 1.0;
        for j in 1..=order {
            factorial *= j as f64;
            harmonic += 1.0 / j as f64;
            let bj = (-1f64).powi(j as i32) / (2.0 * PI * 4f64.powi(j as i32) * factorial * factorial);
            b.push(bj);
            c.push(bj * (gamma_hat() - harmonic));
        }
        Ok(Self { eta_omega: eta_omega(omega)?, gamma_hat: gamma_hat(), b, c })
    }
}

/// 2D expansion of `G^ω(r)` truncated after `order` terms in `ω²`.
pub fn green_2d_series(omega: Complex64, r: f64, order: usize) -> Result<Complex64> {
    if r <= 0.0 {
        return Err(Error::SingularPoint(r));
    }
    let lc = LogConstants::new(omega, order)?;
    let ln_omega = ln_continued(omega);
    let ln_r = r.ln();
    let mut sum = Complex64::new(-ln_r / (2.0 * PI), 0.0) - lc.eta_omega;
    let w2 = omega * omega;
    let mut w2j = Complex64::new(1.0, 0.0);
    for j in 1..=order {
        w2j *= w2;
        let r2j = r.powi(2 * j as i32);
        let (bj, cj) = (lc.b[j - 1], lc.c[j - 1]);
        sum += w2j * ln_omega * (-bj * r2j) + w2j * (-(bj * ln_r + cj) * r2j);
    }
    Ok(sum)
}

/// `H₀⁽¹⁾(z) = J₀(z) + i Y₀(z)`.
pub fn hankel1_0(z: Complex64) -> Complex64 {
    if z.norm() <= HANKEL_CROSSOVER {
        let (j0, y0) = bessel01_series(z, 0);
        j0 + I * y0
    } else {
        hankel1_asymptotic(z, 0)
    }
}

/// `H₁⁽¹⁾(z) = J₁(z) + i Y₁(z)`.
pub fn hankel1_1(z: Complex64) -> Complex64 {
    if z.norm() <= HANKEL_CROSSOVER {
        let (j1, y1) = bessel01_series(z, 1);
        j1 + I * y1
    } else {
        hankel1_asymptotic(z, 1)
    }
}

/// Ascending series for (J_n, Y_n), n ∈ {0, 1}.
fn bessel01_series(z: Complex64, n: u32) -> (Complex64, Complex64) {
    let half = 0.5 * z;
    let q = -(half * half);
    let log_term = ln_continued(half);
    // ψ(k+1) = -γ + H_k
    let mut j = Complex64::new(0.0, 0.0);
    let mut s = Complex64::new(0.0, 0.0);
    let mut term = if n == 0 { Complex64::new(1.0, 0.0) } else { half };
    let mut h_k = 0.0;
    for k in 0..200u32 {
        if k > 0 {
            h_k += 1.0 / k as f64;
            term *= q / (k as f64 * (k + n) as f64);
        }
        let h_kn = h_k + if n == 1 { 1.0 / (k + 1) as f64 } else { 0.0 };
        let psi_sum = 2.0 * (-EULER_GAMMA) + h_k + h_kn;
        j += term;
        s += term * psi_sum;
        if term.norm() < 1e-18 * j.norm().max(1e-300) && k > 2 {
            break;
        }
    }
    let y = if n == 0 {
        // Y₀ = (2/π)[ln(z/2) J₀] − (1/π) Σ 2ψ(k+1) (−z²/4)^k/(k!)²
        (2.0 / PI) * log_term * j - s / PI
    } else {
        -2.0 / (PI * z) + (2.0 / PI) * log_term * j - s / PI
    };
    (j, y)
}

fn hankel1_asymptotic(z: Complex64, n: u32) -> Complex64 {
    let nu2 = 4.0 * (n * n) as f64;
    let phase = z - (n as f64) * FRAC_PI_2 - FRAC_PI_4;
    let mut sum = Complex64::new(1.0, 0.0);
    let mut term = Complex64::new(1.0, 0.0);
    let mut prev = f64::INFINITY;
    for k in 1..60u32 {
        let odd = (2 * k - 1) as f64;
        let next = term * I * (nu2 - odd * odd) / (k as f64 * 8.0 * z);
        if next.norm() >= prev {
            break;
        }
        prev = next.norm();
        term = next;
        sum += term;
        if prev < 1e-17 {
            break;
        }
    }
    (2.0 / PI).sqrt() / sqrt_continued(z) * (I * phase).exp() * sum
}

/// Lower real branch W₋₁(x) for x ∈ [−1/e, 0): the solution `w <= -1` of `w eʷ = x`.
pub fn lambert_w_minus1(x: f64) -> Result<f64> {
    let branch_point = -1.0 / E;
    if !(x.is_finite() && x >= branch_point && x < 0.0) {
        return Err(Error::OutOfDomain(x, "W₋₁ is real only on [-1/e, 0)"));
    }
    if x == branch_point {
        return Ok(-1.0);
    }
    let mut w = if x < -0.25 {
        // branch-point series in p = -sqrt(2(ex + 1))
        let p = -(2.0 * (E * x + 1.0)).max(0.0).sqrt();
        -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    } else {
        let l1 = (-x).ln();
        l1 - (-l1).ln()
    };
    for _ in 0..100 {
        let ew = w.exp();
        let f = w * ew - x;
        if f.abs() <= 1e-16 * x.abs() {
            break;
        }
        // Halley step
        let wp1 = w + 1.0;
        if wp1 == 0.0 {
            break;
        }
        let denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1);
        let step = f / denom;
        w -= step;
        if step.abs() <= 1e-16 * w.abs() {
            break;
        }
    }
    Ok(w.min(-1.0))
}

/// Leading-order scaled 2D principal resonance `ω̂₀ = sqrt(−4π/(|D| s))` with
/// `s = W₋₁(−4πε²/|D|)`; solves `ω̂₀² ln(ε ω̂₀) = −2π/|D|`.
pub fn principal_2d_leading(epsilon: f64, area: f64) -> Result<f64> {
    if !(epsilon > 0.0 && area > 0.0) {
        return Err(Error::OutOfDomain(epsilon, "ε and |D| must be positive"));
    }
    let arg = -4.0 * PI * epsilon * epsilon / area;
    if arg < -1.0 / E {
        return Err(Error::ContrastTooLow(arg));
    }
    let s = lambert_w_minus1(arg)?;
    Ok((-4.0 * PI / (area * s)).sqrt())
}
