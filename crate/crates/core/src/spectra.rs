//! Leading eigenpairs of the static potentials, symmetry classification,
//! Krein–Rutman checks and the dilute-dimer splitting analysis.

use std::io::{self, Write};

use faer::{Mat, Side};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::{build_mesh, DomainSpec, Field, Mesh, Symmetry};
use crate::potential::{assemble_newtonian, assemble_tilde, ConvolutionOperator, SymmetricOperator};

/// Above this size the Krylov solver replaces the dense eigensolver.
pub const DENSE_LIMIT: usize = 2500;
/// Relative tolerance grouping eigenvalues into one (split) multiplet.
pub const CLUSTER_TOL: f64 = 1e-3;
/// Relative gap below which an eigenvalue is not declared simple.
pub const GAP_TOL: f64 = 1e-6;
/// Tolerance for the even/odd classification of eigenfields.
pub const SYMMETRY_TOL: f64 = 1e-8;

const KRYLOV_BLOCK: usize = 6;
const KRYLOV_MAX_BASIS: usize = 420;
const KRYLOV_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct SpectralPair {
    pub lambda: f64,
    pub phi: Field,
    /// distance to the nearest eigenvalue outside this pair's cluster
    pub multiplicity_gap: f64,
    pub symmetry: Symmetry,
    pub residual: f64,
    /// index of the cluster (multiplet) this pair belongs to
    pub cluster: usize,
}

impl SpectralPair {
    pub fn real_values(&self) -> Vec<f64> {
        self.phi.real_parts()
    }
}

/// The `k` largest eigenpairs in descending order, weighted-orthonormal and
/// sign-fixed (weighted mean ≥ 0, zero-mean ties broken by the first
/// significant entry being positive).
pub fn top_eigenpairs<O: SymmetricOperator + ?Sized>(op: &O, mesh: &Mesh, k: usize) -> Result<Vec<SpectralPair>> {
    let n = op.size();
    if mesh.len() != n {
        return Err(Error::DimensionMismatch { expected: mesh.len(), got: n });
    }
    if k == 0 || k > n {
        return Err(Error::TooManyEigenpairs { requested: k, available: n });
    }
    // one extra pair to measure the gap below the last requested one
    let want = (k + 1).min(n);
    let (values, vectors) = match op.dense_symmetric().filter(|_| n <= DENSE_LIMIT) {
        Some(s) => dense_top(&s, want)?,
        None => krylov_top(op, want)?,
    };
    let mut pairs = finish_pairs(op, mesh, values, vectors)?;
    pairs.truncate(k);
    Ok(pairs)
}

fn dense_top(s: &Mat<f64>, want: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = s.nrows();
    let evd = s
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
    let vals = evd.S().column_vector();
    let u = evd.U();
    let mut values = Vec::with_capacity(want);
    let mut vectors = Vec::with_capacity(want);
    for c in (n - want..n).rev() {
        values.push(vals[c]);
        vectors.push((0..n).map(|i| u[(i, c)]).collect());
    }
    Ok((values, vectors))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Block Krylov subspace with full reorthogonalization and Rayleigh–Ritz
/// extraction. Blocks resolve exactly degenerate multiplets (e.g. the cubic
/// symmetry of a voxel ball) that single-vector Lanczos cannot separate.
fn krylov_top<O: SymmetricOperator + ?Sized>(op: &O, want: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = op.size();
    let block = KRYLOV_BLOCK.max(want.min(16));
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut images: Vec<Vec<f64>> = Vec::new();
    // deterministic quasi-random start block (golden-ratio sequences)
    let mut pending: Vec<Vec<f64>> = (0..block)
        .map(|b| {
            let g = 0.618_033_988_749_894_9 * (1.0 + b as f64 * 0.377);
            (0..n).map(|i| ((i as f64 + 1.0) * g + 0.1 * b as f64).fract() - 0.5).collect()
        })
        .collect();
    let mut h: Vec<Vec<f64>> = Vec::new();
    loop {
        let mut added = 0;
        for mut v in pending.drain(..) {
            let norm0 = dot(&v, &v).sqrt();
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &v);
                    v.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm <= 1e-10 * norm0 || basis.len() >= n {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let w = op.apply_symmetric(&v);
            let mut row: Vec<f64> = basis.iter().map(|q| dot(q, &w)).collect();
            row.push(dot(&v, &w));
            for (r, hr) in h.iter_mut().enumerate() {
                hr.push(row[r]);
            }
            h.push(row);
            basis.push(v);
            images.push(w);
            added += 1;
        }
        let m = basis.len();
        let exhausted = added == 0 || m >= n.min(KRYLOV_MAX_BASIS);
        let ready = m >= want + block;
        if ready || exhausted {
            let hm = Mat::from_fn(m, m, |i, j| 0.5 * (h[i][j] + h[j][i]));
            let evd = hm
                .self_adjoint_eigen(Side::Lower)
                .map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
            let theta = evd.S().column_vector();
            let y = evd.U();
            let mut values = Vec::with_capacity(want);
            let mut vectors = Vec::with_capacity(want);
            let mut worst: f64 = 0.0;
            let scale = theta[m - 1].abs().max(1e-300);
            for c in (m - want..m).rev() {
                let mut x = vec![0.0; n];
                let mut ax = vec![0.0; n];
                for j in 0..m {
                    let yj = y[(j, c)];
                    x.iter_mut().zip(&basis[j]).for_each(|(a, b)| *a += yj * b);
                    ax.iter_mut().zip(&images[j]).for_each(|(a, b)| *a += yj * b);
                }
                let res: f64 = ax.iter().zip(&x).map(|(a, b)| (a - theta[c] * b).powi(2)).sum::<f64>().sqrt();
                worst = worst.max(res / scale);
                values.push(theta[c]);
                vectors.push(x);
            }
            if worst <= KRYLOV_TOL {
                return Ok((values, vectors));
            }
            if exhausted {
                if worst > 1e3 * KRYLOV_TOL {
                    return Err(Error::Eigensolver(format!("Krylov basis exhausted at relative residual {worst:.2e}")));
                }
                return Ok((values, vectors));
            }
        }
        // next block: images of the most recent block
        pending = images[m - added..].to_vec();
    }
}

fn finish_pairs<O: SymmetricOperator + ?Sized>(
    op: &O,
    mesh: &Mesh,
    values: Vec<f64>,
    mut vectors: Vec<Vec<f64>>,
) -> Result<Vec<SpectralPair>> {
    let clusters = cluster_indices(&values, CLUSTER_TOL);
    // inside a multiplet pick the basis that diagonalizes the reflection
    if let Some(map) = mesh.reflection_map() {
        for cl in clusters.iter().filter(|c| c.len() > 1) {
            let sw: Vec<f64> = mesh.weights().iter().map(|w| w.sqrt()).collect();
            // reflection in symmetrized coordinates y = W^{1/2}φ
            let refl = |y: &[f64]| -> Vec<f64> { map.iter().enumerate().map(|(i, &j)| y[j] * sw[i] / sw[j]).collect() };
            let m = cl.len();
            let rv: Vec<Vec<f64>> = cl.iter().map(|&a| refl(&vectors[a])).collect();
            let r = Mat::from_fn(m, m, |a, b| {
                0.5 * (dot(&vectors[cl[a]], &rv[b]) + dot(&vectors[cl[b]], &rv[a]))
            });
            let evd = r.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Eigensolver(format!("{e:?}")))?;
            let u = evd.U();
            let old: Vec<Vec<f64>> = cl.iter().map(|&a| vectors[a].clone()).collect();
            // descending reflection eigenvalue: even members first
            for (slot, c) in (0..m).rev().enumerate() {
                let mut x = vec![0.0; old[0].len()];
                for (j, o) in old.iter().enumerate() {
                    x.iter_mut().zip(o).for_each(|(a, b)| *a += u[(j, c)] * b);
                }
                vectors[cl[slot]] = x;
            }
        }
    }
    let mut pairs = Vec::with_capacity(values.len());
    for (ci, cl) in clusters.iter().enumerate() {
        let lo = cl.iter().map(|&i| values[i]).fold(f64::INFINITY, f64::min);
        let hi = cl.iter().map(|&i| values[i]).fold(f64::NEG_INFINITY, f64::max);
        let above = clusters.get(ci.wrapping_sub(1)).map(|c| values[c[c.len() - 1]] - hi);
        let below = clusters.get(ci + 1).map(|c| lo - values[c[0]]);
        let gap = match (above, below) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => f64::INFINITY,
        };
        for &i in cl {
            let y = &vectors[i];
            let ky = op.apply_symmetric(y);
            let residual = ky.iter().zip(y).map(|(a, b)| (a - values[i] * b).powi(2)).sum::<f64>().sqrt();
            let phi = unsymmetrize(mesh, y);
            let phi = fix_sign(mesh, phi);
            let symmetry = match mesh.reflection_map() {
                Some(_) => mesh.symmetry_class(&phi, SYMMETRY_TOL)?,
                None => Symmetry::None,
            };
            pairs.push(SpectralPair { lambda: values[i], phi, multiplicity_gap: gap, symmetry, residual, cluster: ci });
        }
    }
    Ok(pairs)
}

fn unsymmetrize(mesh: &Mesh, y: &[f64]) -> Field {
    let vals: Vec<f64> = y.iter().zip(mesh.weights()).map(|(v, w)| v / w.sqrt()).collect();
    let f = Field::from_real(&vals);
    let norm = mesh.norm(&f);
    f.scaled(Complex64::new(1.0 / norm, 0.0))
}

/// Weighted mean ≥ 0; for (numerically) zero mean the first significant entry is positive.
pub fn fix_sign(mesh: &Mesh, phi: Field) -> Field {
    let mean = mesh.integral(&phi).re;
    let max = phi.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let scale = mesh.norm(&phi) * mesh.total_measure().sqrt();
    let flip = if mean.abs() > 1e-10 * scale {
        mean < 0.0
    } else {
        phi.values.iter().find(|v| v.norm() > 1e-6 * max).map(|v| v.re < 0.0).unwrap_or(false)
    };
    if flip {
        phi.scaled(Complex64::new(-1.0, 0.0))
    } else {
        phi
    }
}

/// Groups consecutive (descending) eigenvalues whose relative spacing is below `tol`.
pub fn cluster_indices(values: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, v) in values.iter().enumerate() {
        match out.last_mut() {
            Some(c) if (values[c[c.len() - 1]] - v).abs() <= tol * scale => c.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct KreinRutmanReport {
    pub lambda0: f64,
    pub relative_gap: f64,
    pub simple: bool,
    pub min_phi: f64,
    pub min_index: usize,
    pub positive: bool,
}

impl KreinRutmanReport {
    pub fn passed(&self) -> bool {
        self.simple && self.positive
    }
}

pub fn check_krein_rutman(pairs: &[SpectralPair]) -> Result<KreinRutmanReport> {
    let first = pairs.first().ok_or(Error::TooManyEigenpairs { requested: 1, available: 0 })?;
    let (min_index, min_phi) = first
        .phi
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v.re))
        .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
    let relative_gap = first.multiplicity_gap / first.lambda.abs();
    Ok(KreinRutmanReport {
        lambda0: first.lambda,
        relative_gap,
        simple: relative_gap > GAP_TOL,
        min_phi,
        min_index,
        positive: min_phi > 0.0,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DiluteDimerReport {
    pub half_separation: f64,
    pub lambda_single: f64,
    pub k_i: f64,
    pub lambda_plus_pred: f64,
    pub lambda_minus_pred: f64,
    pub lambda_plus_meas: f64,
    pub lambda_minus_meas: f64,
    /// |⟨φ±, (T_Lφ₀ ± R T_Lφ₀)/√2⟩|
    pub overlap_plus: f64,
    pub overlap_minus: f64,
    /// ∫φ₀ over the single particle
    pub integral_phi0: f64,
}

impl DiluteDimerReport {
    pub fn error_plus(&self) -> f64 {
        (self.lambda_plus_meas - self.lambda_plus_pred).abs()
    }

    pub fn error_minus(&self) -> f64 {
        (self.lambda_minus_meas - self.lambda_minus_pred).abs()
    }

    /// `k_I·8πL`, which tends to `(∫φ₀)²`.
    pub fn far_field_product(&self) -> f64 {
        self.k_i * 8.0 * std::f64::consts::PI * self.half_separation
    }
}

/// First-order dilute-dimer predictions `λ± = λ₀ ± k_I` against the dimer spectrum.
pub fn dilute_dimer_analysis(base: &DomainSpec, l_values: &[f64]) -> Result<Vec<DiluteDimerReport>> {
    if base.dimension != 3 {
        return Err(Error::DimensionMismatch { expected: 3, got: base.dimension });
    }
    let single = build_mesh(base)?;
    let k0 = assemble_newtonian(&single)?;
    let p0 = top_eigenpairs(&k0, &single, 1)?.remove(0);
    let integral_phi0 = single.integral(&p0.phi).re;
    l_values
        .iter()
        .map(|&l| {
            let mesh = build_mesh(&DomainSpec::dimer(base.clone(), l))?;
            let k = assemble_newtonian(&mesh)?;
            let embed = mesh.embedding_of(&single, [-l, 0.0, 0.0])?;
            let mut t = Field::zeros(mesh.len());
            for (src, &dst) in embed.iter().enumerate() {
                t.values[dst] = p0.phi.values[src];
            }
            let rt = mesh.reflect(&t)?;
            let k_i = mesh.inner(&rt, &k.apply(&t)?).re;
            let pairs = top_eigenpairs(&k, &mesh, 2)?;
            let s2 = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            let plus = t.axpy(Complex64::new(1.0, 0.0), &rt).scaled(s2);
            let minus = t.axpy(Complex64::new(-1.0, 0.0), &rt).scaled(s2);
            Ok(DiluteDimerReport {
                half_separation: l,
                lambda_single: p0.lambda,
                k_i,
                lambda_plus_pred: p0.lambda + k_i,
                lambda_minus_pred: p0.lambda - k_i,
                lambda_plus_meas: pairs[0].lambda,
                lambda_minus_meas: pairs[1].lambda,
                overlap_plus: mesh.inner(&pairs[0].phi, &plus).norm(),
                overlap_minus: mesh.inner(&pairs[1].phi, &minus).norm(),
                integral_phi0,
            })
        })
        .collect()
}

/// Leading eigenpairs of the operator governing the mesh: `K_D` in 3D (dense
/// up to [`DENSE_LIMIT`] cells, FFT-applied beyond) and `K̃_D` in 2D.
pub fn leading_spectrum(mesh: &Mesh, k: usize) -> Result<Vec<SpectralPair>> {
    match mesh.dimension() {
        3 if mesh.len() > DENSE_LIMIT && mesh.has_uniform_weights() => top_eigenpairs(&ConvolutionOperator::new(mesh)?, mesh, k),
        3 => top_eigenpairs(&assemble_newtonian(mesh)?, mesh, k),
        _ => top_eigenpairs(&assemble_tilde(mesh)?, mesh, k),
    }
}

/// CSV rows `index, lambda, symmetry, gap, residual`.
pub fn write_spectrum_csv<W: Write>(pairs: &[SpectralPair], mut out: W) -> io::Result<()> {
    writeln!(out, "index,lambda,symmetry,gap,residual")?;
    for (i, p) in pairs.iter().enumerate() {
        writeln!(
            out,
            "{i},{:.16e},{},{:.16e},{:.16e}",
            p.lambda,
            p.symmetry.as_str(),
            p.multiplicity_gap,
            p.residual
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn ball_spectrum_structure() {
        let mesh = build_mesh(&DomainSpec::ball(1.0, 0.2)).unwrap();
        let k = assemble_newtonian(&mesh).unwrap();
        let pairs = top_eigenpairs(&k, &mesh, 5).unwrap();
        assert!((pairs[0].lambda - 4.0 / (PI * PI)).abs() / pairs[0].lambda < 0.05);
        // ℓ = 1 triple, exactly degenerate under the cubic symmetry of the voxel ball
        for p in &pairs[1..4] {
            assert!((p.lambda - 1.0 / (PI * PI)).abs() * PI * PI < 0.08, "{}", p.lambda);
            assert_eq!(p.cluster, 1);
        }
        let sym: Vec<_> = pairs[1..4].iter().map(|p| p.symmetry).collect();
        assert_eq!(sym.iter().filter(|s| **s == Symmetry::Odd).count(), 1, "{sym:?}");
        assert_eq!(sym.iter().filter(|s| **s == Symmetry::Even).count(), 2, "{sym:?}");
        for (i, p) in pairs.iter().enumerate() {
            assert!(p.residual < 1e-10, "{}", p.residual);
            assert!((mesh.norm(&p.phi) - 1.0).abs() < 1e-12);
            for q in &pairs[..i] {
                assert!(mesh.inner(&p.phi, &q.phi).norm() < 1e-10);
            }
        }
        let kr = check_krein_rutman(&pairs).unwrap();
        assert!(kr.passed() && kr.relative_gap > 0.5, "{kr:?}");
    }

    #[test]
    fn krylov_agrees_with_dense() {
        let mesh = build_mesh(&DomainSpec::ball(1.0, 0.2)).unwrap();
        let dense = top_eigenpairs(&assemble_newtonian(&mesh).unwrap(), &mesh, 5).unwrap();
        let conv = ConvolutionOperator::new(&mesh).unwrap();
        let (vals, _) = krylov_top(&conv, 6).unwrap();
        for (a, b) in dense.iter().zip(&vals) {
            assert!((a.lambda - b).abs() < 1e-11, "{} {}", a.lambda, b);
        }
    }

    #[test]
    fn negated_eigenvector_fails_positivity() {
        let mesh = build_mesh(&DomainSpec::ball(1.0, 0.34)).unwrap();
        let mut pairs = top_eigenpairs(&assemble_newtonian(&mesh).unwrap(), &mesh, 2).unwrap();
        assert!(check_krein_rutman(&pairs).unwrap().passed());
        pairs[0].phi = pairs[0].phi.scaled(Complex64::new(-1.0, 0.0));
        assert!(!check_krein_rutman(&pairs).unwrap().positive);
    }

    #[test]
    fn refinement_is_cauchy() {
        let lam = |h: f64| {
            let mesh = build_mesh(&DomainSpec::ball(1.0, h)).unwrap();
            top_eigenpairs(&ConvolutionOperator::new(&mesh).unwrap(), &mesh, 1).unwrap()[0].lambda
        };
        let (a, b, c) = (lam(0.4), lam(0.2), lam(0.1));
        assert!((a - b).abs() / (b - c).abs() >= 1.7, "{a} {b} {c}");
    }

    #[test]
    fn dimer_eigenfields_are_even_or_odd() {
        let mesh = build_mesh(&DomainSpec::dimer(DomainSpec::ball(1.0, 0.34), 2.04)).unwrap();
        let pairs = top_eigenpairs(&assemble_newtonian(&mesh).unwrap(), &mesh, 6).unwrap();
        assert_eq!(pairs[0].symmetry, Symmetry::Even);
        assert_eq!(pairs[1].symmetry, Symmetry::Odd);
        assert!(pairs.iter().all(|p| p.symmetry != Symmetry::None));
        assert!(check_krein_rutman(&pairs).unwrap().passed());
    }

    #[test]
    fn tilde_eigenfields_have_zero_mean() {
        let mesh = build_mesh(&DomainSpec::disk(1.0, 0.1)).unwrap();
        let pairs = top_eigenpairs(&assemble_tilde(&mesh).unwrap(), &mesh, 4).unwrap();
        for p in &pairs {
            assert!(mesh.integral(&p.phi).norm() < 1e-12);
            assert!(p.lambda > 0.0);
        }
    }

    #[test]
    fn dilute_dimer_reports() {
        let reports = dilute_dimer_analysis(&DomainSpec::ball(1.0, 0.34), &[2.04, 4.08]).unwrap();
        for r in &reports {
            assert!(r.lambda_minus_pred < r.lambda_single && r.lambda_single < r.lambda_plus_pred);
            assert!(r.lambda_minus_meas < r.lambda_single && r.lambda_single < r.lambda_plus_meas);
            assert!(r.overlap_plus > 0.99 && r.overlap_minus > 0.99);
        }
        assert!(reports[1].error_plus() < reports[0].error_plus());
        assert!(reports[1].overlap_plus > reports[0].overlap_plus);
        let overlapping = dilute_dimer_analysis(&DomainSpec::ball(1.0, 0.2), &[1.0]);
        assert!(matches!(overlapping, Err(Error::OverlappingParticles(_))));
    }

    #[test]
    fn clusters_and_csv() {
        assert_eq!(cluster_indices(&[1.0, 0.5, 0.49999, 0.4999, 0.1], 1e-3), vec![vec![0], vec![1, 2, 3], vec![4]]);
        let mesh = build_mesh(&DomainSpec::ball(1.0, 0.5)).unwrap();
        let pairs = top_eigenpairs(&assemble_newtonian(&mesh).unwrap(), &mesh, 2).unwrap();
        let mut buf = Vec::new();
        write_spectrum_csv(&pairs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("0,"));
        let k = assemble_newtonian(&mesh).unwrap();
        assert!(matches!(top_eigenpairs(&k, &mesh, mesh.len() + 1), Err(Error::TooManyEigenpairs { .. })));
    }
}
