//! Nyström discretizations of the volume potentials `K_D^ω`, `K_D` and `K̃_D`.
//!
//! Entries are `K[i][j] = G(|xᵢ − xⱼ|)·wⱼ` off the diagonal. The singular self
//! cell is integrated analytically over the ball (3D) or disk (2D) of equal
//! measure. On voxel meshes all pairwise distances are `h·sqrt(m)` for an
//! integer `m`, so kernel values are tabulated once per distinct `m`.

use std::f64::consts::PI;
use std::io::{self, Write};
use std::sync::Arc;

use faer::Mat;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::kernels::{eta_omega, green, green_d_omega};
use crate::mesh::{Field, Mesh};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    HelmholtzPotential,
    /// `∂K_D^ω/∂ω`
    HelmholtzDerivative,
    Newtonian,
    TildeNewtonian,
}

#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    kind: OperatorKind,
    omega: Complex64,
    dimension: usize,
    weights: Vec<f64>,
    entries: Mat<Complex64>,
}

impl OperatorMatrix {
    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn omega(&self) -> Complex64 {
        self.omega
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn entries(&self) -> &Mat<Complex64> {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.entries[(i, j)]
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        Ok(Field { values: self.apply_values(&f.values)? })
    }

    pub fn apply_values(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        let n = self.len();
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.len() });
        }
        let mut y = vec![ZERO; n];
        for (j, &xj) in x.iter().enumerate() {
            if xj == ZERO {
                continue;
            }
            let col = self.entries.col(j);
            for (i, yi) in y.iter_mut().enumerate() {
                *yi += col[i] * xj;
            }
        }
        Ok(y)
    }

    /// `W^{1/2} K W^{-1/2}`, real and symmetric for the static kinds.
    pub fn symmetrized(&self) -> Result<Mat<f64>> {
        if !matches!(self.kind, OperatorKind::Newtonian | OperatorKind::TildeNewtonian) {
            return Err(Error::Eigensolver("only static potentials are self-adjoint".into()));
        }
        let s: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        let n = self.len();
        Ok(Mat::from_fn(n, n, |i, j| {
            0.5 * (self.entries[(i, j)].re * s[i] / s[j] + self.entries[(j, i)].re * s[j] / s[i])
        }))
    }

    /// Row-major little-endian `(re, im)` pairs.
    pub fn write_binary<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.len();
        let mut buf = Vec::with_capacity(16 * n);
        for i in 0..n {
            buf.clear();
            for j in 0..n {
                let v = self.entries[(i, j)];
                buf.extend_from_slice(&v.re.to_le_bytes());
                buf.extend_from_slice(&v.im.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }
}

/// Integral of the static kernel over the ball/disk of measure `w` about its center.
pub fn self_cell_static(dimension: usize, w: f64) -> f64 {
    if dimension == 3 {
        let rho = (3.0 * w / (4.0 * PI)).cbrt();
        0.5 * rho * rho
    } else {
        let rho = (w / PI).sqrt();
        0.25 * rho * rho - 0.5 * rho * rho * rho.ln()
    }
}

/// `wᵢ·lim_{r→0}(G^ω − G⁰)(r)`.
fn self_cell_correction(dimension: usize, omega: Complex64, w: f64) -> Result<Complex64> {
    if omega == ZERO {
        return Ok(ZERO);
    }
    Ok(if dimension == 3 {
        w * Complex64::new(0.0, 1.0) * omega / (4.0 * PI)
    } else {
        -w * eta_omega(omega)?
    })
}

fn self_cell_derivative(dimension: usize, omega: Complex64, w: f64) -> Complex64 {
    if dimension == 3 {
        Complex64::new(0.0, w / (4.0 * PI))
    } else {
        -w / (2.0 * PI * omega)
    }
}

fn squared_grid_distance(a: &[i64; 3], b: &[i64; 3]) -> usize {
    let d: i64 = (0..3).map(|k| (a[k] - b[k]).pow(2)).sum();
    d as usize
}

/// Kernel values tabulated by squared grid distance.
struct KernelTable {
    values: Vec<Complex64>,
}

impl KernelTable {
    fn build(mesh: &Mesh, f: impl Fn(f64) -> Result<Complex64>) -> Result<Self> {
        let idx = mesh.grid_index();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for k in idx {
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
        }
        let max_m = squared_grid_distance(&lo, &hi);
        let mut present = vec![false; max_m + 1];
        // mark only the distances that occur (cheap relative to kernel evaluation)
        for (i, a) in idx.iter().enumerate() {
            for b in &idx[i + 1..] {
                present[squared_grid_distance(a, b)] = true;
            }
        }
        let h = mesh.resolution();
        let mut values = vec![ZERO; max_m + 1];
        for (m, used) in present.iter().enumerate() {
            if *used && m > 0 {
                values[m] = f(h * (m as f64).sqrt())?;
            }
        }
        Ok(Self { values })
    }
}

fn assemble_from_table(mesh: &Mesh, table: &KernelTable, diag: impl Fn(usize) -> Complex64) -> Mat<Complex64> {
    let idx = mesh.grid_index();
    let w = mesh.weights();
    Mat::from_fn(mesh.len(), mesh.len(), |i, j| {
        if i == j {
            diag(i)
        } else {
            table.values[squared_grid_distance(&idx[i], &idx[j])] * w[j]
        }
    })
}

fn require_nonempty(mesh: &Mesh) -> Result<()> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh { resolution: mesh.resolution() });
    }
    Ok(())
}

pub fn assemble_newtonian(mesh: &Mesh) -> Result<OperatorMatrix> {
    require_nonempty(mesh)?;
    let d = mesh.dimension();
    let table = KernelTable::build(mesh, |r| green(d, ZERO, r))?;
    let w = mesh.weights();
    let entries = assemble_from_table(mesh, &table, |i| Complex64::new(self_cell_static(d, w[i]), 0.0));
    Ok(OperatorMatrix {
        kind: OperatorKind::Newtonian,
        omega: ZERO,
        dimension: d,
        weights: w.to_vec(),
        entries,
    })
}

pub fn assemble_helmholtz(mesh: &Mesh, omega: Complex64) -> Result<OperatorMatrix> {
    if !(omega.re.is_finite() && omega.im.is_finite()) {
        return Err(Error::OutOfDomain(omega.re, "ω must be finite"));
    }
    if omega == ZERO {
        let mut k = assemble_newtonian(mesh)?;
        k.kind = OperatorKind::HelmholtzPotential;
        return Ok(k);
    }
    require_nonempty(mesh)?;
    let d = mesh.dimension();
    let table = KernelTable::build(mesh, |r| green(d, omega, r))?;
    let w = mesh.weights();
    let corr: Vec<Complex64> =
        w.iter().map(|&wi| self_cell_correction(d, omega, wi)).collect::<Result<_>>()?;
    let entries = assemble_from_table(mesh, &table, |i| self_cell_static(d, w[i]) + corr[i]);
    Ok(OperatorMatrix {
        kind: OperatorKind::HelmholtzPotential,
        omega,
        dimension: d,
        weights: w.to_vec(),
        entries,
    })
}

/// `∂K_D^ω/∂ω`, with the analytic self-cell derivative.
pub fn assemble_helmholtz_derivative(mesh: &Mesh, omega: Complex64) -> Result<OperatorMatrix> {
    require_nonempty(mesh)?;
    let d = mesh.dimension();
    if d == 2 && omega == ZERO {
        return Err(Error::OutOfDomain(0.0, "2D potential is not differentiable at ω = 0"));
    }
    let table = KernelTable::build(mesh, |r| green_d_omega(d, omega, r))?;
    let w = mesh.weights();
    let entries = assemble_from_table(mesh, &table, |i| self_cell_derivative(d, omega, w[i]));
    Ok(OperatorMatrix {
        kind: OperatorKind::HelmholtzDerivative,
        omega,
        dimension: d,
        weights: w.to_vec(),
        entries,
    })
}

/// `(I − P₀) K (I − P₀)` with `P₀f = (Σ wᵢfᵢ/|D|)·1`.
pub fn assemble_tilde(mesh: &Mesh) -> Result<OperatorMatrix> {
    if mesh.dimension() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: mesh.dimension() });
    }
    let mut k = assemble_newtonian(mesh)?;
    let n = mesh.len();
    let w = mesh.weights();
    let area = mesh.total_measure();
    let e = &k.entries;
    // row_mean[j] = Σᵢ wᵢ K[i][j] / |D|,  col_sum[i] = Σⱼ K[i][j]
    let mut row_mean = vec![0.0; n];
    let mut col_sum = vec![0.0; n];
    for j in 0..n {
        for i in 0..n {
            let v = e[(i, j)].re;
            row_mean[j] += w[i] * v / area;
            col_sum[i] += v;
        }
    }
    let total: f64 = (0..n).map(|i| w[i] * col_sum[i]).sum::<f64>() / (area * area);
    k.entries = Mat::from_fn(n, n, |i, j| {
        let v = e[(i, j)].re - row_mean[j] - col_sum[i] * w[j] / area + total * w[j];
        Complex64::new(v, 0.0)
    });
    k.kind = OperatorKind::TildeNewtonian;
    Ok(k)
}

/// Real symmetric operator acting on the weight-symmetrized coordinates
/// `W^{1/2} f`; implemented densely or matrix-free.
pub trait SymmetricOperator {
    fn size(&self) -> usize;
    fn apply_symmetric(&self, x: &[f64]) -> Vec<f64>;
    /// Dense form when it is cheap to produce.
    fn dense_symmetric(&self) -> Option<Mat<f64>>;
    fn weights(&self) -> &[f64];
}

impl SymmetricOperator for OperatorMatrix {
    fn size(&self) -> usize {
        self.len()
    }

    fn apply_symmetric(&self, x: &[f64]) -> Vec<f64> {
        let s: Vec<f64> = self.weights.iter().map(|w| w.sqrt()).collect();
        let scaled: Vec<Complex64> = x.iter().zip(&s).map(|(v, si)| Complex64::new(v / si, 0.0)).collect();
        let y = self.apply_values(&scaled).expect("length checked by caller");
        y.iter().zip(&s).map(|(v, si)| v.re * si).collect()
    }

    fn dense_symmetric(&self) -> Option<Mat<f64>> {
        self.symmetrized().ok()
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Matrix-free static Newtonian potential on a uniform voxel mesh: the kernel
/// is translation invariant on the grid, so `K` is a zero-padded block-Toeplitz
/// convolution evaluated with FFTs. Memory is `O(n)` instead of `O(n²)`.
pub struct ConvolutionOperator {
    dimension: usize,
    weights: Vec<f64>,
    /// linear index of every cell in the padded grid
    slots: Vec<usize>,
    shape: [usize; 3],
    kernel_hat: Vec<Complex64>,
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl ConvolutionOperator {
    pub fn new(mesh: &Mesh) -> Result<Self> {
        require_nonempty(mesh)?;
        if !mesh.has_uniform_weights() {
            return Err(Error::InvalidDomain("convolution operator needs uniform weights".into()));
        }
        let d = mesh.dimension();
        let h = mesh.resolution();
        let w = mesh.weights()[0];
        let idx = mesh.grid_index();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for k in idx {
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
        }
        let mut extent = [1usize; 3];
        let mut shape = [1usize; 3];
        for a in 0..d {
            extent[a] = (hi[a] - lo[a] + 1) as usize;
            shape[a] = 2 * extent[a];
        }
        let linear = |k: [usize; 3]| (k[0] * shape[1] + k[1]) * shape[2] + k[2];
        let slots = idx
            .iter()
            .map(|k| linear([(k[0] - lo[0]) as usize, (k[1] - lo[1]) as usize, (k[2] - lo[2]) as usize]))
            .collect();
        let total = shape.iter().product();
        let mut kernel = vec![ZERO; total];
        let self_term = self_cell_static(d, w);
        let wrap = |delta: i64, p: usize| -> usize { delta.rem_euclid(p as i64) as usize };
        let span = |a: usize| -> std::ops::RangeInclusive<i64> {
            let e = extent[a] as i64;
            -(e - 1)..=(e - 1)
        };
        for dx in span(0) {
            for dy in span(1) {
                for dz in span(2) {
                    let m = dx * dx + dy * dy + dz * dz;
                    let v = if m == 0 { self_term } else { green(d, ZERO, h * (m as f64).sqrt())?.re * w };
                    kernel[linear([wrap(dx, shape[0]), wrap(dy, shape[1]), wrap(dz, shape[2])])] =
                        Complex64::new(v, 0.0);
                }
            }
        }
        let mut planner = FftPlanner::new();
        let forward = [0, 1, 2].map(|a| planner.plan_fft_forward(shape[a]));
        let inverse = [0, 1, 2].map(|a| planner.plan_fft_inverse(shape[a]));
        let mut op = Self {
            dimension: d,
            weights: mesh.weights().to_vec(),
            slots,
            shape,
            kernel_hat: Vec::new(),
            forward,
            inverse,
        };
        op.transform(&mut kernel, false);
        op.kernel_hat = kernel;
        Ok(op)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let [n0, n1, n2] = self.shape;
        let plans = if inverse { &self.inverse } else { &self.forward };
        // axis 2 is contiguous
        if n2 > 1 {
            for chunk in data.chunks_mut(n2) {
                plans[2].process(chunk);
            }
        }
        let mut line = Vec::new();
        if n1 > 1 {
            line.resize(n1, ZERO);
            for i0 in 0..n0 {
                for i2 in 0..n2 {
                    for (i1, v) in line.iter_mut().enumerate() {
                        *v = data[(i0 * n1 + i1) * n2 + i2];
                    }
                    plans[1].process(&mut line);
                    for (i1, v) in line.iter().enumerate() {
                        data[(i0 * n1 + i1) * n2 + i2] = *v;
                    }
                }
            }
        }
        if n0 > 1 {
            line.resize(n0, ZERO);
            let stride = n1 * n2;
            for rest in 0..stride {
                for (i0, v) in line.iter_mut().enumerate() {
                    *v = data[i0 * stride + rest];
                }
                plans[0].process(&mut line);
                for (i0, v) in line.iter().enumerate() {
                    data[i0 * stride + rest] = *v;
                }
            }
        }
    }

    /// `K f` for a complex field.
    pub fn apply_values(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        if x.len() != self.slots.len() {
            return Err(Error::DimensionMismatch { expected: self.slots.len(), got: x.len() });
        }
        let total: usize = self.shape.iter().product();
        let mut grid = vec![ZERO; total];
        for (v, &s) in x.iter().zip(&self.slots) {
            grid[s] = *v;
        }
        self.transform(&mut grid, false);
        for (g, k) in grid.iter_mut().zip(&self.kernel_hat) {
            *g *= k;
        }
        self.transform(&mut grid, true);
        let scale = 1.0 / total as f64;
        Ok(self.slots.iter().map(|&s| grid[s] * scale).collect())
    }

    pub fn apply(&self, f: &Field) -> Result<Field> {
        Ok(Field { values: self.apply_values(&f.values)? })
    }
}

impl SymmetricOperator for ConvolutionOperator {
    fn size(&self) -> usize {
        self.slots.len()
    }

    /// Uniform weights make `K` itself symmetric.
    fn apply_symmetric(&self, x: &[f64]) -> Vec<f64> {
        let xc: Vec<Complex64> = x.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        self.apply_values(&xc).expect("length checked by caller").iter().map(|v| v.re).collect()
    }

    fn dense_symmetric(&self) -> Option<Mat<f64>> {
        None
    }

    fn weights(&self) -> &[f64] {
        &self.weights
    }
}
