//! Voxel quadrature meshes for balls, disks, boxes and mirror-symmetric dimers.
//!
//! Cells are the voxels of a uniform grid of spacing `h`; a cell belongs to the
//! mesh iff its center lies strictly inside the analytic domain, and then it is
//! counted with its full measure `h^d`. Cell centers sit at `h * (k + s)` for an
//! integer grid index `k` and a per-axis offset `s` in `{0, 1/2}`, which keeps the
//! grid symmetric under `x_1 -> -x_1`. Cells are stored in lexicographic order of
//! their grid index.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{self, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of a resonator, centered at the origin unless it is a dimer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Ball { radius: f64 },
    Disk { radius: f64 },
    Box { extents: Vec<f64> },
    /// Two copies of `base`: `D1 = base - L e1` and `D2 = R(base) + L e1`.
    Dimer { base: Box<Shape>, half_separation: f64 },
}

impl Shape {
    fn validate(&self, dimension: usize) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidDomain(format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            Shape::Ball { radius } => {
                if dimension != 3 {
                    return Err(Error::InvalidDomain("ball requires dimension 3".into()));
                }
                positive("radius", *radius)
            }
            Shape::Disk { radius } => {
                if dimension != 2 {
                    return Err(Error::InvalidDomain("disk requires dimension 2".into()));
                }
                positive("radius", *radius)
            }
            Shape::Box { extents } => {
                if extents.len() != dimension {
                    return Err(Error::InvalidDomain(format!(
                        "box has {} extents for dimension {dimension}",
                        extents.len()
                    )));
                }
                extents.iter().try_for_each(|&e| positive("extent", e))
            }
            Shape::Dimer { base, half_separation } => {
                if matches!(**base, Shape::Dimer { .. }) {
                    return Err(Error::InvalidDomain("nested dimers are not supported".into()));
                }
                positive("half_separation", *half_separation)?;
                base.validate(dimension)
            }
        }
    }

    /// Largest |x_1| reached by the (centered) shape.
    fn half_width_x1(&self) -> f64 {
        match self {
            Shape::Ball { radius } | Shape::Disk { radius } => *radius,
            Shape::Box { extents } => 0.5 * extents[0],
            Shape::Dimer { base, half_separation } => half_separation + base.half_width_x1(),
        }
    }

    /// Analytic measure |D|.
    pub fn measure(&self) -> f64 {
        match self {
            Shape::Ball { radius } => 4.0 / 3.0 * PI * radius.powi(3),
            Shape::Disk { radius } => PI * radius * radius,
            Shape::Box { extents } => extents.iter().product(),
            Shape::Dimer { base, .. } => 2.0 * base.measure(),
        }
    }

    fn contains(&self, x: &[f64; 3], dimension: usize) -> bool {
        match self {
            Shape::Ball { radius } | Shape::Disk { radius } => {
                let r2: f64 = x[..dimension].iter().map(|c| c * c).sum();
                r2 < radius * radius
            }
            Shape::Box { extents } => x[..dimension]
                .iter()
                .zip(extents)
                .all(|(c, e)| c.abs() < 0.5 * e),
            Shape::Dimer { .. } => unreachable!("dimers are meshed from their base"),
        }
    }

    fn grid_offsets(&self, h: f64) -> [f64; 3] {
        match self {
            Shape::Box { extents } => {
                let mut s = [0.0; 3];
                for (axis, e) in extents.iter().enumerate() {
                    let cells = (e / h).round() as i64;
                    s[axis] = if cells % 2 == 0 { 0.5 } else { 0.0 };
                }
                s
            }
            _ => [0.5; 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub dimension: usize,
    pub shape: Shape,
    /// Cell size h.
    pub resolution: f64,
}

impl DomainSpec {
    pub fn new(dimension: usize, shape: Shape, resolution: f64) -> Self {
        Self { dimension, shape, resolution }
    }

    pub fn ball(radius: f64, h: f64) -> Self {
        Self::new(3, Shape::Ball { radius }, h)
    }

    pub fn disk(radius: f64, h: f64) -> Self {
        Self::new(2, Shape::Disk { radius }, h)
    }

    pub fn dimer(base: DomainSpec, half_separation: f64) -> Self {
        Self::new(
            base.dimension,
            Shape::Dimer { base: Box::new(base.shape), half_separation },
            base.resolution,
        )
    }

    /// The single-particle spec a dimer is built from.
    pub fn base(&self) -> Option<DomainSpec> {
        match &self.shape {
            Shape::Dimer { base, .. } => {
                Some(DomainSpec::new(self.dimension, (**base).clone(), self.resolution))
            }
            _ => None,
        }
    }

    pub fn half_separation(&self) -> Option<f64> {
        match &self.shape {
            Shape::Dimer { half_separation, .. } => Some(*half_separation),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dimension == 2 || self.dimension == 3) {
            return Err(Error::InvalidDomain(format!(
                "dimension must be 2 or 3, got {}",
                self.dimension
            )));
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(Error::InvalidDomain(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        self.shape.validate(self.dimension)
    }
}

/// Parity of a field under the reflection `x_1 -> -x_1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    Even,
    Odd,
    None,
}

impl Symmetry {
    pub fn as_str(self) -> &'static str {
        match self {
            Symmetry::Even => "even",
            Symmetry::Odd => "odd",
            Symmetry::None => "none",
        }
    }

    pub fn opposite(self) -> Symmetry {
        match self {
            Symmetry::Even => Symmetry::Odd,
            Symmetry::Odd => Symmetry::Even,
            Symmetry::None => Symmetry::None,
        }
    }
}

/// Complex cell values on a mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub values: Vec<Complex64>,
}

impl Field {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![Complex64::new(0.0, 0.0); n] }
    }

    pub fn from_real(values: &[f64]) -> Self {
        Self { values: values.iter().map(|&v| Complex64::new(v, 0.0)).collect() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, alpha: Complex64) -> Field {
        Field { values: self.values.iter().map(|v| v * alpha).collect() }
    }

    pub fn conj(&self) -> Field {
        Field { values: self.values.iter().map(|v| v.conj()).collect() }
    }

    /// `self + alpha * other`
    pub fn axpy(&self, alpha: Complex64, other: &Field) -> Field {
        Field {
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + alpha * b).collect(),
        }
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    dimension: usize,
    h: f64,
    offset: [f64; 3],
    grid_index: Vec<[i64; 3]>,
    centers: Vec<[f64; 3]>,
    weights: Vec<f64>,
    particle_tag: Vec<u8>,
    reflection_map: Option<Vec<usize>>,
    total_measure: f64,
    lookup: HashMap<[i64; 3], usize>,
}

/// Mesh a domain with the center-inclusion voxel rule.
pub fn build_mesh(spec: &DomainSpec) -> Result<Mesh> {
    spec.validate()?;
    let h = spec.resolution;
    let d = spec.dimension;
    let cells: Vec<([i64; 3], u8)>;
    let offset: [f64; 3];
    match &spec.shape {
        Shape::Dimer { base, half_separation } => {
            let l = *half_separation;
            if base.half_width_x1() >= l {
                return Err(Error::OverlappingParticles(format!(
                    "base half-width {} reaches the symmetry plane at separation L = {l}",
                    base.half_width_x1()
                )));
            }
            let base_offset = base.grid_offsets(h);
            let base_cells = mesh_centered(base, d, h, base_offset);
            // particle 1 lives at base - L e1; its grid must stay mirror-symmetric
            let shifted = base_offset[0] - l / h;
            let s0 = shifted.rem_euclid(1.0);
            let s0 = if s0 > 1.0 - 1e-9 { 0.0 } else { s0 };
            let s0 = if s0.abs() < 1e-9 {
                0.0
            } else if (s0 - 0.5).abs() < 1e-9 {
                0.5
            } else {
                return Err(Error::InvalidDomain(format!(
                    "2L = {} must be a multiple of h = {h} for a grid-aligned dimer",
                    2.0 * l
                )));
            };
            offset = [s0, base_offset[1], base_offset[2]];
            let shift = (shifted - s0).round() as i64;
            let mut all = Vec::with_capacity(2 * base_cells.len());
            for k in &base_cells {
                let k1 = [k[0] + shift, k[1], k[2]];
                all.push((k1, 1u8));
                all.push((mirror_index(&k1, s0), 2u8));
            }
            cells = all;
        }
        shape => {
            offset = shape.grid_offsets(h);
            cells = mesh_centered(shape, d, h, offset).into_iter().map(|k| (k, 1u8)).collect();
        }
    }
    if cells.is_empty() {
        return Err(Error::EmptyMesh { resolution: h });
    }
    Mesh::from_cells(d, h, offset, cells)
}

fn mirror_index(k: &[i64; 3], s0: f64) -> [i64; 3] {
    // h (k + s) -> -h (k + s) = h (k' + s)  with  k' = -k - 2s
    let k0 = if s0 == 0.0 { -k[0] } else { -k[0] - 1 };
    [k0, k[1], k[2]]
}

fn mesh_centered(shape: &Shape, d: usize, h: f64, offset: [f64; 3]) -> Vec<[i64; 3]> {
    let reach = shape.half_width_x1().max(match shape {
        Shape::Box { extents } => extents.iter().cloned().fold(0.0, f64::max) * 0.5,
        _ => 0.0,
    });
    let kmax = (reach / h).ceil() as i64 + 1;
    let range = |axis: usize| -> std::ops::RangeInclusive<i64> {
        if axis < d {
            -kmax..=kmax
        } else {
            0..=0
        }
    };
    let mut out = Vec::new();
    for k0 in range(0) {
        for k1 in range(1) {
            for k2 in range(2) {
                let k = [k0, k1, k2];
                let mut x = [0.0; 3];
                for axis in 0..d {
                    x[axis] = h * (k[axis] as f64 + offset[axis]);
                }
                if shape.contains(&x, d) {
                    out.push(k);
                }
            }
        }
    }
    out
}

impl Mesh {
    fn from_cells(
        dimension: usize,
        h: f64,
        offset: [f64; 3],
        mut cells: Vec<([i64; 3], u8)>,
    ) -> Result<Mesh> {
        cells.sort_by_key(|c| c.0);
        if cells.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::OverlappingParticles("particles share grid cells".into()));
        }
        let cell_measure = h.powi(dimension as i32);
        let mut offset = offset;
        for s in offset.iter_mut().skip(dimension) {
            *s = 0.0;
        }
        let mut lookup = HashMap::with_capacity(cells.len());
        let mut grid_index = Vec::with_capacity(cells.len());
        let mut centers = Vec::with_capacity(cells.len());
        let mut particle_tag = Vec::with_capacity(cells.len());
        for (i, (k, tag)) in cells.iter().enumerate() {
            lookup.insert(*k, i);
            grid_index.push(*k);
            let mut x = [0.0; 3];
            for axis in 0..dimension {
                x[axis] = h * (k[axis] as f64 + offset[axis]);
            }
            centers.push(x);
            particle_tag.push(*tag);
        }
        let n = cells.len();
        let weights = vec![cell_measure; n];
        let total_measure = weights.iter().sum();
        let reflection_map: Option<Vec<usize>> = grid_index
            .iter()
            .map(|k| lookup.get(&mirror_index(k, offset[0])).copied())
            .collect();
        Ok(Mesh {
            dimension,
            h,
            offset,
            grid_index,
            centers,
            weights,
            particle_tag,
            reflection_map,
            total_measure,
            lookup,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn resolution(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn centers(&self) -> &[[f64; 3]] {
        &self.centers
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn grid_index(&self) -> &[[i64; 3]] {
        &self.grid_index
    }

    pub fn particle_tags(&self) -> &[u8] {
        &self.particle_tag
    }

    pub fn reflection_map(&self) -> Option<&[usize]> {
        self.reflection_map.as_deref()
    }

    pub fn total_measure(&self) -> f64 {
        self.total_measure
    }

    /// True when every cell has the same weight (always the case for voxel meshes).
    pub fn has_uniform_weights(&self) -> bool {
        self.weights.windows(2).all(|w| w[0] == w[1])
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.centers[i], &self.centers[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    /// Cell whose center coincides with `x` (to a fraction of h), if any.
    pub fn locate(&self, x: [f64; 3]) -> Option<usize> {
        let mut k = [0i64; 3];
        for axis in 0..self.dimension {
            let t = x[axis] / self.h - self.offset[axis];
            let r = t.round();
            if (t - r).abs() > 1e-6 {
                return None;
            }
            k[axis] = r as i64;
        }
        self.lookup.get(&k).copied()
    }

    /// For every cell of `base`, the index of the cell of `self` at `center + shift`.
    pub fn embedding_of(&self, base: &Mesh, shift: [f64; 3]) -> Result<Vec<usize>> {
        if base.dimension != self.dimension || (base.h - self.h).abs() > 1e-12 * self.h {
            return Err(Error::InvalidDomain("embedding requires matching grids".into()));
        }
        base.centers
            .iter()
            .map(|c| {
                self.locate([c[0] + shift[0], c[1] + shift[1], c[2] + shift[2]]).ok_or_else(|| {
                    Error::InvalidDomain("translated cell is not a cell of the target mesh".into())
                })
            })
            .collect()
    }

    pub fn check_len(&self, f: &Field) -> Result<()> {
        if f.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: f.len() });
        }
        Ok(())
    }

    /// Weighted inner product `sum_i w_i conj(f_i) g_i`.
    pub fn inner(&self, f: &Field, g: &Field) -> Complex64 {
        self.weights
            .iter()
            .zip(f.values.iter().zip(&g.values))
            .map(|(w, (a, b))| a.conj() * b * *w)
            .sum()
    }

    pub fn norm_sqr(&self, f: &Field) -> f64 {
        self.weights.iter().zip(&f.values).map(|(w, a)| w * a.norm_sqr()).sum()
    }

    pub fn norm(&self, f: &Field) -> f64 {
        self.norm_sqr(f).sqrt()
    }

    /// `sum_i w_i f_i`
    pub fn integral(&self, f: &Field) -> Complex64 {
        self.weights.iter().zip(&f.values).map(|(w, a)| a * *w).sum()
    }

    pub fn constant_field(&self, value: f64) -> Field {
        Field::from_real(&vec![value; self.len()])
    }

    pub fn coordinate_field(&self, axis: usize) -> Field {
        Field::from_real(&self.centers.iter().map(|c| c[axis]).collect::<Vec<_>>())
    }

    /// Restriction of `f` to the cells of one particle (others zeroed).
    pub fn restrict_to_particle(&self, f: &Field, tag: u8) -> Field {
        Field {
            values: f
                .values
                .iter()
                .zip(&self.particle_tag)
                .map(|(v, t)| if *t == tag { *v } else { Complex64::new(0.0, 0.0) })
                .collect(),
        }
    }

    /// `(int_{D1} |u|^2 - int_{D2} |u|^2) / ||u||^2`
    pub fn localization(&self, f: &Field) -> f64 {
        let mut per = [0.0f64; 2];
        for ((v, w), t) in f.values.iter().zip(&self.weights).zip(&self.particle_tag) {
            per[(*t as usize).saturating_sub(1).min(1)] += w * v.norm_sqr();
        }
        let total = per[0] + per[1];
        if total == 0.0 {
            0.0
        } else {
            (per[0] - per[1]) / total
        }
    }

    pub fn reflect(&self, f: &Field) -> Result<Field> {
        self.check_len(f)?;
        let map = self.reflection_map.as_ref().ok_or(Error::NotSymmetric)?;
        Ok(Field { values: map.iter().map(|&j| f.values[j]).collect() })
    }

    pub fn symmetry_class(&self, f: &Field, tol: f64) -> Result<Symmetry> {
        let norm = self.norm(f);
        if norm == 0.0 {
            return Err(Error::ZeroField);
        }
        let r = self.reflect(f)?;
        let even = self.norm(&r.axpy(Complex64::new(-1.0, 0.0), f));
        let odd = self.norm(&r.axpy(Complex64::new(1.0, 0.0), f));
        Ok(if even <= tol * norm {
            Symmetry::Even
        } else if odd <= tol * norm {
            Symmetry::Odd
        } else {
            Symmetry::None
        })
    }

    /// CSV rows `index, x, y[, z], weight, tag, mirror_index` (mirror -1 when absent).
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let coords = if self.dimension == 3 { "x,y,z" } else { "x,y" };
        writeln!(out, "index,{coords},weight,tag,mirror_index")?;
        for i in 0..self.len() {
            let c = &self.centers[i];
            let mirror = self.reflection_map.as_ref().map_or(-1, |m| m[i] as i64);
            write!(out, "{i}")?;
            for v in &c[..self.dimension] {
                write!(out, ",{v:.16e}")?;
            }
            writeln!(out, ",{:.16e},{},{mirror}", self.weights[i], self.particle_tag[i])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn ball_and_disk_measures_converge() {
        // every misclassified cell meets the shell |r - 1| <= h sqrt(d)/2
        for (spec_of, dim, exact) in [
            (DomainSpec::ball as fn(f64, f64) -> DomainSpec, 3, 4.0 * PI / 3.0),
            (DomainSpec::disk, 2, PI),
        ] {
            for h in [0.2, 0.1, 0.05, 0.025] {
                let err = (build_mesh(&spec_of(1.0, h)).unwrap().total_measure() - exact).abs();
                let delta = h * (dim as f64).sqrt();
                let shell = exact * ((1.0 + delta).powi(dim) - (1.0 - delta).powi(dim));
                assert!(err <= shell, "d={dim} h={h}: {err} > {shell}");
            }
            let fine = (build_mesh(&spec_of(1.0, 0.025)).unwrap().total_measure() - exact).abs();
            assert!(fine / exact < 5e-3, "d={dim}: {fine}");
        }
    }

    #[test]
    fn box_measure_is_exact_on_aligned_grids() {
        let spec = DomainSpec::new(3, Shape::Box { extents: vec![1.0, 0.6, 0.3] }, 0.1);
        let mesh = build_mesh(&spec).unwrap();
        assert_eq!(mesh.len(), 10 * 6 * 3);
        assert!((mesh.total_measure() - 0.18).abs() < 1e-12);
        assert!(mesh.reflection_map().is_some());
    }

    #[test]
    fn centers_lie_inside_and_order_is_lexicographic() {
        let mesh = build_mesh(&DomainSpec::ball(1.0, 0.25)).unwrap();
        for x in mesh.centers() {
            assert!(x[0] * x[0] + x[1] * x[1] + x[2] * x[2] < 1.0);
        }
        assert!(mesh.grid_index().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn dimer_is_balanced_and_reflection_swaps_particles() {
        for (l, h) in [(4.0, 0.25), (3.0, 0.2), (1.5, 0.1)] {
            let base = if l == 1.5 { DomainSpec::disk(1.0, h) } else { DomainSpec::ball(1.0, h) };
            let mesh = build_mesh(&DomainSpec::dimer(base, l)).unwrap();
            let tags = mesh.particle_tags();
            let ones = tags.iter().filter(|&&t| t == 1).count();
            assert_eq!(2 * ones, mesh.len());
            let map = mesh.reflection_map().unwrap();
            for i in 0..mesh.len() {
                assert_eq!(map[map[i]], i);
                assert_ne!(tags[i], tags[map[i]]);
                assert_eq!(mesh.centers()[map[i]][0], -mesh.centers()[i][0]);
            }
        }
    }

    #[test]
    fn dimer_particles_are_translates_of_the_base() {
        let base_spec = DomainSpec::ball(1.0, 0.25);
        let base = build_mesh(&base_spec).unwrap();
        let dimer = build_mesh(&DomainSpec::dimer(base_spec, 3.0)).unwrap();
        let emb = dimer.embedding_of(&base, [-3.0, 0.0, 0.0]).unwrap();
        assert!(emb.iter().all(|&i| dimer.particle_tags()[i] == 1));
        assert_eq!(emb.len() * 2, dimer.len());
    }

    #[test]
    fn misaligned_or_overlapping_dimers_are_rejected() {
        let base = DomainSpec::ball(1.0, 0.25);
        assert!(matches!(
            build_mesh(&DomainSpec::dimer(base.clone(), 0.9)),
            Err(Error::OverlappingParticles(_))
        ));
        assert!(matches!(
            build_mesh(&DomainSpec::dimer(base, 3.1)),
            Err(Error::InvalidDomain(_))
        ));
    }

    #[test]
    fn empty_and_invalid_specs() {
        assert!(matches!(
            build_mesh(&DomainSpec::ball(1.0, 5.0)),
            Err(Error::EmptyMesh { .. })
        ));
        assert!(build_mesh(&DomainSpec::ball(-1.0, 0.1)).is_err());
        assert!(build_mesh(&DomainSpec::new(2, Shape::Ball { radius: 1.0 }, 0.1)).is_err());
    }

    #[test]
    fn reflect_examples() {
        let mesh = build_mesh(&DomainSpec::ball(1.0, 0.2)).unwrap();
        let one = mesh.constant_field(1.0);
        assert_eq!(mesh.reflect(&one).unwrap(), one);
        let x1 = mesh.coordinate_field(0);
        assert_eq!(mesh.reflect(&x1).unwrap(), x1.scaled(c(-1.0)));
        assert_eq!(mesh.symmetry_class(&one, 1e-12).unwrap(), Symmetry::Even);
        assert_eq!(mesh.symmetry_class(&x1, 1e-12).unwrap(), Symmetry::Odd);
        let mixed = one.axpy(c(1.0), &x1);
        assert_eq!(mesh.symmetry_class(&mixed, 1e-12).unwrap(), Symmetry::None);
        assert!(matches!(
            mesh.symmetry_class(&Field::zeros(mesh.len()), 1e-12),
            Err(Error::ZeroField)
        ));
    }

    #[test]
    fn asymmetric_cell_set_has_no_reflection() {
        let mesh = Mesh::from_cells(2, 0.1, [0.5; 3], vec![([-1, 0, 0], 1), ([0, 0, 0], 1)]).unwrap();
        assert!(mesh.reflection_map().is_some());
        let mesh = Mesh::from_cells(2, 0.1, [0.5; 3], vec![([0, 0, 0], 1)]).unwrap();
        assert!(matches!(mesh.reflect(&mesh.constant_field(1.0)), Err(Error::NotSymmetric)));
    }

    #[test]
    fn csv_dump_has_one_row_per_cell() {
        let mesh = build_mesh(&DomainSpec::disk(1.0, 0.5)).unwrap();
        let mut buf = Vec::new();
        mesh.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), mesh.len() + 1);
        assert!(text.starts_with("index,x,y,weight,tag,mirror_index"));
    }
}
