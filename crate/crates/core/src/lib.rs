//! Subwavelength resonances of high-contrast Kerr resonators: voxel meshes,
//! Newtonian/Helmholtz potentials, spectra, linear and nonlinear resonances,
//! and symmetry breaking in dimers.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dimer;
pub mod error;
pub mod kernels;
pub mod mesh;
pub mod nonlinear;
pub mod potential;
pub mod resonance;
pub mod spectra;

pub use error::{Error, Result};
pub use mesh::{build_mesh, DomainSpec, Field, Mesh, Shape, Symmetry};
pub use num_complex::Complex64;

/// Worker threads for the dense factorizations: 1 runs sequentially, 0 uses
/// every available core.
pub fn set_threads(n: usize) {
    faer::set_global_parallelism(if n == 1 { faer::Par::Seq } else { faer::Par::rayon(n) });
}
