//! The four pipelines and their on-disk artifacts.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use kerr_core::dimer::run_dimer_study;
use kerr_core::nonlinear::continue_branch;
use kerr_core::potential::{assemble_newtonian, assemble_tilde};
use kerr_core::resonance::{
    asymptotic_linear_2d, asymptotic_linear_3d, principal_2d_refined, solve_linear, write_resonance_csv, Regime2d, ResonancePoint,
};
use kerr_core::spectra::{check_krein_rutman, leading_spectrum, write_spectrum_csv, SpectralPair};
use kerr_core::{build_mesh, Complex64, Error as CoreError, Field, Mesh};
use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Spectrum,
    Linear,
    Branch,
    Dimer,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    /// 2 for configuration problems, 1 for numerical or i/o failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Usage(_) => 2,
            RunError::Core(
                CoreError::InvalidDomain(_) | CoreError::EmptyMesh { .. } | CoreError::OverlappingParticles(_) | CoreError::NotSymmetric,
            ) => 2,
            _ => 1,
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: Command,
    version: &'static str,
    config: &'a RunConfig,
    outputs: &'a [String],
    complete: bool,
    error: Option<String>,
}

pub struct Run {
    command: Command,
    cfg: RunConfig,
    dump_matrices: bool,
    outputs: Vec<String>,
}

impl Run {
    pub fn create(command: Command, cfg: RunConfig, dump_matrices: bool) -> Result<Self, RunError> {
        std::fs::create_dir_all(&cfg.output_dir).map_err(|source| RunError::Io { path: cfg.output_dir.clone(), source })?;
        Ok(Self { command, cfg, dump_matrices, outputs: Vec::new() })
    }

    pub fn execute(&mut self) -> Result<(), RunError> {
        let mesh = build_mesh(&self.cfg.domain)?;
        match self.command {
            Command::Spectrum => self.spectrum(&mesh),
            Command::Linear => self.linear(&mesh),
            Command::Branch => self.branch(&mesh),
            Command::Dimer => self.dimer(&mesh),
        }
    }

    pub fn write_manifest(&self, error: Option<String>) -> std::io::Result<()> {
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            config: &self.cfg,
            complete: error.is_none(),
            outputs: &self.outputs,
            error,
        };
        let path = self.cfg.output_dir.join("MANIFEST.json");
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut out, &manifest)?;
        writeln!(out)?;
        out.flush()
    }

    fn emit(&mut self, name: &str, body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), RunError> {
        let path = self.cfg.output_dir.join(name);
        let io = |source| RunError::Io { path: path.clone(), source };
        let mut out = BufWriter::new(File::create(&path).map_err(io)?);
        body(&mut out).and_then(|_| out.flush()).map_err(io)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn emit_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        self.emit(name, |out| {
            serde_json::to_writer_pretty(&mut *out, value)?;
            writeln!(out)
        })
    }

    fn write_spectrum(&mut self, mesh: &Mesh, pairs: &[SpectralPair]) -> Result<(), RunError> {
        self.emit("spectrum.csv", |out| write_spectrum_csv(pairs, out))?;
        if mesh.dimension() == 3 {
            let report = check_krein_rutman(pairs)?;
            self.emit_json("krein_rutman.json", &report)?;
        }
        Ok(())
    }

    fn spectrum(&mut self, mesh: &Mesh) -> Result<(), RunError> {
        self.emit("mesh.csv", |out| mesh.write_csv(out))?;
        let pairs = leading_spectrum(mesh, self.cfg.spectrum.count.min(mesh.len()))?;
        self.write_spectrum(mesh, &pairs)?;
        if self.dump_matrices {
            let k = if mesh.dimension() == 3 { assemble_newtonian(mesh)? } else { assemble_tilde(mesh)? };
            self.emit("operator.bin", |out| k.write_binary(out))?;
        }
        Ok(())
    }

    /// Linear resonance of the configured mode at one contrast, together with
    /// the gauge mode used by the nonlinear chart.
    fn linear_point(&self, mesh: &Mesh, tau: f64, pairs: &[SpectralPair]) -> Result<(ResonancePoint, Field), RunError> {
        let j = self.cfg.mode_index;
        if mesh.dimension() == 3 {
            let pair = &pairs[j];
            let seed = asymptotic_linear_3d(pair, mesh, tau)?;
            Ok((solve_linear(mesh, tau, seed, &pair.phi)?, pair.phi.clone()))
        } else if j == 0 {
            let seed = principal_2d_refined(mesh.total_measure(), tau)?;
            let plus = mesh.constant_field(1.0 / mesh.total_measure().sqrt());
            Ok((solve_linear(mesh, tau, Complex64::new(seed, 0.0), &plus)?, plus))
        } else {
            let pair = &pairs[j - 1];
            let seed = asymptotic_linear_2d(Regime2d::Bulk { mu: pair.lambda }, tau)?;
            Ok((solve_linear(mesh, tau, seed, &pair.phi)?, pair.phi.clone()))
        }
    }

    fn mode_pairs(&self, mesh: &Mesh) -> Result<Vec<SpectralPair>, RunError> {
        let j = self.cfg.mode_index;
        let needed = if mesh.dimension() == 3 { j + 1 } else { j };
        if needed > mesh.len() {
            return Err(RunError::Usage(format!("mode_index {j} exceeds the {} mesh cells", mesh.len())));
        }
        if needed == 0 {
            return Ok(Vec::new());
        }
        Ok(leading_spectrum(mesh, needed)?)
    }

    fn linear(&mut self, mesh: &Mesh) -> Result<(), RunError> {
        let pairs = self.mode_pairs(mesh)?;
        let mut rows = Vec::new();
        for tau in self.cfg.tau.values() {
            let (point, _) = self.linear_point(mesh, tau, &pairs)?;
            rows.push((self.cfg.mode_index, point));
        }
        self.emit("linear.csv", |out| write_resonance_csv(&rows, out))
    }

    fn branch(&mut self, mesh: &Mesh) -> Result<(), RunError> {
        let amplitude = self.cfg.amplitude.clone().ok_or_else(|| RunError::Usage("branch needs an [amplitude] section".into()))?;
        let pairs = self.mode_pairs(mesh)?;
        let nonlinear = self.cfg.nonlinear();
        let taus = self.cfg.tau.values();
        let sweep = taus.len() > 1;
        for tau in taus {
            let (linear, mode) = self.linear_point(mesh, tau, &pairs)?;
            let branch = continue_branch(mesh, tau, &linear, &mode, amplitude.n_max, &nonlinear)?;
            let stem = if sweep { format!("branch_tau{tau:e}") } else { "branch".to_string() };
            self.emit(&format!("{stem}.csv"), |out| branch.write_csv(mesh, out))?;
            self.emit_json(&format!("{stem}.json"), &branch.summary())?;
        }
        Ok(())
    }

    fn dimer(&mut self, mesh: &Mesh) -> Result<(), RunError> {
        if self.cfg.domain.half_separation().is_none() {
            return Err(RunError::Usage("dimer needs a dimer domain (shape kind = \"dimer\")".into()));
        }
        if mesh.reflection_map().is_none() {
            return Err(RunError::Core(CoreError::NotSymmetric));
        }
        if mesh.dimension() == 2 && self.cfg.amplitude.is_none() {
            return Err(RunError::Usage("2D dimer needs amplitude.n_max (the N_bound of the scan)".into()));
        }
        let opts = self.cfg.dimer_options();
        let study = run_dimer_study(mesh, &opts)?;
        self.write_spectrum(mesh, &study.modes.spectrum)?;
        self.emit_json("coefficients.json", &study.coefficients)?;
        self.emit_json(
            "prediction.json",
            &serde_json::json!({
                "assumptions": study.assumptions,
                "prediction": study.prediction,
            }),
        )?;
        self.emit("branch_symmetric.csv", |out| study.symmetric.write_csv(mesh, out))?;
        let detection = serde_json::json!({
            "sector": study.detection.sector,
            "sigma_at_zero": study.detection.sigma_at_zero,
            "min_ratio": study.detection.min_ratio(),
            "samples": study.detection.samples,
            "events": study.detection.events.iter().map(|e| serde_json::json!({
                "event": e.event,
                "bracket": e.bracket,
                "sigma": e.sigma,
                "null_overlap": e.null_overlap,
            })).collect::<Vec<_>>(),
            "mirror_defect": study.mirror_defect,
        });
        self.emit_json("detection.json", &detection)?;
        for (direction, branch) in &study.asymmetric {
            let name = if *direction > 0.0 { "branch_asym_plus.csv" } else { "branch_asym_minus.csv" };
            self.emit(name, |out| branch.write_csv(mesh, out))?;
        }
        if !study.obstruction.is_empty() {
            self.emit_json("obstruction.json", &study.obstruction)?;
        }
        self.emit("diagram.csv", |out| study.diagram.write_csv(out))
    }
}
