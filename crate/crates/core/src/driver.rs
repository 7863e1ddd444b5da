//! Load stepping with estimator-gated mesh adaptation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::energy;
use crate::benchmarks::{cylinder_errors, BenchmarkError, ThickCylinder};
use crate::discretization::{Discretization, DiscretizationError, DiscretizationOptions};
use crate::estimator::{global_error, kelly_indicators, mark_cells, marks_to_map, EstimatorError};
use crate::geometry::{classify_cells, CellClass};
use crate::history::HistoryField;
use crate::mesh::{Mark, MeshError, QuadtreeMesh};
use crate::problem::Problem;
use crate::solver::{newton_solve, IterationRecord, SolveError, SolverConfig};
use crate::transfer::{transfer_fields, TransferError};
use crate::vtk::{write_vtk, VtkError, VtkFields};

fn infinity() -> f64 {
    f64::INFINITY
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmrConfig {
    /// Set from the load schedule of a configuration file.
    #[serde(skip, default = "one")]
    pub num_load_steps: usize,
    #[serde(default = "one")]
    pub amr_step_freq: usize,
    #[serde(default)]
    pub num_amr_steps: usize,
    /// Adaptation stops once the global estimate drops to this value.
    #[serde(default = "infinity")]
    pub eta_max: f64,
    #[serde(default)]
    pub theta_r: f64,
    #[serde(default)]
    pub theta_c: f64,
    pub max_level: u8,
    pub initial_uniform_level: u8,
}

fn one() -> usize {
    1
}

impl Default for AmrConfig {
    fn default() -> Self {
        AmrConfig {
            num_load_steps: 1,
            amr_step_freq: 1,
            num_amr_steps: 0,
            eta_max: f64::INFINITY,
            theta_r: 0.0,
            theta_c: 0.0,
            max_level: 8,
            initial_uniform_level: 2,
        }
    }
}

impl AmrConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.num_load_steps == 0 {
            return Err("num_load_steps must be at least 1".into());
        }
        if self.amr_step_freq == 0 {
            return Err("amr_step_freq must be at least 1".into());
        }
        if !(self.theta_r >= 0.0 && self.theta_c >= 0.0 && self.theta_r + self.theta_c <= 1.0) {
            return Err("theta_r and theta_c must be non-negative with theta_r + theta_c <= 1".into());
        }
        if self.initial_uniform_level > self.max_level {
            return Err("initial_uniform_level exceeds max_level".into());
        }
        if self.eta_max.is_nan() || self.eta_max < 0.0 {
            return Err("eta_max must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepReport {
    pub load_step: usize,
    pub load_factor: f64,
    pub amr_cycles: usize,
    pub free_dofs: usize,
    pub total_cells: usize,
    pub active_cells: usize,
    pub active_fraction: f64,
    pub eta_g: f64,
    pub newton_iters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdaptationRecord {
    pub load_step: usize,
    pub cycle: usize,
    pub eta_before: f64,
    pub eta_after: f64,
    pub cells_before: usize,
    pub cells_after: usize,
    pub free_dofs_after: usize,
}

/// Newton history of one solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveRecord {
    pub load_step: usize,
    pub cycle: usize,
    pub initial_residual: f64,
    pub log: Vec<IterationRecord>,
}

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Discretization(#[from] DiscretizationError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
    #[error(transparent)]
    Vtk(#[from] VtkError),
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
    #[error("load step {step}: {source}{}", checkpoint.as_ref().map(|p| format!(" (checkpoint written to {})", p.display())).unwrap_or_default())]
    Newton {
        step: usize,
        source: SolveError,
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Clone, Debug)]
pub struct RunSettings {
    pub problem: Problem,
    pub amr: AmrConfig,
    pub solver: SolverConfig,
    pub options: DiscretizationOptions,
    /// Full load reached at the last step, as a multiple of the boundary data.
    pub total_load: f64,
    /// Snapshots are written here when set.
    pub output_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub reports: Vec<StepReport>,
    pub adaptations: Vec<AdaptationRecord>,
    pub solves: Vec<SolveRecord>,
    pub warnings: Vec<String>,
    pub snapshots: Vec<PathBuf>,
    pub disc: Discretization,
    pub u: Vec<f64>,
    pub history: HistoryField,
}

/// Uniform refinement to `level`, then exterior-cell coarsening sweeps until
/// nothing changes.
pub fn initial_mesh(problem: &Problem, level: u8, max_level: u8) -> Result<QuadtreeMesh, MeshError> {
    let mut mesh = QuadtreeMesh::uniform(problem.box_size, level, max_level)?;
    loop {
        let classes = classify_cells(&mesh, &problem.level_set);
        let marks = mesh
            .leaves()
            .iter()
            .zip(&classes)
            .filter(|(c, k)| **k == CellClass::Exterior && c.level > 0)
            .map(|(c, _)| (*c, Mark::Coarsen))
            .collect();
        let (next, log) = mesh.refine_and_coarsen(&marks)?;
        if log.coarsened_parents().is_empty() {
            return Ok(mesh);
        }
        mesh = next;
    }
}

struct Estimate {
    eta: Vec<f64>,
    eta_g: f64,
}

fn estimate(disc: &Discretization, problem: &Problem, u: &[f64], history: &HistoryField) -> Result<Estimate, DriverError> {
    let eta = kelly_indicators(disc, problem, u, history)?;
    let a = energy(disc, problem, u, history).map_err(EstimatorError::from)?;
    let eta_g = global_error(&eta, a, 2.0 * problem.material.shear_modulus())?;
    Ok(Estimate { eta, eta_g })
}

fn snapshot(
    dir: Option<&Path>,
    name: String,
    disc: &Discretization,
    u: &[f64],
    history: &HistoryField,
    eta: Option<&[f64]>,
    out: &mut Vec<PathBuf>,
) -> Result<(), DriverError> {
    if let Some(dir) = dir {
        let path = dir.join(name);
        write_vtk(&path, disc, VtkFields { u: Some(u), history: Some(history), eta })?;
        out.push(path);
    }
    Ok(())
}

/// Load stepping with adaptation: after each solve on a step that is a
/// multiple of `amr_step_freq`, while `η_G > η_max` and cycles remain, the
/// state of the previous step is moved to an adapted mesh and the current
/// step is solved again.
pub fn run_simulation(settings: &RunSettings) -> Result<RunOutput, DriverError> {
    let RunSettings { problem, amr, solver, options, total_load, output_dir } = settings;
    amr.validate().map_err(DriverError::Config)?;
    solver.validate().map_err(DriverError::Config)?;
    problem.validate().map_err(|e| DriverError::Config(e.to_string()))?;
    let dir = output_dir.as_deref();
    if let Some(d) = dir {
        std::fs::create_dir_all(d).map_err(|e| {
            DriverError::Vtk(VtkError::Write { path: d.display().to_string(), message: e.to_string() })
        })?;
    }

    let mesh = initial_mesh(problem, amr.initial_uniform_level, amr.max_level)?;
    let mut disc = Discretization::build(mesh, problem, *options)?;
    let mut u = vec![0.0; disc.dofs.n_dofs()];
    let mut history = disc.zero_history();
    let mut out = RunOutput {
        reports: Vec::new(),
        adaptations: Vec::new(),
        solves: Vec::new(),
        warnings: Vec::new(),
        snapshots: Vec::new(),
        disc: disc.clone(),
        u: Vec::new(),
        history: history.clone(),
    };

    let n_steps = amr.num_load_steps;
    for step in 1..=n_steps {
        let load = total_load * step as f64 / n_steps as f64;
        // Checkpoint: converged state of the previous step on the current mesh.
        let (mut ck_u, mut ck_history) = (u.clone(), history.clone());
        let solve = |disc: &Discretization, u0: &[f64], h: &HistoryField, cycle: usize| {
            newton_solve(disc, problem, load, u0, h, solver, step).map_err(|source| {
                let checkpoint = dir.and_then(|d| {
                    let path = d.join(format!("checkpoint_{step}_{cycle}.vtu"));
                    write_vtk(&path, disc, VtkFields { u: Some(u0), history: Some(h), eta: None }).ok().map(|_| path)
                });
                DriverError::Newton { step, source, checkpoint }
            })
        };
        let mut result = solve(&disc, &ck_u, &ck_history, 0)?;
        let mut newton_iters = result.iterations();
        out.solves.push(SolveRecord { load_step: step, cycle: 0, initial_residual: result.initial_residual, log: result.log.clone() });
        let mut est = estimate(&disc, problem, &result.u, &result.history)?;
        snapshot(dir, format!("{step}_0.vtu"), &disc, &result.u, &result.history, Some(&est.eta), &mut out.snapshots)?;

        let mut cycles = 0;
        if step % amr.amr_step_freq == 0 {
            while est.eta_g > amr.eta_max && cycles < amr.num_amr_steps {
                let marks: Vec<Mark> = mark_cells(&disc.dofs.cells, &est.eta, amr.theta_r, amr.theta_c)
                    .into_iter()
                    .zip(&disc.dofs.cells)
                    .map(|(m, c)| match m {
                        Mark::Refine if c.level >= amr.max_level => Mark::Keep,
                        Mark::Coarsen if c.level <= amr.initial_uniform_level => Mark::Keep,
                        m => m,
                    })
                    .collect();
                let map = marks_to_map(&disc.dofs.cells, &marks);
                let (mesh, log) = disc.mesh.refine_and_coarsen(&map)?;
                let cells_before = disc.mesh.len();
                let new_disc = Discretization::build(mesh, problem, *options)?;
                let moved = transfer_fields(&disc, &new_disc, &log, &ck_u, &ck_history)?;
                disc = new_disc;
                ck_u = moved.u;
                ck_history = moved.history;
                cycles += 1;
                result = solve(&disc, &ck_u, &ck_history, cycles)?;
                newton_iters += result.iterations();
                out.solves.push(SolveRecord { load_step: step, cycle: cycles, initial_residual: result.initial_residual, log: result.log.clone() });
                let before = est.eta_g;
                est = estimate(&disc, problem, &result.u, &result.history)?;
                log::info!(
                    "adapt step={step} cycle={cycles} cells={}->{} eta_g={before:.6e}->{:.6e}",
                    cells_before,
                    disc.mesh.len(),
                    est.eta_g
                );
                out.adaptations.push(AdaptationRecord {
                    load_step: step,
                    cycle: cycles,
                    eta_before: before,
                    eta_after: est.eta_g,
                    cells_before,
                    cells_after: disc.mesh.len(),
                    free_dofs_after: disc.n_free(),
                });
                snapshot(dir, format!("{step}_{cycles}.vtu"), &disc, &result.u, &result.history, Some(&est.eta), &mut out.snapshots)?;
            }
            if est.eta_g > amr.eta_max {
                let msg = format!(
                    "load step {step}: adaptation budget exhausted with eta_g = {:.4e} > {:.4e}",
                    est.eta_g, amr.eta_max
                );
                log::warn!("{msg}");
                out.warnings.push(msg);
            }
        }
        u = result.u;
        history = result.history;
        let report = StepReport {
            load_step: step,
            load_factor: load,
            amr_cycles: cycles,
            free_dofs: disc.n_free(),
            total_cells: disc.mesh.len(),
            active_cells: disc.active_cells(),
            active_fraction: disc.active_fraction(),
            eta_g: est.eta_g,
            newton_iters,
        };
        log::info!(
            "step={} load={:.4} cells={} active={:.3} free_dofs={} eta_g={:.4e} newton={}",
            report.load_step,
            report.load_factor,
            report.total_cells,
            report.active_fraction,
            report.free_dofs,
            report.eta_g,
            report.newton_iters
        );
        out.reports.push(report);
    }
    out.disc = disc;
    out.u = u;
    out.history = history;
    Ok(out)
}

/// One level of a uniform-refinement study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvergenceRecord {
    pub label: String,
    pub level: u8,
    pub free_dofs: usize,
    pub active_cells: usize,
    pub err_s_rr: f64,
    pub err_s_tt: f64,
    pub err_energy: f64,
    pub newton_iters: usize,
}

/// Load stepping without adaptation on uniform meshes of increasing level,
/// measuring errors against the cylinder solution after the last step.
pub fn convergence_sweep(
    settings: &RunSettings,
    cylinder: &ThickCylinder,
    levels: std::ops::RangeInclusive<u8>,
) -> Result<Vec<ConvergenceRecord>, DriverError> {
    let mut records = Vec::new();
    for level in levels {
        let mut s = settings.clone();
        s.amr = AmrConfig {
            num_amr_steps: 0,
            eta_max: f64::INFINITY,
            initial_uniform_level: level,
            max_level: s.amr.max_level.max(level),
            ..s.amr
        };
        s.output_dir = None;
        let run = run_simulation(&s)?;
        let errors = cylinder_errors(&run.disc, &s.problem, cylinder, &run.u, &run.history, s.total_load)?;
        let n = 1usize << level;
        let record = ConvergenceRecord {
            label: format!("{n}x{n}"),
            level,
            free_dofs: run.disc.n_free(),
            active_cells: run.disc.active_cells(),
            err_s_rr: errors.s_rr,
            err_s_tt: errors.s_tt,
            err_energy: errors.energy,
            newton_iters: run.reports.iter().map(|r| r.newton_iters).sum(),
        };
        log::info!(
            "converge level={} free_dofs={} err_s_rr={:.4e} err_s_tt={:.4e} err_energy={:.4e}",
            record.level,
            record.free_dofs,
            record.err_s_rr,
            record.err_s_tt,
            record.err_energy
        );
        records.push(record);
    }
    Ok(records)
}

/// Serialize records as CSV with a header row.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LevelSet;
    use crate::mesh::Face;
    use crate::problem::{BcKind, BcRegion, BcValue, BoundaryCondition};

    fn cylinder_settings(amr: AmrConfig, total_load: f64) -> RunSettings {
        RunSettings {
            problem: ThickCylinder::default().problem(),
            amr,
            solver: SolverConfig::default(),
            options: DiscretizationOptions::default(),
            total_load,
            output_dir: None,
        }
    }

    fn adaptive(steps: usize, level: u8) -> AmrConfig {
        AmrConfig {
            num_load_steps: steps,
            amr_step_freq: 2,
            num_amr_steps: 2,
            eta_max: 0.1,
            theta_r: 0.1,
            theta_c: 0.05,
            max_level: 7,
            initial_uniform_level: level,
        }
    }

    #[test]
    fn single_step_without_threshold_is_a_plain_solve() {
        let amr = AmrConfig { num_amr_steps: 3, initial_uniform_level: 3, ..Default::default() };
        let out = run_simulation(&cylinder_settings(amr, 0.3)).unwrap();
        assert_eq!(out.reports.len(), 1);
        assert!(out.adaptations.is_empty() && out.warnings.is_empty());
        assert_eq!(out.reports[0].amr_cycles, 0);
        assert_eq!(out.reports[0].newton_iters, 1);
    }

    #[test]
    fn affine_patch_has_zero_estimate() {
        let affine = BcValue::Affine { offset: [1e-4, -2e-4], gradient: [[1e-3, 2e-4], [-5e-4, 3e-4]] };
        let bcs = Face::ALL
            .iter()
            .map(|f| BoundaryCondition {
                region: BcRegion::BoxFace(*f),
                kind: BcKind::DirichletStrong,
                components: [true, true],
                value: affine.clone(),
            })
            .collect();
        let problem = Problem {
            box_size: 1.0,
            level_set: LevelSet::rectangle([-1.0, -1.0], [2.0, 2.0]),
            material: Default::default(),
            bcs,
            body_force: [0.0, 0.0],
            nitsche_beta0: 25.0,
            quadrature_degree: 4,
        };
        let amr = AmrConfig { eta_max: 1e-10, num_amr_steps: 5, theta_r: 0.5, initial_uniform_level: 3, ..Default::default() };
        let settings = RunSettings { problem, amr, solver: Default::default(), options: Default::default(), total_load: 1.0, output_dir: None };
        let out = run_simulation(&settings).unwrap();
        assert!(out.reports[0].eta_g < 1e-10, "{}", out.reports[0].eta_g);
        assert!(out.adaptations.is_empty());
    }

    #[test]
    fn initial_mesh_coarsens_exterior_to_fixed_point() {
        let p = ThickCylinder::default().problem();
        let mesh = initial_mesh(&p, 4, 6).unwrap();
        let classes = classify_cells(&mesh, &p.level_set);
        assert!(classes.iter().any(|c| *c == CellClass::Exterior));
        let marks = mesh
            .leaves()
            .iter()
            .zip(&classes)
            .filter(|(_, k)| **k == CellClass::Exterior)
            .map(|(c, _)| (*c, Mark::Coarsen))
            .collect();
        let (_, log) = mesh.refine_and_coarsen(&marks).unwrap();
        assert!(log.coarsened_parents().is_empty());
        let uniform = QuadtreeMesh::uniform(p.box_size, 4, 6).unwrap();
        assert!(mesh.len() < uniform.len());
        // all active cells keep the requested resolution
        for (c, k) in mesh.leaves().iter().zip(&classes) {
            if *k != CellClass::Exterior {
                assert_eq!(c.level, 4);
            }
        }
    }

    #[test]
    fn adaptive_run_is_consistent_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = cylinder_settings(adaptive(4, 3), 1.0);
        s.output_dir = Some(dir.path().to_path_buf());
        let a = run_simulation(&s).unwrap();
        s.output_dir = None;
        let b = run_simulation(&s).unwrap();
        assert_eq!(a.reports, b.reports);
        assert_eq!(a.adaptations, b.adaptations);
        let cycles: usize = a.reports.iter().map(|r| r.amr_cycles).sum();
        assert!(cycles > 0);
        assert_eq!(cycles, a.adaptations.len());
        assert_eq!(a.snapshots.len(), a.reports.len() + cycles);
        assert!(a.snapshots.iter().all(|p| p.exists()));
        assert!(dir.path().join("2_1.vtu").exists() && dir.path().join("4_0.vtu").exists());
        for e in &a.adaptations {
            assert!(e.cells_after >= e.cells_before);
        }
        assert!(a.reports.iter().all(|r| r.active_fraction >= 0.8));
        assert!(a.history.values.iter().all(|h| h.alpha >= 0.0));
    }

    #[test]
    fn newton_failure_reports_the_step() {
        // beyond the limit load
        let amr = AmrConfig { initial_uniform_level: 3, ..Default::default() };
        let mut s = cylinder_settings(amr, 1.5);
        s.solver.newton.max_iters = 5;
        let dir = tempfile::tempdir().unwrap();
        s.output_dir = Some(dir.path().to_path_buf());
        match run_simulation(&s) {
            Err(DriverError::Newton { step: 1, checkpoint: Some(p), .. }) => assert!(p.exists()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_amr_config_is_rejected() {
        let amr = AmrConfig { theta_r: 0.7, theta_c: 0.5, ..Default::default() };
        assert!(matches!(run_simulation(&cylinder_settings(amr, 1.0)), Err(DriverError::Config(_))));
        assert!(AmrConfig { amr_step_freq: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn reports_serialize_as_csv() {
        let r = StepReport {
            load_step: 1,
            load_factor: 0.5,
            amr_cycles: 0,
            free_dofs: 10,
            total_cells: 4,
            active_cells: 4,
            active_fraction: 1.0,
            eta_g: 0.25,
            newton_iters: 1,
        };
        let text = to_csv(&[r]).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("load_step,load_factor,amr_cycles,free_dofs,total_cells,active_cells,active_fraction,eta_g,newton_iters")
        );
        assert_eq!(lines.next(), Some("1,0.5,0,10,4,4,1.0,0.25,1"));
    }
}
