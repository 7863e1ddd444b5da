//! Newton-Raphson with cubic backtracking for one load step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{assemble_jacobian, assemble_residual, update_history, AssemblyError, SparseSystem};
use crate::discretization::Discretization;
use crate::history::HistoryField;
use crate::linalg::{bicgstab, norm2, pcg, LinearSolverError, SolveStats};
use crate::problem::Problem;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NewtonConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iters: usize,
    pub sufficient_decrease: f64,
    pub min_step: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            max_iters: 50,
            sufficient_decrease: 1e-4,
            min_step: 1e-8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearSolverConfig {
    pub rel_tol: f64,
    /// Iteration cap as a multiple of the system size.
    pub max_iters_factor: usize,
}

impl Default for LinearSolverConfig {
    fn default() -> Self {
        LinearSolverConfig { rel_tol: 1e-12, max_iters_factor: 10 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub newton: NewtonConfig,
    pub linear: LinearSolverConfig,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        let n = &self.newton;
        if !(n.abs_tol > 0.0 && n.rel_tol > 0.0) {
            return Err("newton tolerances must be positive".into());
        }
        if !(n.min_step > 0.0 && n.min_step <= 1.0) {
            return Err("newton.min_step must lie in (0, 1]".into());
        }
        if !(n.sufficient_decrease > 0.0 && n.sufficient_decrease < 1.0) {
            return Err("newton.sufficient_decrease must lie in (0, 1)".into());
        }
        if !(self.linear.rel_tol > 0.0) || self.linear.max_iters_factor == 0 {
            return Err("linear solver tolerance and iteration factor must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Residual norm after the update.
    pub residual: f64,
    pub omega: f64,
    pub linear_iterations: usize,
    /// The line search hit its floor and the step was accepted anyway.
    pub floor_accepted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NewtonOutcome {
    /// Full displacement vector (free, fixed and constrained DOFs).
    pub u: Vec<f64>,
    /// History recomputed at the history nodes from the converged `u`.
    pub history: HistoryField,
    pub initial_residual: f64,
    pub final_residual: f64,
    pub log: Vec<IterationRecord>,
}

impl NewtonOutcome {
    pub fn iterations(&self) -> usize {
        self.log.len()
    }

    /// `log(r_{i+1}/r_0) / log(r_i/r_0)` for consecutive iterates.
    pub fn convergence_ratios(&self) -> Vec<f64> {
        let rel: Vec<f64> = std::iter::once(1.0)
            .chain(self.log.iter().map(|r| r.residual / self.initial_residual))
            .collect();
        rel.windows(2).skip(1).map(|w| w[1].ln() / w[0].ln()).collect()
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("linear solve failed in newton iteration {iteration}: {source}")]
    Linear { iteration: usize, source: LinearSolverError },
    #[error("newton did not converge in {iterations} iterations (residual {residual:e}, initial {initial:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        initial: f64,
        /// Best iterate found (full displacement vector).
        best: Vec<f64>,
        log: Vec<IterationRecord>,
    },
}

/// Solve `matrix · x = rhs`: Jacobi-PCG for symmetric systems, BiCGSTAB otherwise.
pub fn solve_linear(
    system: &SparseSystem,
    cfg: &LinearSolverConfig,
    rel_tol: f64,
) -> Result<(Vec<f64>, SolveStats), LinearSolverError> {
    let max_iters = cfg.max_iters_factor * system.rhs.len().max(1);
    if system.symmetric {
        pcg(&system.matrix, &system.rhs, rel_tol, max_iters)
    } else {
        bicgstab(&system.matrix, &system.rhs, rel_tol, max_iters)
    }
}

struct Step<'a> {
    disc: &'a Discretization,
    problem: &'a Problem,
    history: &'a HistoryField,
    load: f64,
    fixed: Vec<f64>,
}

impl Step<'_> {
    fn full(&self, free: &[f64]) -> Vec<f64> {
        self.disc.dofs.expand(free, &self.fixed)
    }

    fn residual(&self, free: &[f64]) -> Result<Vec<f64>, AssemblyError> {
        assemble_residual(self.disc, self.problem, &self.full(free), self.history, self.load)
    }
}

/// Newton iterations for load factor `load` starting from `u_initial`
/// (full vector; fixed DOFs are overwritten by the boundary data).
/// `step` only labels log lines.
pub fn newton_solve(
    disc: &Discretization,
    problem: &Problem,
    load: f64,
    u_initial: &[f64],
    history_prev: &HistoryField,
    cfg: &SolverConfig,
    step: usize,
) -> Result<NewtonOutcome, SolveError> {
    let nc = &cfg.newton;
    let st = Step {
        disc,
        problem,
        history: history_prev,
        load,
        fixed: disc.fixed_values(problem, load),
    };
    let mut free = disc.dofs.restrict(u_initial);
    let r0 = norm2(&st.residual(&free)?);
    // Load scale: residual of the zero state, used to detect a step that is already converged.
    let reference = norm2(&st.residual(&vec![0.0; free.len()])?).max(r0);
    let mut log = Vec::new();
    let finish = |free: &[f64], log: Vec<IterationRecord>, final_residual: f64| -> Result<NewtonOutcome, SolveError> {
        let u = st.full(free);
        let history = update_history(disc, problem, &u, history_prev)?;
        Ok(NewtonOutcome { u, history, initial_residual: r0, final_residual, log })
    };
    if r0 <= nc.abs_tol.max(nc.rel_tol * reference) {
        log::info!("newton step={step} iter=0 residual={r0:.6e} omega=0 cg_iters=0");
        return finish(&free, log, r0);
    }
    let target = nc.abs_tol.max(nc.rel_tol * r0);
    let mut rnorm = r0;
    let mut best = (rnorm, free.clone());

    for iteration in 1..=nc.max_iters {
        let system = assemble_jacobian(disc, problem, &st.full(&free), history_prev, load)?;
        // Tight enough that a linear problem meets the Newton target in one step.
        let lin_tol = cfg.linear.rel_tol.min(0.1 * target / rnorm);
        let (delta, stats) =
            solve_linear(&system, &cfg.linear, lin_tol).map_err(|source| SolveError::Linear { iteration, source })?;

        let (omega, next, next_norm, floor_accepted) = line_search(&st, nc, &free, &delta, rnorm)?;
        if floor_accepted {
            log::warn!("newton step={step} iter={iteration}: line search reached its floor, accepting omega={omega:e}");
        }
        free = next;
        rnorm = next_norm;
        log::info!(
            "newton step={step} iter={iteration} residual={rnorm:.6e} omega={omega:.6} cg_iters={}",
            stats.iterations
        );
        log.push(IterationRecord {
            iteration,
            residual: rnorm,
            omega,
            linear_iterations: stats.iterations,
            floor_accepted,
        });
        if rnorm < best.0 {
            best = (rnorm, free.clone());
        }
        if rnorm <= target {
            return finish(&free, log, rnorm);
        }
    }
    Err(SolveError::NotConverged {
        iterations: nc.max_iters,
        residual: best.0,
        initial: r0,
        best: st.full(&best.1),
        log,
    })
}

/// Cubic backtracking on `f(ω) = ½‖r(u + ω δ)‖²` with `f'(0) = −‖r‖²`.
/// Trial points whose constitutive update fails count as rejected.
fn line_search(
    st: &Step,
    nc: &NewtonConfig,
    free: &[f64],
    delta: &[f64],
    rnorm: f64,
) -> Result<(f64, Vec<f64>, f64, bool), SolveError> {
    let f0 = 0.5 * rnorm * rnorm;
    let g0 = -2.0 * f0;
    let trial = |omega: f64| -> Result<Option<(Vec<f64>, f64)>, SolveError> {
        let x: Vec<f64> = free.iter().zip(delta).map(|(a, d)| a + omega * d).collect();
        match st.residual(&x) {
            Ok(r) => {
                let n = norm2(&r);
                Ok(n.is_finite().then_some((x, n)))
            }
            Err(AssemblyError::Constitutive { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    };
    let mut omega = 1.0;
    let mut prev: Option<(f64, f64)> = None;
    let mut best: Option<(f64, Vec<f64>, f64)> = None;
    loop {
        let result = trial(omega)?;
        let fw = match &result {
            Some((_, n)) => 0.5 * n * n,
            None => f64::INFINITY,
        };
        if let Some((x, t)) = result {
            if t <= (1.0 - nc.sufficient_decrease * omega) * rnorm {
                return Ok((omega, x, t, false));
            }
            if best.as_ref().is_none_or(|b| t < b.2) {
                best = Some((omega, x, t));
            }
        }
        if omega <= nc.min_step {
            let (omega, x, t) = match best {
                Some(b) => b,
                None => {
                    let (x, t) = trial(nc.min_step)?.ok_or(SolveError::Linear {
                        iteration: 0,
                        source: LinearSolverError::Breakdown { iteration: 0, reason: "line search found no admissible state" },
                    })?;
                    (nc.min_step, x, t)
                }
            };
            return Ok((omega, x, t, true));
        }
        let next = if !fw.is_finite() {
            0.5 * omega
        } else {
            match prev {
                None => -g0 / (2.0 * (fw - f0 - g0)),
                Some((w2, f2)) => cubic_minimizer(f0, g0, omega, fw, w2, f2).unwrap_or(0.5 * omega),
            }
        };
        prev = fw.is_finite().then_some((omega, fw));
        omega = next.clamp(0.1 * omega, 0.5 * omega).max(nc.min_step);
    }
}

/// Minimizer of the cubic through `f(0) = f0`, `f'(0) = g0`, `f(w1) = f1`, `f(w2) = f2`.
fn cubic_minimizer(f0: f64, g0: f64, w1: f64, f1: f64, w2: f64, f2: f64) -> Option<f64> {
    let r1 = f1 - f0 - g0 * w1;
    let r2 = f2 - f0 - g0 * w2;
    let d = w1 - w2;
    let a = (r1 / (w1 * w1) - r2 / (w2 * w2)) / d;
    let b = (-w2 * r1 / (w1 * w1) + w1 * r2 / (w2 * w2)) / d;
    if a.abs() < 1e-300 {
        return (b > 0.0).then(|| -g0 / (2.0 * b));
    }
    let disc = b * b - 3.0 * a * g0;
    if disc < 0.0 {
        return None;
    }
    let w = (-b + disc.sqrt()) / (3.0 * a);
    (w.is_finite() && w > 0.0).then_some(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{MaterialParams, YieldNormalization};
    use crate::discretization::DiscretizationOptions;
    use crate::geometry::LevelSet;
    use crate::mesh::{Face, QuadtreeMesh};
    use crate::problem::{BcKind, BcRegion, BcValue, BoundaryCondition};

    fn bar(pull: f64) -> Problem {
        let fix = |face, components| BoundaryCondition {
            region: BcRegion::BoxFace(face),
            kind: BcKind::DirichletStrong,
            components,
            value: BcValue::Constant { value: [0.0, 0.0] },
        };
        Problem {
            box_size: 1.0,
            level_set: LevelSet::rectangle([0.0, 0.0], [0.7, 1.0]).tagged("end"),
            material: MaterialParams { yield_normalization: YieldNormalization::VonMises, ..Default::default() },
            bcs: vec![
                fix(Face::Left, [true, false]),
                fix(Face::Bottom, [false, true]),
                BoundaryCondition {
                    region: BcRegion::BoundaryTag("end".into()),
                    kind: BcKind::Neumann,
                    components: [true, true],
                    value: BcValue::Constant { value: [pull, 0.0] },
                },
            ],
            body_force: [0.0, 0.0],
            nitsche_beta0: 25.0,
            quadrature_degree: 4,
        }
    }

    fn setup(pull: f64) -> (Problem, Discretization) {
        let p = bar(pull);
        let d = Discretization::build(QuadtreeMesh::uniform(1.0, 3, 6).unwrap(), &p, DiscretizationOptions::default()).unwrap();
        (p, d)
    }

    #[test]
    fn cubic_minimizer_recovers_exact_cubic() {
        let f = |w: f64| 1.0 - 2.0 * w + 0.5 * w * w + 3.0 * w * w * w;
        let w = cubic_minimizer(f(0.0), -2.0, 1.0, f(1.0), 0.5, f(0.5)).unwrap();
        let g = -2.0 + w + 9.0 * w * w;
        assert!(g.abs() < 1e-12);
    }

    #[test]
    fn elastic_step_takes_one_iteration() {
        let (p, d) = setup(1e8);
        let h = d.zero_history();
        let out = newton_solve(&d, &p, 1.0, &vec![0.0; d.dofs.n_dofs()], &h, &SolverConfig::default(), 1).unwrap();
        assert_eq!(out.iterations(), 1);
        assert_eq!(out.log[0].omega, 1.0);
        assert!(out.final_residual <= 1e-12 * out.initial_residual);
        assert_eq!(out.history.max_alpha(), 0.0);
        // plane-strain uniaxial stress: u_x = (1 − ν²) σ x / E at the loaded end
        let (val, _) = d.dofs.evaluate(&out.u, d.dofs.cells.len() - 1, [0.7, 1.0]);
        let exact = (1.0 - p.material.poisson.powi(2)) * 1e8 * 0.7 / p.material.young;
        assert!((val[0] - exact).abs() < 1e-9 * exact, "{} vs {exact}", val[0]);
    }

    #[test]
    fn converged_state_needs_no_iterations() {
        let (p, d) = setup(1e8);
        let h = d.zero_history();
        let cfg = SolverConfig::default();
        let out = newton_solve(&d, &p, 1.0, &vec![0.0; d.dofs.n_dofs()], &h, &cfg, 1).unwrap();
        let again = newton_solve(&d, &p, 1.0, &out.u, &out.history, &cfg, 2).unwrap();
        assert_eq!(again.iterations(), 0);
    }

    #[test]
    fn plastic_step_converges_quadratically() {
        let (mut p, d) = setup(3.5e8);
        p.material.hardening = 5e9;
        let h = d.zero_history();
        let out = newton_solve(&d, &p, 1.0, &vec![0.0; d.dofs.n_dofs()], &h, &SolverConfig::default(), 1).unwrap();
        assert!(out.iterations() > 1);
        assert!(out.history.max_alpha() > 0.0);
        assert!(out.final_residual <= 1e-12 * out.initial_residual);
        // the converged state still has a small residual against the old history
        let r = assemble_residual(&d, &p, &out.u, &h, 1.0).unwrap();
        assert!(norm2(&r) <= 1e-12 * out.initial_residual);
        let ratios = out.convergence_ratios();
        assert!(ratios.iter().rev().take(2).all(|q| *q >= 1.6), "{ratios:?}");
    }

    #[test]
    fn iteration_logs_are_reproducible() {
        let (mut p, d) = setup(3.5e8);
        p.material.hardening = 5e9;
        let h = d.zero_history();
        let u0 = vec![0.0; d.dofs.n_dofs()];
        let a = newton_solve(&d, &p, 1.0, &u0, &h, &SolverConfig::default(), 1).unwrap();
        let b = newton_solve(&d, &p, 1.0, &u0, &h, &SolverConfig::default(), 1).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.u, b.u);
    }

    #[test]
    fn iteration_cap_reports_best_iterate() {
        let (mut p, d) = setup(3.5e8);
        p.material.hardening = 5e9;
        let mut cfg = SolverConfig::default();
        cfg.newton.max_iters = 1;
        let err = newton_solve(&d, &p, 1.0, &vec![0.0; d.dofs.n_dofs()], &d.zero_history(), &cfg, 1).unwrap_err();
        match err {
            SolveError::NotConverged { iterations, best, residual, initial, .. } => {
                assert_eq!(iterations, 1);
                assert_eq!(best.len(), d.dofs.n_dofs());
                assert!(residual < initial);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn linear_solver_examples() {
        use crate::linalg::CsrMatrix;
        let sys = SparseSystem {
            matrix: CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (1, 1, 4.0)]),
            rhs: vec![1.0, 1.0],
            symmetric: true,
        };
        let (x, _) = solve_linear(&sys, &LinearSolverConfig::default(), 1e-12).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 0.25).abs() < 1e-15);
    }
}
