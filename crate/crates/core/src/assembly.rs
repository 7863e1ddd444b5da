//! Residual and Jacobian of the irreducible (displacement) formulation on the
//! active cells, with Nitsche terms on the embedded Dirichlet boundary and
//! tractions on Neumann pieces.
//!
//! `R(u) = ∫ ∇v : σ(u, α) − ∫ v · f − ∫_N v · t
//!        − ∫_D v · σ(u, α) n − ∫_D σₑ(v) n · (u − ū) + ∫_D β v · (u − ū)`
//! with `β = β₀ 2G / h_T`. Constrained DOFs are distributed to their free masters.

use rayon::prelude::*;
use thiserror::Error;

use crate::constitutive::{
    elastic_tangent, stress_update, ConstitutiveError, PointHistory, StressResult, Tangent, Voigt,
};
use crate::discretization::Discretization;
use crate::history::HistoryField;
use crate::linalg::CsrMatrix;
use crate::problem::Problem;
use crate::space::{q1_gradients, q1_shape};

#[derive(Debug, Error, PartialEq)]
pub enum AssemblyError {
    #[error("history field has {found} values but the layout of this mesh needs {expected}")]
    HistoryMismatch { expected: usize, found: usize },
    #[error("displacement vector has {found} entries, expected {expected}")]
    DisplacementMismatch { expected: usize, found: usize },
    #[error("constitutive update failed in active cell {cell}: {source}")]
    Constitutive { cell: usize, source: ConstitutiveError },
}

/// Linearized system over the free DOFs: `matrix · δu = rhs` with `rhs = −R`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub symmetric: bool,
}

/// Engineering-strain column of the B matrix for local DOF `l = 2 k + component`.
fn b_col(g: &[[f64; 2]; 4], l: usize) -> Voigt {
    let k = l / 2;
    if l % 2 == 0 {
        [g[k][0], 0.0, 0.0, g[k][1]]
    } else {
        [0.0, g[k][1], 0.0, g[k][0]]
    }
}

pub fn engineering_strain(grad: &[[f64; 2]; 2]) -> Voigt {
    [grad[0][0], grad[1][1], 0.0, grad[0][1] + grad[1][0]]
}

fn traction(s: &Voigt, n: [f64; 2]) -> [f64; 2] {
    [s[0] * n[0] + s[3] * n[1], s[3] * n[0] + s[1] * n[1]]
}

fn dot4(a: &Voigt, b: &Voigt) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

fn mat_vec(d: &Tangent, v: &Voigt) -> Voigt {
    std::array::from_fn(|i| dot4(&d[i], v))
}

type LocalVector = [f64; 8];
type LocalMatrix = [[f64; 8]; 8];

struct Evaluator<'a> {
    disc: &'a Discretization,
    problem: &'a Problem,
    u: &'a [f64],
    history: &'a HistoryField,
    load: f64,
}

impl Evaluator<'_> {
    fn check(&self) -> Result<(), AssemblyError> {
        let expected = self.disc.history_layout.n_dofs();
        if self.history.values.len() != expected || self.history.layout.cells != self.disc.dofs.cells {
            return Err(AssemblyError::HistoryMismatch { expected, found: self.history.values.len() });
        }
        if self.u.len() != self.disc.dofs.n_dofs() {
            return Err(AssemblyError::DisplacementMismatch { expected: self.disc.dofs.n_dofs(), found: self.u.len() });
        }
        Ok(())
    }

    fn history_at(&self, c: usize, q: usize, p: [f64; 2]) -> PointHistory {
        if self.disc.quadrature[c].at_history_nodes {
            self.history.values[4 * c + q]
        } else {
            self.history.interpolate(c, p)
        }
    }

    fn stress(&self, c: usize, eps: &Voigt, h: &PointHistory) -> Result<StressResult, AssemblyError> {
        stress_update(eps, h, &self.problem.material).map_err(|source| AssemblyError::Constitutive { cell: c, source })
    }

    fn local(&self, c: usize, with_jacobian: bool) -> Result<(LocalVector, Option<LocalMatrix>), AssemblyError> {
        let dofs = &self.disc.dofs;
        let sq = dofs.cell_squares[c];
        let quad = &self.disc.quadrature[c];
        let mat = &self.problem.material;
        let mut r = [0.0; 8];
        let mut k = [[0.0; 8]; 8];
        let ue: [f64; 8] = dofs.cell_dofs(c).map(|d| self.u[d]);
        let grad_u = |g: &[[f64; 2]; 4]| {
            let mut grad = [[0.0; 2]; 2];
            for (l, uv) in ue.iter().enumerate() {
                let (node, comp) = (l / 2, l % 2);
                grad[comp][0] += g[node][0] * uv;
                grad[comp][1] += g[node][1] * uv;
            }
            grad
        };
        let value_u = |n: &[f64; 4]| {
            let mut v = [0.0; 2];
            for (l, uv) in ue.iter().enumerate() {
                v[l % 2] += n[l / 2] * uv;
            }
            v
        };

        for (q, (p, w)) in quad.points.iter().zip(&quad.weights).enumerate() {
            let g = q1_gradients(&sq, *p);
            let eps = engineering_strain(&grad_u(&g));
            let res = self.stress(c, &eps, &self.history_at(c, q, *p))?;
            let n = q1_shape(&sq, *p);
            let b: [Voigt; 8] = std::array::from_fn(|l| b_col(&g, l));
            for l in 0..8 {
                r[l] += w * (dot4(&b[l], &res.stress) - n[l / 2] * self.load * self.problem.body_force[l % 2]);
            }
            if with_jacobian {
                let db: [Voigt; 8] = std::array::from_fn(|m| mat_vec(&res.tangent, &b[m]));
                for l in 0..8 {
                    for m in 0..8 {
                        k[l][m] += w * dot4(&b[l], &db[m]);
                    }
                }
            }
        }

        for bp in &quad.neumann {
            let n = q1_shape(&sq, bp.point);
            let t = self.problem.bcs[bp.bc].value.evaluate(bp.point, bp.normal);
            let mask = self.problem.bcs[bp.bc].components;
            for l in 0..8 {
                if mask[l % 2] {
                    r[l] -= bp.weight * n[l / 2] * self.load * t[l % 2];
                }
            }
        }

        if !quad.nitsche.is_empty() {
            let c_el = elastic_tangent(mat);
            let beta = self.problem.nitsche_beta0 * 2.0 * mat.shear_modulus() / sq.size;
            for bp in &quad.nitsche {
                let bc = &self.problem.bcs[bp.bc];
                let mask = bc.components.map(|m| if m { 1.0 } else { 0.0 });
                let n = q1_shape(&sq, bp.point);
                let g = q1_gradients(&sq, bp.point);
                let eps = engineering_strain(&grad_u(&g));
                let hist = self.history.interpolate(c, bp.point);
                let res = self.stress(c, &eps, &hist)?;
                let t_u = traction(&res.stress, bp.normal);
                let gbar = bc.value.evaluate(bp.point, bp.normal);
                let uval = value_u(&n);
                let diff = [mask[0] * (uval[0] - self.load * gbar[0]), mask[1] * (uval[1] - self.load * gbar[1])];
                let b: [Voigt; 8] = std::array::from_fn(|l| b_col(&g, l));
                let tau: [[f64; 2]; 8] = std::array::from_fn(|l| traction(&mat_vec(&c_el, &b[l]), bp.normal));
                for l in 0..8 {
                    let (kn, a) = (l / 2, l % 2);
                    r[l] += bp.weight
                        * (-mask[a] * n[kn] * t_u[a] - (tau[l][0] * diff[0] + tau[l][1] * diff[1])
                            + beta * n[kn] * diff[a]);
                }
                if with_jacobian {
                    let dt: [[f64; 2]; 8] = std::array::from_fn(|m| traction(&mat_vec(&res.tangent, &b[m]), bp.normal));
                    for l in 0..8 {
                        let (kn, a) = (l / 2, l % 2);
                        for m in 0..8 {
                            let (jn, bb) = (m / 2, m % 2);
                            let mut v = -mask[a] * n[kn] * dt[m][a] - tau[l][bb] * mask[bb] * n[jn];
                            if a == bb {
                                v += beta * mask[a] * n[kn] * n[jn];
                            }
                            k[l][m] += bp.weight * v;
                        }
                    }
                }
            }
        }
        Ok((r, with_jacobian.then_some(k)))
    }
}

/// Residual over the free DOFs for the full displacement vector `u`.
pub fn assemble_residual(
    disc: &Discretization,
    problem: &Problem,
    u: &[f64],
    history: &HistoryField,
    load: f64,
) -> Result<Vec<f64>, AssemblyError> {
    let ev = Evaluator { disc, problem, u, history, load };
    ev.check()?;
    let locals: Vec<LocalVector> = (0..disc.dofs.cells.len())
        .into_par_iter()
        .map(|c| ev.local(c, false).map(|(r, _)| r))
        .collect::<Result<_, _>>()?;
    let mut out = vec![0.0; disc.dofs.n_free()];
    for (c, r) in locals.iter().enumerate() {
        for (l, d) in disc.dofs.cell_dofs(c).iter().enumerate() {
            for (i, coef) in disc.dofs.free_map(*d) {
                out[i] += coef * r[l];
            }
        }
    }
    Ok(out)
}

/// Jacobian and right-hand side `−R` over the free DOFs.
pub fn assemble_jacobian(
    disc: &Discretization,
    problem: &Problem,
    u: &[f64],
    history: &HistoryField,
    load: f64,
) -> Result<SparseSystem, AssemblyError> {
    let ev = Evaluator { disc, problem, u, history, load };
    ev.check()?;
    let n_free = disc.dofs.n_free();
    let locals: Vec<(LocalVector, Vec<(usize, usize, f64)>)> = (0..disc.dofs.cells.len())
        .into_par_iter()
        .map(|c| {
            let (r, k) = ev.local(c, true)?;
            let k = k.expect("jacobian requested");
            let maps: Vec<Vec<(usize, f64)>> = disc.dofs.cell_dofs(c).iter().map(|d| disc.dofs.free_map(*d)).collect();
            let mut trip = Vec::with_capacity(64);
            for l in 0..8 {
                for m in 0..8 {
                    if k[l][m] == 0.0 {
                        continue;
                    }
                    for (i, ci) in &maps[l] {
                        for (j, cj) in &maps[m] {
                            trip.push((*i, *j, ci * cj * k[l][m]));
                        }
                    }
                }
            }
            Ok((r, trip))
        })
        .collect::<Result<_, AssemblyError>>()?;
    let mut rhs = vec![0.0; n_free];
    let mut triplets = Vec::with_capacity(locals.iter().map(|(_, t)| t.len()).sum());
    for (c, (r, trip)) in locals.into_iter().enumerate() {
        for (l, d) in disc.dofs.cell_dofs(c).iter().enumerate() {
            for (i, coef) in disc.dofs.free_map(*d) {
                rhs[i] -= coef * r[l];
            }
        }
        triplets.extend(trip);
    }
    let matrix = CsrMatrix::from_triplets(n_free, n_free, triplets);
    let symmetric = matrix.is_symmetric(1e-10);
    Ok(SparseSystem { matrix, rhs, symmetric })
}

/// `A(u, u) = ∫ ∇u : σ(u, α)` over the domain.
pub fn energy(disc: &Discretization, problem: &Problem, u: &[f64], history: &HistoryField) -> Result<f64, AssemblyError> {
    let ev = Evaluator { disc, problem, u, history, load: 0.0 };
    ev.check()?;
    let parts: Vec<f64> = (0..disc.dofs.cells.len())
        .into_par_iter()
        .map(|c| {
            let quad = &disc.quadrature[c];
            let mut e = 0.0;
            for (q, (p, w)) in quad.points.iter().zip(&quad.weights).enumerate() {
                let (_, grad) = disc.dofs.evaluate(u, c, *p);
                let eps = engineering_strain(&grad);
                let s = ev.stress(c, &eps, &ev.history_at(c, q, *p))?;
                e += w * dot4(&eps, &s.stress);
            }
            Ok(e)
        })
        .collect::<Result<_, AssemblyError>>()?;
    Ok(parts.iter().sum())
}

/// Stress at a point of active cell `c` from `u` and the history field.
pub fn stress_at(
    disc: &Discretization,
    problem: &Problem,
    u: &[f64],
    history: &HistoryField,
    c: usize,
    p: [f64; 2],
) -> Result<StressResult, AssemblyError> {
    let (_, grad) = disc.dofs.evaluate(u, c, p);
    stress_update(&engineering_strain(&grad), &history.interpolate(c, p), &problem.material)
        .map_err(|source| AssemblyError::Constitutive { cell: c, source })
}

/// History at the Gauss nodes after a converged step: the return map applied
/// to `u` from the previous history; constrained values regenerated.
pub fn update_history(
    disc: &Discretization,
    problem: &Problem,
    u: &[f64],
    history_prev: &HistoryField,
) -> Result<HistoryField, AssemblyError> {
    let ev = Evaluator { disc, problem, u, history: history_prev, load: 0.0 };
    ev.check()?;
    let layout = &history_prev.layout;
    let cells: Vec<[PointHistory; 4]> = (0..disc.dofs.cells.len())
        .into_par_iter()
        .map(|c| {
            let nodes = layout.node_points(c);
            let mut out = [PointHistory::default(); 4];
            for q in 0..4 {
                let prev = history_prev.values[4 * c + q];
                if layout.rows[4 * c + q].is_some() {
                    out[q] = prev;
                    continue;
                }
                let (_, grad) = disc.dofs.evaluate(u, c, nodes[q]);
                out[q] = ev.stress(c, &engineering_strain(&grad), &prev)?.history;
            }
            Ok(out)
        })
        .collect::<Result<_, AssemblyError>>()?;
    let mut next = HistoryField {
        layout: layout.clone(),
        values: cells.into_iter().flatten().collect(),
    };
    next.apply_constraints();
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::DiscretizationOptions;
    use crate::geometry::LevelSet;
    use crate::mesh::{Mark, QuadtreeMesh};
    use crate::problem::{BcKind, BcRegion, BcValue, BoundaryCondition};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    const GRAD: [[f64; 2]; 2] = [[1.0e-3, 0.4e-3], [-0.2e-3, -0.5e-3]];

    fn disc_problem() -> Problem {
        Problem {
            box_size: 1.0,
            level_set: LevelSet::circle([0.5, 0.5], 0.37).tagged("outer"),
            material: Default::default(),
            bcs: vec![BoundaryCondition {
                region: BcRegion::BoundaryTag("outer".into()),
                kind: BcKind::DirichletNitsche,
                components: [true, true],
                value: BcValue::Affine { offset: [1e-4, -2e-4], gradient: GRAD },
            }],
            body_force: [0.0, 0.0],
            nitsche_beta0: 25.0,
            quadrature_degree: 4,
        }
    }

    fn graded_mesh() -> QuadtreeMesh {
        let m = QuadtreeMesh::uniform(1.0, 3, 8).unwrap();
        let marks: BTreeMap<_, _> = m.leaves().iter().filter(|c| c.morton % 3 == 0).map(|c| (*c, Mark::Refine)).collect();
        m.refine_and_coarsen(&marks).unwrap().0
    }

    fn affine(p: [f64; 2]) -> [f64; 2] {
        [
            1e-4 + GRAD[0][0] * p[0] + GRAD[0][1] * p[1],
            -2e-4 + GRAD[1][0] * p[0] + GRAD[1][1] * p[1],
        ]
    }

    #[test]
    fn affine_field_passes_patch_test() {
        let problem = disc_problem();
        for aggregation in [true, false] {
            let opts = DiscretizationOptions { aggregation, ..Default::default() };
            let disc = Discretization::build(graded_mesh(), &problem, opts).unwrap();
            assert!(!disc.mesh.collect_hanging_entities().is_empty());
            let (free, fixed) = disc.dofs.interpolate(affine);
            let u = disc.dofs.expand(&free, &fixed);
            let h = disc.zero_history();
            let r = assemble_residual(&disc, &problem, &u, &h, 1.0).unwrap();
            let scale = problem.material.young * 1e-3 * 0.1;
            let worst = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(worst < 1e-9 * scale, "aggregation {aggregation}: {worst}");
        }
    }

    #[test]
    fn energy_of_affine_field() {
        let mut problem = disc_problem();
        problem.level_set = LevelSet::rectangle([0.0, 0.0], [0.6, 1.0]).tagged("outer");
        let disc = Discretization::build(graded_mesh(), &problem, Default::default()).unwrap();
        let (free, fixed) = disc.dofs.interpolate(affine);
        let u = disc.dofs.expand(&free, &fixed);
        let e = energy(&disc, &problem, &u, &disc.zero_history()).unwrap();
        let eps = engineering_strain(&GRAD);
        let s = crate::constitutive::elastic_stress(&eps, &[0.0; 4], &problem.material);
        let exact = 0.6 * dot4(&eps, &s);
        assert!((e - exact).abs() < 1e-10 * exact);
    }

    fn random_state(disc: &Discretization, seed: u64, amp: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let free: Vec<f64> = (0..disc.n_free()).map(|_| amp * rng.gen_range(-1.0..1.0)).collect();
        let fixed = vec![0.0; disc.dofs.n_fixed()];
        disc.dofs.expand(&free, &fixed)
    }

    fn fd_check(problem: &Problem, opts: DiscretizationOptions, amp: f64) -> (bool, f64) {
        let disc = Discretization::build(graded_mesh(), problem, opts).unwrap();
        let u = random_state(&disc, 7, amp);
        let h = disc.zero_history();
        let sys = assemble_jacobian(&disc, problem, &u, &h, 1.0).unwrap();
        let r0 = assemble_residual(&disc, problem, &u, &h, 1.0).unwrap();
        for (a, b) in r0.iter().zip(&sys.rhs) {
            assert_eq!(*a, -*b);
        }
        let free0 = disc.dofs.restrict(&u);
        let fixed = vec![0.0; disc.dofs.n_fixed()];
        let mut worst = 0.0f64;
        let kmax = sys.matrix.max_abs();
        let step = amp * 1e-6;
        for j in (0..disc.n_free()).step_by(7) {
            let mut fp = free0.clone();
            fp[j] += step;
            let mut fm = free0.clone();
            fm[j] -= step;
            let rp = assemble_residual(&disc, problem, &disc.dofs.expand(&fp, &fixed), &h, 1.0).unwrap();
            let rm = assemble_residual(&disc, problem, &disc.dofs.expand(&fm, &fixed), &h, 1.0).unwrap();
            for i in 0..disc.n_free() {
                let fd = (rp[i] - rm[i]) / (2.0 * step);
                worst = worst.max((fd - sys.matrix.get(i, j)).abs() / kmax);
            }
        }
        (sys.symmetric, worst)
    }

    #[test]
    fn jacobian_matches_finite_differences_elastic() {
        let (symmetric, worst) = fd_check(&disc_problem(), Default::default(), 1e-5);
        assert!(symmetric);
        assert!(worst < 1e-7, "{worst}");
    }

    #[test]
    fn jacobian_matches_finite_differences_plastic() {
        let mut problem = disc_problem();
        problem.material.hardening = 1e9;
        let (_, worst) = fd_check(&problem, Default::default(), 2e-2 / 16.0);
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn assembly_is_deterministic() {
        let problem = disc_problem();
        let disc = Discretization::build(graded_mesh(), &problem, Default::default()).unwrap();
        let u = random_state(&disc, 3, 1e-3);
        let h = disc.zero_history();
        let a = assemble_jacobian(&disc, &problem, &u, &h, 1.0).unwrap();
        let b = assemble_jacobian(&disc, &problem, &u, &h, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn history_update_records_plastic_flow() {
        let problem = disc_problem();
        let disc = Discretization::build(graded_mesh(), &problem, Default::default()).unwrap();
        let h = disc.zero_history();
        let (free, fixed) = disc.dofs.interpolate(|p| [5e-3 * p[0], 0.0]);
        let u = disc.dofs.expand(&free, &fixed);
        let next = update_history(&disc, &problem, &u, &h).unwrap();
        assert!(next.values.iter().all(|v| v.alpha > 0.0));
        let (free, fixed) = disc.dofs.interpolate(|p| [1e-5 * p[0], 0.0]);
        let small = disc.dofs.expand(&free, &fixed);
        assert!(update_history(&disc, &problem, &small, &h).unwrap().max_alpha() == 0.0);
    }

    #[test]
    fn rejects_foreign_history() {
        let problem = disc_problem();
        let disc = Discretization::build(graded_mesh(), &problem, Default::default()).unwrap();
        let other = Discretization::build(QuadtreeMesh::uniform(1.0, 2, 8).unwrap(), &problem, Default::default()).unwrap();
        let u = vec![0.0; disc.dofs.n_dofs()];
        assert!(matches!(
            assemble_residual(&disc, &problem, &u, &other.zero_history(), 1.0),
            Err(AssemblyError::HistoryMismatch { .. })
        ));
    }
}
