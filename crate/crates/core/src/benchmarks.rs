//! Pressurized thick cylinder: problem setup, closed-form elastic-perfectly
//! plastic solution, and error norms against it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{engineering_strain, stress_at, AssemblyError};
use crate::constitutive::{elastic_tangent, MaterialParams, Voigt, YieldNormalization};
use crate::discretization::Discretization;
use crate::geometry::{CellClass, LevelSet};
use crate::history::HistoryField;
use crate::mesh::Face;
use crate::problem::{BcKind, BcRegion, BcValue, BoundaryCondition, Problem};
use crate::quadrature::tensor_gauss_square;

#[derive(Debug, Error, PartialEq)]
pub enum BenchmarkError {
    #[error("pressure {pressure:e} is at or beyond the limit load {limit:e}")]
    BeyondLimitLoad { pressure: f64, limit: f64 },
    #[error("radius {r} outside the wall [{a}, {b}]")]
    OutsideWall { r: f64, a: f64, b: f64 },
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
}

/// Quarter of a thick-walled cylinder under internal pressure, plane strain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThickCylinder {
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub pressure: f64,
    pub material: MaterialParams,
}

impl Default for ThickCylinder {
    fn default() -> Self {
        ThickCylinder {
            inner_radius: 0.1,
            outer_radius: 0.2,
            pressure: 1.9e8,
            material: MaterialParams {
                yield_normalization: YieldNormalization::VonMises,
                ..MaterialParams::default()
            },
        }
    }
}

/// Exact fields at one radius.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CylinderState {
    pub u_r: f64,
    pub du_r: f64,
    pub s_rr: f64,
    pub s_tt: f64,
}

impl ThickCylinder {
    /// Shear yield stress `k = σ_y / √3`.
    pub fn shear_yield(&self) -> f64 {
        self.material.yield_stress / 3f64.sqrt()
    }

    pub fn first_yield_pressure(&self) -> f64 {
        self.shear_yield() * (1.0 - (self.inner_radius / self.outer_radius).powi(2))
    }

    pub fn limit_pressure(&self) -> f64 {
        2.0 * self.shear_yield() * (self.outer_radius / self.inner_radius).ln()
    }

    /// Pressure that puts the elastic-plastic front at radius `c`.
    pub fn pressure_for_front(&self, c: f64) -> f64 {
        let (a, b, k) = (self.inner_radius, self.outer_radius, self.shear_yield());
        k * (2.0 * (c / a).ln() + 1.0 - (c / b).powi(2))
    }

    /// Radius of the plastic front at pressure `p` (equal to `a` while elastic).
    pub fn plastic_front(&self, p: f64) -> Result<f64, BenchmarkError> {
        let limit = self.limit_pressure();
        if p >= limit {
            return Err(BenchmarkError::BeyondLimitLoad { pressure: p, limit });
        }
        if p <= self.first_yield_pressure() {
            return Ok(self.inner_radius);
        }
        let (mut lo, mut hi) = (self.inner_radius, self.outer_radius);
        while hi - lo > 1e-14 * hi {
            let mid = 0.5 * (lo + hi);
            if self.pressure_for_front(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Closed-form state at radius `r` under pressure `p`.
    ///
    /// Elastic zone: Lamé solution driven by the front pressure. Plastic zone:
    /// stresses from equilibrium with `σ_θθ − σ_rr = 2k`; displacement from the
    /// elastic volume change, `(r u)' = r (1+ν)(1−2ν)/E (σ_rr + σ_θθ)`.
    pub fn exact(&self, r: f64, p: f64) -> Result<CylinderState, BenchmarkError> {
        let (a, b) = (self.inner_radius, self.outer_radius);
        if r < a * (1.0 - 1e-12) || r > b * (1.0 + 1e-12) {
            return Err(BenchmarkError::OutsideWall { r, a, b });
        }
        let c = self.plastic_front(p)?;
        let (e, nu) = (self.material.young, self.material.poisson);
        let k = self.shear_yield();
        // Lamé coefficients σ_rr = A − B/r², σ_θθ = A + B/r² of the elastic zone.
        let pc = if c > a { k * (1.0 - (c / b).powi(2)) } else { p };
        let big_a = pc * c * c / (b * b - c * c);
        let big_b = big_a * b * b;
        let lame_u = |r: f64| (1.0 + nu) / e * ((1.0 - 2.0 * nu) * big_a * r + big_b / r);
        let lame_du = |r: f64| (1.0 + nu) / e * ((1.0 - 2.0 * nu) * big_a - big_b / (r * r));
        if r >= c {
            return Ok(CylinderState {
                u_r: lame_u(r),
                du_r: lame_du(r),
                s_rr: big_a - big_b / (r * r),
                s_tt: big_a + big_b / (r * r),
            });
        }
        let cv = (1.0 + nu) * (1.0 - 2.0 * nu) / e;
        let s_rr = -p + 2.0 * k * (r / a).ln();
        let s_tt = s_rr + 2.0 * k;
        // Antiderivative of r (σ_rr + σ_θθ).
        let f = |s: f64| -p * s * s + 2.0 * k * s * s * (s / a).ln();
        let u_r = (c * lame_u(c) - cv * (f(c) - f(r))) / r;
        let du_r = cv * (s_rr + s_tt) - u_r / r;
        Ok(CylinderState { u_r, du_r, s_rr, s_tt })
    }

    /// Level set and boundary conditions of the quarter model on `[0, b]²`.
    pub fn problem(&self) -> Problem {
        let (a, b) = (self.inner_radius, self.outer_radius);
        let symmetry = |face, components| BoundaryCondition {
            region: BcRegion::BoxFace(face),
            kind: BcKind::DirichletStrong,
            components,
            value: BcValue::Constant { value: [0.0, 0.0] },
        };
        Problem {
            box_size: b,
            level_set: LevelSet::Intersection {
                members: vec![
                    LevelSet::circle([0.0, 0.0], b).tagged("outer"),
                    LevelSet::circle([0.0, 0.0], a).tagged("inner").complement(),
                ],
            },
            material: self.material,
            bcs: vec![
                symmetry(Face::Left, [true, false]),
                symmetry(Face::Bottom, [false, true]),
                BoundaryCondition {
                    region: BcRegion::BoundaryTag("inner".into()),
                    kind: BcKind::Neumann,
                    components: [true, true],
                    value: BcValue::Pressure { value: self.pressure },
                },
            ],
            body_force: [0.0, 0.0],
            nitsche_beta0: 25.0,
            quadrature_degree: 4,
        }
    }
}

/// Relative errors of a discrete solution against an exact stress/strain field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StressErrors {
    pub s_rr: f64,
    pub s_tt: f64,
    /// Relative error of the strain in the elastic energy norm.
    pub energy: f64,
}

/// `L²(Ω)` relative errors of `σ_rr`, `σ_θθ`, and the energy-norm strain error
/// against the cylinder solution at load factor `load`. Cut cells use the
/// assembly degree raised by 2; uncut cells a 3x3 Gauss rule.
pub fn cylinder_errors(
    disc: &Discretization,
    problem: &Problem,
    cylinder: &ThickCylinder,
    u: &[f64],
    history: &HistoryField,
    load: f64,
) -> Result<StressErrors, BenchmarkError> {
    let pressure = load * cylinder.pressure;
    let c_el = elastic_tangent(&cylinder.material);
    let energy_density = |e: &Voigt| -> f64 {
        (0..4).map(|i| e[i] * (0..4).map(|j| c_el[i][j] * e[j]).sum::<f64>()).sum()
    };
    let mut acc = [0.0; 6];
    for c in 0..disc.dofs.cells.len() {
        let quad = match disc.dofs.cell_classes[c] {
            CellClass::Cut => disc.geometry.cuts[disc.dofs.cell_leaf[c]]
                .as_ref()
                .expect("cut cell has a reconstruction")
                .volume_quadrature(problem.quadrature_degree + 2),
            _ => tensor_gauss_square(&disc.dofs.cell_squares[c], 3),
        };
        for (p, w) in quad.points.iter().zip(&quad.weights) {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let r_clamped = r.clamp(cylinder.inner_radius, cylinder.outer_radius);
            let ex = cylinder.exact(r_clamped, pressure)?;
            let (cs, sn) = (p[0] / r, p[1] / r);
            let s = stress_at(disc, problem, u, history, c, *p)?.stress;
            let h_rr = s[0] * cs * cs + s[1] * sn * sn + 2.0 * s[3] * cs * sn;
            let h_tt = s[0] * sn * sn + s[1] * cs * cs - 2.0 * s[3] * cs * sn;
            acc[0] += w * (h_rr - ex.s_rr).powi(2);
            acc[1] += w * ex.s_rr.powi(2);
            acc[2] += w * (h_tt - ex.s_tt).powi(2);
            acc[3] += w * ex.s_tt.powi(2);
            // exact strain of u = u_r(r) e_r
            let (e_rr, e_tt) = (ex.du_r, ex.u_r / r);
            let exact_eps: Voigt = [
                e_rr * cs * cs + e_tt * sn * sn,
                e_rr * sn * sn + e_tt * cs * cs,
                0.0,
                2.0 * (e_rr - e_tt) * cs * sn,
            ];
            let (_, grad) = disc.dofs.evaluate(u, c, *p);
            let eps = engineering_strain(&grad);
            let diff: Voigt = std::array::from_fn(|i| eps[i] - exact_eps[i]);
            acc[4] += w * energy_density(&diff);
            acc[5] += w * energy_density(&exact_eps);
        }
    }
    Ok(StressErrors {
        s_rr: (acc[0] / acc[1]).sqrt(),
        s_tt: (acc[2] / acc[3]).sqrt(),
        energy: (acc[4] / acc[5]).sqrt(),
    })
}
