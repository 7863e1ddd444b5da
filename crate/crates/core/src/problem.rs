//! Problem definition: domain, material, boundary conditions and loads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constitutive::{ConstitutiveError, MaterialParams};
use crate::geometry::LevelSet;
use crate::mesh::Face;

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("boundary condition {index}: {message}")]
    InvalidBc { index: usize, message: String },
    #[error(transparent)]
    Material(#[from] ConstitutiveError),
    #[error("box size must be positive, got {0}")]
    InvalidBox(f64),
    #[error("nitsche penalty must be positive, got {0}")]
    InvalidPenalty(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcRegion {
    /// A face of the background box (mesh-fitted).
    BoxFace(Face),
    /// Embedded boundary pieces carrying this level-set tag.
    BoundaryTag(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcKind {
    DirichletStrong,
    DirichletNitsche,
    Neumann,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BcValue {
    Constant { value: [f64; 2] },
    /// Normal pressure: traction `−p n`.
    Pressure { value: f64 },
    /// `offset + gradient · x`.
    Affine { offset: [f64; 2], gradient: [[f64; 2]; 2] },
}

impl BcValue {
    /// Value at full load for a point with outward normal `n`.
    pub fn evaluate(&self, p: [f64; 2], n: [f64; 2]) -> [f64; 2] {
        match self {
            BcValue::Constant { value } => *value,
            BcValue::Pressure { value } => [-value * n[0], -value * n[1]],
            BcValue::Affine { offset, gradient } => [
                offset[0] + gradient[0][0] * p[0] + gradient[0][1] * p[1],
                offset[1] + gradient[1][0] * p[0] + gradient[1][1] * p[1],
            ],
        }
    }
}

fn all_components() -> [bool; 2] {
    [true, true]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryCondition {
    pub region: BcRegion,
    pub kind: BcKind,
    #[serde(default = "all_components")]
    pub components: [bool; 2],
    pub value: BcValue,
}

fn default_beta0() -> f64 {
    25.0
}

fn default_degree() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    /// Side of the background box `[0, L]^2`.
    pub box_size: f64,
    pub level_set: LevelSet,
    pub material: MaterialParams,
    #[serde(default)]
    pub bcs: Vec<BoundaryCondition>,
    #[serde(default)]
    pub body_force: [f64; 2],
    #[serde(default = "default_beta0")]
    pub nitsche_beta0: f64,
    /// Polynomial degree integrated exactly on cut-cell sub-triangles.
    #[serde(default = "default_degree")]
    pub quadrature_degree: usize,
}

impl Problem {
    pub fn validate(&self) -> Result<(), ProblemError> {
        if !(self.box_size > 0.0 && self.box_size.is_finite()) {
            return Err(ProblemError::InvalidBox(self.box_size));
        }
        if !(self.nitsche_beta0 > 0.0) {
            return Err(ProblemError::InvalidPenalty(self.nitsche_beta0));
        }
        self.material.validate()?;
        for (index, bc) in self.bcs.iter().enumerate() {
            let fail = |m: &str| Err(ProblemError::InvalidBc { index, message: m.to_string() });
            match (&bc.region, bc.kind) {
                (BcRegion::BoundaryTag(_), BcKind::DirichletStrong) => {
                    return fail("strong Dirichlet conditions are only available on box faces")
                }
                (BcRegion::BoxFace(_), BcKind::DirichletNitsche) => {
                    return fail("box faces are mesh-fitted; use dirichlet_strong")
                }
                _ => {}
            }
            if bc.kind != BcKind::Neumann && matches!(bc.value, BcValue::Pressure { .. }) {
                return fail("pressure values are tractions and need kind = neumann");
            }
            if !bc.components.iter().any(|c| *c) {
                return fail("at least one component must be selected");
            }
        }
        Ok(())
    }

    /// Indices of boundary conditions acting on the embedded boundary with `tag`.
    pub fn bcs_for_tag<'a>(&'a self, tag: Option<&'a str>) -> impl Iterator<Item = usize> + 'a {
        self.bcs.iter().enumerate().filter_map(move |(i, bc)| match (&bc.region, tag) {
            (BcRegion::BoundaryTag(t), Some(s)) if t == s => Some(i),
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Problem {
        Problem {
            box_size: 1.0,
            level_set: LevelSet::circle([0.5, 0.5], 0.3),
            material: MaterialParams::default(),
            bcs: vec![],
            body_force: [0.0, 0.0],
            nitsche_beta0: 25.0,
            quadrature_degree: 4,
        }
    }

    #[test]
    fn pressure_is_inward_traction() {
        let v = BcValue::Pressure { value: 2.0 };
        assert_eq!(v.evaluate([0.0, 0.0], [1.0, 0.0]), [-2.0, -0.0]);
    }

    #[test]
    fn rejects_strong_dirichlet_on_tags() {
        let mut p = base();
        p.bcs.push(BoundaryCondition {
            region: BcRegion::BoundaryTag("outer".into()),
            kind: BcKind::DirichletStrong,
            components: [true, true],
            value: BcValue::Constant { value: [0.0, 0.0] },
        });
        assert!(matches!(p.validate(), Err(ProblemError::InvalidBc { index: 0, .. })));
    }

    #[test]
    fn toml_roundtrip() {
        let mut p = base();
        p.bcs.push(BoundaryCondition {
            region: BcRegion::BoxFace(Face::Left),
            kind: BcKind::DirichletStrong,
            components: [true, false],
            value: BcValue::Constant { value: [0.0, 0.0] },
        });
        let s = toml::to_string(&p).unwrap();
        let back: Problem = toml::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
