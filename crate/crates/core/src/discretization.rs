//! Everything built on one mesh: cut geometry, aggregates, DOF handler,
//! history layout and per-cell quadrature.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregation::{build_aggregates, AggregateMap, AggregationError};
use crate::geometry::{clip_segment, CellClass, EmbeddedGeometry};
use crate::history::{HistoryField, HistoryFlavor, HistoryLayout};
use crate::mesh::{Face, QuadtreeMesh};
use crate::problem::{BcKind, BcRegion, Problem, ProblemError};
use crate::quadrature::{segment_rule, tensor_gauss_square};
use crate::space::{build_continuous_space, DofHandler, SpaceError, StrongDirichlet};

#[derive(Debug, Error)]
pub enum DiscretizationError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("the domain does not intersect any cell of the mesh")]
    EmptyDomain,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationOptions {
    #[serde(default = "yes")]
    pub aggregation: bool,
    #[serde(default)]
    pub history_flavor: HistoryFlavor,
}

fn yes() -> bool {
    true
}

impl Default for DiscretizationOptions {
    fn default() -> Self {
        DiscretizationOptions {
            aggregation: true,
            history_flavor: HistoryFlavor::Standard,
        }
    }
}

/// Quadrature point on a boundary piece of a cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryPoint {
    pub point: [f64; 2],
    pub weight: f64,
    pub normal: [f64; 2],
    /// Index into the problem's boundary conditions.
    pub bc: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CellQuadrature {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// Volume points coincide with the cell's history nodes.
    pub at_history_nodes: bool,
    pub nitsche: Vec<BoundaryPoint>,
    pub neumann: Vec<BoundaryPoint>,
}

/// Segment points used on boundary pieces.
pub const BOUNDARY_POINTS: usize = 3;

#[derive(Clone, Debug)]
pub struct Discretization {
    pub mesh: QuadtreeMesh,
    pub geometry: EmbeddedGeometry,
    pub aggregates: Option<AggregateMap>,
    pub options: DiscretizationOptions,
    pub dofs: DofHandler,
    pub history_layout: HistoryLayout,
    /// Per active cell.
    pub quadrature: Vec<CellQuadrature>,
    /// Problem BC index of each strong Dirichlet entry used by the DOF handler.
    pub strong_bcs: Vec<usize>,
}

impl Discretization {
    pub fn build(mesh: QuadtreeMesh, problem: &Problem, options: DiscretizationOptions) -> Result<Self, DiscretizationError> {
        Self::build_with_degree(mesh, problem, options, problem.quadrature_degree)
    }

    /// As [`Discretization::build`] with an explicit cut-cell quadrature degree.
    pub fn build_with_degree(
        mesh: QuadtreeMesh,
        problem: &Problem,
        options: DiscretizationOptions,
        degree: usize,
    ) -> Result<Self, DiscretizationError> {
        problem.validate()?;
        let geometry = EmbeddedGeometry::build(&mesh, &problem.level_set);
        if geometry.active_count() == 0 {
            return Err(DiscretizationError::EmptyDomain);
        }
        let aggregates = if options.aggregation {
            Some(build_aggregates(&mesh, &geometry.classes)?)
        } else {
            None
        };
        let mut strong = Vec::new();
        let mut strong_bcs = Vec::new();
        for (i, bc) in problem.bcs.iter().enumerate() {
            if let (BcRegion::BoxFace(face), BcKind::DirichletStrong) = (&bc.region, bc.kind) {
                strong.push(StrongDirichlet { face: *face, components: bc.components });
                strong_bcs.push(i);
            }
        }
        let dofs = build_continuous_space(&mesh, &geometry, aggregates.as_ref(), &strong)?;
        let history_layout = HistoryLayout::build(&dofs, aggregates.as_ref(), options.history_flavor);

        let top = |level: u8| (1u32 << level) - 1;
        let quadrature = (0..dofs.cells.len())
            .map(|c| {
                let cell = dofs.cells[c];
                let sq = dofs.cell_squares[c];
                let mut q = CellQuadrature::default();
                match dofs.cell_classes[c] {
                    CellClass::Cut => {
                        let cut = geometry.cuts[dofs.cell_leaf[c]].as_ref().expect("cut cell has a reconstruction");
                        let vq = cut.volume_quadrature(degree);
                        q.points = vq.points;
                        q.weights = vq.weights;
                        for seg in &cut.segments {
                            let sqd = seg.quadrature(BOUNDARY_POINTS);
                            for bc in problem.bcs_for_tag(seg.tag.as_deref()) {
                                let target = match problem.bcs[bc].kind {
                                    BcKind::DirichletNitsche => &mut q.nitsche,
                                    BcKind::Neumann => &mut q.neumann,
                                    BcKind::DirichletStrong => continue,
                                };
                                for (p, w) in sqd.points.iter().zip(&sqd.weights) {
                                    target.push(BoundaryPoint { point: *p, weight: *w, normal: seg.normal, bc });
                                }
                            }
                        }
                    }
                    _ => {
                        let vq = tensor_gauss_square(&sq, 2);
                        q.points = vq.points;
                        q.weights = vq.weights;
                        q.at_history_nodes = true;
                    }
                }
                // Neumann data on box faces, clipped to the domain.
                let (x, y) = cell.coords();
                for (bc_index, bc) in problem.bcs.iter().enumerate() {
                    let (BcRegion::BoxFace(face), BcKind::Neumann) = (&bc.region, bc.kind) else { continue };
                    let on_face = match face {
                        Face::Left => x == 0,
                        Face::Right => x == top(cell.level),
                        Face::Bottom => y == 0,
                        Face::Top => y == top(cell.level),
                    };
                    if !on_face {
                        continue;
                    }
                    let corners = sq.corners();
                    let [a, b] = face.corners();
                    let piece = if dofs.cell_classes[c] == CellClass::Cut {
                        clip_segment(&problem.level_set, corners[a], corners[b])
                    } else {
                        Some((corners[a], corners[b]))
                    };
                    if let Some((pa, pb)) = piece {
                        let sqd = segment_rule(pa, pb, BOUNDARY_POINTS);
                        for (p, w) in sqd.points.iter().zip(&sqd.weights) {
                            q.neumann.push(BoundaryPoint { point: *p, weight: *w, normal: face.normal(), bc: bc_index });
                        }
                    }
                }
                q
            })
            .collect();

        Ok(Discretization {
            mesh,
            geometry,
            aggregates,
            options,
            dofs,
            history_layout,
            quadrature,
            strong_bcs,
        })
    }

    pub fn n_free(&self) -> usize {
        self.dofs.n_free()
    }

    pub fn active_cells(&self) -> usize {
        self.dofs.cells.len()
    }

    pub fn active_fraction(&self) -> f64 {
        self.active_cells() as f64 / self.mesh.len() as f64
    }

    /// Values of the strongly fixed DOFs at the given load factor.
    pub fn fixed_values(&self, problem: &Problem, load: f64) -> Vec<f64> {
        self.dofs
            .fixed
            .iter()
            .map(|f| {
                let bc = &problem.bcs[self.strong_bcs[f.bc]];
                load * bc.value.evaluate(f.point, [0.0, 0.0])[f.component]
            })
            .collect()
    }

    pub fn zero_history(&self) -> HistoryField {
        HistoryField::zeros(self.history_layout.clone())
    }
}
