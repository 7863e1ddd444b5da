//! Discontinuous history-variable field collocated at the 2x2 Gauss nodes of
//! every active cell.

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregateMap;
use crate::constitutive::PointHistory;
use crate::geometry::CellClass;
use crate::mesh::{CellId, Square};
use crate::space::DofHandler;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryFlavor {
    /// Every node value is independent.
    #[default]
    Standard,
    /// Cut-cell values are the root cell's Gauss-node interpolant extended to the cut cell.
    Aggregated,
}

const GAUSS_OFFSET: f64 = 0.288_675_134_594_812_9; // 1 / (2 sqrt 3)

/// Reference abscissae of the two-point Gauss rule on `[0, 1]`.
pub const GAUSS_1D: [f64; 2] = [0.5 - GAUSS_OFFSET, 0.5 + GAUSS_OFFSET];

/// Gauss nodes of a square, x varying fastest.
pub fn gauss_nodes(sq: &Square) -> [[f64; 2]; 4] {
    std::array::from_fn(|q| sq.from_reference([GAUSS_1D[q % 2], GAUSS_1D[q / 2]]))
}

/// Lagrange basis through the four Gauss nodes of `sq`, evaluated at `p`.
pub fn gauss_lagrange(sq: &Square, p: [f64; 2]) -> [f64; 4] {
    let [xi, eta] = sq.to_reference(p);
    let d = GAUSS_1D[1] - GAUSS_1D[0];
    let l = |t: f64| [(GAUSS_1D[1] - t) / d, (t - GAUSS_1D[0]) / d];
    let (lx, ly) = (l(xi), l(eta));
    std::array::from_fn(|q| lx[q % 2] * ly[q / 2])
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryLayout {
    pub flavor: HistoryFlavor,
    pub cells: Vec<CellId>,
    pub squares: Vec<Square>,
    /// For constrained DOFs: masters and coefficients.
    pub rows: Vec<Option<[(usize, f64); 4]>>,
}

impl HistoryLayout {
    /// Layout on the active cells of `handler`. The aggregated flavor needs
    /// aggregates; without them it degrades to the standard flavor.
    pub fn build(handler: &DofHandler, aggregates: Option<&AggregateMap>, flavor: HistoryFlavor) -> Self {
        let n = handler.cells.len();
        let mut rows = vec![None; 4 * n];
        if let (HistoryFlavor::Aggregated, Some(agg)) = (flavor, aggregates) {
            for c in 0..n {
                if handler.cell_classes[c] != CellClass::Cut {
                    continue;
                }
                let Some(root) = agg.root(&handler.cells[c]) else { continue };
                let rc = handler.cell_position(&root).expect("aggregate root is active");
                let nodes = gauss_nodes(&handler.cell_squares[c]);
                for q in 0..4 {
                    let w = gauss_lagrange(&handler.cell_squares[rc], nodes[q]);
                    rows[4 * c + q] = Some(std::array::from_fn(|k| (4 * rc + k, w[k])));
                }
            }
        }
        HistoryLayout {
            flavor,
            cells: handler.cells.clone(),
            squares: handler.cell_squares.clone(),
            rows,
        }
    }

    pub fn n_dofs(&self) -> usize {
        4 * self.cells.len()
    }

    pub fn n_constrained(&self) -> usize {
        self.rows.iter().filter(|r| r.is_some()).count()
    }

    pub fn node_points(&self, c: usize) -> [[f64; 2]; 4] {
        gauss_nodes(&self.squares[c])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryField {
    pub layout: HistoryLayout,
    pub values: Vec<PointHistory>,
}

impl HistoryField {
    pub fn zeros(layout: HistoryLayout) -> Self {
        let n = layout.n_dofs();
        HistoryField {
            layout,
            values: vec![PointHistory::default(); n],
        }
    }

    /// Regenerate constrained values from their masters.
    pub fn apply_constraints(&mut self) {
        for d in 0..self.values.len() {
            if let Some(row) = self.layout.rows[d] {
                let mut a = [0.0; 5];
                for (m, w) in row {
                    let v = self.values[m].to_array();
                    for i in 0..5 {
                        a[i] += w * v[i];
                    }
                }
                self.values[d] = PointHistory::from_slice(&a);
            }
        }
    }

    /// Interpolated history at `p` inside active cell `c`; α is clamped at zero.
    pub fn interpolate(&self, c: usize, p: [f64; 2]) -> PointHistory {
        let w = gauss_lagrange(&self.layout.squares[c], p);
        let mut a = [0.0; 5];
        for (q, wq) in w.iter().enumerate() {
            let v = self.values[4 * c + q].to_array();
            for i in 0..5 {
                a[i] += wq * v[i];
            }
        }
        a[0] = a[0].max(0.0);
        PointHistory::from_slice(&a)
    }

    pub fn max_alpha(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.alpha))
    }

    /// Clamp negative α to zero; returns how many values were clamped.
    pub fn clamp_alpha(&mut self) -> usize {
        let mut n = 0;
        for v in &mut self.values {
            if v.alpha < 0.0 {
                v.alpha = 0.0;
                n += 1;
            }
        }
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::build_aggregates;
    use crate::geometry::{EmbeddedGeometry, LevelSet};
    use crate::mesh::QuadtreeMesh;
    use crate::space::build_continuous_space;

    fn half_plane_setup(flavor: HistoryFlavor) -> HistoryLayout {
        let m = QuadtreeMesh::uniform(1.0, 1, 4).unwrap();
        let g = EmbeddedGeometry::build(&m, &LevelSet::half_plane([1.0, 0.0], 0.75));
        let a = build_aggregates(&m, &g.classes).unwrap();
        let h = build_continuous_space(&m, &g, Some(&a), &[]).unwrap();
        HistoryLayout::build(&h, Some(&a), flavor)
    }

    #[test]
    fn gauss_node_positions() {
        let sq = Square { anchor: [0.0, 0.0], size: 1.0 };
        let n = gauss_nodes(&sq);
        let d = 0.5 / 3f64.sqrt();
        assert!((n[0][0] - (0.5 - d)).abs() < 1e-15 && (n[3][1] - (0.5 + d)).abs() < 1e-15);
        for (q, p) in n.iter().enumerate() {
            let w = gauss_lagrange(&sq, *p);
            for k in 0..4 {
                assert!((w[k] - if k == q { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn standard_flavor_has_no_constraints() {
        assert_eq!(half_plane_setup(HistoryFlavor::Standard).n_constrained(), 0);
    }

    #[test]
    fn aggregated_flavor_reproduces_root_polynomial() {
        let layout = half_plane_setup(HistoryFlavor::Aggregated);
        assert_eq!(layout.n_constrained(), 8);
        // bilinear polynomial set on the root nodes, read back at cut-cell nodes
        let f = |p: [f64; 2]| 0.3 + 1.7 * p[0] - 0.4 * p[1] + 2.5 * p[0] * p[1];
        let mut field = HistoryField::zeros(layout.clone());
        for c in 0..layout.cells.len() {
            for (q, p) in layout.node_points(c).iter().enumerate() {
                if layout.rows[4 * c + q].is_none() {
                    field.values[4 * c + q].alpha = f(*p);
                }
            }
        }
        field.apply_constraints();
        for d in 0..layout.n_dofs() {
            if layout.rows[d].is_some() {
                let p = layout.node_points(d / 4)[d % 4];
                assert!((field.values[d].alpha - f(p)).abs() < 1e-14);
            }
        }
    }
}
