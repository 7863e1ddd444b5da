//! Level-set geometry, cell classification and cut-cell quadrature.

mod cut;
mod level_set;

pub use cut::{
    classify_cell, classify_cells, clip_segment, edge_root, triangulate_cut_cell, BoundarySegment,
    CellClass, CutCell, EmbeddedGeometry,
};
pub use level_set::LevelSet;
