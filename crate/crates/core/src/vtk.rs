//! VTK XML unstructured-grid output of active cells and fields.
//!
//! Cut cells are written as their interior sub-triangulation, so the embedded
//! boundary is visible. Points are duplicated per cell.

use std::path::Path;

use thiserror::Error;
use vtkio::model::{
    Attribute, Attributes, ByteOrder, CellType, Cells, DataSet, UnstructuredGridPiece, Version, VertexNumbers, Vtk,
};

use crate::discretization::Discretization;
use crate::geometry::CellClass;
use crate::history::HistoryField;

#[derive(Debug, Error)]
pub enum VtkError {
    #[error("failed to write {path}: {message}")]
    Write { path: String, message: String },
    #[error("field size mismatch: {0}")]
    FieldSize(&'static str),
}

/// Optional fields; geometry and cell classification are always written.
#[derive(Clone, Copy, Debug, Default)]
pub struct VtkFields<'a> {
    /// Full displacement vector.
    pub u: Option<&'a [f64]>,
    pub history: Option<&'a HistoryField>,
    /// Error indicator per active cell.
    pub eta: Option<&'a [f64]>,
}

fn centroid(pts: &[[f64; 2]]) -> [f64; 2] {
    let n = pts.len() as f64;
    [pts.iter().map(|p| p[0]).sum::<f64>() / n, pts.iter().map(|p| p[1]).sum::<f64>() / n]
}

pub fn write_vtk(path: &Path, disc: &Discretization, fields: VtkFields) -> Result<(), VtkError> {
    let dofs = &disc.dofs;
    if fields.u.is_some_and(|u| u.len() != dofs.n_dofs()) {
        return Err(VtkError::FieldSize("displacement"));
    }
    if fields.history.is_some_and(|h| h.values.len() != disc.history_layout.n_dofs()) {
        return Err(VtkError::FieldSize("history"));
    }
    if fields.eta.is_some_and(|e| e.len() != dofs.cells.len()) {
        return Err(VtkError::FieldSize("indicator"));
    }

    let mut points = Vec::new();
    let mut displacement = Vec::new();
    let mut connectivity = Vec::new();
    let mut offsets = Vec::new();
    let mut types = Vec::new();
    let (mut class, mut root, mut level, mut alpha, mut eta) = (vec![], vec![], vec![], vec![], vec![]);

    for c in 0..dofs.cells.len() {
        let sq = dofs.cell_squares[c];
        let pieces: Vec<Vec<[f64; 2]>> = match dofs.cell_classes[c] {
            CellClass::Cut => disc.geometry.cuts[dofs.cell_leaf[c]]
                .as_ref()
                .map(|cut| cut.triangles.iter().map(|t| t.to_vec()).collect())
                .unwrap_or_default(),
            _ => {
                let k = sq.corners();
                vec![vec![k[0], k[1], k[3], k[2]]]
            }
        };
        let root_index = disc
            .aggregates
            .as_ref()
            .and_then(|a| a.root(&dofs.cells[c]))
            .and_then(|r| dofs.cell_position(&r))
            .map_or(-1, |r| r as i64);
        for piece in pieces {
            for p in &piece {
                connectivity.push((points.len() / 3) as u64);
                points.extend_from_slice(&[p[0], p[1], 0.0]);
                if let Some(u) = fields.u {
                    let (v, _) = dofs.evaluate(u, c, *p);
                    displacement.extend_from_slice(&[v[0], v[1], 0.0]);
                }
            }
            offsets.push(connectivity.len() as u64);
            types.push(if piece.len() == 3 { CellType::Triangle } else { CellType::Quad });
            class.push(dofs.cell_classes[c].code());
            root.push(root_index);
            level.push(dofs.cells[c].level as i32);
            if let Some(h) = fields.history {
                alpha.push(h.interpolate(c, centroid(&piece)).alpha);
            }
            if let Some(e) = fields.eta {
                eta.push(e[c]);
            }
        }
    }

    let mut point_data = Vec::new();
    if fields.u.is_some() {
        point_data.push(Attribute::vectors("displacement").with_data(displacement));
    }
    let mut cell_data = vec![
        Attribute::scalars("cell_class", 1).with_data(class),
        Attribute::scalars("aggregate_root", 1).with_data(root),
        Attribute::scalars("level", 1).with_data(level),
    ];
    if fields.history.is_some() {
        cell_data.push(Attribute::scalars("alpha", 1).with_data(alpha));
    }
    if fields.eta.is_some() {
        cell_data.push(Attribute::scalars("eta", 1).with_data(eta));
    }
    let vtk = Vtk {
        version: Version::new((1, 0)),
        title: String::new(),
        byte_order: ByteOrder::LittleEndian,
        file_path: None,
        data: DataSet::inline(UnstructuredGridPiece {
            points: points.into(),
            cells: Cells {
                cell_verts: VertexNumbers::XML { connectivity, offsets },
                types,
            },
            data: Attributes { point: point_data, cell: cell_data },
        }),
    };
    vtk.export(path).map_err(|e| VtkError::Write {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
