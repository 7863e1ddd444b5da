//! Moving displacement and history fields from one adapted mesh to the next.
//!
//! Displacements use nodal interpolation. History values on refined cells are
//! interpolated from the parent. On coarsened cells they are the L² projection
//! of the children's interpolants onto the parent's Gauss-node basis.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::constitutive::PointHistory;
use crate::discretization::Discretization;
use crate::history::{gauss_lagrange, gauss_nodes, HistoryField};
use crate::mesh::{AdaptEvent, CellId, ChangeLog};

#[derive(Debug, Error, PartialEq)]
pub enum TransferError {
    #[error("active cell {0:?} of the new mesh is not explained by the change log")]
    Inconsistent(CellId),
    #[error("old field sizes do not match the old discretization")]
    SizeMismatch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transferred {
    /// Full displacement vector on the new space; constrained DOFs regenerated.
    pub u: Vec<f64>,
    pub history: HistoryField,
    /// History values whose α was clamped to zero.
    pub clamped: usize,
}

enum Origin {
    Same(usize),
    /// Old active cell that was refined into this one (possibly over several levels).
    Refined(usize),
    /// Old active children that were merged into this cell.
    Coarsened(Vec<usize>),
}

fn origin(old: &Discretization, coarsened: &BTreeMap<CellId, [CellId; 4]>, refined: &std::collections::BTreeSet<CellId>, cell: CellId) -> Result<Origin, TransferError> {
    if let Some(c) = old.dofs.cell_position(&cell) {
        return Ok(Origin::Same(c));
    }
    if let Some(children) = coarsened.get(&cell) {
        let list: Vec<usize> = children.iter().filter_map(|k| old.dofs.cell_position(k)).collect();
        if list.is_empty() {
            return Err(TransferError::Inconsistent(cell));
        }
        return Ok(Origin::Coarsened(list));
    }
    let mut a = cell;
    while let Some(p) = a.parent() {
        if !refined.contains(&p) {
            break;
        }
        if let Some(c) = old.dofs.cell_position(&p) {
            return Ok(Origin::Refined(c));
        }
        a = p;
    }
    Err(TransferError::Inconsistent(cell))
}

/// Transfer `(u_old, history_old)` from `old` to `new` along `log`.
pub fn transfer_fields(
    old: &Discretization,
    new: &Discretization,
    log: &ChangeLog,
    u_old: &[f64],
    history_old: &HistoryField,
) -> Result<Transferred, TransferError> {
    if u_old.len() != old.dofs.n_dofs() || history_old.values.len() != old.history_layout.n_dofs() {
        return Err(TransferError::SizeMismatch);
    }
    let coarsened: BTreeMap<CellId, [CellId; 4]> = log
        .events
        .iter()
        .filter_map(|e| match e {
            AdaptEvent::Coarsened { parent, children } => Some((*parent, *children)),
            _ => None,
        })
        .collect();
    let refined = log.refined_parents();
    let origins: Vec<Origin> = new
        .dofs
        .cells
        .iter()
        .map(|c| origin(old, &coarsened, &refined, *c))
        .collect::<Result<_, _>>()?;

    // Displacement: copy surviving nodes, interpolate the rest from the origin cell.
    let mut full = vec![f64::NAN; new.dofs.n_dofs()];
    let old_nodes: HashMap<[u32; 2], usize> = old.dofs.nodes.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    for (c, org) in origins.iter().enumerate() {
        for &node in &new.dofs.cell_nodes[c] {
            if !full[2 * node].is_nan() {
                continue;
            }
            let key = new.dofs.nodes[node];
            let val = if let Some(&o) = old_nodes.get(&key) {
                [u_old[2 * o], u_old[2 * o + 1]]
            } else {
                let p = new.dofs.node_points[node];
                let src = match org {
                    Origin::Same(s) | Origin::Refined(s) => *s,
                    Origin::Coarsened(list) => *list
                        .iter()
                        .find(|k| old.dofs.cell_squares[**k].contains(p, 1e-12))
                        .unwrap_or(&list[0]),
                };
                old.dofs.evaluate(u_old, src, p).0
            };
            full[2 * node] = val[0];
            full[2 * node + 1] = val[1];
        }
    }
    let free = new.dofs.restrict(&full);
    let fixed: Vec<f64> = new.dofs.fixed.iter().map(|f| full[f.dof]).collect();
    let u = new.dofs.expand(&free, &fixed);

    // History.
    let mut values = Vec::with_capacity(new.history_layout.n_dofs());
    for (c, org) in origins.iter().enumerate() {
        let sq = new.dofs.cell_squares[c];
        match org {
            Origin::Same(o) => values.extend_from_slice(&history_old.values[4 * o..4 * o + 4]),
            Origin::Refined(o) => {
                for p in gauss_nodes(&sq) {
                    values.push(interpolate_raw(history_old, *o, p));
                }
            }
            Origin::Coarsened(children) => values.extend(project(history_old, children, &sq)),
        }
    }
    let mut history = HistoryField { layout: new.history_layout.clone(), values };
    history.apply_constraints();
    let clamped = history.clamp_alpha();
    if clamped > 0 {
        log::info!("transfer clamped {clamped} negative alpha values to zero");
    }
    Ok(Transferred { u, history, clamped })
}

fn interpolate_raw(h: &HistoryField, c: usize, p: [f64; 2]) -> PointHistory {
    let w = gauss_lagrange(&h.layout.squares[c], p);
    let mut a = [0.0; 5];
    for (q, wq) in w.iter().enumerate() {
        let v = h.values[4 * c + q].to_array();
        for i in 0..5 {
            a[i] += wq * v[i];
        }
    }
    PointHistory::from_slice(&a)
}

/// L² projection onto the Gauss-node Lagrange basis of `parent` of the
/// children's interpolants, integrated with each child's 2x2 Gauss rule
/// (exact for these bilinear products).
fn project(h: &HistoryField, children: &[usize], parent: &crate::mesh::Square) -> [PointHistory; 4] {
    let mut m = [[0.0; 4]; 4];
    let mut b = [[0.0; 5]; 4];
    for &k in children {
        let sq = h.layout.squares[k];
        let w = sq.area() / 4.0;
        for (q, p) in gauss_nodes(&sq).iter().enumerate() {
            let phi = gauss_lagrange(parent, *p);
            let v = h.values[4 * k + q].to_array();
            for i in 0..4 {
                for j in 0..4 {
                    m[i][j] += w * phi[i] * phi[j];
                }
                for s in 0..5 {
                    b[i][s] += w * phi[i] * v[s];
                }
            }
        }
    }
    let x = solve4(m, b);
    std::array::from_fn(|i| PointHistory::from_slice(&x[i]))
}

/// Gaussian elimination with partial pivoting on a 4x4 system with 5 right-hand sides.
fn solve4(mut m: [[f64; 4]; 4], mut b: [[f64; 5]; 4]) -> [[f64; 5]; 4] {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..4 {
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
            for s in 0..5 {
                b[row][s] -= f * b[col][s];
            }
        }
    }
    let mut x = [[0.0; 5]; 4];
    for row in (0..4).rev() {
        for s in 0..5 {
            let mut acc = b[row][s];
            for k in row + 1..4 {
                acc -= m[row][k] * x[k][s];
            }
            x[row][s] = acc / m[row][row];
        }
    }
    x
}
