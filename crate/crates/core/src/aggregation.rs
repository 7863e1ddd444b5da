//! Cell aggregation: every cut cell is attached to one interior root cell by
//! breadth-first frontier sweeps over face neighbors.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::geometry::CellClass;
use crate::mesh::{CellId, Face, QuadtreeMesh};

#[derive(Debug, Error, PartialEq)]
pub enum AggregationError {
    #[error("cut cells present but no interior cell to serve as aggregate root")]
    NoInteriorCells,
    #[error("cut cells without a face path to an interior cell: {0:?}")]
    IsolatedCutCells(Vec<CellId>),
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AggregateMap {
    /// Root of every active cell (interior cells map to themselves).
    pub root_of: BTreeMap<CellId, CellId>,
    /// Aggregate members (root included) keyed by root.
    pub members_of: BTreeMap<CellId, Vec<CellId>>,
    /// Sweep in which each active cell was assigned (0 for interior cells).
    pub pass_of: BTreeMap<CellId, usize>,
}

impl AggregateMap {
    pub fn root(&self, cell: &CellId) -> Option<CellId> {
        self.root_of.get(cell).copied()
    }

    pub fn max_size(&self) -> usize {
        self.members_of.values().map(Vec::len).max().unwrap_or(0)
    }

    pub fn sweeps(&self) -> usize {
        self.pass_of.values().copied().max().unwrap_or(0)
    }
}

/// Build aggregates. `classes` is indexed by leaf position.
pub fn build_aggregates(mesh: &QuadtreeMesh, classes: &[CellClass]) -> Result<AggregateMap, AggregationError> {
    let leaves = mesh.leaves();
    let mut map = AggregateMap::default();
    let mut frontier: Vec<CellId> = Vec::new();
    let mut unassigned: BTreeMap<CellId, ()> = BTreeMap::new();
    for (cell, class) in leaves.iter().zip(classes) {
        match class {
            CellClass::Interior => {
                map.root_of.insert(*cell, *cell);
                map.pass_of.insert(*cell, 0);
                frontier.push(*cell);
            }
            CellClass::Cut => {
                unassigned.insert(*cell, ());
            }
            CellClass::Exterior => {}
        }
    }
    if frontier.is_empty() && !unassigned.is_empty() {
        return Err(AggregationError::NoInteriorCells);
    }

    let mut pass = 0;
    while !unassigned.is_empty() {
        pass += 1;
        let in_frontier: HashMap<CellId, ()> = frontier.iter().map(|c| (*c, ())).collect();
        let mut assigned: Vec<(CellId, CellId)> = Vec::new();
        for cell in unassigned.keys() {
            let best = Face::ALL
                .iter()
                .flat_map(|f| mesh.face_neighbors(cell, *f))
                .filter(|n| in_frontier.contains_key(n))
                .min();
            if let Some(n) = best {
                assigned.push((*cell, map.root_of[&n]));
            }
        }
        if assigned.is_empty() {
            return Err(AggregationError::IsolatedCutCells(unassigned.keys().copied().collect()));
        }
        frontier.clear();
        for (cell, root) in assigned {
            unassigned.remove(&cell);
            map.root_of.insert(cell, root);
            map.pass_of.insert(cell, pass);
            frontier.push(cell);
        }
    }
    for (cell, root) in &map.root_of {
        map.members_of.entry(*root).or_default().push(*cell);
    }
    Ok(map)
}
