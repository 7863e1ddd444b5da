//! Continuous Q1 displacement space on active cells with hanging-node and
//! aggregation constraints, plus strong Dirichlet DOFs on box faces.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use log::{debug, info};
use thiserror::Error;

use crate::aggregation::AggregateMap;
use crate::geometry::{CellClass, EmbeddedGeometry};
use crate::mesh::{CellId, Face, QuadtreeMesh, Square, MAX_DEPTH};

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("cyclic constraint chain through dof {0}")]
    CyclicConstraint(usize),
    #[error("cut cell {0:?} has no aggregate root")]
    MissingRoot(CellId),
    #[error("aggregate root {0:?} is not an active cell")]
    InactiveRoot(CellId),
}

/// Displacement components fixed strongly on a box face.
#[derive(Clone, Debug, PartialEq)]
pub struct StrongDirichlet {
    pub face: Face,
    pub components: [bool; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DofKind {
    Free(usize),
    Fixed(usize),
    Constrained(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    Hanging,
    IllPosed,
}

/// A constrained scalar DOF expressed through free and fixed DOFs.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintRow {
    pub dof: usize,
    pub kind: ConstraintKind,
    /// (free index, coefficient)
    pub free: Vec<(usize, f64)>,
    /// (fixed index, coefficient)
    pub fixed: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedDof {
    pub dof: usize,
    pub component: usize,
    /// Index into the strong Dirichlet list.
    pub bc: usize,
    pub point: [f64; 2],
}

/// Bilinear shape functions on a square (extrapolated outside it), corners
/// ordered (x0,y0), (x1,y0), (x0,y1), (x1,y1).
pub fn q1_shape(sq: &Square, p: [f64; 2]) -> [f64; 4] {
    let [xi, eta] = sq.to_reference(p);
    [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), (1.0 - xi) * eta, xi * eta]
}

/// Physical gradients of the bilinear shape functions.
pub fn q1_gradients(sq: &Square, p: [f64; 2]) -> [[f64; 2]; 4] {
    let [xi, eta] = sq.to_reference(p);
    let h = sq.size;
    [
        [-(1.0 - eta) / h, -(1.0 - xi) / h],
        [(1.0 - eta) / h, -xi / h],
        [-eta / h, (1.0 - xi) / h],
        [eta / h, xi / h],
    ]
}

#[derive(Clone, Debug)]
pub struct DofHandler {
    /// Node lattice coordinates, sorted.
    pub nodes: Vec<[u32; 2]>,
    pub node_points: Vec<[f64; 2]>,
    node_index: HashMap<[u32; 2], usize>,
    /// Kind of each scalar DOF `2 * node + component`.
    pub kinds: Vec<DofKind>,
    /// Scalar DOF of each free index.
    pub free_dofs: Vec<usize>,
    pub fixed: Vec<FixedDof>,
    pub rows: Vec<ConstraintRow>,
    /// Active cells in curve order.
    pub cells: Vec<CellId>,
    pub cell_squares: Vec<Square>,
    pub cell_classes: Vec<CellClass>,
    /// Position of each active cell within the mesh leaves.
    pub cell_leaf: Vec<usize>,
    cell_index: HashMap<CellId, usize>,
    pub cell_nodes: Vec<[usize; 4]>,
}

impl DofHandler {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_dofs(&self) -> usize {
        self.kinds.len()
    }

    pub fn n_free(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn n_fixed(&self) -> usize {
        self.fixed.len()
    }

    pub fn node_of(&self, v: [u32; 2]) -> Option<usize> {
        self.node_index.get(&v).copied()
    }

    pub fn cell_position(&self, cell: &CellId) -> Option<usize> {
        self.cell_index.get(cell).copied()
    }

    /// Scalar DOFs of an active cell, ordered (corner, component).
    pub fn cell_dofs(&self, c: usize) -> [usize; 8] {
        let n = self.cell_nodes[c];
        std::array::from_fn(|l| 2 * n[l / 2] + l % 2)
    }

    /// Full DOF vector from free and fixed values.
    pub fn expand(&self, free: &[f64], fixed: &[f64]) -> Vec<f64> {
        assert_eq!(free.len(), self.n_free());
        assert_eq!(fixed.len(), self.n_fixed());
        let mut full = vec![0.0; self.n_dofs()];
        for (d, kind) in self.kinds.iter().enumerate() {
            full[d] = match *kind {
                DofKind::Free(i) => free[i],
                DofKind::Fixed(k) => fixed[k],
                DofKind::Constrained(r) => {
                    let row = &self.rows[r];
                    row.free.iter().map(|(i, c)| c * free[*i]).sum::<f64>()
                        + row.fixed.iter().map(|(k, c)| c * fixed[*k]).sum::<f64>()
                }
            };
        }
        full
    }

    /// Free values read off a full vector.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        self.free_dofs.iter().map(|d| full[*d]).collect()
    }

    /// Nodal interpolation of a vector function: (free values, fixed values).
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> (Vec<f64>, Vec<f64>) {
        let free = self
            .free_dofs
            .iter()
            .map(|d| f(self.node_points[d / 2])[d % 2])
            .collect();
        let fixed = self.fixed.iter().map(|x| f(x.point)[x.component]).collect();
        (free, fixed)
    }

    /// Value and gradient `[[du_x/dx, du_x/dy], [du_y/dx, du_y/dy]]` of a full
    /// vector at `p`, using the basis of active cell `c`.
    pub fn evaluate(&self, full: &[f64], c: usize, p: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let sq = &self.cell_squares[c];
        let n = q1_shape(sq, p);
        let g = q1_gradients(sq, p);
        let mut val = [0.0; 2];
        let mut grad = [[0.0; 2]; 2];
        for (k, node) in self.cell_nodes[c].iter().enumerate() {
            for comp in 0..2 {
                let u = full[2 * node + comp];
                val[comp] += n[k] * u;
                grad[comp][0] += g[k][0] * u;
                grad[comp][1] += g[k][1] * u;
            }
        }
        (val, grad)
    }

    /// `(free index, coefficient)` pairs through which a scalar DOF's test
    /// function is distributed.
    pub fn free_map(&self, dof: usize) -> Vec<(usize, f64)> {
        match self.kinds[dof] {
            DofKind::Free(i) => vec![(i, 1.0)],
            DofKind::Fixed(_) => Vec::new(),
            DofKind::Constrained(r) => self.rows[r].free.clone(),
        }
    }

    /// Diagnostic dump of the constraint rows.
    pub fn constraints_csv(&self) -> String {
        let mut s = String::from("dof,x,y,component,kind,master_kind,master,coefficient\n");
        for row in &self.rows {
            let p = self.node_points[row.dof / 2];
            let kind = match row.kind {
                ConstraintKind::Hanging => "hanging",
                ConstraintKind::IllPosed => "ill_posed",
            };
            for (i, c) in &row.free {
                let _ = writeln!(s, "{},{},{},{},{kind},free,{},{}", row.dof, p[0], p[1], row.dof % 2, self.free_dofs[*i], c);
            }
            for (k, c) in &row.fixed {
                let _ = writeln!(s, "{},{},{},{},{kind},fixed,{},{}", row.dof, p[0], p[1], row.dof % 2, self.fixed[*k].dof, c);
            }
        }
        s
    }
}

fn on_box_face(v: [u32; 2], face: Face) -> bool {
    let top = 1u32 << MAX_DEPTH;
    match face {
        Face::Left => v[0] == 0,
        Face::Right => v[0] == top,
        Face::Bottom => v[1] == 0,
        Face::Top => v[1] == top,
    }
}

struct RawRow(ConstraintKind, Vec<(usize, f64)>);

/// Build the constrained Q1 space. Without `aggregates`, nodes supported only
/// by cut cells stay free (plain unfitted space).
pub fn build_continuous_space(
    mesh: &QuadtreeMesh,
    geom: &EmbeddedGeometry,
    aggregates: Option<&AggregateMap>,
    strong: &[StrongDirichlet],
) -> Result<DofHandler, SpaceError> {
    let mut cells = Vec::new();
    let mut cell_leaf = Vec::new();
    for (i, c) in mesh.leaves().iter().enumerate() {
        if geom.classes[i].is_active() {
            cells.push(*c);
            cell_leaf.push(i);
        }
    }
    let cell_index: HashMap<CellId, usize> = cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    let cell_squares: Vec<Square> = cells.iter().map(|c| mesh.square_of(c)).collect();
    let cell_classes: Vec<CellClass> = cell_leaf.iter().map(|i| geom.classes[*i]).collect();

    let mut node_set: BTreeMap<[u32; 2], ()> = BTreeMap::new();
    for c in &cells {
        for v in c.lattice_corners() {
            node_set.insert(v, ());
        }
    }
    let nodes: Vec<[u32; 2]> = node_set.into_keys().collect();
    let node_index: HashMap<[u32; 2], usize> = nodes.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let node_points: Vec<[f64; 2]> = nodes.iter().map(|v| mesh.lattice_to_point(*v)).collect();
    let cell_nodes: Vec<[usize; 4]> = cells
        .iter()
        .map(|c| c.lattice_corners().map(|v| node_index[&v]))
        .collect();
    let is_active = |c: &CellId| cell_index.contains_key(c);

    // Hanging vertices: midpoints of active coarse faces.
    let mut hanging: HashMap<[u32; 2], ([u32; 2], [u32; 2])> = HashMap::new();
    for h in mesh.collect_hanging_entities() {
        if !is_active(&h.coarse_cell) || !node_index.contains_key(&h.vertex) {
            continue;
        }
        let corners = h.coarse_cell.lattice_corners();
        let [a, b] = h.face.corners();
        hanging.insert(h.vertex, (corners[a], corners[b]));
    }

    let n_dofs = 2 * nodes.len();
    let mut raw: Vec<Option<RawRow>> = (0..n_dofs).map(|_| None).collect();
    let mut fixed_bc: Vec<Option<usize>> = vec![None; n_dofs];
    for (n, v) in nodes.iter().enumerate() {
        for (k, bc) in strong.iter().enumerate() {
            if on_box_face(*v, bc.face) {
                for comp in 0..2 {
                    if bc.components[comp] && fixed_bc[2 * n + comp].is_none() {
                        fixed_bc[2 * n + comp] = Some(k);
                    }
                }
            }
        }
        if let Some((a, b)) = hanging.get(v) {
            let (na, nb) = (node_index[a], node_index[b]);
            for comp in 0..2 {
                raw[2 * n + comp] = Some(RawRow(
                    ConstraintKind::Hanging,
                    vec![(2 * na + comp, 0.5), (2 * nb + comp, 0.5)],
                ));
            }
            continue;
        }
    }

    // Ill-posed nodes: owned by the lowest incident root whose extension does
    // not feed back into the node through hanging constraints.
    if let Some(agg) = aggregates {
        let mut left_free = 0usize;
        for (n, v) in nodes.iter().enumerate() {
            if hanging.contains_key(v) {
                continue;
            }
            let around: Vec<CellId> = mesh.leaves_around_vertex(*v).into_iter().filter(|c| is_active(c)).collect();
            if !around.iter().all(|c| cell_classes[cell_index[c]] == CellClass::Cut) {
                continue;
            }
            let mut candidates = Vec::with_capacity(around.len());
            for c in &around {
                candidates.push(agg.root(c).ok_or(SpaceError::MissingRoot(*c))?);
            }
            candidates.sort();
            candidates.dedup();
            let mut chosen = None;
            for root in candidates {
                let rc = *cell_index.get(&root).ok_or(SpaceError::InactiveRoot(root))?;
                let masters: Vec<usize> = (0..4).map(|k| 2 * cell_nodes[rc][k]).collect();
                if !reaches(&masters, 2 * n, &raw, &fixed_bc) {
                    chosen = Some(rc);
                    break;
                }
            }
            let Some(rc) = chosen else {
                debug!("node at {:?} is supported only by cut cells but every candidate root depends on it; left free", node_points[n]);
                left_free += 1;
                continue;
            };
            let shape = q1_shape(&cell_squares[rc], node_points[n]);
            for comp in 0..2 {
                let masters = (0..4).map(|k| (2 * cell_nodes[rc][k] + comp, shape[k])).collect();
                raw[2 * n + comp] = Some(RawRow(ConstraintKind::IllPosed, masters));
            }
        }
        if left_free > 0 {
            info!("{left_free} cut-only nodes left free because every candidate root depends on them");
        }
    }

    // Number free and fixed DOFs, then resolve constraint chains.
    let mut kinds = vec![DofKind::Free(0); n_dofs];
    let mut free_dofs = Vec::new();
    let mut fixed = Vec::new();
    let mut constrained = Vec::new();
    for d in 0..n_dofs {
        if let Some(bc) = fixed_bc[d] {
            kinds[d] = DofKind::Fixed(fixed.len());
            fixed.push(FixedDof { dof: d, component: d % 2, bc, point: node_points[d / 2] });
        } else if raw[d].is_some() {
            kinds[d] = DofKind::Constrained(constrained.len());
            constrained.push(d);
        } else {
            kinds[d] = DofKind::Free(free_dofs.len());
            free_dofs.push(d);
        }
    }

    let mut resolved: HashMap<usize, (BTreeMap<usize, f64>, BTreeMap<usize, f64>)> = HashMap::new();
    let mut rows = Vec::with_capacity(constrained.len());
    for &d in &constrained {
        let mut visiting = Vec::new();
        let (free, fix) = resolve(d, &kinds, &raw, &mut resolved, &mut visiting)?;
        let RawRow(kind, _) = raw[d].as_ref().unwrap();
        rows.push(ConstraintRow {
            dof: d,
            kind: *kind,
            free: free.into_iter().filter(|(_, c)| *c != 0.0).collect(),
            fixed: fix.into_iter().filter(|(_, c)| *c != 0.0).collect(),
        });
    }

    Ok(DofHandler {
        nodes,
        node_points,
        node_index,
        kinds,
        free_dofs,
        fixed,
        rows,
        cells,
        cell_squares,
        cell_classes,
        cell_leaf,
        cell_index,
        cell_nodes,
    })
}

/// Whether `target` is reachable from `start` through unresolved constraint rows.
fn reaches(start: &[usize], target: usize, raw: &[Option<RawRow>], fixed_bc: &[Option<usize>]) -> bool {
    let mut stack: Vec<usize> = start.to_vec();
    let mut seen = std::collections::HashSet::new();
    while let Some(d) = stack.pop() {
        if d == target {
            return true;
        }
        if fixed_bc[d].is_some() || !seen.insert(d) {
            continue;
        }
        if let Some(RawRow(_, masters)) = &raw[d] {
            stack.extend(masters.iter().map(|(m, _)| *m));
        }
    }
    false
}

type Combination = (BTreeMap<usize, f64>, BTreeMap<usize, f64>);

fn resolve(
    d: usize,
    kinds: &[DofKind],
    raw: &[Option<RawRow>],
    memo: &mut HashMap<usize, Combination>,
    visiting: &mut Vec<usize>,
) -> Result<Combination, SpaceError> {
    match kinds[d] {
        DofKind::Free(i) => return Ok((BTreeMap::from([(i, 1.0)]), BTreeMap::new())),
        DofKind::Fixed(k) => return Ok((BTreeMap::new(), BTreeMap::from([(k, 1.0)]))),
        DofKind::Constrained(_) => {}
    }
    if let Some(r) = memo.get(&d) {
        return Ok(r.clone());
    }
    if visiting.contains(&d) {
        return Err(SpaceError::CyclicConstraint(d));
    }
    visiting.push(d);
    let RawRow(_, masters) = raw[d].as_ref().unwrap();
    let mut free = BTreeMap::new();
    let mut fix = BTreeMap::new();
    for &(m, c) in masters {
        let (mf, mx) = resolve(m, kinds, raw, memo, visiting)?;
        for (i, v) in mf {
            *free.entry(i).or_insert(0.0) += c * v;
        }
        for (k, v) in mx {
            *fix.entry(k).or_insert(0.0) += c * v;
        }
    }
    visiting.pop();
    memo.insert(d, (free.clone(), fix.clone()));
    Ok((free, fix))
}
