//! Single-root adaptive quadtree over the square box `[0, L]^2`.
//!
//! Leaves are kept sorted along the Morton (Z-order) space-filling curve. All
//! vertex bookkeeping is done on an integer lattice of resolution
//! `2^MAX_DEPTH`, so coincident vertices of different cells compare exactly.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Deepest level representable on the vertex lattice.
pub const MAX_DEPTH: u8 = 24;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("cell {0:?} is not a leaf of the mesh")]
    UnknownCell(CellId),
    #[error("refining {cell:?} would exceed max_level {max_level}")]
    RefineBeyondMaxLevel { cell: CellId, max_level: u8 },
    #[error("max_level {0} exceeds the supported depth {MAX_DEPTH}")]
    DepthTooLarge(u8),
    #[error("requested level {level} exceeds max_level {max_level}")]
    LevelTooLarge { level: u8, max_level: u8 },
    #[error("box size must be positive and finite, got {0}")]
    InvalidSize(f64),
}

/// A cell of the quadtree, identified by its refinement level and Morton key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct CellId {
    pub level: u8,
    pub morton: u64,
}

fn spread_bits(v: u32) -> u64 {
    let mut x = v as u64 & 0xffff_ffff;
    x = (x | (x << 16)) & 0x0000_ffff_0000_ffff;
    x = (x | (x << 8)) & 0x00ff_00ff_00ff_00ff;
    x = (x | (x << 4)) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | (x << 2)) & 0x3333_3333_3333_3333;
    x = (x | (x << 1)) & 0x5555_5555_5555_5555;
    x
}

fn compact_bits(v: u64) -> u32 {
    let mut x = v & 0x5555_5555_5555_5555;
    x = (x | (x >> 1)) & 0x3333_3333_3333_3333;
    x = (x | (x >> 2)) & 0x0f0f_0f0f_0f0f_0f0f;
    x = (x | (x >> 4)) & 0x00ff_00ff_00ff_00ff;
    x = (x | (x >> 8)) & 0x0000_ffff_0000_ffff;
    x = (x | (x >> 16)) & 0x0000_0000_ffff_ffff;
    x as u32
}

impl CellId {
    pub const ROOT: CellId = CellId { level: 0, morton: 0 };

    /// Cell at `level` whose integer coordinates (in units of the cell size) are `(x, y)`.
    pub fn from_coords(level: u8, x: u32, y: u32) -> Self {
        CellId {
            level,
            morton: spread_bits(x) | (spread_bits(y) << 1),
        }
    }

    /// Integer coordinates of the cell in units of its own size.
    pub fn coords(&self) -> (u32, u32) {
        (compact_bits(self.morton), compact_bits(self.morton >> 1))
    }

    pub fn parent(&self) -> Option<CellId> {
        (self.level > 0).then(|| CellId {
            level: self.level - 1,
            morton: self.morton >> 2,
        })
    }

    /// Children in Morton order: bit 0 selects +x, bit 1 selects +y.
    pub fn children(&self) -> [CellId; 4] {
        let m = self.morton << 2;
        let level = self.level + 1;
        [0, 1, 2, 3].map(|k| CellId { level, morton: m | k })
    }

    pub fn ancestor_at(&self, level: u8) -> CellId {
        debug_assert!(level <= self.level);
        CellId {
            level,
            morton: self.morton >> (2 * (self.level - level) as u32),
        }
    }

    pub fn is_ancestor_of(&self, other: &CellId) -> bool {
        other.level > self.level && other.ancestor_at(self.level) == *self
    }

    /// Position along the space-filling curve, comparable across levels.
    pub fn sfc_key(&self) -> u64 {
        self.morton << (2 * (MAX_DEPTH - self.level) as u32)
    }

    /// Side length in lattice units.
    pub fn lattice_size(&self) -> u32 {
        1 << (MAX_DEPTH - self.level)
    }

    /// Lower-left corner in lattice units.
    pub fn lattice_anchor(&self) -> [u32; 2] {
        let (x, y) = self.coords();
        let s = self.lattice_size();
        [x * s, y * s]
    }

    /// Lattice coordinates of the corners, ordered (x0,y0), (x1,y0), (x0,y1), (x1,y1).
    pub fn lattice_corners(&self) -> [[u32; 2]; 4] {
        let [x, y] = self.lattice_anchor();
        let s = self.lattice_size();
        [[x, y], [x + s, y], [x, y + s], [x + s, y + s]]
    }
}

impl PartialOrd for CellId {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CellId {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.sfc_key(), self.level).cmp(&(other.sfc_key(), other.level))
    }
}

/// Cell faces, in the order left, right, bottom, top.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Face {
    Left,
    Right,
    Bottom,
    Top,
}

impl Face {
    pub const ALL: [Face; 4] = [Face::Left, Face::Right, Face::Bottom, Face::Top];

    pub fn offset(self) -> (i64, i64) {
        match self {
            Face::Left => (-1, 0),
            Face::Right => (1, 0),
            Face::Bottom => (0, -1),
            Face::Top => (0, 1),
        }
    }

    pub fn opposite(self) -> Face {
        match self {
            Face::Left => Face::Right,
            Face::Right => Face::Left,
            Face::Bottom => Face::Top,
            Face::Top => Face::Bottom,
        }
    }

    pub fn normal(self) -> [f64; 2] {
        let (dx, dy) = self.offset();
        [dx as f64, dy as f64]
    }

    /// Child indices (Morton order) adjacent to this face.
    pub fn children(self) -> [usize; 2] {
        match self {
            Face::Left => [0, 2],
            Face::Right => [1, 3],
            Face::Bottom => [0, 1],
            Face::Top => [2, 3],
        }
    }

    /// Corner indices spanning this face, ordered along increasing coordinate.
    pub fn corners(self) -> [usize; 2] {
        match self {
            Face::Left => [0, 2],
            Face::Right => [1, 3],
            Face::Bottom => [0, 1],
            Face::Top => [2, 3],
        }
    }
}

const NEIGHBOR_OFFSETS: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Physical axis-aligned square of a cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Square {
    pub anchor: [f64; 2],
    pub size: f64,
}

impl Square {
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let [x, y] = self.anchor;
        let h = self.size;
        [[x, y], [x + h, y], [x, y + h], [x + h, y + h]]
    }

    pub fn center(&self) -> [f64; 2] {
        [
            self.anchor[0] + 0.5 * self.size,
            self.anchor[1] + 0.5 * self.size,
        ]
    }

    pub fn area(&self) -> f64 {
        self.size * self.size
    }

    /// Reference coordinates in `[0,1]^2` of a physical point.
    pub fn to_reference(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (p[0] - self.anchor[0]) / self.size,
            (p[1] - self.anchor[1]) / self.size,
        ]
    }

    pub fn from_reference(&self, xi: [f64; 2]) -> [f64; 2] {
        [
            self.anchor[0] + xi[0] * self.size,
            self.anchor[1] + xi[1] * self.size,
        ]
    }

    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        let xi = self.to_reference(p);
        xi.iter().all(|&v| v >= -tol && v <= 1.0 + tol)
    }
}

/// A coarse/fine interface: `coarse_cell`'s `face` is shared with two finer leaves,
/// and `vertex` (lattice units) is the hanging midpoint of that face.
#[derive(Clone, Debug, PartialEq)]
pub struct HangingEntity {
    pub coarse_cell: CellId,
    pub face: Face,
    pub vertex: [u32; 2],
    pub fine_cells: Vec<CellId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mark {
    Refine,
    Coarsen,
    Keep,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AdaptEvent {
    Refined { parent: CellId, children: [CellId; 4] },
    Coarsened { parent: CellId, children: [CellId; 4] },
    CoarsenDropped { cell: CellId, reason: &'static str },
}

/// Record of what an adaptation step did, used for field transfer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChangeLog {
    pub events: Vec<AdaptEvent>,
}

impl ChangeLog {
    pub fn refined_parents(&self) -> BTreeSet<CellId> {
        self.events
            .iter()
            .filter_map(|e| match e {
                AdaptEvent::Refined { parent, .. } => Some(*parent),
                _ => None,
            })
            .collect()
    }

    pub fn coarsened_parents(&self) -> BTreeSet<CellId> {
        self.events
            .iter()
            .filter_map(|e| match e {
                AdaptEvent::Coarsened { parent, .. } => Some(*parent),
                _ => None,
            })
            .collect()
    }

    pub fn dropped_coarsenings(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, AdaptEvent::CoarsenDropped { .. }))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        !self
            .events
            .iter()
            .any(|e| matches!(e, AdaptEvent::Refined { .. } | AdaptEvent::Coarsened { .. }))
    }
}

#[derive(Clone, Debug)]
pub struct QuadtreeMesh {
    size: f64,
    max_level: u8,
    leaves: Vec<CellId>,
    index: HashMap<CellId, usize>,
}

impl PartialEq for QuadtreeMesh {
    fn eq(&self, other: &Self) -> bool {
        self.size == other.size && self.max_level == other.max_level && self.leaves == other.leaves
    }
}

impl QuadtreeMesh {
    /// Uniform mesh of `4^level` leaves.
    pub fn uniform(size: f64, level: u8, max_level: u8) -> Result<Self, MeshError> {
        if !(size > 0.0 && size.is_finite()) {
            return Err(MeshError::InvalidSize(size));
        }
        if max_level > MAX_DEPTH {
            return Err(MeshError::DepthTooLarge(max_level));
        }
        if level > max_level {
            return Err(MeshError::LevelTooLarge { level, max_level });
        }
        let n = 1u64 << (2 * level as u32);
        let leaves = (0..n).map(|morton| CellId { level, morton }).collect();
        Ok(Self::from_sorted(size, max_level, leaves))
    }

    fn from_sorted(size: f64, max_level: u8, leaves: Vec<CellId>) -> Self {
        let index = leaves.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        QuadtreeMesh {
            size,
            max_level,
            leaves,
            index,
        }
    }

    fn from_set(size: f64, max_level: u8, set: &HashSet<CellId>) -> Self {
        let mut leaves: Vec<CellId> = set.iter().copied().collect();
        leaves.sort();
        Self::from_sorted(size, max_level, leaves)
    }

    pub fn size(&self) -> f64 {
        self.size
    }

    pub fn max_level(&self) -> u8 {
        self.max_level
    }

    /// Leaves in space-filling-curve order.
    pub fn leaves(&self) -> &[CellId] {
        &self.leaves
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn position(&self, cell: &CellId) -> Option<usize> {
        self.index.get(cell).copied()
    }

    pub fn is_leaf(&self, cell: &CellId) -> bool {
        self.index.contains_key(cell)
    }

    /// Physical length of one lattice unit.
    pub fn lattice_unit(&self) -> f64 {
        self.size / (1u64 << MAX_DEPTH) as f64
    }

    pub fn lattice_to_point(&self, v: [u32; 2]) -> [f64; 2] {
        let u = self.lattice_unit();
        [v[0] as f64 * u, v[1] as f64 * u]
    }

    pub fn cell_geometry(&self, cell: &CellId) -> Result<Square, MeshError> {
        if !self.is_leaf(cell) {
            return Err(MeshError::UnknownCell(*cell));
        }
        Ok(self.square_of(cell))
    }

    /// Geometry of any cell (leaf or not).
    pub fn square_of(&self, cell: &CellId) -> Square {
        let (x, y) = cell.coords();
        let h = self.size / (1u64 << cell.level) as f64;
        Square {
            anchor: [x as f64 * h, y as f64 * h],
            size: h,
        }
    }

    /// The leaf equal to or containing the cell at `(level, x, y)`, if any.
    /// Returns `None` when that region is refined below `level` or lies outside the box.
    pub fn leaf_covering(&self, level: u8, x: i64, y: i64) -> Option<CellId> {
        covering_leaf(&|c| self.is_leaf(c), level, x, y)
    }

    /// The leaf containing the lattice unit cell whose lower-left corner is `v`.
    pub fn leaf_at_lattice(&self, v: [i64; 2]) -> Option<CellId> {
        self.leaf_covering(MAX_DEPTH, v[0], v[1])
    }

    /// Leaves (at most four) whose closure contains the lattice point `v`.
    pub fn leaves_around_vertex(&self, v: [u32; 2]) -> Vec<CellId> {
        let mut out = Vec::with_capacity(4);
        for (dx, dy) in [(-1, -1), (0, -1), (-1, 0), (0, 0)] {
            if let Some(c) = self.leaf_at_lattice([v[0] as i64 + dx, v[1] as i64 + dy]) {
                if !out.contains(&c) {
                    out.push(c);
                }
            }
        }
        out.sort();
        out
    }

    /// Leaves sharing (part of) `face` of the leaf `cell`, sorted along the curve.
    pub fn face_neighbors(&self, cell: &CellId, face: Face) -> Vec<CellId> {
        let (x, y) = cell.coords();
        let (dx, dy) = face.offset();
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        let n = 1i64 << cell.level;
        if nx < 0 || ny < 0 || nx >= n || ny >= n {
            return Vec::new();
        }
        if let Some(l) = self.leaf_covering(cell.level, nx, ny) {
            return vec![l];
        }
        let mut out = Vec::new();
        let mut stack = vec![CellId::from_coords(cell.level, nx as u32, ny as u32)];
        let touching = face.opposite().children();
        while let Some(c) = stack.pop() {
            let kids = c.children();
            for k in touching {
                if self.is_leaf(&kids[k]) {
                    out.push(kids[k]);
                } else if kids[k].level < MAX_DEPTH {
                    stack.push(kids[k]);
                }
            }
        }
        out.sort();
        out
    }

    /// Exhaustive check of full (edge and corner) 2:1 balance.
    pub fn is_balanced(&self) -> bool {
        self.leaves.iter().all(|c| {
            let (x, y) = c.coords();
            NEIGHBOR_OFFSETS.iter().all(|(dx, dy)| {
                match self.leaf_covering(c.level, x as i64 + dx, y as i64 + dy) {
                    Some(l) => l.level + 1 >= c.level,
                    None => true,
                }
            })
        })
    }

    /// Total leaf area; equals `L^2` for a valid tiling.
    pub fn total_area(&self) -> f64 {
        self.leaves.iter().map(|c| self.square_of(c).area()).sum()
    }

    /// Apply refinement/coarsening marks, re-balance, and report what changed.
    ///
    /// Coarsening is honored only for complete sibling quadruples that stay
    /// balanced; other coarsen marks are dropped and logged.
    pub fn refine_and_coarsen(
        &self,
        marks: &BTreeMap<CellId, Mark>,
    ) -> Result<(QuadtreeMesh, ChangeLog), MeshError> {
        let mut log = ChangeLog::default();
        for (cell, mark) in marks {
            if !self.is_leaf(cell) {
                return Err(MeshError::UnknownCell(*cell));
            }
            if *mark == Mark::Refine && cell.level >= self.max_level {
                return Err(MeshError::RefineBeyondMaxLevel {
                    cell: *cell,
                    max_level: self.max_level,
                });
            }
        }

        // Complete sibling quadruples marked for coarsening.
        let mut groups: BTreeMap<CellId, Vec<CellId>> = BTreeMap::new();
        for (cell, mark) in marks {
            if *mark == Mark::Coarsen {
                match cell.parent() {
                    Some(p) => groups.entry(p).or_default().push(*cell),
                    None => log.events.push(AdaptEvent::CoarsenDropped {
                        cell: *cell,
                        reason: "root cell has no parent",
                    }),
                }
            }
        }
        let mut candidates = Vec::new();
        for (parent, members) in groups {
            if members.len() == 4 {
                candidates.push(parent);
            } else {
                for cell in members {
                    log.events.push(AdaptEvent::CoarsenDropped {
                        cell,
                        reason: "incomplete sibling set",
                    });
                }
            }
        }

        let mut set: HashSet<CellId> = self.leaves.iter().copied().collect();
        for (cell, mark) in marks {
            if *mark == Mark::Refine {
                refine_in_set(&mut set, *cell, &mut log);
            }
        }
        balance_set(&mut set, &mut log);

        // Tentatively coarsen, then revert any coarsening that breaks balance.
        let mut applied: BTreeSet<CellId> = BTreeSet::new();
        for parent in candidates {
            let kids = parent.children();
            if kids.iter().all(|k| set.contains(k)) {
                for k in kids {
                    set.remove(&k);
                }
                set.insert(parent);
                applied.insert(parent);
            } else {
                for cell in kids {
                    log.events.push(AdaptEvent::CoarsenDropped {
                        cell,
                        reason: "sibling refined by balancing",
                    });
                }
            }
        }
        loop {
            let violators: Vec<CellId> = applied
                .iter()
                .copied()
                .filter(|p| !coarse_cell_balanced(&set, p))
                .collect();
            if violators.is_empty() {
                break;
            }
            for p in violators {
                applied.remove(&p);
                set.remove(&p);
                for k in p.children() {
                    set.insert(k);
                    log.events.push(AdaptEvent::CoarsenDropped {
                        cell: k,
                        reason: "coarsening would break 2:1 balance",
                    });
                }
            }
        }
        for parent in applied {
            log.events.push(AdaptEvent::Coarsened {
                parent,
                children: parent.children(),
            });
        }

        let mesh = QuadtreeMesh::from_set(self.size, self.max_level, &set);
        debug_assert!(mesh.is_balanced());
        Ok((mesh, log))
    }

    /// Every coarse/fine face interface, listed once from the coarse side.
    pub fn collect_hanging_entities(&self) -> Vec<HangingEntity> {
        let mut out = Vec::new();
        for cell in &self.leaves {
            for face in Face::ALL {
                let nbrs = self.face_neighbors(cell, face);
                if nbrs.len() > 1 {
                    let corners = cell.lattice_corners();
                    let [a, b] = face.corners();
                    let vertex = [
                        (corners[a][0] + corners[b][0]) / 2,
                        (corners[a][1] + corners[b][1]) / 2,
                    ];
                    out.push(HangingEntity {
                        coarse_cell: *cell,
                        face,
                        vertex,
                        fine_cells: nbrs,
                    });
                }
            }
        }
        out
    }

    /// Debug dump: one row per leaf.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("morton,level,anchor_x,anchor_y,size\n");
        for c in &self.leaves {
            let sq = self.square_of(c);
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                c.morton, c.level, sq.anchor[0], sq.anchor[1], sq.size
            );
        }
        s
    }
}

fn covering_leaf(is_leaf: &dyn Fn(&CellId) -> bool, level: u8, x: i64, y: i64) -> Option<CellId> {
    let n = 1i64 << level;
    if x < 0 || y < 0 || x >= n || y >= n {
        return None;
    }
    let c = CellId::from_coords(level, x as u32, y as u32);
    (0..=level).rev().map(|l| c.ancestor_at(l)).find(|a| is_leaf(a))
}

fn refine_in_set(set: &mut HashSet<CellId>, cell: CellId, log: &mut ChangeLog) {
    if set.remove(&cell) {
        let children = cell.children();
        set.extend(children);
        log.events.push(AdaptEvent::Refined {
            parent: cell,
            children,
        });
    }
}

/// Ripple refinement until every pair of edge- or corner-adjacent leaves
/// differs by at most one level.
fn balance_set(set: &mut HashSet<CellId>, log: &mut ChangeLog) {
    loop {
        let mut to_refine = BTreeSet::new();
        for c in set.iter() {
            if c.level < 2 {
                continue;
            }
            let (x, y) = c.coords();
            for (dx, dy) in NEIGHBOR_OFFSETS {
                if let Some(l) =
                    covering_leaf(&|q| set.contains(q), c.level, x as i64 + dx, y as i64 + dy)
                {
                    if l.level + 1 < c.level {
                        to_refine.insert(l);
                    }
                }
            }
        }
        if to_refine.is_empty() {
            return;
        }
        for c in to_refine {
            refine_in_set(set, c, log);
        }
    }
}

/// True when no leaf adjacent to the leaf `p` is more than one level finer.
fn coarse_cell_balanced(set: &HashSet<CellId>, p: &CellId) -> bool {
    let (x, y) = p.coords();
    let n = 1i64 << p.level;
    for (dx, dy) in NEIGHBOR_OFFSETS {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        if nx < 0 || ny < 0 || nx >= n || ny >= n {
            continue;
        }
        if covering_leaf(&|q| set.contains(q), p.level, nx, ny).is_some() {
            continue;
        }
        // Neighbor region refined: its children touching p must be leaves.
        let nb = CellId::from_coords(p.level, nx as u32, ny as u32);
        let kids = nb.children();
        let touching: Vec<usize> = (0..4)
            .filter(|&k| {
                let kx = (k & 1) as i64;
                let ky = (k >> 1) as i64;
                (dx == 0 || (dx == 1 && kx == 0) || (dx == -1 && kx == 1))
                    && (dy == 0 || (dy == 1 && ky == 0) || (dy == -1 && ky == 1))
            })
            .collect();
        if touching.iter().any(|&k| !set.contains(&kids[k])) {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn refine_marks(cells: &[CellId]) -> BTreeMap<CellId, Mark> {
        cells.iter().map(|c| (*c, Mark::Refine)).collect()
    }

    /// Independent 2:1 closure: brute force over the dense grid of the finest
    /// level, repeatedly splitting any cell with a too-fine neighbor.
    fn brute_force_balance_count(refined_path: &[CellId], finest: u8) -> usize {
        // level of the leaf covering each finest-level grid cell
        let n = 1usize << finest;
        let mut lvl = vec![vec![0u8; n]; n];
        let mut set: BTreeSet<CellId> = [CellId::ROOT].into_iter().collect();
        for c in refined_path {
            if set.remove(c) {
                for k in c.children() {
                    set.insert(k);
                }
            }
        }
        loop {
            for c in &set {
                let (x, y) = c.coords();
                let s = 1usize << (finest - c.level);
                for i in 0..s {
                    for j in 0..s {
                        lvl[x as usize * s + i][y as usize * s + j] = c.level;
                    }
                }
            }
            let mut split = None;
            'outer: for c in &set {
                let (x, y) = c.coords();
                let s = 1usize << (finest - c.level);
                let (x0, y0) = (x as i64 * s as i64, y as i64 * s as i64);
                for i in -1..=s as i64 {
                    for j in -1..=s as i64 {
                        let inside = (0..s as i64).contains(&i) && (0..s as i64).contains(&j);
                        let (gx, gy) = (x0 + i, y0 + j);
                        if inside || gx < 0 || gy < 0 || gx >= n as i64 || gy >= n as i64 {
                            continue;
                        }
                        if lvl[gx as usize][gy as usize] > c.level + 1 {
                            split = Some(*c);
                            break 'outer;
                        }
                    }
                }
            }
            match split {
                Some(c) => {
                    set.remove(&c);
                    for k in c.children() {
                        set.insert(k);
                    }
                }
                None => return set.len(),
            }
        }
    }

    #[test]
    fn morton_roundtrip_matches_bit_interleave() {
        for level in 0..6u8 {
            let n = 1u32 << level;
            for x in 0..n {
                for y in 0..n {
                    let c = CellId::from_coords(level, x, y);
                    assert_eq!(c.coords(), (x, y));
                    let mut key = 0u64;
                    for b in 0..level as u32 {
                        key |= (((x >> b) & 1) as u64) << (2 * b);
                        key |= (((y >> b) & 1) as u64) << (2 * b + 1);
                    }
                    assert_eq!(c.morton, key);
                }
            }
        }
    }

    #[test]
    fn cell_geometry_examples() {
        let m = QuadtreeMesh::uniform(1.0, 0, 5).unwrap();
        let sq = m.cell_geometry(&CellId::ROOT).unwrap();
        assert_eq!(sq.anchor, [0.0, 0.0]);
        assert_eq!(sq.size, 1.0);

        let m = QuadtreeMesh::uniform(2.0, 2, 5).unwrap();
        let sq = m.cell_geometry(&CellId { level: 2, morton: 0 }).unwrap();
        assert_eq!(sq.anchor, [0.0, 0.0]);
        assert_eq!(sq.size, 0.5);

        let m = QuadtreeMesh::uniform(1.0, 3, 5).unwrap();
        for &morton in &[5u64, 27, 42, 63] {
            let c = CellId { level: 3, morton };
            // reference decoder: pull alternating bits
            let (mut x, mut y) = (0u32, 0u32);
            for b in 0..3 {
                x |= ((morton >> (2 * b)) as u32 & 1) << b;
                y |= ((morton >> (2 * b + 1)) as u32 & 1) << b;
            }
            let sq = m.cell_geometry(&c).unwrap();
            assert_eq!(sq.anchor, [x as f64 / 8.0, y as f64 / 8.0]);
            assert_eq!(sq.size, 0.125);
        }
        assert_eq!(
            m.cell_geometry(&CellId { level: 1, morton: 0 }),
            Err(MeshError::UnknownCell(CellId { level: 1, morton: 0 }))
        );
    }

    #[test]
    fn refine_one_corner_of_uniform_4x4() {
        let m = QuadtreeMesh::uniform(1.0, 2, 6).unwrap();
        let (m2, log) = m
            .refine_and_coarsen(&refine_marks(&[CellId { level: 2, morton: 0 }]))
            .unwrap();
        assert_eq!(m2.len(), 19);
        assert!(m2.is_balanced());
        assert_eq!(log.refined_parents().len(), 1);
        let hanging = m2.collect_hanging_entities();
        assert_eq!(hanging.len(), 2);
        assert!(hanging.iter().all(|h| h.fine_cells.len() == 2));
    }

    #[test]
    fn coarsen_full_uniform_2x2_to_root() {
        let m = QuadtreeMesh::uniform(1.0, 1, 4).unwrap();
        let marks = m.leaves().iter().map(|c| (*c, Mark::Coarsen)).collect();
        let (m2, log) = m.refine_and_coarsen(&marks).unwrap();
        assert_eq!(m2.leaves(), &[CellId::ROOT]);
        assert_eq!(log.coarsened_parents().len(), 1);
    }

    #[test]
    fn partial_sibling_coarsen_is_dropped() {
        let m = QuadtreeMesh::uniform(1.0, 1, 4).unwrap();
        let marks = m.leaves()[..3].iter().map(|c| (*c, Mark::Coarsen)).collect();
        let (m2, log) = m.refine_and_coarsen(&marks).unwrap();
        assert_eq!(m2, m);
        assert_eq!(log.dropped_coarsenings(), 3);
    }

    #[test]
    fn refine_beyond_max_level_rejected() {
        let m = QuadtreeMesh::uniform(1.0, 2, 2).unwrap();
        let err = m
            .refine_and_coarsen(&refine_marks(&[m.leaves()[0]]))
            .unwrap_err();
        assert!(matches!(err, MeshError::RefineBeyondMaxLevel { .. }));
    }

    #[test]
    fn recursive_corner_refinement_matches_brute_force_closure() {
        let mut m = QuadtreeMesh::uniform(1.0, 0, 8).unwrap();
        let mut path = Vec::new();
        // root, then repeatedly the child touching the box center
        let mut cell = CellId::ROOT;
        for step in 0..4 {
            path.push(cell);
            m = m.refine_and_coarsen(&refine_marks(&[cell])).unwrap().0;
            assert!(m.is_balanced());
            cell = cell.children()[if step == 0 { 0 } else { 3 }];
        }
        assert_eq!(m.len(), brute_force_balance_count(&path, 5));
        // balancing forces refinement beyond the plain path
        assert!(m.len() > 1 + 3 * path.len());
    }

    #[test]
    fn hanging_entities_match_pairwise_adjacency_scan() {
        let mut m = QuadtreeMesh::uniform(1.0, 2, 7).unwrap();
        let mut seed = 7u64;
        for _ in 0..6 {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let pick = m.leaves()[(seed >> 33) as usize % m.len()];
            if pick.level < m.max_level() {
                m = m.refine_and_coarsen(&refine_marks(&[pick])).unwrap().0;
            }
        }
        // O(n^2) scan: coarse face fully overlapping two finer leaves' faces
        let mut expected = BTreeSet::new();
        for a in m.leaves() {
            let sa = m.square_of(a);
            for face in Face::ALL {
                let mut count = 0;
                for b in m.leaves() {
                    if b.level != a.level + 1 {
                        continue;
                    }
                    let sb = m.square_of(b);
                    let touches = match face {
                        Face::Left => (sb.anchor[0] + sb.size - sa.anchor[0]).abs() < 1e-12,
                        Face::Right => (sa.anchor[0] + sa.size - sb.anchor[0]).abs() < 1e-12,
                        Face::Bottom => (sb.anchor[1] + sb.size - sa.anchor[1]).abs() < 1e-12,
                        Face::Top => (sa.anchor[1] + sa.size - sb.anchor[1]).abs() < 1e-12,
                    };
                    let axis = if matches!(face, Face::Left | Face::Right) { 1 } else { 0 };
                    let within = sb.anchor[axis] >= sa.anchor[axis] - 1e-12
                        && sb.anchor[axis] + sb.size <= sa.anchor[axis] + sa.size + 1e-12;
                    if touches && within {
                        count += 1;
                    }
                }
                if count == 2 {
                    expected.insert((*a, face));
                }
            }
        }
        let got: BTreeSet<(CellId, Face)> = m
            .collect_hanging_entities()
            .iter()
            .map(|h| (h.coarse_cell, h.face))
            .collect();
        assert_eq!(got, expected);
        assert_eq!(got.len(), m.collect_hanging_entities().len());
    }

    #[test]
    fn uniform_mesh_has_no_hanging_entities() {
        let m = QuadtreeMesh::uniform(1.0, 3, 5).unwrap();
        assert!(m.collect_hanging_entities().is_empty());
    }

    #[test]
    fn csv_dump_has_one_row_per_leaf() {
        let m = QuadtreeMesh::uniform(1.0, 1, 3).unwrap();
        let csv = m.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("morton,level,anchor_x,anchor_y,size"));
    }
}
