//! Cell classification and marching-squares sub-triangulation of cut cells.

use log::warn;
use rayon::prelude::*;

use super::LevelSet;
use crate::mesh::{CellId, QuadtreeMesh, Square};
use crate::quadrature::{segment_rule, triangle_area, triangle_rule, Quadrature};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellClass {
    Interior,
    Cut,
    Exterior,
}

impl CellClass {
    pub fn is_active(self) -> bool {
        self != CellClass::Exterior
    }

    pub fn code(self) -> i32 {
        match self {
            CellClass::Interior => 0,
            CellClass::Cut => 1,
            CellClass::Exterior => 2,
        }
    }
}

/// Samples per cell edge used to detect sign changes between corners.
const EDGE_SAMPLES: usize = 8;
const BISECTION_ITERS: usize = 30;

/// Classify one cell from corner, edge and center samples of the level set.
/// Returns the class and whether the level set vanished at every sample.
pub fn classify_cell(sq: &Square, ls: &LevelSet) -> (CellClass, bool) {
    let c = sq.corners();
    let walk = [c[0], c[1], c[3], c[2]];
    let (mut neg, mut zero, mut pos) = (0usize, 0usize, 0usize);
    let mut count = |v: f64| {
        if v < 0.0 {
            neg += 1
        } else if v > 0.0 {
            pos += 1
        } else {
            zero += 1
        }
    };
    for k in 0..4 {
        let (a, b) = (walk[k], walk[(k + 1) % 4]);
        for s in 0..EDGE_SAMPLES {
            let t = s as f64 / EDGE_SAMPLES as f64;
            count(ls.evaluate([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]));
        }
    }
    count(ls.evaluate(sq.center()));
    if neg == 0 && pos == 0 {
        return (CellClass::Cut, true);
    }
    let class = if pos == 0 {
        CellClass::Interior
    } else if neg == 0 {
        // at most a zero-measure contact with the domain
        CellClass::Exterior
    } else {
        CellClass::Cut
    };
    (class, false)
}

/// Straight piece of the embedded boundary inside a cut cell.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySegment {
    pub a: [f64; 2],
    pub b: [f64; 2],
    /// Outward unit normal.
    pub normal: [f64; 2],
    pub tag: Option<String>,
}

impl BoundarySegment {
    pub fn length(&self) -> f64 {
        dist(self.a, self.b)
    }

    pub fn midpoint(&self) -> [f64; 2] {
        [0.5 * (self.a[0] + self.b[0]), 0.5 * (self.a[1] + self.b[1])]
    }

    pub fn quadrature(&self, n: usize) -> Quadrature {
        segment_rule(self.a, self.b, n)
    }
}

/// Sub-triangulation of `T ∩ Ω` for a cut cell.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CutCell {
    pub triangles: Vec<[[f64; 2]; 3]>,
    pub segments: Vec<BoundarySegment>,
}

impl CutCell {
    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| triangle_area(t).abs()).sum()
    }

    pub fn volume_quadrature(&self, degree: usize) -> Quadrature {
        let mut q = Quadrature::default();
        for t in &self.triangles {
            q.extend(triangle_rule(t, degree));
        }
        q
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Root of the level set on the segment from an inside point `a` to an outside
/// point `b`: bisection, then linear interpolation inside the final bracket.
pub fn edge_root(ls: &LevelSet, a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut f_lo = ls.evaluate(a);
    let mut f_hi = ls.evaluate(b);
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        let f = ls.evaluate(lerp(a, b, mid));
        if f <= 0.0 {
            lo = mid;
            f_lo = f;
        } else {
            hi = mid;
            f_hi = f;
        }
    }
    let t = if f_hi - f_lo > 0.0 {
        lo + (hi - lo) * (-f_lo) / (f_hi - f_lo)
    } else {
        lo
    };
    lerp(a, b, t.clamp(lo, hi))
}

/// Portion of the straight segment `a -> b` inside the domain, by endpoint
/// signs (consistent with the marching-squares reconstruction).
pub fn clip_segment(ls: &LevelSet, a: [f64; 2], b: [f64; 2]) -> Option<([f64; 2], [f64; 2])> {
    match (ls.is_inside(a), ls.is_inside(b)) {
        (true, true) => Some((a, b)),
        (true, false) => Some((a, edge_root(ls, a, b))),
        (false, true) => Some((edge_root(ls, b, a), b)),
        (false, false) => None,
    }
}

#[derive(Clone, Copy)]
struct PolyVertex {
    p: [f64; 2],
    on_boundary: bool,
}

/// Marching-squares reconstruction of `T ∩ Ω`. Interface roots are located on
/// cell edges whose corner signs differ; saddles are resolved by the center sign.
pub fn triangulate_cut_cell(sq: &Square, ls: &LevelSet) -> CutCell {
    let c = sq.corners();
    let walk = [c[0], c[1], c[3], c[2]];
    let inside: Vec<bool> = walk.iter().map(|p| ls.is_inside(*p)).collect();
    let mut poly: Vec<PolyVertex> = Vec::with_capacity(8);
    for k in 0..4 {
        let kn = (k + 1) % 4;
        if inside[k] {
            poly.push(PolyVertex { p: walk[k], on_boundary: false });
        }
        if inside[k] != inside[kn] {
            let r = if inside[k] {
                edge_root(ls, walk[k], walk[kn])
            } else {
                edge_root(ls, walk[kn], walk[k])
            };
            poly.push(PolyVertex { p: r, on_boundary: true });
        }
    }
    let saddle = inside[0] == inside[2] && inside[1] == inside[3] && inside[0] != inside[1];
    let polygons: Vec<Vec<PolyVertex>> = if saddle && !ls.is_inside(sq.center()) {
        // two separate corner regions: each inside corner with its two roots
        let n = poly.len();
        (0..n)
            .filter(|&i| !poly[i].on_boundary)
            .map(|i| vec![poly[(i + n - 1) % n], poly[i], poly[(i + 1) % n]])
            .map(|mut t| {
                t.rotate_left(1);
                t
            })
            .collect()
    } else {
        vec![poly]
    };

    let tol = 1e-12 * sq.size;
    let mut out = CutCell::default();
    for poly in polygons {
        let poly = dedup_polygon(poly, tol);
        let n = poly.len();
        if n < 2 {
            continue;
        }
        for i in 0..n {
            let (u, v) = (poly[i], poly[(i + 1) % n]);
            if n >= 3 && u.on_boundary && v.on_boundary && dist(u.p, v.p) > tol {
                let (dx, dy) = (v.p[0] - u.p[0], v.p[1] - u.p[1]);
                let len = (dx * dx + dy * dy).sqrt();
                let normal = [dy / len, -dx / len];
                let seg = BoundarySegment {
                    a: u.p,
                    b: v.p,
                    normal,
                    tag: ls.tag_at(lerp(u.p, v.p, 0.5)),
                };
                out.segments.push(seg);
            }
        }
        for i in 1..n.saturating_sub(1) {
            let t = [poly[0].p, poly[i].p, poly[i + 1].p];
            if triangle_area(&t) > tol * sq.size {
                out.triangles.push(t);
            }
        }
    }
    out
}

fn dedup_polygon(poly: Vec<PolyVertex>, tol: f64) -> Vec<PolyVertex> {
    let mut out: Vec<PolyVertex> = Vec::with_capacity(poly.len());
    for v in poly {
        match out.last_mut() {
            Some(last) if dist(last.p, v.p) <= tol => last.on_boundary |= v.on_boundary,
            _ => out.push(v),
        }
    }
    while out.len() > 1 && dist(out[0].p, out[out.len() - 1].p) <= tol {
        let last = out.pop().unwrap();
        out[0].on_boundary |= last.on_boundary;
    }
    out
}

/// Classification of every leaf plus sub-triangulations of the cut leaves,
/// both indexed by leaf position in the mesh.
#[derive(Clone, Debug)]
pub struct EmbeddedGeometry {
    pub classes: Vec<CellClass>,
    pub cuts: Vec<Option<CutCell>>,
}

impl EmbeddedGeometry {
    /// Classify all leaves and triangulate cut ones. Cut cells whose
    /// reconstruction has no area are reclassified exterior; cut cells whose
    /// reconstruction is the whole square without boundary are reclassified interior.
    pub fn build(mesh: &QuadtreeMesh, ls: &LevelSet) -> Self {
        let results: Vec<(CellClass, Option<CutCell>)> = mesh
            .leaves()
            .par_iter()
            .map(|cell| {
                let sq = mesh.square_of(cell);
                let (class, degenerate) = classify_cell(&sq, ls);
                if degenerate {
                    warn!("level set vanishes on every sample of cell {cell:?}; treating it as cut");
                }
                if class != CellClass::Cut {
                    return (class, None);
                }
                let cut = triangulate_cut_cell(&sq, ls);
                let area = cut.area();
                if cut.triangles.is_empty() {
                    (CellClass::Exterior, None)
                } else if cut.segments.is_empty() && (area - sq.area()).abs() <= 1e-12 * sq.area() {
                    (CellClass::Interior, None)
                } else {
                    (CellClass::Cut, Some(cut))
                }
            })
            .collect();
        let (classes, cuts) = results.into_iter().unzip();
        EmbeddedGeometry { classes, cuts }
    }

    pub fn class_of(&self, mesh: &QuadtreeMesh, cell: &CellId) -> Option<CellClass> {
        mesh.position(cell).map(|i| self.classes[i])
    }

    pub fn active_count(&self) -> usize {
        self.classes.iter().filter(|c| c.is_active()).count()
    }

    /// Area of the reconstructed domain.
    pub fn domain_area(&self, mesh: &QuadtreeMesh) -> f64 {
        mesh.leaves()
            .iter()
            .enumerate()
            .map(|(i, c)| match self.classes[i] {
                CellClass::Interior => mesh.square_of(c).area(),
                CellClass::Cut => self.cuts[i].as_ref().map_or(0.0, CutCell::area),
                CellClass::Exterior => 0.0,
            })
            .sum()
    }
}

/// Per-leaf classification only.
pub fn classify_cells(mesh: &QuadtreeMesh, ls: &LevelSet) -> Vec<CellClass> {
    EmbeddedGeometry::build(mesh, ls).classes
}
