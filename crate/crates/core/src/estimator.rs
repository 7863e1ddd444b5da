//! Residual-jump error indicators, the global estimate gating adaptation, and
//! fixed-fraction marking.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::{stress_at, AssemblyError};
use crate::discretization::Discretization;
use crate::geometry::{clip_segment, CellClass};
use crate::history::HistoryField;
use crate::mesh::{CellId, Face, Mark};
use crate::problem::Problem;
use crate::quadrature::segment_rule;

/// Gauss points per face segment.
const FACE_POINTS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("energy A(u, u) = {0:e} is not positive; the global estimate is undefined")]
    NonPositiveEnergy(f64),
}

/// `η_T² = Σ_F (h_T / 2) ∫_{F∩Ω} |[σ n]|²` over the interior faces of each
/// active cell. Returns `η_T` per active cell (in DOF-handler order).
pub fn kelly_indicators(
    disc: &Discretization,
    problem: &Problem,
    u: &[f64],
    history: &HistoryField,
) -> Result<Vec<f64>, EstimatorError> {
    let dofs = &disc.dofs;
    let mesh = &disc.mesh;
    let contributions: Vec<Vec<(usize, f64)>> = (0..dofs.cells.len())
        .into_par_iter()
        .map(|c| -> Result<Vec<(usize, f64)>, EstimatorError> {
            let cell = dofs.cells[c];
            let sq = dofs.cell_squares[c];
            let mut out = Vec::new();
            for face in Face::ALL {
                let nbrs = mesh.face_neighbors(&cell, face);
                // Box boundary, or hanging face integrated from the fine side.
                let [nbr] = nbrs[..] else { continue };
                if nbr.level == cell.level && !matches!(face, Face::Right | Face::Top) {
                    continue;
                }
                let Some(n) = dofs.cell_position(&nbr) else { continue };
                let corners = sq.corners();
                let [a, b] = face.corners();
                let cut = dofs.cell_classes[c] == CellClass::Cut || dofs.cell_classes[n] == CellClass::Cut;
                let piece = if cut {
                    clip_segment(&problem.level_set, corners[a], corners[b])
                } else {
                    Some((corners[a], corners[b]))
                };
                let Some((pa, pb)) = piece else { continue };
                let normal = face.normal();
                let quad = segment_rule(pa, pb, FACE_POINTS);
                let mut integral = 0.0;
                for (p, w) in quad.points.iter().zip(&quad.weights) {
                    let s_in = stress_at(disc, problem, u, history, c, *p)?.stress;
                    let s_out = stress_at(disc, problem, u, history, n, *p)?.stress;
                    let d: [f64; 4] = std::array::from_fn(|i| s_in[i] - s_out[i]);
                    let j = [d[0] * normal[0] + d[3] * normal[1], d[3] * normal[0] + d[1] * normal[1]];
                    integral += w * (j[0] * j[0] + j[1] * j[1]);
                }
                out.push((c, 0.5 * sq.size * integral));
                out.push((n, 0.5 * dofs.cell_squares[n].size * integral));
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;
    let mut eta2 = vec![0.0; dofs.cells.len()];
    for list in contributions {
        for (c, v) in list {
            eta2[c] += v;
        }
    }
    Ok(eta2.into_iter().map(f64::sqrt).collect())
}

/// `η_G = sqrt(Σ η_T² / (scale · A(u, u)))`; `scale = 1` gives the raw ratio.
pub fn global_error(eta: &[f64], energy: f64, scale: f64) -> Result<f64, EstimatorError> {
    if !(energy > 0.0) {
        return Err(EstimatorError::NonPositiveEnergy(energy));
    }
    let sum: f64 = eta.iter().map(|e| e * e).sum();
    Ok((sum / (scale * energy)).sqrt())
}

/// Sort by `η` descending (lower space-filling-curve key first on ties); the
/// top `⌈θ_r n⌉` cells are refined and the bottom `⌊θ_c n⌋` coarsened.
pub fn mark_cells(cells: &[CellId], eta: &[f64], theta_r: f64, theta_c: f64) -> Vec<Mark> {
    let n = cells.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eta[b]
            .total_cmp(&eta[a])
            .then_with(|| cells[a].sfc_key().cmp(&cells[b].sfc_key()))
            .then_with(|| cells[a].level.cmp(&cells[b].level))
    });
    let n_refine = ((theta_r * n as f64).ceil() as usize).min(n);
    let n_coarsen = ((theta_c * n as f64).floor() as usize).min(n - n_refine);
    let mut marks = vec![Mark::Keep; n];
    for &i in &order[..n_refine] {
        marks[i] = Mark::Refine;
    }
    for &i in &order[n - n_coarsen..] {
        marks[i] = Mark::Coarsen;
    }
    marks
}

/// Marks as the map consumed by mesh adaptation; `Keep` entries are omitted.
pub fn marks_to_map(cells: &[CellId], marks: &[Mark]) -> BTreeMap<CellId, Mark> {
    cells
        .iter()
        .zip(marks)
        .filter(|(_, m)| **m != Mark::Keep)
        .map(|(c, m)| (*c, *m))
        .collect()
}
