//! Unfitted adaptive finite elements for small-strain J2 elasto-plasticity in 2D.

pub mod geometry;
pub mod mesh;
pub mod quadrature;
pub mod constitutive;
pub mod aggregation;
pub mod space;
pub mod history;
pub mod linalg;
pub mod problem;
pub mod discretization;
pub mod assembly;
pub mod solver;
pub mod estimator;
pub mod transfer;
pub mod vtk;
pub mod benchmarks;
pub mod config;
pub mod driver;
