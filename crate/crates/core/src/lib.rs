//! Electrostatic partial-element equivalent circuits on exact NURBS
//! geometries.
//!
//! A multi-patch surface is refined into elements carrying a constant charge
//! density, the Galerkin potential matrix is assembled with singular
//! quadrature, and the result is turned into capacitances or a SPICE netlist.

pub mod assembly;
pub mod baseline_tri;
pub mod circuit;
pub mod cli;
pub mod geometry;
pub mod netlist;
pub mod nurbs;
pub mod quadrature;
pub mod solver;
