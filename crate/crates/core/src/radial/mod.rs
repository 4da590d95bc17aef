//! Radial calculus: exact bubble ladders and exact radial potentials.

pub mod kelvin;
pub mod potential;
