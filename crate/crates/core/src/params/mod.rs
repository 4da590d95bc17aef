//! Parameter selection: background normalization, the geometric scale
//! ladder, and the per-bubble smallness sequences.

pub mod background;
pub mod family;
pub mod gauge;
pub mod geometry;
