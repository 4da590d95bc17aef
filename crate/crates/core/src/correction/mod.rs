//! The correction layer: capped source, surgered curvature, supersolution,
//! and the monotone fixed-point iteration that produces the correction term.

pub mod envelope;
pub mod hfun;
pub mod kappa;
pub mod picard;
pub mod supersol;
