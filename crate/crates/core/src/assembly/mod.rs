//! Assembly of the verified pair (u, K) and the checks run against it.
//!
//! [`fields`] reads the coefficient off the capped fixed-point source so
//! that the polyharmonic equation holds exactly at every probe, [`sset`]
//! locates and certifies the set where that coefficient deviates from the
//! surgered curvature, [`c1`] bounds the gradient of the coefficient and
//! its C^1 distance from the background, [`conclusions`] checks the
//! headline blow-up/decay/sign claims, and [`sphere`] carries the fields
//! through inverse stereographic projection.

pub mod c1;
pub mod conclusions;
pub mod fields;
pub mod sphere;
pub mod sset;
