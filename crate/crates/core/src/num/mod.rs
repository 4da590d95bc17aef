//! Numeric foundations: log-domain arithmetic and exact special values.

pub mod logdomain;
pub mod special;
