//! Headless AR assembly-instruction engine.

// `!(a > b)` is how NaN inputs get rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod eval;
pub mod geometry;
pub mod hand;
pub mod image;
pub mod instruction;
pub mod model;
pub mod marker;
pub mod render;
pub mod sim;
