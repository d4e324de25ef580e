//! Adaptive space-time solver for the heat equation.
//!
//! Trial and test spaces are spanned by tensor products of time wavelets and
//! spatial hierarchical hats, indexed by double-trees. All operator
//! applications run in time linear in the number of unknowns.

pub mod bench;
pub mod double_tree;
pub mod heat;
pub mod matvec;
pub mod ops;
pub mod sorted;
pub mod space;
pub mod time_bases;
pub mod tree;
