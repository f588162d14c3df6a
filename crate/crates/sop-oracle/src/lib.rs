//! Slow, transparent reference computations used to validate `sop-core`.
//!
//! Nothing in this crate shares a code path with the production solver: the
//! estimates, effective dimensions, and restricted deviance are rebuilt from
//! dense whole-data matrices, and a literal transcription of the classic
//! one-variance-per-block iteration is provided for lockstep comparison.

pub mod dense;
pub mod generators;
pub mod golden;
pub mod harville;

pub use dense::{block_g, dense_model, s_matrix, t_matrix, DenseModel};
pub use generators::{
    harville_instance, mixed_instance, response_violating_instance, span_violating_instance,
    Generated,
};
pub use golden::golden_section_min;
pub use harville::{harville_iterates, HarvilleTrace};
