//! Reverse-mode differentiation over dense matrices.
//!
//! Every op computes its value eagerly when recorded; [`Tape::backward`]
//! then sweeps the tape once in reverse. Parameters live in a
//! [`ParamStore`] and gradients come back aligned with it.

mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{grad_check, EntryCheck, GradCheckReport};
pub use params::{ParamStore, CHECKPOINT_MAGIC};
pub use tape::{Gradients, Mat, Segments, Tape, Var};
