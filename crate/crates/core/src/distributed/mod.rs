//! Translation to SPMD form.

mod emit;
mod partition;
mod pass;

pub use emit::emit_spmd_source;
pub use partition::partition;
pub use pass::distribute;

use std::collections::BTreeSet;

use crate::ir::{FunctionIR, Var};

/// A function rewritten for SPMD execution.
#[derive(Clone, Debug, PartialEq)]
pub struct SpmdProgram {
    pub func: FunctionIR,
    /// Arrays holding only this rank's block.
    pub distributed: BTreeSet<Var>,
    /// Scalars whose value depends on the rank (partition starts/sizes).
    pub rank_local: BTreeSet<Var>,
}
