//! A small auto-parallelizing compiler for a Julia-flavored array language.
//!
//! The pipeline parses a single entry function, lowers array operations
//! to parfors, infers a distribution for every array and parfor, fuses
//! loops, rewrites the function into SPMD form and runs it on an
//! in-process multi-rank simulator. A sequential interpreter over the
//! same IR serves as the oracle.

pub mod analysis;
pub mod checkpoint;
pub mod datagen;
pub mod distributed;
pub mod error;
pub mod frontend;
pub mod ir;
pub mod lowering;
pub mod optimizer;
pub mod pipeline;
pub mod runtime;

pub use error::{Error, ErrorKind, Result};
