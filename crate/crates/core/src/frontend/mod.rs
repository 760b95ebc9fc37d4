//! Surface language: lexer, parser, source printer and lowering to IR.

pub mod ast;
pub mod lexer;
mod lower;
pub mod parser;
pub mod printer;

pub use lower::lower;
pub use parser::{parse, parse_expr};
pub use printer::{print_expr, print_program};

use crate::error::Result;
use crate::ir::FunctionIR;

/// Parse and lower a source file.
pub fn compile_source(src: &str) -> Result<FunctionIR> {
    lower(&parse(src)?)
}
