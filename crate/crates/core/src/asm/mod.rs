//! A two-pass assembler for the lifter's output dialect.

mod assemble;
mod parse;

use alloc::string::String;

pub use assemble::{assemble, AsmOptions, Assembled};
pub use parse::{parse_assembly, Expr, Item, ItemKind, SectionDecl};

use crate::elf::ElfError;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AsmError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown directive {name}")]
    UnknownDirective { line: usize, name: String },
    #[error("line {line}: label {name} defined twice")]
    DuplicateLabel { line: usize, name: String },
    #[error("line {line}: undefined label {name}")]
    UndefinedLabel { line: usize, name: String },
    #[error("line {line}: {msg}")]
    RangeOverflow { line: usize, msg: String },
    #[error("sections {a} and {b} overlap")]
    SectionOverlap { a: String, b: String },
    #[error("section {0} has no base address")]
    MissingBase(String),
    #[error("line {line}: cannot encode: {msg}")]
    Encode { line: usize, msg: String },
    #[error("assembled metadata is inconsistent: {0}")]
    Metadata(String),
    #[error(transparent)]
    Elf(#[from] ElfError),
}
