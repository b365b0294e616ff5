//! Core of the ELLF toolkit: metadata codec, ELF plumbing, an x86-64 subset
//! decoder/encoder, the lifter and a small assembler for its output dialect.

#![no_std]

extern crate alloc;

mod addr;
pub mod asm;
pub mod diag;
pub mod elf;
pub mod facts;
pub mod isa;
pub mod lift;
pub mod meta;
pub mod roundtrip;

pub use addr::Address;
pub use diag::{Diagnostic, DiagnosticKind, Severity};
