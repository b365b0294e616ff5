//! The five build-time oracles and their canonical `.ellf` encoding.
//!
//! Every table is kept sorted and duplicate-free; [`EllfMetadata::check`]
//! enforces that, and the codec refuses to produce or accept anything else,
//! so there is exactly one byte string per metadata value.

mod codec;
mod validate;
pub mod varint;

use alloc::vec::Vec;
use core::cmp::Ordering;

pub use codec::{decode_metadata, encode_metadata, encode_table, DecodeError, TableId};
pub use validate::validate_metadata;

use crate::Address;

/// Current (and only) wire-format version.
pub const VERSION: u8 = 1;

/// A run of `count` consecutive instructions starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstructionRegion {
    pub start: Address,
    pub count: u64,
}

/// One entry of the pointer oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointerRecord {
    /// Operand `operand_index` of the instruction at `instr_addr` holds a pointer.
    Operand {
        instr_addr: Address,
        operand_index: u32,
        target: Address,
    },
    /// The data cell at `addr` holds the absolute pointer `target`.
    Data { addr: Address, target: Address },
    /// The data cell at `addr` holds `minuend - subtrahend`.
    Diff {
        addr: Address,
        minuend: Address,
        subtrahend: Address,
    },
}

impl PointerRecord {
    /// The address this record describes (instruction or data cell).
    pub fn key(&self) -> Address {
        match *self {
            PointerRecord::Operand { instr_addr, .. } => instr_addr,
            PointerRecord::Data { addr, .. } | PointerRecord::Diff { addr, .. } => addr,
        }
    }

    pub fn kind_tag(&self) -> u8 {
        match self {
            PointerRecord::Operand { .. } => 0,
            PointerRecord::Data { .. } => 1,
            PointerRecord::Diff { .. } => 2,
        }
    }

    fn sort_key(&self) -> (Address, u8, u32) {
        match *self {
            PointerRecord::Operand {
                instr_addr,
                operand_index,
                ..
            } => (instr_addr, 0, operand_index),
            _ => (self.key(), self.kind_tag(), 0),
        }
    }

    /// Canonical ordering: by key, then kind, then operand index.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TextKind {
    BasicBlock,
    FunctionStart,
    FunctionEnd,
}

impl TextKind {
    pub fn tag(self) -> u8 {
        match self {
            TextKind::BasicBlock => 0,
            TextKind::FunctionStart => 1,
            TextKind::FunctionEnd => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(TextKind::BasicBlock),
            1 => Some(TextKind::FunctionStart),
            2 => Some(TextKind::FunctionEnd),
            _ => None,
        }
    }
}

/// A text-oracle entry. Records are keyed by `(addr, kind)`: a one-instruction
/// function carries both a `FunctionStart` and a `FunctionEnd` at one address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct TextRecord {
    pub addr: Address,
    pub kind: TextKind,
}

/// Local-object start offsets below the stack pointer value at function entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackRecord {
    pub function_entry: Address,
    pub offsets: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataRecord {
    pub addr: Address,
    pub size: u64,
}

impl DataRecord {
    /// One past the last byte, or `None` if the extent wraps.
    pub fn end(&self) -> Option<Address> {
        self.addr.checked_add(self.size)
    }
}

/// All five oracles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EllfMetadata {
    pub version: u8,
    pub instruction_regions: Vec<InstructionRegion>,
    pub pointers: Vec<PointerRecord>,
    pub text: Vec<TextRecord>,
    pub stack: Vec<StackRecord>,
    pub data: Vec<DataRecord>,
}

impl Default for EllfMetadata {
    fn default() -> Self {
        EllfMetadata {
            version: VERSION,
            instruction_regions: Vec::new(),
            pointers: Vec::new(),
            text: Vec::new(),
            stack: Vec::new(),
            data: Vec::new(),
        }
    }
}

/// A table failed its ordering or range invariant.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invariant violation in {table} table at entry {index}: {reason}")]
pub struct InvariantViolation {
    pub table: &'static str,
    pub index: usize,
    pub reason: &'static str,
}

fn violation(table: &'static str, index: usize, reason: &'static str) -> InvariantViolation {
    InvariantViolation {
        table,
        index,
        reason,
    }
}

impl EllfMetadata {
    pub fn new() -> Self {
        Self::default()
    }

    /// Checks every per-table invariant the codec relies on.
    pub fn check(&self) -> Result<(), InvariantViolation> {
        if self.version != VERSION {
            return Err(violation("header", 0, "unsupported version"));
        }

        for (i, r) in self.instruction_regions.iter().enumerate() {
            if r.count == 0 {
                return Err(violation(
                    "instructions",
                    i,
                    "region count must be positive",
                ));
            }
            if i > 0 && self.instruction_regions[i - 1].start >= r.start {
                return Err(violation(
                    "instructions",
                    i,
                    "regions not strictly increasing",
                ));
            }
        }

        for (i, w) in self.pointers.windows(2).enumerate() {
            if w[0].canonical_cmp(&w[1]) != Ordering::Less {
                return Err(violation(
                    "pointers",
                    i + 1,
                    "pointers not strictly increasing",
                ));
            }
            let same_key = w[0].key() == w[1].key();
            let both_operands = w[0].kind_tag() == 0 && w[1].kind_tag() == 0;
            if same_key && !both_operands {
                return Err(violation("pointers", i + 1, "duplicate pointer location"));
            }
        }

        for (i, w) in self.text.windows(2).enumerate() {
            if w[0] >= w[1] {
                return Err(violation(
                    "text",
                    i + 1,
                    "text records not strictly increasing",
                ));
            }
        }

        for (i, s) in self.stack.iter().enumerate() {
            if i > 0 && self.stack[i - 1].function_entry >= s.function_entry {
                return Err(violation(
                    "stack",
                    i,
                    "stack records not strictly increasing",
                ));
            }
            if s.offsets.first().is_some_and(|&o| o == 0) {
                return Err(violation("stack", i, "stack offsets must be positive"));
            }
            if s.offsets.windows(2).any(|w| w[0] >= w[1]) {
                return Err(violation(
                    "stack",
                    i,
                    "stack offsets not strictly increasing",
                ));
            }
        }

        for (i, d) in self.data.iter().enumerate() {
            if d.size == 0 {
                return Err(violation("data", i, "data size must be positive"));
            }
            let Some(end) = d.end() else {
                return Err(violation("data", i, "data extent overflows"));
            };
            if let Some(next) = self.data.get(i + 1) {
                if next.addr < end {
                    return Err(violation(
                        "data",
                        i + 1,
                        "data records overlap or are unsorted",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Sorts every table into canonical order. Does not remove duplicates.
    pub fn sort(&mut self) {
        self.instruction_regions.sort_by_key(|r| r.start);
        self.pointers.sort_by(PointerRecord::canonical_cmp);
        self.text.sort();
        self.stack.sort_by_key(|s| s.function_entry);
        for s in &mut self.stack {
            s.offsets.sort_unstable();
        }
        self.data.sort_by_key(|d| d.addr);
    }

    pub fn is_empty(&self) -> bool {
        self.instruction_regions.is_empty()
            && self.pointers.is_empty()
            && self.text.is_empty()
            && self.stack.is_empty()
            && self.data.is_empty()
    }

    pub fn text_kind_at(&self, addr: Address, kind: TextKind) -> bool {
        self.text.binary_search(&TextRecord { addr, kind }).is_ok()
    }

    pub fn function_starts(&self) -> impl Iterator<Item = Address> + '_ {
        self.text
            .iter()
            .filter(|t| t.kind == TextKind::FunctionStart)
            .map(|t| t.addr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn same_address_different_kinds_is_canonical() {
        let mut m = EllfMetadata::new();
        m.text = vec![
            TextRecord {
                addr: Address(0x10),
                kind: TextKind::FunctionStart,
            },
            TextRecord {
                addr: Address(0x10),
                kind: TextKind::FunctionEnd,
            },
        ];
        assert!(m.check().is_ok());
        m.text.swap(0, 1);
        assert!(m.check().is_err());
    }

    #[test]
    fn operand_pointers_may_share_an_instruction() {
        let mut m = EllfMetadata::new();
        m.pointers = vec![
            PointerRecord::Operand {
                instr_addr: Address(0x40),
                operand_index: 0,
                target: Address(0x100),
            },
            PointerRecord::Operand {
                instr_addr: Address(0x40),
                operand_index: 1,
                target: Address(0x200),
            },
        ];
        assert!(m.check().is_ok());
        m.pointers[1] = PointerRecord::Data {
            addr: Address(0x40),
            target: Address(0x200),
        };
        assert!(m.check().is_err());
    }

    #[test]
    fn overlapping_data_is_rejected() {
        let mut m = EllfMetadata::new();
        m.data = vec![
            DataRecord {
                addr: Address(0x5000),
                size: 12,
            },
            DataRecord {
                addr: Address(0x5006),
                size: 6,
            },
        ];
        assert_eq!(m.check().unwrap_err().table, "data");
    }

    #[test]
    fn zero_stack_offset_is_rejected() {
        let mut m = EllfMetadata::new();
        m.stack = vec![StackRecord {
            function_entry: Address(1),
            offsets: vec![0, 8],
        }];
        assert!(m.check().is_err());
    }
}
